"""Command line entry point.

Exit codes: 0 when every run converged, 2 when any run diverged, 3 when some
run hit ``max_days`` without diverging, 1 on config or input errors.
``CUMLOG_OUT`` sets the default output directory (``./cumlog-out``).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import equilibrium
from .cost import cocoercivity_probe
from .harness import config as config_mod
from .harness import experiment, presets
from .network import BUILTIN_NAMES, Incidence, TNTPError, builtin, enumerate_routes, read_tntp_files


def _network(name: str, trips: str | None, k: int | None):
    """Builtin name, or a TNTP net file plus ``--trips``; returns (Network, RouteSet)."""
    if name in BUILTIN_NAMES or name.replace("_", "-").lower() in BUILTIN_NAMES:
        return builtin(name, k=k)
    if not trips:
        raise ValueError(f"{name!r} is not a builtin network ({', '.join(BUILTIN_NAMES)}); give --trips for TNTP input")
    net = read_tntp_files(name, trips, name=Path(name).stem)
    return net, enumerate_routes(net, "k-shortest", k=k or 2)


def _report(res: experiment.ExperimentResult, out):
    counts: dict = {}
    for rec in res.records:
        counts.setdefault(rec.case, {}).setdefault(rec.status, 0)
        counts[rec.case][rec.status] += 1
    for case, c in counts.items():
        recs = res.by_case(case)
        detail = ", ".join(f"{k}={v}" for k, v in sorted(c.items()))
        if len(recs) == 1:
            detail += f", days={recs[0].days}, gap={recs[0].final_gap:.3e}"
        print(f"{case}: {detail}")
    if out is not None:
        print(f"wrote {out}")


def _run_config(cfg, args) -> int:
    out = Path(args.out) if args.out else experiment.default_out_dir(cfg.name)
    res = experiment.run_experiment(cfg, out, workers=args.workers, plots=not args.no_plots)
    _report(res, out)
    return res.exit_code


def cmd_run(args) -> int:
    return _run_config(config_mod.load(args.config), args)


def cmd_preset(args) -> int:
    cfg = presets.get_preset(args.name)
    if args.seed:
        cfg = cfg.with_seed_offset(args.seed)
    return _run_config(cfg, args)


def cmd_list(args) -> int:
    for name in presets.list_presets():
        print(name)
    return 0


def cmd_describe(args) -> int:
    print(presets.describe(args.name))
    return 0


def cmd_config(args) -> int:
    sys.stdout.write(config_mod.serialize(presets.get_preset(args.name)))
    return 0


def _read_flows(path: str, n_links: int) -> np.ndarray:
    x = np.full(n_links, np.nan)
    with open(path, newline="") as f:
        for i, row in enumerate(csv.DictReader(f), 2):
            try:
                e = int(row["link"])
                x[e] = float(row["flow"])
            except (KeyError, ValueError, IndexError, TypeError):
                raise ValueError(f"{path} line {i}: expected link and flow columns with a valid link id") from None
    if np.isnan(x).any():
        raise ValueError(f"{path}: missing flows for links {np.flatnonzero(np.isnan(x)).tolist()}")
    return x


def cmd_gap(args) -> int:
    net = read_tntp_files(args.net, args.trips)
    x = _read_flows(args.flows, net.n_links)
    u = net.cost_model(x)
    report = equilibrium.gap_report(u, x, equilibrium.all_or_nothing(net, u))
    print(report.to_json())
    return 0


def cmd_oracle(args) -> int:
    net, _ = _network(args.network, args.trips, None)
    x, gap, iters = equilibrium.beckmann_oracle(net, tol=args.tol)
    text = equilibrium.flows_to_csv(x, net.cost_model(x))
    if args.out:
        Path(args.out).write_text(text)
        print(f"gap={gap:.3e} iterations={iters} wrote {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def cmd_probe(args) -> int:
    net, routes = _network(args.network, args.trips, args.k)
    inc = Incidence(net, routes)
    print(cocoercivity_probe(inc, net.cost_model, trials=args.trials, seed=args.seed).to_json())
    return 0


def cmd_routes(args) -> int:
    _, routes = _network(args.network, args.trips, args.k)
    print(routes.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cumlog", description="CumLog day-to-day routing dynamics")
    sub = ap.add_subparsers(dest="command", required=True)

    def runner_opts(p):
        p.add_argument("--out", help="output directory (default $CUMLOG_OUT/<name> or ./cumlog-out/<name>)")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes for sweeps")
        p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")

    p = sub.add_parser("run", help="run an experiment config file")
    p.add_argument("config")
    runner_opts(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a named experiment")
    p.add_argument("name")
    p.add_argument("--seed", type=int, default=0, help="offset added to every seed of the preset")
    runner_opts(p)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("list", help="list preset names")
    p.set_defaults(func=cmd_list)
    p = sub.add_parser("describe", help="describe a preset")
    p.add_argument("name")
    p.set_defaults(func=cmd_describe)
    p = sub.add_parser("config", help="print a preset as an editable config file")
    p.add_argument("name")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("gap", help="relative gap of a link-flow CSV (columns link, flow)")
    p.add_argument("net")
    p.add_argument("trips")
    p.add_argument("flows")
    p.set_defaults(func=cmd_gap)

    def net_opts(p, with_k=True):
        p.add_argument("network", help=f"builtin ({', '.join(BUILTIN_NAMES)}) or a TNTP net file")
        p.add_argument("--trips", help="TNTP trips file when network is a path")
        if with_k:
            p.add_argument("--k", type=int, default=None, help="k-shortest routes per OD")

    p = sub.add_parser("oracle", help="Frank-Wolfe equilibrium link flows as CSV (link, flow, cost)")
    net_opts(p, with_k=False)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("probe", help="cocoercivity probe, JSON {trials, max_violation, L}")
    net_opts(p)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("routes", help="export the route set as JSON")
    net_opts(p)
    p.set_defaults(func=cmd_routes)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (config_mod.ConfigError, TNTPError, KeyError, ValueError, OSError, equilibrium.OracleError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cumlog: error: {msg}", file=sys.stderr)
        return experiment.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
