"""Run an :class:`ExperimentConfig` and write its artifacts.

Every (case, seed) pair is one repeat. Repeats run in a process pool when
``workers > 1``; results are merged in config order, so the files do not
depend on the worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import ClassSpec, Game, run, run_multiclass
from ..network import builtin, builtin_cost_unit, enumerate_routes, read_tntp_files
from .config import ExperimentConfig, serialize

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_DIVERGED",
    "EXIT_UNFINISHED",
    "RunRecord",
    "ExperimentResult",
    "build_game",
    "default_out_dir",
    "exit_code",
    "run_experiment",
]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_UNFINISHED = 3

_GAMES: dict = {}


def build_game(cfg: ExperimentConfig) -> Game:
    key = (cfg.builtin, cfg.net, cfg.trips, cfg.routes, cfg.k, cfg.cost_unit)
    if key in _GAMES:
        return _GAMES[key]
    if cfg.builtin:
        net, routes = builtin(cfg.builtin, k=cfg.k or None)
        unit = builtin_cost_unit(cfg.builtin)
    else:
        net = read_tntp_files(cfg.net, cfg.trips, name=Path(cfg.net).stem)
        routes = None
        unit = 1.0
    if cfg.routes == "all":
        routes = enumerate_routes(net, "all")
    elif cfg.routes == "k-shortest":
        routes = enumerate_routes(net, "k-shortest", k=cfg.k)
    elif routes is None:
        routes = enumerate_routes(net, "k-shortest", k=cfg.k or 2)
    game = Game(net, routes, cost_unit=cfg.cost_unit or unit)
    _GAMES[key] = game
    return game


@dataclass
class RunRecord:
    """Outcome of one repeat: summary fields, serialised files and the series needed for plots."""

    case: str
    seed: int | None
    status: str
    days: int
    final_gap: float
    entropy: float
    used_routes: int
    p: list
    x: list
    classes: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    def stem(self) -> str:
        return self.case if self.seed is None else f"{self.case}_seed{self.seed}"

    def summary(self) -> dict:
        out = {
            "case": self.case,
            "seed": self.seed,
            "status": self.status,
            "days": self.days,
            "final_gap": self.final_gap,
            "entropy": self.entropy,
            "used_routes": self.used_routes,
            "p": self.p,
            "x": self.x,
        }
        if self.classes:
            out["classes"] = self.classes
        return out


def _series(tr, with_p: bool) -> dict:
    out = {"days": list(tr.days), "gap": list(tr.gap), "entropy": list(tr.entropy),
           "used_routes": list(tr.used_routes)}
    if with_p and tr.p and len(tr.p) == len(tr.days) and len(tr.p[0]) <= 16:
        out["p"] = np.array(tr.p).tolist()
    return out


def _run_task(args) -> RunRecord:
    cfg, case, seed = args
    game = build_game(cfg)
    want_p = "strategy" in cfg.plots
    if case.classes:
        specs = [ClassSpec(e.name(), e.r, e.share, case.s0, seed) for e in case.classes]
        res = run_multiclass(game, specs, case.eta_schedule(), case.stop_rule(), case.engine, cfg.record)
        agg = res.aggregate
        files = {}
        classes = []
        for e, tr in zip(case.classes, res.classes):
            files[f"__{e.name()}"] = (tr.to_csv() if cfg.csv else None, tr.to_json() if cfg.json else None)
            classes.append({"label": e.name(), "r": e.r, "share": e.share, "entropy": tr.entropy[-1],
                            "used_routes": tr.used_routes[-1], "p": np.asarray(tr.final.p).tolist()})
        files["__aggregate"] = (agg.to_csv() if cfg.csv else None, agg.to_json() if cfg.json else None)
        p_final = np.asarray(agg.p[-1]).tolist() if agg.p else []
        return RunRecord(case.name, seed, res.status, res.classes[0].n_days, float(agg.gap[-1]),
                         float(agg.entropy[-1]), int(agg.used_routes[-1]), p_final,
                         np.asarray(res.flow.x).tolist(), classes, files, _series(agg, want_p))
    tr = run(game, case.engine, case.eta_schedule(), case.r_value(), case.s0, case.stop_rule(), seed,
             case.variant, record=cfg.record)
    files = {"": (tr.to_csv() if cfg.csv else None, tr.to_json() if cfg.json else None)}
    return RunRecord(case.name, seed, tr.status, tr.n_days, float(tr.final_gap), float(tr.entropy[-1]),
                     int(tr.used_routes[-1]), np.asarray(tr.final.p).tolist(),
                     np.asarray(tr.final.flow.x).tolist(), [], files, _series(tr, want_p))


def exit_code(statuses) -> int:
    statuses = list(statuses)
    if "diverged" in statuses:
        return EXIT_DIVERGED
    if all(s == "converged" for s in statuses):
        return EXIT_OK
    return EXIT_UNFINISHED


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    out_dir: Path | None
    figures: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return exit_code(r.status for r in self.records)

    def summary(self) -> dict:
        counts: dict = {}
        for r in self.records:
            counts[r.status] = counts.get(r.status, 0) + 1
        return {
            "experiment": self.config.name,
            "description": self.config.description,
            "network": self.config.builtin or self.config.net,
            "status_counts": counts,
            "exit_code": self.exit_code,
            "runs": [r.summary() for r in self.records],
        }

    def by_case(self, name: str) -> list:
        return [r for r in self.records if r.case == name]


def _tasks(cfg: ExperimentConfig):
    return [(cfg, case, seed) for case in cfg.cases for seed in case.repeat_seeds()]


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1, plots: bool = True) -> ExperimentResult:
    """Run every repeat; when ``out_dir`` is given write CSV/JSON per repeat, ``summary.json``,
    the config and (if ``plots``) PNG figures."""
    cfg.validate()
    tasks = _tasks(cfg)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    else:
        records = [_run_task(t) for t in tasks]
    result = ExperimentResult(cfg, records, Path(out_dir) if out_dir is not None else None)
    if out_dir is not None:
        _write(result, plots)
    return result


def _write(result: ExperimentResult, plots: bool):
    out = result.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(serialize(result.config))
    for rec in result.records:
        for suffix, (csv_text, json_text) in rec.files.items():
            stem = rec.stem() + suffix
            if csv_text is not None:
                (out / f"{stem}.csv").write_text(csv_text)
            if json_text is not None:
                (out / f"{stem}.json").write_text(json_text)
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=1) + "\n")
    if plots and result.config.plots:
        from .plotting import render

        result.figures = render(result, out)


def default_out_dir(name: str) -> Path:
    return Path(os.environ.get("CUMLOG_OUT", "cumlog-out")) / name
