"""PNG figures for experiment results (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render", "PLOT_KINDS"]

# many repeats of one case are drawn as a thin translucent band
_BAND = 12


def _gap(result, ax):
    for case in result.config.cases:
        recs = result.by_case(case.name)
        many = len(recs) > _BAND
        for i, rec in enumerate(recs):
            g = np.maximum(np.asarray(rec.series["gap"], dtype=float), 1e-300)
            kw = dict(color="tab:blue", alpha=0.08, lw=0.6) if many else {}
            ax.semilogy(rec.series["days"], g, label=case.name if i == 0 else None, **kw)
    ax.set_xlabel("day")
    ax.set_ylabel("relative gap")
    ax.legend(fontsize=7)


def _strategy(result, ax):
    rec = result.records[0]
    p = np.asarray(rec.series.get("p", []))
    if p.size == 0:
        ax.text(0.5, 0.5, "strategy series not recorded", ha="center", transform=ax.transAxes)
        return
    for k in range(p.shape[1]):
        ax.plot(rec.series["days"], p[:, k], marker=".", label=f"route {k}")
    ax.set_xlabel("day")
    ax.set_ylabel("choice probability")
    ax.legend(fontsize=7)


def _entropy(result, ax):
    ent = np.array([r.entropy for r in result.records if r.status == "converged"])
    ax.hist(ent, bins=40, color="tab:gray")
    for r in result.records:
        if r.seed is None:
            ax.axvline(r.entropy, color="tab:red", label=f"{r.case} ({r.entropy:.3f})")
    ax.set_xlabel("demand-weighted entropy at termination")
    ax.set_ylabel("runs")
    ax.legend(fontsize=7)


def _used_routes(result, ax):
    for rec in result.records:
        ax.plot(rec.series["days"], rec.series["used_routes"], lw=0.8, label=rec.stem())
    ax.set_xlabel("day")
    ax.set_ylabel("routes with p >= 1e-6")
    ax.legend(fontsize=7)


def _classes(result, ax):
    recs = [r for r in result.records if r.classes]
    if not recs:
        ax.text(0.5, 0.5, "no multi-class case", ha="center", transform=ax.transAxes)
        return
    classes = recs[0].classes
    n = len(classes[0]["p"])
    width = 0.8 / len(classes)
    for j, cl in enumerate(classes):
        ax.bar(np.arange(n) + j * width, cl["p"], width, label=cl["label"])
    ax.set_xticks(np.arange(n) + 0.4 - width / 2, [f"route {k}" for k in range(n)])
    ax.set_ylabel("choice probability at termination")
    ax.legend(fontsize=7)


PLOT_KINDS = {
    "gap": _gap,
    "strategy": _strategy,
    "entropy": _entropy,
    "used-routes": _used_routes,
    "classes": _classes,
}


def render(result, out_dir) -> list[Path]:
    """Draw each kind listed in the config's ``plots`` to ``<out>/<kind>.png``."""
    out_dir = Path(out_dir)
    paths = []
    for kind in result.config.plots:
        if kind not in PLOT_KINDS:
            raise ValueError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
        fig, ax = plt.subplots(figsize=(6, 4))
        PLOT_KINDS[kind](result, ax)
        ax.set_title(f"{result.config.name}: {kind}" + (f" ({result.records[0].stem()})" if kind == "strategy" else ""),
                     fontsize=9)
        fig.tight_layout()
        path = out_dir / f"{kind}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths
