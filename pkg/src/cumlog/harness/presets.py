"""Named experiment configurations."""

from __future__ import annotations

from dataclasses import replace

from .config import CaseConfig, ClassEntry, ExperimentConfig

__all__ = ["PRESETS", "list_presets", "get_preset", "describe"]


def _fig2() -> ExperimentConfig:
    case = CaseConfig("r=0.25", r="0.25", eta="constant:1.0", max_days=40, gap_tol=1e-9)
    return ExperimentConfig(
        name="fig2",
        description="three-parallel network, r=0.25, eta=1, s0=0, strategy path over the first 12+ days",
        builtin="three-parallel",
        plots=("strategy", "gap"),
        cases=(case,),
    )


def _fig5() -> ExperimentConfig:
    base = CaseConfig(max_days=200, gap_tol=1e-9)
    cases = [replace(base, name=f"harmonic-r={r:g}", eta="harmonic", r=repr(float(r))) for r in (10, 20, 40)]
    cases += [replace(base, name=f"eta=1-r={r:g}", eta="constant:1.0", r=repr(r)) for r in (0.25, 0.5, 1.0, 2.5)]
    return ExperimentConfig(
        name="fig5",
        description="3N4L, eta=1/(t+1) with r in {10,20,40} and eta=1 with r in {0.25,0.5,1,2.5}",
        builtin="3n4l",
        cases=tuple(cases),
    )


def _fig6() -> ExperimentConfig:
    base = CaseConfig(r="1.0", max_days=500, gap_tol=1e-6)
    cases = tuple(replace(base, name=f"alpha={a:g}", eta=f"power:{a!r}") for a in (-0.5, -0.25, 0.0, 0.25))
    return ExperimentConfig(
        name="fig6-schedules",
        description="3N4L, r=1, eta=(t+1)^alpha for alpha in {-0.5,-0.25,0,0.25}, gap_tol=1e-6",
        builtin="3n4l",
        cases=cases,
    )


SA_MODELS = {
    "A": ("power:-1.0", "power:1.0"),
    "B": ("power:-0.99", "power:1.0"),
    "C": ("power:-1.01", "power:1.0"),
    "D": ("power:-0.99", "power:0.99"),
    "E": ("power:-1.01", "power:1.01"),
}


def _fig7() -> ExperimentConfig:
    cases = tuple(
        CaseConfig(f"model-{m}", engine="sa", eta=eta, r=r, max_days=100_000, gap_tol=1e-9)
        for m, (eta, r) in SA_MODELS.items()
    )
    return ExperimentConfig(
        name="fig7-models",
        description="3N4L, successive-average Models A-E, eta^t=(t+1)^-a and r^t=(t+1)^b, 100000 days",
        builtin="3n4l",
        record="summary",
        json=False,
        cases=cases,
    )


def _fig8() -> ExperimentConfig:
    classes = tuple(ClassEntry(r, 0.25) for r in (0.01, 0.1, 1.0, 10.0))
    return ExperimentConfig(
        name="fig8-classes",
        description="3N4L, four equal classes with r in {0.01,0.1,1,10}, eta=1, 1000 days, against the homogeneous r=1 run",
        builtin="3n4l",
        plots=("gap", "classes"),
        cases=(
            CaseConfig("classes", classes=classes, max_days=1000, gap_tol=1e-300),
            CaseConfig("homogeneous", r="1.0", max_days=1000, gap_tol=1e-300),
        ),
    )


def _entropy_sweep() -> ExperimentConfig:
    base = CaseConfig(r="1.0", eta="constant:1.0", max_days=1000, gap_tol=1e-6)
    return ExperimentConfig(
        name="entropy-sweep",
        description="3N4L, 2000 N(0,1) initial valuations plus s0=0, r=1, eta=1, gap_tol=1e-6",
        builtin="3n4l",
        record="summary",
        json=False,
        plots=("gap", "entropy"),
        cases=(replace(base, name="zeros"), replace(base, name="normal", s0="normal", seeds=tuple(range(2000)))),
    )


def _sioux_routes() -> ExperimentConfig:
    base = CaseConfig(r="2.5", eta="constant:1.0", max_days=1000, gap_tol=1e-12)
    return ExperimentConfig(
        name="sioux-routes",
        description="Sioux Falls, k-shortest free-flow routes, r=2.5, eta=1, 1000 days, s0=0 and 5 N(0,1) seeds",
        builtin="sioux-falls",
        record="summary",
        plots=("gap", "used-routes"),
        cases=(replace(base, name="zeros"), replace(base, name="normal", s0="normal", seeds=tuple(range(5)))),
    )


PRESETS = {
    "fig2": _fig2,
    "fig5": _fig5,
    "fig6-schedules": _fig6,
    "fig7-models": _fig7,
    "fig8-classes": _fig8,
    "entropy-sweep": _entropy_sweep,
    "sioux-routes": _sioux_routes,
}


def list_presets() -> list[str]:
    return list(PRESETS)


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]().validate()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def describe(name: str) -> str:
    """One header line with the preset name, network and summary, then one line per case."""
    cfg = get_preset(name)
    lines = [f"{cfg.name}\tnetwork={cfg.builtin or cfg.net}\t{cfg.description}"]
    for c in cfg.cases:
        what = f"classes={';'.join(f'{e.r:g}:{e.share:g}' for e in c.classes)}" if c.classes else f"r={c.r}"
        seeds = len(c.repeat_seeds())
        lines.append(f"  {c.name}\tengine={c.engine}\teta={c.eta}\t{what}\ts0={c.s0}\truns={seeds}"
                     f"\tmax_days={c.max_days}\tgap_tol={c.gap_tol:g}")
    return "\n".join(lines)
