"""Day-to-day route choice engines.

``cumlog`` accumulates experienced route costs, ``s^t = s^{t-1} + eta^t c(p^{t-1})``,
and ``sa`` averages them, ``s^t = (1-eta^t) s^{t-1} + eta^t c(p^{t-1})``.
Both map valuations to strategies through logit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import choice
from .cost import FlowState, LinkCostModel, route_costs
from .equilibrium import SUPPORT_THRESHOLD, relative_gap, route_all_or_nothing
from .network import Incidence, Network, RouteSet, builtin, builtin_cost_unit

__all__ = [
    "Game",
    "Schedule",
    "StopRule",
    "DynamicsState",
    "ClassSpec",
    "Trajectory",
    "MultiClassResult",
    "initial_valuation",
    "cumlog_step",
    "sa_step",
    "weighted_average_step",
    "run",
    "run_multiclass",
    "detect_divergence",
    "FULL_RECORD_DAYS",
]

FULL_RECORD_DAYS = 100_000
THIN_EVERY = 10
GAP_NOISE_FLOOR = 1e-10
VARIANTS = ("raw", "recenter", "excess")


class Game:
    """A network with its route set, incidence and vectorised link costs.

    ``cost_unit`` is the time unit valuations are kept in: the engines
    accumulate ``c / cost_unit``. Equilibria and relative gaps do not depend
    on it, but the meaning of ``r`` and ``eta`` does.
    """

    def __init__(self, network: Network, routes: RouteSet, demands=None, cost_unit: float = 1.0):
        if not cost_unit > 0:
            raise ValueError("cost_unit must be positive")
        self.network = network
        self.routes = routes
        self.inc = Incidence(network, routes, demands)
        self.model = LinkCostModel([link.cost for link in network.links])
        self.cost_unit = float(cost_unit)

    @classmethod
    def builtin(cls, name: str, k: int | None = None, cost_unit: float | None = None) -> "Game":
        """A builtin network with its route set and its default cost unit."""
        net, routes = builtin(name, k=k)
        return cls(net, routes, cost_unit=builtin_cost_unit(name) if cost_unit is None else cost_unit)

    def valuation_costs(self, flow: FlowState) -> np.ndarray:
        return flow.c if self.cost_unit == 1.0 else flow.c / self.cost_unit

    @property
    def n_routes(self) -> int:
        return self.inc.n_routes

    def flow_state(self, x) -> FlowState:
        u = self.model(x)
        return FlowState(x=x, u=u, c=route_costs(self.inc, u))

    def evaluate(self, p) -> FlowState:
        x = np.maximum(self.inc.link_route @ (self.inc.route_demand * p), 0.0)
        return self.flow_state(x)

    def gap(self, flow: FlowState) -> float:
        return relative_gap(flow.u, flow.x, route_all_or_nothing(self.inc, flow.c))


@dataclass(frozen=True)
class Schedule:
    """Step sequence indexed by the day being entered (``t >= 1``, ``t = 0`` for initial ``r``).

    Kinds: ``constant`` (``value``), ``power`` (``scale * (t+1)**value``),
    ``harmonic`` (``1/(t+1)``) and ``table`` (``table[t-1]``, last entry
    repeated).
    """

    kind: str = "constant"
    value: float = 1.0
    scale: float = 1.0
    table: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "power", "harmonic", "table"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not (0 < self.value < math.inf):
            raise ValueError("constant schedule needs a finite positive value")
        if self.kind == "power" and not self.scale > 0:
            raise ValueError("power schedule needs a positive scale")
        if self.kind == "table" and (not self.table or min(self.table) <= 0):
            raise ValueError("table schedule needs positive entries")

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls("constant", float(value))

    @classmethod
    def power(cls, alpha: float, scale: float = 1.0) -> "Schedule":
        return cls("power", float(alpha), float(scale))

    @classmethod
    def harmonic(cls) -> "Schedule":
        return cls("harmonic", -1.0)

    @classmethod
    def custom(cls, values: Sequence[float]) -> "Schedule":
        return cls("table", table=tuple(float(v) for v in values))

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "power":
            return self.scale * (t + 1.0) ** self.value
        if self.kind == "harmonic":
            return 1.0 / (t + 1.0)
        return self.table[min(max(t - 1, 0), len(self.table) - 1)]

    def condition(self) -> str | None:
        """Which convergence condition the step sequence falls under, if any.

        ``"i"``: vanishing steps whose sum diverges (power exponent in [-1, 0)).
        ``"ii"``: constant steps (still subject to ``eta < 1/(2 r L)``).
        ``None``: neither (growing steps, or summable ones).
        """
        if self.kind == "constant" or (self.kind == "power" and self.value == 0):
            return "ii"
        if self.kind == "harmonic" or (self.kind == "power" and -1 <= self.value < 0):
            return "i"
        return None

    def to_text(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.value!r}"
        if self.kind == "power":
            return f"power:{self.value!r}" + (f":{self.scale!r}" if self.scale != 1.0 else "")
        if self.kind == "harmonic":
            return "harmonic"
        return "table:" + ",".join(repr(v) for v in self.table)

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind == "harmonic":
            return cls.harmonic()
        if kind == "constant":
            return cls.constant(float(rest))
        if kind == "power":
            parts = rest.split(":")
            return cls.power(float(parts[0]), float(parts[1]) if len(parts) > 1 else 1.0)
        if kind == "table":
            return cls.custom([float(v) for v in rest.split(",")])
        try:
            return cls.constant(float(text))
        except ValueError:
            raise ValueError(f"cannot parse schedule {text!r}") from None


def _as_schedule(r) -> Schedule:
    return r if isinstance(r, Schedule) else Schedule.constant(r)


@dataclass(frozen=True)
class StopRule:
    max_days: int = 120
    gap_tol: float = 1e-9
    divergence: bool = True
    window: int = 10

    def __post_init__(self):
        if self.max_days < 1:
            raise ValueError("max_days must be >= 1")
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be > 0")
        if self.window < 10:
            raise ValueError("divergence window must be >= 10")


@dataclass
class DynamicsState:
    day: int
    s: np.ndarray
    p: np.ndarray
    flow: FlowState


def initial_valuation(n_routes: int, spec="zeros", seed: int | None = None) -> np.ndarray:
    """``"zeros"`` or ``"normal"`` (i.i.d. standard normal from ``seed``), or an explicit vector."""
    if isinstance(spec, str):
        if spec == "zeros":
            return np.zeros(n_routes)
        if spec == "normal":
            return np.random.default_rng(seed).standard_normal(n_routes)
        raise ValueError(f"unknown initial valuation {spec!r}")
    s0 = np.asarray(spec, dtype=float)
    if s0.shape != (n_routes,):
        raise ValueError("initial valuation has the wrong length")
    return s0.copy()


def initial_state(game: Game, s0, r: float) -> DynamicsState:
    s0 = np.asarray(s0, dtype=float)
    if not np.all(np.isfinite(s0)):
        raise ValueError("initial valuation must be finite")
    p = choice.logit(s0, r, game.inc)
    return DynamicsState(0, s0.copy(), p, game.evaluate(p))


def _check_costs(c):
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite route cost")


def _cumlog_valuation(s, c, eta, inc, variant):
    if variant == "raw":
        return s + eta * c
    if variant == "recenter":
        s_new = s + eta * c
        return s_new - inc.expand(inc.od_min(s_new))
    if variant == "excess":
        return s + eta * (c - inc.expand(inc.od_min(c)))
    raise ValueError(f"unknown variant {variant!r}")


def cumlog_step(game: Game, state: DynamicsState, eta: float, r: float, variant: str = "raw") -> DynamicsState:
    """One CumLog day: ``s' = s + eta c(p)``, ``p' = logit(s', r)``.

    ``variant="recenter"`` shifts each OD's best valuation to zero afterwards;
    ``variant="excess"`` accumulates ``c - min c`` instead of ``c``. Both give
    the same strategies as ``"raw"``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    _check_costs(state.flow.c)
    s = _cumlog_valuation(state.s, game.valuation_costs(state.flow), eta, game.inc, variant)
    p = choice.logit(s, r, game.inc)
    return DynamicsState(state.day + 1, s, p, game.evaluate(p))


def sa_step(game: Game, state: DynamicsState, eta: float, r: float) -> DynamicsState:
    """One successive-average day: ``s' = (1-eta) s + eta c(p)``, ``p' = logit(s', r)``."""
    if not 0 < eta <= 1:
        raise ValueError("successive-average step must lie in (0, 1]")
    _check_costs(state.flow.c)
    s = (1.0 - eta) * state.s + eta * game.valuation_costs(state.flow)
    p = choice.logit(s, r, game.inc)
    return DynamicsState(state.day + 1, s, p, game.evaluate(p))


def weighted_average_step(history: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Valuation ``sum_i weights[i] * history[i]`` with nonnegative weights summing to one."""
    w = np.asarray(weights, dtype=float)
    if len(w) != len(history) or len(w) == 0:
        raise ValueError("need one weight per history entry")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    out = np.zeros_like(np.asarray(history[0], dtype=float))
    for wi, ci in zip(w, history):
        out = out + wi * np.asarray(ci, dtype=float)
    return out


def detect_divergence(gaps: Sequence[float], initial: float | None = None, window: int = 10,
                      best_before: float | None = None, confirm: int | None = None) -> bool:
    """Divergence proxy on the relative-gap history.

    ``gaps`` holds the most recent days, latest last; ``best_before`` is the
    smallest gap seen before them, if any. Fires when

    * the latest gap exceeds 1e3 or ten times the initial gap,
    * the gap rose strictly on every day of the last ``window`` days and at
      least doubled over them,
    * over the last ``confirm`` days (default ``4 * window``) every gap sat
      above ten times the best gap seen earlier, or
    * over those days no new best appeared while the gap flipped direction
      every day by at least 10% (a sustained oscillation).

    A constant plateau fires none of these, and windows that stay below
    ``GAP_NOISE_FLOOR`` (rounding noise) are ignored.
    """
    if window < 10:
        raise ValueError("window must be >= 10")
    confirm = 4 * window if confirm is None else confirm
    if confirm < window:
        raise ValueError("confirm must be >= window")
    gaps = [float(g) for g in gaps]
    if not gaps:
        return False
    g0 = gaps[0] if initial is None else initial
    last = gaps[-1]
    if last > 1e3 or (g0 > 0 and last > 10.0 * g0):
        return True
    if len(gaps) < window:
        return False
    tail = gaps[-window:]
    if tail[-1] >= max(GAP_NOISE_FLOOR, 2.0 * tail[0]) and all(b > a for a, b in zip(tail, tail[1:])):
        return True
    if len(gaps) < confirm:
        return False
    span = gaps[-confirm:]
    earlier = gaps[:-confirm]
    best = min(earlier) if earlier else None
    if best_before is not None:
        best = best_before if best is None else min(best, best_before)
    if best is None or min(span) <= GAP_NOISE_FLOOR:
        return False
    if min(span) > 10.0 * best:
        return True
    steps = [b - a for a, b in zip(span, span[1:])]
    flips = all(a * b < 0 for a, b in zip(steps, steps[1:]))
    big = all(abs(d) >= 0.1 * max(x, y) for d, x, y in zip(steps, span, span[1:]))
    return min(span) >= best and flips and big


@dataclass
class Trajectory:
    """Per-day record of a run. Arrays are ``None`` when only summaries were kept."""

    days: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    used_routes: list = field(default_factory=list)
    kl_to_ref: list = field(default_factory=list)
    p: list = field(default_factory=list)
    s: list = field(default_factory=list)
    x: list = field(default_factory=list)
    u: list = field(default_factory=list)
    c: list = field(default_factory=list)
    status: str = "running"
    label: str = ""
    final: DynamicsState | None = None

    def append(self, t, gap, ent, used, kl, state: DynamicsState | None, flow: FlowState | None):
        if self.days and t <= self.days[-1]:
            raise ValueError("trajectory days must increase")
        self.days.append(t)
        self.gap.append(gap)
        self.entropy.append(ent)
        self.used_routes.append(used)
        if kl is not None:
            self.kl_to_ref.append(kl)
        if state is not None:
            self.p.append(state.p)
            self.s.append(state.s)
        if flow is not None:
            self.x.append(flow.x)
            self.u.append(flow.u)
            self.c.append(flow.c)

    @property
    def n_days(self) -> int:
        return self.days[-1] if self.days else 0

    @property
    def final_gap(self) -> float:
        return self.gap[-1]

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def strategies(self) -> np.ndarray:
        return np.array(self.p)

    def to_csv(self, max_routes: int = 16) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        n = len(self.p[0]) if self.p else 0
        with_p = 0 < n <= max_routes and len(self.p) == len(self.days)
        wr.writerow(["t", "gap", "entropy", "used_routes"] + ([f"p{k}" for k in range(n)] if with_p else []))
        for i, t in enumerate(self.days):
            row = [t, repr(float(self.gap[i])), repr(float(self.entropy[i])), self.used_routes[i]]
            if with_p:
                row += [repr(float(v)) for v in self.p[i]]
            wr.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        def arr(seq):
            return [np.asarray(v).tolist() for v in seq]

        return {
            "label": self.label,
            "status": self.status,
            "days": list(self.days),
            "gap": [float(g) for g in self.gap],
            "entropy": [float(e) for e in self.entropy],
            "used_routes": list(self.used_routes),
            "kl_to_ref": [float(v) for v in self.kl_to_ref],
            "p": arr(self.p),
            "s": arr(self.s),
            "x": arr(self.x),
            "u": arr(self.u),
            "c": arr(self.c),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class ClassSpec:
    label: str
    r: float | Schedule
    demand_share: float | np.ndarray
    s0: object = "zeros"
    seed: int | None = None


@dataclass
class MultiClassResult:
    classes: list
    aggregate: Trajectory
    flow: FlowState
    status: str


def _keep(t: int) -> bool:
    return t <= FULL_RECORD_DAYS or t % THIN_EVERY == 0


def _simulate(game: Game, classes: Sequence[ClassSpec], engine: str, eta: Schedule, stop: StopRule,
              variant: str = "raw", reference=None, record: str = "full"):
    if engine not in ("cumlog", "sa"):
        raise ValueError(f"unknown engine {engine!r}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if engine == "sa" and variant != "raw":
        raise ValueError("variants apply to the cumlog engine only")
    if record not in ("full", "summary"):
        raise ValueError("record must be 'full' or 'summary'")
    inc = game.inc
    shares = [np.broadcast_to(np.asarray(cl.demand_share, dtype=float), (inc.n_od,)) for cl in classes]
    total = np.sum(shares, axis=0)
    if np.any(np.abs(total - 1.0) > 1e-9):
        raise ValueError(f"class demand shares must sum to 1 per OD, got {total}")
    for cl in classes:
        if isinstance(cl.r, (int, float)) and not cl.r > 0:
            raise ValueError("class r must be positive")
    r_sched = [_as_schedule(cl.r) for cl in classes]
    class_dem = [sh * inc.demands for sh in shares]
    route_dem = [inc.expand(d) for d in class_dem]
    refs = reference if isinstance(reference, (list, tuple)) else [reference] * len(classes)

    def load(ps):
        y = np.zeros(inc.n_routes)
        for rd, p in zip(route_dem, ps):
            y = y + rd * p
        return game.flow_state(np.maximum(inc.link_route @ y, 0.0))

    s = [initial_valuation(inc.n_routes, cl.s0, cl.seed) for cl in classes]
    for sc in s:
        if not np.all(np.isfinite(sc)):
            raise ValueError("initial valuation must be finite")
    p = [choice.logit(sc, rs(0), inc) for sc, rs in zip(s, r_sched)]
    flow = load(p)
    full = record == "full"
    trajs = [Trajectory(label=cl.label) for cl in classes]
    agg = Trajectory(label="aggregate")
    gaps: list[float] = []

    def log(t, gap, keep_arrays):
        for j, tr in enumerate(trajs):
            kl = choice.kl_divergence(refs[j], p[j], inc) if refs[j] is not None else None
            used = int(np.count_nonzero(p[j] >= SUPPORT_THRESHOLD))
            st = DynamicsState(t, s[j], p[j], flow) if keep_arrays else None
            tr.append(t, gap, choice.entropy(p[j], class_dem[j], inc), used, kl, st, flow if keep_arrays else None)
        if len(trajs) > 1:
            pm = sum(rd * pj for rd, pj in zip(route_dem, p)) / np.where(inc.route_demand > 0, inc.route_demand, 1.0)
            agg.append(t, gap, choice.entropy(pm, inc.demands, inc), int(np.count_nonzero(pm >= SUPPORT_THRESHOLD)),
                       None, DynamicsState(t, np.zeros(0), pm, flow) if keep_arrays else None,
                       flow if keep_arrays else None)
    gap = game.gap(flow)
    gaps.append(gap)
    span = 4 * stop.window
    best_before = math.inf
    log(0, gap, full)
    status = "converged" if gap < stop.gap_tol else "max_days"
    t = 0
    while status != "converged" and t < stop.max_days:
        t += 1
        _check_costs(flow.c)
        step = eta(t)
        if not step > 0:
            raise ValueError(f"eta^{t} = {step} is not positive")
        if engine == "sa" and not step <= 1:
            raise ValueError(f"successive-average step eta^{t} = {step} exceeds 1")
        cv = game.valuation_costs(flow)
        for j in range(len(classes)):
            if engine == "cumlog":
                s[j] = _cumlog_valuation(s[j], cv, step, inc, variant)
            else:
                s[j] = (1.0 - step) * s[j] + step * cv
            p[j] = choice.logit(s[j], r_sched[j](t), inc)
        flow = load(p)
        gap = game.gap(flow)
        gaps.append(gap)
        if gap < stop.gap_tol:
            status = "converged"
        elif stop.divergence and detect_divergence(gaps[-span:], initial=gaps[0], window=stop.window,
                                                   best_before=best_before):
            status = "diverged"
        if len(gaps) > span:
            best_before = min(best_before, gaps[-span - 1])
        if _keep(t) or status != "max_days" or t == stop.max_days:
            log(t, gap, full)
        if status == "diverged":
            break
    for j, tr in enumerate(trajs):
        tr.status = status
        tr.final = DynamicsState(t, s[j], p[j], flow)
        if not full:
            # summaries still carry the terminal arrays
            tr.p.append(p[j])
            tr.s.append(s[j])
            tr.x.append(flow.x)
            tr.u.append(flow.u)
            tr.c.append(flow.c)
    agg.status = status
    return trajs, agg, flow, status


def run(game: Game, engine: str = "cumlog", eta=Schedule.constant(1.0), r=1.0, s0="zeros",
        stop: StopRule = StopRule(), seed: int | None = None, variant: str = "raw", reference=None,
        record: str = "full") -> Trajectory:
    """Iterate one engine from ``s0`` until the gap drops below ``stop.gap_tol``,
    ``stop.max_days`` pass, or :func:`detect_divergence` fires.

    ``r`` may be a number or (for ``sa``) a :class:`Schedule` evaluated at the
    day index; ``reference`` enables the ``kl_to_ref`` column.
    ``record="summary"`` keeps scalars per day and only the final arrays.
    """
    trajs, _, _, _ = _simulate(game, [ClassSpec("", r, 1.0, s0, seed)], engine, _as_schedule(eta), stop,
                               variant, reference, record)
    return trajs[0]


def run_multiclass(game: Game, classes: Sequence[ClassSpec], eta=Schedule.constant(1.0),
                   stop: StopRule = StopRule(max_days=1000, gap_tol=1e-300), engine: str = "cumlog",
                   record: str = "full") -> MultiClassResult:
    """Heterogeneous CumLog: each class keeps its own valuation and ``r`` but all see the same costs."""
    trajs, agg, flow, status = _simulate(game, classes, engine, _as_schedule(eta), stop, "raw", None, record)
    if len(classes) == 1:
        agg = trajs[0]
    return MultiClassResult(classes=trajs, aggregate=agg, flow=flow, status=status)
