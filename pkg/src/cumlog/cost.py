"""Link and route cost evaluation.

Strategies map to link flows through the demand-scaled incidence
``x = Lambda_bar @ p``, link flows map to link costs through separable
polynomial or BPR functions, and route costs are ``c = Lambda.T @ u``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "CostParams",
    "FlowState",
    "LinkCostModel",
    "link_flows",
    "link_costs",
    "route_costs",
    "evaluate",
    "route_cost_jacobian",
    "estimate_lipschitz",
    "cocoercivity_probe",
    "CocoercivityReport",
]


@dataclass(frozen=True)
class CostParams:
    """Cost function of a single link.

    ``kind="polynomial"`` gives ``u = h + w * x**power``.
    ``kind="bpr"`` gives ``u = fft * (1 + b * (x / cap)**power)``.
    """

    kind: str = "polynomial"
    h: float = 0.0
    w: float = 0.0
    fft: float = 0.0
    cap: float = 1.0
    b: float = 0.0
    power: float = 1.0

    def __post_init__(self):
        if self.kind not in ("polynomial", "bpr"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.power <= 0:
            raise ValueError("power must be positive")
        if self.kind == "polynomial":
            if self.w < 0:
                raise ValueError("polynomial weight w must be >= 0")
            if float(self.power) != int(self.power):
                raise ValueError("polynomial power must be an integer")
        else:
            if self.cap <= 0:
                raise ValueError("BPR capacity must be > 0")
            if self.b < 0 or self.fft < 0:
                raise ValueError("BPR fft and b must be >= 0")

    @classmethod
    def polynomial(cls, h: float, w: float, power: int = 1) -> "CostParams":
        return cls(kind="polynomial", h=float(h), w=float(w), power=int(power))

    @classmethod
    def bpr(cls, fft: float, cap: float, b: float = 0.15, power: float = 4.0) -> "CostParams":
        return cls(kind="bpr", fft=float(fft), cap=float(cap), b=float(b), power=float(power))

    def coefficients(self) -> tuple[float, float, float]:
        """Return ``(a, c, n)`` such that ``u(x) = a + c * x**n``."""
        if self.kind == "polynomial":
            return self.h, self.w, float(self.power)
        return self.fft, self.fft * self.b / self.cap**self.power, float(self.power)


class LinkCostModel:
    """Vectorised separable link costs ``u_e(x) = a_e + c_e * x_e**n_e``."""

    def __init__(self, params: Sequence[CostParams]):
        self.params = tuple(params)
        coef = np.array([p.coefficients() for p in self.params], dtype=float).reshape(-1, 3)
        self.a, self.c, self.n = coef[:, 0], coef[:, 1], coef[:, 2]

    def __len__(self):
        return len(self.params)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != self.a.shape:
            raise ValueError(f"flow vector has shape {x.shape}, expected {self.a.shape}")
        if np.any(x < 0):
            raise ValueError("negative link flow")
        return x

    def __call__(self, x) -> np.ndarray:
        x = self._check(x)
        return self.a + self.c * x**self.n

    def derivative(self, x) -> np.ndarray:
        x = self._check(x)
        # x**(n-1) at x=0 is 0 for n>1 and 1 for n==1
        return self.c * self.n * x ** (self.n - 1.0)

    def integral(self, x) -> np.ndarray:
        """Per-link ``int_0^x u_e(s) ds`` (the Beckmann terms)."""
        x = self._check(x)
        return self.a * x + self.c * x ** (self.n + 1.0) / (self.n + 1.0)


@dataclass
class FlowState:
    x: np.ndarray
    u: np.ndarray
    c: np.ndarray


def _model(params) -> LinkCostModel:
    return params if isinstance(params, LinkCostModel) else LinkCostModel(params)


def link_flows(inc, p) -> np.ndarray:
    """Link flows ``x = Lambda_bar @ p``."""
    p = np.asarray(p, dtype=float)
    if p.shape != (inc.n_routes,):
        raise ValueError(f"strategy has shape {p.shape}, expected ({inc.n_routes},)")
    x = inc.demand_scaled @ p
    # rounding can leave -0.0 or -1e-17 entries when p has tiny negative noise
    return np.maximum(x, 0.0)


def link_costs(params, x) -> np.ndarray:
    return _model(params)(x)


def route_costs(inc, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (inc.n_links,):
        raise ValueError(f"link cost vector has shape {u.shape}, expected ({inc.n_links},)")
    return inc.link_route.T @ u


def evaluate(inc, params, p) -> FlowState:
    """Flows, link costs and route costs of strategy ``p``."""
    x = link_flows(inc, p)
    u = _model(params)(x)
    return FlowState(x=x, u=u, c=route_costs(inc, u))


def route_cost_jacobian(inc, params, p, link_jacobian: Callable | None = None) -> np.ndarray:
    """Dense Jacobian of ``c(p) = Lambda.T u(Lambda_bar p)``.

    ``link_jacobian`` may supply a dense ``grad u(x)`` for non-separable costs.
    """
    x = link_flows(inc, p)
    lam = _dense(inc.link_route)
    lam_bar = _dense(inc.demand_scaled)
    if link_jacobian is None:
        du = _model(params).derivative(x)
        return lam.T @ (du[:, None] * lam_bar)
    return lam.T @ np.asarray(link_jacobian(x), dtype=float) @ lam_bar


def _dense(m) -> np.ndarray:
    return m.toarray() if hasattr(m, "toarray") else np.asarray(m)


def _simplex_vertices(inc, limit: int = 6):
    """All pure strategies, if every OD has at most ``limit`` routes and there are few of them."""
    sizes = np.diff(inc.od_start)
    if sizes.max(initial=0) > limit or np.prod(sizes.astype(float)) > 4096:
        return []
    grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
    choices = np.stack([g.ravel() for g in grids], axis=1)
    out = []
    for row in choices:
        p = np.zeros(inc.n_routes)
        p[inc.od_start[:-1] + row] = 1.0
        out.append(p)
    return out


def random_strategy(inc, rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed point of the per-OD product of simplices."""
    e = rng.exponential(size=inc.n_routes)
    tot = np.add.reduceat(e, inc.od_start[:-1])
    return e / np.repeat(tot, np.diff(inc.od_start))


def estimate_lipschitz(
    inc,
    params,
    sampling: str | int = "grid",
    seed: int = 0,
    safety: float = 1.1,
    link_jacobian: Callable | None = None,
) -> float:
    """Sample-based estimate of ``max_p ||grad c(p)||_2``, times ``safety``.

    ``sampling="grid"`` evaluates every simplex vertex (when each OD has at
    most six routes) plus the per-OD barycentre; an integer ``n`` adds ``n``
    uniform random strategies on top of that grid. The result bounds the
    Jacobian norm only over the evaluated points.
    """
    points = _simplex_vertices(inc)
    sizes = np.diff(inc.od_start)
    points.append(np.repeat(1.0 / sizes, sizes))
    if not isinstance(sampling, str):
        rng = np.random.default_rng(seed)
        points.extend(random_strategy(inc, rng) for _ in range(int(sampling)))
    elif sampling != "grid":
        raise ValueError(f"unknown sampling {sampling!r}")
    best = 0.0
    for p in points:
        jac = route_cost_jacobian(inc, params, p, link_jacobian)
        best = max(best, float(np.linalg.norm(jac, 2)))
    return safety * best


@dataclass
class CocoercivityReport:
    trials: int
    max_violation: float
    L: float

    def to_json(self) -> str:
        return json.dumps({"trials": self.trials, "max_violation": self.max_violation, "L": self.L})


def cocoercivity_probe(inc, params, trials: int = 1000, L: float | None = None, seed: int = 0) -> CocoercivityReport:
    """Check ``<c(p')-c(p), p'-p> >= ||c(p')-c(p)||^2 / (4L)`` on random pairs.

    The reported violation is the largest value of
    ``||dc||^2 / (4L) - <dc, dp>``; non-positive means the inequality held.
    """
    if L is None:
        L = estimate_lipschitz(inc, params)
    model = _model(params)
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(trials):
        p = random_strategy(inc, rng)
        q = random_strategy(inc, rng)
        dc = route_costs(inc, model(link_flows(inc, q))) - route_costs(inc, model(link_flows(inc, p)))
        dp = q - p
        lhs = float(dc @ dp)
        rhs = float(dc @ dc) / (4.0 * L) if L > 0 else (0.0 if not dc.any() else np.inf)
        worst = max(worst, rhs - lhs)
    if trials == 0:
        worst = 0.0
    return CocoercivityReport(trials=trials, max_violation=float(worst), L=float(L))
