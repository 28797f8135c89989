"""Equilibrium diagnostics and an independent Frank-Wolfe oracle."""

from __future__ import annotations

import csv
import heapq
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .choice import entropy as _entropy
from .network import Network

__all__ = [
    "GapReport",
    "WeCertificate",
    "OracleError",
    "all_or_nothing",
    "shortest_paths_to",
    "route_all_or_nothing",
    "relative_gap",
    "gap_report",
    "check_wardrop",
    "used_routes",
    "beckmann_oracle",
    "flows_to_csv",
    "FamilyReport",
    "we_strategy_family_probe",
    "SUPPORT_THRESHOLD",
]

SUPPORT_THRESHOLD = 1e-6
_TIE_RTOL = 1e-12


class OracleError(RuntimeError):
    pass


@dataclass
class GapReport:
    delta: float
    aon_flow: np.ndarray
    total_cost: float

    def to_json(self) -> str:
        return json.dumps({"delta": self.delta, "aon_flow": self.aon_flow.tolist(), "total_cost": self.total_cost})


@dataclass
class WeCertificate:
    min_cost: np.ndarray
    excess: np.ndarray
    violated_mass: np.ndarray
    max_violated_mass: float

    @property
    def certified(self) -> bool:
        return self.max_violated_mass == 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "min_cost": self.min_cost.tolist(),
                "excess": self.excess.tolist(),
                "violated_mass": self.violated_mass.tolist(),
                "max_violated_mass": self.max_violated_mass,
            }
        )


# ---------------------------------------------------------------------------
# all-or-nothing loading


def shortest_paths_to(network: Network, u, destination: int) -> np.ndarray:
    """Label-setting distances from every node to ``destination`` under link costs ``u``."""
    incoming: list[list[tuple[int, int]]] = [[] for _ in range(network.n_nodes)]
    for link in network.links:
        incoming[link.head].append((link.tail, link.id))
    dist = np.full(network.n_nodes, np.inf)
    dist[destination] = 0.0
    heap = [(0.0, destination)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        for tail, e in incoming[node]:
            nd = d + u[e]
            if nd < dist[tail]:
                dist[tail] = nd
                heapq.heappush(heap, (nd, tail))
    return dist


def _lexicographic_path(network, adj, u, dist, origin, destination):
    path = []
    node = origin
    seen = {origin}
    while node != destination:
        tol = _TIE_RTOL * max(1.0, abs(dist[node]))
        best = None
        for link in adj[node]:
            if link.head in seen or not np.isfinite(dist[link.head]):
                continue
            if abs(u[link.id] + dist[link.head] - dist[node]) <= tol:
                key = (link.head, link.id)
                if best is None or key < best:
                    best = key
        if best is None:
            raise OracleError(f"no tight link out of node {node} toward {destination}")
        path.append(best[1])
        node = best[0]
        seen.add(node)
    return path


def all_or_nothing(network: Network, u, demands=None) -> np.ndarray:
    """Load every OD's demand on its shortest path under fixed link costs ``u``.

    Among equal-cost shortest paths the lexicographically smallest node
    sequence wins; parallel links with the same nodes fall back to link id.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (network.n_links,):
        raise ValueError("link cost vector has the wrong length")
    if np.any(u < 0):
        raise ValueError("all-or-nothing needs nonnegative link costs")
    demands = network.demands if demands is None else np.asarray(demands, dtype=float)
    adj = network.out_links()
    x = np.zeros(network.n_links)
    by_dest: dict[int, list[int]] = {}
    for w, od in enumerate(network.od_pairs):
        by_dest.setdefault(od.destination, []).append(w)
    for dest, ods in by_dest.items():
        dist = shortest_paths_to(network, u, dest)
        for w in ods:
            od = network.od_pairs[w]
            if demands[w] == 0:
                continue
            if not np.isfinite(dist[od.origin]):
                raise OracleError(f"destination {dest} unreachable from {od.origin}")
            for e in _lexicographic_path(network, adj, u, dist, od.origin, dest):
                x[e] += demands[w]
    return x


def route_all_or_nothing(inc, c) -> np.ndarray:
    """Minimiser of ``<u, x''>`` over flows representable by the route set.

    Each OD loads its full demand on the first route (canonical order)
    attaining the minimum route cost.
    """
    c = np.asarray(c, dtype=float)
    best = np.empty(inc.n_od, dtype=int)
    for w in range(inc.n_od):
        lo, hi = inc.od_start[w], inc.od_start[w + 1]
        best[w] = lo + int(np.argmin(c[lo:hi]))
    p = np.zeros(inc.n_routes)
    p[best] = 1.0
    return inc.demand_scaled @ p


def relative_gap(u, x, x_aon) -> float:
    """``delta(x) = -<u, x' - x> / <u, x>``, with tiny negatives clamped to 0."""
    u = np.asarray(u, dtype=float)
    total = float(u @ np.asarray(x, dtype=float))
    if total <= 0:
        raise ValueError("relative gap undefined for zero total cost")
    delta = -float(u @ (np.asarray(x_aon, dtype=float) - x)) / total
    if -1e-12 <= delta < 0:
        delta = 0.0
    return delta


def gap_report(u, x, x_aon) -> GapReport:
    return GapReport(delta=relative_gap(u, x, x_aon), aon_flow=np.asarray(x_aon), total_cost=float(u @ x))


def check_wardrop(p, c, inc, eps: float | None = None, rel_eps: float = 1e-6,
                  support_threshold: float = SUPPORT_THRESHOLD) -> WeCertificate:
    """Wardrop certificate: mass on used routes whose cost exceeds the OD minimum.

    A route is *used* when ``p_k > support_threshold`` and *violating* when its
    excess cost is above ``eps`` (absolute) or, if ``eps`` is None, above
    ``rel_eps * b_w``.
    """
    p = np.asarray(p, dtype=float)
    c = np.asarray(c, dtype=float)
    b = inc.od_min(c)
    b_route = inc.expand(b)
    excess = c - b_route
    tol = np.full(len(c), eps) if eps is not None else rel_eps * np.abs(b_route)
    bad = (p > support_threshold) & (excess > tol)
    mass = inc.od_sum(np.where(bad, p, 0.0))
    return WeCertificate(
        min_cost=b, excess=excess, violated_mass=mass, max_violated_mass=float(mass.max(initial=0.0))
    )


def used_routes(p, inc, threshold: float = SUPPORT_THRESHOLD):
    """Count routes with ``p_k >= threshold``; also return the per-OD index lists."""
    p = np.asarray(p, dtype=float)
    used = p >= threshold
    per_od = [np.flatnonzero(used[inc.od_start[w]:inc.od_start[w + 1]]) + inc.od_start[w] for w in range(inc.n_od)]
    return int(used.sum()), per_od


# ---------------------------------------------------------------------------
# Beckmann oracle


def _line_search(model, x, y, iters=200):
    # derivative of the Beckmann objective along x + a (y - x) is <u(x + a d), d>
    d = y - x

    def g(a):
        return float(model(np.maximum(x + a * d, 0.0)) @ d)

    if g(1.0) <= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def beckmann_oracle(network: Network, demands=None, tol: float = 1e-10, max_iter: int = 200_000):
    """WE link flows by Frank-Wolfe on ``sum_a int_0^{x_a} u_a(s) ds``.

    Needs separable nondecreasing link costs. Uses network-level shortest
    paths (no route set). Returns ``(x, gap, iterations)``; raises
    :class:`OracleError` if ``tol`` is not reached within ``max_iter``.
    """
    model = network.cost_model
    demands = network.demands if demands is None else np.asarray(demands, dtype=float)
    if not np.any(demands > 0):
        return np.zeros(network.n_links), 0.0, 0
    x = all_or_nothing(network, model(np.zeros(network.n_links)), demands)
    gap = np.inf
    for it in range(1, max_iter + 1):
        u = model(x)
        y = all_or_nothing(network, u, demands)
        gap = relative_gap(u, x, y)
        if gap < tol:
            return x, gap, it
        a = _line_search(model, x, y)
        x = x + a * (y - x)
    raise OracleError(f"Frank-Wolfe stopped at gap {gap:.3e} after {max_iter} iterations (tol {tol:g})")


def flows_to_csv(x, u) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["link", "flow", "cost"])
    for e, (xe, ue) in enumerate(zip(x, u)):
        wr.writerow([e, repr(float(xe)), repr(float(ue))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# WE strategy family


@dataclass
class FamilyReport:
    feasible: bool
    dimension: int
    vertices: list = field(default_factory=list)
    max_entropy_strategy: np.ndarray | None = None
    max_entropy: float = float("nan")
    min_entropy: float = float("nan")
    direction: np.ndarray | None = None

    def to_json(self) -> str:
        d = asdict(self)
        for key in ("max_entropy_strategy", "direction"):
            if d[key] is not None:
                d[key] = np.asarray(d[key]).tolist()
        d["vertices"] = [np.asarray(v).tolist() for v in self.vertices]
        return json.dumps(d)


def _dense(m):
    return m.toarray() if hasattr(m, "toarray") else np.asarray(m)


def we_strategy_family_probe(inc, x_star, samples: int = 32, flow_tol: float = 1e-6, seed: int = 0) -> FamilyReport:
    """Describe ``{p in P : Lambda_bar p = x*}``.

    Vertices are found by linear programs with random objectives; the
    dimension is the nullity of ``[Lambda_bar; Sigma]``. For a one-dimensional
    family the segment is scanned exactly, otherwise entropy is maximised
    with SLSQP from the vertex barycentre.
    """
    lam_bar = _dense(inc.demand_scaled)
    sig = _dense(inc.od_route)
    x_star = np.asarray(x_star, dtype=float)
    n = inc.n_routes
    slack = flow_tol * max(1.0, float(np.abs(x_star).max(initial=0.0)))
    a_ub = np.vstack([lam_bar, -lam_bar])
    b_ub = np.concatenate([x_star + slack, -(x_star - slack)])
    ones = np.ones(inc.n_od)

    rng = np.random.default_rng(seed)
    vertices: list[np.ndarray] = []
    for j in range(max(samples, 2 * n)):
        obj = rng.standard_normal(n) if j >= 2 * n else np.eye(n)[j % n] * (1 if j < n else -1)
        res = optimize.linprog(obj, A_ub=a_ub, b_ub=b_ub, A_eq=sig, b_eq=ones, bounds=(0, None), method="highs")
        if res.status == 2:
            return FamilyReport(feasible=False, dimension=-1)
        if res.status != 0:
            continue
        v = np.clip(res.x, 0.0, None)
        if not any(np.allclose(v, u, atol=1e-9) for u in vertices):
            vertices.append(v)

    stacked = np.vstack([lam_bar, sig])
    dim = n - int(np.linalg.matrix_rank(stacked))
    spread = np.ptp(np.array(vertices), axis=0).max() if len(vertices) > 1 else 0.0
    if spread < 1e-9:
        dim = 0
    demands = inc.demands

    def ent(p):
        return _entropy(np.clip(p, 0.0, None), demands, inc)

    report = FamilyReport(feasible=True, dimension=dim, vertices=vertices)
    if dim == 0:
        report.max_entropy_strategy = vertices[0]
        report.max_entropy = report.min_entropy = ent(vertices[0])
        return report
    if dim == 1:
        # the two extreme vertices bound the segment
        best_pair = max(((a, b) for a in vertices for b in vertices), key=lambda ab: np.abs(ab[0] - ab[1]).sum())
        p0, p1 = best_pair
        report.direction = p1 - p0
        res = optimize.minimize_scalar(lambda t: -ent(p0 + t * (p1 - p0)), bounds=(0.0, 1.0), method="bounded",
                                       options={"xatol": 1e-12})
        report.max_entropy_strategy = p0 + res.x * (p1 - p0)
        report.max_entropy = -float(res.fun)
        report.min_entropy = min(ent(p0), ent(p1))
        return report
    start = np.mean(vertices, axis=0)
    cons = [
        {"type": "eq", "fun": lambda p: sig @ p - ones},
        {"type": "ineq", "fun": lambda p: x_star + slack - lam_bar @ p},
        {"type": "ineq", "fun": lambda p: lam_bar @ p - x_star + slack},
    ]
    res = optimize.minimize(lambda p: -ent(p), start, bounds=[(0, 1)] * n, constraints=cons, method="SLSQP",
                            options={"ftol": 1e-14, "maxiter": 500})
    report.max_entropy_strategy = np.clip(res.x, 0.0, None)
    report.max_entropy = ent(report.max_entropy_strategy)
    report.min_entropy = min(ent(v) for v in vertices)
    return report
