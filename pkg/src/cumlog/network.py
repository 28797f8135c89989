"""Routing-game topology, demand, routes and incidence matrices.

Nodes are 0-based internally; TNTP files are 1-based and the conversion
happens only in :func:`parse_tntp` / :func:`serialize_tntp`.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .cost import CostParams, LinkCostModel

__all__ = [
    "Link",
    "ODPair",
    "Network",
    "RouteSet",
    "Incidence",
    "TNTPError",
    "RouteEnumerationError",
    "parse_tntp",
    "serialize_tntp",
    "enumerate_routes",
    "builtin",
    "BUILTIN_NAMES",
    "BUILTIN_COST_UNITS",
    "builtin_cost_unit",
]

# dense matrices are faster than CSR for the tiny builtin networks
_DENSE_LIMIT = 4096
MAX_ENUMERATION_LINKS = 32


class TNTPError(ValueError):
    """Malformed TNTP input; message carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RouteEnumerationError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    cost: CostParams


@dataclass(frozen=True)
class ODPair:
    origin: int
    destination: int
    demand: float


@dataclass(frozen=True)
class Network:
    n_nodes: int
    links: tuple[Link, ...]
    od_pairs: tuple[ODPair, ...]
    name: str = ""
    n_zones: int | None = None
    first_thru_node: int = 0

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "od_pairs", tuple(self.od_pairs))
        for i, link in enumerate(self.links):
            if link.id != i:
                raise ValueError(f"link ids must be dense 0..|E|-1; position {i} holds id {link.id}")
            for node in (link.tail, link.head):
                if not 0 <= node < self.n_nodes:
                    raise ValueError(f"link {i} references unknown node {node}")
        for od in self.od_pairs:
            for node in (od.origin, od.destination):
                if not 0 <= node < self.n_nodes:
                    raise ValueError(f"OD pair references unknown node {node}")
            if not np.isfinite(od.demand) or od.demand < 0:
                raise ValueError(f"invalid demand {od.demand}")

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def demands(self) -> np.ndarray:
        return np.array([od.demand for od in self.od_pairs], dtype=float)

    @property
    def cost_model(self) -> LinkCostModel:
        return LinkCostModel([link.cost for link in self.links])

    def out_links(self) -> list[list[Link]]:
        adj: list[list[Link]] = [[] for _ in range(self.n_nodes)]
        for link in self.links:
            adj[link.tail].append(link)
        return adj


@dataclass(frozen=True)
class RouteSet:
    """Routes grouped contiguously by OD; ``od_start[w]:od_start[w+1]`` are OD ``w``'s routes."""

    routes: tuple[tuple[int, ...], ...]
    od_index: np.ndarray
    od_start: np.ndarray
    od_pairs: tuple[tuple[int, int], ...] = ()

    @property
    def n_routes(self) -> int:
        return len(self.routes)

    def routes_of(self, w: int) -> range:
        return range(int(self.od_start[w]), int(self.od_start[w + 1]))

    def counts(self) -> np.ndarray:
        return np.diff(self.od_start)

    def to_json(self) -> str:
        recs = [
            {"od": list(self.od_pairs[int(w)]), "links": list(r)}
            for r, w in zip(self.routes, self.od_index)
        ]
        return json.dumps(recs)

    @classmethod
    def from_routes(cls, per_od: Sequence[Sequence[Sequence[int]]], od_pairs=()) -> "RouteSet":
        routes, od_index, start = [], [], [0]
        for w, rs in enumerate(per_od):
            for r in rs:
                routes.append(tuple(int(e) for e in r))
                od_index.append(w)
            start.append(len(routes))
        return cls(
            routes=tuple(routes),
            od_index=np.array(od_index, dtype=int),
            od_start=np.array(start, dtype=int),
            od_pairs=tuple(tuple(od) for od in od_pairs),
        )

    @classmethod
    def from_json(cls, text: str, network: Network) -> "RouteSet":
        lookup = {(od.origin, od.destination): w for w, od in enumerate(network.od_pairs)}
        per_od: list[list[tuple[int, ...]]] = [[] for _ in network.od_pairs]
        for rec in json.loads(text):
            per_od[lookup[tuple(rec["od"])]].append(tuple(rec["links"]))
        rs = cls.from_routes(per_od, [(od.origin, od.destination) for od in network.od_pairs])
        validate_routes(network, rs)
        return rs

    def link_sets(self) -> list[frozenset[int]]:
        return [frozenset(r) for r in self.routes]


def validate_routes(network: Network, routes: RouteSet) -> None:
    for k, (r, w) in enumerate(zip(routes.routes, routes.od_index)):
        od = network.od_pairs[int(w)]
        if not r:
            raise ValueError(f"route {k} is empty")
        node = od.origin
        seen = {node}
        for e in r:
            link = network.links[e]
            if link.tail != node:
                raise ValueError(f"route {k} is not contiguous at link {e}")
            node = link.head
            if node in seen:
                raise ValueError(f"route {k} repeats node {node}")
            seen.add(node)
        if node != od.destination:
            raise ValueError(f"route {k} does not end at its destination")
    for w, od in enumerate(network.od_pairs):
        if od.demand > 0 and routes.od_start[w + 1] == routes.od_start[w]:
            raise ValueError(f"OD pair {w} has positive demand but no routes")


class Incidence:
    """Link-route ``Lambda``, OD-route ``Sigma`` and ``Lambda_bar = Lambda diag(Sigma.T d)``."""

    def __init__(self, network: Network, routes: RouteSet, demands: np.ndarray | None = None):
        self.network = network
        self.routes = routes
        self.n_links = network.n_links
        self.n_routes = routes.n_routes
        self.n_od = len(network.od_pairs)
        self.od_start = routes.od_start
        self.od_index = routes.od_index
        self.demands = network.demands if demands is None else np.asarray(demands, dtype=float)
        rows = [e for r in routes.routes for e in r]
        cols = [k for k, r in enumerate(routes.routes) for _ in r]
        lam = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_links, self.n_routes)
        )
        sig = sparse.csr_matrix(
            (np.ones(self.n_routes), (routes.od_index, np.arange(self.n_routes))),
            shape=(self.n_od, self.n_routes),
        )
        self.route_demand = self.demands[routes.od_index]
        lam_bar = lam @ sparse.diags(self.route_demand)
        if self.n_links * self.n_routes <= _DENSE_LIMIT:
            lam, sig, lam_bar = lam.toarray(), sig.toarray(), lam_bar.toarray()
        self.link_route = lam
        self.od_route = sig
        self.demand_scaled = lam_bar

    def with_demands(self, demands) -> "Incidence":
        return Incidence(self.network, self.routes, demands)

    def od_sum(self, v: np.ndarray) -> np.ndarray:
        """Per-OD sums of a route vector (``Sigma @ v``)."""
        return np.add.reduceat(v, self.od_start[:-1]) if self.n_routes else np.zeros(0)

    def od_min(self, v: np.ndarray) -> np.ndarray:
        return np.minimum.reduceat(v, self.od_start[:-1])

    def expand(self, per_od: np.ndarray) -> np.ndarray:
        """Broadcast a per-OD vector to routes (``Sigma.T @ v``)."""
        return np.repeat(per_od, np.diff(self.od_start))


# ---------------------------------------------------------------------------
# TNTP parsing

_TAG = re.compile(r"^<([^<>]+)>(.*)$")


def _parse_metadata(lines, kind):
    meta = {}
    for lineno, raw in lines:
        line = raw.strip()
        if not line:
            continue
        if not line.startswith("<"):
            raise TNTPError(f"expected a metadata tag, found {line[:30]!r}", lineno)
        m = _TAG.match(line)
        if m is None:
            raise TNTPError(f"malformed header tag {line[:40]!r}", lineno)
        tag = m.group(1).strip().upper()
        if tag == "END OF METADATA":
            return meta
        meta[tag] = (m.group(2).strip(), lineno)
    raise TNTPError(f"{kind} file has no <END OF METADATA>")


def _meta_int(meta, tag, required=True):
    if tag not in meta:
        if required:
            raise TNTPError(f"missing <{tag}>")
        return None
    value, lineno = meta[tag]
    try:
        return int(float(value))
    except ValueError:
        raise TNTPError(f"<{tag}> is not numeric: {value!r}", lineno) from None


def _float(text, lineno, what):
    try:
        return float(text)
    except ValueError:
        raise TNTPError(f"non-numeric {what} {text!r}", lineno) from None


def parse_tntp(net_text: str, trips_text: str, name: str = "") -> Network:
    """Parse TNTP network and trips text into a :class:`Network`.

    Only free-flow time, capacity, b and power are kept per link. OD pairs
    with zero demand and intra-zonal entries are dropped.
    """
    lines = list(enumerate(net_text.splitlines(), start=1))
    it = iter(lines)
    meta = _parse_metadata(it, "network")
    n_nodes = _meta_int(meta, "NUMBER OF NODES")
    n_links = _meta_int(meta, "NUMBER OF LINKS")
    n_zones = _meta_int(meta, "NUMBER OF ZONES", required=False)
    first_thru = _meta_int(meta, "FIRST THRU NODE", required=False) or 1

    links = []
    for lineno, raw in it:
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        line = line.rstrip(";").strip()
        fields = line.split()
        if len(fields) < 7:
            raise TNTPError(f"link record needs at least 7 fields, got {len(fields)}", lineno)
        tail = _float(fields[0], lineno, "init node")
        head = _float(fields[1], lineno, "term node")
        cap = _float(fields[2], lineno, "capacity")
        # fields[3] is length
        _float(fields[3], lineno, "length")
        fft = _float(fields[4], lineno, "free flow time")
        b = _float(fields[5], lineno, "b")
        power = _float(fields[6], lineno, "power")
        for extra in fields[7:]:
            _float(extra, lineno, "field")
        for node in (tail, head):
            if node != int(node) or not 1 <= node <= n_nodes:
                raise TNTPError(f"dangling node reference {fields[0] if node == tail else fields[1]}", lineno)
        try:
            params = CostParams.bpr(fft=fft, cap=cap, b=b, power=power)
        except ValueError as exc:
            raise TNTPError(str(exc), lineno) from None
        links.append(Link(len(links), int(tail) - 1, int(head) - 1, params))
    if len(links) != n_links:
        raise TNTPError(f"<NUMBER OF LINKS> says {n_links} but {len(links)} link records were found")

    od_pairs = _parse_trips(trips_text, n_nodes)
    return Network(
        n_nodes=n_nodes,
        links=tuple(links),
        od_pairs=tuple(od_pairs),
        name=name,
        n_zones=n_zones,
        first_thru_node=first_thru - 1,
    )


def _parse_trips(text, n_nodes):
    lines = list(enumerate(text.splitlines(), start=1))
    it = iter(lines)
    _parse_metadata(it, "trips")
    od = []
    origin = None
    for lineno, raw in it:
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        if line.lower().startswith("origin"):
            parts = line.split()
            if len(parts) != 2:
                raise TNTPError(f"malformed origin line {line!r}", lineno)
            o = _float(parts[1], lineno, "origin")
            if o != int(o) or not 1 <= o <= n_nodes:
                raise TNTPError(f"dangling node reference {parts[1]}", lineno)
            origin = int(o) - 1
            continue
        if origin is None:
            raise TNTPError("destination entries before any Origin line", lineno)
        for entry in line.split(";"):
            entry = entry.strip()
            if not entry:
                continue
            if ":" not in entry:
                raise TNTPError(f"malformed trips entry {entry!r}", lineno)
            d_text, flow_text = entry.split(":", 1)
            d = _float(d_text.strip(), lineno, "destination")
            flow = _float(flow_text.strip(), lineno, "flow")
            if d != int(d) or not 1 <= d <= n_nodes:
                raise TNTPError(f"dangling node reference {d_text.strip()}", lineno)
            if flow < 0 or not np.isfinite(flow):
                raise TNTPError(f"negative demand {flow}", lineno)
            dest = int(d) - 1
            if flow > 0 and dest != origin:
                od.append(ODPair(origin, dest, flow))
    return od


def serialize_tntp(network: Network) -> tuple[str, str]:
    """Inverse of :func:`parse_tntp` for the fields the format carries."""
    n_zones = network.n_zones if network.n_zones is not None else network.n_nodes
    net = [
        f"<NUMBER OF ZONES> {n_zones}",
        f"<NUMBER OF NODES> {network.n_nodes}",
        f"<FIRST THRU NODE> {network.first_thru_node + 1}",
        f"<NUMBER OF LINKS> {network.n_links}",
        "<END OF METADATA>",
        "",
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for link in network.links:
        p = link.cost
        if p.kind != "bpr":
            raise ValueError("only BPR links can be written as TNTP")
        net.append(
            f"\t{link.tail + 1}\t{link.head + 1}\t{p.cap!r}\t{p.fft!r}\t{p.fft!r}\t{p.b!r}\t{p.power!r}\t0\t0\t1\t;"
        )
    total = sum(od.demand for od in network.od_pairs)
    trips = [f"<NUMBER OF ZONES> {n_zones}", f"<TOTAL OD FLOW> {total!r}", "<END OF METADATA>", ""]
    by_origin: dict[int, list[ODPair]] = {}
    for od in network.od_pairs:
        by_origin.setdefault(od.origin, []).append(od)
    for o in sorted(by_origin):
        trips.append(f"Origin {o + 1}")
        trips.append("  ".join(f"{od.destination + 1} : {od.demand!r};" for od in by_origin[o]))
        trips.append("")
    return "\n".join(net) + "\n", "\n".join(trips) + "\n"


# ---------------------------------------------------------------------------
# route enumeration


def _all_simple_paths(network: Network, origin: int, destination: int) -> list[tuple[int, ...]]:
    adj = network.out_links()
    out = []
    stack = [(origin, (), frozenset([origin]))]
    while stack:
        node, path, seen = stack.pop()
        if node == destination:
            out.append(path)
            continue
        for link in adj[node]:
            if link.head not in seen:
                stack.append((link.head, path + (link.id,), seen | {link.head}))
    return out


def _dijkstra_path(adj, weights, origin, destination, banned_links=frozenset(), banned_nodes=frozenset()):
    """Shortest path as a link tuple; ties resolved toward the smaller link sequence."""
    heap = [(0.0, (), origin)]
    settled = set()
    while heap:
        d, path, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == destination:
            return d, path
        for link in adj[node]:
            if link.id in banned_links or link.head in banned_nodes or link.head in settled:
                continue
            heapq.heappush(heap, (d + weights[link.id], path + (link.id,), link.head))
    return None


def _k_shortest(network: Network, origin: int, destination: int, k: int, weights) -> list[tuple[int, ...]]:
    """Yen's k shortest loopless paths over link sequences."""
    adj = network.out_links()
    first = _dijkstra_path(adj, weights, origin, destination)
    if first is None:
        return []
    found = [first]
    candidates: list[tuple[float, tuple[int, ...]]] = []
    seen = {first[1]}

    def nodes_of(path):
        nodes = [origin]
        for e in path:
            nodes.append(network.links[e].head)
        return nodes

    while len(found) < k:
        _, last = found[-1]
        last_nodes = nodes_of(last)
        for i in range(len(last)):
            spur = last_nodes[i]
            root = last[:i]
            banned_links = {p[i] for _, p in found if p[:i] == root and len(p) > i}
            banned_nodes = frozenset(last_nodes[:i])
            spur_path = _dijkstra_path(adj, weights, spur, destination, frozenset(banned_links), banned_nodes)
            if spur_path is None:
                continue
            total = root + spur_path[1]
            if total in seen:
                continue
            seen.add(total)
            heapq.heappush(candidates, (sum(weights[e] for e in total), total))
        if not candidates:
            break
        found.append(heapq.heappop(candidates))
    return [p for _, p in found]


def enumerate_routes(network: Network, policy: str = "all", k: int | None = None) -> RouteSet:
    """Enumerate routes per OD pair.

    ``policy="all"`` lists every simple path and is refused on networks with
    more than 32 links. ``policy="k-shortest"`` keeps the ``k`` shortest
    loopless paths under free-flow (zero-flow) link costs. Within each OD
    routes are sorted by their link-id sequence.
    """
    if policy in ("all", "all-simple-paths"):
        if network.n_links > MAX_ENUMERATION_LINKS:
            raise RouteEnumerationError(
                f"all-simple-paths refused on {network.n_links} links (limit {MAX_ENUMERATION_LINKS})"
            )
        finder = lambda o, d: _all_simple_paths(network, o, d)  # noqa: E731
    elif policy in ("k-shortest", "ksp"):
        if k is None or k < 1:
            raise ValueError("k-shortest needs k >= 1")
        weights = network.cost_model(np.zeros(network.n_links))
        finder = lambda o, d: _k_shortest(network, o, d, k, weights)  # noqa: E731
    else:
        raise ValueError(f"unknown route policy {policy!r}")
    per_od = []
    for w, od in enumerate(network.od_pairs):
        paths = sorted(finder(od.origin, od.destination)) if od.origin != od.destination else []
        if not paths and od.demand > 0:
            raise RouteEnumerationError(f"OD pair {w} ({od.origin}->{od.destination}) is unreachable")
        per_od.append(paths)
    return RouteSet.from_routes(per_od, [(od.origin, od.destination) for od in network.od_pairs])


# ---------------------------------------------------------------------------
# builtin networks

BUILTIN_NAMES = ("three-parallel", "3n4l", "sioux-falls")
SIOUX_FALLS_K = 2

# time unit in which the dynamics accumulate costs on each builtin network
# (raw 3N4L route costs run into the thousands, Sioux Falls into the hundreds)
BUILTIN_COST_UNITS = {"three-parallel": 1.0, "3n4l": 1e4, "sioux-falls": 100.0}


def three_parallel() -> Network:
    links = [
        Link(0, 0, 1, CostParams.polynomial(0.0, 1.0, 1)),
        Link(1, 0, 1, CostParams.polynomial(1.0, 1.0, 1)),
        Link(2, 0, 1, CostParams.polynomial(2.25, 1.0, 1)),
    ]
    return Network(2, tuple(links), (ODPair(0, 1, 3.0),), name="three-parallel")


def three_node_four_link() -> Network:
    """Links 0,1 join nodes 0->1 and links 2,3 join nodes 1->2."""
    h = [4.0, 20.0, 1.0, 30.0]
    w = [1.0, 5.0, 30.0, 1.0]
    ends = [(0, 1), (0, 1), (1, 2), (1, 2)]
    links = [Link(i, a, b, CostParams.polynomial(h[i], w[i], 4)) for i, (a, b) in enumerate(ends)]
    return Network(3, tuple(links), (ODPair(0, 2, 10.0),), name="3n4l")


def read_tntp_files(net_path, trips_path, name="") -> Network:
    with open(net_path) as f_net, open(trips_path) as f_trips:
        return parse_tntp(f_net.read(), f_trips.read(), name=name)


@lru_cache(maxsize=None)
def sioux_falls() -> Network:
    data = resources.files("cumlog") / "data"
    return parse_tntp(
        (data / "SiouxFalls_net.tntp").read_text(),
        (data / "SiouxFalls_trips.tntp").read_text(),
        name="sioux-falls",
    )


@lru_cache(maxsize=None)
def _sioux_routes(k: int) -> RouteSet:
    return enumerate_routes(sioux_falls(), "k-shortest", k=k)


def _builtin_key(name: str) -> str:
    key = name.lower().replace("_", "-")
    key = "sioux-falls" if key == "siouxfalls" else key
    if key not in BUILTIN_NAMES:
        raise KeyError(f"unknown builtin network {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    return key


def builtin_cost_unit(name: str) -> float:
    return BUILTIN_COST_UNITS[_builtin_key(name)]


def builtin(name: str, k: int | None = None) -> tuple[Network, RouteSet]:
    """Return a builtin network with its default route set.

    The two small networks use every simple path; Sioux Falls uses the
    ``k`` (default 2) shortest free-flow paths per OD.
    """
    key = _builtin_key(name)
    if key == "three-parallel":
        net = three_parallel()
    elif key == "3n4l":
        net = three_node_four_link()
    elif key == "sioux-falls":
        return sioux_falls(), _sioux_routes(k or SIOUX_FALLS_K)
    else:
        raise KeyError(f"unknown builtin network {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    return net, enumerate_routes(net, "all")
