"""Fixed undirected graphs, light-cone templates and fringes.

A cone template is a canonically ordered tuple of ``(vertex, time_offset)``
pairs.  Past templates cover offsets ``0, -1, ..., -(past_depth - 1)`` and
future templates ``1, ..., future_depth``; a vertex ``u`` appears at offset
``-tau`` (or ``+tau``) when its graph distance to the anchor is at most
``speed_c * tau``.  Canonical order is ``(time_offset, vertex)`` ascending.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import networkx as nx
import numpy as np

PAST = "past"
FUTURE = "future"


class GraphFormatError(ValueError):
    """Raised when a graph file cannot be parsed."""


@dataclass(frozen=True)
class Graph:
    vertex_count: int
    edges: frozenset
    _adj: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.vertex_count < 0:
            raise ValueError("vertex_count must be non-negative")
        norm = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop at vertex {a}")
            if not (0 <= a < self.vertex_count and 0 <= b < self.vertex_count):
                raise ValueError(f"edge ({a}, {b}) out of range")
            norm.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(norm))
        adj = [[] for _ in range(self.vertex_count)]
        for a, b in norm:
            adj[a].append(b)
            adj[b].append(a)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(n)) for n in adj))

    @classmethod
    def from_edges(cls, vertex_count: int, edges: Iterable) -> "Graph":
        return cls(vertex_count, frozenset(tuple(e) for e in edges))

    def neighbors(self, v: int) -> tuple:
        return self._adj[v]

    def degree(self, v: int) -> int:
        return len(self._adj[v])

    def adjacent(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self.edges

    def sorted_edges(self) -> list:
        return sorted(self.edges)

    def to_text(self) -> str:
        lines = [f"graph {self.vertex_count}"]
        lines += [f"{a} {b}" for a, b in self.sorted_edges()]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def to_networkx(self) -> nx.Graph:
        nxg = nx.Graph()
        nxg.add_nodes_from(range(self.vertex_count))
        nxg.add_edges_from(self.sorted_edges())
        return nxg


@dataclass(frozen=True, order=True)
class Point:
    vertex: int
    time: int


@dataclass(frozen=True)
class ConeParams:
    speed_c: int = 1
    past_depth: int = 2
    future_depth: int = 1

    def __post_init__(self):
        for name in ("speed_c", "past_depth", "future_depth"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> dict:
        return {"speed_c": self.speed_c, "past_depth": self.past_depth,
                "future_depth": self.future_depth}


@dataclass(frozen=True)
class ConeTemplate:
    anchor_vertex: int
    offsets: tuple
    direction: str

    def __len__(self):
        return len(self.offsets)

    def slice_sizes(self) -> dict:
        sizes = {}
        for _, dt in self.offsets:
            sizes[dt] = sizes.get(dt, 0) + 1
        return sizes


@dataclass(frozen=True)
class FringeTemplate:
    source_vertex: int
    dest_vertex: int
    move: tuple  # ("temporal",) or ("spatial", dest_vertex)
    offsets: tuple

    @property
    def is_temporal(self) -> bool:
        return self.move[0] == "temporal"

    def min_time_offset(self) -> int:
        return min(dt for _, dt in self.offsets)


def parse_graph(text) -> Graph:
    """Parse the ``graph <n>`` edge-list format."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    header = None
    edges = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if header is None:
            if len(parts) != 2 or parts[0] != "graph":
                raise GraphFormatError(f"line {lineno}: expected 'graph <vertex_count>'")
            try:
                header = int(parts[1])
            except ValueError:
                raise GraphFormatError(f"line {lineno}: bad vertex count {parts[1]!r}") from None
            if header < 0:
                raise GraphFormatError(f"line {lineno}: negative vertex count")
            continue
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected '<u> <v>'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-integer vertex id") from None
        if u == v:
            raise GraphFormatError(f"line {lineno}: self-loop at vertex {u}")
        if not (0 <= u < header and 0 <= v < header):
            raise GraphFormatError(f"line {lineno}: vertex out of range (graph has {header})")
        key = (min(u, v), max(u, v))
        if key in edges:
            raise GraphFormatError(f"line {lineno}: duplicate edge {u}-{v}")
        edges.add(key)
    if header is None:
        raise GraphFormatError("empty graph file")
    return Graph(header, frozenset(edges))


load_graph = parse_graph


def ring_graph(n: int) -> Graph:
    if n < 3:
        raise ValueError("a ring needs at least 3 vertices")
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def star_graph(leaves: int) -> Graph:
    return Graph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def random_connected_graph(n: int, seed: int, extra_edges: int = 0, max_degree=None) -> Graph:
    """Random recursive tree on ``n`` vertices plus ``extra_edges`` random chords.

    Vertex ``i`` attaches to a uniformly chosen earlier vertex whose degree is
    below ``max_degree`` (if given), so the result is always connected.
    """
    rng = np.random.default_rng(seed)
    deg = np.zeros(n, dtype=int)
    edges = set()
    for i in range(1, n):
        choices = [j for j in range(i) if max_degree is None or deg[j] < max_degree]
        j = int(rng.choice(choices))
        edges.add((j, i))
        deg[i] += 1
        deg[j] += 1
    tries = 0
    while extra_edges > 0 and tries < 100 * n * n:
        tries += 1
        a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
        key = (min(a, b), max(a, b))
        if key in edges:
            continue
        if max_degree is not None and (deg[a] >= max_degree or deg[b] >= max_degree):
            continue
        edges.add(key)
        deg[a] += 1
        deg[b] += 1
        extra_edges -= 1
    return Graph.from_edges(n, edges)


@lru_cache(maxsize=4096)
def bfs_distances(g: Graph, source: int, max_depth=None) -> dict:
    """Hop distances from ``source``; vertices beyond ``max_depth`` are omitted."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if max_depth is not None and d >= max_depth:
            continue
        for w in g.neighbors(u):
            if w not in dist:
                dist[w] = d + 1
                queue.append(w)
    return dist


def graph_distance(g: Graph, u: int, v: int):
    """Shortest-path length between ``u`` and ``v``; ``None`` if unreachable."""
    return bfs_distances(g, u).get(v)


@lru_cache(maxsize=4096)
def cone_template(g: Graph, v: int, p: ConeParams, direction: str = PAST) -> ConeTemplate:
    if not 0 <= v < g.vertex_count:
        raise ValueError(f"vertex {v} out of range")
    if direction == PAST:
        taus = range(0, p.past_depth)
        sign = -1
    elif direction == FUTURE:
        taus = range(1, p.future_depth + 1)
        sign = 1
    else:
        raise ValueError(f"direction must be 'past' or 'future', got {direction!r}")
    reach = p.speed_c * max(taus)
    dist = bfs_distances(g, v, reach)
    offsets = [(u, sign * tau) for tau in taus for u, d in dist.items() if d <= p.speed_c * tau]
    offsets.sort(key=lambda o: (o[1], o[0]))
    return ConeTemplate(v, tuple(offsets), direction)


@lru_cache(maxsize=4096)
def fringe_template(g: Graph, v: int, p: ConeParams, move) -> FringeTemplate:
    """Points of the destination's past cone not in the source's past cone.

    ``move`` is ``"temporal"`` (``<v,t> -> <v,t+1>``) or ``("spatial", u)``
    (``<v,t> -> <u,t>`` for a neighbour ``u``).  Offsets are relative to the
    destination point.
    """
    if move == "temporal" or move == ("temporal",):
        dest = v
        src = {(u, dt - 1) for u, dt in cone_template(g, v, p, PAST).offsets}
        mv = ("temporal",)
    else:
        kind, dest = move
        if kind != "spatial":
            raise ValueError(f"unknown move {move!r}")
        if not g.adjacent(v, dest):
            raise ValueError(f"spatial move {v}->{dest} is not along an edge")
        src = set(cone_template(g, v, p, PAST).offsets)
        mv = ("spatial", dest)
    dest_offsets = cone_template(g, dest, p, PAST).offsets
    offsets = tuple(o for o in dest_offsets if o not in src)
    return FringeTemplate(v, dest, mv, offsets)


def layered_graph(offsets, g: Graph) -> nx.Graph:
    """Points as nodes labelled by time offset.

    Points at equal offset are joined when their vertices are adjacent; each
    vertex's occurrences are chained in time order so any isomorphism keeps
    vertex identity across slices.
    """
    lg = nx.Graph()
    by_vertex = {}
    by_time = {}
    for u, dt in offsets:
        lg.add_node((u, dt), dt=dt)
        by_vertex.setdefault(u, []).append(dt)
        by_time.setdefault(dt, []).append(u)
    for dt, us in by_time.items():
        members = set(us)
        for u in us:
            for w in g.neighbors(u):
                if w in members and u < w:
                    lg.add_edge((u, dt), (w, dt))
    for u, dts in by_vertex.items():
        dts.sort()
        for a, b in zip(dts, dts[1:]):
            lg.add_edge((u, a), (u, b))
    return lg


def _shape_hash(offsets, g: Graph) -> str:
    lg = layered_graph(offsets, g)
    sizes = {}
    for _, dt in offsets:
        sizes[dt] = sizes.get(dt, 0) + 1
    wl = nx.weisfeiler_lehman_graph_hash(lg, node_attr="dt", iterations=3)
    layer = ",".join(f"{dt}:{n}" for dt, n in sorted(sizes.items()))
    return f"{layer}|{lg.number_of_edges()}|{wl}"


def cone_shape_signature(t: ConeTemplate, g: Graph) -> str:
    """Shape hash of a cone: slice sizes, edge count and a WL hash.

    Isomorphic cones always share a signature.  Pooling additionally
    certifies an explicit isomorphism before merging vertices, so a hash
    collision can never pool two different shapes.
    """
    return f"{t.direction}|{_shape_hash(t.offsets, g)}"
