"""Fringe-driven state transitions and the set-valued recursive filter.

Temporal keys are ``(vertex class, state, fringe code)`` with the fringe read
in the class representative's coordinates; spatial keys are
``((u, v), state at u, fringe code)`` for the directed edge ``u -> v``.
Candidate sets are bitmasks over a class's state ids.
"""
from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .cones import build_vertex_classes, encode_configs
from .field import FieldSeries
from .graph import ConeParams, Graph, Point, fringe_template
from .reconstruct import UNKNOWN, StateField, StateSet, label_field

TEMPORAL = "temporal"
SPATIAL = "spatial"


@dataclass(frozen=True)
class FringeReader:
    """Reads fringe codes of one kind of move out of a field."""
    vertices: np.ndarray
    dts: np.ndarray

    def codes(self, f: FieldSeries, times: np.ndarray, observed=None) -> np.ndarray:
        """Fringe code at each destination time; ``-1`` where the fringe is out of range or hidden."""
        out = np.full(len(times), -1, dtype=np.int64)
        ok = (times + self.dts.min() >= 0) & (times + self.dts.max() < f.T) if len(self.dts) else \
            np.ones(len(times), bool)
        if not ok.any():
            return out
        tt = times[ok][:, None] + self.dts[None, :]
        sym = f.values[tt, self.vertices[None, :]]
        good = np.ones(len(tt), bool)
        if observed is not None:
            good = observed[tt, self.vertices[None, :]].all(axis=1)
        codes = encode_configs(sym, f.alphabet_size) if len(self.dts) else np.zeros(len(tt), np.int64)
        idx = np.flatnonzero(ok)
        out[idx[good]] = codes[good]
        return out


@dataclass
class TransitionTable:
    params: ConeParams
    pooling: bool
    temporal: dict = field(default_factory=dict)   # (class, state, code) -> Counter
    spatial: dict = field(default_factory=dict)    # ((u, v), state, code) -> Counter

    def conflicts(self) -> list:
        """Keys observed with more than one successor."""
        out = [(TEMPORAL, k, dict(c)) for k, c in sorted(self.temporal.items()) if len(c) > 1]
        out += [(SPATIAL, k, dict(c)) for k, c in sorted(self.spatial.items()) if len(c) > 1]
        return out

    def n_keys(self) -> int:
        return len(self.temporal) + len(self.spatial)

    def conflict_fraction(self) -> float:
        n = self.n_keys()
        return len(self.conflicts()) / n if n else 0.0

    def to_json(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "pooling": self.pooling,
            "temporal": [[list(k), sorted(c.items())] for k, c in sorted(self.temporal.items())],
            "spatial": [[[list(k[0]), k[1], k[2]], sorted(c.items())]
                        for k, c in sorted(self.spatial.items())],
            "conflicts": len(self.conflicts()),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"


def _vertex_classes(g: Graph, p: ConeParams, pooling: bool):
    return build_vertex_classes(g, p, bool(pooling))


def temporal_reader(vc, member: int, g: Graph, p: ConeParams) -> FringeReader:
    """Temporal fringe of ``member`` laid out in the representative's order."""
    rep_fringe = set(fringe_template(g, vc.representative, p, TEMPORAL).offsets)
    idx = [i for i, o in enumerate(vc.past_offsets) if o in rep_fringe]
    return FringeReader(vc.past_gather[member][idx], vc.past_dts[idx])


def spatial_reader(g: Graph, u: int, v: int, p: ConeParams) -> FringeReader:
    ft = fringe_template(g, u, p, (SPATIAL, v))
    return FringeReader(np.array([w for w, _ in ft.offsets], dtype=np.int64),
                        np.array([dt for _, dt in ft.offsets], dtype=np.int64))


def _directed_edges(g: Graph):
    return [(a, b) for a, b in g.sorted_edges()] + [(b, a) for a, b in g.sorted_edges()]


def _as_pairs(sf, f) -> list:
    if isinstance(f, FieldSeries):
        return [(sf, f)]
    return list(zip(sf, f))


def learn_transitions(sf, f, g: Graph, p: ConeParams, pooling: bool = False) -> TransitionTable:
    """Record every observed (state, fringe) -> successor state along temporal and spatial moves.

    ``sf`` and ``f`` may be single series or matching lists.  Conflicting
    successors are kept, so they show up in :meth:`TransitionTable.conflicts`.
    """
    tt = TransitionTable(p, bool(pooling))
    classes = _vertex_classes(g, p, pooling)
    readers = {m: temporal_reader(vc, m, g, p) for vc in classes for m in vc.members}
    cls_of = {m: vc.index for vc in classes for m in vc.members}
    edges = _directed_edges(g)
    sreaders = {e: spatial_reader(g, *e, p) for e in edges}
    trows, srows = [], []
    for labels, series in _as_pairs(sf, f):
        lab = labels.labels
        if lab.shape != series.values.shape:
            raise ValueError("state field and field series differ in shape")
        times = np.arange(1, series.T, dtype=np.int64)
        for m, rd in readers.items():
            codes = rd.codes(series, times)
            src, dst = lab[times - 1, m], lab[times, m]
            ok = (src != UNKNOWN) & (dst != UNKNOWN) & (codes >= 0)
            trows.append(np.stack([np.full(ok.sum(), cls_of[m]), src[ok], codes[ok], dst[ok]], axis=1))
        times = np.arange(series.T, dtype=np.int64)
        for k, ((u, v), rd) in enumerate(sreaders.items()):
            codes = rd.codes(series, times)
            src, dst = lab[:, u], lab[:, v]
            ok = (src != UNKNOWN) & (dst != UNKNOWN) & (codes >= 0)
            srows.append(np.stack([np.full(ok.sum(), k), src[ok], codes[ok], dst[ok]], axis=1))
    for rows, target, name in ((trows, tt.temporal, None), (srows, tt.spatial, edges)):
        if not rows:
            continue
        uniq, counts = np.unique(np.vstack(rows), axis=0, return_counts=True)
        for (k, a, c, b), n in zip(uniq.tolist(), counts.tolist()):
            head = k if name is None else name[k]
            target.setdefault((head, a, c), Counter())[b] += n
    return tt


# -- recursive filter ---------------------------------------------------------------

def _mask(ids) -> int:
    out = 0
    for i in ids:
        out |= 1 << int(i)
    return out


def _bits(mask: int):
    i = 0
    while mask:
        if mask & 1:
            yield i
        mask >>= 1
        i += 1


@dataclass
class StateEstimate:
    candidates: np.ndarray      # (T, V) object array of Python int bitmasks
    contradiction: np.ndarray   # (T, V) bool
    constrained: int = 0        # constraint applications with a known transition
    passthrough: int = 0        # applications skipped for an unseen or hidden fringe

    @property
    def T(self):
        return self.candidates.shape[0]

    @property
    def V(self):
        return self.candidates.shape[1]

    def sizes(self) -> np.ndarray:
        return np.vectorize(lambda m: bin(m).count("1"), otypes=[np.int64])(self.candidates)

    def singletons(self) -> np.ndarray:
        """State id where resolved to one candidate, else ``UNKNOWN``."""
        out = np.full(self.candidates.shape, UNKNOWN, dtype=np.int64)
        sizes = self.sizes()
        for (t, v) in zip(*np.nonzero((sizes == 1) & ~self.contradiction)):
            out[t, v] = int(self.candidates[t, v]).bit_length() - 1
        return out

    def summary(self, rows=None) -> dict:
        rows = slice(None) if rows is None else rows
        sizes = self.sizes()[rows]
        bad = self.contradiction[rows]
        total = self.constrained + self.passthrough
        return {
            "singleton_fraction": float(((sizes == 1) & ~bad).mean()) if sizes.size else 0.0,
            "contradiction_count": int(bad.sum()),
            "coverage": self.constrained / total if total else 0.0,
        }

    def dumps(self, comments=()) -> str:
        out = [f"# {c}" for c in comments]
        out.append(f"estimate {self.T} {self.V}")
        for t in range(self.T):
            cells = []
            for v in range(self.V):
                if self.contradiction[t, v]:
                    cells.append("!")
                else:
                    ids = list(_bits(int(self.candidates[t, v])))
                    cells.append(f"{len(ids)}:" + ",".join(map(str, ids)))
            out.append(" ".join(cells))
        return "\n".join(out) + "\n"


class _Lookup:
    """Successor masks per key, or ``None`` when the key was never seen."""

    def __init__(self, tt: TransitionTable):
        self.temporal = {k: _mask(c) for k, c in tt.temporal.items()}
        self.spatial = {k: _mask(c) for k, c in tt.spatial.items()}


def recursive_filter(f: FieldSeries, s: StateSet, tt: TransitionTable, g: Graph | None = None,
                     p: ConeParams | None = None, labels: StateField | None = None,
                     observed=None, order_seed=None) -> StateEstimate:
    """Narrow candidate state sets to a fixed point of the transition constraints.

    Points start from ``labels`` (default: direct labelling of ``f``) or the
    full state set of their class.  Each temporal or spatial move applies
    forward (successor must be reachable) and backward (source must have a
    reachable successor) intersections.  Fringes that are hidden by
    ``observed``, fall outside the field, or were never seen in training
    impose nothing.  A set that would become empty is frozen and marked as a
    contradiction.  ``order_seed`` shuffles the initial worklist; the fixed
    point does not depend on it.
    """
    g = s.graph if g is None else g
    p = s.params if p is None else p
    if g != s.graph or p != s.params:
        raise ValueError("graph or cone parameters do not match the state set")
    if tt.params != p or tt.pooling != s.pooling:
        raise ValueError("transition table was learned with different settings")
    if labels is None:
        labels = label_field(f, s)
    if labels.labels.shape != f.values.shape:
        raise ValueError("labels and field differ in shape")
    observed = None if observed is None else np.asarray(observed, dtype=bool)
    T, V = f.T, f.V
    classes = [sc.vertex_class for sc in s.classes]
    cls_of = [0] * V
    full = [0] * V
    for sc in s.classes:
        for m in sc.vertex_class.members:
            cls_of[m] = sc.vertex_class.index
            full[m] = (1 << len(sc.states)) - 1

    lab = labels.labels.tolist()
    cand = [[full[v] if lab[t][v] == UNKNOWN else (1 << lab[t][v]) & full[v] or 0
             for v in range(V)] for t in range(T)]
    bad = [[False] * V for _ in range(T)]
    for t in range(T):
        for v in range(V):
            if lab[t][v] != UNKNOWN and cand[t][v] == 0:
                bad[t][v] = True     # label outside the state set

    times = np.arange(T, dtype=np.int64)
    tcode = [None] * V
    for vc in classes:
        for m in vc.members:
            tcode[m] = temporal_reader(vc, m, g, p).codes(f, times, observed).tolist()
    nbrs = [g.neighbors(v) for v in range(V)]
    scode = {}
    for (u, v) in _directed_edges(g):
        scode[(u, v)] = spatial_reader(g, u, v, p).codes(f, times, observed).tolist()
    look = _Lookup(tt)
    est = StateEstimate(None, None)

    def forward(src_mask, key_of, table, dst_full):
        """Union of successor masks; the full set if any source state's key is unseen."""
        out = 0
        for a in _bits(src_mask):
            m = table.get(key_of(a))
            if m is None:
                return dst_full, False
            out |= m
        return out, True

    def backward(src_mask, key_of, table, dst_mask):
        keep = 0
        for a in _bits(src_mask):
            m = table.get(key_of(a))
            if m is None or m & dst_mask:
                keep |= 1 << a
        return keep

    def constraints(t, v):
        """Moves touching point (t, v): (src, dst, key function, table), temporal first."""
        out = []
        if t + 1 < T and tcode[v][t + 1] >= 0:
            c, k = tcode[v][t + 1], cls_of[v]
            out.append(((t, v), (t + 1, v), lambda a, c=c, k=k: (k, a, c), look.temporal))
        if t >= 1 and tcode[v][t] >= 0:
            c, k = tcode[v][t], cls_of[v]
            out.append(((t - 1, v), (t, v), lambda a, c=c, k=k: (k, a, c), look.temporal))
        for u in nbrs[v]:
            for a_, b_ in ((v, u), (u, v)):
                c = scode[(a_, b_)][t]
                if c >= 0:
                    out.append(((t, a_), (t, b_), lambda a, c=c, e=(a_, b_): (e, a, c), look.spatial))
        return out

    order = [(t, v) for t in range(T) for v in range(V)]
    if order_seed is not None:
        order = [order[i] for i in np.random.default_rng(order_seed).permutation(len(order))]
    work = deque(order)
    queued = set(order)
    while work:
        t, v = work.popleft()
        queued.discard((t, v))
        if bad[t][v]:
            continue
        for (ts, vs), (td, vd), key_of, table in constraints(t, v):
            if bad[ts][vs] or bad[td][vd]:
                continue
            fwd, known = forward(cand[ts][vs], key_of, table, full[vd])
            if known:
                est.constrained += 1
            else:
                est.passthrough += 1
            new_dst = cand[td][vd] & fwd
            new_src = backward(cand[ts][vs], key_of, table, cand[td][vd])
            for (tp, vp), new in (((td, vd), new_dst), ((ts, vs), new_src)):
                if new == cand[tp][vp]:
                    continue
                if new == 0:
                    bad[tp][vp] = True
                    continue
                cand[tp][vp] = new
                for (ta, va), (tb, vb), _, _ in constraints(tp, vp):
                    for q in ((ta, va), (tb, vb)):
                        if q != (tp, vp) and q not in queued:
                            queued.add(q)
                            work.append(q)
                if (tp, vp) not in queued:
                    queued.add((tp, vp))
                    work.append((tp, vp))
    grid = np.empty((T, V), dtype=object)
    for t in range(T):
        for v in range(V):
            grid[t, v] = cand[t][v]
    est.candidates = grid
    est.contradiction = np.array(bad, dtype=bool).reshape(T, V)
    return est


# -- path independence ------------------------------------------------------------

def _point(q) -> Point:
    return q if isinstance(q, Point) else Point(*q)


def check_path(path) -> list:
    """Validate a path of points; each step is temporal (+1) or spatial (same time)."""
    pts = [_point(q) for q in path]
    if not pts:
        raise ValueError("empty path")
    for a, b in zip(pts, pts[1:]):
        if b.time < a.time:
            raise ValueError(f"path goes backwards in time at {a} -> {b}")
    return pts


def apply_path(tt: TransitionTable, g: Graph, p: ConeParams, f: FieldSeries, start_state: int,
               path, classes=None):
    """Run the start state along ``path`` through deterministic keys.

    Returns the end state, or ``None`` when a key is unseen or not deterministic.
    """
    pts = check_path(path)
    classes = classes or _vertex_classes(g, p, tt.pooling)
    vc_of = {m: vc for vc in classes for m in vc.members}
    state = start_state
    for a, b in zip(pts, pts[1:]):
        times = np.array([b.time], dtype=np.int64)
        if b.vertex == a.vertex and b.time == a.time + 1:
            vc = vc_of[b.vertex]
            code = int(temporal_reader(vc, b.vertex, g, p).codes(f, times)[0])
            key, table = (vc.index, state, code), tt.temporal
        elif b.time == a.time and g.adjacent(a.vertex, b.vertex):
            code = int(spatial_reader(g, a.vertex, b.vertex, p).codes(f, times)[0])
            key, table = ((a.vertex, b.vertex), state, code), tt.spatial
        else:
            raise ValueError(f"{a} -> {b} is neither a temporal nor a spatial step")
        if code < 0:
            return None
        succ = table.get(key)
        if succ is None or len(succ) != 1:
            return None
        state = next(iter(succ))
    return state


def path_independence_check(tt: TransitionTable, g: Graph, samples, sf: StateField,
                            f: FieldSeries, p: ConeParams | None = None) -> dict:
    """Count samples whose two paths reach different end states.

    ``samples`` holds ``(start, end, path_a, path_b)`` with paths given as
    point sequences from ``start`` to ``end``.
    """
    p = tt.params if p is None else p
    classes = _vertex_classes(g, p, tt.pooling)
    violations = undetermined = checked = 0
    for start, end, pa, pb in samples:
        start, end = _point(start), _point(end)
        for path in (pa, pb):
            pts = check_path(path)
            if pts[0] != start or pts[-1] != end:
                raise ValueError("path does not connect the sample's endpoints")
        s0 = int(sf.labels[start.time, start.vertex])
        if s0 == UNKNOWN:
            undetermined += 1
            continue
        ea = apply_path(tt, g, p, f, s0, pa, classes)
        eb = apply_path(tt, g, p, f, s0, pb, classes)
        if ea is None or eb is None:
            undetermined += 1
            continue
        checked += 1
        violations += int(ea != eb)
    return {"violations": violations, "undetermined": undetermined, "checked": checked}


def _shortest_route(g: Graph, a: int, b: int, rng) -> list:
    """A uniformly tie-broken shortest vertex route from ``a`` to ``b``."""
    from .graph import bfs_distances
    dist = bfs_distances(g, b)
    if a not in dist:
        raise ValueError("endpoints are disconnected")
    route = [a]
    while route[-1] != b:
        here = route[-1]
        steps = [w for w in g.neighbors(here) if dist[w] == dist[here] - 1]
        route.append(int(steps[rng.integers(len(steps))]))
    return route


def random_path(g: Graph, start: Point, end: Point, rng) -> list:
    """Random interleaving of the time steps with a shortest spatial route."""
    route = _shortest_route(g, start.vertex, end.vertex, rng)
    moves = ["t"] * (end.time - start.time) + ["s"] * (len(route) - 1)
    moves = [moves[i] for i in rng.permutation(len(moves))]
    pts = [start]
    k = 0
    for mv in moves:
        last = pts[-1]
        if mv == "t":
            pts.append(Point(last.vertex, last.time + 1))
        else:
            k += 1
            pts.append(Point(route[k], last.time))
    return pts


def random_dual_paths(g: Graph, p: ConeParams, T: int, n: int, seed: int, max_dt: int = 3,
                      max_hops: int = 3) -> list:
    """``n`` samples of two random paths between the same endpoints."""
    rng = np.random.default_rng(seed)
    from .graph import bfs_distances
    out = []
    lo = p.past_depth - 1
    if T - lo <= max_dt:
        raise ValueError("field too short for the requested time span")
    while len(out) < n:
        v = int(rng.integers(g.vertex_count))
        t = int(rng.integers(lo, T - max_dt))
        dt = int(rng.integers(1, max_dt + 1))
        reach = [u for u, d in bfs_distances(g, v, max_hops).items() if 0 < d]
        if not reach:
            continue
        w = int(reach[rng.integers(len(reach))])
        start, end = Point(v, t), Point(w, t + dt)
        out.append((start, end, random_path(g, start, end, rng), random_path(g, start, end, rng)))
    return out
