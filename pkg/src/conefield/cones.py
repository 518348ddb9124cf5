"""Sliding cone templates over field data and counting (past, future) pairs.

Vertices are grouped into classes.  Without pooling every vertex is its own
class.  With pooling, vertices whose joint past+future cones are isomorphic
(time offsets kept, adjacency kept) share a class, and each member carries a
*gather* table: the vertex to read for every offset of the class
representative's template, so all members write configurations in the same
coordinates.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from networkx.algorithms.isomorphism import GraphMatcher

from .field import FieldSeries
from .graph import (FUTURE, PAST, ConeParams, ConeTemplate, Graph, Point, _shape_hash,
                    cone_template, layered_graph)

# Joint cones larger than this are never certified for pooling.
MAX_CERTIFY_POINTS = 400
MAX_ISOMORPHISMS = 2000


class NoDataError(LookupError):
    """The requested past configuration was never observed."""


# -- configuration codes ------------------------------------------------------

def fits_int64(alphabet: int, length: int) -> bool:
    return alphabet ** length < 2 ** 62


def encode_configs(symbols: np.ndarray, alphabet: int) -> np.ndarray:
    """Exact codes for the rows of ``symbols``.

    Radix integers (first symbol most significant, so numeric order is
    lexicographic order) when they fit in 62 bits, else row byte strings.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    n, length = symbols.shape
    if fits_int64(alphabet, length):
        codes = np.zeros(n, dtype=np.int64)
        for j in range(length):
            codes = codes * alphabet + symbols[:, j]
        return codes
    dtype = np.dtype(">u1") if alphabet <= 256 else np.dtype(">u4")
    raw = np.ascontiguousarray(symbols.astype(dtype))
    out = np.empty(n, dtype=object)
    for i in range(n):
        out[i] = raw[i].tobytes()
    return out


def encode_one(config, alphabet: int):
    return encode_configs(np.asarray([config], dtype=np.int64).reshape(1, -1), alphabet)[0]


def decode_config(code, alphabet: int, length: int) -> tuple:
    if isinstance(code, (bytes, bytearray)):
        width = len(code) // max(length, 1)
        dtype = ">u1" if width == 1 else ">u4"
        return tuple(int(x) for x in np.frombuffer(code, dtype=dtype))
    code = int(code)
    out = [0] * length
    for j in range(length - 1, -1, -1):
        code, out[j] = divmod(code, alphabet)
    return tuple(out)


def config_key(config) -> str:
    return ",".join(str(int(s)) for s in config)


def parse_config_key(key: str) -> tuple:
    return tuple(int(s) for s in key.split(",")) if key else ()


# -- vertex classes -----------------------------------------------------------

@dataclass
class VertexClass:
    index: int
    signature: str
    representative: int
    members: tuple
    past_offsets: tuple   # representative's canonical past offsets
    future_offsets: tuple
    past_gather: dict = field(repr=False)    # member -> vertex per past offset
    future_gather: dict = field(repr=False)

    @property
    def past_dts(self) -> np.ndarray:
        return np.array([dt for _, dt in self.past_offsets], dtype=np.int64)

    @property
    def future_dts(self) -> np.ndarray:
        return np.array([dt for _, dt in self.future_offsets], dtype=np.int64)

    def anchor_future_index(self):
        """Position of ``(anchor, +1)`` in the future template, or ``None``."""
        try:
            return self.future_offsets.index((self.representative, 1))
        except ValueError:
            return None


def _best_isomorphism(mem_lg, rep_lg, mem: int, rep: int, n: int):
    """Deterministic choice among isomorphisms ``member cone -> representative cone``.

    Prefers the map that best preserves cyclic vertex-id order around the
    anchor (translations on rings and tori), among the first
    ``MAX_ISOMORPHISMS`` candidates.
    """
    gm = GraphMatcher(mem_lg, rep_lg, node_match=lambda a, b: a["dt"] == b["dt"])
    order = sorted(mem_lg.nodes, key=lambda nd: (nd[1], (nd[0] - mem) % n))
    best = None
    for i, iso in enumerate(gm.isomorphisms_iter()):
        key = tuple(((iso[nd][0] - rep) % n, iso[nd][1]) for nd in order)
        if best is None or key < best[0]:
            best = (key, iso)
        if i + 1 >= MAX_ISOMORPHISMS:
            break
    return None if best is None else best[1]


def _joint_offsets(g: Graph, v: int, p: ConeParams) -> tuple:
    return cone_template(g, v, p, PAST).offsets + cone_template(g, v, p, FUTURE).offsets


@lru_cache(maxsize=64)
def build_vertex_classes(g: Graph, p: ConeParams, pooling: bool) -> tuple:
    classes = []
    if not pooling:
        for v in range(g.vertex_count):
            past = cone_template(g, v, p, PAST).offsets
            fut = cone_template(g, v, p, FUTURE).offsets
            sig = f"vertex:{v}|{_shape_hash(past + fut, g)}"
            classes.append(VertexClass(
                v, sig, v, (v,), past, fut,
                {v: np.array([u for u, _ in past], dtype=np.int64)},
                {v: np.array([u for u, _ in fut], dtype=np.int64)}))
        return tuple(classes)

    n = g.vertex_count
    groups = []  # list of (hash, rep, rep_lg, members, maps)
    for v in range(n):
        joint = _joint_offsets(g, v, p)
        h = _shape_hash(joint, g)
        lg = layered_graph(joint, g)
        placed = False
        if len(joint) <= MAX_CERTIFY_POINTS:
            for grp in groups:
                if grp["hash"] != h or grp["rep_lg"] is None:
                    continue
                iso = _best_isomorphism(lg, grp["rep_lg"], v, grp["rep"], n)
                if iso is not None:
                    grp["members"].append(v)
                    grp["maps"][v] = {rep_pt: mem_pt for mem_pt, rep_pt in iso.items()}
                    placed = True
                    break
        if not placed:
            certify = len(joint) <= MAX_CERTIFY_POINTS
            groups.append({"hash": h, "rep": v, "rep_lg": lg if certify else None,
                           "members": [v], "maps": {v: {pt: pt for pt in joint}}})
    for idx, grp in enumerate(groups):
        rep = grp["rep"]
        past = cone_template(g, rep, p, PAST).offsets
        fut = cone_template(g, rep, p, FUTURE).offsets
        pg, fg = {}, {}
        for m in grp["members"]:
            mp = grp["maps"][m]
            pg[m] = np.array([mp[o][0] for o in past], dtype=np.int64)
            fg[m] = np.array([mp[o][0] for o in fut], dtype=np.int64)
        suffix = "" if grp["rep_lg"] is not None else f"|uncertified:{rep}"
        classes.append(VertexClass(idx, f"{grp['hash']}{suffix}", rep, tuple(grp["members"]),
                                   past, fut, pg, fg))
    return tuple(classes)


def class_of_vertex(classes) -> np.ndarray:
    n = sum(len(c.members) for c in classes)
    out = np.empty(n, dtype=np.int64)
    for c in classes:
        for m in c.members:
            out[m] = c.index
    return out


# -- extraction ---------------------------------------------------------------

def extract_cone_config(f: FieldSeries, t: ConeTemplate, at: Point):
    """Symbols at the template's offsets from ``at``; ``None`` if any leaves ``[0, T)``."""
    times = [at.time + dt for _, dt in t.offsets]
    if not times or min(times) < 0 or max(times) >= f.T:
        return None
    return tuple(int(f.values[tt, u]) for (u, _), tt in zip(t.offsets, times))


def interior_times(T: int, p: ConeParams) -> np.ndarray:
    return np.arange(p.past_depth - 1, T - p.future_depth, dtype=np.int64)


def gather_symbols(values: np.ndarray, times: np.ndarray, vertices: np.ndarray,
                   dts: np.ndarray) -> np.ndarray:
    """``out[i, j] = values[times[i] + dts[j], vertices[j]]``."""
    return values[times[:, None] + dts[None, :], vertices[None, :]]


def past_codes_for(values, alphabet, vc: VertexClass, member: int, times) -> np.ndarray:
    return encode_configs(gather_symbols(values, times, vc.past_gather[member], vc.past_dts), alphabet)


def future_codes_for(values, alphabet, vc: VertexClass, member: int, times) -> np.ndarray:
    return encode_configs(gather_symbols(values, times, vc.future_gather[member], vc.future_dts), alphabet)


# -- database -----------------------------------------------------------------

@dataclass
class ClassCounts:
    """Sparse (past, future) count table of one vertex class."""
    past_codes: np.ndarray
    future_codes: np.ndarray
    pair_past: np.ndarray   # index into past_codes
    pair_future: np.ndarray  # index into future_codes
    pair_count: np.ndarray

    @classmethod
    def from_samples(cls, past: np.ndarray, future: np.ndarray) -> "ClassCounts":
        if len(past) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return cls(past[:0], future[:0], empty, empty, empty)
        pu, pi = np.unique(past, return_inverse=True)
        fu, fi = np.unique(future, return_inverse=True)
        combo = pi.astype(np.int64) * len(fu) + fi.astype(np.int64)
        cu, cc = np.unique(combo, return_counts=True)
        return cls(pu, fu, cu // len(fu), cu % len(fu), cc.astype(np.int64))

    @classmethod
    def merge(cls, parts) -> "ClassCounts":
        parts = [q for q in parts if q.pair_count.size]
        if not parts:
            return cls.from_samples(np.zeros(0, np.int64), np.zeros(0, np.int64))
        past = np.concatenate([q.past_codes[q.pair_past] for q in parts])
        fut = np.concatenate([q.future_codes[q.pair_future] for q in parts])
        cnt = np.concatenate([q.pair_count for q in parts])
        pu, pi = np.unique(past, return_inverse=True)
        fu, fi = np.unique(fut, return_inverse=True)
        combo = pi.astype(np.int64) * len(fu) + fi.astype(np.int64)
        cu, inv = np.unique(combo, return_inverse=True)
        summed = np.bincount(inv.ravel(), weights=cnt, minlength=len(cu)).astype(np.int64)
        return cls(pu, fu, cu // len(fu), cu % len(fu), summed)

    @property
    def total(self) -> int:
        return int(self.pair_count.sum())

    def past_totals(self) -> np.ndarray:
        return np.bincount(self.pair_past, weights=self.pair_count,
                           minlength=len(self.past_codes)).astype(np.int64)

    def dense(self) -> np.ndarray:
        """``(n_past, n_future)`` count matrix."""
        m = np.zeros((len(self.past_codes), len(self.future_codes)), dtype=np.int64)
        np.add.at(m, (self.pair_past, self.pair_future), self.pair_count)
        return m

    def past_index(self, code):
        i = int(np.searchsorted(self.past_codes, code))
        if i < len(self.past_codes) and self.past_codes[i] == code:
            return i
        return None


@dataclass
class ConeDatabase:
    graph: Graph
    params: ConeParams
    pooling: bool
    alphabet_size: int
    classes: tuple
    counts: list
    sources: list = field(default_factory=list)  # (T, V) per accumulated series

    @property
    def total(self) -> int:
        return sum(c.total for c in self.counts)

    def class_for_vertex(self, v: int) -> VertexClass:
        for c in self.classes:
            if v in c.members:
                return c
        raise KeyError(v)

    def to_json(self) -> dict:
        A = self.alphabet_size
        classes = []
        for vc, cc in zip(self.classes, self.counts):
            lp, lf = len(vc.past_offsets), len(vc.future_offsets)
            totals = cc.past_totals()
            order = np.lexsort((cc.pair_future, cc.pair_past))
            pasts = []
            for k in order:
                pi, fi = int(cc.pair_past[k]), int(cc.pair_future[k])
                if not pasts or pasts[-1]["_i"] != pi:
                    pasts.append({"_i": pi, "config": list(decode_config(cc.past_codes[pi], A, lp)),
                                  "total": int(totals[pi]), "futures": []})
                pasts[-1]["futures"].append({"config": list(decode_config(cc.future_codes[fi], A, lf)),
                                             "count": int(cc.pair_count[k])})
            for entry in pasts:
                del entry["_i"]
            classes.append({
                "signature": vc.signature,
                "members": list(vc.members),
                "past_offsets": [list(o) for o in vc.past_offsets],
                "future_offsets": [list(o) for o in vc.future_offsets],
                "pasts": pasts,
            })
        return {
            "params": self.params.to_dict(),
            "pooling": self.pooling,
            "alphabet_size": A,
            "sources": [list(s) for s in self.sources],
            "total": self.total,
            "classes": classes,
        }


def stack_by_length(fields) -> list:
    """Group series of equal length into ``(runs, T, V)`` arrays."""
    groups = {}
    for f in fields:
        groups.setdefault(f.T, []).append(f.values)
    return [np.stack(groups[T]) for T in sorted(groups)]


def _count_class(stacks, vc: VertexClass, p: ConeParams, alphabet: int) -> ClassCounts:
    past_parts, fut_parts = [], []
    for block in stacks:
        times = interior_times(block.shape[1], p)
        for m in vc.members:
            ps = block[:, times[:, None] + vc.past_dts[None, :], vc.past_gather[m][None, :]]
            fs = block[:, times[:, None] + vc.future_dts[None, :], vc.future_gather[m][None, :]]
            past_parts.append(encode_configs(ps.reshape(-1, ps.shape[-1]), alphabet))
            fut_parts.append(encode_configs(fs.reshape(-1, fs.shape[-1]), alphabet))
    return ClassCounts.from_samples(np.concatenate(past_parts), np.concatenate(fut_parts))


def build_cone_database(fields, g: Graph, p: ConeParams, pooling: bool = False,
                        threads: int = 1) -> ConeDatabase:
    """Count every interior point's (past, future) configuration pair.

    ``fields`` may be one series or several independent series of the same
    process; their counts are simply added.
    """
    if isinstance(fields, FieldSeries):
        fields = [fields]
    fields = list(fields)
    if not fields:
        raise ValueError("no field data")
    alphabet = fields[0].alphabet_size
    for f in fields:
        if f.V != g.vertex_count:
            raise ValueError(f"field has {f.V} vertices, graph has {g.vertex_count}")
        if f.alphabet_size != alphabet:
            raise ValueError("all series must share one alphabet")
        if f.T < p.past_depth + p.future_depth:
            raise ValueError(f"field has {f.T} steps; cones need at least "
                             f"{p.past_depth + p.future_depth}")
    classes = build_vertex_classes(g, p, bool(pooling))
    stacks = stack_by_length(fields)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(lambda vc: _count_class(stacks, vc, p, alphabet), classes))
    else:
        counts = [_count_class(stacks, vc, p, alphabet) for vc in classes]
    return ConeDatabase(g, p, bool(pooling), alphabet, classes, counts,
                        [(f.T, f.V) for f in fields])


def conditional_distribution(db: ConeDatabase, class_index: int, past) -> dict:
    """Empirical ``P(future | past)`` as ``{future config: probability}``."""
    vc = db.classes[class_index]
    cc = db.counts[class_index]
    code = encode_one(past, db.alphabet_size)
    i = cc.past_index(code)
    if i is None:
        raise NoDataError(f"past {tuple(past)} never observed in class {class_index}")
    sel = cc.pair_past == i
    counts = cc.pair_count[sel]
    total = counts.sum()
    lf = len(vc.future_offsets)
    return {decode_config(cc.future_codes[j], db.alphabet_size, lf): c / total
            for j, c in zip(cc.pair_future[sel], counts)}
