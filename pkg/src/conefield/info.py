"""Plug-in information estimators and the complexity / Markov diagnostics.

All quantities are in bits and use maximum-likelihood (plug-in)
probabilities with ``0 log 0 = 0``.  No bias correction is applied; the
reports carry a Miller-Madow style bias bound alongside the estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cones import ConeDatabase, past_codes_for
from .graph import Graph, bfs_distances
from .reconstruct import UNKNOWN, StateField, StateSet

LN2 = np.log(2.0)
DEFAULT_THRESHOLD = 0.05
MIN_CELL_SAMPLES = 25

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"
INCONCLUSIVE = "inconclusive"


def entropy(counts) -> float:
    c = np.asarray(counts, dtype=float).ravel()
    n = c.sum()
    if n <= 0:
        raise ValueError("empty count table")
    q = c[c > 0] / n
    return float(-(q * np.log2(q)).sum())


def mutual_information(joint_counts) -> float:
    """``I[X;Y]`` from a 2-d contingency table."""
    t = np.asarray(joint_counts, dtype=float)
    if t.ndim != 2:
        raise ValueError("joint table must be two-dimensional")
    n = t.sum()
    if n <= 0:
        raise ValueError("empty contingency table")
    px = t.sum(axis=1, keepdims=True) / n
    py = t.sum(axis=0, keepdims=True) / n
    pxy = t / n
    mask = pxy > 0
    mi = (pxy[mask] * np.log2(pxy[mask] / (px @ py)[mask])).sum()
    return max(float(mi), 0.0)


def conditional_mutual_information(joint_counts) -> float:
    """``I[X;Y|Z]`` from a 3-d table indexed ``[x, y, z]``."""
    t = np.asarray(joint_counts, dtype=float)
    if t.ndim != 3:
        raise ValueError("joint table must be indexed by (x, y, z)")
    n = t.sum()
    if n <= 0:
        raise ValueError("empty contingency table")
    total = 0.0
    for k in range(t.shape[2]):
        slab = t[:, :, k]
        nz = slab.sum()
        if nz > 0:
            total += nz / n * mutual_information(slab)
    return max(total, 0.0)


def _codes(column) -> np.ndarray:
    a = np.asarray(column)
    if a.ndim == 1:
        return np.unique(a, return_inverse=True)[1].ravel()
    return np.unique(a, axis=0, return_inverse=True)[1].ravel()


def contingency(*columns) -> np.ndarray:
    """Count table of jointly observed sample columns (rows of 2-d columns are tuples)."""
    codes = [_codes(c) for c in columns]
    shape = tuple(int(c.max()) + 1 if c.size else 0 for c in codes)
    table = np.zeros(shape, dtype=np.int64)
    np.add.at(table, tuple(codes), 1)
    return table


def mi_from_samples(x, y) -> float:
    return mutual_information(contingency(x, y))


def cmi_from_samples(x, y, z) -> float:
    return conditional_mutual_information(contingency(x, y, z))


def mi_bias_bound(table) -> float:
    """Miller-Madow style bias of plug-in MI: ``(|X|-1)(|Y|-1) / (2 N ln 2)``."""
    t = np.asarray(table)
    n = t.sum()
    kx = int((t.sum(axis=1) > 0).sum())
    ky = int((t.sum(axis=0) > 0).sum())
    return max(kx - 1, 0) * max(ky - 1, 0) / (2 * n * LN2) if n else 0.0


def cmi_bias_bound(table) -> float:
    t = np.asarray(table)
    n = t.sum()
    if not n:
        return 0.0
    return sum(mi_bias_bound(t[:, :, k]) * t[:, :, k].sum() / n
               for k in range(t.shape[2]) if t[:, :, k].sum())


@dataclass
class CMIReport:
    cmi_bits: float
    verdict: str
    n_samples: int
    n_cells: int
    bias_bound_bits: float
    threshold: float

    def to_dict(self) -> dict:
        return {"cmi_bits": self.cmi_bits, "verdict": self.verdict, "n_samples": self.n_samples,
                "n_cells": self.n_cells, "bias_bound_bits": self.bias_bound_bits,
                "threshold": self.threshold}


def cmi_test(x, y, z, threshold: float = DEFAULT_THRESHOLD,
             min_cell: int = MIN_CELL_SAMPLES) -> CMIReport:
    """Conditional-independence check by thresholding plug-in ``I[X;Y|Z]``.

    Inconclusive when there are fewer than ``min_cell`` samples per observed
    conditioning cell on average.
    """
    n = len(x)
    if n == 0:
        return CMIReport(float("nan"), INCONCLUSIVE, 0, 0, 0.0, threshold)
    table = contingency(x, y, z)
    cells = int((table.sum(axis=(0, 1)) > 0).sum())
    cmi = conditional_mutual_information(table)
    if n < min_cell * cells:
        verdict = INCONCLUSIVE
    else:
        verdict = CONSISTENT if cmi <= threshold else INCONSISTENT
    return CMIReport(float(cmi), verdict, int(n), cells, float(cmi_bias_bound(table)), threshold)


# -- complexity -----------------------------------------------------------------

@dataclass
class ClassComplexity:
    class_index: int
    members: tuple
    c_bits: float
    state_entropy_bits: float
    predictive_info_lower_bits: float
    predictive_info_bias_bits: float
    n_samples: int


@dataclass
class ComplexityReport:
    classes: list

    def to_dict(self) -> dict:
        return {"classes": [vars(c) | {"members": list(c.members)} for c in self.classes]}

    def to_csv(self) -> str:
        lines = ["vertex_class,C_bits,n"]
        lines += [f"{c.class_index},{c.c_bits:.6f},{c.n_samples}" for c in self.classes]
        return "\n".join(lines) + "\n"


def local_complexity(sf: StateField, db: ConeDatabase, s: StateSet) -> ComplexityReport:
    """``C = I[S; past] = H[S]`` per class, plus plug-in ``I[future; past]``.

    Since the state is a function of the past cone, ``I[S; past]`` equals the
    entropy of state occupation over labelled points.
    """
    if not sf.known().any():
        raise ValueError("no labelled points")
    out = []
    for sc, cc in zip(s.classes, db.counts):
        vc = sc.vertex_class
        labels = sf.labels[:, list(vc.members)]
        labels = labels[labels != UNKNOWN]
        h = entropy(np.bincount(labels)) if labels.size else 0.0
        table = cc.dense()
        pinfo = mutual_information(table) if table.sum() else 0.0
        out.append(ClassComplexity(vc.index, vc.members, h, h, pinfo, mi_bias_bound(table),
                                   int(labels.size)))
    return ComplexityReport(out)


def state_given_past_entropy(f, sf: StateField, s: StateSet) -> float:
    """Largest per-class plug-in ``H[S | past]`` over labelled points of ``f``."""
    worst = 0.0
    times = np.arange(s.params.past_depth - 1, f.T)
    for sc in s.classes:
        vc = sc.vertex_class
        pasts, states = [], []
        for m in vc.members:
            codes = past_codes_for(f.values, f.alphabet_size, vc, m, times)
            st = sf.labels[times, m]
            keep = st != UNKNOWN
            pasts.append(codes[keep])
            states.append(st[keep])
        if not sum(len(x) for x in pasts):
            continue
        table = contingency(np.concatenate(pasts), np.concatenate(states))
        worst = max(worst, entropy(table) - entropy(table.sum(axis=1)))
    return worst


# -- Markov diagnostics -----------------------------------------------------------

@dataclass
class ParentsSpec:
    """Parent vertices (at ``t - 1``) of each vertex: itself and its neighbours.

    Members of one vertex class list their parents in the class's
    representative coordinates, so parent tuples are comparable across them.
    """
    parents: tuple

    @classmethod
    def from_graph(cls, g: Graph, classes=None) -> "ParentsSpec":
        if classes is None:
            return cls(tuple(tuple(sorted((v, *g.neighbors(v)))) for v in range(g.vertex_count)))
        out = [None] * g.vertex_count
        for vc in classes:
            slots = [i for i, (u, dt) in enumerate(vc.past_offsets)
                     if dt == -1 and (u == vc.representative or g.adjacent(u, vc.representative))]
            for m in vc.members:
                out[m] = tuple(int(vc.past_gather[m][i]) for i in slots)
        return cls(tuple(out))


def _fields(sf) -> list:
    return [sf] if isinstance(sf, StateField) else list(sf)


def temporal_markov_test(sf, parents: ParentsSpec, depth_k: int = 2,
                         threshold: float = DEFAULT_THRESHOLD, vertices=None) -> CMIReport:
    """``I[S(v,t); S(v,t-k) | parents]`` pooled over vertices, stratified by vertex class."""
    if depth_k < 2:
        raise ValueError("probe lag must be at least 2")
    sfs = _fields(sf)
    xs, ys, zs = [], [], []
    vertices = range(sfs[0].V) if vertices is None else vertices
    width = max(len(parents.parents[v]) for v in vertices)
    for sf, v in ((a, v) for a in sfs for v in vertices):
        lab = sf.labels
        par = list(parents.parents[v])
        t = np.arange(depth_k, sf.T)
        x = lab[t, v]
        y = lab[t - depth_k, v]
        z = lab[t - 1][:, par]
        keep = (x != UNKNOWN) & (y != UNKNOWN) & (z != UNKNOWN).all(axis=1)
        pad = np.full((keep.sum(), width - len(par)), -2, dtype=np.int64)
        cls_col = np.full((keep.sum(), 1), sf.vertex_class[v], dtype=np.int64)
        xs.append(np.stack([np.full(keep.sum(), sf.vertex_class[v]), x[keep]], axis=1))
        ys.append(y[keep])
        zs.append(np.hstack([cls_col, z[keep], pad]))
    return cmi_test(np.vstack(xs), np.concatenate(ys), np.vstack(zs), threshold)


def probe_vertex(g: Graph, v: int, distance: int):
    """Smallest-id vertex at exactly ``distance`` hops from ``v``, or ``None``."""
    dist = bfs_distances(g, v, distance)
    cands = sorted(u for u, d in dist.items() if d == distance)
    return cands[0] if cands else None


def markov_field_test(sf, g: Graph, probe_distance: int = 2, probe_lag: int = 0,
                      threshold: float = DEFAULT_THRESHOLD, vertices=None,
                      parents: ParentsSpec | None = None) -> CMIReport:
    """``I[S(v,t); S(w,t-lag) | boundary]`` with boundary = parents and same-time neighbours.

    ``w`` is the smallest-id vertex ``probe_distance`` hops away, a point
    outside the boundary.
    """
    if probe_lag < 0:
        raise ValueError("probe lag must be non-negative")
    if probe_lag == 0 and probe_distance < 2:
        raise ValueError("same-time probes must be at least two hops away")
    sfs = _fields(sf)
    parents = parents or ParentsSpec.from_graph(g)
    vertices = range(sfs[0].V) if vertices is None else vertices
    rows = []
    for sf, v in ((a, v) for a in sfs for v in vertices):
        lab = sf.labels
        w = probe_vertex(g, v, probe_distance)
        if w is None:
            continue
        par = list(parents.parents[v])
        nbr = [u for u in par if u != v]
        t = np.arange(max(1, probe_lag), sf.T)
        x = lab[t, v]
        y = lab[t - probe_lag, w]
        z = np.hstack([lab[t - 1][:, par], lab[t][:, nbr]])
        keep = (x != UNKNOWN) & (y != UNKNOWN) & (z != UNKNOWN).all(axis=1)
        rows.append((v, x[keep], y[keep], z[keep]))
    if not rows:
        return cmi_test([], [], [], threshold)
    width = max(r[3].shape[1] for r in rows)
    xs, ys, zs = [], [], []
    for v, x, y, z in rows:
        n = len(x)
        xs.append(np.stack([np.full(n, sfs[0].vertex_class[v]), x], axis=1))
        ys.append(y)
        pad = np.full((n, width - z.shape[1]), -2, dtype=np.int64)
        zs.append(np.hstack([np.full((n, 1), v, dtype=np.int64), z, pad]))
    return cmi_test(np.vstack(xs), np.concatenate(ys), np.vstack(zs), threshold)
