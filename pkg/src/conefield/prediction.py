"""Forecasts from local states, held-out evaluation and patch-level checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cones import NoDataError, decode_config, encode_configs, encode_one, interior_times, \
    future_codes_for, past_codes_for
from .field import FieldSeries, LocalRule
from .graph import FUTURE, PAST, Graph, ConeParams, cone_template, bfs_distances
from .info import CMIReport, DEFAULT_THRESHOLD, cmi_test, contingency, entropy
from .reconstruct import UNKNOWN, StateField, StateSet, conditionals_from_joint, \
    exact_cone_joint, label_field, partition_by_distribution

FULL = "full"
MARGINAL = "marginal"


@dataclass
class Predictor:
    """Serves the aggregate future distribution of a past's state.

    ``mode="marginal"`` reduces it to the anchor's next symbol, which needs
    ``(v, +1)`` in every future template.
    """
    state_set: StateSet
    mode: str = FULL

    def __post_init__(self):
        if self.mode not in (FULL, MARGINAL):
            raise ValueError(f"mode must be {FULL!r} or {MARGINAL!r}")
        if self.mode == MARGINAL:
            for sc in self.state_set.classes:
                if sc.vertex_class.anchor_future_index() is None:
                    raise ValueError(f"class {sc.vertex_class.index} has no (v, +1) future offset")

    def outcome_codes(self, class_index: int) -> np.ndarray:
        """Outcome labels of the probability vectors for one class."""
        sc = self.state_set.classes[class_index]
        if self.mode == FULL:
            return sc.future_codes
        return np.arange(self.state_set.alphabet_size, dtype=np.int64)

    def state_weights(self, class_index: int) -> np.ndarray:
        """``(n_states, n_outcomes)`` unnormalised weights."""
        sc = self.state_set.classes[class_index]
        if not sc.states:
            return np.zeros((0, len(self.outcome_codes(class_index))))
        w = np.stack([s.counts for s in sc.states]).astype(float)
        if self.mode == FULL:
            return w
        A = self.state_set.alphabet_size
        lf = len(sc.vertex_class.future_offsets)
        j = sc.vertex_class.anchor_future_index()
        sym = np.array([decode_config(c, A, lf)[j] for c in sc.future_codes], dtype=np.int64)
        out = np.zeros((w.shape[0], A))
        for a in range(A):
            out[:, a] = w[:, sym == a].sum(axis=1)
        return out


def predict_distribution(pred: Predictor, past, class_index: int):
    """``(outcomes, probabilities)`` for one past configuration.

    Outcomes are future configurations (full mode) or next symbols.
    """
    sid = pred.state_set.state_of(class_index, past)
    w = pred.state_weights(class_index)[sid]
    A = pred.state_set.alphabet_size
    if pred.mode == FULL:
        lf = len(pred.state_set.classes[class_index].vertex_class.future_offsets)
        outcomes = [decode_config(c, A, lf) for c in pred.outcome_codes(class_index)]
    else:
        outcomes = list(range(A))
    return outcomes, w / w.sum()


@dataclass
class EvaluationReport:
    log_loss_bits_per_point: float
    accuracy: float
    coverage: float
    n_points: int
    smoothing_count: int
    mode: str

    def to_dict(self) -> dict:
        return dict(vars(self))

    def tsv(self) -> str:
        return (f"{self.log_loss_bits_per_point:.6f}\t{self.accuracy:.6f}\t"
                f"{self.coverage:.6f}\t{self.n_points}")


def _realized(f: FieldSeries, pred: Predictor, vc, m: int, times: np.ndarray) -> np.ndarray:
    if pred.mode == FULL:
        return future_codes_for(f.values, f.alphabet_size, vc, m, times)
    return f.values[times + 1, m]


def evaluate_predictor(pred: Predictor, heldout) -> EvaluationReport:
    """Log loss and accuracy over interior points whose state is known.

    A realized outcome the state never produced in training gets the add-one
    probability ``1 / (total + K)``, with ``K`` the number of possible
    outcomes; such points are counted in ``smoothing_count``.
    """
    fields = [heldout] if isinstance(heldout, FieldSeries) else list(heldout)
    s = pred.state_set
    A = s.alphabet_size
    loss = 0.0
    correct = covered = candidates = smoothed = 0
    tables = []
    for sc in s.classes:
        w = pred.state_weights(sc.vertex_class.index)
        k = A ** len(sc.vertex_class.future_offsets) if pred.mode == FULL else A
        tables.append((w, w.sum(axis=1), pred.outcome_codes(sc.vertex_class.index), k))
    for f in fields:
        if f.alphabet_size != A or f.V != s.graph.vertex_count:
            raise ValueError("held-out field does not match the state set")
        times = interior_times(f.T, s.params)
        if not len(times):
            continue
        for sc, (w, tot, outcomes, k) in zip(s.classes, tables):
            vc = sc.vertex_class
            for m in vc.members:
                sid = sc.lookup(past_codes_for(f.values, A, vc, m, times))
                candidates += len(times)
                ok = sid != UNKNOWN
                if not ok.any():
                    continue
                sid = sid[ok]
                real = _realized(f, pred, vc, m, times[ok])
                pos = np.clip(np.searchsorted(outcomes, real), 0, max(len(outcomes) - 1, 0))
                seen = (outcomes[pos] == real) if len(outcomes) else np.zeros(len(real), bool)
                cnt = np.where(seen, w[sid, pos], 0.0)
                prob = np.where(cnt > 0, cnt / tot[sid], 1.0 / (tot[sid] + k))
                smoothed += int((cnt == 0).sum())
                loss -= np.log2(prob).sum()
                best = outcomes[np.argmax(w[sid], axis=1)]
                correct += int((best == real).sum())
                covered += int(ok.sum())
    if covered == 0:
        raise NoDataError("no held-out point has a known state")
    return EvaluationReport(float(loss / covered), correct / covered, covered / candidates,
                            covered, smoothed, pred.mode)


def next_step_conditional_entropy(fields, s: StateSet) -> float:
    """Plug-in ``H[x(v, t+1) | vertex class, full past cone]`` over interior points.

    The brute-force reference for next-step log loss on the same data.
    """
    fields = [fields] if isinstance(fields, FieldSeries) else list(fields)
    A = s.alphabet_size
    keys, nxt = [], []
    for f in fields:
        times = interior_times(f.T, s.params)
        for sc in s.classes:
            vc = sc.vertex_class
            for m in vc.members:
                keys.append(np.stack([np.full(len(times), vc.index),
                                      past_codes_for(f.values, A, vc, m, times)], axis=1))
                nxt.append(f.values[times + 1, m])
    table = contingency(np.vstack(keys), np.concatenate(nxt))
    return entropy(table) - entropy(table.sum(axis=1))


# -- patches --------------------------------------------------------------------

def check_patch(g: Graph, patch) -> tuple:
    patch = tuple(sorted(set(int(v) for v in patch)))
    if not patch:
        raise ValueError("empty patch")
    reach = bfs_distances(g, patch[0], None)
    inside = {patch[0]}
    frontier = [patch[0]]
    while frontier:
        u = frontier.pop()
        for w in g.neighbors(u):
            if w in patch and w not in inside:
                inside.add(w)
                frontier.append(w)
    if len(inside) != len(patch) or any(v not in reach for v in patch):
        raise ValueError(f"patch {patch} is not connected")
    return patch


def patch_offsets(g: Graph, patch, p: ConeParams, direction: str) -> tuple:
    """Union of the members' cones, as absolute ``(vertex, time_offset)`` points."""
    pts = set()
    for v in patch:
        pts.update(cone_template(g, v, p, direction).offsets)
    return tuple(sorted(pts, key=lambda o: (o[1], o[0])))


def _patch_samples(pairs, g: Graph, patch, p: ConeParams, with_future: bool = True):
    """Rows of (patch key, patch past code, patch future code) over all pairs."""
    past = patch_offsets(g, patch, p, PAST)
    fut = patch_offsets(g, patch, p, FUTURE)
    pv = np.array([u for u, _ in past])
    pd = np.array([dt for _, dt in past])
    fv = np.array([u for u, _ in fut])
    fd = np.array([dt for _, dt in fut])
    keys, pcs, fcs = [], [], []
    for f, sf in pairs:
        T = min(f.T, sf.T) if with_future else f.T
        times = np.arange(p.past_depth - 1, T - (p.future_depth if with_future else 0))
        if not len(times):
            continue
        k = sf.labels[times][:, list(patch)]
        ok = (k != UNKNOWN).all(axis=1)
        times = times[ok]
        keys.append(k[ok])
        pcs.append(encode_configs(f.values[times[:, None] + pd, pv], f.alphabet_size))
        if with_future:
            fcs.append(encode_configs(f.values[times[:, None] + fd, fv], f.alphabet_size))
    if not keys:
        empty = np.zeros(0, np.int64)
        return np.zeros((0, len(patch)), np.int64), empty, empty
    return (np.vstack(keys), np.concatenate(pcs),
            np.concatenate(fcs) if with_future else np.zeros(0, np.int64))


def _pairs(sf, f) -> list:
    if isinstance(f, FieldSeries):
        return [(f, sf)]
    return list(zip(f, sf))


def patch_sufficiency_test(sf, f, patch, p: ConeParams, g: Graph,
                           threshold: float = DEFAULT_THRESHOLD) -> CMIReport:
    """Plug-in ``I[patch past; patch future | patch key]``.

    ``sf`` and ``f`` may be single series or equal-length lists of them.
    """
    patch = check_patch(g, patch)
    keys, pcs, fcs = _patch_samples(_pairs(sf, f), g, patch, p)
    return cmi_test(pcs, fcs, keys, threshold)


def oracle_patch_states(g: Graph, rule: LocalRule, patch, p: ConeParams, init_probs=None,
                        tol: float = 1e-12) -> dict:
    """Map each possible patch past configuration (as a tuple) to an exact patch state id."""
    patch = check_patch(g, patch)
    joint = exact_cone_joint(g, rule, patch_offsets(g, patch, p, PAST),
                             patch_offsets(g, patch, p, FUTURE), init_probs)
    cond = conditionals_from_joint(joint)
    return {past: k for k, grp in enumerate(partition_by_distribution(cond, tol)) for past in grp}


@dataclass
class PatchCompositionReport:
    keys: int
    violations: int
    unexplained: int   # observed pasts with zero oracle probability
    n_samples: int

    def to_dict(self) -> dict:
        return dict(vars(self))


def patch_composition_check(sf, f, patch, p: ConeParams, g: Graph, oracle: dict) -> PatchCompositionReport:
    """Count patch keys that map to more than one oracle patch state."""
    patch = check_patch(g, patch)
    pairs = _pairs(sf, f)
    keys, pcs, _ = _patch_samples(pairs, g, patch, p, with_future=False)
    A = pairs[0][0].alphabet_size if pairs else 2
    lookup = {encode_one(k, A): v for k, v in oracle.items()}
    seen = {}
    unexplained = 0
    for key, code in zip(map(tuple, keys.tolist()), pcs.tolist()):
        st = lookup.get(code)
        if st is None:
            unexplained += 1
            continue
        seen.setdefault(key, set()).add(st)
    violations = sum(1 for v in seen.values() if len(v) > 1)
    return PatchCompositionReport(len(seen), violations, unexplained, int(len(keys)))


def label_fields(fields, s: StateSet) -> list:
    return [label_field(f, s) for f in fields]
