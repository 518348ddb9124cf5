"""Clustering past cone configurations into estimated local causal states.

The clustering is one pass over the pasts in a seeded random order.  Each
past joins the first existing state (in creation order) whose aggregate
future distribution it is not significantly different from, adding its
counts to that state, and otherwise founds a new state.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cones import (ConeDatabase, NoDataError, VertexClass, build_vertex_classes, class_of_vertex,
                    config_key, decode_config, encode_configs, encode_one, interior_times,
                    parse_config_key, past_codes_for)
from .field import FieldSeries, LocalRule, all_configurations, apply_table, neighborhood_index
from .graph import ConeParams, Graph, bfs_distances

SAME = "same"
DIFFERENT = "different"
UNKNOWN = -1


@dataclass(frozen=True)
class TestConfig:
    alpha: float = 0.05
    test: str = "chi2"
    n_perm: int = 1000
    min_expected: float = 5.0
    perm_seed: int = 0

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if self.test not in ("chi2", "permutation"):
            raise ValueError(f"unknown test {self.test!r}")
        if self.test == "permutation" and self.n_perm < 100:
            raise ValueError("permutation test needs n_perm >= 100")
        if self.min_expected < 0:
            raise ValueError("min_expected must be non-negative")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "test": self.test, "n_perm": self.n_perm,
                "min_expected": self.min_expected, "perm_seed": self.perm_seed}


# -- two-sample homogeneity ---------------------------------------------------

def _binned_table(a: np.ndarray, b: np.ndarray, min_expected: float) -> np.ndarray:
    """2 x k table over the union support with sparse bins pooled into one.

    A bin is sparse when either row's expected count under homogeneity falls
    below ``min_expected``.  If the pooled bin is itself still sparse it is
    folded into the smallest surviving bin.
    """
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    na, nb = a.sum(), b.sum()
    n = na + nb
    col = a + b
    expected_min = col * min(na, nb) / n
    dense = expected_min >= min_expected
    table = np.vstack([a[dense], b[dense]])
    if (~dense).any():
        other = np.array([[a[~dense].sum()], [b[~dense].sum()]])
        if other.sum() * min(na, nb) / n >= min_expected or table.shape[1] == 0:
            table = np.hstack([table, other])
        else:
            j = int(np.argmin(table.sum(axis=0)))
            table[:, j] += other[:, 0]
    return table


def chi2_statistic(table: np.ndarray) -> float:
    n = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (table - expected) ** 2 / expected, 0.0)
    return float(terms.sum())


def homogeneity_pvalue(counts_a, counts_b, cfg: TestConfig) -> float:
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("count vectors must share one index")
    if a.sum() <= 0 and b.sum() <= 0:
        raise ValueError("both samples are empty")
    if a.sum() <= 0 or b.sum() <= 0:
        return 1.0
    if cfg.test == "chi2":
        table = _binned_table(a, b, cfg.min_expected)
        df = table.shape[1] - 1
        if df <= 0:
            return 1.0
        return float(stats.chi2.sf(chi2_statistic(table), df))
    return _permutation_pvalue(a, b, cfg)


def _permutation_pvalue(a, b, cfg: TestConfig) -> float:
    keep = (a + b) > 0
    a, b = a[keep].astype(np.int64), b[keep].astype(np.int64)
    if a.size <= 1:
        return 1.0
    observed = chi2_statistic(np.vstack([a, b]))
    rng = np.random.default_rng(cfg.perm_seed)
    pooled = a + b
    # relabelling samples with fixed margins is a multivariate hypergeometric draw
    draws = rng.multivariate_hypergeometric(pooled, int(a.sum()), size=cfg.n_perm)
    exceed = 0
    for row in draws:
        if chi2_statistic(np.vstack([row, pooled - row])) >= observed - 1e-12:
            exceed += 1
    return (exceed + 1) / (cfg.n_perm + 1)


def homogeneity_test(counts_a, counts_b, cfg: TestConfig) -> str:
    """``"different"`` iff the two-sample test rejects homogeneity at ``cfg.alpha``."""
    return DIFFERENT if homogeneity_pvalue(counts_a, counts_b, cfg) < cfg.alpha else SAME


# -- states -------------------------------------------------------------------

@dataclass
class CausalState:
    id: int
    members: list          # past codes
    counts: np.ndarray     # aggregate future counts over the class future index

    @property
    def total(self):
        return self.counts.sum()


@dataclass
class StateClass:
    vertex_class: VertexClass
    future_codes: np.ndarray
    states: list
    past_to_state: dict = field(default_factory=dict)

    def index_pasts(self):
        self.past_to_state = {m: s.id for s in self.states for m in s.members}
        return self

    def lookup(self, codes: np.ndarray) -> np.ndarray:
        """State id for each past code, ``UNKNOWN`` for unseen pasts."""
        if not self.past_to_state:
            return np.full(len(codes), UNKNOWN, dtype=np.int64)
        keys = np.array(sorted(self.past_to_state), dtype=codes.dtype if codes.dtype != object else object)
        vals = np.array([self.past_to_state[k] for k in keys], dtype=np.int64)
        pos = np.searchsorted(keys, codes)
        pos = np.clip(pos, 0, len(keys) - 1)
        hit = keys[pos] == codes
        return np.where(hit, vals[pos], UNKNOWN)


@dataclass
class StateSet:
    graph: Graph
    params: ConeParams
    pooling: bool
    alphabet_size: int
    classes: list
    provenance: dict = field(default_factory=dict)

    def n_states(self, class_index: int) -> int:
        return len(self.classes[class_index].states)

    def state_counts(self) -> list:
        return [len(c.states) for c in self.classes]

    def state_of(self, class_index: int, past) -> int:
        code = encode_one(past, self.alphabet_size)
        sid = self.classes[class_index].past_to_state.get(code)
        if sid is None:
            raise NoDataError(f"past {tuple(past)} not assigned to any state")
        return sid

    def partition(self, class_index: int) -> frozenset:
        return frozenset(frozenset(s.members) for s in self.classes[class_index].states)

    def to_json(self) -> dict:
        A = self.alphabet_size
        out = []
        for sc in self.classes:
            vc = sc.vertex_class
            lp, lf = len(vc.past_offsets), len(vc.future_offsets)
            states = []
            for s in sc.states:
                futures = {}
                as_int = np.issubdtype(s.counts.dtype, np.integer)
                for code, c in zip(sc.future_codes, s.counts):
                    if c:
                        futures[config_key(decode_config(code, A, lf))] = int(c) if as_int else float(c)
                states.append({
                    "id": s.id,
                    "members": [config_key(decode_config(m, A, lp)) for m in sorted(s.members)],
                    "futures": futures,
                })
            out.append({"signature": vc.signature, "members": list(vc.members), "states": states})
        return {
            "format": "conefield-states/1",
            "graph": {"vertex_count": self.graph.vertex_count,
                      "edges": [list(e) for e in self.graph.sorted_edges()]},
            "params": self.params.to_dict(),
            "pooling": self.pooling,
            "alphabet_size": A,
            "classes": out,
            "provenance": self.provenance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "StateSet":
        g = Graph.from_edges(doc["graph"]["vertex_count"], [tuple(e) for e in doc["graph"]["edges"]])
        p = ConeParams(**doc["params"])
        pooling = bool(doc["pooling"])
        A = int(doc["alphabet_size"])
        vclasses = build_vertex_classes(g, p, pooling)
        if len(vclasses) != len(doc["classes"]):
            raise ValueError("state file classes do not match the graph's vertex classes")
        classes = []
        for vc, entry in zip(vclasses, doc["classes"]):
            if list(vc.members) != list(entry["members"]) or vc.signature != entry["signature"]:
                raise ValueError(f"class {vc.index} does not match the graph's cone structure")
            fut_keys = sorted({k for s in entry["states"] for k in s["futures"]},
                              key=lambda k: parse_config_key(k))
            fut_rows = np.array([parse_config_key(k) for k in fut_keys], dtype=np.int64)
            fut_codes = encode_configs(fut_rows.reshape(len(fut_keys), -1), A) if fut_keys else np.zeros(0, np.int64)
            order = np.argsort(fut_codes, kind="stable")
            fut_codes = fut_codes[order]
            fut_keys = [fut_keys[i] for i in order]
            pos = {k: i for i, k in enumerate(fut_keys)}
            states = []
            for s in entry["states"]:
                vals = list(s["futures"].values())
                dtype = np.int64 if all(isinstance(x, int) for x in vals) else float
                counts = np.zeros(len(fut_keys), dtype=dtype)
                for k, c in s["futures"].items():
                    counts[pos[k]] = c
                members = [encode_one(parse_config_key(m), A) for m in s["members"]]
                states.append(CausalState(int(s["id"]), members, counts))
            classes.append(StateClass(vc, fut_codes, states).index_pasts())
        return cls(g, p, pooling, A, classes, dict(doc.get("provenance", {})))

    @classmethod
    def loads(cls, text: str) -> "StateSet":
        return cls.from_json(json.loads(text))


def database_digest(db: ConeDatabase) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(db.params.to_dict(), sort_keys=True).encode())
    h.update(db.graph.digest().encode())
    h.update(str(db.pooling).encode())
    for cc in db.counts:
        for arr in (cc.past_codes, cc.future_codes, cc.pair_past, cc.pair_future, cc.pair_count):
            h.update(repr(arr.tolist()).encode())
    return h.hexdigest()


def _class_rng(seed: int, class_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(class_index)]))


def _cluster(matrix: np.ndarray, order, cfg: TestConfig) -> list:
    """The one-pass clustering loop; returns lists of row indices per state."""
    groups, aggregates = [], []
    for i in order:
        row = matrix[i]
        for gi, agg in enumerate(aggregates):
            if homogeneity_pvalue(row, agg, cfg) >= cfg.alpha:
                groups[gi].append(i)
                aggregates[gi] = agg + row
                break
        else:
            groups.append([i])
            aggregates.append(row.copy())
    return groups


def _refine(matrix: np.ndarray, groups: list, cfg: TestConfig) -> list:
    aggregates = [matrix[g].sum(axis=0) for g in groups]
    assignment = {}
    for i in range(matrix.shape[0]):
        pvals = [homogeneity_pvalue(matrix[i], agg, cfg) for agg in aggregates]
        assignment[i] = int(np.argmax(pvals))
    new_groups = [[i for g in groups for i in g if assignment[i] == k] for k in range(len(groups))]
    return [g for g in new_groups if g]


def reconstruct_states(db: ConeDatabase, cfg: TestConfig, seed: int, refine: bool = False) -> StateSet:
    if db.total == 0:
        raise ValueError("empty cone database")
    classes = []
    for vc, cc in zip(db.classes, db.counts):
        matrix = cc.dense()
        order = _class_rng(seed, vc.index).permutation(matrix.shape[0])
        groups = _cluster(matrix, order, cfg) if matrix.shape[0] else []
        if refine and len(groups) > 1:
            groups = _refine(matrix, groups, cfg)
        states = [CausalState(k, [cc.past_codes[i] for i in g], matrix[g].sum(axis=0))
                  for k, g in enumerate(groups)]
        classes.append(StateClass(vc, cc.future_codes, states).index_pasts())
    provenance = {"test": cfg.to_dict(), "seed": int(seed), "refine": bool(refine),
                  "database_sha256": database_digest(db), "sources": [list(s) for s in db.sources]}
    return StateSet(db.graph, db.params, db.pooling, db.alphabet_size, classes, provenance)


def empirical_sufficiency_violations(db: ConeDatabase, s: StateSet, cfg: TestConfig) -> tuple:
    """Re-test every member past against its state's aggregate.

    Returns ``(violations, tests)``.
    """
    violations = tests = 0
    for cc, sc in zip(db.counts, s.classes):
        matrix = cc.dense()
        for st in sc.states:
            for m in st.members:
                i = cc.past_index(m)
                tests += 1
                if homogeneity_pvalue(matrix[i], st.counts, cfg) < cfg.alpha:
                    violations += 1
    return violations, tests


# -- exact conditionals and oracle states ---------------------------------------

def partition_by_distribution(conditionals: dict, tol: float = 1e-12) -> list:
    """Group keys whose probability vectors agree componentwise within ``tol``."""
    groups = []
    for key in sorted(conditionals):
        dist = conditionals[key]
        for grp in groups:
            ref = conditionals[grp[0]]
            support = set(dist) | set(ref)
            if all(abs(dist.get(k, 0.0) - ref.get(k, 0.0)) <= tol for k in support):
                grp.append(key)
                break
        else:
            groups.append([key])
    return groups


def exact_cone_joint(g: Graph, rule: LocalRule, past_points, future_points, init_probs=None,
                     max_enumeration: int = 1 << 18) -> dict:
    """Exact ``P(past config, future config)`` for a synthetic rule.

    Points are ``(vertex, time_offset)`` pairs.  For table rules the slice at
    the oldest past offset is taken to be iid with ``init_probs`` and the
    rule is run forward by enumerating every configuration of the vertices
    that can influence the points; this is exact whenever that iid slice is
    the process's stationary slice law (e.g. the shift).  Noisy rules are
    not supported.
    """
    A = rule.alphabet_size
    if rule.kind == "iid":
        q = np.asarray(rule.probs, dtype=float)
        pv = _product_law(len(past_points), q, max_enumeration)
        fv = _product_law(len(future_points), q, max_enumeration)
        return {(pc, fc): pp * fp for pc, pp in pv.items() for fc, fp in fv.items()}
    if rule.kind != "table":
        raise ValueError("exact conditionals need an iid or deterministic table rule")
    q = np.asarray(init_probs if init_probs is not None else np.full(A, 1.0 / A), dtype=float)
    points = list(past_points) + list(future_points)
    t0 = min(dt for _, dt in points)
    influence = set()
    for u, dt in points:
        influence.update(bfs_distances(g, u, dt - t0).keys())
    ball = np.array(sorted(influence), dtype=np.int64)
    if A ** len(ball) > max_enumeration:
        raise ValueError(f"enumeration of {A}^{len(ball)} configurations exceeds the limit")
    configs = all_configurations(A, len(ball))
    weights = np.prod(q[configs], axis=1)
    live = weights > 0
    configs, weights = configs[live], weights[live]
    nbr = neighborhood_index(g, rule)
    row = np.zeros((len(configs), g.vertex_count), dtype=np.int64)
    row[:, ball] = configs
    rows = {t0: row}
    for t in range(t0 + 1, max(dt for _, dt in points) + 1):
        row = apply_table(rule, row, nbr)
        rows[t] = row
    past = np.stack([rows[dt][:, u] for u, dt in past_points], axis=1) if past_points else np.zeros((len(configs), 0), np.int64)
    fut = np.stack([rows[dt][:, u] for u, dt in future_points], axis=1) if future_points else np.zeros((len(configs), 0), np.int64)
    joint = {}
    for pr, fr, w in zip(map(tuple, past.tolist()), map(tuple, fut.tolist()), weights):
        joint[(pr, fr)] = joint.get((pr, fr), 0.0) + float(w)
    return joint


def _product_law(length: int, q: np.ndarray, limit: int) -> dict:
    if len(q) ** length > limit:
        raise ValueError("configuration space too large to enumerate")
    configs = all_configurations(len(q), length)
    probs = np.prod(q[configs], axis=1) if length else np.ones(1)
    return {tuple(c): float(w) for c, w in zip(configs.tolist(), probs) if w > 0}


def conditionals_from_joint(joint: dict) -> dict:
    marg = {}
    for (pc, _), w in joint.items():
        marg[pc] = marg.get(pc, 0.0) + w
    cond = {}
    for (pc, fc), w in joint.items():
        cond.setdefault(pc, {})[fc] = w / marg[pc]
    return cond


def exact_conditionals(g: Graph, rule: LocalRule, p: ConeParams, pooling: bool = False,
                       init_probs=None) -> list:
    """Per vertex class, ``{past config: {future config: probability}}``.

    Computed at each class representative, in class coordinates.
    """
    out = []
    for vc in build_vertex_classes(g, p, pooling):
        joint = exact_cone_joint(g, rule, vc.past_offsets, vc.future_offsets, init_probs)
        out.append(conditionals_from_joint(joint))
    return out


def oracle_states(exact: list, g: Graph, p: ConeParams, pooling: bool, alphabet_size: int,
                  tol: float = 1e-12) -> StateSet:
    """States from exact equality of conditional distributions.

    ``exact`` holds one ``{past: {future: prob}}`` map per vertex class.  A
    state's future weights are the unweighted sum of its members'
    conditionals, so they are comparable only up to normalisation.
    """
    vclasses = build_vertex_classes(g, p, pooling)
    if len(exact) != len(vclasses):
        raise ValueError("need one conditional map per vertex class")
    classes = []
    for vc, cond in zip(vclasses, exact):
        futures = sorted({fc for dist in cond.values() for fc in dist})
        fut_codes = encode_configs(np.array(futures, dtype=np.int64).reshape(len(futures), -1), alphabet_size) \
            if futures else np.zeros(0, np.int64)
        order = np.argsort(fut_codes, kind="stable")
        fut_codes = fut_codes[order]
        futures = [futures[i] for i in order]
        pos = {fc: i for i, fc in enumerate(futures)}
        states = []
        for k, grp in enumerate(partition_by_distribution(cond, tol)):
            w = np.zeros(len(futures))
            for past in grp:
                for fc, pr in cond[past].items():
                    w[pos[fc]] += pr
            states.append(CausalState(k, [encode_one(past, alphabet_size) for past in grp], w))
        classes.append(StateClass(vc, fut_codes, states).index_pasts())
    return StateSet(g, p, pooling, alphabet_size, classes, {"oracle": True})


def restrict_partition(partition: frozenset, observed) -> frozenset:
    observed = set(observed)
    return frozenset(frozenset(b & observed) for b in partition if b & observed)


# -- labelling ------------------------------------------------------------------

@dataclass
class StateField:
    labels: np.ndarray        # (T, V); UNKNOWN where no state applies
    vertex_class: np.ndarray  # (V,) class index of each vertex

    @property
    def T(self):
        return self.labels.shape[0]

    @property
    def V(self):
        return self.labels.shape[1]

    def known(self) -> np.ndarray:
        return self.labels != UNKNOWN

    def dumps(self, comments=()) -> str:
        top = int(self.labels.max()) + 1 if self.labels.size and self.labels.max() >= 0 else 0
        out = [f"# {c}" for c in comments]
        out.append(f"states {top}")
        for row in self.labels.tolist():
            out.append(" ".join("?" if x == UNKNOWN else str(x) for x in row))
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str, vertex_class=None) -> "StateField":
        rows = []
        header = False
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if not header:
                if not line.startswith("states"):
                    raise ValueError("expected 'states <count>' header")
                header = True
                continue
            rows.append([UNKNOWN if x == "?" else int(x) for x in line.split()])
        labels = np.array(rows, dtype=np.int64)
        vcls = np.zeros(labels.shape[1], np.int64) if vertex_class is None else np.asarray(vertex_class)
        return cls(labels, vcls)


def label_field(f: FieldSeries, s: StateSet, g: Graph | None = None, p: ConeParams | None = None) -> StateField:
    if g is not None and g != s.graph:
        raise ValueError("graph does not match the state set")
    if p is not None and p != s.params:
        raise ValueError("cone parameters do not match the state set")
    if f.V != s.graph.vertex_count:
        raise ValueError("field width does not match the graph")
    if f.alphabet_size != s.alphabet_size:
        raise ValueError("field alphabet does not match the state set")
    labels = np.full((f.T, f.V), UNKNOWN, dtype=np.int64)
    times = np.arange(s.params.past_depth - 1, f.T, dtype=np.int64)
    vclasses = [sc.vertex_class for sc in s.classes]
    if len(times):
        for sc in s.classes:
            vc = sc.vertex_class
            for m in vc.members:
                codes = past_codes_for(f.values, f.alphabet_size, vc, m, times)
                labels[times, m] = sc.lookup(codes)
    return StateField(labels, class_of_vertex(vclasses))
