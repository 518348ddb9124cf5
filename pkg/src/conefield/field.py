"""Discrete space-time fields: file format, local rules and simulation.

Randomness is counter based.  Row ``t`` of stream ``s`` is drawn from a
``Philox4x64`` generator keyed by the run seed with counter ``(0, 0, t, s)``;
cell ``(t, v)`` takes the ``v``-th double of that row.  Stream 0 drives the
initial condition and iid rules, stream 1 the noise of noisy tables.  A cell's
value therefore never depends on how the work is scheduled.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph

RING = "ring"
ASCENDING = "ascending"


class FieldFormatError(ValueError):
    pass


@dataclass
class FieldSeries:
    values: np.ndarray  # (T, V) integer symbols
    alphabet_size: int

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.int64)
        if self.values.ndim != 2:
            raise ValueError("field values must be a T x V array")
        if self.alphabet_size < 1:
            raise ValueError("alphabet_size must be positive")
        if self.values.size and (self.values.min() < 0 or self.values.max() >= self.alphabet_size):
            raise ValueError("symbol outside alphabet")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def V(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        return (isinstance(other, FieldSeries) and self.alphabet_size == other.alphabet_size
                and np.array_equal(self.values, other.values))


def load_field(text, g: Graph | None = None) -> FieldSeries:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    alphabet = None
    rows = []
    width = g.vertex_count if g is not None else None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if alphabet is None:
            if len(parts) != 2 or parts[0] != "field":
                raise FieldFormatError(f"line {lineno}: expected 'field <alphabet_size>'")
            try:
                alphabet = int(parts[1])
            except ValueError:
                raise FieldFormatError(f"line {lineno}: bad alphabet size") from None
            if alphabet < 1:
                raise FieldFormatError(f"line {lineno}: alphabet size must be positive")
            continue
        try:
            row = [int(x) for x in parts]
        except ValueError:
            raise FieldFormatError(f"line {lineno}: non-integer symbol") from None
        if width is None:
            width = len(row)
        if len(row) != width:
            raise FieldFormatError(f"line {lineno}: row has {len(row)} symbols, expected {width}")
        bad = [x for x in row if not 0 <= x < alphabet]
        if bad:
            raise FieldFormatError(f"line {lineno}: symbol {bad[0]} outside alphabet {alphabet}")
        rows.append(row)
    if alphabet is None:
        raise FieldFormatError("empty field file")
    if not rows:
        raise FieldFormatError("field file has no data rows")
    return FieldSeries(np.array(rows, dtype=np.int64), alphabet)


def load_fields(text, g: Graph | None = None) -> list:
    """Every series of a file; each ``field <A>`` header starts a new one."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    blocks, current, start, seen_header = [], [], 1, False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.split("#", 1)[0].split()[:1] == ["field"]:
            if seen_header:
                blocks.append((start, current))
                current, start = [], lineno
            seen_header = True
        current.append(raw)
    blocks.append((start, current))
    out = []
    for first, lines in blocks:
        try:
            out.append(load_field("\n".join(lines), g))
        except FieldFormatError as exc:
            msg = str(exc)
            if msg.startswith("line "):
                num, rest = msg[5:].split(":", 1)
                msg = f"line {int(num) + first - 1}:{rest}"
            raise FieldFormatError(msg) from None
    return out


def save_fields(fields, comments=()) -> str:
    head = "".join(f"# {c}\n" for c in comments)
    return head + "".join(save_field(f) for f in fields)


def save_field(f: FieldSeries, comments=()) -> str:
    out = [f"# {c}" for c in comments]
    out.append(f"field {f.alphabet_size}")
    out += [" ".join(map(str, row)) for row in f.values.tolist()]
    return "\n".join(out) + "\n"


# -- rules ------------------------------------------------------------------

@dataclass
class LocalRule:
    """Generating dynamics.

    ``kind`` is ``"iid"`` (``probs``), ``"table"`` (``table``) or
    ``"noisy_table"`` (``table`` plus flip probability ``epsilon``).  The table
    is indexed by the radix-``alphabet`` code of the ordered neighbourhood.
    ``neighborhood="ascending"`` orders it as self then neighbours ascending;
    ``"ring"`` uses ``(v-1, v, v+1)`` on a cycle labelled in order, which is
    what elementary cellular automata need.
    """
    kind: str
    alphabet_size: int = 2
    probs: tuple | None = None
    table: np.ndarray | None = None
    epsilon: float = 0.0
    neighborhood: str = ASCENDING
    name: str = ""

    def __post_init__(self):
        if self.kind == "iid":
            p = np.asarray(self.probs, dtype=float)
            if p.shape != (self.alphabet_size,) or (p < 0).any() or abs(p.sum() - 1) > 1e-12:
                raise ValueError("iid probabilities must be a distribution over the alphabet")
        elif self.kind in ("table", "noisy_table"):
            self.table = np.asarray(self.table, dtype=np.int64)
            if self.table.ndim != 1:
                raise ValueError("rule table must be one-dimensional")
            if self.table.size and (self.table.min() < 0 or self.table.max() >= self.alphabet_size):
                raise ValueError("rule table outputs outside alphabet")
            if not 0.0 <= self.epsilon <= 1.0:
                raise ValueError("epsilon must lie in [0, 1]")
            if self.neighborhood not in (RING, ASCENDING):
                raise ValueError(f"unknown neighborhood convention {self.neighborhood!r}")
        else:
            raise ValueError(f"unknown rule kind {self.kind!r}")

    @property
    def deterministic(self) -> bool:
        return self.kind == "table" or (self.kind == "noisy_table" and self.epsilon == 0)

    def neighborhood_size(self) -> int:
        k = self.table.size
        n = 0
        while self.alphabet_size ** n < k:
            n += 1
        if self.alphabet_size ** n != k:
            raise ValueError("rule table size is not a power of the alphabet size")
        return n


def iid_rule(probs, name="iid") -> LocalRule:
    probs = tuple(float(x) for x in probs)
    return LocalRule("iid", len(probs), probs=probs, name=name)


def elementary_rule(number: int, epsilon: float = 0.0) -> LocalRule:
    """Wolfram-numbered binary radius-1 rule over ``(v-1, v, v+1)`` on a ring."""
    if not 0 <= number < 256:
        raise ValueError("elementary rule number must be in [0, 256)")
    table = np.array([(number >> code) & 1 for code in range(8)], dtype=np.int64)
    kind = "noisy_table" if epsilon > 0 else "table"
    return LocalRule(kind, 2, table=table, epsilon=epsilon, neighborhood=RING, name=f"rule{number}")


def shift_rule() -> LocalRule:
    """Left shift: the next value at ``v`` is the current value at ``v - 1``."""
    rule = elementary_rule(240)
    rule.name = "shift"
    return rule


def rule184() -> LocalRule:
    return elementary_rule(184)


BUILTIN_RULES = {
    "shift": shift_rule,
    "rule184": rule184,
    "iid": lambda: iid_rule((0.5, 0.5)),
}


def is_ordered_ring(g: Graph) -> bool:
    n = g.vertex_count
    return n >= 3 and g.edges == frozenset((min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n))


def neighborhood_index(g: Graph, rule: LocalRule) -> np.ndarray:
    """``(V, k)`` array of vertices whose values feed each vertex's update."""
    n = g.vertex_count
    if rule.neighborhood == RING:
        if not is_ordered_ring(g):
            raise ValueError("ring neighbourhoods need a cycle graph with edges (i, i+1 mod n)")
        idx = np.array([[(v - 1) % n, v, (v + 1) % n] for v in range(n)], dtype=np.int64)
    else:
        degrees = {g.degree(v) for v in range(n)}
        if len(degrees) > 1:
            raise ValueError("table rules need a graph of constant degree")
        idx = np.array([(v, *g.neighbors(v)) for v in range(n)], dtype=np.int64)
    if idx.shape[1] != rule.neighborhood_size():
        raise ValueError(f"rule table expects neighbourhoods of size {rule.neighborhood_size()}, "
                         f"graph gives {idx.shape[1]}")
    return idx


@dataclass
class SimConfig:
    steps: int
    seed: int
    initial: object = field(default_factory=lambda: ("iid", (0.5, 0.5)))

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")


def row_uniforms(seed: int, t: int, width: int, stream: int = 0) -> np.ndarray:
    bitgen = np.random.Philox(key=int(seed) % (1 << 64), counter=[0, 0, int(t), int(stream)])
    return np.random.Generator(bitgen).random(width)


def _draw_iid(u: np.ndarray, probs) -> np.ndarray:
    cdf = np.cumsum(np.asarray(probs, dtype=float))
    cdf[-1] = 1.0
    # side="right" skips cdf plateaus, so zero-probability symbols are never drawn
    out = np.searchsorted(cdf, u, side="right")
    return np.minimum(out, len(cdf) - 1).astype(np.int64)


def apply_table(rule: LocalRule, row: np.ndarray, nbr_idx: np.ndarray) -> np.ndarray:
    codes = np.zeros(row.shape[:-1] + (nbr_idx.shape[0],), dtype=np.int64)
    for j in range(nbr_idx.shape[1]):
        codes = codes * rule.alphabet_size + row[..., nbr_idx[:, j]]
    return rule.table[codes]


def simulate(g: Graph, rule: LocalRule, cfg: SimConfig) -> FieldSeries:
    n = g.vertex_count
    out = np.empty((cfg.steps, n), dtype=np.int64)
    init = cfg.initial
    if isinstance(init, tuple) and len(init) == 2 and init[0] == "iid":
        probs = init[1]
        if len(probs) != rule.alphabet_size:
            raise ValueError("initial distribution does not match the rule's alphabet")
        out[0] = _draw_iid(row_uniforms(cfg.seed, 0, n), probs)
    else:
        row0 = np.asarray(init, dtype=np.int64)
        if row0.shape != (n,):
            raise ValueError("explicit initial slice must have one symbol per vertex")
        if row0.min() < 0 or row0.max() >= rule.alphabet_size:
            raise ValueError("initial slice has symbols outside the alphabet")
        out[0] = row0
    if rule.kind == "iid":
        for t in range(1, cfg.steps):
            out[t] = _draw_iid(row_uniforms(cfg.seed, t, n), rule.probs)
        return FieldSeries(out, rule.alphabet_size)
    nbr = neighborhood_index(g, rule)
    for t in range(1, cfg.steps):
        nxt = apply_table(rule, out[t - 1], nbr)
        if rule.kind == "noisy_table" and rule.epsilon > 0:
            u = row_uniforms(cfg.seed, t, 2 * n, stream=1)
            flip = u[:n] < rule.epsilon
            if rule.alphabet_size == 2:
                nxt = np.where(flip, 1 - nxt, nxt)
            else:
                shift = 1 + np.floor(u[n:] * (rule.alphabet_size - 1)).astype(np.int64)
                nxt = np.where(flip, (nxt + shift) % rule.alphabet_size, nxt)
        out[t] = nxt
    return FieldSeries(out, rule.alphabet_size)


def all_configurations(alphabet: int, length: int) -> np.ndarray:
    return np.array(list(itertools.product(range(alphabet), repeat=length)), dtype=np.int64).reshape(-1, length)


def run_seed(seed: int, run: int) -> int:
    """64-bit seed of ensemble member ``run``, derived with ``SeedSequence([seed, run])``."""
    return int(np.random.SeedSequence([int(seed), int(run)]).generate_state(1, np.uint64)[0])


def simulate_ensemble(g: Graph, rule: LocalRule, cfg: SimConfig, runs: int) -> list:
    """Independent runs of the same process on the same graph."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    return [simulate(g, rule, SimConfig(cfg.steps, run_seed(cfg.seed, r), cfg.initial))
            for r in range(runs)]
