import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conefield.field import (FieldFormatError, FieldSeries, LocalRule, SimConfig, elementary_rule,
                             iid_rule, load_field, load_fields, neighborhood_index, rule184, save_field,
                             save_fields, shift_rule, simulate, simulate_ensemble)
from conefield.graph import parse_graph, ring_graph, star_graph


def test_load_basic():
    g = parse_graph("graph 3\n0 1\n1 2")
    f = load_field("field 2\n0 1 0\n1 1 0\n", g)
    assert (f.T, f.V, f.alphabet_size) == (2, 3, 2)


@pytest.mark.parametrize("text, msg", [
    ("field 2\n0 1 0\n1 1\n", "line 3"),
    ("field 2\n0 2 0\n", "outside alphabet"),
    ("", "empty"),
    ("field 2\n", "no data rows"),
    ("fld 2\n0\n", "expected 'field"),
])
def test_load_errors(text, msg):
    with pytest.raises(FieldFormatError, match=msg):
        load_field(text)


def test_single_row_and_decimal_symbols():
    f = FieldSeries(np.array([[9, 0, 3]]), 10)
    text = save_field(f)
    assert text.splitlines()[-1] == "9 0 3"
    assert load_field(text) == f


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 6)),
                                 elements=st.integers(0, 5)))
def test_roundtrip(extra, values):
    f = FieldSeries(values, int(values.max()) + extra)
    assert load_field(save_field(f, ["note"])) == f
    assert load_fields(save_fields([f, f])) == [f, f]


def test_iid_zero_probability():
    f = simulate(ring_graph(6), iid_rule((1.0, 0.0)), SimConfig(50, 3, ("iid", (1.0, 0.0))))
    assert not f.values.any()


def test_iid_frequencies():
    p = np.array([0.2, 0.5, 0.3])
    f = simulate(ring_graph(100), iid_rule(p), SimConfig(1000, 11, ("iid", tuple(p))))
    freq = np.bincount(f.values.ravel(), minlength=3) / f.values.size
    se = np.sqrt(p * (1 - p) / f.values.size)
    assert np.all(np.abs(freq - p) < 3 * se)


def test_shift_rotates():
    f = simulate(ring_graph(9), shift_rule(), SimConfig(20, 5))
    for t in range(1, f.T):
        assert np.array_equal(f.values[t], np.roll(f.values[t - 1], 1))


def test_rule184_conserves_particles():
    f = simulate(ring_graph(40), rule184(), SimConfig(200, 2))
    assert len(set(f.values.sum(axis=1))) == 1


@pytest.mark.parametrize("rule", [shift_rule(), rule184(), elementary_rule(110)])
def test_table_rule_holds_everywhere(rule):
    g = ring_graph(12)
    f = simulate(g, rule, SimConfig(30, 4))
    nbr = neighborhood_index(g, rule)
    for t in range(f.T - 1):
        codes = (f.values[t, nbr] * np.array([4, 2, 1])).sum(axis=1)
        assert np.array_equal(f.values[t + 1], rule.table[codes])


def test_reproducible_and_ensemble_seeds():
    g = ring_graph(8)
    a = simulate(g, elementary_rule(30, 0.1), SimConfig(40, 9))
    b = simulate(g, elementary_rule(30, 0.1), SimConfig(40, 9))
    assert a == b
    runs = simulate_ensemble(g, shift_rule(), SimConfig(5, 1), 3)
    assert len({r.values.tobytes() for r in runs}) == 3


def test_table_rule_needs_constant_degree():
    rule = LocalRule("table", 2, table=np.zeros(8, dtype=np.int64))
    with pytest.raises(ValueError, match="constant degree"):
        neighborhood_index(star_graph(3), rule)
    with pytest.raises(ValueError, match="cycle graph"):
        neighborhood_index(star_graph(3), shift_rule())


def test_explicit_initial_slice():
    g = ring_graph(4)
    f = simulate(g, shift_rule(), SimConfig(3, 0, [1, 0, 0, 0]))
    assert f.values.tolist() == [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]]
