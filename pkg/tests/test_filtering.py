import copy
from collections import Counter

import numpy as np
import pytest

from conefield.cones import build_cone_database
from conefield.field import FieldSeries, SimConfig, shift_rule, simulate, simulate_ensemble
from conefield.filtering import (check_path, learn_transitions, path_independence_check,
                                 random_dual_paths, recursive_filter, spatial_reader)
from conefield.graph import ConeParams, Point, ring_graph
from conefield.prediction import label_fields
from conefield.reconstruct import UNKNOWN, StateField, TestConfig, label_field, reconstruct_states

P = ConeParams(1, 2, 1)
G = ring_graph(8)


@pytest.fixture(scope="module")
def shift():
    train = simulate_ensemble(G, shift_rule(), SimConfig(3, 11), 3000)
    s = reconstruct_states(build_cone_database(train, G, P, True), TestConfig(alpha=0.001), 0)
    runs = simulate_ensemble(G, shift_rule(), SimConfig(10, 12), 200)
    tt = learn_transitions(label_fields(runs, s), runs, G, P, True)
    return s, tt


def test_constant_field_single_key():
    f = FieldSeries(np.zeros((12, 8), dtype=np.int64), 2)
    s = reconstruct_states(build_cone_database(f, G, P, True), TestConfig(), 0)
    tt = learn_transitions(label_field(f, s), f, G, P, True)
    assert list(tt.temporal) == [(0, 0, 0)]
    assert tt.temporal[(0, 0, 0)] == {0: 10 * 8}
    assert tt.conflicts() == []


def test_shift_transitions_deterministic(shift):
    s, tt = shift
    assert tt.n_keys() > 0
    assert tt.conflicts() == []
    assert tt.to_json()["conflicts"] == 0


def test_mislabelled_field_conflicts(shift):
    # swapping the label at a few points breaks the (state, fringe) -> successor function
    s, _ = shift
    runs = simulate_ensemble(G, shift_rule(), SimConfig(10, 13), 50)
    sfs = label_fields(runs, s)
    rng = np.random.default_rng(0)
    for sf in sfs:
        t, v = rng.integers(1, 10), rng.integers(0, 8)
        sf.labels[t, v] = 1 - sf.labels[t, v]
    tt = learn_transitions(sfs, runs, G, P, True)
    assert len(tt.conflicts()) > 0


def test_fully_labelled_all_singletons(shift):
    s, tt = shift
    f = simulate(G, shift_rule(), SimConfig(10, 99))
    est = recursive_filter(f, s, tt)
    assert (est.sizes()[1:] == 1).all()
    assert not est.contradiction.any()


def test_hidden_rows_resolved(shift):
    s, tt = shift
    f = simulate(G, shift_rule(), SimConfig(10, 98))
    truth = label_field(f, s)
    hidden = truth.labels.copy()
    hidden[: 3] = UNKNOWN
    est = recursive_filter(f, s, tt, labels=StateField(hidden, truth.vertex_class))
    got = est.singletons()
    assert np.array_equal(got[1:], truth.labels[1:])
    # soundness: truth always a candidate
    for t in range(1, f.T):
        for v in range(f.V):
            assert est.candidates[t, v] >> truth.labels[t, v] & 1


def test_order_independence(shift):
    s, tt = shift
    f = simulate(G, shift_rule(), SimConfig(10, 97))
    truth = label_field(f, s)
    hidden = truth.labels.copy()
    hidden[:4] = UNKNOWN
    lab = StateField(hidden, truth.vertex_class)
    base = recursive_filter(f, s, tt, labels=lab)
    for k in range(5):
        other = recursive_filter(f, s, tt, labels=lab, order_seed=k)
        assert (other.candidates == base.candidates).all()
        assert (other.contradiction == base.contradiction).all()


def test_monotone_shrinkage(shift):
    s, tt = shift
    f = simulate(G, shift_rule(), SimConfig(10, 96))
    truth = label_field(f, s)
    hidden = truth.labels.copy()
    hidden[:5] = UNKNOWN
    est = recursive_filter(f, s, tt, labels=StateField(hidden, truth.vertex_class))
    full = (1 << len(s.classes[0].states)) - 1
    start = np.where(hidden == UNKNOWN, full, 0)
    for t in range(f.T):
        for v in range(f.V):
            if hidden[t, v] == UNKNOWN:
                assert est.candidates[t, v] & ~start[t, v] == 0


def test_corrupted_observation_contradiction(shift):
    s, tt = shift
    f = simulate(G, shift_rule(), SimConfig(10, 95))
    labels = label_field(f, s)
    bad = f.values.copy()
    bad[6, 3] = 1 - bad[6, 3]
    est = recursive_filter(FieldSeries(bad, 2), s, tt, labels=labels)
    assert est.contradiction.any()
    assert "!" in est.dumps().split()


def test_dumps_format(shift):
    s, tt = shift
    f = simulate(G, shift_rule(), SimConfig(4, 94))
    text = recursive_filter(f, s, tt).dumps()
    lines = text.splitlines()
    assert lines[0] == "estimate 4 8"
    assert all(c.startswith("1:") for c in lines[2].split())


def test_path_checks(shift):
    s, tt = shift
    with pytest.raises(ValueError):
        check_path([Point(0, 5), Point(0, 4)])
    f = simulate(G, shift_rule(), SimConfig(10, 93))
    sf = label_field(f, s)
    path = [Point(0, 2), Point(0, 3), Point(1, 3)]
    rep = path_independence_check(tt, G, [(path[0], path[-1], path, path)], sf, f)
    assert rep == {"violations": 0, "undetermined": 0, "checked": 1}

    samples = random_dual_paths(G, P, f.T, 100, seed=1)
    rep = path_independence_check(tt, G, samples, sf, f)
    assert rep["violations"] == 0 and rep["checked"] > 50


def test_corrupted_table_violation(shift):
    s, tt = shift
    f = simulate(G, shift_rule(), SimConfig(10, 92))
    sf = label_field(f, s)
    a = [Point(0, 2), Point(0, 3), Point(1, 3)]
    b = [Point(0, 2), Point(1, 2), Point(1, 3)]
    assert path_independence_check(tt, G, [(a[0], a[-1], a, b)], sf, f)["violations"] == 0
    # flip the successor of the spatial key used by the last step of path a
    code = int(spatial_reader(G, 0, 1, P).codes(f, np.array([3]))[0])
    st0 = int(sf.labels[3, 0])
    key = ((0, 1), st0, code)
    (succ,) = tt.spatial[key]
    bad = copy.deepcopy(tt)
    bad.spatial[key] = Counter({1 - succ: 1})
    assert path_independence_check(bad, G, [(a[0], a[-1], a, b)], sf, f)["violations"] == 1
