import numpy as np
import pytest

from conefield.cones import NoDataError, build_cone_database, decode_config
from conefield.field import FieldSeries, SimConfig, iid_rule, shift_rule, simulate, simulate_ensemble
from conefield.graph import ConeParams, path_graph, ring_graph
from conefield.info import CONSISTENT, mutual_information, contingency
from conefield.prediction import (Predictor, check_patch, evaluate_predictor, next_step_conditional_entropy,
                                  oracle_patch_states, patch_composition_check, patch_sufficiency_test,
                                  predict_distribution, label_fields)
from conefield.reconstruct import TestConfig, label_field, reconstruct_states

P = ConeParams(1, 2, 1)
CFG = TestConfig(alpha=0.001)


def _states(fields, g, seed=0):
    return reconstruct_states(build_cone_database(fields, g, P, True), CFG, seed)


def _zero(T=30, V=6):
    return FieldSeries(np.zeros((T, V), dtype=np.int64), 2)


def test_constant_point_mass():
    g = ring_graph(6)
    s = _states(_zero(), g)
    outcomes, probs = predict_distribution(Predictor(s), (0,) * 4, 0)
    assert outcomes == [(0, 0, 0)] and probs.tolist() == [1.0]
    with pytest.raises(NoDataError):
        predict_distribution(Predictor(s), (1, 0, 0, 0), 0)


def test_iid_marginal_near_half():
    g = ring_graph(6)
    f = simulate(g, iid_rule((0.5, 0.5)), SimConfig(4000, 2))
    s = _states(f, g)
    _, probs = predict_distribution(Predictor(s, "marginal"), (0, 1, 1, 0), 0)
    assert probs == pytest.approx([0.5, 0.5], abs=0.02)


def test_shift_marginal_uniform():
    g = ring_graph(6)
    s = _states(simulate_ensemble(g, shift_rule(), SimConfig(3, 1), 3000), g)
    vc = s.classes[0].vertex_class
    pasts = [decode_config(m, 2, len(vc.past_offsets)) for st_ in s.classes[0].states for m in st_.members]
    assert len(pasts) == 8   # the anchor's symbol is a copy of one of the three earlier ones
    for past in pasts:
        _, probs = predict_distribution(Predictor(s, "marginal"), past, 0)
        assert probs == pytest.approx([0.5, 0.5], abs=0.03)


def test_marginal_equals_marginalised_full():
    g = ring_graph(6)
    s = _states(simulate(g, iid_rule((0.3, 0.7)), SimConfig(1500, 4)), g)
    vc = s.classes[0].vertex_class
    j = vc.anchor_future_index()
    for past in [(0, 0, 0, 0), (1, 0, 1, 1)]:
        outs, pf = predict_distribution(Predictor(s, "full"), past, 0)
        _, pm = predict_distribution(Predictor(s, "marginal"), past, 0)
        folded = np.zeros(2)
        for o, q in zip(outs, pf):
            folded[o[j]] += q
        assert np.array_equal(folded, pm) or folded == pytest.approx(pm, abs=1e-15)


def test_evaluate_constant_and_coin():
    g = ring_graph(6)
    s = _states(_zero(), g)
    rep = evaluate_predictor(Predictor(s, "marginal"), _zero(20))
    assert rep.log_loss_bits_per_point == 0.0 and rep.accuracy == 1.0 and rep.coverage == 1.0
    assert rep.tsv().split("\t") == ["0.000000", "1.000000", "1.000000", str(rep.n_points)]

    s = _states(simulate(g, iid_rule((0.5, 0.5)), SimConfig(5000, 1)), g)
    rep = evaluate_predictor(Predictor(s, "marginal"), simulate(g, iid_rule((0.5, 0.5)), SimConfig(2000, 2)))
    assert rep.log_loss_bits_per_point == pytest.approx(1.0, abs=0.01)


def test_evaluate_no_coverage_raises():
    g = ring_graph(6)
    s = _states(_zero(), g)
    ones = FieldSeries(np.ones((10, 6), dtype=np.int64), 2)
    with pytest.raises(NoDataError):
        evaluate_predictor(Predictor(s), ones)


def test_unseen_outcome_smoothed():
    g = ring_graph(4)
    s = _states(_zero(V=4), g)
    vals = np.zeros((6, 4), dtype=np.int64)
    vals[5, 0] = 1
    rep = evaluate_predictor(Predictor(s, "marginal"), FieldSeries(vals, 2))
    assert rep.smoothing_count >= 1
    assert np.isfinite(rep.log_loss_bits_per_point)


def test_data_processing_inequality():
    g = ring_graph(6)
    f = simulate(g, iid_rule((0.5, 0.5)), SimConfig(1000, 8))
    s = _states(f, g)
    sf = label_field(f, s)
    t = np.arange(1, f.T - 1)
    nxt = f.values[t + 1].ravel()
    state = sf.labels[t].ravel()
    past = np.stack([f.values[t - 1], f.values[t]], axis=-1).reshape(-1, 2)
    assert mutual_information(contingency(nxt, state)) <= mutual_information(contingency(nxt, past)) + 1e-9
    assert next_step_conditional_entropy(f, s) <= 1.0


def test_patch_checks():
    g = ring_graph(6)
    with pytest.raises(ValueError):
        check_patch(g, (0, 3))
    with pytest.raises(ValueError):
        check_patch(g, ())
    assert check_patch(g, (1, 0)) == (0, 1)

    zero = [_zero(60)]
    s = _states(zero, g)
    rep = patch_sufficiency_test(label_fields(zero, s), zero, (0, 1), P, g)
    assert rep.cmi_bits == 0.0


def test_patch_iid_and_shift():
    g = ring_graph(6)
    # the plug-in bias here is about 950 / (2 N ln 2) bits, so N must be large
    f = simulate(g, iid_rule((0.5, 0.5)), SimConfig(40000, 3))
    s = _states(f, g)
    rep = patch_sufficiency_test(label_field(f, s), f, (0, 1), P, g)
    assert rep.cmi_bits < 0.05 and rep.cmi_bits <= 1.5 * rep.bias_bound_bits

    fields = simulate_ensemble(g, shift_rule(), SimConfig(3, 5), 3000)
    s = _states(fields, g)
    sfs = label_fields(fields, s)
    rep = patch_sufficiency_test(sfs, fields, (0, 1), P, g)
    assert rep.verdict == CONSISTENT
    oracle = oracle_patch_states(g, shift_rule(), (0, 1), P)
    comp = patch_composition_check(sfs, fields, (0, 1), P, g, oracle)
    assert comp.violations == 0 and comp.unexplained == 0 and comp.keys == 4


def test_marginal_needs_anchor():
    g = path_graph(3)
    s = _states(FieldSeries(np.zeros((10, 3), dtype=np.int64), 2), g)
    Predictor(s, "marginal")
    with pytest.raises(ValueError):
        Predictor(s, "joint")
