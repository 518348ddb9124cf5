"""Fraction of withheld shift labels the recursive filter recovers, by number of hidden rows."""
import numpy as np

from conefield.cones import build_cone_database
from conefield.filtering import learn_transitions, recursive_filter
from conefield.prediction import label_fields
from conefield.reconstruct import UNKNOWN, StateField, TestConfig, label_field, reconstruct_states
from conefield.systems import ALPHA, EVAL_RUN, PARAMS, SHIFT_TRAIN_RUN, shift_system

HIDDEN = (2, 3, 5, 8)   # rows 0..past_depth-2 are never interior
RUNS = 20

sysm = shift_system()

if __name__ == "__main__":
    train = sysm.data(10_000, 0, SHIFT_TRAIN_RUN)
    s = reconstruct_states(build_cone_database(train, sysm.graph, PARAMS, True), TestConfig(alpha=ALPHA), 0)
    tt_fields = sysm.data(10_000, 1, EVAL_RUN)
    tt = learn_transitions(label_fields(tt_fields, s), tt_fields, sysm.graph, PARAMS, True)
    print(f"transition keys {tt.n_keys()}, conflicting {len(tt.conflicts())}")
    print("hidden_rows\tresolved\tcorrect\tcontradictions")
    for k in HIDDEN:
        res = cor = tot = bad = 0
        for f in sysm.data(EVAL_RUN * RUNS, 2, EVAL_RUN):
            truth = label_field(f, s)
            lab = truth.labels.copy()
            lab[:k] = UNKNOWN
            est = recursive_filter(f, s, tt, labels=StateField(lab, truth.vertex_class))
            got = est.singletons()[PARAMS.past_depth - 1:k]
            want = truth.labels[PARAMS.past_depth - 1:k]
            res += int((got != UNKNOWN).sum())
            cor += int((got == want).sum())
            tot += want.size
            bad += int(est.contradiction.sum())
        print(f"{k}\t{res / max(tot, 1):.4f}\t{cor / max(tot, 1):.4f}\t{bad}")
