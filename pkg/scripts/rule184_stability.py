"""State counts and next-step log loss for rule 184 as the sample grows."""
import time

from conefield.cones import build_cone_database
from conefield.prediction import Predictor, evaluate_predictor, next_step_conditional_entropy
from conefield.reconstruct import TestConfig, reconstruct_states
from conefield.systems import ALPHA, PARAMS, RULE184_RUN, rule184_system

LENGTHS = (2000, 10_000, 50_000)

sysm = rule184_system()
cfg = TestConfig(alpha=ALPHA)

if __name__ == "__main__":
    print("T\tstates\tlog_loss\toracle_H\tgap\tseconds")
    for T in LENGTHS:
        t0 = time.time()
        fields = sysm.data(T, 0, RULE184_RUN)
        s = reconstruct_states(build_cone_database(fields, sysm.graph, PARAMS, True), cfg, 0)
        rep = evaluate_predictor(Predictor(s, "marginal"), fields)
        h = next_step_conditional_entropy(fields, s)
        print(f"{T}\t{sum(s.state_counts())}\t{rep.log_loss_bits_per_point:.4f}\t{h:.4f}\t"
              f"{rep.log_loss_bits_per_point - h:+.4f}\t{time.time() - t0:.1f}")
