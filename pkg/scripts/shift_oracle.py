"""Reconstructed vs oracle partitions for the shift, as training data grows.

For each total length, counts the field seeds whose reconstructed partition
equals the oracle's and reports the mean local complexity.
"""
import numpy as np

from conefield.cones import build_cone_database
from conefield.info import local_complexity
from conefield.prediction import label_fields
from conefield.reconstruct import StateField, TestConfig, exact_conditionals, oracle_states, \
    reconstruct_states, restrict_partition
from conefield.systems import ALPHA, PARAMS, SHIFT_TRAIN_RUN, shift_system

LENGTHS = (300, 1000, 3000, 10_000)
SEEDS = range(20)

sysm = shift_system()
cfg = TestConfig(alpha=ALPHA)

if __name__ == "__main__":
    for pooling in (True, False):
        oracle = oracle_states(exact_conditionals(sysm.graph, sysm.rule, PARAMS, pooling),
                               sysm.graph, PARAMS, pooling, 2)
        print(f"pooling={pooling}")
        print("T\tmatches\tmean_C_bits")
        for T in LENGTHS:
            matches, cs = 0, []
            for seed in SEEDS:
                fields = sysm.data(T, seed, SHIFT_TRAIN_RUN)
                db = build_cone_database(fields, sysm.graph, PARAMS, pooling)
                s = reconstruct_states(db, cfg, seed)
                ok = all(s.partition(k) == restrict_partition(oracle.partition(k), cc.past_codes.tolist())
                         for k, cc in enumerate(db.counts))
                matches += ok
                sfs = label_fields(fields, s)
                merged = StateField(np.vstack([x.labels for x in sfs]), sfs[0].vertex_class)
                rep = local_complexity(merged, db, s)
                cs.append(np.mean([c.c_bits for c in rep.classes]))
            print(f"{T}\t{matches}/{len(SEEDS)}\t{np.mean(cs):.4f}")
