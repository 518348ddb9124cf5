"""How often the iid null yields one state per class, across graph seeds and pooling.

Prints, for each graph seed, the number of field seeds (out of 20) with a
single state in every vertex class, pooled and unpooled, plus the largest
degree of the graph.
"""
import time

import numpy as np

from conefield.cones import build_cone_database
from conefield.reconstruct import TestConfig, reconstruct_states
from conefield.systems import ALPHA, PARAMS, iid_system

GRAPH_SEEDS = range(5)
FIELD_SEEDS = range(20)
T = 5000
cfg = TestConfig(alpha=ALPHA)


def single_state_count(sysm, pooling):
    hits = 0
    for seed in FIELD_SEEDS:
        f = sysm.data(T, seed)
        s = reconstruct_states(build_cone_database(f, sysm.graph, PARAMS, pooling), cfg, seed)
        hits += max(s.state_counts()) == 1
    return hits


if __name__ == "__main__":
    print("graph_seed\tmax_degree\tpooled\tunpooled\tseconds")
    for gs in GRAPH_SEEDS:
        t0 = time.time()
        sysm = iid_system(gs)
        deg = max(sysm.graph.degree(v) for v in range(sysm.graph.vertex_count))
        pooled = single_state_count(sysm, True)
        unpooled = single_state_count(sysm, False)
        print(f"{gs}\t{deg}\t{pooled}/20\t{unpooled}/20\t{time.time() - t0:.1f}")
