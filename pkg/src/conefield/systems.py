"""The three reference systems used by the acceptance tests and experiment scripts.

* ``iid``: fair-coin field on a 20-vertex random tree (degree at most 3).
* ``shift``: binary left shift on a 32-ring, iid initial slice.
* ``rule184``: elementary rule 184 on a 64-ring, iid initial slice.

The deterministic rules are sampled as ensembles of short independent runs.
A single long run of the shift on a ring is periodic, so its time average
does not sample the process; independent runs from fresh iid slices do.
"""
from __future__ import annotations

from dataclasses import dataclass

from .field import LocalRule, SimConfig, iid_rule, rule184, shift_rule, simulate, simulate_ensemble
from .graph import ConeParams, Graph, cone_template, random_connected_graph, ring_graph, PAST, FUTURE

PARAMS = ConeParams(speed_c=1, past_depth=2, future_depth=1)
ALPHA = 0.001
IID_GRAPH_SEED = 1


@dataclass(frozen=True)
class System:
    name: str
    graph: Graph
    rule: LocalRule
    params: ConeParams = PARAMS

    def data(self, total_steps: int, seed: int, run_length: int | None = None) -> list:
        """``total_steps`` time steps per vertex, split into runs of ``run_length``."""
        if run_length is None or run_length >= total_steps:
            return [simulate(self.graph, self.rule, SimConfig(total_steps, seed))]
        runs = max(1, total_steps // run_length)
        return simulate_ensemble(self.graph, self.rule, SimConfig(run_length, seed), runs)


def iid_system(graph_seed: int = IID_GRAPH_SEED) -> System:
    return System("iid", random_connected_graph(20, graph_seed, max_degree=3), iid_rule((0.5, 0.5)))


def shift_system() -> System:
    return System("shift", ring_graph(32), shift_rule())


def rule184_system() -> System:
    return System("rule184", ring_graph(64), rule184())


# run lengths: training runs just long enough for one full cone, evaluation runs
# long enough for lagged diagnostics
SHIFT_TRAIN_RUN = PARAMS.past_depth + PARAMS.future_depth
EVAL_RUN = 10
RULE184_RUN = 10


def smallest_patch(g: Graph, p: ConeParams) -> tuple:
    """The edge whose joint past and future cones have the fewest points."""
    best = None
    for a, b in g.sorted_edges():
        size = sum(len(set(cone_template(g, a, p, d).offsets) | set(cone_template(g, b, p, d).offsets))
                   for d in (PAST, FUTURE))
        if best is None or size < best[0]:
            best = (size, (a, b))
    return best[1]
