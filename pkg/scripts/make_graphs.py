"""Write the reference graphs (rings and the degree-capped random tree) as graph files."""
import sys
from pathlib import Path

from conefield.graph import random_connected_graph, ring_graph
from conefield.systems import IID_GRAPH_SEED

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "graphs")

GRAPHS = {
    "ring8.g": ring_graph(8),
    "ring32.g": ring_graph(32),
    "ring64.g": ring_graph(64),
    "tree20.g": random_connected_graph(20, IID_GRAPH_SEED, max_degree=3),
}

if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, g in GRAPHS.items():
        (OUT / name).write_text(g.to_text())
        print(f"{OUT / name}: {g.vertex_count} vertices, {len(g.edges)} edges")
