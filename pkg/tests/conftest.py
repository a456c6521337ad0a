import numpy as np
import pytest

from bnstudy.bn import Cpt, VariableSpec, build_network, load_network
from bnstudy.data import asia_path


@pytest.fixture(scope="session")
def asia():
    return load_network(asia_path())


@pytest.fixture()
def two_independent_binaries():
    """P(X=1)=0.3, P(Y=1)=0.6, no edge."""
    variables = [VariableSpec("X", ("x0", "x1")), VariableSpec("Y", ("y0", "y1"))]
    cpts = [
        Cpt("X", (), np.array([[0.7, 0.3]])),
        Cpt("Y", (), np.array([[0.4, 0.6]])),
    ]
    return build_network(variables, [], cpts)


def random_dag_edges(rng, n_nodes, edge_prob=0.4):
    """Random DAG as edges over v0..v{n-1}; orientation follows index order."""
    names = [f"v{i}" for i in range(n_nodes)]
    edges = []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < edge_prob:
                edges.append((names[i], names[j]))
    return names, edges
