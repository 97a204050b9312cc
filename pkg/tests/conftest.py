import numpy as np
import pytest

from gfmate.graph import Graph


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_graph(edges, num_nodes, feat=None, labels=None, num_classes=0, domain_id="t"):
    if feat is None:
        feat = np.arange(num_nodes * 2, dtype=float).reshape(num_nodes, 2)
    return Graph(
        num_nodes=num_nodes,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        features=feat,
        labels=labels,
        domain_id=domain_id,
        num_classes=num_classes,
    )
