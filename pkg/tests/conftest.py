import os

import numpy as np
import pytest

from sparsegnn.graphs import Graph, GraphDataset
from sparsegnn.tensor import softmax_cross_entropy

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA_DIR = os.path.join(REPO_ROOT, "data")


@pytest.fixture(scope="session")
def mutag_dir():
    return os.path.join(DATA_DIR, "MUTAG")


@pytest.fixture(scope="session")
def proteins_dir():
    return os.path.join(DATA_DIR, "PROTEINS")


def make_toy_dataset(n_graphs=40, seed=0, edge_dim=2):
    """Synthetic binary graph classification, easily separable.

    Node features are one-hot over two atom types; the label says which type
    is in the majority. Structures vary (paths, cycles, stars) so the task
    is trivial for feature pooling but still exercises message passing.
    """
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n_graphs):
        n = int(rng.integers(3, 7))
        kind = i % 3
        if kind == 0:
            edges = [(j, j + 1) for j in range(n - 1)]
        elif kind == 1:
            edges = [(j, (j + 1) % n) for j in range(n)]
        else:
            edges = [(0, j) for j in range(1, n)]
        label = int(rng.integers(0, 2))
        majority = max(2, int(np.ceil(n * 0.7)))
        types = np.zeros(n, dtype=int)
        types[:majority] = label
        types[majority:] = 1 - label
        rng.shuffle(types)
        node_features = np.eye(2)[types]
        if edge_dim:
            edge_features = np.eye(edge_dim)[rng.integers(0, edge_dim, size=len(edges))]
        else:
            edge_features = np.zeros((len(edges), 0))
        graphs.append(Graph(num_nodes=n, edges=np.array(edges),
                            node_features=node_features,
                            edge_features=edge_features, label=label))
    return GraphDataset(name="TOY", graphs=graphs, num_classes=2,
                        node_dim=2, edge_dim=edge_dim)


@pytest.fixture()
def toy_dataset():
    return make_toy_dataset()


def random_graph_5n6e(seed=42, node_dim=4, edge_dim=3):
    rng = np.random.default_rng(seed)
    edges = np.array([[0, 1], [1, 2], [2, 3], [3, 4], [4, 0], [1, 3]])
    return Graph(num_nodes=5, edges=edges,
                 node_features=rng.normal(size=(5, node_dim)),
                 edge_features=rng.normal(size=(6, edge_dim)), label=1)


def central_diff(param, loss_fn, h=1e-5):
    """Central finite differences of loss_fn() w.r.t. every entry of param."""
    flat = param.data.ravel()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        fd[i] = (up - down) / (2 * h)
    return fd.reshape(param.data.shape)


def assert_grad_close(analytic, fd, rtol=1e-4, atol=1e-8):
    analytic = np.zeros_like(fd) if analytic is None else analytic
    bound = atol + rtol * np.maximum(np.abs(analytic), np.abs(fd))
    bad = np.abs(analytic - fd) > bound
    assert not bad.any(), (
        f"gradient mismatch at {np.argwhere(bad)[0]}: "
        f"analytic={analytic[bad][0]}, fd={fd[bad][0]}")


def model_loss_fn(model, batch):
    def loss_fn():
        logits = model.forward(batch, training=True)
        return float(softmax_cross_entropy(logits, batch.labels).data)
    return loss_fn
