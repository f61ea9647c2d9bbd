import numpy as np
import pytest

from hetrinet.graph import NodeType, build_graph
from hetrinet.model import HeTriNetModel, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_graph():
    """One drug, one target, one disease, joined by a single triplet."""
    return build_graph([(0, 0, 0)])


def small_graph():
    triplets = [(0, 0, 0), (0, 1, 0), (1, 1, 1), (2, 0, 1), (2, 2, 2), (1, 2, 0), (3, 1, 2)]
    return build_graph(triplets, n_drugs=5, n_targets=3, n_diseases=3)


def random_features(graph, dims=(5, 4, 3), seed=0):
    r = np.random.default_rng(seed)
    return {k: r.normal(size=(graph.counts[k], dims[k])) for k in NodeType}


def tiny_model(dims=(5, 4, 3), seed=0, **kw):
    cfg = dict(hidden_dim=4, heads=2, layers=2, dropout_rate=0.0, decoder_hidden_dims=(6,))
    cfg.update(kw)
    return HeTriNetModel(ModelConfig(**cfg), dict(zip(NodeType, dims)), seed=seed)


def randomize(model, seed=0, scale=0.5):
    """Move every parameter off its initial value (e.g. the zero decoder output)."""
    r = np.random.default_rng(seed)
    for name, p in model.params.items():
        if not name.endswith("gate"):
            p.value[...] = r.normal(scale=scale, size=p.value.shape)
