import itertools

import numpy as np
import pytest

from hetrinet.evaluate import roc_auc
from hetrinet.graph import NodeType
from hetrinet.synth import SynthConfig, generate


def _brute_logits(ds):
    ud, ut, us = (ds.latents[k] for k in NodeType)
    cfg = ds.config
    out = {}
    for d, t, s in itertools.product(range(cfg.drugs), range(cfg.targets), range(cfg.diseases)):
        out[(d, t, s)] = float(ud[d] @ ut[t] + ud[d] @ us[s] + np.sum(ut[t] * us[s] * ds.w))
    return out


def test_noise_free_positives_are_the_top_cells():
    cfg = SynthConfig(drugs=3, targets=3, diseases=3, positive_count=5, noise_flip_rate=0.0, seed=2)
    ds = generate(cfg)
    logits = _brute_logits(ds)
    top = sorted(logits, key=lambda c: -logits[c])[:5]
    assert sorted(ds.positives) == sorted(top)


def test_same_seed_same_dataset():
    a, b = generate(SynthConfig(seed=3)), generate(SynthConfig(seed=3))
    assert a.positives == b.positives and a.heldout == b.heldout
    for k in NodeType:
        np.testing.assert_array_equal(a.features[k], b.features[k])
    assert generate(SynthConfig(seed=4)).positives != a.positives


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(latent_dim=0)
    with pytest.raises(ValueError):
        SynthConfig(drugs=2, targets=2, diseases=2, positive_count=9)
    with pytest.raises(ValueError):
        SynthConfig(noise_flip_rate=0.6)


def test_oracle_separates_heldout_at_zero_noise():
    ds = generate(SynthConfig(drugs=20, targets=20, diseases=15, positive_count=300, noise_flip_rate=0.0, seed=1))
    labels = [t[3] for t in ds.heldout]
    assert roc_auc(labels, ds.oracle_scores(ds.heldout)) >= 0.99


def test_positives_lie_in_the_graph_closure():
    ds = generate(SynthConfig())
    for d, t, s in ds.positives:
        assert (d, t) in ds.graph.dt_edges and (d, s) in ds.graph.ds_edges
    assert len(set(ds.positives)) == len(ds.positives) == 2000


def test_label_noise_rate():
    ds = generate(SynthConfig(noise_flip_rate=0.05))
    clean = {tuple(t[:3]) for t in ds.heldout if t[3] == 1}
    swapped = sum(1 for p in ds.positives if p not in clean)
    assert abs(swapped / 2000 - 0.05) < 0.015


def test_heldout_pairs_one_negative_per_positive():
    ds = generate(SynthConfig(drugs=10, targets=10, diseases=10, positive_count=100))
    labels = np.array([t[3] for t in ds.heldout])
    assert labels.sum() == 100 and len(labels) == 200
    pos = {tuple(t[:3]) for t in ds.heldout if t[3] == 1}
    assert all(tuple(t[:3]) not in pos for t in ds.heldout if t[3] == 0)


def test_feature_shapes():
    ds = generate(SynthConfig(raw_feature_dim=12))
    assert ds.features[NodeType.DRUG].shape == (50, 12)
    assert ds.features[NodeType.TARGET].shape == (60, 12)
    assert ds.features[NodeType.DISEASE].shape == (40, 12)
