import numpy as np
import pytest
from scipy import stats

from conftest import random_features, small_graph, tiny_model
from hetrinet import tensor as T
from hetrinet.graph import build_graph
from hetrinet.tensor import Parameter, Tape
from hetrinet.train import (
    AdamState,
    LossMode,
    NegativeSamplingError,
    SplitError,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    bce_loss,
    fit,
    margin_loss,
    positive_codes,
    sample_negative,
    sample_negatives,
    split,
    xavier_init,
)


def test_split_sizes_and_partition():
    data = [(i, 0, 0) for i in range(100)]
    train, val, test = split(data, TrainConfig(), seed=3)
    assert (len(train), len(val), len(test)) == (72, 8, 20)
    assert sorted(train + val + test) == data
    assert split(data, TrainConfig(), seed=3) == (train, val, test)
    assert split(data, TrainConfig(), seed=4) != (train, val, test)
    with pytest.raises(SplitError):
        split(data[:5], TrainConfig())


def test_negative_space_exhausted():
    g = build_graph([(0, 0, 0)])
    with pytest.raises(NegativeSamplingError):
        sample_negative((0, 0, 0), g, {(0, 0, 0)}, np.random.default_rng(0))


def test_negative_differs_in_one_slot():
    rng = np.random.default_rng(0)
    known = {(1, 1, 1), (1, 2, 1)}
    for _ in range(500):
        neg = sample_negative((1, 1, 1), (4, 5, 3), known, rng)
        assert sum(a != b for a, b in zip(neg[:3], (1, 1, 1))) == 1
        assert neg[:3] not in known
        assert neg.label == 0


def test_corrupted_slot_is_uniform():
    rng = np.random.default_rng(7)
    counts = (50, 60, 40)
    slots = np.zeros(3)
    for _ in range(10_000):
        neg = sample_negative((3, 4, 5), counts, {(3, 4, 5)}, rng)
        slots[[i for i in range(3) if neg[i] != (3, 4, 5)[i]][0]] += 1
    assert np.all(np.abs(slots / 10_000 - 1 / 3) < 0.02)
    assert stats.chisquare(slots).pvalue > 1e-3


def test_vectorized_negatives_avoid_known_positives():
    rng = np.random.default_rng(1)
    counts = (6, 5, 4)
    pos = np.array([(d, t, s) for d in range(3) for t in range(5) for s in range(2)])
    codes = positive_codes(pos, counts)
    known = set(map(tuple, pos))
    for _ in range(20):
        neg = sample_negatives(pos, counts, codes, rng)
        assert all(tuple(n) not in known for n in neg)
        assert np.all((neg != pos).sum(axis=1) == 1)


def test_margin_loss_examples():
    assert margin_loss([[1.0]], [[0.0]], 1.0).item() == 0.0
    assert margin_loss([[0.5]], [[0.5]], 1.0).item() == 1.0
    pos = Parameter([[5.0]])
    with Tape() as tape:
        loss = margin_loss(pos, [[0.0]], 1.0)
    T.backward(tape, loss)
    assert loss.item() == 0.0 and pos.grad[0, 0] == 0.0


def test_hinge_gradient_matches_finite_differences(rng):
    pos = Parameter(rng.uniform(0, 1, size=(30, 1)), name="pos")
    neg = Parameter(rng.uniform(0, 1, size=(30, 1)), name="neg")
    # keep every pair away from the kink
    gap = 1.0 + neg.value - pos.value
    neg.value[np.abs(gap) < 1e-3] += 0.01
    report = T.finite_diff_check(lambda: margin_loss(pos, neg, 1.0), [pos, neg])
    assert report.passed
    active = (1.0 + neg.value - pos.value) > 0
    np.testing.assert_array_equal(pos.grad, np.where(active, -1.0, 0.0))


def test_bce_loss_value():
    loss = bce_loss([[0.0], [2.0]], [[-1.0], [0.0]]).item()
    expect = np.log1p(np.exp(-0.0)) + np.log1p(np.exp(-2.0)) + np.log1p(np.exp(-1.0)) + np.log1p(np.exp(0.0))
    assert loss == pytest.approx(expect)


def test_adam_zero_gradient_leaves_params():
    p = np.array([[1.0, -2.0]])
    adam_step([p], [np.zeros_like(p)], AdamState())
    np.testing.assert_array_equal(p, [[1.0, -2.0]])


def test_adam_hand_unrolled_steps():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    p = np.array([[0.5, -1.0, 2.0]])
    g = np.array([[0.3, -2.0, 1e-4]])
    state = AdamState()
    adam_step([p], [g], state, lr, b1, b2, eps)
    # t = 1: m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps)
    expect = np.array([[0.5, -1.0, 2.0]]) - lr * g / (np.abs(g) + eps)
    np.testing.assert_allclose(p, expect, rtol=0, atol=1e-15)
    # t = 2 by hand
    m = (1 - b1) * g * b1 + (1 - b1) * g
    v = (1 - b2) * g**2 * b2 + (1 - b2) * g**2
    expect = expect - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
    adam_step([p], [g], state, lr, b1, b2, eps)
    np.testing.assert_allclose(p, expect, rtol=0, atol=1e-15)


def test_adam_is_elementwise():
    a, b = np.array([[1.0]]), np.array([[1.0]])
    state = AdamState()
    for g in (0.5, -0.2, 0.9):
        adam_step([a, b], [np.array([[g]]), np.array([[g]])], state)
    assert a[0, 0] == b[0, 0]


def test_xavier_bounds_mean_and_seed():
    w = xavier_init((300, 200), np.random.default_rng(0)).value
    bound = np.sqrt(6.0 / 500)
    assert np.all(np.abs(w) <= bound)
    sigma = bound / np.sqrt(3.0)
    assert abs(w.mean()) < 3 * sigma / np.sqrt(w.size)
    assert abs(w.std() - sigma) < 0.02 * sigma
    np.testing.assert_array_equal(w, xavier_init((300, 200), np.random.default_rng(0)).value)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(train_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    assert TrainConfig(loss_mode="binary_cross_entropy").loss_mode is LossMode.BINARY_CROSS_ENTROPY


def _fit(epochs=60, **kw):
    g = small_graph()
    feats = random_features(g)
    model = tiny_model(seed=1)
    cfg = TrainConfig(max_epochs=epochs, patience=epochs, learning_rate=0.01, seed=2, **kw)
    report = fit(g, feats, model, cfg)
    return g, feats, model, cfg, report


def test_training_loss_goes_down():
    *_, report = _fit(50)
    loss = report.train_loss
    assert min(loss[25:50]) < min(loss[:5])


def test_fit_is_deterministic():
    *_, a = _fit(30)
    g, feats, model, *_, b = _fit(30)
    assert a.to_dict(timing=False) == b.to_dict(timing=False)


def test_early_stopping_restores_best_state():
    g = small_graph()
    feats = random_features(g)
    model = tiny_model(seed=1)
    val = [(0, 0, 0), (1, 1, 1)]
    train = [t for t in g.triplets if t.key not in val]
    tg = build_graph(train, n_drugs=5, n_targets=3, n_diseases=3)
    cfg = TrainConfig(max_epochs=80, patience=10, learning_rate=0.05, seed=0)
    report = fit(tg, feats, model, cfg, validation=val)
    best = report.best_validation_loss
    assert best == min(report.validation_loss)
    assert all(best <= v for v in report.validation_loss[report.best_epoch :])
    if report.stopped_early:
        assert report.epochs_run == report.best_epoch + cfg.patience


def test_bce_mode_trains():
    *_, report = _fit(20, loss_mode="binary_cross_entropy")
    assert np.all(np.isfinite(report.train_loss))
    assert report.train_loss[-1] < report.train_loss[0]


def test_minibatches_cover_all_positives():
    *_, report = _fit(5, batch_size=2)
    assert report.epochs_run == 5


def test_nan_features_raise_divergence():
    g = small_graph()
    feats = random_features(g)
    feats[next(iter(feats))][0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="epoch 1"):
        fit(g, feats, tiny_model(), TrainConfig(max_epochs=3, patience=3))


def test_train_report_json_has_schema():
    *_, report = _fit(3)
    text = report.to_json(timing=False)
    assert '"schema": "hetrinet-train-report/1"' in text
    assert "seconds" not in text
