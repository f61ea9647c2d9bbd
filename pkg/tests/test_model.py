import numpy as np
import pytest

from conftest import random_features, randomize, small_graph, tiny_model, toy_graph
from hetrinet import tensor as T
from hetrinet.graph import NodeType, build_graph, build_pair_index
from hetrinet.model import (
    CheckpointError,
    HeTriNetModel,
    ModelConfig,
    PairMessageMode,
    aggregate,
    attention_logits,
    multi_head_concat,
    multi_head_output,
    normalize,
    pair_message,
    project,
    triplet_arrays,
)
from hetrinet.tensor import Tensor

CFG = ModelConfig(hidden_dim=2, heads=1, layers=1, dropout_rate=0.0)


def _head(dh=1, **over):
    head = {
        "att_w1": Tensor(np.zeros((3 * dh, dh))),
        "att_b1": Tensor(np.zeros((1, dh))),
        "att_w2": Tensor(np.zeros((dh, 1))),
        "att_b2": Tensor(np.zeros((1, 1))),
        "msg_w": Tensor(np.zeros((2 * dh, dh))),
        "msg_b": Tensor(np.zeros((1, dh))),
    }
    head.update({k: Tensor(v) for k, v in over.items()})
    return head


# -- building blocks -------------------------------------------------------


def test_project_examples():
    h = Tensor([[1.0, -2.0]])
    np.testing.assert_array_equal(project(h, Tensor(np.eye(2))).value, h.value)
    np.testing.assert_array_equal(project(Tensor(np.zeros((1, 3))), Tensor(np.ones((3, 2)))).value, [[0, 0]])
    m = Tensor([[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]])
    # [1, 2, -1] @ m = [1 + 0 - 3, 2 - 2 - 0.5]
    np.testing.assert_allclose(project(Tensor([[1.0, 2.0, -1.0]]), m).value, [[-2.0, -0.5]])
    with pytest.raises(T.ShapeError):
        project(Tensor(np.ones((1, 2))), m)


def test_attention_zero_net_gives_zero_logits(rng):
    h = [Tensor(rng.normal(size=(5, 2))) for _ in range(3)]
    out = attention_logits(*h, _head(2), CFG)
    np.testing.assert_array_equal(out.value, np.zeros((5, 1)))


def test_attention_is_order_sensitive(rng):
    hd = _head(2, att_w1=rng.normal(size=(6, 2)), att_w2=rng.normal(size=(2, 1)))
    hi, hj, hk = (Tensor(rng.normal(size=(1, 2))) for _ in range(3))
    assert attention_logits(hi, hj, hk, hd, CFG).item() != attention_logits(hi, hk, hj, hd, CFG).item()


def test_attention_scalar_walkthrough():
    # 1-d: hidden = relu(1*hi + 2*hj - 1*hk + 0.5), e = leaky(-3 * hidden + 1)
    hd = _head(1, att_w1=[[1.0], [2.0], [-1.0]], att_b1=[[0.5]], att_w2=[[-3.0]], att_b2=[[1.0]])
    cfg = ModelConfig(hidden_dim=1, heads=1, leaky_slope=0.2)
    e = attention_logits(Tensor([[1.0]]), Tensor([[0.5]]), Tensor([[2.0]]), hd, cfg).item()
    hidden = max(0.0, 1.0 + 1.0 - 2.0 + 0.5)
    pre = -3.0 * hidden + 1.0
    assert e == pytest.approx(0.2 * pre)


def test_normalize_examples():
    np.testing.assert_array_equal(normalize(Tensor([[3.7]])).value, [[1.0]])
    np.testing.assert_allclose(normalize(Tensor(np.full((4, 1), 0.3))).value[:, 0], [0.25] * 4)
    np.testing.assert_allclose(normalize(Tensor([[np.log(2.0)], [0.0]])).value[:, 0], [2 / 3, 1 / 3])
    with pytest.raises(ValueError):
        normalize(Tensor(np.zeros((0, 1))))


def test_pair_message_examples(rng):
    hj = Tensor(rng.normal(size=(3, 2)))
    hk = Tensor(-hj.value)
    cfg = lambda mode: ModelConfig(hidden_dim=2, heads=1, pair_message_mode=mode)
    np.testing.assert_array_equal(pair_message(hj, hk, {}, cfg("sum")).value, np.zeros((3, 2)))
    out = pair_message(Tensor([[2.0, 3.0]]), Tensor([[4.0, 5.0]]), {}, cfg("elem_prod"))
    np.testing.assert_array_equal(out.value, [[8.0, 15.0]])
    hd = _head(2, msg_b=[[0.3, 1.2]])
    np.testing.assert_allclose(pair_message(hj, hk, hd, cfg("full_nn")).value, np.tile([0.3, 1.2], (3, 1)))
    w = rng.normal(size=(4, 2))
    lin = pair_message(hj, hk, _head(2, msg_w=w), cfg("trans")).value
    np.testing.assert_allclose(lin, np.hstack([hj.value, hk.value]) @ w)


def test_aggregate_gate_closed(rng):
    hi = Tensor(rng.normal(size=(2, 3)))
    msg = Tensor(rng.normal(size=(4, 3)))
    alpha = Tensor(np.full((4, 1), 0.5))
    z = aggregate(hi, alpha, msg, np.array([0, 0, 1, 1]), Tensor([[0.0]]), CFG)
    np.testing.assert_array_equal(z.value, np.maximum(hi.value, 0))


def test_aggregate_single_pair_positive_inputs():
    hi, m = Tensor([[1.0, 2.0]]), Tensor([[0.5, 0.25]])
    z = aggregate(hi, Tensor([[1.0]]), m, np.array([0]), Tensor([[3.0]]), CFG)
    np.testing.assert_allclose(z.value, hi.value + 3.0 * m.value)


def test_aggregate_ignores_pair_order(rng):
    hi = Tensor(rng.normal(size=(3, 2)))
    msg = rng.normal(size=(7, 2))
    alpha = rng.random(size=(7, 1))
    centers = np.array([0, 0, 0, 2, 2, 1, 1])
    base = aggregate(hi, Tensor(alpha), Tensor(msg), centers, Tensor([[0.7]]), CFG).value
    perm = rng.permutation(7)
    again = aggregate(hi, Tensor(alpha[perm]), Tensor(msg[perm]), centers[perm], Tensor([[0.7]]), CFG).value
    np.testing.assert_allclose(again, base, atol=1e-12)


def test_multi_head_combinations():
    v = Tensor([[1.0, 2.0]])
    assert multi_head_concat([v]) is v
    np.testing.assert_array_equal(multi_head_concat([v, Tensor([[3.0, 4.0]])]).value, [[1, 2, 3, 4]])
    out = multi_head_output([v, v], Tensor(np.eye(2)), Tensor(np.zeros((1, 2))))
    np.testing.assert_array_equal(out.value, v.value)


# -- whole encoder ---------------------------------------------------------


def _set(model, name, value):
    model.params[name].value[...] = np.asarray(value, dtype=float)


def test_encode_trivial_composition(rng):
    g = small_graph()
    feats = random_features(g)
    model = tiny_model(hidden_dim=3, heads=1, layers=1)
    for name, p in model.params.items():
        if name.startswith("layer0.head0.att") or name.endswith("gate"):
            p.value[...] = 0.0
    _set(model, "out.w", np.eye(3))
    z = model.encode(g, feats).value
    for kind in NodeType:
        rows = slice(g.offset(kind), g.offset(kind) + g.counts[kind])
        np.testing.assert_allclose(z[rows], np.maximum(feats[kind] @ model.params[f"proj.{kind.label}"].value, 0))


def test_encode_golden_toy_graph():
    """Scalar walkthrough on one triplet (d=2, K=1, L=1, ReLU).

    h'_d = (1, 0), h'_t = (0, 2), h'_s = (-1, -1). Every center has exactly one
    pair, so alpha = 1 whatever the attention net says. The message net sums
    its two inputs and adds b = (0, 0.5); the self-gate is 0.5.

      drug:    m = relu((-1, 1.5)) = (0, 1.5);  z = relu((1, 0.75))    = (1, 0.75)
      target:  m = relu((0, -0.5)) = (0, 0);    z = relu((0, 2))       = (0, 2)
      disease: m = relu((1, 2.5))  = (1, 2.5);  z = relu((-0.5, 0.25)) = (0, 0.25)
    """
    g = toy_graph()
    feats = {NodeType.DRUG: np.array([[1.0]]), NodeType.TARGET: np.array([[2.0]]), NodeType.DISEASE: np.array([[-1.0]])}
    model = HeTriNetModel(CFG, {k: 1 for k in NodeType}, seed=5)
    _set(model, "proj.drug", [[1.0, 0.0]])
    _set(model, "proj.target", [[0.0, 1.0]])
    _set(model, "proj.disease", [[1.0, 1.0]])
    _set(model, "layer0.head0.msg_w", np.vstack([np.eye(2), np.eye(2)]))
    _set(model, "layer0.head0.msg_b", [[0.0, 0.5]])
    _set(model, "layer0.head0.gate", [[0.5]])
    _set(model, "out.w", np.eye(2))
    z = model.encode(g, feats).value
    np.testing.assert_allclose(z, [[1.0, 0.75], [0.0, 2.0], [0.0, 0.25]], atol=1e-15)

    # decoder with no hidden layer: sigmoid(w . [z_d, z_t, z_s] + b)
    model2 = HeTriNetModel(ModelConfig(hidden_dim=2, heads=1, layers=1, dropout_rate=0.0, decoder_hidden_dims=()), {k: 1 for k in NodeType})
    _set(model2, "dec0.w", [[0.5], [0.0], [0.0], [1.0], [0.0], [-2.0]])
    _set(model2, "dec0.b", [[-1.0]])
    # 0.5*1 + 1*2 - 2*0.25 - 1 = 1
    score = model2.decode(Tensor(z), np.array([[0, 1, 2]])).item()
    assert score == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-15)


def test_fresh_decoder_scores_one_half():
    g = small_graph()
    feats = random_features(g)
    model = tiny_model()
    scores = model.score(g, feats, [(0, 0, 0), (4, 2, 1), (1, 1, 1)])
    np.testing.assert_array_equal(scores, 0.5)


def test_decoder_is_order_sensitive(rng):
    model = tiny_model()
    randomize(model)
    z = Tensor(rng.normal(size=(11, 4)))
    a = model.decode(z, np.array([[0, 5, 8]])).item()
    b = model.decode(z, np.array([[5, 0, 8]])).item()
    assert a != b


def test_scores_strictly_inside_unit_interval(rng):
    g = small_graph()
    model = tiny_model()
    randomize(model, scale=0.5)
    # float64 sigmoid rounds to exactly 0 or 1 beyond |logit| ~ 37, so the
    # open-interval property is checked at ordinary weight scales
    s = model.score(g, random_features(g), [(d, t, x) for d in range(5) for t in range(3) for x in range(3)])
    assert np.all((s > 0) & (s < 1))


def test_encode_is_deterministic_in_eval_mode():
    g = small_graph()
    feats = random_features(g)
    model = tiny_model(dropout_rate=0.3)
    randomize(model)
    np.testing.assert_array_equal(model.encode(g, feats).value, model.encode(g, feats).value)
    trained = model.encode(g, feats, training=True, rng=np.random.default_rng(0)).value
    assert not np.array_equal(trained, model.encode(g, feats).value)


def _literal_encode(model, graph, feats, pairs):
    """Reference forward with explicit per-pair concatenation."""
    cfg = model.config
    h = T.concat_rows(*[project(Tensor(feats[k]), model.params[f"proj.{k.label}"]) for k in NodeType])
    dh = cfg.head_dim
    for layer in range(cfg.layers):
        outs = []
        for k in range(cfg.heads):
            hp = model.head(layer, k)
            hk = T.slice_cols(h, k * dh, (k + 1) * dh)
            hi, hj, hh = (T.gather_rows(hk, ix) for ix in (pairs.center, pairs.j, pairs.k))
            alpha = normalize(attention_logits(hi, hj, hh, hp, cfg), pairs.center, graph.n_nodes)
            msg = pair_message(hj, hh, hp, cfg)
            outs.append(aggregate(hk, alpha, msg, pairs.center, hp["gate"], cfg))
        if layer == cfg.layers - 1:
            h = multi_head_output(outs, model.params["out.w"], model.params["out.b"])
        else:
            h = multi_head_concat(outs)
    return h


@pytest.mark.parametrize("mode", [m.value for m in PairMessageMode])
@pytest.mark.parametrize("activation", ["relu", "elu", "leaky_relu"])
def test_fast_path_matches_literal_concat(mode, activation):
    g = small_graph()
    feats = random_features(g)
    model = tiny_model(pair_message_mode=mode, activation=activation)
    randomize(model, seed=3)
    pairs = build_pair_index(g, 64, 0)
    fast = model.encode(g, feats, pairs).value
    slow = _literal_encode(model, g, feats, pairs).value
    np.testing.assert_allclose(fast, slow, atol=1e-12, rtol=0)

    idx = triplet_arrays(g, [(0, 0, 0), (3, 2, 1)])
    x = Tensor(np.hstack([fast[idx[:, 0]], fast[idx[:, 1]], fast[idx[:, 2]]]))
    ref = x
    for i in range(model._n_dec):
        ref = T.add(T.matmul(ref, model.params[f"dec{i}.w"]), model.params[f"dec{i}.b"])
        if i < model._n_dec - 1:
            ref = T.activation(ref, activation, model.config.leaky_slope)
    np.testing.assert_allclose(model.decode_logits(Tensor(fast), idx).value, ref.value, atol=1e-12)


def test_isolated_node_falls_back_to_self_path():
    g = build_graph([(0, 0, 0)], n_drugs=2)
    feats = random_features(g)
    model = tiny_model(heads=1, layers=1)
    randomize(model)
    model.params["out.w"].value[...] = np.eye(4)
    model.params["out.b"].value[...] = 0.0
    z = model.encode(g, feats).value
    expect = np.maximum(feats[NodeType.DRUG][1] @ model.params["proj.drug"].value, 0)
    np.testing.assert_allclose(z[1], expect)


@pytest.mark.parametrize("mode", [m.value for m in PairMessageMode])
def test_end_to_end_gradient_check_each_mode(mode):
    g = small_graph()
    feats = random_features(g)
    model = tiny_model(pair_message_mode=mode, activation="elu")
    randomize(model, seed=1)
    pairs = build_pair_index(g, 64, 0)
    idx = triplet_arrays(g, [(0, 0, 0), (2, 2, 2), (4, 1, 0)])

    def loss():
        z = model.encode(g, feats, pairs)
        return T.sum_all(model.decode(z, idx))

    report = T.finite_diff_check(loss, model.parameters())
    assert report.passed, report


def test_gradient_check_with_default_decoder_widths():
    g = toy_graph()
    r = np.random.default_rng(0)
    feats = {k: r.normal(size=(1, 3)) for k in NodeType}
    model = HeTriNetModel(ModelConfig(hidden_dim=4, heads=2, layers=2, dropout_rate=0.0), {k: 3 for k in NodeType})
    randomize(model, seed=3)
    pairs = build_pair_index(g, 64, 0)
    idx = triplet_arrays(g, [(0, 0, 0)])

    def loss():
        z = model.encode(g, feats, pairs)
        return T.sum_all(model.decode_logits(z, idx))

    report = T.finite_diff_check(loss, model.parameters())
    assert report.passed, report


def test_concat_mode_keeps_reduction_frozen():
    model = tiny_model(pair_message_mode="concat")
    assert "layer0.head0.msg_w" in model.buffers
    assert "layer0.head0.msg_w" not in model.params
    trans = tiny_model(pair_message_mode="trans")
    assert "layer0.head0.msg_w" in trans.params and "layer0.head0.msg_b" not in trans.params


def test_parameter_count_is_a_function_of_config():
    a, b = tiny_model(seed=0), tiny_model(seed=9)
    assert a.n_parameters() == b.n_parameters()
    d, dh, k, layers = 4, 2, 2, 2
    per_head = 3 * dh * dh + dh + dh + 1 + 2 * dh * dh + dh + 1
    expect = (5 + 4 + 3) * d + layers * k * per_head + dh * d + d + (3 * d * 6 + 6) + (6 + 1)
    assert a.n_parameters() == expect


def test_initialization():
    model = tiny_model(seed=4)
    for name, p in model.params.items():
        if name.endswith("gate"):
            assert np.all(p.value == 1.0)
        elif name.endswith((".b", "_b1", "_b2", "msg_b")):
            assert np.all(p.value == 0.0)
    assert np.all(model.params["dec1.w"].value == 0.0)
    w = model.params["layer0.head0.att_w1"].value
    assert np.all(np.abs(w) <= np.sqrt(6.0 / (6 + 2)))


def test_checkpoint_round_trip(tmp_path):
    g = small_graph()
    feats = random_features(g)
    model = tiny_model(pair_message_mode="concat")
    randomize(model, seed=2)
    model.save(tmp_path / "m.json", extra={"note": 1})
    again = HeTriNetModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(again.encode(g, feats).value, model.encode(g, feats).value)
    assert again.config == model.config


def test_checkpoint_errors(tmp_path):
    model = tiny_model()
    data = model.to_checkpoint()
    with pytest.raises(CheckpointError):
        HeTriNetModel.from_checkpoint({**data, "format": "other"})
    with pytest.raises(CheckpointError):
        HeTriNetModel.from_checkpoint({**data, "version": 99})
    other = tiny_model(hidden_dim=8)
    with pytest.raises(CheckpointError, match="shape"):
        other.load_state(model.state())


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(hidden_dim=6, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(layers=0)
    with pytest.raises(ValueError):
        ModelConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        ModelConfig(activation="tanh")


def test_missing_features_name_the_node():
    g = small_graph()
    feats = random_features(g)
    feats[NodeType.TARGET] = feats[NodeType.TARGET][:2]
    with pytest.raises(KeyError, match="target"):
        tiny_model().encode(g, feats)
