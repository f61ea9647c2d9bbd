"""Triplet-attention encoder and triplet-scoring decoder.

Each layer runs ``K`` heads; head ``k`` reads columns ``k*d/K:(k+1)*d/K`` of
the layer input. For a center ``i`` with neighbor pairs ``(j, k)`` a head
computes

    e_ijk   = LeakyReLU(NN_att(h_i || h_j || h_k))
    a_ijk   = softmax of e_ijk over the center's pairs
    z_i     = act(h_i + W * sum_jk a_ijk * msg(h_j, h_k))

Hidden layers concatenate head outputs; the last layer averages them and maps
the average back to ``d`` with a linear layer. The decoder is an MLP over
``z_drug || z_target || z_disease`` with a sigmoid output.

All per-center work is batched: pairs of every node are stacked row-wise
(:class:`~hetrinet.graph.PairIndex`) and reduced with segment ops.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tensor as T
from .graph import HeteroGraph, NodeType, PairIndex, build_pair_index
from .tensor import Parameter, Tensor

__all__ = [
    "Activation",
    "PairMessageMode",
    "ModelConfig",
    "CheckpointError",
    "HeTriNetModel",
    "xavier_uniform",
    "project",
    "attention_logits",
    "normalize",
    "pair_message",
    "aggregate",
    "multi_head_concat",
    "multi_head_output",
    "triplet_arrays",
]

CHECKPOINT_FORMAT = "hetrinet-checkpoint"
CHECKPOINT_VERSION = 1


class Activation(str, enum.Enum):
    RELU = "relu"
    ELU = "elu"
    LEAKY_RELU = "leaky_relu"


class PairMessageMode(str, enum.Enum):
    FULL_NN = "full_nn"
    SUM = "sum"
    CONCAT = "concat"
    ELEM_PROD = "elem_prod"
    TRANS = "trans"


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    heads: int = 4
    layers: int = 2
    leaky_slope: float = 0.2
    dropout_rate: float = 0.2
    activation: Activation = Activation.RELU
    pair_message_mode: PairMessageMode = PairMessageMode.FULL_NN
    decoder_hidden_dims: tuple[int, ...] = (128, 32)
    neighbor_cap: int = 64

    def __post_init__(self):
        self.activation = Activation(self.activation)
        self.pair_message_mode = PairMessageMode(self.pair_message_mode)
        self.decoder_hidden_dims = tuple(int(x) for x in self.decoder_hidden_dims)
        if self.hidden_dim < 1 or self.heads < 1 or self.hidden_dim % self.heads:
            raise ValueError(
                f"hidden_dim ({self.hidden_dim}) must be a positive multiple of heads ({self.heads})"
            )
        if self.layers < 1:
            raise ValueError("layers must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.neighbor_cap < 1:
            raise ValueError("neighbor_cap must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["activation"] = self.activation.value
        d["pair_message_mode"] = self.pair_message_mode.value
        d["decoder_hidden_dims"] = list(self.decoder_hidden_dims)
        return d


class CheckpointError(ValueError):
    pass


def xavier_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Uniform on +-sqrt(6 / (fan_in + fan_out)); ``shape`` is (fan_in, fan_out)."""
    fan_in, fan_out = shape
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"xavier_uniform needs positive dims, got {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# -- per-step building blocks ----------------------------------------------


def project(raw: Tensor, weight: Tensor) -> Tensor:
    """Map raw features (rows) into the shared space: ``h' = h @ M``."""
    if raw.shape[1] != weight.shape[0]:
        raise T.ShapeError("project", raw.shape, weight.shape)
    return T.matmul(raw, weight)


def attention_logits(h_i: Tensor, h_j: Tensor, h_k: Tensor, head: Mapping, config: ModelConfig) -> Tensor:
    """One unnormalized logit per row: ``LeakyReLU(NN_att(h_i || h_j || h_k))``.

    Rows are pairs; ``h_i`` is the center repeated per pair. An empty input
    gives an empty ``(0, 1)`` result.
    """
    x = T.concat_cols(h_i, h_j, h_k)
    hidden = T.activation(T.add(T.matmul(x, head["att_w1"]), head["att_b1"]), config.activation, config.leaky_slope)
    out = T.add(T.matmul(hidden, head["att_w2"]), head["att_b2"])
    return T.leaky_relu(out, config.leaky_slope)


def normalize(logits: Tensor, centers: np.ndarray | None = None, n_centers: int = 1) -> Tensor:
    """Softmax of the logits within each center's pair set."""
    if logits.shape[0] == 0:
        raise ValueError("no logits to normalize; skip aggregation for isolated centers")
    if centers is None:
        centers = np.zeros(logits.shape[0], dtype=np.int64)
    return T.segment_softmax(logits, centers, n_centers)


def pair_message(h_j: Tensor, h_k: Tensor, head: Mapping, config: ModelConfig) -> Tensor:
    mode = config.pair_message_mode
    if mode == PairMessageMode.FULL_NN:
        x = T.concat_cols(h_j, h_k)
        return T.activation(T.add(T.matmul(x, head["msg_w"]), head["msg_b"]), config.activation, config.leaky_slope)
    if mode == PairMessageMode.SUM:
        return T.add(h_j, h_k)
    if mode == PairMessageMode.ELEM_PROD:
        return T.elem_prod(h_j, h_k)
    # CONCAT uses a frozen random reduction, TRANS a trained one; both linear
    return T.matmul(T.concat_cols(h_j, h_k), head["msg_w"])


def aggregate(h_i: Tensor, alpha: Tensor, messages: Tensor, centers: np.ndarray, gate: Tensor, config: ModelConfig) -> Tensor:
    """``act(h_i + W * sum(alpha * m))`` for every row of ``h_i``.

    ``centers`` maps each message row to its row of ``h_i``; rows with no
    messages reduce to ``act(h_i)``.
    """
    n = h_i.shape[0]
    if messages.shape[0] == 0:
        return T.activation(h_i, config.activation, config.leaky_slope)
    pooled = T.segment_sum(T.elem_prod(alpha, messages), centers, n)
    return T.activation(T.add(h_i, T.elem_prod(pooled, gate)), config.activation, config.leaky_slope)


def multi_head_concat(heads: list[Tensor]) -> Tensor:
    return heads[0] if len(heads) == 1 else T.concat_cols(*heads)


def multi_head_output(heads: list[Tensor], out_w: Tensor, out_b: Tensor) -> Tensor:
    """Final-layer combination: average heads, then a linear map to ``d``."""
    avg = heads[0]
    for h in heads[1:]:
        avg = T.add(avg, h)
    if len(heads) > 1:
        avg = T.scale(avg, 1.0 / len(heads))
    return T.add(T.matmul(avg, out_w), out_b)


def triplet_arrays(graph_or_counts, triplets) -> np.ndarray:
    """``(n, 3)`` global node indices for a list of triplets or an index array."""
    if not isinstance(triplets, np.ndarray):
        triplets = [tuple(t)[:3] for t in triplets]
    arr = np.asarray(triplets, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    arr = arr.reshape(len(arr), -1)[:, :3].copy()
    if isinstance(graph_or_counts, HeteroGraph):
        nd, nt = graph_or_counts.n_drugs, graph_or_counts.n_targets
    else:
        nd, nt = graph_or_counts[0], graph_or_counts[1]
    arr[:, 1] += nd
    arr[:, 2] += nd + nt
    return arr


# -- the model -------------------------------------------------------------


class HeTriNetModel:
    """All trainable state plus the forward passes.

    ``input_dims`` gives the raw feature width of each node type. Weights are
    Xavier-uniform, biases zero, self-gates one. The decoder's output layer
    starts at zero so a fresh model scores every triplet 0.5.
    """

    def __init__(self, config: ModelConfig, input_dims: Mapping, seed: int = 0):
        self.config = config
        self.input_dims = {NodeType(k): int(v) for k, v in input_dims.items()}
        if set(self.input_dims) != set(NodeType):
            raise ValueError("input_dims needs a width for drug, target and disease")
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}

        d, dh = config.hidden_dim, config.head_dim
        for kind in NodeType:
            self._param(f"proj.{kind.label}", xavier_uniform((self.input_dims[kind], d), rng))
        mode = config.pair_message_mode
        for layer in range(config.layers):
            for k in range(config.heads):
                p = f"layer{layer}.head{k}."
                self._param(p + "att_w1", xavier_uniform((3 * dh, dh), rng))
                self._param(p + "att_b1", np.zeros((1, dh)))
                self._param(p + "att_w2", xavier_uniform((dh, 1), rng))
                self._param(p + "att_b2", np.zeros((1, 1)))
                if mode in (PairMessageMode.FULL_NN, PairMessageMode.TRANS):
                    self._param(p + "msg_w", xavier_uniform((2 * dh, dh), rng))
                if mode == PairMessageMode.FULL_NN:
                    self._param(p + "msg_b", np.zeros((1, dh)))
                if mode == PairMessageMode.CONCAT:
                    self.buffers[p + "msg_w"] = xavier_uniform((2 * dh, dh), rng)
                self._param(p + "gate", np.ones((1, 1)))
        self._param("out.w", xavier_uniform((dh, d), rng))
        self._param("out.b", np.zeros((1, d)))
        dims = [3 * d, *config.decoder_hidden_dims, 1]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            self._param(f"dec{i}.w", np.zeros((a, b)) if last else xavier_uniform((a, b), rng))
            self._param(f"dec{i}.b", np.zeros((1, b)))
        self._n_dec = len(dims) - 1

    def _param(self, name, value):
        self.params[name] = Parameter(value, name=name)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.params.values()))

    def head(self, layer: int, k: int) -> dict:
        p = f"layer{layer}.head{k}."
        cache = self.__dict__.setdefault("_head_names", {})
        if (layer, k) not in cache:
            cache[layer, k] = (
                [(n[len(p):], n) for n in self.params if n.startswith(p)],
                [(n[len(p):], n) for n in self.buffers if n.startswith(p)],
            )
        params, buffers = cache[layer, k]
        out = {short: self.params[n] for short, n in params}
        for short, n in buffers:
            out[short] = Tensor(self.buffers[n])
        return out

    # -- forward -----------------------------------------------------------

    def input_features(self, graph: HeteroGraph, features: Mapping) -> dict:
        out = {}
        counts = graph.counts
        for kind in NodeType:
            if kind not in features:
                raise KeyError(f"missing {kind.label} features")
            arr = np.asarray(features[kind])
            if arr.shape[0] != counts[kind]:
                raise KeyError(
                    f"{kind.label} features cover {arr.shape[0]} nodes but the graph has {counts[kind]}; "
                    f"first missing {kind.label} node is index {min(arr.shape[0], counts[kind])}"
                )
            if arr.shape[1] != self.input_dims[kind]:
                raise T.ShapeError(f"project ({kind.label})", arr.shape, self.params[f'proj.{kind.label}'].shape)
            out[kind] = arr
        return out

    def encode(
        self,
        graph: HeteroGraph,
        features: Mapping,
        pairs: PairIndex | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Node embeddings as an ``(n_nodes, d)`` tensor in global node order."""
        cfg = self.config
        feats = self.input_features(graph, features)
        if pairs is None:
            pairs = build_pair_index(graph, cfg.neighbor_cap, self.seed)
        projected = [project(Tensor(feats[k]), self.params[f"proj.{k.label}"]) for k in NodeType]
        h = T.concat_rows(*projected)

        dh = cfg.head_dim
        centers = pairs.center
        for layer in range(cfg.layers):
            h = T.dropout(h, cfg.dropout_rate, training, rng)
            outs = []
            for k in range(cfg.heads):
                hp = self.head(layer, k)
                hk = T.slice_cols(h, k * dh, (k + 1) * dh) if cfg.heads > 1 else h
                if len(pairs):
                    alpha, msg = self._pair_terms(hk, pairs, hp)
                else:
                    alpha = msg = Tensor(np.zeros((0, 1)))
                outs.append(aggregate(hk, alpha, msg, centers, hp["gate"], cfg))
            if layer == cfg.layers - 1:
                h = multi_head_output(outs, self.params["out.w"], self.params["out.b"])
            else:
                h = multi_head_concat(outs)
        return h

    def decode_logits(self, z: Tensor, index: np.ndarray) -> Tensor:
        """Pre-sigmoid decoder output for ``(n, 3)`` global triplet indices."""
        # first layer as per-node products, gathered: cheaper than concat @ W
        x = _blockwise(z, self.params["dec0.w"], (index[:, 0], index[:, 1], index[:, 2]))
        for i in range(self._n_dec):
            if i:
                x = T.matmul(x, self.params[f"dec{i}.w"])
            x = T.add(x, self.params[f"dec{i}.b"])
            if i < self._n_dec - 1:
                x = T.activation(x, self.config.activation, self.config.leaky_slope)
        return x

    def decode(self, z: Tensor, index: np.ndarray) -> Tensor:
        return T.sigmoid(self.decode_logits(z, index))

    def score(self, graph: HeteroGraph, features: Mapping, triplets, pairs: PairIndex | None = None) -> np.ndarray:
        """Eval-mode scores in (0, 1) for local-index triplets, no tape."""
        z = self.encode(graph, features, pairs)
        return self.decode(z, triplet_arrays(graph, triplets)).value[:, 0].copy()

    def logits(self, graph: HeteroGraph, features: Mapping, triplets, pairs: PairIndex | None = None) -> np.ndarray:
        """Like :meth:`score` but before the sigmoid."""
        z = self.encode(graph, features, pairs)
        return self.decode_logits(z, triplet_arrays(graph, triplets)).value[:, 0].copy()

    def _pair_terms(self, hk: Tensor, pairs: PairIndex, hp: Mapping):
        """Attention weights and messages for every pair row of one head.

        Same values as :func:`attention_logits` / :func:`pair_message` on
        gathered rows, but the first linear layer runs per node instead of per
        pair.
        """
        cfg = self.config
        centers, js, ks = pairs.center, pairs.j, pairs.k
        pre = T.add(_blockwise(hk, hp["att_w1"], (centers, js, ks)), hp["att_b1"])
        hidden = T.activation(pre, cfg.activation, cfg.leaky_slope)
        logits = T.leaky_relu(T.add(T.matmul(hidden, hp["att_w2"]), hp["att_b2"]), cfg.leaky_slope)
        alpha = normalize(logits, centers, hk.shape[0])

        mode = cfg.pair_message_mode
        if mode == PairMessageMode.FULL_NN:
            pre = T.add(_blockwise(hk, hp["msg_w"], (js, ks)), hp["msg_b"])
            msg = T.activation(pre, cfg.activation, cfg.leaky_slope)
        elif mode in (PairMessageMode.CONCAT, PairMessageMode.TRANS):
            msg = _blockwise(hk, hp["msg_w"], (js, ks))
        else:
            msg = pair_message(T.gather_rows(hk, js), T.gather_rows(hk, ks), hp, cfg)
        return alpha, msg

    # -- state -------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise CheckpointError(f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, p in self.params.items():
            v = np.asarray(state[n])
            if v.shape != p.value.shape:
                raise CheckpointError(f"{n}: checkpoint shape {v.shape} != model shape {p.value.shape}")
            p.value[...] = v

    def to_checkpoint(self, extra: Mapping | None = None) -> dict:
        def pack(v):
            return {"shape": list(v.shape), "dtype": str(v.dtype), "values": [float(x) for x in v.reshape(-1)]}

        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "input_dims": {k.label: v for k, v in self.input_dims.items()},
            "seed": self.seed,
            "params": {n: pack(p.value) for n, p in self.params.items()},
            "buffers": {n: pack(v) for n, v in self.buffers.items()},
            "extra": dict(extra or {}),
        }

    @classmethod
    def from_checkpoint(cls, data: Mapping) -> "HeTriNetModel":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a hetrinet checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {data.get('version')}")

        def unpack(e):
            return np.array(e["values"], dtype=e["dtype"]).reshape(e["shape"])

        config = ModelConfig(**data["config"])
        dims = {NodeType[k.upper()]: v for k, v in data["input_dims"].items()}
        model = cls(config, dims, seed=data.get("seed", 0))
        model.load_state({n: unpack(e) for n, e in data["params"].items()})
        for n, e in data.get("buffers", {}).items():
            model.buffers[n] = unpack(e)
        return model

    def save(self, path, extra: Mapping | None = None):
        Path(path).write_text(json.dumps(self.to_checkpoint(extra)), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "HeTriNetModel":
        return cls.from_checkpoint(json.loads(Path(path).read_text(encoding="utf-8")))


def _blockwise(h: Tensor, weight: Tensor, index_blocks) -> Tensor:
    """``concat(h[idx_0], h[idx_1], ...) @ weight`` computed as a sum of
    per-block products gathered afterwards."""
    width = h.shape[1]
    out = None
    for b, idx in enumerate(index_blocks):
        part = T.gather_rows(T.matmul(h, T.slice_rows(weight, b * width, (b + 1) * width)), idx)
        out = part if out is None else T.add(out, part)
    return out
