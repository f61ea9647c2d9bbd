"""Negative sampling, ranking loss, Adam and the early-stopping training loop."""

from __future__ import annotations

import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .graph import HeteroGraph, Triplet, build_pair_index
from .model import HeTriNetModel, triplet_arrays, xavier_uniform
from .tensor import Parameter, Tape, Tensor

__all__ = [
    "LossMode",
    "TrainConfig",
    "TrainReport",
    "SplitError",
    "NegativeSamplingError",
    "TrainingDivergedError",
    "split",
    "sample_negative",
    "sample_negatives",
    "margin_loss",
    "bce_loss",
    "AdamState",
    "adam_step",
    "Adam",
    "xavier_init",
    "fit",
]

log = logging.getLogger(__name__)

MAX_NEGATIVE_ATTEMPTS = 100


class LossMode(str, enum.Enum):
    MARGIN_RANKING = "margin_ranking"
    BINARY_CROSS_ENTROPY = "binary_cross_entropy"


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    max_epochs: int = 2000
    patience: int = 200
    batch_size: int = 0  # 0 means full batch
    train_fraction: float = 0.8
    validation_fraction_of_train: float = 0.1
    margin: float = 1.0
    loss_mode: LossMode = LossMode.MARGIN_RANKING
    seed: int = 0
    repeats: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.loss_mode = LossMode(self.loss_mode)
        for name in ("train_fraction", "validation_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError(f"patience must lie in [1, max_epochs], got {self.patience}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 0:
            raise ValueError("batch_size must be non-negative")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_mode"] = self.loss_mode.value
        return d


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    validation_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    best_validation_loss: float = math.inf
    stopped_early: bool = False
    checkpoint: str | None = None
    seconds: float = 0.0

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("seconds")
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps({"schema": "hetrinet-train-report/1", **self.to_dict(timing)}, indent=2)


class SplitError(ValueError):
    pass


class NegativeSamplingError(RuntimeError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


# -- data ------------------------------------------------------------------


def split(triplets: Sequence, config: TrainConfig, seed: int | None = None):
    """Random (train, validation, test) partition.

    The test share is ``1 - train_fraction``; validation is carved from the
    train share. Sizes are rounded to the nearest integer.
    """
    triplets = list(triplets)
    n = len(triplets)
    if n < 10:
        raise SplitError(f"need at least 10 triplets to split, got {n}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    order = rng.permutation(n)
    n_test = int(round(n * (1.0 - config.train_fraction)))
    n_val = int(round((n - n_test) * config.validation_fraction_of_train))
    test = [triplets[i] for i in order[:n_test]]
    val = [triplets[i] for i in order[n_test : n_test + n_val]]
    train = [triplets[i] for i in order[n_test + n_val :]]
    return train, val, test


def _counts(graph_or_counts) -> tuple[int, int, int]:
    if isinstance(graph_or_counts, HeteroGraph):
        return graph_or_counts.n_drugs, graph_or_counts.n_targets, graph_or_counts.n_diseases
    return tuple(int(x) for x in graph_or_counts)


def sample_negative(positive, graph_or_counts, positive_set, rng: np.random.Generator) -> Triplet:
    """Corrupt one uniformly chosen slot of ``positive`` with a uniform node.

    Draws are rejected while the result is a known positive or equals the
    input; gives up after 100 attempts.
    """
    counts = _counts(graph_or_counts)
    base = tuple(positive)[:3]
    for _ in range(MAX_NEGATIVE_ATTEMPTS):
        slot = int(rng.integers(3))
        cand = list(base)
        cand[slot] = int(rng.integers(counts[slot]))
        cand = tuple(cand)
        if cand != base and cand not in positive_set:
            return Triplet(*cand, 0)
    raise NegativeSamplingError(
        f"no negative found for {base} after {MAX_NEGATIVE_ATTEMPTS} attempts; corruption space exhausted?"
    )


def _codes(arr: np.ndarray, counts) -> np.ndarray:
    _, nt, ns = counts
    return (arr[:, 0] * nt + arr[:, 1]) * ns + arr[:, 2]


def sample_negatives(positives: np.ndarray, graph_or_counts, positive_codes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`sample_negative`: one negative per row of ``positives``.

    ``positive_codes`` is a sorted array of the integer codes of every known
    positive (see :func:`positive_codes`).
    """
    counts = _counts(graph_or_counts)
    positives = np.asarray(positives, dtype=np.int64)[:, :3]
    out = positives.copy()
    todo = np.arange(len(positives))
    sizes = np.asarray(counts)
    for _ in range(MAX_NEGATIVE_ATTEMPTS):
        if len(todo) == 0:
            return out
        slots = rng.integers(3, size=len(todo))
        cand = positives[todo].copy()
        cand[np.arange(len(todo)), slots] = rng.integers(sizes[slots])
        bad = (cand == positives[todo]).all(axis=1) | _is_member(_codes(cand, counts), positive_codes)
        out[todo[~bad]] = cand[~bad]
        todo = todo[bad]
    if len(todo):
        raise NegativeSamplingError(
            f"{len(todo)} triplet(s) got no negative after {MAX_NEGATIVE_ATTEMPTS} attempts"
        )
    return out


def positive_codes(triplets, graph_or_counts) -> np.ndarray:
    arr = np.asarray([tuple(t)[:3] for t in triplets], dtype=np.int64).reshape(-1, 3)
    return np.unique(_codes(arr, _counts(graph_or_counts)))


def _is_member(codes: np.ndarray, sorted_codes: np.ndarray) -> np.ndarray:
    if len(sorted_codes) == 0:
        return np.zeros(len(codes), dtype=bool)
    pos = np.searchsorted(sorted_codes, codes)
    pos = np.minimum(pos, len(sorted_codes) - 1)
    return sorted_codes[pos] == codes


# -- losses ----------------------------------------------------------------


def margin_loss(pos_scores, neg_scores, margin: float = 1.0) -> Tensor:
    """Sum of hinge terms ``max(0, margin + neg - pos)`` over paired scores."""
    pos, neg = T.as_tensor(pos_scores), T.as_tensor(neg_scores)
    if pos.shape != neg.shape:
        raise T.ShapeError("margin_loss", pos.shape, neg.shape)
    gap = T.add(T.sub(neg, pos), Tensor(np.full((1, 1), margin)))
    return T.sum_all(T.relu(gap))


def bce_loss(pos_logits, neg_logits) -> Tensor:
    """Binary cross-entropy on decoder logits, positives labelled 1, negatives 0."""
    pos, neg = T.as_tensor(pos_logits), T.as_tensor(neg_logits)
    return T.add(T.sum_all(T.softplus(T.scale(pos, -1.0))), T.sum_all(T.softplus(neg)))


def _loss(model: HeTriNetModel, z: Tensor, pos_idx, neg_idx, config: TrainConfig) -> Tensor:
    n = len(pos_idx)
    both = model.decode_logits(z, np.concatenate([pos_idx, neg_idx]))
    pos, neg = T.slice_rows(both, 0, n), T.slice_rows(both, n, 2 * n)
    if config.loss_mode == LossMode.MARGIN_RANKING:
        return margin_loss(T.sigmoid(pos), T.sigmoid(neg), config.margin)
    return bce_loss(pos, neg)


# -- optimisation ----------------------------------------------------------


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 0.005,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place bias-corrected Adam update of ``params``; moments keyed by position."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise T.ShapeError("adam_step", p.shape, g.shape)
        if i not in state.m:
            state.m[i] = np.zeros_like(p)
            state.v[i] = np.zeros_like(p)
        m, v = state.m[i], state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Parameter], lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(
            [p.value for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )


def xavier_init(shape: tuple[int, int], rng: np.random.Generator) -> Tensor:
    return Tensor(xavier_uniform(shape, rng))


# -- the loop --------------------------------------------------------------


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _param_norms(model: HeTriNetModel) -> dict[str, float]:
    return {n: float(np.linalg.norm(p.value)) for n, p in model.params.items()}


def fit(
    graph: HeteroGraph,
    features: Mapping,
    model: HeTriNetModel,
    config: TrainConfig,
    validation: Sequence | None = None,
    known_positives: Sequence | None = None,
) -> TrainReport:
    """Train ``model`` on the graph's positive triplets with early stopping.

    ``validation`` defaults to a ``validation_fraction_of_train`` slice carved
    from the graph's triplets. ``known_positives`` (default: graph triplets
    plus validation) are never drawn as negatives. The best-validation
    parameters are restored before returning.
    """
    start = time.perf_counter()
    train = [t.key for t in graph.triplets]
    if validation is None:
        rng_split = np.random.default_rng([config.seed, 17])
        order = rng_split.permutation(len(train))
        n_val = int(round(len(train) * config.validation_fraction_of_train))
        validation = [train[i] for i in order[:n_val]]
        held = set(validation)
        train = [t for t in train if t not in held]
    validation = [tuple(t)[:3] for t in validation]
    if not train:
        raise ValueError("no training triplets")
    if known_positives is None:
        known_positives = train + validation
    counts = _counts(graph)
    known = positive_codes(list(known_positives) + train + validation, counts)

    rng = np.random.default_rng(config.seed)
    train_arr = np.asarray(train, dtype=np.int64)
    train_idx = triplet_arrays(graph, train_arr)
    val_idx = val_neg_idx = None
    if validation:
        val_arr = np.asarray(validation, dtype=np.int64)
        val_neg = sample_negatives(val_arr, counts, known, np.random.default_rng([config.seed, 29]))
        val_idx, val_neg_idx = triplet_arrays(graph, val_arr), triplet_arrays(graph, val_neg)
    eval_pairs = build_pair_index(graph, model.config.neighbor_cap, model.seed)

    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.eps)
    report = TrainReport()
    best_state = model.state()
    wait = 0
    n_train = len(train_arr)
    for epoch in range(1, config.max_epochs + 1):
        pairs = build_pair_index(graph, model.config.neighbor_cap, _epoch_seed(config.seed, epoch))
        neg_arr = sample_negatives(train_arr, counts, known, rng)
        neg_idx = triplet_arrays(graph, neg_arr)
        if config.batch_size and config.batch_size < n_train:
            order = rng.permutation(n_train)
            batches = [order[i : i + config.batch_size] for i in range(0, n_train, config.batch_size)]
        else:
            batches = [np.arange(n_train)]
        epoch_loss = 0.0
        for b, rows in enumerate(batches):
            opt.zero_grad()
            with Tape() as tape:
                z = model.encode(graph, features, pairs, training=True, rng=rng)
                loss = _loss(model, z, train_idx[rows], neg_idx[rows], config)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, batch {b}; parameter norms: {_param_norms(model)}"
                )
            T.backward(tape, loss)
            opt.step()
            epoch_loss += value
        report.train_loss.append(epoch_loss / n_train)

        if val_idx is not None:
            z = model.encode(graph, features, eval_pairs)
            val_loss = _loss(model, z, val_idx, val_neg_idx, config).item() / len(val_idx)
        else:
            val_loss = report.train_loss[-1]
        report.validation_loss.append(val_loss)
        report.epochs_run = epoch
        if val_loss < report.best_validation_loss:
            report.best_validation_loss = val_loss
            report.best_epoch = epoch
            best_state = model.state()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                report.stopped_early = True
                break
        if epoch % 50 == 0:
            log.info("epoch %d train %.5f val %.5f", epoch, report.train_loss[-1], val_loss)

    model.load_state(best_state)
    report.seconds = time.perf_counter() - start
    return report
