"""Synthetic drug/target/disease data with a planted triplet rule.

Every node gets a latent vector ``u``. A cell ``(d, t, s)`` has propensity

    sigmoid(<u_d, u_t> + <u_d, u_s> + <u_t * u_s, w>)

and the ``positive_count`` cells with the highest propensity are the true
positives. The last term couples target and disease directly, so scoring
drug-target and drug-disease edges separately is not enough to recover it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import HeteroGraph, NodeType, build_graph

__all__ = ["SynthConfig", "SynthDataset", "generate", "propensity_logits"]


@dataclass
class SynthConfig:
    drugs: int = 50
    targets: int = 60
    diseases: int = 40
    latent_dim: int = 8
    positive_count: int = 2000
    noise_flip_rate: float = 0.05
    raw_feature_dim: int = 32
    feature_noise: float = 0.1
    seed: int = 7

    def __post_init__(self):
        if min(self.drugs, self.targets, self.diseases) < 1:
            raise ValueError("node counts must be positive")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be at least 1")
        if self.raw_feature_dim < 1:
            raise ValueError("raw_feature_dim must be at least 1")
        if not 1 <= self.positive_count <= self.drugs * self.targets * self.diseases:
            raise ValueError(
                f"positive_count {self.positive_count} is infeasible for "
                f"{self.drugs}x{self.targets}x{self.diseases} cells"
            )
        if not 0.0 <= self.noise_flip_rate < 0.5:
            raise ValueError("noise_flip_rate must lie in [0, 0.5)")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthDataset:
    graph: HeteroGraph
    features: dict
    positives: list
    heldout: list
    latents: dict
    w: np.ndarray
    config: SynthConfig

    def oracle_scores(self, triplets) -> np.ndarray:
        """True propensities, for sanity checks."""
        arr = np.asarray([tuple(t)[:3] for t in triplets], dtype=np.int64).reshape(-1, 3)
        ud = self.latents[NodeType.DRUG][arr[:, 0]]
        ut = self.latents[NodeType.TARGET][arr[:, 1]]
        us = self.latents[NodeType.DISEASE][arr[:, 2]]
        logit = (ud * ut).sum(1) + (ud * us).sum(1) + (ut * us * self.w).sum(1)
        return 1.0 / (1.0 + np.exp(-logit))


def propensity_logits(ud, ut, us, w) -> np.ndarray:
    """Full ``(drugs, targets, diseases)`` cube of planted logits."""
    a = ud @ ut.T
    b = ud @ us.T
    c = (ut * w) @ us.T
    return a[:, :, None] + b[:, None, :] + c[None, :, :]


def generate(config: SynthConfig) -> SynthDataset:
    """Draw a dataset; identical configs give identical datasets.

    ``positives`` are the top cells after label noise: each true positive is
    swapped, with probability ``noise_flip_rate``, for a random non-positive
    cell. ``heldout`` pairs every true positive (label 1) with a one-slot
    corruption outside the true positives (label 0), labelled by the noise-free
    rule.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    # unit-variance inner products
    spread = cfg.latent_dim**-0.25
    sizes = {NodeType.DRUG: cfg.drugs, NodeType.TARGET: cfg.targets, NodeType.DISEASE: cfg.diseases}
    latents = {k: rng.normal(0.0, 1.0, size=(n, cfg.latent_dim)) * spread for k, n in sizes.items()}
    w = rng.normal(0.0, 1.0, size=cfg.latent_dim)

    logits = propensity_logits(latents[NodeType.DRUG], latents[NodeType.TARGET], latents[NodeType.DISEASE], w)
    flat = logits.reshape(-1)
    order = np.argsort(-flat, kind="stable")
    top = np.sort(order[: cfg.positive_count])
    is_top = np.zeros(flat.size, dtype=bool)
    is_top[top] = True

    flip = rng.random(cfg.positive_count) < cfg.noise_flip_rate
    noisy = top[~flip]
    if flip.any():
        pool = np.flatnonzero(~is_top)
        noisy = np.concatenate([noisy, rng.choice(pool, size=int(flip.sum()), replace=False)])
    noisy = np.sort(noisy)
    shape = logits.shape
    positives = [tuple(int(x) for x in np.unravel_index(c, shape)) for c in noisy]

    heldout = []
    for c in top:
        cell = tuple(int(x) for x in np.unravel_index(c, shape))
        heldout.append((*cell, 1))
        while True:
            slot = int(rng.integers(3))
            cand = list(cell)
            cand[slot] = int(rng.integers(shape[slot]))
            if not is_top[np.ravel_multi_index(cand, shape)]:
                heldout.append((*cand, 0))
                break

    features = {}
    for k, n in sizes.items():
        mix = rng.normal(0.0, 1.0, size=(cfg.latent_dim, cfg.raw_feature_dim))
        noise = rng.normal(0.0, cfg.feature_noise, size=(n, cfg.raw_feature_dim))
        features[k] = latents[k] @ mix + noise

    graph = build_graph(positives, n_drugs=cfg.drugs, n_targets=cfg.targets, n_diseases=cfg.diseases)
    return SynthDataset(graph, features, positives, heldout, latents, w, cfg)
