"""Three-type heterogeneous graph over drugs, targets and diseases."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

__all__ = [
    "NodeType",
    "NodeId",
    "Triplet",
    "GraphInputError",
    "HeteroGraph",
    "NeighborPairSet",
    "PairIndex",
    "build_graph",
    "neighbor_pairs",
    "build_pair_index",
]


class NodeType(enum.IntEnum):
    DRUG = 0
    TARGET = 1
    DISEASE = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class NodeId(NamedTuple):
    kind: NodeType
    index: int


class Triplet(NamedTuple):
    drug: int
    target: int
    disease: int
    label: int = 1

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.drug, self.target, self.disease)


class GraphInputError(ValueError):
    """An input row references a node outside the declared counts."""

    def __init__(self, message: str, row=None):
        self.row = row
        super().__init__(message if row is None else f"{message}: {row!r}")


def _check_ids(row, pairs, counts):
    for kind, idx in pairs:
        if not 0 <= idx < counts[kind]:
            raise GraphInputError(
                f"{kind.label} index {idx} out of range [0, {counts[kind]})", row
            )


@dataclass(frozen=True)
class HeteroGraph:
    """Immutable typed graph.

    ``drug_targets[d]`` and ``drug_diseases[d]`` hold sorted neighbor indices
    of drug ``d``; ``target_drugs`` and ``disease_drugs`` are the reverse
    direction of the same undirected edges.
    """

    n_drugs: int
    n_targets: int
    n_diseases: int
    dt_edges: frozenset
    ds_edges: frozenset
    triplets: tuple
    drug_targets: tuple = field(repr=False)
    drug_diseases: tuple = field(repr=False)
    target_drugs: tuple = field(repr=False)
    disease_drugs: tuple = field(repr=False)
    _pairs: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    @property
    def counts(self) -> dict[NodeType, int]:
        return {
            NodeType.DRUG: self.n_drugs,
            NodeType.TARGET: self.n_targets,
            NodeType.DISEASE: self.n_diseases,
        }

    @property
    def n_nodes(self) -> int:
        return self.n_drugs + self.n_targets + self.n_diseases

    def offset(self, kind: NodeType) -> int:
        """Start of ``kind`` in the global drug, target, disease ordering."""
        return (0, self.n_drugs, self.n_drugs + self.n_targets)[kind]

    def global_index(self, node: NodeId) -> int:
        return self.offset(node.kind) + node.index

    def positive_keys(self) -> set[tuple[int, int, int]]:
        return {t.key for t in self.triplets}


def _adjacency(n: int, edges, side: int) -> tuple:
    lists = [[] for _ in range(n)]
    for e in edges:
        lists[e[side]].append(e[1 - side])
    return tuple(np.array(sorted(x), dtype=np.int64) for x in lists)


def build_graph(
    triplets: Iterable,
    extra_dt_edges: Iterable = (),
    extra_ds_edges: Iterable = (),
    *,
    n_drugs: int | None = None,
    n_targets: int | None = None,
    n_diseases: int | None = None,
) -> HeteroGraph:
    """Build a graph from positive triplets plus optional standalone edges.

    Node counts default to one past the largest index seen. Each triplet
    inserts its drug-target and drug-disease edges; duplicates collapse.
    """
    triplets = [t if isinstance(t, Triplet) else Triplet(*t) for t in triplets]
    extra_dt = [tuple(map(int, e)) for e in extra_dt_edges]
    extra_ds = [tuple(map(int, e)) for e in extra_ds_edges]

    def infer(given, values):
        if given is not None:
            return int(given)
        return max(values, default=-1) + 1

    counts = {
        NodeType.DRUG: infer(
            n_drugs, [t.drug for t in triplets] + [e[0] for e in extra_dt + extra_ds]
        ),
        NodeType.TARGET: infer(n_targets, [t.target for t in triplets] + [e[1] for e in extra_dt]),
        NodeType.DISEASE: infer(
            n_diseases, [t.disease for t in triplets] + [e[1] for e in extra_ds]
        ),
    }

    seen = set()
    kept = []
    for t in triplets:
        _check_ids(
            t,
            [(NodeType.DRUG, t.drug), (NodeType.TARGET, t.target), (NodeType.DISEASE, t.disease)],
            counts,
        )
        if t.key not in seen:
            seen.add(t.key)
            kept.append(Triplet(*t.key, 1))
    for e in extra_dt:
        _check_ids(e, [(NodeType.DRUG, e[0]), (NodeType.TARGET, e[1])], counts)
    for e in extra_ds:
        _check_ids(e, [(NodeType.DRUG, e[0]), (NodeType.DISEASE, e[1])], counts)

    dt = frozenset([(t.drug, t.target) for t in kept] + extra_dt)
    ds = frozenset([(t.drug, t.disease) for t in kept] + extra_ds)
    nd, nt, ns = counts[NodeType.DRUG], counts[NodeType.TARGET], counts[NodeType.DISEASE]
    return HeteroGraph(
        n_drugs=nd,
        n_targets=nt,
        n_diseases=ns,
        dt_edges=dt,
        ds_edges=ds,
        triplets=tuple(kept),
        drug_targets=_adjacency(nd, dt, 0),
        drug_diseases=_adjacency(nd, ds, 0),
        target_drugs=_adjacency(nt, dt, 1),
        disease_drugs=_adjacency(ns, ds, 1),
    )


@dataclass(frozen=True)
class NeighborPairSet:
    """Neighbor pairs of ``center``; members are in (drug, target, disease) order
    with the center's own kind left out."""

    center: NodeId
    pairs: tuple

    def __len__(self):
        return len(self.pairs)


def _full_pairs(g: HeteroGraph, center: NodeId) -> np.ndarray:
    """All wedge pairs of ``center`` as an (n, 2) array of local indices."""
    key = (int(center.kind), center.index)
    if key not in g._pairs:
        g._pairs[key] = _enumerate_pairs(g, center)
    return g._pairs[key]


def _enumerate_pairs(g: HeteroGraph, center: NodeId) -> np.ndarray:
    kind, i = center.kind, center.index
    if kind == NodeType.DRUG:
        ts, ss = g.drug_targets[i], g.drug_diseases[i]
        if len(ts) == 0 or len(ss) == 0:
            return np.empty((0, 2), dtype=np.int64)
        return np.stack(np.meshgrid(ts, ss, indexing="ij"), axis=-1).reshape(-1, 2)
    if kind == NodeType.TARGET:
        drugs, partner = g.target_drugs[i], g.drug_diseases
    else:
        drugs, partner = g.disease_drugs[i], g.drug_targets
    chunks = [
        np.column_stack([np.full(len(partner[d]), d, dtype=np.int64), partner[d]])
        for d in drugs
        if len(partner[d])
    ]
    if not chunks:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(chunks)


def _check_center(g: HeteroGraph, center: NodeId):
    center = NodeId(NodeType(center[0]), int(center[1]))
    if not 0 <= center.index < g.counts[center.kind]:
        raise GraphInputError("center out of range", center)
    return center


def _capped(full: np.ndarray, cap: int | None, rng_seed: int, center: NodeId) -> np.ndarray:
    if cap is None or len(full) <= cap:
        return full
    rng = np.random.default_rng([rng_seed, int(center.kind), center.index])
    keep = np.sort(rng.choice(len(full), size=cap, replace=False))
    return full[keep]


def neighbor_pairs(g: HeteroGraph, center, cap: int | None = 64, rng_seed: int = 0) -> NeighborPairSet:
    """Wedge-rule neighbor pairs, uniformly subsampled to ``cap`` when larger.

    A drug's pairs are its (target, disease) neighbor combinations; a target
    or disease pairs with every (drug, other) such that the drug links to
    both. Sampling depends only on ``(rng_seed, center)``.
    """
    if cap is not None and cap < 1:
        raise ValueError("cap must be positive")
    center = _check_center(g, center)
    others = [k for k in NodeType if k != center.kind]
    arr = _capped(_full_pairs(g, center), cap, rng_seed, center)
    pairs = tuple(
        (NodeId(others[0], int(a)), NodeId(others[1], int(b))) for a, b in arr
    )
    return NeighborPairSet(center, pairs)


@dataclass(frozen=True)
class PairIndex:
    """Flattened neighbor pairs of every node, in global node indices.

    Row ``r`` says node ``j[r]`` and node ``k[r]`` form a neighbor pair of
    ``center[r]``. Rows are grouped by center in global order.
    """

    center: np.ndarray
    j: np.ndarray
    k: np.ndarray
    n_nodes: int

    def __len__(self):
        return len(self.center)

    def counts(self) -> np.ndarray:
        return np.bincount(self.center, minlength=self.n_nodes)


def build_pair_index(g: HeteroGraph, cap: int | None = 64, rng_seed: int = 0) -> PairIndex:
    centers, js, ks = [], [], []
    for kind in NodeType:
        others = [k for k in NodeType if k != kind]
        off_j, off_k = g.offset(others[0]), g.offset(others[1])
        for i in range(g.counts[kind]):
            node = NodeId(kind, i)
            arr = _capped(_full_pairs(g, node), cap, rng_seed, node)
            if len(arr) == 0:
                continue
            centers.append(np.full(len(arr), g.global_index(node), dtype=np.int64))
            js.append(arr[:, 0] + off_j)
            ks.append(arr[:, 1] + off_k)
    if not centers:
        centers, js, ks = ([np.empty(0, dtype=np.int64)] for _ in range(3))
    arrays = [np.concatenate(a) for a in (centers, js, ks)]
    for a in arrays:
        a.flags.writeable = False
    return PairIndex(*arrays, g.n_nodes)
