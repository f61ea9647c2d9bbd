"""TSV ingestion and dataset directories.

Formats (UTF-8, ``#`` lines ignored, tab separated):

* triplets: ``drug_id  target_id  disease_id  label`` (label optional, default 1)
* drugs:    ``drug_id  SMILES``
* targets:  ``target_id  sequence``
* numeric features: ``node_id  v1  v2 ...`` (one file per node type)

A dataset directory holds ``triplets.tsv`` and any of ``drugs.tsv``,
``targets.tsv``, ``{drug,target,disease}_features.tsv`` and ``heldout.tsv``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import encode_many, one_hot, train_vocab
from .graph import NodeType

__all__ = [
    "IngestError",
    "DatasetBundle",
    "ingest",
    "load_dataset",
    "read_triplet_rows",
    "read_feature_table",
    "write_feature_table",
    "write_triplets",
    "featurize",
]

log = logging.getLogger(__name__)

TRIPLETS = "triplets.tsv"
DRUGS = "drugs.tsv"
TARGETS = "targets.tsv"
HELDOUT = "heldout.tsv"
FEATURE_FILES = {k: f"{k.label}_features.tsv" for k in NodeType}


class IngestError(ValueError):
    """Malformed input, located by file, line and (1-based) column."""

    def __init__(self, path, line: int, column: int | None, message: str):
        self.path, self.line, self.column = str(path), line, column
        where = f"{path}:{line}" + (f": column {column}" if column else "")
        super().__init__(f"{where}: {message}")


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def read_triplet_rows(path) -> list[tuple[int, str, str, str, int]]:
    """``(line, drug, target, disease, label)`` for every data row."""
    out = []
    for lineno, cols in _rows(path):
        if len(cols) not in (3, 4):
            # point at the first missing or first surplus column
            raise IngestError(path, lineno, min(len(cols) + 1, 5), f"expected 3 or 4 columns, found {len(cols)}")
        for c, v in enumerate(cols[:3], 1):
            if not v.strip():
                raise IngestError(path, lineno, c, "empty identifier")
        label = 1
        if len(cols) == 4:
            if cols[3].strip() not in ("0", "1"):
                raise IngestError(path, lineno, 4, f"label must be 0 or 1, got {cols[3]!r}")
            label = int(cols[3])
        out.append((lineno, cols[0].strip(), cols[1].strip(), cols[2].strip(), label))
    return out


def _read_pairs(path) -> dict[str, str]:
    table = {}
    for lineno, cols in _rows(path):
        if len(cols) != 2:
            raise IngestError(path, lineno, min(len(cols) + 1, 3), f"expected 2 columns, found {len(cols)}")
        key, value = cols[0].strip(), cols[1].strip()
        if not key:
            raise IngestError(path, lineno, 1, "empty identifier")
        if not value:
            raise IngestError(path, lineno, 2, "empty sequence")
        if key in table:
            raise IngestError(path, lineno, 1, f"duplicate identifier {key!r}")
        table[key] = value
    return table


def read_feature_table(path) -> tuple[list[str], np.ndarray]:
    ids, rows, width = [], [], None
    for lineno, cols in _rows(path):
        if len(cols) < 2:
            raise IngestError(path, lineno, len(cols), "expected an id and at least one value")
        if width is None:
            width = len(cols)
        elif len(cols) != width:
            raise IngestError(path, lineno, len(cols), f"expected {width} columns, found {len(cols)}")
        try:
            rows.append([float(v) for v in cols[1:]])
        except ValueError as exc:
            bad = next(i for i, v in enumerate(cols[1:], 2) if not _is_float(v))
            raise IngestError(path, lineno, bad, str(exc)) from None
        ids.append(cols[0].strip())
    return ids, np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def write_feature_table(path, ids, values: np.ndarray):
    # repr keeps float64 values exact through a text round trip
    lines = ["\t".join([i, *(repr(float(x)) for x in row)]) for i, row in zip(ids, values)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_triplets(path, rows, header: str | None = None):
    lines = [f"# {header}"] if header else []
    lines += ["\t".join(str(x) for x in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class DatasetBundle:
    """Node registries plus triplets in dense local indices.

    ``ids[kind][i]`` is the external id of node ``i``; ``triplets`` rows are
    ``(drug, target, disease, label)``.
    """

    ids: dict
    triplets: list
    smiles: dict = field(default_factory=dict)
    sequences: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    heldout: list = field(default_factory=list)
    duplicates: int = 0

    @property
    def counts(self) -> tuple[int, int, int]:
        return tuple(len(self.ids[k]) for k in NodeType)

    @property
    def positives(self) -> list[tuple[int, int, int]]:
        return [t[:3] for t in self.triplets if t[3] == 1]

    def index(self, kind: NodeType, external: str) -> int:
        lookup = getattr(self, "_lookup", None)
        if lookup is None:
            lookup = {k: {x: i for i, x in enumerate(self.ids[k])} for k in NodeType}
            self._lookup = lookup
        return lookup[kind][external]

    def external(self, triplet) -> tuple[str, str, str]:
        return tuple(self.ids[k][triplet[k]] for k in NodeType)

    def summary(self) -> dict:
        return {
            "drugs": len(self.ids[NodeType.DRUG]),
            "targets": len(self.ids[NodeType.TARGET]),
            "diseases": len(self.ids[NodeType.DISEASE]),
            "triplets": len(self.triplets),
            "positives": len(self.positives),
            "duplicates_dropped": self.duplicates,
            "has_smiles": bool(self.smiles),
            "has_sequences": bool(self.sequences),
            "numeric_features": sorted(k.label for k in self.features),
        }

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_triplets(d / TRIPLETS, [self.external(t) + (t[3],) for t in self.triplets])
        if self.smiles:
            write_triplets(d / DRUGS, [(i, self.smiles[i]) for i in self.ids[NodeType.DRUG] if i in self.smiles])
        if self.sequences:
            write_triplets(d / TARGETS, [(i, self.sequences[i]) for i in self.ids[NodeType.TARGET] if i in self.sequences])
        for kind, arr in self.features.items():
            write_feature_table(d / FEATURE_FILES[kind], self.ids[kind], arr)
        if self.heldout:
            write_triplets(d / HELDOUT, [self.external(t) + (t[3],) for t in self.heldout])


def ingest(triplet_tsv, drug_tsv=None, target_tsv=None, registries=None) -> DatasetBundle:
    """Read a triplet table and optional SMILES / sequence tables.

    Registries are filled in first-seen order (triplets first, then the
    side tables) unless ``registries`` fixes the id list of a node type, in
    which case ids outside it are errors. Repeated triplet rows are dropped
    and counted.
    """
    fixed = {NodeType(k): list(v) for k, v in (registries or {}).items()}
    ids = {k: list(fixed.get(k, [])) for k in NodeType}
    seen = {k: {n: i for i, n in enumerate(ids[k])} for k in NodeType}

    def register(kind, name, path, line, column):
        table = seen[kind]
        if name not in table:
            if kind in fixed:
                raise IngestError(path, line, column, f"unknown {kind.label} id {name!r}")
            table[name] = len(ids[kind])
            ids[kind].append(name)
        return table[name]

    triplets, keys, dup = [], set(), 0
    for line, d, t, s, label in read_triplet_rows(triplet_tsv):
        row = (
            register(NodeType.DRUG, d, triplet_tsv, line, 1),
            register(NodeType.TARGET, t, triplet_tsv, line, 2),
            register(NodeType.DISEASE, s, triplet_tsv, line, 3),
        )
        if row in keys:
            dup += 1
            continue
        keys.add(row)
        triplets.append(row + (label,))
    if dup:
        log.warning("%s: dropped %d duplicate triplet row(s)", triplet_tsv, dup)

    smiles = _read_pairs(drug_tsv) if drug_tsv else {}
    sequences = _read_pairs(target_tsv) if target_tsv else {}
    for kind, table in ((NodeType.DRUG, smiles), (NodeType.TARGET, sequences)):
        if kind not in fixed:
            for name in table:
                register(kind, name, None, 0, None)
    return DatasetBundle(ids, triplets, smiles, sequences, duplicates=dup)


def load_dataset(directory) -> DatasetBundle:
    """Load a dataset directory.

    A numeric feature table, when present, lists every node of its type and
    fixes that type's index order.
    """
    d = Path(directory)
    if not (d / TRIPLETS).exists():
        raise FileNotFoundError(f"{d / TRIPLETS} not found")
    tables = {}
    for kind, name in FEATURE_FILES.items():
        path = d / name
        if path.exists():
            names, values = read_feature_table(path)
            if len(set(names)) != len(names):
                raise IngestError(path, 0, 1, "duplicate node id in feature table")
            tables[kind] = (names, values)
    bundle = ingest(
        d / TRIPLETS,
        d / DRUGS if (d / DRUGS).exists() else None,
        d / TARGETS if (d / TARGETS).exists() else None,
        registries={k: names for k, (names, _) in tables.items()},
    )
    bundle.features = {k: values for k, (_, values) in tables.items()}
    if (d / HELDOUT).exists():
        path = d / HELDOUT
        bundle.heldout = []
        for line, *names, label in read_triplet_rows(path):
            row = []
            for kind, name in zip(NodeType, names):
                try:
                    row.append(bundle.index(kind, name))
                except KeyError:
                    raise IngestError(path, line, int(kind) + 1, f"unknown {kind.label} id {name!r}") from None
            bundle.heldout.append((*row, label))
    return bundle


def featurize(bundle: DatasetBundle, min_frequency: int | None = None, max_vocab: int = 2048):
    """Per-type feature matrices for ``bundle``.

    Numeric tables win when present. Otherwise drugs and targets get
    multi-hot substructure vectors from vocabularies learned on their own
    corpora, and diseases get one-hot vectors. Returns ``(features, vocabs)``.
    """
    feats, vocabs = {}, {}
    for kind, table in ((NodeType.DRUG, bundle.smiles), (NodeType.TARGET, bundle.sequences)):
        if kind in bundle.features:
            feats[kind] = bundle.features[kind]
            continue
        names = bundle.ids[kind]
        missing = [n for n in names if n not in table]
        if missing:
            raise IngestError(
                "<dataset>", 0, None, f"no numeric features and no sequence for {kind.label} {missing[0]!r}"
            )
        corpus = [table[n] for n in names]
        vocab = train_vocab(corpus, min_frequency, max_vocab)
        vocabs[kind] = vocab
        feats[kind] = encode_many(corpus, vocab)
    if NodeType.DISEASE in bundle.features:
        feats[NodeType.DISEASE] = bundle.features[NodeType.DISEASE]
    else:
        n = len(bundle.ids[NodeType.DISEASE])
        feats[NodeType.DISEASE] = np.vstack([one_hot(i, n).values for i in range(n)]) if n else np.zeros((0, 0))
    return feats, vocabs


