"""Reproducible pipelines: synth, featurize, train, eval, predict, ablate.

Every run writes a ``config.json`` snapshot that reproduces it. A training
run directory looks like::

    OUT/config.json
    OUT/seed_<s>/checkpoint.json
    OUT/seed_<s>/train_report.json
    OUT/seed_<s>/metrics.json, metrics.txt     (after eval)
    OUT/metrics.json, metrics.txt              (mean and std over seeds)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import DatasetBundle, featurize, ingest, load_dataset, write_triplets
from .evaluate import DEFAULT_CUTOFFS, MetricsReport, evaluate_model, summarize_reports, summary_table
from .graph import NodeType, build_graph, build_pair_index
from .model import CheckpointError, HeTriNetModel, ModelConfig, PairMessageMode
from .synth import SynthConfig, generate
from .train import TrainConfig, fit, split

__all__ = [
    "OUTPUT_ROOT_ENV",
    "RunConfig",
    "Artifacts",
    "load_config_file",
    "load_data",
    "run_synth",
    "run_featurize",
    "run_ingest",
    "run_train",
    "run_eval",
    "run_eval_dir",
    "run_predict",
    "run_ablate",
]

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "HETRINET_OUTPUT_ROOT"
CONFIG_SCHEMA = "hetrinet-run-config/1"
SUMMARY_SCHEMA = "hetrinet-metrics-summary/1"
ABLATION_SCHEMA = "hetrinet-ablation/1"

# flat config keys: model and train fields as-is, synth fields prefixed
_SYNTH_PREFIX = "synth_"
_SPLIT_FIELDS = ("train_fraction", "validation_fraction_of_train")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data_dir: str | None = None
    triplets: str | None = None
    drugs: str | None = None
    targets: str | None = None
    output_dir: str = "hetrinet-out"
    cutoffs: tuple[int, ...] = DEFAULT_CUTOFFS
    n_negatives: int = 100
    threshold: float = 0.5
    min_frequency: int | None = None
    max_vocab: int = 2048

    def __post_init__(self):
        self.cutoffs = tuple(int(c) for c in self.cutoffs)
        if not self.cutoffs or any(c < 1 for c in self.cutoffs):
            raise ValueError(f"cutoffs must be positive, got {self.cutoffs}")
        if list(self.cutoffs) != sorted(set(self.cutoffs)):
            raise ValueError(f"cutoffs must be strictly increasing, got {self.cutoffs}")
        if self.n_negatives < 1:
            raise ValueError("n_negatives must be at least 1")
        if self.max_vocab < 1:
            raise ValueError("max_vocab must be at least 1")
        for name in ("data_dir", "triplets", "drugs", "targets"):
            p = getattr(self, name)
            if p is not None:
                setattr(self, name, str(Path(p).absolute()))

    def validate_paths(self):
        for name in ("data_dir", "triplets", "drugs", "targets"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"{name}: {p} does not exist")
        if (self.drugs or self.targets) and not self.triplets:
            raise ValueError("drugs/targets tables need a triplets table")

    # -- flat view ---------------------------------------------------------

    def flat(self) -> dict:
        out = dict(self.model.to_dict())
        out.update(self.train.to_dict())
        out.update({_SYNTH_PREFIX + k: v for k, v in self.synth.to_dict().items()})
        for f in dataclasses.fields(self):
            if f.name not in ("model", "train", "synth"):
                v = getattr(self, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def flat_keys(cls) -> dict[str, object]:
        """Every flat key with its default value."""
        return cls().flat()

    @classmethod
    def from_flat(cls, values: Mapping) -> "RunConfig":
        known = cls.flat_keys()
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
        m, t, s, top = {}, {}, {}, {}
        for k, v in values.items():
            v = _coerce(k, v, known[k])
            if k in model_keys:
                m[k] = v
            elif k in train_keys:
                t[k] = v
            elif k.startswith(_SYNTH_PREFIX):
                s[k[len(_SYNTH_PREFIX) :]] = v
            else:
                top[k] = v
        return cls(ModelConfig(**m), TrainConfig(**t), SynthConfig(**s), **top)

    def replace(self, **flat_updates) -> "RunConfig":
        merged = self.flat()
        merged.update(flat_updates)
        return RunConfig.from_flat(merged)

    def snapshot(self) -> dict:
        return {"schema": CONFIG_SCHEMA, **self.flat()}

    def save(self, path):
        Path(path).write_text(json.dumps(self.snapshot(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_snapshot(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def from_snapshot(cls, data: Mapping) -> "RunConfig":
        data = dict(data)
        schema = data.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ValueError(f"unsupported config schema {schema!r}")
        return cls.from_flat(data)


def _coerce(key, value, default):
    """Parse ``value`` to the type of ``default``; strings come from flags or files."""
    if value is None:
        return None
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"{key}: expected a boolean, got {value!r}")
            return low in ("true", "1", "yes")
        return bool(value)
    if isinstance(default, (tuple, list)):
        if isinstance(value, str):
            text = value.strip()
            if text.startswith("["):
                value = json.loads(text)
            else:
                value = [p for p in text.replace(" ", "").split(",") if p]
        try:
            return tuple(int(x) for x in value)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected a list of integers, got {value!r}") from None
    if isinstance(value, str) and value.strip().lower() in ("none", "null", ""):
        return None
    try:
        if isinstance(default, int) or (default is None and key in ("min_frequency",)):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{key}: expected a {type(default).__name__ if default is not None else 'int'}, got {value!r}") from None
    return str(value)


def load_config_file(path) -> dict:
    """Flat mapping from a JSON object or ``key = value`` lines (``#`` comments)."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        data.pop("schema", None)
        return data
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_output(path) -> Path:
    """Relative output paths land under ``$HETRINET_OUTPUT_ROOT`` when set."""
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


# -- data ------------------------------------------------------------------


def bundle_from_synth(config: SynthConfig) -> DatasetBundle:
    ds = generate(config)
    ids = {}
    for kind, n in zip(NodeType, (config.drugs, config.targets, config.diseases)):
        width = len(str(n - 1))
        ids[kind] = [f"{kind.label}_{i:0{width}d}" for i in range(n)]
    return DatasetBundle(
        ids=ids,
        triplets=[(*t, 1) for t in ds.positives],
        features={k: ds.features[k] for k in NodeType},
        heldout=list(ds.heldout),
    )


def load_data(config: RunConfig) -> tuple[DatasetBundle, dict]:
    """Dataset and per-type features for ``config``.

    Source precedence: ``data_dir``, then ``triplets`` (+ side tables), then
    an in-memory synthetic draw from the synth fields.
    """
    bundle = _load_bundle(config)
    feats, _ = featurize(bundle, config.min_frequency, config.max_vocab)
    return bundle, feats


def _load_bundle(config: RunConfig) -> DatasetBundle:
    config.validate_paths()
    if config.data_dir:
        bundle = load_dataset(config.data_dir)
    elif config.triplets:
        bundle = ingest(config.triplets, config.drugs, config.targets)
    else:
        bundle = bundle_from_synth(config.synth)
    if not bundle.positives:
        raise ValueError("dataset has no positive triplets")
    return bundle


def fingerprint(bundle: DatasetBundle, features: Mapping) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(bundle.counts, dtype=np.int64).tobytes())
    h.update(np.asarray(bundle.triplets, dtype=np.int64).tobytes())
    for k in NodeType:
        h.update(np.ascontiguousarray(features[k], dtype=np.float64).tobytes())
    return h.hexdigest()


def _train_graph(bundle: DatasetBundle, config: RunConfig, seed: int):
    train, val, test = split(bundle.positives, config.train, seed=seed)
    nd, nt, ns = bundle.counts
    graph = build_graph(train, n_drugs=nd, n_targets=nt, n_diseases=ns)
    return graph, train, val, test


# -- runs ------------------------------------------------------------------


@dataclass
class Artifacts:
    output_dir: Path
    config: Path
    checkpoints: list[Path]
    reports: list[Path]


def _prepare(config: RunConfig) -> Path:
    out = resolve_output(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    return out


def seeds(config: RunConfig) -> list[int]:
    """Repeat protocol: seeds base, base+1, ... base+repeats-1."""
    return [config.train.seed + r for r in range(config.train.repeats)]


def run_synth(config: RunConfig) -> Path:
    """Write a synthetic dataset directory; returns its path."""
    out = _prepare(config)
    bundle = bundle_from_synth(config.synth)
    bundle.save(out)
    meta = {"schema": "hetrinet-synth/1", **config.synth.to_dict(), **bundle.summary()}
    (out / "synth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote synthetic dataset to %s", out)
    return out


def run_ingest(config: RunConfig) -> Path:
    """Validate raw TSV tables and write them as a normalized dataset directory."""
    if not config.triplets:
        raise ValueError("ingest needs a triplets table")
    config.validate_paths()
    out = _prepare(config)
    bundle = ingest(config.triplets, config.drugs, config.targets)
    bundle.save(out)
    report = {"schema": "hetrinet-ingest/1", **bundle.summary()}
    (out / "ingest.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def run_featurize(config: RunConfig) -> Path:
    """Learn substructure vocabularies and write numeric feature tables.

    The output directory becomes a dataset directory whose feature tables
    make later runs skip featurization.
    """
    from .data import FEATURE_FILES, write_feature_table

    bundle = _load_bundle(config)
    feats, vocabs = featurize(bundle, config.min_frequency, config.max_vocab)
    out = _prepare(config)
    bundle.features = {}
    bundle.save(out)
    for kind in NodeType:
        write_feature_table(out / FEATURE_FILES[kind], bundle.ids[kind], feats[kind])
    for kind, vocab in vocabs.items():
        vocab.save(out / f"{kind.label}_vocab.txt")
    return out


def run_train(config: RunConfig) -> Artifacts:
    """Train one model per repeat seed, each in its own subdirectory."""
    bundle, feats = load_data(config)
    out = _prepare(config)
    dims = {k: int(feats[k].shape[1]) for k in NodeType}
    data_info = {"counts": list(bundle.counts), "fingerprint": fingerprint(bundle, feats)}
    checkpoints, reports = [], []
    for seed in seeds(config):
        graph, train, val, _ = _train_graph(bundle, config, seed)
        model = HeTriNetModel(config.model, dims, seed=seed)
        tc = dataclasses.replace(config.train, seed=seed)
        log.info("seed %d: %d train / %d validation triplets", seed, len(train), len(val))
        report = fit(graph, feats, model, tc, validation=val, known_positives=bundle.positives)
        d = out / f"seed_{seed}"
        d.mkdir(exist_ok=True)
        ckpt = d / "checkpoint.json"
        report.checkpoint = str(ckpt)
        model.save(ckpt, extra={"run_config": config.snapshot(), "train_seed": seed, "data": data_info})
        (d / "train_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        log.info("seed %d: best epoch %d of %d, %.1fs", seed, report.best_epoch, report.epochs_run, report.seconds)
        checkpoints.append(ckpt)
        reports.append(d / "train_report.json")
    return Artifacts(out, out / "config.json", checkpoints, reports)


def _read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None


def check_compatible(ckpt: Mapping, config: RunConfig, bundle: DatasetBundle, features: Mapping):
    """Raise CheckpointError naming every field where checkpoint and config disagree."""
    problems = []
    saved = ckpt.get("config", {})
    current = config.model.to_dict()
    for k in sorted(current):
        if k in saved and saved[k] != current[k]:
            problems.append(f"{k} (checkpoint {saved[k]!r}, config {current[k]!r})")
    run = ckpt.get("extra", {}).get("run_config", {})
    for k in _SPLIT_FIELDS:
        if k in run and run[k] != getattr(config.train, k):
            problems.append(f"{k} (checkpoint {run[k]!r}, config {getattr(config.train, k)!r})")
    for kind in NodeType:
        want = ckpt.get("input_dims", {}).get(kind.label)
        have = int(features[kind].shape[1])
        if want is not None and want != have:
            problems.append(f"{kind.label} feature dimension (checkpoint {want}, data {have})")
    data = ckpt.get("extra", {}).get("data")
    if data:
        if list(data.get("counts", [])) != list(bundle.counts):
            problems.append(f"node counts (checkpoint {data.get('counts')}, data {list(bundle.counts)})")
        elif data.get("fingerprint") != fingerprint(bundle, features):
            problems.append("dataset fingerprint (triplets or features differ from training data)")
    if problems:
        raise CheckpointError("checkpoint incompatible with config: " + "; ".join(problems))


def _load_for_inference(config: RunConfig, checkpoint):
    ckpt = _read_checkpoint(checkpoint)
    bundle, feats = load_data(config)
    check_compatible(ckpt, config, bundle, feats)
    model = HeTriNetModel.from_checkpoint(ckpt)
    seed = int(ckpt.get("extra", {}).get("train_seed", model.seed))
    graph, _, _, test = _train_graph(bundle, config, seed)
    return model, bundle, feats, graph, test, seed


def run_eval(config: RunConfig, checkpoint) -> MetricsReport:
    """Evaluate one checkpoint on its seed's test split; writes metrics next to it."""
    model, bundle, feats, graph, test, seed = _load_for_inference(config, checkpoint)
    pairs = build_pair_index(graph, model.config.neighbor_cap, model.seed)
    report = evaluate_model(
        lambda idx: model.logits(graph, feats, idx, pairs),
        test,
        bundle.counts,
        bundle.positives,
        n_negatives=config.n_negatives,
        cutoffs=config.cutoffs,
        threshold=config.threshold,
        seed=seed,
    )
    d = Path(checkpoint).parent
    (d / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (d / "metrics.txt").write_text(report.to_table(), encoding="utf-8")
    return report


def run_eval_dir(config: RunConfig, run_dir) -> dict:
    """Evaluate every ``seed_*`` checkpoint of a run; writes the mean/std summary."""
    run_dir = Path(run_dir)
    ckpts = sorted(run_dir.glob("seed_*/checkpoint.json"), key=lambda p: int(p.parent.name.split("_")[1]))
    if not ckpts:
        raise FileNotFoundError(f"no seed_*/checkpoint.json under {run_dir}")
    reports = {p.parent.name: run_eval(config, p) for p in ckpts}
    summary = summarize_reports(list(reports.values()))
    doc = {
        "schema": SUMMARY_SCHEMA,
        "runs": {k: r.to_dict() for k, r in reports.items()},
        "summary": summary,
    }
    (run_dir / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (run_dir / "metrics.txt").write_text(summary_table(summary), encoding="utf-8")
    return doc


def resolve_queries(bundle: DatasetBundle, query_triplets: Sequence) -> np.ndarray:
    """Map queries given as external ids or local indices to an (n, 3) array."""
    rows = []
    for q in query_triplets:
        q = tuple(q)[:3]
        if all(isinstance(x, (int, np.integer)) for x in q):
            for kind, x in zip(NodeType, q):
                if not 0 <= x < bundle.counts[kind]:
                    raise ValueError(f"{kind.label} index {x} out of range")
            rows.append(q)
            continue
        try:
            rows.append(tuple(bundle.index(kind, str(x)) for kind, x in zip(NodeType, q)))
        except KeyError as exc:
            raise ValueError(f"query {q!r} names an unknown node {exc}") from None
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def run_predict(checkpoint, query_triplets: Sequence, config: RunConfig | None = None) -> np.ndarray:
    """Sigmoid scores for ``query_triplets`` under a checkpoint.

    ``config`` defaults to the run configuration stored in the checkpoint.
    """
    if config is None:
        stored = _read_checkpoint(checkpoint).get("extra", {}).get("run_config")
        if stored is None:
            raise CheckpointError("checkpoint carries no run configuration; pass one explicitly")
        config = RunConfig.from_snapshot(stored)
    model, bundle, feats, graph, _, _ = _load_for_inference(config, checkpoint)
    idx = resolve_queries(bundle, query_triplets)
    if len(idx) == 0:
        return np.zeros(0)
    pairs = build_pair_index(graph, model.config.neighbor_cap, model.seed)
    return model.score(graph, feats, idx, pairs)


def write_predictions(path, bundle: DatasetBundle, idx: np.ndarray, scores: np.ndarray):
    rows = [(*bundle.external(t), repr(float(s))) for t, s in zip(idx, scores)]
    write_triplets(path, rows, header="drug_id\ttarget_id\tdisease_id\tscore")


def run_ablate(config: RunConfig) -> dict:
    """Train and evaluate every pair message mode with the same seeds.

    Writes ``ablation.json`` and ``ablation.txt`` (metrics by mode, plus the
    gap between full_nn and the best other mode) under the output directory.
    """
    out = _prepare(config)
    results = {}
    for mode in PairMessageMode:
        sub = config.replace(pair_message_mode=mode.value, output_dir=str(out / mode.value))
        run_train(sub)
        results[mode.value] = run_eval_dir(sub, resolve_output(sub.output_dir))["summary"]
    metrics = list(results[PairMessageMode.FULL_NN.value])
    others = [m.value for m in PairMessageMode if m != PairMessageMode.FULL_NN]
    gap = {
        name: results[PairMessageMode.FULL_NN.value][name]["mean"] - max(results[o][name]["mean"] for o in others)
        for name in metrics
    }
    doc = {"schema": ABLATION_SCHEMA, "seeds": seeds(config), "modes": results, "full_nn_gap": gap}
    (out / "ablation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "ablation.txt").write_text(ablation_table(doc), encoding="utf-8")
    return doc


def ablation_table(doc: Mapping) -> str:
    modes = list(doc["modes"])
    metrics = list(doc["modes"][modes[0]])
    width = max(len(m) for m in metrics + ["metric"])
    cols = modes + ["full_nn gap"]
    colw = max(16, *(len(c) for c in cols))
    lines = [f"{'metric':<{width}}  " + "  ".join(f"{c:>{colw}}" for c in cols)]
    for name in metrics:
        cells = [f"{doc['modes'][m][name]['mean']:.4f} +- {doc['modes'][m][name]['std']:.4f}" for m in modes]
        cells.append(f"{doc['full_nn_gap'][name]:+.4f}")
        lines.append(f"{name:<{width}}  " + "  ".join(f"{c:>{colw}}" for c in cells))
    return "\n".join(lines) + "\n"
