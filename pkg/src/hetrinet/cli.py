"""``hetrinet`` command line.

Every RunConfig field is a flag (``--hidden-dim 32``, ``--synth-seed 3``).
``--config FILE`` supplies any of them as JSON or ``key = value`` lines;
flags override the file. Relative ``--out`` paths resolve under
``$HETRINET_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .data import IngestError, ingest, read_triplet_rows
from .features import FeatureInputError
from .graph import GraphInputError
from .model import CheckpointError
from .pipeline import RunConfig
from .train import NegativeSamplingError, SplitError, TrainingDivergedError

# ingest re-exported here: the CLI owns the file formats
__all__ = ["main", "build_parser", "ingest"]

log = logging.getLogger("hetrinet")

_ERRORS = (
    CheckpointError,
    IngestError,
    FeatureInputError,
    GraphInputError,
    SplitError,
    NegativeSamplingError,
    TrainingDivergedError,
    FileNotFoundError,
    ValueError,
    json.JSONDecodeError,
)

# flags spelled differently from their config keys
_ALIASES = {"output_dir": "--out", "data_dir": "--data"}


def _flag(key: str) -> str:
    return _ALIASES.get(key, "--" + key.replace("_", "-"))


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress at INFO level")
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON or key = value file with any of the options below")
    for key, default in RunConfig.flat_keys().items():
        shown = ",".join(map(str, default)) if isinstance(default, list) else default
        g.add_argument(_flag(key), dest=key, default=argparse.SUPPRESS, metavar="V", help=f"default: {shown}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetrinet", description="Triplet-attention drug/target/disease scoring.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate TSV tables and write a dataset directory")
    _add_config_flags(p)

    p = sub.add_parser("featurize", help="learn substructure vocabularies and write feature tables")
    _add_config_flags(p)

    p = sub.add_parser("synth", help="write a synthetic planted-rule dataset")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train one model per repeat seed")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint or every seed of a run directory")
    p.add_argument("target", help="checkpoint.json or a run directory")
    _add_config_flags(p)

    p = sub.add_parser("predict", help="score query triplets with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("queries", help="TSV of drug_id, target_id, disease_id (label column ignored)")
    p.add_argument("--output", help="write scores here instead of stdout")
    _add_config_flags(p)

    p = sub.add_parser("ablate", help="train and evaluate all five pair message modes")
    _add_config_flags(p)
    return parser


def _config(args, base: RunConfig | None = None) -> RunConfig:
    values = (base or RunConfig()).flat()
    if getattr(args, "config", None):
        values.update(pipeline.load_config_file(args.config))
    keys = RunConfig.flat_keys()
    values.update({k: v for k, v in vars(args).items() if k in keys})
    return RunConfig.from_flat(values)


def _stored_config(checkpoint: Path) -> RunConfig | None:
    try:
        data = json.loads(checkpoint.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    stored = data.get("extra", {}).get("run_config")
    return RunConfig.from_snapshot(stored) if stored else None


def _eval(args) -> int:
    target = Path(args.target)
    if target.is_dir():
        snap = target / "config.json"
        base = RunConfig.load(snap) if snap.exists() else None
        doc = pipeline.run_eval_dir(_config(args, base), target)
        print((target / "metrics.txt").read_text(encoding="utf-8"), end="")
        return 0 if doc else 1
    config = _config(args, _stored_config(target))
    report = pipeline.run_eval(config, target)
    print(report.to_table(), end="")
    return 0


def _predict(args) -> int:
    ckpt = Path(args.checkpoint)
    config = _config(args, _stored_config(ckpt))
    queries = [row[1:4] for row in read_triplet_rows(args.queries)]
    scores = pipeline.run_predict(ckpt, queries, config)
    bundle = pipeline._load_bundle(config)
    idx = pipeline.resolve_queries(bundle, queries)
    if args.output:
        pipeline.write_predictions(args.output, bundle, idx, scores)
    else:
        print("drug_id\ttarget_id\tdisease_id\tscore")
        for t, s in zip(idx, scores):
            print("\t".join([*bundle.external(t), f"{s:.6f}"]))
    return 0


def _run(args) -> int:
    cmd = args.command
    if cmd == "eval":
        return _eval(args)
    if cmd == "predict":
        return _predict(args)
    config = _config(args)
    if cmd == "synth":
        out = pipeline.run_synth(config)
        print(f"synthetic dataset written to {out}")
    elif cmd == "ingest":
        out = pipeline.run_ingest(config)
        print((out / "ingest.json").read_text(encoding="utf-8"), end="")
    elif cmd == "featurize":
        out = pipeline.run_featurize(config)
        print(f"features written to {out}")
    elif cmd == "train":
        art = pipeline.run_train(config)
        for ck in art.checkpoints:
            print(ck)
    elif cmd == "ablate":
        pipeline.run_ablate(config)
        out = pipeline.resolve_output(config.output_dir)
        print((out / "ablation.txt").read_text(encoding="utf-8"), end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _run(args)
    except _ERRORS as exc:
        print(f"hetrinet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
