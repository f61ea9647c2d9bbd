"""Raw TSV tables with SMILES and sequences: ingest, featurize, train, predict.

    python3 demos/ingest_smiles.py [output_dir]
"""

import sys
import tempfile
from pathlib import Path

from hetrinet.pipeline import RunConfig, run_featurize, run_ingest, run_predict, run_train

DRUGS = {
    "aspirin": "CC(=O)OC1=CC=CC=C1C(=O)O",
    "ibuprofen": "CC(C)CC1=CC=C(C=C1)C(C)C(=O)O",
    "caffeine": "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "paracetamol": "CC(=O)NC1=CC=C(C=C1)O",
}
TARGETS = {
    "COX1": "MSRSLLLRFLLFLLLLPPLPVLLADPGAPTPVNPCCYYPCQHQGICVRFGLDRYQCDCTRTGYSGPNCTIPGLWTWLRNSLRPSPSFTHFLLTHGRWFWEFVNATFIRE",
    "COX2": "MLARALLLCAVLALSHTANPCCSHPCQNRGVCMSVGFDQYKCDCTRTGFYGENCSTPEFLTRIKLFLKPTPNTVHYILTHFKGFWNVVNNIPFLRNAIMSYVLTSRSHL",
    "ADORA2A": "MPIMGSSVYITVELAIAVLAILGNVLVCWAVWLNSNLQNVTNYFVVSLAAADIAVGVLAIPFAITISTGFCAACHGCLFIACFVLVLTQSSIFSLLAIAIDRYIAIRIP",
}
TRIPLETS = [
    ("aspirin", "COX1", "pain"),
    ("aspirin", "COX2", "inflammation"),
    ("ibuprofen", "COX1", "inflammation"),
    ("ibuprofen", "COX2", "pain"),
    ("caffeine", "ADORA2A", "fatigue"),
    ("paracetamol", "COX2", "fever"),
    ("aspirin", "COX1", "fever"),
    ("ibuprofen", "COX2", "fever"),
    ("paracetamol", "COX1", "pain"),
    ("paracetamol", "COX2", "pain"),
    ("caffeine", "ADORA2A", "pain"),
    ("aspirin", "COX2", "fever"),
    ("ibuprofen", "COX1", "fever"),
    ("caffeine", "COX1", "fatigue"),
    ("paracetamol", "COX1", "fever"),
    ("aspirin", "COX1", "inflammation"),
]


def write(path: Path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")


def main():
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="hetrinet-ingest-"))
    raw = root / "raw"
    raw.mkdir(parents=True, exist_ok=True)
    write(raw / "triplets.tsv", TRIPLETS)
    write(raw / "drugs.tsv", DRUGS.items())
    write(raw / "targets.tsv", TARGETS.items())

    cfg = RunConfig(
        triplets=str(raw / "triplets.tsv"),
        drugs=str(raw / "drugs.tsv"),
        targets=str(raw / "targets.tsv"),
        output_dir=str(root / "dataset"),
    )
    dataset = run_ingest(cfg)
    featured = run_featurize(RunConfig(data_dir=str(dataset), output_dir=str(root / "featured"), min_frequency=2))
    print((featured / "drug_vocab.txt").read_text(encoding="utf-8").splitlines()[:8])

    train_cfg = RunConfig().replace(
        data_dir=str(featured),
        output_dir=str(root / "run"),
        hidden_dim=8,
        heads=2,
        decoder_hidden_dims=(16,),
        repeats=1,
        max_epochs=100,
        patience=100,
        train_fraction=0.75,
        validation_fraction_of_train=0.2,
    )
    art = run_train(train_cfg)
    queries = [("caffeine", "COX1", "pain"), ("ibuprofen", "COX1", "pain")]
    for q, s in zip(queries, run_predict(art.checkpoints[0], queries)):
        print("\t".join(q), f"{s:.4f}")


if __name__ == "__main__":
    main()
