"""
Training in a source domain, scoring in a target domain
=======================================================

Fits the whole pipeline on synthetic flows, writes one bundle file, and
loads it again as a frozen scoring engine. The engine's scores are
compared bit for bit with the in-memory model.

Takes about half a minute on one core.
"""

import tempfile
from pathlib import Path

import numpy as np

from nidt import dataset, transfer
from nidt.config import RunConfig
from nidt.features import transform
from nidt.model import predict_proba
from nidt.pipeline import fit_source
from nidt.synthetic import make_records

out = Path(tempfile.mkdtemp(prefix="nidt-demo-"))
records, schema = make_records(2000, d=32, seed=0)
cfg = RunConfig()  # defaults: top-32 features, Adam 1e-3, batch 256, <= 50 epochs, patience 5
train, val, test = dataset.split(records, dataset.SplitSpec(seed=cfg.seed))

art = fit_source(train, val, "cnn-lstm", cfg, schema)
print(f"trained {len(art.report.epochs)} epochs, best epoch {art.report.best_epoch}, val acc {art.report.best_val_acc:.4f}")

nbytes, digest = transfer.export_bundle(
    art.model, art.selection, art.scaler, art.encoding, out / "model.nidt", schema, art.metadata(len(train), len(val), cfg.seed)
)
print(f"bundle {nbytes} bytes, digest {digest}")

# target side: nothing but the bundle file
engine = transfer.import_bundle(out / "model.nidt", threads=1)
scores, labels = transfer.infer(engine, test)
print("target accuracy:", np.mean(labels == [r.label for r in test]))

# source side, same rows
X, _ = dataset.to_matrix(test, art.encoding, schema)
source = predict_proba(art.model, transform(X, art.selection, art.scaler).values)
print("identical score bits:", scores.tobytes() == source.tobytes())

# the engine is read-only
try:
    engine.model.tensors()[0][0] = 0
except ValueError as exc:
    print("weights frozen:", exc)
