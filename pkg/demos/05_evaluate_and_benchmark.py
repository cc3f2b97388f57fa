"""
Metrics and test speed
======================

Confusion matrix, rates and ROC/AUC from scores, then a timed scoring
pass of an untrained bundle at one thread and at four.
"""

import tempfile
from pathlib import Path

import numpy as np

from nidt import dataset, evaluation, transfer
from nidt.features import FeatureSelection, fit_scaler
from nidt.model import build
from nidt.synthetic import make_records

# scores from a noisy detector
rng = np.random.default_rng(3)
labels = rng.integers(0, 2, 1000)
scores = np.clip(labels * 0.35 + rng.random(1000) * 0.65, 0, 1)

report, curve = evaluation.evaluate(labels, scores)
print(report.to_text())
print("ROC points:", len(curve.points()), " first:", curve.points()[0], " last:", curve.points()[-1])

# timing uses a real bundle so preprocessing is included
out = Path(tempfile.mkdtemp(prefix="nidt-demo-"))
records, schema = make_records(5000, d=32, seed=4)
enc = dataset.fit_encoding(records, schema=schema)
X, _ = dataset.to_matrix(records, enc, schema)
sel = FeatureSelection(tuple(schema.feature_columns))
transfer.export_bundle(build("cnn-lstm", 32), sel, fit_scaler(X, sel), enc, out / "m.nidt", schema)
engine = transfer.import_bundle(out / "m.nidt")

for threads in (1, 4):
    r = evaluation.benchmark(engine, records, threads)
    evaluation.append_benchmark_log(out / "bench.csv", r, "cnn-lstm", "target")
    print(f"threads {threads}: {r.wall_seconds:.3f}s, {r.records_per_second:.0f} records/s")
print((out / "bench.csv").read_text())
