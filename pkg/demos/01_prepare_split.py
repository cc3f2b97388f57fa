"""
Loading flow records and splitting them
=======================================

Writes a small synthetic capture in the same CSV layout the loader expects,
reads it back, and splits it 60/20/20 with class proportions kept.
"""

import tempfile
from pathlib import Path

from nidt import dataset
from nidt.synthetic import make_records

out = Path(tempfile.mkdtemp(prefix="nidt-demo-"))

# 1000 flows, 6 numeric columns and one protocol-like categorical column
records, schema = make_records(1000, d=6, seed=1, categorical=1)
dataset.write_csv(records, out / "capture.csv", schema)
print("columns:", ", ".join(schema.names))

records = dataset.load_csv(out / "capture.csv", schema)
print("loaded", len(records), "records,", sum(r.label for r in records), "attacks")

# categorical codes are assigned in lexicographic order; unseen values get len(table)
enc = dataset.fit_encoding(records, schema=schema)
print("codes for c0:", enc.codes["c0"], "-> unseen 'sctp' maps to", enc.code("c0", "sctp"))

X, y = dataset.to_matrix(records, enc, schema)
print("feature matrix", X.shape)

spec = dataset.SplitSpec((0.6, 0.2, 0.2), seed=42, stratify=True)
train, val, test = dataset.split(records, spec)
for name, part in (("train", train), ("val", val), ("test", test)):
    share = sum(r.label for r in part) / len(part)
    print(f"{name:5s} {len(part):4d} rows, attack share {share:.3f}")

# the rounding rule at full scale
print("257673 rows ->", dataset.split_sizes(257_673, (0.6, 0.2, 0.2)))
