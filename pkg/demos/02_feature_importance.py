"""
Ranking features with extra-trees importance
============================================

One column carries the label, one is constant, the rest is noise.
The ranking should put the informative column first and give the
constant column exactly zero. The kept columns are then min-max scaled
with bounds from the training rows only.
"""

import numpy as np

from nidt.dataset import FeatureMatrix
from nidt.features import ExtraTreesConfig, fit_importance, fit_scaler, select_top_k, transform

rng = np.random.default_rng(0)
n = 500
y = rng.integers(0, 2, n)
cols = {
    "signal": y.astype(float),
    "const": np.full(n, 7.0),
    "noise_a": rng.random(n),
    "noise_b": rng.normal(size=n),
    "noise_c": rng.exponential(size=n),
}
X = FeatureMatrix(np.column_stack(list(cols.values())), tuple(cols))

report = fit_importance(X, y, ExtraTreesConfig(n_trees=100, seed=42))
for name, score in report.ranked():
    print(f"{name:8s} {score:.4f}")

sel = select_top_k(report, 3)
print("kept:", sel.kept)

# fit on the first 400 rows, apply to the last 100
train = FeatureMatrix(X.values[:400], X.columns)
held = FeatureMatrix(X.values[400:] * 1.5, X.columns)  # drift pushes some values out of range
scaler = fit_scaler(train, sel)
print("train range after scaling:", transform(train, sel, scaler).values.min(), transform(train, sel, scaler).values.max())
print("held-out max, clamped:   ", transform(held, sel, scaler).values.max())
print("held-out max, unclamped: ", transform(held, sel, scaler, clip=False).values.max())
