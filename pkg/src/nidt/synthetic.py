"""Synthetic flow data for tests and demos when the UNSW-NB15 CSVs are not at hand."""

from __future__ import annotations

import numpy as np

from .dataset import ColumnSchema, FlowRecord

_ATTACKS = ("Analysis", "Backdoors", "DoS", "Exploits", "Fuzzers", "Generic", "Reconnaissance", "Shellcode", "Worms")


def make_separable(n: int, d: int = 32, margin: float = 1.0, seed: int = 0):
    """Gaussian points labelled by a random hyperplane through the origin.

    Returns ``(X, y, w)``; every point lies at distance ``>= margin`` from the
    hyperplane with unit normal ``w`` (rejection sampling).
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    X = np.empty((n, d))
    filled = 0
    while filled < n:
        cand = rng.standard_normal((2 * (n - filled) + 16, d))
        cand = cand[np.abs(cand @ w) >= margin][: n - filled]
        X[filled : filled + len(cand)] = cand
        filled += len(cand)
    y = (X @ w > 0).astype(np.int64)
    return X, y, w


def synthetic_schema(d: int = 32, categorical: int = 0) -> ColumnSchema:
    cols = [("id", "id")]
    cols += [(f"f{i:02d}", "numeric") for i in range(d)]
    cols += [(f"c{i}", "categorical") for i in range(categorical)]
    cols += [("attack_cat", "category"), ("label", "label")]
    return ColumnSchema("synthetic", 1, tuple(cols))


def make_records(n: int, d: int = 32, margin: float = 1.0, seed: int = 0, categorical: int = 0):
    """Flow records over ``synthetic_schema(d, categorical)``; numeric columns are ``make_separable``
    output shifted and scaled per column so raw ranges differ. Categorical columns are noise."""
    X, y, _ = make_separable(n, d, margin, seed)
    rng = np.random.default_rng(seed + 1)
    X = X * rng.uniform(0.5, 1000.0, d) + rng.uniform(-50, 50, d)
    protos = ("icmp", "tcp", "udp")
    records = []
    for i in range(n):
        vals = [str(i)] + [float(v) for v in X[i]]
        vals += [protos[rng.integers(3)] for _ in range(categorical)]
        label = int(y[i])
        cat = _ATTACKS[rng.integers(len(_ATTACKS))] if label else ""
        records.append(FlowRecord(tuple(vals), label, cat))
    return records, synthetic_schema(d, categorical)
