"""Two-dimensional toy datasets with hand-crafted decision boundaries.

Points are drawn uniformly over a square domain and labeled by a boundary
rule. ``circles`` uses concentric rings of radius r, 2r, 3r over the
[-3r, 3r]^2 square; ``sin`` thresholds against a sine curve; ``blobs`` and
``xor`` are axis-aligned variants (quadrant labels and the sign-product
parity, respectively).
"""

from __future__ import annotations

import numpy as np

from .schema import CATEGORICAL, NUMERICAL, TARGET, Column, FeatureSchema, Table

TOY_NAMES = ("circles", "sin", "blobs", "xor")


def circle_labels(x1: np.ndarray, x2: np.ndarray, r: float) -> np.ndarray:
    s = x1 * x1 + x2 * x2
    labels = np.full(len(x1), 3, dtype=np.int64)
    labels[s <= (3.0 * r) ** 2] = 2
    labels[s <= (2.0 * r) ** 2] = 1
    labels[s < r ** 2] = 0
    return labels


def toy_generate(name: str, n: int, seed: int, r: float = 1.0) -> Table:
    if name not in TOY_NAMES:
        raise ValueError(f"unknown toy dataset {name!r}; choose from {TOY_NAMES}")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)

    if name == "circles":
        lo, hi = -3.0 * r, 3.0 * r
    else:
        lo, hi = -3.0, 3.0
    x1 = rng.uniform(lo, hi, size=n)
    x2 = rng.uniform(lo, hi, size=n)

    if name == "circles":
        labels = circle_labels(x1, x2, r)
    elif name == "sin":
        amplitude = (hi - lo) / 4.0
        boundary = np.sin(2.0 * np.pi * x1 / (hi - lo)) * amplitude
        labels = (x2 > boundary).astype(np.int64)
    elif name == "blobs":
        labels = (2 * (x2 > 0.0) + (x1 > 0.0)).astype(np.int64)
    else:  # xor
        labels = ((x1 > 0.0) != (x2 > 0.0)).astype(np.int64)

    classes = [str(c) for c in sorted(set(labels.tolist()))]
    schema = FeatureSchema([
        Column("x1", NUMERICAL),
        Column("x2", NUMERICAL),
        Column("label", TARGET, categories=classes),
    ], seed=seed)
    cols = {
        "x1": x1,
        "x2": x2,
        "label": np.array([str(v) for v in labels], dtype=object),
    }
    return Table(schema, cols)
