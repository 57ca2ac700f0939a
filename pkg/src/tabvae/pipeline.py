"""Preprocessing: column drops, imputation, quantile-Gaussian encoding,
one-hot blocks, and stratified train/val/test splits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import serialize
from .schema import CATEGORICAL, NUMERICAL, TARGET, Column, DataError, FeatureSchema, Table
from .transforms import QuantileGaussianTransform, one_hot


def _allocate(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation of ``total`` slots across classes."""
    n = counts.sum()
    quota = counts * (total / n)
    take = np.floor(quota).astype(np.int64)
    frac = quota - take
    order = np.lexsort((np.arange(len(counts)), -frac))
    short = total - take.sum()
    for i in order[:short]:
        take[i] += 1
    return np.minimum(take, counts)


def make_split(n: int, test_fraction: float, val_fraction: float, seed: int,
               y: np.ndarray | None = None) -> dict:
    """Deterministic index partition; stratified by ``y`` when possible.

    The validation fraction applies to the rows left after the test rows
    are removed, with floor rounding on both sizes.
    """
    if not (0.0 < test_fraction < 1.0) or not (0.0 < val_fraction < 1.0):
        raise ValueError("test and val fractions must lie strictly in (0, 1)")
    if test_fraction + val_fraction >= 1.0:
        raise ValueError("test and val fractions must sum to less than 1")
    n_test = int(np.floor(n * test_fraction))
    n_val = int(np.floor((n - n_test) * val_fraction))
    rng = np.random.default_rng(seed)

    stratify = y is not None
    if stratify:
        y = np.asarray(y)
        _, counts = np.unique(y, return_counts=True)
        if counts.min() < 3:
            warnings.warn("a class has fewer samples than splits; falling back to "
                          "an unstratified split")
            stratify = False

    if not stratify:
        perm = rng.permutation(n)
        test = perm[:n_test]
        val = perm[n_test:n_test + n_val]
        train = perm[n_test + n_val:]
    else:
        classes, counts = np.unique(y, return_counts=True)
        take_test = _allocate(counts, n_test)
        take_val = _allocate(counts - take_test, n_val)
        test_parts, val_parts, train_parts = [], [], []
        for c, t_test, t_val in zip(classes, take_test, take_val):
            idx = rng.permutation(np.flatnonzero(y == c))
            test_parts.append(idx[:t_test])
            val_parts.append(idx[t_test:t_test + t_val])
            train_parts.append(idx[t_test + t_val:])
        test = np.concatenate(test_parts)
        val = np.concatenate(val_parts)
        train = np.concatenate(train_parts)

    return {"train": np.sort(train), "val": np.sort(val), "test": np.sort(test)}


@dataclass
class Dataset:
    """Preprocessed table: transformed numerics, one-hot blocks, class ids."""

    schema: FeatureSchema
    x_num: np.ndarray
    x_cat: np.ndarray
    y: np.ndarray
    splits: dict
    transforms: dict = field(default_factory=dict)
    imputation: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def features(self, split: str | None = None):
        if split is None:
            return self.x_num, self.x_cat, self.y
        idx = self.splits[split]
        return self.x_num[idx], self.x_cat[idx], self.y[idx]

    def cat_blocks(self, x_cat: np.ndarray) -> list:
        """Split a one-hot matrix into per-feature blocks."""
        blocks = []
        off = 0
        for w in self.schema.cat_widths():
            blocks.append(x_cat[:, off:off + w])
            off += w
        return blocks

    # -- mapping between dataset space and original units ------------------

    def decode_rows(self, x_num: np.ndarray, cat_indices: np.ndarray,
                    y: np.ndarray) -> Table:
        """Assemble an original-space table from dataset-space pieces."""
        cols = {}
        for j, c in enumerate(self.schema.numerical):
            cols[c.name] = self.transforms[c.name].inverse(x_num[:, j])
        for j, c in enumerate(self.schema.categorical):
            labels = np.array(c.categories, dtype=object)
            cols[c.name] = labels[cat_indices[:, j].astype(np.int64)]
        tgt = self.schema.target
        labels = np.array(tgt.categories, dtype=object)
        cols[tgt.name] = labels[np.asarray(y, dtype=np.int64)]
        return Table(self.schema, cols)

    def original_table(self, split: str | None = None) -> Table:
        x_num, x_cat, y = self.features(split)
        cat_idx = np.stack([b.argmax(axis=1) for b in self.cat_blocks(x_cat)], axis=1) \
            if self.schema.m_c else np.zeros((len(y), 0), dtype=np.int64)
        return self.decode_rows(x_num, cat_idx, y)

    def encode_table(self, table: Table):
        """Map an original-space table into dataset space with the fitted
        transforms (unseen or missing categories fall back to the train mode)."""
        n = table.n_rows
        x_num = np.zeros((n, self.schema.m_n))
        for j, c in enumerate(self.schema.numerical):
            vals = np.asarray(table.column(c.name), dtype=np.float64).copy()
            nan = np.isnan(vals)
            if nan.any():
                vals[nan] = self.imputation["numeric"][c.name]
            x_num[:, j] = self.transforms[c.name].forward(vals)
        blocks = []
        for c in self.schema.categorical:
            lookup = {cat: i for i, cat in enumerate(c.categories)}
            mode_idx = lookup[self.imputation["categorical"][c.name]]
            raw = table.column(c.name)
            idx = np.array([lookup.get(v, mode_idx) if v is not None else mode_idx
                            for v in raw], dtype=np.int64)
            blocks.append(one_hot(idx, len(c.categories)))
        x_cat = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))
        tgt = self.schema.target
        lookup = {cat: i for i, cat in enumerate(tgt.categories)}
        raw = table.column(tgt.name)
        try:
            y = np.array([lookup[v] for v in raw], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown target label {exc.args[0]!r}") from None
        return x_num, x_cat, y

    # -- checkpoint directory ----------------------------------------------

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.schema.save(out / "schema.json")
        serialize.write_json(out / "transforms.json", self._transforms_dict())
        serialize.write_json(out / "splits.json",
                             {k: np.asarray(v).tolist() for k, v in self.splits.items()})
        mat = np.concatenate([self.x_num, self.x_cat,
                              self.y.reshape(-1, 1).astype(np.float64)], axis=1)
        serialize.write_matrix(out / "X.bin", mat)

    def _transforms_dict(self) -> dict:
        return {
            "numeric": {name: {**tr.to_dict(), "mean": self.imputation["numeric"][name]}
                        for name, tr in self.transforms.items()},
            "categorical": {name: {"mode": mode}
                            for name, mode in self.imputation["categorical"].items()},
            "dropped": list(self.dropped),
        }

    @classmethod
    def load(cls, in_dir) -> "Dataset":
        src = Path(in_dir)
        schema = FeatureSchema.load(src / "schema.json")
        tr = serialize.read_json(src / "transforms.json")
        splits = {k: np.asarray(v, dtype=np.int64)
                  for k, v in serialize.read_json(src / "splits.json").items()}
        mat = serialize.read_matrix(src / "X.bin")
        m_n = schema.m_n
        width_cat = sum(schema.cat_widths())
        x_num = mat[:, :m_n]
        x_cat = mat[:, m_n:m_n + width_cat]
        y = mat[:, -1].astype(np.int64)
        transforms = {name: QuantileGaussianTransform.from_dict(d)
                      for name, d in tr["numeric"].items()}
        imputation = {
            "numeric": {name: d["mean"] for name, d in tr["numeric"].items()},
            "categorical": {name: d["mode"] for name, d in tr["categorical"].items()},
        }
        return cls(schema, x_num, x_cat, y, splits, transforms, imputation,
                   dropped=tr.get("dropped", []))


def _train_mode(values) -> str:
    present = [v for v in values if v is not None]
    uniq, counts = np.unique(np.array(present, dtype=object), return_counts=True)
    best = counts.max()
    return sorted(u for u, c in zip(uniq, counts) if c == best)[0]


def preprocess(table: Table, test_fraction: float = 0.2, val_fraction: float = 0.15,
               seed: int = 0, split: dict | None = None) -> Dataset:
    """Run the full preprocessing pipeline and return a ``Dataset``.

    All statistics (drops, imputation values, quantile knots, category
    vocabularies) are fitted on training rows only.
    """
    schema = table.schema
    tgt = schema.target
    y_raw = table.column(tgt.name)
    keep = np.array([v is not None for v in y_raw])
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} rows with missing target")
        table = table.select_rows(np.flatnonzero(keep))
        y_raw = table.column(tgt.name)
    n = table.n_rows

    classes = sorted(set(y_raw))
    class_index = {c: i for i, c in enumerate(classes)}
    y = np.array([class_index[v] for v in y_raw], dtype=np.int64)

    if split is None:
        split = make_split(n, test_fraction, val_fraction, seed, y=y)
    train_idx = np.asarray(split["train"])

    dropped = []
    kept_cols = []
    num_means = {}
    cat_modes = {}
    transforms = {}

    for col in schema.columns:
        if col.kind == TARGET:
            kept_cols.append(Column(col.name, TARGET, categories=[str(c) for c in classes]))
            continue
        values = table.column(col.name)
        train_vals = values[train_idx]
        if col.kind == NUMERICAL:
            present = train_vals[~np.isnan(train_vals)]
            if present.size == 0:
                dropped.append(col.name)
                continue
            mean = float(present.mean())
            imputed = np.where(np.isnan(train_vals), mean, train_vals)
            if np.var(imputed) == 0.0:
                dropped.append(col.name)
                continue
            num_means[col.name] = mean
            transforms[col.name] = QuantileGaussianTransform().fit(imputed)
            kept_cols.append(Column(col.name, NUMERICAL))
        else:
            present = [v for v in train_vals if v is not None]
            if not present:
                dropped.append(col.name)
                continue
            cats = sorted(set(present))
            if len(cats) < 2:
                dropped.append(col.name)
                continue
            cat_modes[col.name] = _train_mode(train_vals)
            kept_cols.append(Column(col.name, CATEGORICAL, categories=cats))

    fitted = FeatureSchema(kept_cols, seed=seed)
    if fitted.m == 0:
        raise DataError("no usable feature columns after preprocessing")

    x_num = np.zeros((n, fitted.m_n))
    for j, c in enumerate(fitted.numerical):
        vals = table.column(c.name).copy()
        nan = np.isnan(vals)
        if nan.any():
            vals[nan] = num_means[c.name]
        x_num[:, j] = transforms[c.name].forward(vals)

    blocks = []
    for c in fitted.categorical:
        lookup = {cat: i for i, cat in enumerate(c.categories)}
        mode_idx = lookup[cat_modes[c.name]]
        vals = table.column(c.name)
        unseen = sum(1 for v in vals if v is not None and v not in lookup)
        if unseen:
            warnings.warn(f"column {c.name!r}: {unseen} values outside the training "
                          "vocabulary mapped to the training mode")
        idx = np.array([lookup.get(v, mode_idx) if v is not None else mode_idx
                        for v in vals], dtype=np.int64)
        blocks.append(one_hot(idx, len(c.categories)))
    x_cat = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))

    imputation = {"numeric": num_means, "categorical": cat_modes}
    return Dataset(fitted, x_num, x_cat, y, split, transforms, imputation, dropped)
