"""Tabular data: CSV loading, recipe-driven preprocessing, splits, synthetic data.

A recipe is a JSON object with these keys:

``label_column``
    Column the binary label is derived from.
``label_rule``
    ``{"type": "median_threshold"}`` (above the median is 1, ties are 0),
    ``{"type": "equals", "value": v}``, or ``{"type": "identity"}``.
``sensitive_column``
    Column name, or list of columns for rules that combine several.
``sensitive_rule``
    ``{"type": "equals" | "not_equals", "value": v}``, ``{"type": "identity"}``,
    ``{"type": "below" | "above", "value": v}``, or
    ``{"type": "minority_majority", "minority": [...], "majority": col}``
    (1 when the minority proportions sum to more than a fifth of the majority).
``feature_columns``
    Columns used as features. The sensitive column is never a feature.
``encodings``
    Optional ``{column: "onehot"}`` for categorical features.
``missing_values``
    Optional extra tokens read as missing (default ``["?", ""]``).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import EmptyDataset, InvalidInput, ParseError, SchemaError, TooSmallToSplit

RECIPE_KEYS = {"label_column", "label_rule", "sensitive_column", "sensitive_rule", "feature_columns",
               "encodings", "missing_values", "name"}


@dataclass
class LabeledDataset:
    features: np.ndarray
    sensitive: np.ndarray
    labels: np.ndarray
    feature_names: list = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.sensitive = np.asarray(self.sensitive, dtype=int).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        n = len(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] != n or self.sensitive.size != n:
            raise InvalidInput("features, sensitive and labels disagree in length")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.features.shape[1])]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], sensitive=self.sensitive[idx], labels=self.labels[idx])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features.astype("<f8"), self.sensitive.astype("<i8"), self.labels.astype("<i8")):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class SplitDataset:
    train: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset
    seed: int
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None


@dataclass
class RawTable:
    frame: pd.DataFrame
    missing: pd.DataFrame

    @property
    def n_rows(self) -> int:
        return len(self.frame)


def _recipe_columns(recipe):
    sens = recipe["sensitive_column"]
    sens = [sens] if isinstance(sens, str) else list(sens)
    return [recipe["label_column"], *sens, *recipe["feature_columns"]], sens


def load_recipe(path) -> dict:
    recipe = json.loads(Path(path).read_text())
    unknown = set(recipe) - RECIPE_KEYS
    if unknown:
        raise SchemaError(f"unknown recipe keys: {sorted(unknown)}")
    for key in ("label_column", "label_rule", "sensitive_column", "sensitive_rule", "feature_columns"):
        if key not in recipe:
            raise SchemaError(f"recipe is missing {key!r}")
    return recipe


def load_csv(path, schema: dict) -> RawTable:
    """Read the columns a recipe needs; numeric columns are parsed strictly."""
    tokens = schema.get("missing_values", ["?", ""])
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    needed, _ = _recipe_columns(schema)
    absent = [c for c in needed if c not in frame.columns]
    if absent:
        raise SchemaError(f"missing columns: {absent}")
    frame = frame[list(dict.fromkeys(needed))]
    missing = frame.isin(tokens) | frame.apply(lambda c: c.str.strip() == "")
    categorical = set(schema.get("encodings", {}))
    categorical |= {c for c in needed if _is_text_rule(schema, c)}
    out = {}
    for col in frame.columns:
        if col in categorical:
            out[col] = frame[col].where(~missing[col])
            continue
        cells = frame[col].where(~missing[col])
        try:
            # numpy's conversion is correctly rounded; pandas' fast parser is not
            out[col] = cells.astype(float)
        except ValueError:
            bad = pd.to_numeric(cells, errors="coerce").isna() & ~missing[col]
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(f"cannot parse {frame[col].iloc[row]!r} in column {col!r}, row {row}", row, col) from None
    return RawTable(pd.DataFrame(out), missing)


def _is_text_rule(recipe, col):
    _, sens = _recipe_columns(recipe)
    for rule_key, cols in (("label_rule", [recipe["label_column"]]), ("sensitive_rule", sens)):
        rule = recipe[rule_key]
        if col in cols and rule.get("type") in ("equals", "not_equals") and isinstance(rule.get("value"), str):
            return True
    return False


def _apply_rule(rule, frame, cols):
    kind = rule.get("type")
    col = frame[cols[0]]
    if kind == "identity":
        return col.astype(float).astype(int).to_numpy()
    if kind == "median_threshold":
        return (col > col.median()).astype(int).to_numpy()
    if kind == "equals":
        return (col == rule["value"]).astype(int).to_numpy()
    if kind == "not_equals":
        return (col != rule["value"]).astype(int).to_numpy()
    if kind == "below":
        return (col < rule["value"]).astype(int).to_numpy()
    if kind == "above":
        return (col > rule["value"]).astype(int).to_numpy()
    if kind == "minority_majority":
        minority = frame[rule["minority"]].sum(axis=1)
        return (minority > 0.2 * frame[rule["majority"]]).astype(int).to_numpy()
    raise SchemaError(f"unknown rule type {kind!r}")


def preprocess(raw: RawTable, recipe: dict, provenance: str = "") -> LabeledDataset:
    """Drop incomplete rows, derive label and sensitive attribute, one-hot encode."""
    frame = raw.frame.dropna().reset_index(drop=True)
    if len(frame) == 0:
        raise EmptyDataset("no rows left after dropping missing values")
    _, sens = _recipe_columns(recipe)
    labels = _apply_rule(recipe["label_rule"], frame, [recipe["label_column"]])
    sensitive = _apply_rule(recipe["sensitive_rule"], frame, sens)
    encodings = recipe.get("encodings", {})
    columns, names = [], []
    for col in recipe["feature_columns"]:
        if col in sens:
            continue
        if encodings.get(col) == "onehot":
            dummies = pd.get_dummies(frame[col].astype(str), prefix=col, dtype=float)
            columns.append(dummies.to_numpy())
            names += list(dummies.columns)
        else:
            columns.append(frame[col].to_numpy(dtype=float)[:, None])
            names.append(col)
    features = np.hstack(columns)
    if not np.all(np.isfinite(features)):
        raise ParseError("non-finite feature values after preprocessing")
    return LabeledDataset(features, sensitive, labels, names, provenance or recipe.get("name", ""))


def split(dataset: LabeledDataset, seed: int = 0, standardize: bool = True) -> SplitDataset:
    """64/16/20 train/validation/test split; optional standardization on train statistics."""
    n = len(dataset)
    if n < 10:
        raise TooSmallToSplit(f"need at least 10 rows, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(0.2 * n))
    n_val = int(round(0.2 * (n - n_test)))
    test, val, train = perm[:n_test], perm[n_test : n_test + n_val], perm[n_test + n_val :]
    parts = [dataset.subset(np.sort(idx)) for idx in (train, val, test)]
    mean = scale = None
    if standardize:
        mean = parts[0].features.mean(axis=0)
        scale = parts[0].features.std(axis=0)
        scale[scale == 0] = 1.0
        parts = [replace(p, features=(p.features - mean) / scale) for p in parts]
    return SplitDataset(*parts, seed=seed, mean=mean, scale=scale)


def synth_biased_gaussians(n_per_group: int, dim: int = 2, shift: float = 2.0, flip_rate: float = 0.0,
                           seed: int = 0, *, label_shift: float = 0.0, proxy: float = 5.0) -> LabeledDataset:
    """Two groups whose features are shifted copies of the same latent Gaussian.

    Latent ``z ~ N(0, I)``; label ``y = 1[z_0 > 0]`` with ``flip_rate`` noise, so base
    rates are equal across groups. Group 1 observes ``x_0 = z_0 + shift + label_shift * y``:
    a classifier trained on pooled data cannot tell whether a large ``x_0`` comes from the
    label or the group, which biases it. Group 1 also gets ``+-proxy`` (random sign) on
    ``x_1``; the sign symmetry hides it from linear models while letting a shared
    nonlinear transform recover the group.
    """
    if dim < 2:
        raise InvalidInput("synthetic data needs dim >= 2")
    rng = np.random.default_rng(seed)
    n = 2 * n_per_group
    s = np.repeat([0, 1], n_per_group)
    z = rng.normal(size=(n, dim))
    y = (z[:, 0] > 0).astype(int)
    flip = rng.random(n) < flip_rate
    y = np.where(flip, 1 - y, y)
    x = z.copy()
    x[:, 0] += s * (shift + label_shift * y)
    x[:, 1] += s * proxy * rng.choice([-1.0, 1.0], size=n)
    perm = rng.permutation(n)
    tag = f"synth(n={n_per_group},dim={dim},shift={shift},flip={flip_rate},label_shift={label_shift},proxy={proxy},seed={seed})"
    return LabeledDataset(x[perm], s[perm], y[perm], provenance=tag)


def save_dataset(split_data: SplitDataset, path) -> None:
    """Cache a split as ``.npz`` with a checksum over every array."""
    arrays = {}
    for name in ("train", "validation", "test"):
        part = getattr(split_data, name)
        arrays[f"{name}_x"] = part.features
        arrays[f"{name}_s"] = part.sensitive
        arrays[f"{name}_y"] = part.labels
    if split_data.mean is not None:
        arrays["mean"], arrays["scale"] = split_data.mean, split_data.scale
    digest = _digest(arrays)
    meta = {"seed": split_data.seed, "feature_names": split_data.train.feature_names,
            "provenance": split_data.train.provenance, "checksum": digest}
    np.savez(path, meta=np.array(json.dumps(meta)), **arrays)


def load_dataset(path) -> SplitDataset:
    with np.load(path, allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files if k != "meta"}
        meta = json.loads(str(npz["meta"]))
    if _digest(arrays) != meta["checksum"]:
        raise InvalidInput(f"{path}: checksum mismatch")
    parts = [LabeledDataset(arrays[f"{n}_x"], arrays[f"{n}_s"], arrays[f"{n}_y"], meta["feature_names"],
                            meta["provenance"]) for n in ("train", "validation", "test")]
    return SplitDataset(*parts, seed=meta["seed"], mean=arrays.get("mean"), scale=arrays.get("scale"))


def _digest(arrays) -> str:
    h = hashlib.sha256()
    for key in sorted(arrays):
        h.update(key.encode())
        h.update(np.ascontiguousarray(arrays[key]).tobytes())
    return h.hexdigest()
