"""Tabular ingestion, encoding, relabeling, and the synthetic benchmark.

Conventions fixed here and relied on everywhere else:
  - continuous features are z-scored (population std), categoricals one-hot
    in sorted category order, the target min-max scaled to [0,1];
  - all statistics come from the training split only;
  - the encoded column layout is schema feature order, one column per
    continuous feature and one block per categorical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    MissingValueError,
    NonNumericValueError,
    SchemaFingerprintError,
    SchemaFitError,
    UnknownCategoryError,
)

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureDesc:
    name: str
    kind: str
    categories: Optional[tuple[str, ...]] = None
    mean: Optional[float] = None
    std: Optional[float] = None

    @property
    def width(self) -> int:
        return 1 if self.kind == CONTINUOUS else len(self.categories)


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureDesc, ...]
    target: str
    target_min: float
    target_max: float

    @property
    def encoded_width(self) -> int:
        return sum(f.width for f in self.features)

    def column_labels(self) -> list[str]:
        labels = []
        for f in self.features:
            if f.kind == CONTINUOUS:
                labels.append(f.name)
            else:
                labels.extend(f"{f.name}={c}" for c in f.categories)
        return labels

    def to_json(self) -> dict:
        feats = []
        for f in self.features:
            entry: dict = {"name": f.name, "kind": f.kind}
            if f.kind == CONTINUOUS:
                entry["mean"] = f.mean
                entry["std"] = f.std
            else:
                entry["categories"] = list(f.categories)
            feats.append(entry)
        return {
            "features": feats,
            "target": self.target,
            "target_min": self.target_min,
            "target_max": self.target_max,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        feats = []
        for e in obj["features"]:
            if e["kind"] == CONTINUOUS:
                feats.append(FeatureDesc(e["name"], CONTINUOUS,
                                         mean=float(e["mean"]),
                                         std=float(e["std"])))
            else:
                feats.append(FeatureDesc(e["name"], CATEGORICAL,
                                         categories=tuple(e["categories"])))
        return cls(tuple(feats), obj["target"],
                   float(obj["target_min"]), float(obj["target_max"]))

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True,
                               separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_sidecar(schema: FeatureSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_sidecar(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_json(json.load(fh))


@dataclass
class Dataset:
    """Encoded rows. ``y_hat`` is present once a frozen model has relabeled
    the data; ``y`` always keeps the original targets."""

    X: np.ndarray
    y: np.ndarray                       # (n, 1), min-max scaled
    fingerprint: str
    rows: list = field(default_factory=list, repr=False)
    y_hat: Optional[np.ndarray] = None  # (n, 1)
    target_clamped: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]


# -- parsing helpers -------------------------------------------------------

def _raw_value(row: dict, name: str):
    if name not in row or row[name] is None or row[name] == "":
        raise MissingValueError(f"row is missing a value for {name!r}")
    return row[name]


def _as_float(value, name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise NonNumericValueError(
            f"{name!r} expects a number, got {value!r}") from None


def _looks_numeric(value) -> bool:
    try:
        float(value)
        return True
    except (TypeError, ValueError):
        return False


# -- fitting ---------------------------------------------------------------

def fit_schema(rows: Sequence[dict], target: str,
               kinds: Optional[dict] = None) -> FeatureSchema:
    """Compute encoding statistics from rows. Call on the training split
    only; the fitted schema then encodes any split without leakage."""
    if len(rows) < 2:
        raise SchemaFitError(f"need at least 2 rows to fit, got {len(rows)}")
    first = rows[0]
    if target not in first:
        raise SchemaFitError(f"target column {target!r} not present")
    names = [k for k in first.keys() if k != target]
    kinds = kinds or {}
    feats = []
    for name in names:
        values = [_raw_value(r, name) for r in rows]
        kind = kinds.get(name)
        if kind is None:
            kind = CONTINUOUS if all(_looks_numeric(v) for v in values) \
                else CATEGORICAL
        if kind == CONTINUOUS:
            col = np.array([_as_float(v, name) for v in values])
            std = float(col.std())
            if std == 0.0:
                raise SchemaFitError(f"feature {name!r} has zero variance")
            feats.append(FeatureDesc(name, CONTINUOUS,
                                     mean=float(col.mean()), std=std))
        elif kind == CATEGORICAL:
            cats = tuple(sorted({str(v) for v in values}))
            if len(cats) < 2:
                raise SchemaFitError(
                    f"categorical {name!r} has fewer than 2 categories")
            feats.append(FeatureDesc(name, CATEGORICAL, categories=cats))
        else:
            raise SchemaFitError(f"unknown kind {kind!r} for {name!r}")
    y = np.array([_as_float(_raw_value(r, target), target) for r in rows])
    lo, hi = float(y.min()), float(y.max())
    if lo == hi:
        raise SchemaFitError("target has zero range")
    return FeatureSchema(tuple(feats), target, lo, hi)


# -- encoding / decoding ---------------------------------------------------

def encode_features(schema: FeatureSchema, rows: Sequence[dict]) -> np.ndarray:
    X = np.empty((len(rows), schema.encoded_width))
    for i, row in enumerate(rows):
        col = 0
        for f in schema.features:
            v = _raw_value(row, f.name)
            if f.kind == CONTINUOUS:
                X[i, col] = (_as_float(v, f.name) - f.mean) / f.std
                col += 1
            else:
                key = str(v)
                if key not in f.categories:
                    raise UnknownCategoryError(
                        f"{f.name!r} has no category {key!r}; "
                        f"known: {list(f.categories)}")
                block = np.zeros(len(f.categories))
                block[f.categories.index(key)] = 1.0
                X[i, col:col + len(f.categories)] = block
                col += len(f.categories)
    return X


def encode(schema: FeatureSchema, rows: Sequence[dict]) -> Dataset:
    X = encode_features(schema, rows)
    raw_y = np.array([[_as_float(_raw_value(r, schema.target), schema.target)]
                      for r in rows])
    span = schema.target_max - schema.target_min
    y = (raw_y - schema.target_min) / span
    clamped = int(np.sum((y < 0.0) | (y > 1.0)))
    if clamped:
        # rows outside the training target range (possible on test splits)
        y = np.clip(y, 0.0, 1.0)
        log.info("clamped %d target values into [0,1]", clamped)
    return Dataset(X=X, y=y, fingerprint=schema.fingerprint(),
                   rows=list(rows), target_clamped=clamped)


def decode(schema: FeatureSchema, x_row: np.ndarray) -> dict:
    x = np.asarray(x_row).reshape(-1)
    if x.shape[0] != schema.encoded_width:
        raise SchemaFitError(
            f"encoded row has {x.shape[0]} columns, schema expects "
            f"{schema.encoded_width}")
    out = {}
    col = 0
    for f in schema.features:
        if f.kind == CONTINUOUS:
            out[f.name] = float(x[col] * f.std + f.mean)
            col += 1
        else:
            block = x[col:col + len(f.categories)]
            out[f.name] = f.categories[int(np.argmax(block))]
            col += len(f.categories)
    return out


def snap_onehot(schema: FeatureSchema, X: np.ndarray) -> np.ndarray:
    """Project each categorical block to the arg-max vertex; continuous
    columns pass through. Needed before evaluating the frozen model on
    decoder output, which is real-valued inside the blocks."""
    X = np.array(X, dtype=np.float64)
    col = 0
    for f in schema.features:
        if f.kind == CONTINUOUS:
            col += 1
            continue
        w = len(f.categories)
        block = X[:, col:col + w]
        hot = np.argmax(block, axis=1)
        block[:] = 0.0
        block[np.arange(X.shape[0]), hot] = 1.0
        col += w
    return X


def scale_target(schema: FeatureSchema, raw: float) -> float:
    return (raw - schema.target_min) / (schema.target_max - schema.target_min)


def unscale_target(schema: FeatureSchema, scaled: float) -> float:
    return scaled * (schema.target_max - schema.target_min) + schema.target_min


# -- relabeling ------------------------------------------------------------

def relabel_with_model(dataset: Dataset, regressor) -> Dataset:
    """Replace training targets with the frozen model's own predictions,
    clamped into [0,1]. Original y is kept alongside."""
    fp = getattr(regressor, "schema_fingerprint", None)
    if fp is not None and fp != dataset.fingerprint:
        raise SchemaFingerprintError(
            f"regressor fingerprint {fp[:12]} does not match dataset "
            f"fingerprint {dataset.fingerprint[:12]}")
    predict: Callable = getattr(regressor, "predict", regressor)
    y_hat = np.asarray(predict(dataset.X), dtype=np.float64).reshape(-1, 1)
    if y_hat.shape[0] != dataset.n:
        raise SchemaFitError("regressor returned wrong number of predictions")
    clamped = int(np.sum((y_hat < 0.0) | (y_hat > 1.0)))
    if clamped:
        log.info("clamped %d model labels into [0,1]", clamped)
    return Dataset(X=dataset.X, y=dataset.y, fingerprint=dataset.fingerprint,
                   rows=dataset.rows, y_hat=np.clip(y_hat, 0.0, 1.0),
                   target_clamped=dataset.target_clamped)


# -- trimming and splitting ------------------------------------------------

def trim_outliers(rows: Sequence[dict], target: str,
                  fraction: float = 0.10) -> list:
    """Drop the top and bottom fraction/2 of rows by raw target value,
    keeping the survivors in their original order."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    n = len(rows)
    k = int(n * fraction / 2.0)
    if k == 0:
        return list(rows)
    values = np.array([_as_float(_raw_value(r, target), target) for r in rows])
    order = np.argsort(values, kind="stable")
    drop = set(order[:k].tolist()) | set(order[n - k:].tolist())
    return [r for i, r in enumerate(rows) if i not in drop]


def split_indices(n: int, train_fraction: float, seed) -> tuple:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be strictly between 0 and 1")
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at {train_fraction} leaves an "
                         f"empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(rows: Sequence[dict], train_fraction: float, seed) -> tuple:
    tr, te = split_indices(len(rows), train_fraction, seed)
    return [rows[i] for i in tr], [rows[i] for i in te]


# -- synthetic benchmark ---------------------------------------------------

# Fixed full-rank mixing map from (label factor, 2 style factors) to 6
# features. The first column carries the label factor; sqrt(12) scaling in
# the generator gives it unit variance and LABEL_GAIN then makes it the
# dominant direction, so an encoder with no adversarial pressure has to
# pick it up while the style factors stay clearly recoverable.
LABEL_GAIN = 2.5

SYNTH_MIX = np.array([
    [1.0, 0.6, -0.3],
    [-0.4, 1.0, 0.5],
    [0.7, -0.2, 1.0],
    [0.3, 0.8, 0.6],
    [-0.6, 0.4, -0.8],
    [0.5, -0.7, 0.2],
])

SYNTH_FEATURES = [f"x{j}" for j in range(SYNTH_MIX.shape[0])]
SYNTH_TARGET = "y"


@dataclass(frozen=True)
class SyntheticFactors:
    """Ground-truth latent factors, for verification only. Nothing on the
    training path may read these."""

    t: np.ndarray       # (n,) label factor in [0,1]; y == t
    s: np.ndarray       # (n, 2) style factors, standard normal
    seed: int
    noise: float


def make_synthetic(n: int, seed: int, noise: float) -> tuple:
    """Rows whose features mix one label factor and two style factors
    through SYNTH_MIX; the target is the label factor itself."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, n)
    s = rng.normal(size=(n, 2))
    factors = np.column_stack([(t - 0.5) * np.sqrt(12.0) * LABEL_GAIN, s])
    X = factors @ SYNTH_MIX.T
    if noise > 0.0:
        X = X + noise * rng.normal(size=X.shape)
    rows = []
    for i in range(n):
        row = {name: float(X[i, j]) for j, name in enumerate(SYNTH_FEATURES)}
        row[SYNTH_TARGET] = float(t[i])
        rows.append(row)
    return rows, SyntheticFactors(t=t, s=s, seed=seed, noise=float(noise))


# -- CSV -------------------------------------------------------------------

def load_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaFitError(f"{path}: empty file, no header row")
        return [dict(r) for r in reader]


def write_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ValueError("refusing to write an empty CSV")
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
