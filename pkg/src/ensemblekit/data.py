"""Meta-datasets of frozen base-model predictions, plus synthetic generators.

A meta-dataset is everything an ensembling method is allowed to see: a
prediction cube of shape (instances, models, classes) and a label vector,
for a validation split (used for fitting) and a test split (evaluation
only). Regression datasets use a single pseudo-class column.

The on-disk layout is one directory per dataset: ``manifest.json`` plus
``<split>_predictions.csv`` / ``<split>_labels.csv``. Floats are written
with 17 significant digits, so a save/load round trip is exact.
"""

from __future__ import annotations

import enum
import json
import os
import warnings
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, DataFormatError, DataValidationError, ShapeError

SIMPLEX_TOL = 1e-4
SPLIT_NAMES = ("val", "test")

_FLOAT_FMT = "%.17g"


class TaskKind(enum.Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


@dataclass(frozen=True)
class Split:
    """Predictions (N, M, C) and labels (N,) for one split."""

    predictions: np.ndarray
    labels: np.ndarray

    @property
    def n_instances(self) -> int:
        return self.predictions.shape[0]


@dataclass(frozen=True)
class MetaDataset:
    """A named prediction dataset with validation and test splits.

    Arrays are validated and frozen read-only on construction: fitting
    code reads the validation split, evaluation reads test, nobody writes.
    """

    name: str
    task: TaskKind
    val: Split
    test: Split

    def __post_init__(self):
        if not isinstance(self.task, TaskKind):
            raise ConfigError(f"task must be a TaskKind, got {self.task!r}")
        val = _sanitize_split(self.val, self.task, "val")
        test = _sanitize_split(self.test, self.task, "test")
        if val.predictions.shape[1:] != test.predictions.shape[1:]:
            raise DataValidationError(
                f"val and test disagree on (models, classes): "
                f"{val.predictions.shape[1:]} vs {test.predictions.shape[1:]}"
            )
        object.__setattr__(self, "val", val)
        object.__setattr__(self, "test", test)

    @property
    def n_models(self) -> int:
        return self.val.predictions.shape[1]

    @property
    def n_classes(self) -> int:
        return self.val.predictions.shape[2]


def _sanitize_split(split: Split, task: TaskKind, split_name: str) -> Split:
    preds = np.array(split.predictions, dtype=np.float64, copy=True)
    if preds.ndim != 3:
        raise ShapeError(
            f"{split_name} predictions must be (instances, models, classes), "
            f"got shape {preds.shape}"
        )
    n, m, c = preds.shape
    if m < 1 or c < 1:
        raise DataValidationError(f"{split_name} split needs at least one model and class")
    if not np.all(np.isfinite(preds)):
        raise DataValidationError(f"{split_name} predictions contain non-finite values")

    labels = np.asarray(split.labels)
    if labels.ndim != 1 or labels.shape[0] != n:
        raise ShapeError(
            f"{split_name} labels must be 1-D with {n} entries, got shape {labels.shape}"
        )

    if task is TaskKind.CLASSIFICATION:
        if c < 2:
            raise DataValidationError("classification datasets need at least 2 classes")
        if np.any(preds < -1e-12) or np.any(preds > 1.0 + 1e-12):
            raise DataValidationError(
                f"{split_name} predictions must be probabilities in [0, 1]"
            )
        sums = preds.sum(axis=2)
        bad = np.abs(sums - 1.0) > SIMPLEX_TOL
        if np.any(bad):
            i, m_bad = map(int, np.argwhere(bad)[0])
            raise DataValidationError(
                f"{split_name} split: probabilities for instance {i}, model {m_bad} "
                f"sum to {sums[i, m_bad]:.6f}, expected 1 within {SIMPLEX_TOL}"
            )
        if not np.all(labels == labels.astype(np.int64)):
            raise DataValidationError(f"{split_name} labels must be class indices")
        labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise DataValidationError(
                f"{split_name} labels must lie in [0, {c}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
    else:
        if c != 1:
            raise DataValidationError(
                f"regression datasets use a single prediction column, got {c}"
            )
        labels = labels.astype(np.float64)
        if not np.all(np.isfinite(labels)):
            raise DataValidationError(f"{split_name} labels contain non-finite values")

    preds.flags.writeable = False
    labels.flags.writeable = False
    return Split(predictions=preds, labels=labels)


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------


def _prediction_header(n_models: int, n_classes: int) -> List[str]:
    return [f"m{m}_c{c}" for m in range(n_models) for c in range(n_classes)]


def save_metadataset(ds: MetaDataset, path: str) -> None:
    """Write a dataset directory; identical datasets produce identical bytes."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "name": ds.name,
        "task": ds.task.value,
        "n_models": ds.n_models,
        "n_classes": ds.n_classes,
        "splits": list(SPLIT_NAMES),
    }
    with open(os.path.join(path, "manifest.json"), "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for split_name in SPLIT_NAMES:
        split: Split = getattr(ds, split_name)
        flat = split.predictions.reshape(split.n_instances, -1)
        lines = [",".join(_prediction_header(ds.n_models, ds.n_classes))]
        for row in flat:
            lines.append(",".join(_FLOAT_FMT % v for v in row))
        with open(os.path.join(path, f"{split_name}_predictions.csv"), "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        if ds.task is TaskKind.CLASSIFICATION:
            label_strs = [str(int(v)) for v in split.labels]
        else:
            label_strs = [_FLOAT_FMT % v for v in split.labels]
        with open(os.path.join(path, f"{split_name}_labels.csv"), "w", newline="\n") as fh:
            fh.write("\n".join(["label"] + label_strs) + "\n")


def _read_csv_rows(path: str) -> Tuple[List[str], List[List[str]]]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"missing dataset file: {path}")
    with open(path, "r") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip() != ""]
    if not lines:
        raise DataFormatError(f"{path} is empty")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def load_metadataset(path: str) -> MetaDataset:
    """Load a dataset directory written by save_metadataset."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isdir(path):
        raise FileNotFoundError(f"dataset directory not found: {path}")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"missing manifest: {manifest_path}")
    try:
        with open(manifest_path, "r") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"manifest is not valid JSON: {exc}") from exc

    for key in ("name", "task", "n_models", "n_classes", "splits"):
        if key not in manifest:
            raise DataFormatError(f"manifest missing required key '{key}'")
    if sorted(manifest["splits"]) != sorted(SPLIT_NAMES):
        raise DataFormatError(
            f"manifest must declare splits {list(SPLIT_NAMES)}, got {manifest['splits']}"
        )
    try:
        task = TaskKind(manifest["task"])
    except ValueError:
        raise DataFormatError(f"unknown task kind '{manifest['task']}'") from None
    n_models = int(manifest["n_models"])
    n_classes = int(manifest["n_classes"])

    splits = {}
    expected_header = _prediction_header(n_models, n_classes)
    for split_name in SPLIT_NAMES:
        pred_path = os.path.join(path, f"{split_name}_predictions.csv")
        header, rows = _read_csv_rows(pred_path)
        if header != expected_header:
            raise DataFormatError(
                f"{pred_path}: header does not match manifest "
                f"({n_models} models x {n_classes} classes)"
            )
        try:
            values = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
        except ValueError as exc:
            raise DataFormatError(f"{pred_path}: non-numeric prediction value: {exc}") from exc
        if values.ndim != 2 or values.shape[1] != n_models * n_classes:
            raise DataFormatError(f"{pred_path}: rows must have {n_models * n_classes} columns")
        preds = values.reshape(-1, n_models, n_classes)

        label_path = os.path.join(path, f"{split_name}_labels.csv")
        label_header, label_rows = _read_csv_rows(label_path)
        if label_header != ["label"]:
            raise DataFormatError(f"{label_path}: expected single 'label' column")
        try:
            labels = np.array([float(r[0]) for r in label_rows], dtype=np.float64)
        except (ValueError, IndexError) as exc:
            raise DataFormatError(f"{label_path}: non-numeric label: {exc}") from exc
        if labels.shape[0] != preds.shape[0]:
            raise DataFormatError(
                f"{split_name} split: {preds.shape[0]} prediction rows but "
                f"{labels.shape[0]} labels"
            )
        splits[split_name] = Split(predictions=preds, labels=labels)

    return MetaDataset(name=str(manifest["name"]), task=task, val=splits["val"], test=splits["test"])


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the synthetic generators.

    ``kind`` selects the generator: 'experts' (classification with
    region-wise reliable models), 'preferred' (regression with one
    informative model among noise) or 'poly' (regression with
    bootstrapped polynomial fits). Fields irrelevant to a kind are
    ignored. ``n_instances`` is the size of each split.
    """

    kind: str
    n_instances: int = 2000
    n_models: int = 5
    n_classes: int = 3
    rho_p: float = 0.9
    degree: int = 10
    noise_scale: float = 0.1
    seed: int = 0


def generate(spec: SyntheticSpec) -> MetaDataset:
    """Dispatch to the generator named by spec.kind."""
    generators = {
        "experts": generate_complementary_experts,
        "preferred": generate_preferred_model,
        "poly": generate_polynomial_regression,
    }
    if spec.kind not in generators:
        raise ConfigError(
            f"unknown synthetic kind '{spec.kind}', expected one of {sorted(generators)}"
        )
    return generators[spec.kind](spec)


def _check_sizes(spec: SyntheticSpec, min_models: int = 2) -> None:
    if spec.n_instances < 2:
        raise ConfigError(f"n_instances must be at least 2, got {spec.n_instances}")
    if spec.n_models < min_models:
        raise ConfigError(f"n_models must be at least {min_models}, got {spec.n_models}")


def generate_complementary_experts(spec: SyntheticSpec) -> MetaDataset:
    """Classification data where each instance has exactly one reliable model.

    Instances fall into one of M equally likely latent regions. The
    region's model assigns probability 0.9 to the true class and spreads
    the remaining 0.1 evenly. Every other model assigns 0.9 to class 0,
    a dump class that is never the true label, puts the remaining 0.1 on
    the true class and zero elsewhere. Labels are uniform over classes
    1..C-1. Any fixed model is therefore right in only one region out of
    M, while for C >= 3 the reliable model can be recognized from the
    prediction pattern alone, which is what rewards per-instance weights.
    """
    _check_sizes(spec)
    m_models, n_classes = spec.n_models, spec.n_classes
    if n_classes < 2:
        raise ConfigError(f"n_classes must be at least 2, got {n_classes}")
    rng = np.random.default_rng(spec.seed)

    def one_split(n: int) -> Split:
        region = np.minimum((rng.random(n) * m_models).astype(np.int64), m_models - 1)
        labels = rng.integers(1, n_classes, size=n)
        preds = np.zeros((n, m_models, n_classes))
        rows = np.arange(n)
        for m in range(m_models):
            own = region == m
            idx = rows[own]
            preds[idx, m, :] = 0.1 / (n_classes - 1)
            preds[idx, m, labels[idx]] = 0.9
            idx = rows[~own]
            preds[idx, m, 0] = 0.9
            preds[idx, m, labels[idx]] = 0.1
        return Split(predictions=preds, labels=labels)

    name = f"experts-m{m_models}-c{n_classes}-seed{spec.seed}"
    return MetaDataset(
        name=name,
        task=TaskKind.CLASSIFICATION,
        val=one_split(spec.n_instances),
        test=one_split(spec.n_instances),
    )


def generate_preferred_model(spec: SyntheticSpec) -> MetaDataset:
    """Regression data with one informative model among pure-noise models.

    Targets are standard normal. Model 0 predicts
    rho_p * y + sqrt(1 - rho_p^2) * eps; the others are independent
    noise. Targets and every model column are standardized to sample
    mean 0 and variance 1 per split, so for rho_p = 1 model 0 equals the
    target exactly.
    """
    _check_sizes(spec)
    if not 0.0 <= spec.rho_p <= 1.0:
        raise ConfigError(f"rho_p must lie in [0, 1], got {spec.rho_p}")
    rng = np.random.default_rng(spec.seed)

    def standardize(a: np.ndarray) -> np.ndarray:
        return (a - a.mean()) / a.std()

    def one_split(n: int) -> Split:
        y = rng.standard_normal(n)
        eps = rng.standard_normal(n)
        z = rng.standard_normal((n, spec.n_models))
        z[:, 0] = spec.rho_p * y + np.sqrt(1.0 - spec.rho_p**2) * eps
        # Standardize each column through the same 1-D code path as the
        # labels so that rho_p = 1 makes model 0 equal the target bitwise.
        columns = [standardize(np.ascontiguousarray(z[:, m])) for m in range(spec.n_models)]
        return Split(
            predictions=np.stack(columns, axis=1)[:, :, None],
            labels=standardize(y),
        )

    name = f"preferred-m{spec.n_models}-rho{spec.rho_p:g}-seed{spec.seed}"
    return MetaDataset(
        name=name,
        task=TaskKind.REGRESSION,
        val=one_split(spec.n_instances),
        test=one_split(spec.n_instances),
    )


# Ground truth for the polynomial generator: f(x) = 2x^3 - x, degree 3.
TRUE_POLY_COEFFS = np.array([0.0, -1.0, 0.0, 2.0])
TRUE_POLY_DEGREE = 3
_POOL_SIZE = 20


def _true_function(x: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(x, TRUE_POLY_COEFFS)


def _fit_polynomial_pool(spec: SyntheticSpec, rng: np.random.Generator):
    """Draw the shared train pool and fit one polynomial per model.

    Each model is a least-squares polynomial of spec.degree fit on its
    own bootstrap resample of the 20-point pool. Returns the pool, the
    fitted polynomials and the bootstrap index arrays.
    """
    pool_x = rng.uniform(-1.0, 1.0, _POOL_SIZE)
    pool_y = _true_function(pool_x) + spec.noise_scale * rng.standard_normal(_POOL_SIZE)
    fits = []
    boot_indices = []
    rank_warning = getattr(np.exceptions, "RankWarning", UserWarning)
    for _ in range(spec.n_models):
        idx = rng.integers(0, _POOL_SIZE, size=_POOL_SIZE)
        with warnings.catch_warnings():
            # High-degree fits on few distinct points are rank deficient on
            # purpose; the wild extrapolations are the phenomenon of interest.
            warnings.simplefilter("ignore", rank_warning)
            poly = np.polynomial.Polynomial.fit(pool_x[idx], pool_y[idx], spec.degree)
        fits.append(poly)
        boot_indices.append(idx)
    return pool_x, pool_y, fits, boot_indices


def generate_polynomial_regression(spec: SyntheticSpec) -> MetaDataset:
    """Regression data from overparameterized polynomial base models.

    A 20-point train pool is drawn from a cubic ground truth plus noise.
    Each base model is a degree-``spec.degree`` least-squares polynomial
    fit on a bootstrap resample of that pool; split predictions are the
    fitted polynomials evaluated at fresh uniform x in [-1, 1]. High
    degrees overfit the pool and disagree wildly near the interval edges.
    """
    _check_sizes(spec)
    if spec.degree < 1:
        raise ConfigError(f"degree must be at least 1, got {spec.degree}")
    if spec.noise_scale < 0:
        raise ConfigError(f"noise_scale must be nonnegative, got {spec.noise_scale}")
    rng = np.random.default_rng(spec.seed)
    _, _, fits, _ = _fit_polynomial_pool(spec, rng)

    def one_split(n: int) -> Split:
        x = rng.uniform(-1.0, 1.0, n)
        y = _true_function(x) + spec.noise_scale * rng.standard_normal(n)
        preds = np.column_stack([poly(x) for poly in fits])
        return Split(predictions=preds[:, :, None], labels=y)

    name = f"poly-d{spec.degree}-m{spec.n_models}-seed{spec.seed}"
    return MetaDataset(
        name=name,
        task=TaskKind.REGRESSION,
        val=one_split(spec.n_instances),
        test=one_split(spec.n_instances),
    )
