"""
Data model, label transforms and table I/O shared by every other module.

Labels are stored on the working (post-transform) scale. Tables are immutable
after construction; every "modifying" method returns a new table.
"""

import hashlib
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from scipy import special, stats

from settings import BOXCOX_BOUNDS, BOXCOX_TOL, FLOAT_FORMAT
from src.errors import ArtifactIOError, ConfigError, DegenerateInputError, DomainError, ValidationError
from src.models import InteractionRecord, InteractionSchema, TransformSpec

INTERACTION_COLUMNS = ["drug_id", "protein_id", "label"]
PREDICTION_COLUMNS = ["drug_id", "protein_id", "prediction"]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# --- Label transforms ---

def transform_affinity(kd: float, spec: TransformSpec) -> float:
    """
    Map a raw affinity onto the working scale.

    NegLog10OverGiga: -log10(kd / 1e9). BoxCox: (kd^lambda - 1) / lambda, ln(kd) at
    lambda = 0. Identity: kd.
    """
    if not kd > 0:
        raise DomainError(f"affinity must be positive, got {kd}")
    if spec.kind == "Identity":
        return float(kd)
    if spec.kind == "NegLog10OverGiga":
        return float(-math.log10(kd / 1e9))
    return float(_boxcox(np.asarray([kd], dtype=np.float64), _boxcox_lambda(spec))[0])


def _boxcox_lambda(spec: TransformSpec) -> float:
    if spec.lambda_ is None or not math.isfinite(spec.lambda_):
        raise ConfigError("BoxCox transform needs a finite lambda (fit it with fit_boxcox_lambda)")
    return spec.lambda_


def _boxcox(values: np.ndarray, lmbda: float) -> np.ndarray:
    if lmbda == 1.0:
        return values - 1.0
    # scipy switches to log near lambda = 0 and uses expm1 elsewhere
    return special.boxcox(values, lmbda)


def apply_transforms(values: Iterable[float], specs: list[TransformSpec]) -> np.ndarray:
    """Apply transform steps in the given order. No implicit chaining."""
    out = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    for spec in specs:
        if spec.kind == "Identity":
            continue
        if np.any(~(out > 0)):
            raise DomainError(f"{spec.kind} needs positive inputs; apply it before steps that produce values <= 0")
        if spec.kind == "NegLog10OverGiga":
            out = -np.log10(out / 1e9)
        else:
            out = _boxcox(out, _boxcox_lambda(spec))
    return out


def fit_transforms(train_values: np.ndarray, specs: list[TransformSpec]) -> list[TransformSpec]:
    """
    Freeze a transform pipeline on training labels.

    BoxCox steps without a lambda get one fitted on the training values as they
    arrive at that step; the returned specs are fully determined.
    """
    fitted = []
    current = np.asarray(train_values, dtype=np.float64)
    for spec in specs:
        if spec.kind == "BoxCox" and spec.lambda_ is None:
            spec = TransformSpec(kind="BoxCox", lambda_=fit_boxcox_lambda(current))
        fitted.append(spec)
        current = apply_transforms(current, [spec])
    return fitted


def fit_boxcox_lambda(values: Iterable[float]) -> float:
    """
    Maximum-likelihood Box-Cox lambda by golden-section search on [-5, 5].

    Args:
        values: Positive reals with at least two distinct values

    Returns:
        The lambda maximizing the Box-Cox profile log-likelihood (tolerance 1e-4)
    """
    data = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    if data.size == 0 or np.any(~(data > 0)):
        raise DomainError("Box-Cox fitting needs strictly positive values")
    if np.unique(data).size < 2:
        raise DegenerateInputError("Box-Cox fitting needs at least 2 distinct values")

    def llf(lmbda: float) -> float:
        return float(stats.boxcox_llf(lmbda, data))

    lo, hi = BOXCOX_BOUNDS
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = llf(c), llf(d)
    while hi - lo > BOXCOX_TOL:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = llf(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = llf(d)
    return (lo + hi) / 2.0


# --- Tables ---

class InteractionTable:
    """
    Ordered (drug, protein, label, prediction) rows with per-entity row indices.

    Missing predictions are NaN. Labels may be NaN only on tables produced by
    without_labels(), which the pipeline hands to interval construction.
    """

    def __init__(self, frame: pd.DataFrame):
        frame = frame.reset_index(drop=True)
        if "prediction" not in frame.columns:
            frame = frame.assign(prediction=np.nan)
        frame = frame[["drug_id", "protein_id", "label", "prediction"]].copy()
        frame["drug_id"] = frame["drug_id"].astype(str)
        frame["protein_id"] = frame["protein_id"].astype(str)
        frame["label"] = frame["label"].astype(np.float64)
        frame["prediction"] = frame["prediction"].astype(np.float64)
        _check_pairs_unique(frame)
        self._frame = frame
        self._drug_index = None
        self._protein_index = None

    @classmethod
    def from_records(cls, records: Iterable[InteractionRecord]) -> "InteractionTable":
        rows = [r.model_dump() for r in records]
        frame = pd.DataFrame(rows, columns=["drug_id", "protein_id", "label", "prediction"])
        return cls(frame)

    @classmethod
    def from_arrays(cls, drug_ids, protein_ids, labels, predictions=None) -> "InteractionTable":
        frame = pd.DataFrame({
            "drug_id": list(drug_ids),
            "protein_id": list(protein_ids),
            "label": np.asarray(labels, dtype=np.float64),
            "prediction": np.full(len(labels), np.nan) if predictions is None
            else np.asarray(predictions, dtype=np.float64),
        })
        return cls(frame)

    def __len__(self) -> int:
        return len(self._frame)

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    @property
    def records(self) -> list[InteractionRecord]:
        return [
            InteractionRecord(
                drug_id=row.drug_id, protein_id=row.protein_id, label=row.label,
                prediction=None if np.isnan(row.prediction) else row.prediction,
            )
            for row in self._frame.itertuples(index=False)
        ]

    @property
    def drug_ids(self) -> np.ndarray:
        return self._frame["drug_id"].to_numpy()

    @property
    def protein_ids(self) -> np.ndarray:
        return self._frame["protein_id"].to_numpy()

    @property
    def labels(self) -> np.ndarray:
        return self._frame["label"].to_numpy(copy=True)

    @property
    def predictions(self) -> np.ndarray:
        return self._frame["prediction"].to_numpy(copy=True)

    @property
    def has_predictions(self) -> bool:
        return bool(len(self) == 0 or not np.isnan(self._frame["prediction"].to_numpy()).any())

    @property
    def drug_index(self) -> dict:
        if self._drug_index is None:
            self._drug_index = _index_of(self._frame["drug_id"])
        return self._drug_index

    @property
    def protein_index(self) -> dict:
        if self._protein_index is None:
            self._protein_index = _index_of(self._frame["protein_id"])
        return self._protein_index

    def unique_drugs(self) -> list[str]:
        return sorted(self.drug_index)

    def unique_proteins(self) -> list[str]:
        return sorted(self.protein_index)

    def take(self, rows) -> "InteractionTable":
        return InteractionTable(self._frame.iloc[np.asarray(rows, dtype=np.int64)])

    def with_predictions(self, predictions) -> "InteractionTable":
        values = np.asarray(predictions, dtype=np.float64)
        if values.shape != (len(self),):
            raise ValidationError(f"expected {len(self)} predictions, got {values.shape}")
        return InteractionTable(self._frame.assign(prediction=values))

    def with_labels(self, labels) -> "InteractionTable":
        values = np.asarray(labels, dtype=np.float64)
        if values.shape != (len(self),):
            raise ValidationError(f"expected {len(self)} labels, got {values.shape}")
        return InteractionTable(self._frame.assign(label=values))

    def without_labels(self) -> "InteractionTable":
        return InteractionTable(self._frame.assign(label=np.nan))

    def transposed(self) -> "InteractionTable":
        """Swap the drug and protein columns (mirror-symmetry checks)."""
        swapped = self._frame.rename(columns={"drug_id": "protein_id", "protein_id": "drug_id"})
        return InteractionTable(swapped)

    def fingerprint(self) -> str:
        return hashlib.sha256(_to_csv_text(self._frame).encode("utf-8")).hexdigest()


class FeatureTable:
    """Per-entity real vectors of a common dimension."""

    def __init__(self, entity_kind: str, ids: list[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValidationError("feature matrix must have one row per entity id")
        if matrix.shape[1] < 1:
            raise ValidationError("feature dimension must be positive")
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate entity ids in feature table")
        if not np.isfinite(matrix).all():
            raise ValidationError("feature vectors must be finite")
        self.entity_kind = entity_kind
        self.ids = [str(i) for i in ids]
        self.matrix = matrix
        self._row_of = {eid: i for i, eid in enumerate(self.ids)}

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    @property
    def vectors(self) -> dict:
        return {eid: self.matrix[i] for i, eid in enumerate(self.ids)}

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._row_of

    def vector(self, entity_id: str) -> np.ndarray:
        if entity_id not in self._row_of:
            raise ValidationError(f"missing {self.entity_kind} feature vector for '{entity_id}'")
        return self.matrix[self._row_of[entity_id]]

    def matrix_for(self, entity_ids) -> np.ndarray:
        missing = [e for e in dict.fromkeys(entity_ids) if e not in self._row_of]
        if missing:
            raise ValidationError(
                f"missing {self.entity_kind} feature vectors for {len(missing)} entities: {missing[:10]}")
        return self.matrix[[self._row_of[e] for e in entity_ids]]

    def subset(self, entity_ids) -> "FeatureTable":
        ids = list(dict.fromkeys(entity_ids))
        return FeatureTable(self.entity_kind, ids, self.matrix_for(ids))


def pair_features(table: InteractionTable, drug_features: FeatureTable,
                  protein_features: FeatureTable) -> np.ndarray:
    """Concatenate each row's drug vector and protein vector."""
    return np.hstack([
        drug_features.matrix_for(table.drug_ids),
        protein_features.matrix_for(table.protein_ids),
    ])


def _index_of(column: pd.Series) -> dict:
    return {str(k): np.asarray(v, dtype=np.int64) for k, v in column.groupby(column, sort=True).indices.items()}


def _check_pairs_unique(frame: pd.DataFrame) -> None:
    dup = frame.duplicated(subset=["drug_id", "protein_id"], keep=False)
    if dup.any():
        offending = frame.loc[dup, ["drug_id", "protein_id"]]
        pairs = sorted({(d, p) for d, p in offending.itertuples(index=False)})
        rows = offending.index.tolist()
        raise ValidationError(f"duplicate (drug, protein) pairs {pairs[:10]} at rows {rows[:20]}")


# --- I/O ---

def _read_csv(path, required: list[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ArtifactIOError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={c: str for c in ("drug_id", "protein_id", "entity_id")},
                            keep_default_na=False, na_values=[""], encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: header is missing columns {missing} (expected {required})")
    return frame


def load_interactions(path, schema: Optional[InteractionSchema] = None) -> InteractionTable:
    """
    Read an interactions CSV (drug_id,protein_id,label[,prediction]).

    Transforms listed in the schema are applied once, here, in order.
    """
    schema = schema or InteractionSchema()
    required = INTERACTION_COLUMNS + (["prediction"] if schema.require_prediction else [])
    frame = _read_csv(path, required)
    try:
        frame["label"] = frame["label"].astype(np.float64)
        if "prediction" in frame.columns:
            frame["prediction"] = frame["prediction"].astype(np.float64)
    except ValueError as e:
        raise ValidationError(f"{path}: non-numeric label or prediction: {e}") from e
    if not np.isfinite(frame["label"].to_numpy()).all():
        bad = np.flatnonzero(~np.isfinite(frame["label"].to_numpy()))
        raise ValidationError(f"{path}: non-finite labels at rows {bad[:20].tolist()}")
    if schema.transforms:
        frame["label"] = apply_transforms(frame["label"].to_numpy(), schema.transforms)
    table = InteractionTable(frame)
    if schema.require_prediction and not table.has_predictions:
        raise ValidationError(f"{path}: every row needs a prediction")
    return table


def load_features(path, entity_kind: str = "Drug") -> FeatureTable:
    """Read a features CSV (entity_id,f0,...,f{d-1})."""
    frame = _read_csv(path, ["entity_id"])
    feature_cols = [c for c in frame.columns if c != "entity_id"]
    expected = [f"f{i}" for i in range(len(feature_cols))]
    if feature_cols != expected:
        raise ValidationError(f"{path}: feature columns must be {expected[:3]}...; got {feature_cols[:3]}...")
    try:
        matrix = frame[feature_cols].to_numpy(dtype=np.float64)
    except ValueError as e:
        raise ValidationError(f"{path}: non-numeric feature values: {e}") from e
    return FeatureTable(entity_kind, frame["entity_id"].tolist(), matrix)


def _to_csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_frame(frame: pd.DataFrame, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(_to_csv_text(frame), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}") from e


def write_table(table: InteractionTable, path) -> None:
    """Write an interactions CSV; the prediction column is written only when populated."""
    frame = table.frame
    if np.isnan(frame["prediction"].to_numpy()).all():
        frame = frame.drop(columns=["prediction"])
    write_frame(frame, path)


def write_features(features: FeatureTable, path) -> None:
    frame = pd.DataFrame(features.matrix, columns=[f"f{i}" for i in range(features.dimension)])
    frame.insert(0, "entity_id", features.ids)
    write_frame(frame, path)
