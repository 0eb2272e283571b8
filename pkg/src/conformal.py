"""
Nonconformity scores, the conformal quantile, marginal CP (MCP) and
group-conditioned (Mondrian) CP over drug and protein identities (GCP).

A threshold of +inf means the requested coverage cannot be certified with the
available calibration scores; the resulting interval is the whole real line.
"""

import math
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from src.core import InteractionTable, _read_csv, write_frame
from src.errors import ArtifactIOError, ConfigError, DomainError, ValidationError
from src.models import (
    CalibrationArtifact, GroupCalibration, IntervalBatch, PredictionInterval,
    QuantileThreshold,
)

INTERVAL_COLUMNS = ["drug_id", "protein_id", "prediction", "lower", "upper", "threshold", "method", "alpha"]


# --- Scores and quantiles ---

def score(y: float, y_hat: float, kind: str = "AbsoluteResidual", sigma: Optional[float] = None) -> float:
    """|y - y_hat|, divided by sigma for NormalizedResidual."""
    residual = abs(float(y) - float(y_hat))
    if kind == "AbsoluteResidual":
        return residual
    if sigma is None or not sigma > 0:
        raise DomainError(f"normalized score needs sigma > 0, got {sigma}")
    return residual / float(sigma)


def scores(labels, predictions, kind: str = "AbsoluteResidual", sigma=None) -> np.ndarray:
    """Vectorized score() over aligned arrays."""
    residual = np.abs(np.asarray(labels, dtype=np.float64) - np.asarray(predictions, dtype=np.float64))
    if kind == "AbsoluteResidual":
        return residual
    if sigma is None:
        raise DomainError("normalized scores need a sigma for every row")
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != residual.shape or np.any(~(sigma > 0)):
        raise DomainError("sigma must be strictly positive and aligned with the rows")
    return residual / sigma


def conformal_rank(n: int, alpha: float) -> int:
    """
    1-based order-statistic rank ceil((1 - alpha)(n + 1)).

    alpha is taken at its shortest decimal repr so 0.1 means exactly one tenth.
    """
    return math.ceil((1 - Fraction(repr(float(alpha)))) * (n + 1))


def _quantile_value(sorted_scores: np.ndarray, alpha: float) -> float:
    n = len(sorted_scores)
    k = conformal_rank(n, alpha)
    if n == 0 or k > n:
        return math.inf
    return float(sorted_scores[k - 1])


def conformal_quantile(scores, alpha: float) -> QuantileThreshold:
    """
    The conformal quantile threshold of a score multiset.

    Args:
        scores: Non-negative scores (may be empty)
        alpha: Miscoverage level in (0, 1)

    Returns:
        QuantileThreshold holding the k-th smallest score, k = ceil((1-alpha)(n+1)),
        or +inf when k > n
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    values = np.sort(np.asarray(scores, dtype=np.float64))
    return QuantileThreshold(value=_quantile_value(values, alpha), n_cal=len(values), alpha=alpha)


def calibrate_marginal(cal_table: InteractionTable, alpha: float, kind: str = "AbsoluteResidual",
                       sigma=None) -> QuantileThreshold:
    """MCP calibration: one threshold from every calibration row."""
    _require_predictions(cal_table, "calibration")
    return conformal_quantile(scores(cal_table.labels, cal_table.predictions, kind, sigma), alpha)


# --- Intervals ---

def mcp_interval(y_hat: float, q: QuantileThreshold, sigma: Optional[float] = None,
                 kind: str = "AbsoluteResidual") -> PredictionInterval:
    """[y_hat - q, y_hat + q], or q scaled by sigma for normalized scores."""
    half = _half_width(q.value, sigma, kind)
    if math.isinf(half):
        return PredictionInterval(lower=-math.inf, upper=math.inf)
    return PredictionInterval(lower=y_hat - half, upper=y_hat + half)


def _half_width(q: float, sigma: Optional[float], kind: str) -> float:
    if kind == "NormalizedResidual":
        if sigma is None:
            raise ConfigError("calibration used normalized scores but no sigma was supplied")
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        return q * sigma
    if sigma is not None:
        raise ConfigError("sigma supplied for an absolute-residual calibration")
    return q


def interval_batch(predictions, thresholds, sigma=None, kind: str = "AbsoluteResidual") -> IntervalBatch:
    """Symmetric intervals around each prediction; infinite thresholds give the whole line."""
    pred = np.asarray(predictions, dtype=np.float64)
    q = np.asarray(thresholds, dtype=np.float64)
    if kind == "NormalizedResidual":
        if sigma is None:
            raise ConfigError("calibration used normalized scores but no sigma was supplied")
        half = q * np.asarray(sigma, dtype=np.float64)
    elif sigma is not None:
        raise ConfigError("sigma supplied for an absolute-residual calibration")
    else:
        half = q
    unbounded = np.isinf(half)
    lower = np.where(unbounded, -np.inf, pred - half)
    upper = np.where(unbounded, np.inf, pred + half)
    return IntervalBatch(prediction=pred, lower=lower, upper=upper, threshold=q)


def predict_intervals_mcp(test_table: InteractionTable, q: QuantileThreshold, sigma=None,
                          kind: str = "AbsoluteResidual") -> IntervalBatch:
    _require_predictions(test_table, "test")
    thresholds = np.full(len(test_table), q.value)
    return interval_batch(test_table.predictions, thresholds, sigma, kind)


# --- Group-conditioned CP ---

def build_group_calibration(cal_table: InteractionTable, alpha: float, kind: str = "AbsoluteResidual",
                            sigma=None) -> GroupCalibration:
    """Per-row calibration scores keyed by drug id and, independently, by protein id."""
    _require_predictions(cal_table, "calibration")
    values = scores(cal_table.labels, cal_table.predictions, kind, sigma) if len(cal_table) else np.empty(0)
    return GroupCalibration(
        alpha=alpha,
        kind=kind,
        drug_ids=cal_table.drug_ids.tolist(),
        protein_ids=cal_table.protein_ids.tolist(),
        scores=values.tolist(),
    )


def gcp_threshold(calib: GroupCalibration, test_drug: str, test_protein: str) -> QuantileThreshold:
    """
    Select the calibration scores for one test pair.

    Both entities seen: scores of rows sharing the drug or the protein (a row
    matching both is counted once). One entity seen: that entity's scores.
    Neither: all calibration scores.
    """
    drug_rows = calib.drug_rows.get(test_drug)
    protein_rows = calib.protein_rows.get(test_protein)
    if drug_rows is not None and protein_rows is not None:
        selected = calib.global_scores[np.union1d(drug_rows, protein_rows)]
    elif drug_rows is not None:
        selected = calib.global_scores[drug_rows]
    elif protein_rows is not None:
        selected = calib.global_scores[protein_rows]
    else:
        selected = calib.global_scores
    return conformal_quantile(selected, calib.alpha)


def predict_intervals_gcp(test_table: InteractionTable, calib: GroupCalibration, sigma=None) -> IntervalBatch:
    _require_predictions(test_table, "test")
    cache: dict = {}
    thresholds = np.empty(len(test_table))
    for i, (drug, protein) in enumerate(zip(test_table.drug_ids, test_table.protein_ids)):
        # only which fallback case applies matters, so unseen entities share a key
        key = (drug if drug in calib.drug_rows else None,
               protein if protein in calib.protein_rows else None)
        if key not in cache:
            cache[key] = gcp_threshold(calib, drug, protein).value
        thresholds[i] = cache[key]
    return interval_batch(test_table.predictions, thresholds, sigma, calib.kind)


def _require_predictions(table: InteractionTable, role: str) -> None:
    if not table.has_predictions:
        missing = int(np.isnan(table.predictions).sum())
        raise ValidationError(f"{missing} {role} rows have no prediction")


# --- Artifacts ---

def write_intervals(batch: IntervalBatch, table: InteractionTable, method: str, alpha: float, path) -> None:
    """Intervals CSV; unbounded endpoints are written as inf/-inf."""
    frame = pd.DataFrame({
        "drug_id": table.drug_ids,
        "protein_id": table.protein_ids,
        "prediction": batch.prediction,
        "lower": batch.lower,
        "upper": batch.upper,
        "threshold": batch.threshold,
        "method": method,
        "alpha": alpha,
    })
    write_frame(frame[INTERVAL_COLUMNS], path)


def read_intervals(path) -> tuple[pd.DataFrame, IntervalBatch]:
    """Returns the raw frame (ids, method, alpha) and the numeric batch."""
    frame = _read_csv(path, INTERVAL_COLUMNS)
    try:
        numeric = {c: frame[c].astype(np.float64).to_numpy() for c in ("prediction", "lower", "upper", "threshold")}
    except ValueError as e:
        raise ValidationError(f"{path}: non-numeric interval values: {e}") from e
    return frame, IntervalBatch(**numeric)


def save_calibration(artifact: CalibrationArtifact, path) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(artifact.model_dump_json(by_alias=True))
    except OSError as e:
        raise ArtifactIOError(f"cannot write calibration {path}: {e}") from e


def load_calibration(path) -> CalibrationArtifact:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ArtifactIOError(f"cannot read calibration {path}: {e}") from e
    return CalibrationArtifact.model_validate_json(text)
