"""
Validity and efficiency metrics: coverage, mean width, per-subgroup coverage,
mean absolute coverage gap (MACG), the (gamma, K) grid search and
reliability-curve rows.
"""

import json
import math
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from settings import GAMMA_GRID, K_GRID
from src.ccp import calibrate_ccp, predict_intervals_ccp
from src.core import FeatureTable, InteractionTable, write_frame
from src.errors import ArtifactIOError, CoverageLensError, DegenerateInputError, ValidationError
from src.logger import log
from src.models import (
    CcpConfig, CoverageReport, GridCell, GridSearchResult, IntervalBatch, MacgReport,
    PredictionInterval,
)
from src.splits import make_rng

GRID_COLUMNS = ["gamma", "k", "macg_drug", "macg_protein", "combined"]
RELIABILITY_COLUMNS = ["alpha", "expected", "observed", "method", "split"]

Intervals = Union[IntervalBatch, Sequence[PredictionInterval]]


def _bounds(intervals: Intervals) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(intervals, IntervalBatch):
        return intervals.lower, intervals.upper
    lower = np.asarray([iv.lower for iv in intervals], dtype=np.float64)
    upper = np.asarray([iv.upper for iv in intervals], dtype=np.float64)
    return lower, upper


def _covered(intervals: Intervals, labels) -> np.ndarray:
    lower, upper = _bounds(intervals)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != lower.shape:
        raise ValidationError(f"{len(lower)} intervals but {len(y)} labels")
    if len(y) == 0:
        raise DegenerateInputError("coverage needs at least one interval")
    if np.isnan(y).any():
        raise ValidationError("labels contain NaN; pass the held-back labels, not the masked table")
    # closed intervals
    return (lower <= y) & (y <= upper)


def coverage(intervals: Intervals, labels) -> float:
    """Fraction of labels inside their closed interval."""
    hits = _covered(intervals, labels)
    return int(hits.sum()) / len(hits)


def mean_width(intervals: Intervals) -> tuple[float, int]:
    """Mean of upper - lower, and the number of unbounded intervals (mean is +inf if any)."""
    lower, upper = _bounds(intervals)
    if len(lower) == 0:
        raise DegenerateInputError("mean width needs at least one interval")
    widths = upper - lower
    n_unbounded = int(np.isinf(widths).sum())
    if n_unbounded:
        return math.inf, n_unbounded
    return float(widths.mean()), 0


def subgroup_coverage(intervals: Intervals, labels, group_of) -> dict:
    """
    Coverage within each subgroup.

    Args:
        intervals: One interval per row
        labels: Row labels
        group_of: Row-aligned subgroup ids

    Returns:
        Mapping subgroup id -> (size, covered fraction)
    """
    hits = _covered(intervals, labels)
    groups = np.asarray(group_of, dtype=object)
    if groups.shape != hits.shape:
        raise ValidationError("every row needs a subgroup")
    frame = pd.DataFrame({"group": groups, "hit": hits})
    stats = frame.groupby("group", sort=True)["hit"].agg(["size", "sum"])
    return {str(g): (int(row["size"]), int(row["sum"]) / int(row["size"])) for g, row in stats.iterrows()}


def macg(per_subgroup: dict, alpha: float, subgroup_kind: str = "Drug", ddof: int = 0,
         min_size: int = 1) -> MacgReport:
    """Unweighted mean of |coverage - (1 - alpha)| over subgroups of size >= min_size."""
    gaps = np.asarray([abs(cov - (1.0 - alpha)) for n, cov in per_subgroup.values() if n >= min_size])
    if len(gaps) == 0:
        raise DegenerateInputError(f"no {subgroup_kind.lower()} subgroup has at least {min_size} rows")
    std = float(gaps.std(ddof=ddof)) if len(gaps) > ddof else 0.0
    return MacgReport(subgroup_kind=subgroup_kind, alpha=alpha, macg=float(gaps.mean()), std_gap=std, D=len(gaps))


def combined_macg(macg_drug: Union[MacgReport, float], macg_protein: Union[MacgReport, float]) -> float:
    """Average of drug-side and protein-side MACG."""
    if isinstance(macg_drug, MacgReport) and isinstance(macg_protein, MacgReport):
        if macg_drug.alpha != macg_protein.alpha:
            raise ValidationError(f"MACG reports at different alphas: {macg_drug.alpha} vs {macg_protein.alpha}")
        return (macg_drug.macg + macg_protein.macg) / 2.0
    a = macg_drug.macg if isinstance(macg_drug, MacgReport) else float(macg_drug)
    b = macg_protein.macg if isinstance(macg_protein, MacgReport) else float(macg_protein)
    return (a + b) / 2.0


def evaluate_intervals(batch: IntervalBatch, table: InteractionTable, labels, alpha: float,
                       min_subgroup_size: int = 1, ddof: int = 0,
                       clusters: Optional[tuple[list, list]] = None) -> dict:
    """
    Full report for one (method, alpha): coverage, width, drug/protein MACG and,
    when row clusters are given, MACG per drug and protein cluster.
    """
    per_drug = subgroup_coverage(batch, labels, table.drug_ids)
    per_protein = subgroup_coverage(batch, labels, table.protein_ids)
    width, n_unbounded = mean_width(batch)
    report = CoverageReport(
        alpha=alpha,
        n_test=len(batch),
        coverage=coverage(batch, labels),
        mean_width=width,
        n_unbounded=n_unbounded,
        per_subgroup={**{f"drug:{k}": v for k, v in per_drug.items()},
                      **{f"protein:{k}": v for k, v in per_protein.items()}},
    )
    drug_report = macg(per_drug, alpha, "Drug", ddof, min_subgroup_size)
    protein_report = macg(per_protein, alpha, "Protein", ddof, min_subgroup_size)
    result = {
        "coverage": report,
        "macg_drug": drug_report,
        "macg_protein": protein_report,
        "combined_macg": combined_macg(drug_report, protein_report),
    }
    if clusters is not None:
        drug_clusters, protein_clusters = clusters
        result["macg_drug_cluster"] = macg(
            subgroup_coverage(batch, labels, drug_clusters), alpha, "Cluster", ddof, min_subgroup_size)
        result["macg_protein_cluster"] = macg(
            subgroup_coverage(batch, labels, protein_clusters), alpha, "Cluster", ddof, min_subgroup_size)
    return result


# --- Tuning ---

def tuning_holdout(n_cal: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split calibration positions into (fit rows, holdout rows) for leakage-free tuning."""
    n_holdout = int(round(fraction * n_cal))
    if n_holdout < 1 or n_holdout >= n_cal:
        raise DegenerateInputError(f"holdout fraction {fraction} on {n_cal} calibration rows leaves an empty side")
    perm = make_rng(seed).permutation(n_cal)
    return np.sort(perm[n_holdout:]), np.sort(perm[:n_holdout])


def score_cell(cal_table: InteractionTable, eval_table: InteractionTable, eval_labels, method: str,
               gamma: float, k: int, alpha: float, seed: int = 0,
               drug_features: Optional[FeatureTable] = None,
               protein_features: Optional[FeatureTable] = None, pooling: str = "union") -> GridCell:
    """Calibrate one (gamma, K) at alpha and score drug/protein MACG on the evaluation rows."""
    config = CcpConfig(method=method, gamma=gamma, n_clusters=k, alpha=alpha, seed=seed,
                       pooling=pooling, allow_any_gamma=True)
    model = calibrate_ccp(cal_table, config, drug_features, protein_features)
    batch = predict_intervals_ccp(eval_table.without_labels(), model=model, drug_features=drug_features,
                                  protein_features=protein_features)
    macg_drug = macg(subgroup_coverage(batch, eval_labels, eval_table.drug_ids), alpha).macg
    macg_protein = macg(subgroup_coverage(batch, eval_labels, eval_table.protein_ids), alpha, "Protein").macg
    return GridCell(gamma=gamma, k=k, macg_drug=macg_drug, macg_protein=macg_protein,
                    combined=combined_macg(macg_drug, macg_protein))


def grid_search(cal_table: InteractionTable, eval_table: InteractionTable, eval_labels, method: str,
                alpha: float, gammas: Sequence[float] = GAMMA_GRID, ks: Sequence[int] = K_GRID,
                seed: int = 0, drug_features: Optional[FeatureTable] = None,
                protein_features: Optional[FeatureTable] = None, pooling: str = "union") -> GridSearchResult:
    """
    Exhaustive (gamma, K) search minimizing combined MACG at one alpha.

    Cells are evaluated in (gamma, K) order. A cell that cannot be calibrated
    scores +inf. Ties prefer the smaller K, then the smaller gamma. Each
    coverage level gets its own search, so two alphas may settle on
    different cells.
    """
    if method not in ("NC", "FC"):
        raise ValidationError(f"grid search supports NC and FC, got {method}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")

    evaluated = []
    for gamma in sorted(gammas):
        for k in sorted(ks):
            try:
                cell = score_cell(cal_table, eval_table, eval_labels, method, gamma, k, alpha, seed,
                                  drug_features, protein_features, pooling)
            except CoverageLensError as e:
                log(f"  Grid cell gamma={gamma}, K={k} infeasible: {e}")
                cell = GridCell(gamma=gamma, k=k, macg_drug=math.inf, macg_protein=math.inf, combined=math.inf)
            evaluated.append(cell)

    best = min(evaluated, key=lambda c: (c.combined, c.k, c.gamma))
    return GridSearchResult(method=method, alpha=alpha, evaluated=evaluated, best_gamma=best.gamma,
                            best_k=best.k, objective=best.combined)


# --- Reliability ---

def reliability_curve(runner: Callable[[float], Intervals], labels, alphas: Sequence[float],
                      method: str = "", split: str = "") -> list[dict]:
    """
    Observed vs expected coverage, one row per alpha.

    Args:
        runner: Produces intervals for the fixed test rows at a given alpha
        labels: Test labels
        alphas: Miscoverage levels
    """
    if not alphas:
        raise ValidationError("reliability curve needs at least one alpha")
    return [
        {"alpha": alpha, "expected": 1.0 - alpha, "observed": coverage(runner(alpha), labels),
         "method": method, "split": split}
        for alpha in alphas
    ]


# --- Writers ---

def report_to_dict(report: dict) -> dict:
    """JSON-ready view of an evaluate_intervals() result (inf stays inf)."""
    out = {}
    for key, value in report.items():
        out[key] = value.model_dump() if hasattr(value, "model_dump") else value
    return out


def write_report_json(report: dict, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        # Infinity literals, as the pydantic artifacts write them
        path.write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write report {path}: {e}") from e


def summary_row(report: dict, method: str, split: str, seed: int) -> dict:
    """Flat CSV row for one evaluate_intervals() result."""
    cov = report["coverage"]
    row = {
        "split": split,
        "method": method,
        "alpha": cov.alpha,
        "seed": seed,
        "n_test": cov.n_test,
        "coverage": cov.coverage,
        "mean_width": cov.mean_width,
        "n_unbounded": cov.n_unbounded,
        "macg_drug": report["macg_drug"].macg,
        "macg_protein": report["macg_protein"].macg,
        "combined_macg": report["combined_macg"],
    }
    return row


def write_summary_csv(rows: list[dict], path) -> None:
    write_frame(pd.DataFrame(rows), path)


def write_grid_csv(result: GridSearchResult, path) -> None:
    frame = pd.DataFrame([cell.model_dump() for cell in result.evaluated], columns=GRID_COLUMNS)
    write_frame(frame, path)


def write_reliability_csv(rows: list[dict], path) -> None:
    write_frame(pd.DataFrame(rows, columns=RELIABILITY_COLUMNS), path)
