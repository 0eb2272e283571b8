"""
Point predictions: a squared-error gradient-boosted tree learner and ingestion
of externally computed predictions.

Trees are grown with exact greedy splits: every midpoint between consecutive
distinct sorted feature values is a candidate threshold. Gain ties go to the
lowest feature index, then the lowest threshold.
"""

from pathlib import Path

import numpy as np
import pandas as pd

from src.core import PREDICTION_COLUMNS, InteractionTable, _read_csv, write_frame
from src.errors import ArtifactIOError, ValidationError
from src.logger import log
from src.models import GbmConfig, GbmModel, RegressionTree


class _TreeBuilder:
    """Grows one least-squares tree on residuals, reusing a per-fit presort."""

    def __init__(self, X: np.ndarray, order: np.ndarray, config: GbmConfig):
        self.X = X
        self.order = order          # (n_features, n_rows) argsort of each column
        self.config = config
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def build(self, residuals: np.ndarray) -> RegressionTree:
        self._grow(np.ones(len(residuals), dtype=bool), residuals, depth=0)
        return RegressionTree(feature=self.feature, threshold=self.threshold,
                              left=self.left, right=self.right, value=self.value)

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def _grow(self, mask: np.ndarray, residuals: np.ndarray, depth: int) -> int:
        node = self._new_node()
        r = residuals[mask]
        self.value[node] = float(r.mean())
        if depth >= self.config.max_depth or len(r) < 2 * self.config.min_samples_leaf:
            return node

        split = self._best_split(mask, residuals)
        if split is None:
            return node

        f, thr = split
        goes_left = self.X[:, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self._grow(mask & goes_left, residuals, depth + 1)
        self.right[node] = self._grow(mask & ~goes_left, residuals, depth + 1)
        return node

    def _best_split(self, mask: np.ndarray, residuals: np.ndarray):
        n_features = self.order.shape[0]
        # node rows in sorted order for every feature at once
        in_node = mask[self.order]
        m = int(mask.sum())
        rows = self.order[in_node].reshape(n_features, m)
        xs = np.take_along_axis(self.X.T, rows, axis=1)
        rs = residuals[rows]

        csum = np.cumsum(rs, axis=1)
        total = csum[:, -1:]
        n_left = np.arange(1, m, dtype=np.float64)
        left_sum = csum[:, :-1]
        right_sum = total - left_sum
        # SSE reduction relative to the parent
        gain = left_sum ** 2 / n_left + right_sum ** 2 / (m - n_left) - total ** 2 / m

        valid = xs[:, :-1] < xs[:, 1:]
        leaf = self.config.min_samples_leaf
        if leaf > 1:
            sizes_ok = (n_left >= leaf) & (m - n_left >= leaf)
            valid &= sizes_ok[None, :]
        gain = np.where(valid, gain, -np.inf)

        # argmax returns the first maximum: lowest feature, then lowest threshold
        best = int(np.argmax(gain))
        f, pos = divmod(best, m - 1)
        if not np.isfinite(gain[f, pos]) or gain[f, pos] <= 0.0:
            return None
        return f, float(0.5 * (xs[f, pos] + xs[f, pos + 1]))


def _check_matrix(features, labels=None) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError("features must be a non-empty 2-D matrix")
    if not np.isfinite(X).all():
        raise ValidationError("features contain NaN or Inf")
    if labels is not None:
        y = np.asarray(labels, dtype=np.float64)
        if y.shape != (X.shape[0],):
            raise ValidationError(f"expected {X.shape[0]} labels, got {y.shape}")
        if not np.isfinite(y).all():
            raise ValidationError("labels contain NaN or Inf")
    return X


def fit_gbm(features, labels, config: GbmConfig = None) -> GbmModel:
    """
    Fit a squared-error gradient boosting model.

    Args:
        features: Row-major real matrix (n_rows, n_features)
        labels: Real vector of length n_rows
        config: Boosting configuration (defaults: 500 stages, lr 0.05, depth 6)

    Returns:
        GbmModel whose prediction is init_value + learning_rate * sum of tree outputs
    """
    config = config or GbmConfig()
    X = _check_matrix(features, labels)
    y = np.asarray(labels, dtype=np.float64)

    order = np.argsort(X, axis=0, kind="stable").T.copy()
    init = float(y.mean())
    current = np.full(len(y), init)
    trees = []
    for _ in range(config.n_stages):
        tree = _TreeBuilder(X, order, config).build(y - current)
        trees.append(tree)
        current = current + config.learning_rate * _tree_output(tree, X)

    return GbmModel(init_value=init, n_features=X.shape[1], config=config, trees=trees)


def _tree_output(tree: RegressionTree, X: np.ndarray) -> np.ndarray:
    feature = np.asarray(tree.feature)
    threshold = np.asarray(tree.threshold)
    left = np.asarray(tree.left)
    right = np.asarray(tree.right)
    value = np.asarray(tree.value)

    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = feature[node]
        internal = f >= 0
        if not internal.any():
            return value[node]
        idx = rows[internal]
        go_left = X[idx, f[internal]] <= threshold[node[internal]]
        node[idx] = np.where(go_left, left[node[internal]], right[node[internal]])


def predict(model: GbmModel, features) -> np.ndarray:
    """Pure prediction: init + lr * sum over trees."""
    X = _check_matrix(features)
    if X.shape[1] != model.n_features:
        raise ValidationError(f"model expects {model.n_features} features, got {X.shape[1]}")
    out = np.full(X.shape[0], model.init_value)
    for tree in model.trees:
        out += model.config.learning_rate * _tree_output(tree, X)
    return out


def staged_mse(model: GbmModel, features, labels) -> list[float]:
    """Training-set MSE after each boosting stage (index 0 = init only)."""
    X = _check_matrix(features, labels)
    y = np.asarray(labels, dtype=np.float64)
    current = np.full(len(y), model.init_value)
    history = [float(np.mean((y - current) ** 2))]
    for tree in model.trees:
        current = current + model.config.learning_rate * _tree_output(tree, X)
        history.append(float(np.mean((y - current) ** 2)))
    return history


def regression_metrics(labels, predictions) -> dict:
    """RMSE and coefficient of determination."""
    y = np.asarray(labels, dtype=np.float64)
    y_hat = np.asarray(predictions, dtype=np.float64)
    residual = np.sum((y - y_hat) ** 2)
    total = np.sum((y - y.mean()) ** 2)
    return {
        "rmse": float(np.sqrt(residual / len(y))),
        "r2": float(1.0 - residual / total) if total > 0 else float("nan"),
        "n": int(len(y)),
    }


def save_model(model: GbmModel, path) -> None:
    try:
        Path(path).write_text(model.model_dump_json())
    except OSError as e:
        raise ArtifactIOError(f"cannot write model {path}: {e}") from e


def load_model(path) -> GbmModel:
    try:
        return GbmModel.model_validate_json(Path(path).read_text())
    except OSError as e:
        raise ArtifactIOError(f"cannot read model {path}: {e}") from e


def attach_external_predictions(table: InteractionTable, predictions_file,
                                overwrite: bool = False) -> InteractionTable:
    """
    Populate record predictions from a drug_id,protein_id,prediction CSV.

    Without overwrite only records lacking a prediction are filled, so a
    partially scored table can be completed; the file must then cover just
    those records. With overwrite every record is replaced and must be covered.
    """
    current = table.predictions
    target = np.ones(len(table), dtype=bool) if overwrite else np.isnan(current)
    if len(table) and not target.any():
        raise ValidationError("every record already has a prediction; pass overwrite=True (--overwrite) to replace them")

    frame = _read_csv(predictions_file, PREDICTION_COLUMNS)
    dup = frame.duplicated(subset=["drug_id", "protein_id"], keep=False)
    if dup.any():
        pairs = frame.loc[dup, ["drug_id", "protein_id"]].drop_duplicates().values.tolist()
        raise ValidationError(f"{predictions_file}: duplicate prediction keys {pairs[:10]}")
    try:
        lookup = frame.set_index(["drug_id", "protein_id"])["prediction"].astype(np.float64)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"{predictions_file}: prediction column must be numeric ({e})") from e

    keys = pd.MultiIndex.from_arrays([table.drug_ids, table.protein_ids])
    values = lookup.reindex(keys).to_numpy()
    absent = np.flatnonzero(target & np.isnan(values))
    if absent.size:
        pairs = [(table.drug_ids[i], table.protein_ids[i]) for i in absent[:10]]
        raise ValidationError(f"{predictions_file}: no prediction for {absent.size} pairs, first: {pairs}")
    if not overwrite and not target.all():
        log(f"  Filled {int(target.sum())} missing predictions; kept {int((~target).sum())} existing")
    return table.with_predictions(np.where(target, values, current))


def write_predictions(table: InteractionTable, path) -> None:
    write_frame(table.frame[PREDICTION_COLUMNS], path)
