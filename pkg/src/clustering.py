"""
Unsupervised machinery shared by the cluster-conditioned methods: residual
ECDF embeddings, seeded k-means, Tanimoto similarity and top-k neighbors.

Every tie is broken toward the lowest index (or the lowest id for neighbors)
so cluster assignments reproduce across platforms.
"""

from pathlib import Path

import numpy as np
import pandas as pd

from settings import ECDF_PERCENTILES, KMEANS_MAX_ITER, N_NEIGHBORS
from src.core import FeatureTable, write_frame
from src.errors import ArtifactIOError, DegenerateInputError, ValidationError
from src.logger import log
from src.models import KMeansModel, NeighborSet
from src.splits import make_rng


# --- ECDF embeddings ---

def ecdf_embedding(scores, percentiles=ECDF_PERCENTILES) -> np.ndarray:
    """
    Percentiles of a score multiset, linear between order statistics.

    Percentile p sits at zero-based rank p/100 * (n - 1). The default grid is
    the nine deciles 10..90.
    """
    values = np.asarray(scores, dtype=np.float64)
    if values.size == 0:
        raise DegenerateInputError("cannot embed an empty score multiset")
    return np.percentile(values, percentiles, method="linear")


def entity_embeddings(entity_ids, scores, percentiles=ECDF_PERCENTILES) -> tuple[list[str], np.ndarray]:
    """One embedding per distinct entity (sorted by id) from row-aligned ids and scores."""
    frame = pd.DataFrame({"entity": np.asarray(entity_ids, dtype=object), "score": np.asarray(scores, dtype=np.float64)})
    ids, rows = [], []
    for entity, group in frame.groupby("entity", sort=True):
        ids.append(str(entity))
        rows.append(ecdf_embedding(group["score"].to_numpy(), percentiles))
    if not rows:
        return [], np.empty((0, len(percentiles)))
    return ids, np.vstack(rows)


# --- k-means ---

def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    closest = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        cumulative = np.cumsum(closest)
        target = rng.random() * cumulative[-1]
        idx = min(int(np.searchsorted(cumulative, target, side="right")), n - 1)
        chosen.append(idx)
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans_fit(points, k: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER) -> KMeansModel:
    """
    Seeded k-means: k-means++ initialization, then Lloyd iterations until the
    assignment stops changing or max_iter is reached.

    Args:
        points: (n, d) real matrix, n >= 1
        k: Requested cluster count; reduced to the number of distinct points if larger
        seed: Seed for the PCG64 generator driving initialization

    Returns:
        KMeansModel with final centroids, inertia and the inertia after every iteration
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError("k-means needs a non-empty (n, d) matrix of equal-dimension points")
    if not np.isfinite(X).all():
        raise ValidationError("k-means points must be finite")
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")

    n_distinct = len(np.unique(X, axis=0))
    k_eff = min(k, n_distinct)
    if k_eff < k:
        log(f"  k-means: k reduced from {k} to {k_eff} (distinct points)")

    centroids = _kmeans_plus_plus(X, k_eff, make_rng(seed))
    dist = _squared_distances(X, centroids)
    labels = dist.argmin(axis=1)
    history = [float(dist[np.arange(len(X)), labels].sum())]

    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        point_cost = dist[np.arange(len(X)), labels]
        for j in range(k_eff):
            members = labels == j
            if members.any():
                centroids[j] = X[members].mean(axis=0)
            else:
                # reseed on the point farthest from its centroid
                far = int(point_cost.argmax())
                centroids[j] = X[far]
                point_cost[far] = 0.0
        dist = _squared_distances(X, centroids)
        new_labels = dist.argmin(axis=1)
        history.append(float(dist[np.arange(len(X)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    return KMeansModel(
        k=k_eff,
        requested_k=k,
        centroids=centroids.tolist(),
        seed=seed,
        inertia=history[-1],
        n_iter=n_iter,
        inertia_history=history,
    )


def kmeans_assign(model: KMeansModel, point) -> int:
    """Index of the nearest centroid (squared Euclidean); ties go to the lowest index."""
    return int(kmeans_assign_many(model, np.asarray(point, dtype=np.float64).reshape(1, -1))[0])


def kmeans_assign_many(model: KMeansModel, points) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dimension:
        raise ValidationError(f"expected points of dimension {model.dimension}, got shape {X.shape}")
    if len(X) == 0:
        return np.empty(0, dtype=np.int64)
    return _squared_distances(X, model.centroid_array).argmin(axis=1)


# --- Tanimoto ---

def tanimoto(a, b) -> float:
    """|a AND b| / |a OR b|; two all-zero vectors count as identical (1.0)."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValidationError(f"tanimoto needs equal lengths, got {a.shape} and {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def tanimoto_many(query, matrix) -> np.ndarray:
    """Tanimoto of one binary vector against every row of a binary matrix."""
    q = np.asarray(query).astype(bool)
    M = np.asarray(matrix).astype(bool)
    if M.ndim != 2 or M.shape[1] != q.shape[0]:
        raise ValidationError(f"tanimoto needs equal lengths, got {q.shape} and {M.shape}")
    inter = (M & q).sum(axis=1)
    union = (M | q).sum(axis=1)
    return np.where(union == 0, 1.0, inter / np.maximum(union, 1))


def binarize_features(features: FeatureTable) -> FeatureTable:
    """
    Binary profiles from real feature vectors: a bit is set where the value
    exceeds that feature's median across entities.
    """
    if len(features.ids) < 2:
        raise DegenerateInputError("binarizing features needs at least 2 entities")
    median = np.median(features.matrix, axis=0)
    bits = (features.matrix > median).astype(np.float64)
    return FeatureTable(features.entity_kind, features.ids, bits)


def top_k_neighbors(query_vec, candidates, k: int = N_NEIGHBORS, query_id: str = "") -> NeighborSet:
    """
    The k most Tanimoto-similar candidates, ordered by (similarity desc, id asc).

    Args:
        query_vec: Binary vector of the query entity
        candidates: FeatureTable or mapping id -> binary vector
        k: Neighbor count; fewer are returned when there are fewer candidates
    """
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    if isinstance(candidates, FeatureTable):
        ids, matrix = candidates.ids, candidates.matrix
    else:
        ids = list(candidates)
        matrix = np.vstack([np.asarray(candidates[i], dtype=np.float64) for i in ids]) if ids else None
    if not ids:
        return NeighborSet(query=query_id, neighbors=[])

    by_id = np.argsort(np.asarray(ids, dtype=object), kind="stable")
    sims = tanimoto_many(query_vec, matrix[by_id])
    ranked = np.argsort(-sims, kind="stable")[:k]
    return NeighborSet(query=query_id, neighbors=[(ids[by_id[r]], float(sims[r])) for r in ranked])


# --- Artifacts ---

def write_assignments(cluster_of: dict, path) -> None:
    """Cluster assignment CSV (entity_id,cluster) sorted by entity id."""
    ids = sorted(cluster_of)
    write_frame(pd.DataFrame({"entity_id": ids, "cluster": [int(cluster_of[i]) for i in ids]}), path)


def save_kmeans(model: KMeansModel, path) -> None:
    try:
        Path(path).write_text(model.model_dump_json())
    except OSError as e:
        raise ArtifactIOError(f"cannot write k-means model {path}: {e}") from e


def load_kmeans(path) -> KMeansModel:
    try:
        return KMeansModel.model_validate_json(Path(path).read_text())
    except OSError as e:
        raise ArtifactIOError(f"cannot read k-means model {path}: {e}") from e
