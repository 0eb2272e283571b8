"""
Cluster-conditioned conformal prediction.

CCP-NC clusters drugs and proteins by the deciles of their residual ECDFs,
CCP-FC clusters them in input-feature space, and CCP-NN calibrates each test
pair on the calibration rows whose drug and protein are both among the
Tanimoto top-k neighbors of the test entities.

NC/FC split calibration into a clustering subset (fraction gamma) and a
quantile subset. Thresholds only ever see quantile-subset scores.
"""

import math
from fractions import Fraction
from typing import Optional

import numpy as np

from settings import ECDF_PERCENTILES, N_NEIGHBORS
from src.clustering import (
    entity_embeddings, kmeans_assign_many, kmeans_fit, tanimoto_many,
)
from src.conformal import _require_predictions, conformal_quantile, interval_batch, scores
from src.core import FeatureTable, InteractionTable
from src.errors import DegenerateInputError, ValidationError
from src.models import CcpConfig, CcpModel, GroupCalibration, IntervalBatch, KMeansModel, QuantileThreshold
from src.splits import make_rng


def gamma_split(cal_rows, gamma: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Shuffle the calibration rows and cut them into (cluster subset, quantile subset).

    The cluster subset receives floor(gamma * n) rows. Both subsets come back sorted.
    """
    rows = np.arange(cal_rows) if isinstance(cal_rows, (int, np.integer)) else np.asarray(cal_rows, dtype=np.int64)
    n = len(rows)
    if n < 2:
        raise DegenerateInputError(f"gamma split needs at least 2 calibration rows, got {n}")
    n_cluster = math.floor(Fraction(repr(float(gamma))) * n)
    if n_cluster == 0 or n_cluster == n:
        raise DegenerateInputError(f"gamma={gamma} on {n} rows leaves an empty subset")
    perm = rows[make_rng(seed).permutation(n)]
    return np.sort(perm[:n_cluster]), np.sort(perm[n_cluster:])


# --- Calibration ---

def _side_clusters(ids: np.ndarray, values: np.ndarray, cluster_rows: np.ndarray, quantile_rows: np.ndarray,
                   k: int, seed: int, percentiles) -> tuple[dict, KMeansModel]:
    """NC: fit on cluster-subset embeddings, assign quantile-only entities from their own scores."""
    fit_ids, fit_emb = entity_embeddings(ids[cluster_rows], values[cluster_rows], percentiles)
    model = kmeans_fit(fit_emb, k, seed)
    cluster_of = dict(zip(fit_ids, kmeans_assign_many(model, fit_emb).tolist()))

    late = np.isin(ids[quantile_rows], fit_ids, invert=True)
    if late.any():
        rows = quantile_rows[late]
        late_ids, late_emb = entity_embeddings(ids[rows], values[rows], percentiles)
        cluster_of.update(zip(late_ids, kmeans_assign_many(model, late_emb).tolist()))
    return cluster_of, model


def _feature_clusters(ids: np.ndarray, cluster_rows: np.ndarray, features: FeatureTable,
                      k: int, seed: int) -> tuple[dict, KMeansModel]:
    """FC: fit on feature vectors of cluster-subset entities, assign every calibration entity."""
    fit_ids = sorted(set(ids[cluster_rows].tolist()))
    model = kmeans_fit(features.matrix_for(fit_ids), k, seed)
    all_ids = sorted(set(ids.tolist()))
    labels = kmeans_assign_many(model, features.matrix_for(all_ids))
    return dict(zip(all_ids, labels.tolist())), model


def _build_model(config: CcpConfig, values: np.ndarray, drug_ids: np.ndarray, protein_ids: np.ndarray,
                 cluster_rows: np.ndarray, quantile_rows: np.ndarray, drug_cluster_of: dict,
                 protein_cluster_of: dict, drug_km: KMeansModel, protein_km: KMeansModel) -> CcpModel:
    return CcpModel(
        config=config,
        drug_cluster_of=drug_cluster_of,
        protein_cluster_of=protein_cluster_of,
        drug_kmeans=drug_km,
        protein_kmeans=protein_km,
        quantile_rows=quantile_rows.tolist(),
        cluster_rows=cluster_rows.tolist(),
        quantile_drug_cluster=[drug_cluster_of[d] for d in drug_ids[quantile_rows]],
        quantile_protein_cluster=[protein_cluster_of[p] for p in protein_ids[quantile_rows]],
        quantile_scores=values[quantile_rows].tolist(),
    )


def calibrate_ccp_nc(cal_table: InteractionTable, config: CcpConfig, percentiles=ECDF_PERCENTILES) -> CcpModel:
    """
    CCP-NC calibration.

    Args:
        cal_table: Calibration rows with predictions
        config: method "NC"; gamma, n_clusters, alpha and seed are used
        percentiles: ECDF grid for the entity embeddings

    Returns:
        CcpModel with drug and protein cluster maps and the quantile-subset scores
    """
    if config.method != "NC":
        raise ValidationError(f"calibrate_ccp_nc needs method NC, got {config.method}")
    _require_predictions(cal_table, "calibration")
    values = scores(cal_table.labels, cal_table.predictions)
    cluster_rows, quantile_rows = gamma_split(len(cal_table), config.gamma, config.seed)
    drug_ids, protein_ids = cal_table.drug_ids, cal_table.protein_ids

    drug_map, drug_km = _side_clusters(drug_ids, values, cluster_rows, quantile_rows,
                                       config.n_clusters, config.seed, percentiles)
    protein_map, protein_km = _side_clusters(protein_ids, values, cluster_rows, quantile_rows,
                                             config.n_clusters, config.seed, percentiles)
    return _build_model(config, values, drug_ids, protein_ids, cluster_rows, quantile_rows,
                        drug_map, protein_map, drug_km, protein_km)


def calibrate_ccp_fc(cal_table: InteractionTable, drug_features: FeatureTable,
                     protein_features: FeatureTable, config: CcpConfig) -> CcpModel:
    """CCP-FC calibration: same pipeline as NC with feature vectors in place of ECDF embeddings."""
    if config.method != "FC":
        raise ValidationError(f"calibrate_ccp_fc needs method FC, got {config.method}")
    _require_predictions(cal_table, "calibration")
    values = scores(cal_table.labels, cal_table.predictions)
    cluster_rows, quantile_rows = gamma_split(len(cal_table), config.gamma, config.seed)
    drug_ids, protein_ids = cal_table.drug_ids, cal_table.protein_ids

    drug_map, drug_km = _feature_clusters(drug_ids, cluster_rows, drug_features, config.n_clusters, config.seed)
    protein_map, protein_km = _feature_clusters(protein_ids, cluster_rows, protein_features,
                                                config.n_clusters, config.seed)
    return _build_model(config, values, drug_ids, protein_ids, cluster_rows, quantile_rows,
                        drug_map, protein_map, drug_km, protein_km)


def calibrate_ccp(cal_table: InteractionTable, config: CcpConfig, drug_features: Optional[FeatureTable] = None,
                  protein_features: Optional[FeatureTable] = None) -> CcpModel:
    if config.method == "NC":
        return calibrate_ccp_nc(cal_table, config)
    if config.method == "FC":
        if drug_features is None or protein_features is None:
            raise ValidationError("CCP-FC needs drug and protein feature tables")
        return calibrate_ccp_fc(cal_table, drug_features, protein_features, config)
    raise ValidationError("CCP-NN has no cluster model; build a NeighborPool instead")


# --- Thresholds ---

def _resolve(entity: str, cluster_of: dict, kmeans: Optional[KMeansModel], features: Optional[FeatureTable],
             method: str, present: frozenset) -> Optional[int]:
    cluster = cluster_of.get(entity)
    if cluster is None and method == "FC" and kmeans is not None and features is not None and entity in features:
        cluster = int(kmeans_assign_many(kmeans, features.vector(entity).reshape(1, -1))[0])
    # a cluster without quantile-subset scores cannot produce a threshold
    if cluster is None or cluster not in present:
        return None
    return int(cluster)


def resolve_clusters(model: CcpModel, test_drug: str, test_protein: str,
                     drug_features: Optional[FeatureTable] = None,
                     protein_features: Optional[FeatureTable] = None) -> tuple[Optional[int], Optional[int]]:
    """Drug and protein cluster of a test pair, None where not resolvable."""
    method = model.config.method
    kd = _resolve(test_drug, model.drug_cluster_of, model.drug_kmeans, drug_features, method,
                  model.drug_clusters_with_scores)
    kt = _resolve(test_protein, model.protein_cluster_of, model.protein_kmeans, protein_features, method,
                  model.protein_clusters_with_scores)
    return kd, kt


def _cluster_scores(model: CcpModel, kd: Optional[int], kt: Optional[int]) -> np.ndarray:
    if kd is not None and kt is not None:
        drug_match = model.row_drug_cluster == kd
        protein_match = model.row_protein_cluster == kt
        if model.config.pooling == "intersection":
            return model.global_scores[drug_match & protein_match]
        return model.global_scores[drug_match | protein_match]
    if kd is not None:
        return model.global_scores[model.row_drug_cluster == kd]
    if kt is not None:
        return model.global_scores[model.row_protein_cluster == kt]
    return model.global_scores


def ccp_threshold(model: CcpModel, test_drug: str, test_protein: str,
                  drug_features: Optional[FeatureTable] = None,
                  protein_features: Optional[FeatureTable] = None) -> QuantileThreshold:
    """
    Threshold for one test pair.

    Both clusters resolvable: quantile of the quantile-subset scores whose drug
    cluster or protein cluster matches (each row once). One resolvable: that
    cluster's scores. Neither: every quantile-subset score.
    """
    kd, kt = resolve_clusters(model, test_drug, test_protein, drug_features, protein_features)
    return conformal_quantile(_cluster_scores(model, kd, kt), model.config.alpha)


# --- Nearest-neighbor calibration ---

class NeighborPool:
    """
    Calibration rows indexed for CCP-NN lookups.

    Neighbor lists are cached per entity; candidates are the calibration
    entities that have a binary profile.
    """

    def __init__(self, drug_ids, protein_ids, cal_scores, drug_bits: FeatureTable,
                 protein_bits: FeatureTable, k: int = N_NEIGHBORS):
        if k < 1:
            raise ValidationError(f"n_neighbors must be positive, got {k}")
        self.drug_ids = np.asarray(drug_ids, dtype=object)
        self.protein_ids = np.asarray(protein_ids, dtype=object)
        self.scores = np.asarray(cal_scores, dtype=np.float64)
        self.k = k
        self.drug_bits = drug_bits
        self.protein_bits = protein_bits
        self._drug_candidates = _candidates(self.drug_ids, drug_bits)
        self._protein_candidates = _candidates(self.protein_ids, protein_bits)
        self._cache = {"Drug": {}, "Protein": {}}

    @classmethod
    def from_table(cls, cal_table: InteractionTable, drug_bits: FeatureTable, protein_bits: FeatureTable,
                   k: int = N_NEIGHBORS) -> "NeighborPool":
        _require_predictions(cal_table, "calibration")
        return cls(cal_table.drug_ids, cal_table.protein_ids, scores(cal_table.labels, cal_table.predictions),
                   drug_bits, protein_bits, k)

    @classmethod
    def from_calibration(cls, calib: GroupCalibration, drug_bits: FeatureTable, protein_bits: FeatureTable,
                         k: int = N_NEIGHBORS) -> "NeighborPool":
        return cls(calib.drug_ids, calib.protein_ids, calib.global_scores, drug_bits, protein_bits, k)

    def neighbors(self, entity: str, kind: str) -> list[str]:
        cache = self._cache[kind]
        if entity not in cache:
            bits = self.drug_bits if kind == "Drug" else self.protein_bits
            ids, matrix = self._drug_candidates if kind == "Drug" else self._protein_candidates
            if len(ids) == 0:
                cache[entity] = []
            else:
                sims = tanimoto_many(bits.vector(entity), matrix)
                # candidates are sorted by id, so a stable sort keeps id order within ties
                ranked = np.argsort(-sims, kind="stable")[: self.k]
                cache[entity] = [ids[i] for i in ranked]
        return cache[entity]

    def local_rows(self, test_drug: str, test_protein: str) -> np.ndarray:
        near_drugs = self.neighbors(test_drug, "Drug")
        near_proteins = self.neighbors(test_protein, "Protein")
        mask = np.isin(self.drug_ids, near_drugs) & np.isin(self.protein_ids, near_proteins)
        return np.flatnonzero(mask)

    def local_scores(self, test_drug: str, test_protein: str) -> np.ndarray:
        return self.scores[self.local_rows(test_drug, test_protein)]


def _candidates(ids: np.ndarray, bits: FeatureTable) -> tuple[list[str], np.ndarray]:
    unique = sorted(set(ids.tolist()))
    missing = [e for e in unique if e not in bits]
    if missing:
        raise ValidationError(f"missing {bits.entity_kind} binary profiles for {len(missing)} calibration entities: {missing[:10]}")
    if not unique:
        return [], np.empty((0, bits.dimension))
    return unique, bits.matrix_for(unique)


def ccp_nn_local_scores(test_drug: str, test_protein: str, cal_table: InteractionTable, drug_bits: FeatureTable,
                        protein_bits: FeatureTable, k: int = N_NEIGHBORS) -> np.ndarray:
    """Scores of calibration rows whose drug and protein are both top-k neighbors of the test pair."""
    return NeighborPool.from_table(cal_table, drug_bits, protein_bits, k).local_scores(test_drug, test_protein)


# --- Intervals ---

def predict_intervals_ccp(test_table: InteractionTable, model: Optional[CcpModel] = None,
                          pool: Optional[NeighborPool] = None, alpha: Optional[float] = None,
                          drug_features: Optional[FeatureTable] = None,
                          protein_features: Optional[FeatureTable] = None) -> IntervalBatch:
    """
    CCP intervals for every test row, in input order.

    NC/FC take a calibrated model. NN takes a NeighborPool and alpha; an empty
    neighborhood falls back to the quantile of all calibration scores.
    """
    _require_predictions(test_table, "test")
    thresholds = np.empty(len(test_table))
    pairs = zip(test_table.drug_ids, test_table.protein_ids)

    if model is not None:
        cache: dict = {}
        for i, (drug, protein) in enumerate(pairs):
            key = resolve_clusters(model, drug, protein, drug_features, protein_features)
            if key not in cache:
                cache[key] = conformal_quantile(_cluster_scores(model, *key), model.config.alpha).value
            thresholds[i] = cache[key]
    elif pool is not None:
        if alpha is None:
            raise ValidationError("CCP-NN intervals need alpha")
        fallback = conformal_quantile(pool.scores, alpha).value
        for i, (drug, protein) in enumerate(pairs):
            local = pool.local_scores(drug, protein)
            thresholds[i] = conformal_quantile(local, alpha).value if len(local) else fallback
    else:
        raise ValidationError("predict_intervals_ccp needs a CcpModel or a NeighborPool")

    return interval_batch(test_table.predictions, thresholds)


def row_clusters(model: CcpModel, table: InteractionTable, drug_features: Optional[FeatureTable] = None,
                 protein_features: Optional[FeatureTable] = None) -> tuple[list, list]:
    """Resolved (drug cluster, protein cluster) per row, -1 where unresolvable."""
    drug_clusters, protein_clusters = [], []
    for drug, protein in zip(table.drug_ids, table.protein_ids):
        kd, kt = resolve_clusters(model, drug, protein, drug_features, protein_features)
        drug_clusters.append(-1 if kd is None else kd)
        protein_clusters.append(-1 if kt is None else kt)
    return drug_clusters, protein_clusters
