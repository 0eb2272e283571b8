import math
from dataclasses import dataclass
from typing import Any, Literal, Optional, TypedDict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from settings import (
    ARTIFACT_VERSION, DEFAULT_ALPHAS, GAMMA_GRID, K_GRID, N_NEIGHBORS,
    GBM_N_STAGES, GBM_LEARNING_RATE, GBM_MAX_DEPTH, GBM_MIN_SAMPLES_LEAF,
)


# Shared constants, imported by the pipeline nodes and main.py
METHODS = ["MCP", "GCP", "CCP-NC", "CCP-FC", "CCP-NN"]
SPLIT_KINDS = ["Random", "ColdDrug", "ColdProtein", "DoubleCold"]

EntityKind = Literal["Drug", "Protein"]
SplitKind = Literal["Random", "ColdDrug", "ColdProtein", "DoubleCold"]
MethodName = Literal["MCP", "GCP", "CCP-NC", "CCP-FC", "CCP-NN"]
ScoreKind = Literal["AbsoluteResidual", "NormalizedResidual"]


class Model(BaseModel):
    """Base for models that may carry unbounded floats; inf serializes as Infinity."""
    model_config = ConfigDict(ser_json_inf_nan="constants", populate_by_name=True)


# --- Data model ---

class EntityId(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: EntityKind
    token: str = Field(min_length=1, description="Opaque identifier, unique per kind")


class InteractionRecord(Model):
    """One (drug, protein) pair with its working-scale label."""
    drug_id: str = Field(min_length=1)
    protein_id: str = Field(min_length=1)
    label: float
    prediction: Optional[float] = None

    @field_validator("label")
    @classmethod
    def _finite_label(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("label must be finite")
        return v


class TransformSpec(Model):
    kind: Literal["NegLog10OverGiga", "BoxCox", "Identity"]
    # None on a BoxCox step means "fit on training labels" (pipeline only)
    lambda_: Optional[float] = Field(default=None, alias="lambda")

    @field_validator("lambda_")
    @classmethod
    def _finite_lambda(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not math.isfinite(v):
            raise ValueError("Box-Cox lambda must be finite")
        return v


class InteractionSchema(BaseModel):
    """What load_interactions expects from an interactions CSV."""
    require_prediction: bool = False
    # Applied in order at ingestion; BoxCox steps must carry a lambda here
    transforms: list[TransformSpec] = Field(default_factory=list)


# --- Splits ---

class SplitStrategy(BaseModel):
    kind: SplitKind
    seed: int = Field(ge=0, lt=2**64)


class SplitResult(BaseModel):
    """Disjoint train/calibration/test row indices plus provenance."""
    train_rows: list[int]
    cal_rows: list[int]
    test_rows: list[int]
    strategy: SplitStrategy
    discarded: int = 0

    @model_validator(mode="after")
    def _disjoint(self):
        train, cal, test = set(self.train_rows), set(self.cal_rows), set(self.test_rows)
        if train & cal or train & test or cal & test:
            raise ValueError("train/cal/test row sets must be pairwise disjoint")
        return self

    def sizes(self) -> dict:
        return {"train": len(self.train_rows), "cal": len(self.cal_rows), "test": len(self.test_rows)}


# --- Predictor ---

class GbmConfig(BaseModel):
    n_stages: int = Field(default=GBM_N_STAGES, gt=0)
    learning_rate: float = Field(default=GBM_LEARNING_RATE, gt=0.0, le=1.0)
    max_depth: int = Field(default=GBM_MAX_DEPTH, gt=0)
    min_samples_leaf: int = Field(default=GBM_MIN_SAMPLES_LEAF, gt=0)
    loss: Literal["SquaredError"] = "SquaredError"


class RegressionTree(BaseModel):
    """Flattened binary tree; feature == -1 marks a leaf. Rows go left when x <= threshold."""
    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    value: list[float]


class GbmModel(BaseModel):
    version: int = ARTIFACT_VERSION
    init_value: float
    n_features: int
    config: GbmConfig
    trees: list[RegressionTree]


# --- Conformal ---

class QuantileThreshold(Model):
    value: float = Field(description="Non-negative score threshold, or +inf")
    n_cal: int
    alpha: float


class PredictionInterval(Model):
    lower: float
    upper: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.lower > self.upper:
            raise ValueError("lower must not exceed upper")
        return self


@dataclass(frozen=True)
class IntervalBatch:
    """Intervals for a batch of rows, in input order."""
    prediction: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    threshold: np.ndarray

    def __len__(self) -> int:
        return len(self.prediction)

    def interval(self, i: int) -> PredictionInterval:
        return PredictionInterval(lower=float(self.lower[i]), upper=float(self.upper[i]))


class GroupCalibration(Model):
    """Calibration scores kept per row so drug/protein groups can be re-derived."""
    alpha: float = Field(gt=0.0, lt=1.0)
    kind: ScoreKind = "AbsoluteResidual"
    drug_ids: list[str]
    protein_ids: list[str]
    scores: list[float]

    _scores: np.ndarray = PrivateAttr()
    _drug_rows: dict = PrivateAttr()
    _protein_rows: dict = PrivateAttr()

    def model_post_init(self, __context: Any) -> None:
        self._scores = np.asarray(self.scores, dtype=np.float64)
        self._drug_rows = _rows_by_key(self.drug_ids)
        self._protein_rows = _rows_by_key(self.protein_ids)

    @property
    def global_scores(self) -> np.ndarray:
        return self._scores

    @property
    def drug_rows(self) -> dict:
        return self._drug_rows

    @property
    def protein_rows(self) -> dict:
        return self._protein_rows

    @property
    def per_drug(self) -> dict:
        return {d: self._scores[rows] for d, rows in self._drug_rows.items()}

    @property
    def per_protein(self) -> dict:
        return {p: self._scores[rows] for p, rows in self._protein_rows.items()}


def _rows_by_key(keys: list[str]) -> dict:
    rows: dict = {}
    for i, key in enumerate(keys):
        rows.setdefault(key, []).append(i)
    return {k: np.asarray(v, dtype=np.int64) for k, v in rows.items()}


# --- Clustering ---

class KMeansModel(BaseModel):
    version: int = ARTIFACT_VERSION
    k: int = Field(gt=0)
    requested_k: int = Field(gt=0)
    centroids: list[list[float]]
    seed: int
    inertia: float = Field(ge=0.0)
    n_iter: int = 0
    inertia_history: list[float] = Field(default_factory=list)

    _centroids: np.ndarray = PrivateAttr()

    def model_post_init(self, __context: Any) -> None:
        self._centroids = np.asarray(self.centroids, dtype=np.float64).reshape(self.k, -1)

    @property
    def centroid_array(self) -> np.ndarray:
        return self._centroids

    @property
    def dimension(self) -> int:
        return self._centroids.shape[1]


class NeighborSet(BaseModel):
    query: str
    neighbors: list[tuple[str, float]]


# --- Cluster-conditioned CP ---

class CcpConfig(BaseModel):
    method: Literal["NC", "FC", "NN"]
    gamma: float = 0.5
    n_clusters: int = Field(default=5, gt=0)
    n_neighbors: int = Field(default=N_NEIGHBORS, gt=0)
    alpha: float = Field(default=0.1, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    # When both clusters are known: pool scores matching either cluster, or both
    pooling: Literal["union", "intersection"] = "union"
    allow_any_gamma: bool = False

    @model_validator(mode="after")
    def _gamma_on_grid(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.allow_any_gamma and self.gamma not in GAMMA_GRID:
            raise ValueError(f"gamma must be one of {GAMMA_GRID} (set allow_any_gamma to override)")
        return self


class CcpModel(Model):
    version: int = ARTIFACT_VERSION
    config: CcpConfig
    drug_cluster_of: dict[str, int]
    protein_cluster_of: dict[str, int]
    drug_kmeans: Optional[KMeansModel] = None
    protein_kmeans: Optional[KMeansModel] = None
    # One entry per quantile-subset row (positions refer to the calibration table)
    quantile_rows: list[int]
    cluster_rows: list[int]
    quantile_drug_cluster: list[int]
    quantile_protein_cluster: list[int]
    quantile_scores: list[float]

    _scores: np.ndarray = PrivateAttr()
    _drug_cluster: np.ndarray = PrivateAttr()
    _protein_cluster: np.ndarray = PrivateAttr()
    _drug_present: frozenset = PrivateAttr()
    _protein_present: frozenset = PrivateAttr()

    def model_post_init(self, __context: Any) -> None:
        self._scores = np.asarray(self.quantile_scores, dtype=np.float64)
        self._drug_cluster = np.asarray(self.quantile_drug_cluster, dtype=np.int64)
        self._protein_cluster = np.asarray(self.quantile_protein_cluster, dtype=np.int64)
        self._drug_present = frozenset(self.quantile_drug_cluster)
        self._protein_present = frozenset(self.quantile_protein_cluster)

    @property
    def global_scores(self) -> np.ndarray:
        return self._scores

    @property
    def row_drug_cluster(self) -> np.ndarray:
        return self._drug_cluster

    @property
    def row_protein_cluster(self) -> np.ndarray:
        return self._protein_cluster

    @property
    def drug_clusters_with_scores(self) -> frozenset:
        return self._drug_present

    @property
    def protein_clusters_with_scores(self) -> frozenset:
        return self._protein_present

    @property
    def quantile_scores_by_drug_cluster(self) -> dict:
        return {int(c): self._scores[self._drug_cluster == c] for c in np.unique(self._drug_cluster)}

    @property
    def quantile_scores_by_protein_cluster(self) -> dict:
        return {int(c): self._scores[self._protein_cluster == c] for c in np.unique(self._protein_cluster)}


class CalibrationArtifact(Model):
    """Versioned JSON written by `calibrate` and read by `predict-intervals`."""
    version: int = ARTIFACT_VERSION
    method: MethodName
    alpha: float
    group: Optional[GroupCalibration] = None
    ccp: Optional[CcpModel] = None
    n_neighbors: int = N_NEIGHBORS


# --- Evaluation ---

class CoverageReport(Model):
    alpha: float
    n_test: int
    coverage: float
    mean_width: float
    n_unbounded: int = 0
    per_subgroup: dict[str, tuple[int, float]] = Field(default_factory=dict)


class MacgReport(Model):
    subgroup_kind: Literal["Drug", "Protein", "Cluster"]
    alpha: float
    macg: float
    std_gap: float
    D: int


class GridCell(Model):
    gamma: float
    k: int
    macg_drug: float
    macg_protein: float
    combined: float


class GridSearchResult(Model):
    method: Literal["NC", "FC"]
    alpha: float
    evaluated: list[GridCell]
    best_gamma: float
    best_k: int
    objective: float

    @property
    def best(self) -> tuple:
        return (self.best_gamma, self.best_k)


# --- Harness ---

class NoiseCluster(BaseModel):
    fraction: float = Field(gt=0.0, le=1.0)
    noise_scale: float = Field(gt=0.0)


class SyntheticSpec(BaseModel):
    n_drugs: int = Field(default=60, gt=0)
    n_proteins: int = Field(default=30, gt=0)
    density: float = Field(default=0.6, gt=0.0, le=1.0)
    latent_dim: int = Field(default=4, gt=0)
    drug_noise_clusters: list[NoiseCluster] = Field(
        default_factory=lambda: [NoiseCluster(fraction=0.5, noise_scale=0.5),
                                 NoiseCluster(fraction=0.5, noise_scale=2.0)])
    protein_noise_clusters: list[NoiseCluster] = Field(
        default_factory=lambda: [NoiseCluster(fraction=0.5, noise_scale=0.5),
                                 NoiseCluster(fraction=0.5, noise_scale=2.0)])
    feature_dim_drug: int = Field(default=8, gt=0)
    feature_dim_protein: int = Field(default=8, gt=0)
    feature_noise: float = Field(default=0.1, ge=0.0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _valid(self):
        for side in ("drug_noise_clusters", "protein_noise_clusters"):
            clusters = getattr(self, side)
            if not clusters:
                raise ValueError(f"{side} must not be empty")
            if abs(sum(c.fraction for c in clusters) - 1.0) > 1e-9:
                raise ValueError(f"{side} fractions must sum to 1")
        if self.feature_dim_drug < self.latent_dim or self.feature_dim_protein < self.latent_dim:
            raise ValueError("feature dimensions must be at least latent_dim")
        return self


class PredictorConfig(BaseModel):
    kind: Literal["builtin", "external"] = "builtin"
    gbm: GbmConfig = Field(default_factory=GbmConfig)
    predictions_path: Optional[str] = None

    @model_validator(mode="after")
    def _external_needs_path(self):
        if self.kind == "external" and not self.predictions_path:
            raise ValueError("external predictor requires predictions_path")
        return self


class DataConfig(BaseModel):
    """Either user-supplied CSVs or a synthetic generator spec."""
    interactions: Optional[str] = None
    drug_features: Optional[str] = None
    protein_features: Optional[str] = None
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)


class CcpSettings(BaseModel):
    gamma: float = 0.5
    n_clusters: int = Field(default=5, gt=0)
    n_neighbors: int = Field(default=N_NEIGHBORS, gt=0)
    pooling: Literal["union", "intersection"] = "union"


class TuningConfig(BaseModel):
    gammas: list[float] = Field(default_factory=lambda: list(GAMMA_GRID))
    ks: list[int] = Field(default_factory=lambda: list(K_GRID))
    evaluation: Literal["holdout", "test"] = "holdout"
    methods: list[Literal["CCP-NC", "CCP-FC"]] = Field(default_factory=lambda: ["CCP-NC", "CCP-FC"])


class ExperimentConfig(BaseModel):
    splits: list[SplitKind] = Field(default_factory=lambda: ["Random"], min_length=1)
    methods: list[MethodName] = Field(default_factory=lambda: list(METHODS), min_length=1)
    alphas: list[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS), min_length=1)
    predictor: PredictorConfig = Field(default_factory=PredictorConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    transforms: list[TransformSpec] = Field(default_factory=list)
    ccp: CcpSettings = Field(default_factory=CcpSettings)
    tuning: Optional[TuningConfig] = None
    min_subgroup_size: int = Field(default=1, gt=0)
    output_dir: str = "runs/latest"
    seed: int = Field(default=0, ge=0)
    n_seeds: int = Field(default=20, gt=0)

    @field_validator("alphas")
    @classmethod
    def _alpha_range(cls, v: list[float]) -> list[float]:
        for a in v:
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha must lie in (0, 1), got {a}")
        return v


class RunManifest(BaseModel):
    version: int = ARTIFACT_VERSION
    config_hash: str
    config: dict
    data_fingerprints: dict[str, str]
    versions: dict[str, str]
    timings: dict[str, float]
    discarded: dict[str, int]
    chosen: dict[str, dict]
    transforms: dict[str, list[dict]]
    created_at: str


class ExperimentState(TypedDict):
    # Input
    config: ExperimentConfig
    seed: int
    split_kind: str
    output_dir: str                  # this split's artifacts go under output_dir/split_kind
    table: Any                       # InteractionTable
    drug_features: Any               # FeatureTable | None
    protein_features: Any

    # From prepare node
    split: Optional[SplitResult]
    train: Any
    cal: Any
    test: Any                        # labels masked; intervals never see them
    test_labels: Optional[np.ndarray]  # read only by the evaluate node
    transforms: Optional[list[dict]]

    # From predict node
    regression: Optional[dict]       # rmse / r2 on the test rows

    # From calibrate node
    intervals: Optional[dict]        # (method, alpha) -> IntervalBatch
    clusters: Optional[dict]         # (method, alpha) -> (drug cluster ids, protein cluster ids)
    grids: Optional[dict]            # (method, alpha) -> GridSearchResult
    chosen: Optional[dict]           # method -> {alpha label: {"gamma": .., "k": ..}}

    # From evaluate node
    reports: Optional[list[dict]]
    reliability: Optional[list[dict]]

    timings: dict
    status: str  # "pending" | "prepared" | "predicted" | "calibrated" | "evaluated" | "saved"
