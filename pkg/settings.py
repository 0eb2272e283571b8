"""
Configuration for the CoverageLens project.
"""

import os
from dotenv import load_dotenv

load_dotenv()

# Cluster-conditioned tuning grid (3 x 11 = 33 settings)
GAMMA_GRID = (0.25, 0.5, 0.75)
K_GRID = (1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50)

DEFAULT_ALPHAS = (0.05, 0.10, 0.15, 0.20)
N_NEIGHBORS = 20  # top-k Tanimoto neighbors per side for CCP-NN

# 10th..90th percentiles of an entity's residual ECDF
ECDF_PERCENTILES = (10, 20, 30, 40, 50, 60, 70, 80, 90)

KMEANS_MAX_ITER = 300
BOXCOX_BOUNDS = (-5.0, 5.0)
BOXCOX_TOL = 1e-4

# Share of calibration rows held out to score the grid when tuning leakage-free
TUNING_HOLDOUT_FRACTION = 0.25

# Gradient boosting defaults (500 stages, lr 0.05, depth 6, squared error)
GBM_N_STAGES = 500
GBM_LEARNING_RATE = 0.05
GBM_MAX_DEPTH = 6
GBM_MIN_SAMPLES_LEAF = 1

# Serialization
FLOAT_FORMAT = "%.17g"
ARTIFACT_VERSION = 1

# File paths (defaults, can be overridden via CLI or environment)
LOG_FILE = os.getenv("COVERAGELENS_LOG_FILE", "coveragelens.log")
INTERACTIONS_FILE = "interactions.csv"
DRUG_FEATURES_FILE = "drug_features.csv"
PROTEIN_FEATURES_FILE = "protein_features.csv"
INTERVALS_FILE = "intervals.csv"
COVERAGE_FILE = "coverage.json"
RELIABILITY_FILE = "reliability.csv"
GRID_FILE_TEMPLATE = "grid_{method}_alpha={alpha:g}.csv"
MANIFEST_FILE = "manifest.json"
