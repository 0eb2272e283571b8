import time

from settings import TUNING_HOLDOUT_FRACTION
from src.ccp import NeighborPool, calibrate_ccp, predict_intervals_ccp, row_clusters
from src.clustering import binarize_features
from src.conformal import build_group_calibration, calibrate_marginal, predict_intervals_gcp, predict_intervals_mcp
from src.errors import ConfigError
from src.evalx import grid_search, tuning_holdout
from src.logger import log
from src.models import CcpConfig, ExperimentState, GridSearchResult

# Pipeline method name -> CcpConfig.method
CCP_METHODS = {"CCP-NC": "NC", "CCP-FC": "FC"}


def alpha_label(alpha: float) -> str:
    """Key for per-alpha settings in the manifest."""
    return f"{alpha:g}"


def _tune(state: ExperimentState, method: str, alpha: float) -> GridSearchResult:
    """Grid-search (gamma, K) for one cluster-conditioned method at one alpha."""
    config = state["config"]
    tuning = config.tuning
    cal = state["cal"]
    if tuning.evaluation == "holdout":
        fit_rows, holdout_rows = tuning_holdout(len(cal), TUNING_HOLDOUT_FRACTION, state["seed"])
        fit_table, eval_table = cal.take(fit_rows), cal.take(holdout_rows)
        eval_labels = eval_table.labels
    else:
        # grid scored on the test rows themselves; their labels are used for tuning only
        fit_table, eval_table = cal, state["test"].with_labels(state["test_labels"])
        eval_labels = state["test_labels"]

    result = grid_search(
        fit_table, eval_table, eval_labels, CCP_METHODS[method], alpha,
        gammas=tuning.gammas, ks=tuning.ks, seed=state["seed"],
        drug_features=state["drug_features"], protein_features=state["protein_features"],
        pooling=config.ccp.pooling,
    )
    log(f"  {method} tuned at alpha={alpha:g} ({tuning.evaluation}): gamma={result.best_gamma}, "
        f"K={result.best_k}, combined MACG={result.objective:.4f} over {len(result.evaluated)} cells")
    return result


def calibrate(state: ExperimentState) -> dict:
    """
    Calibrate every configured method at every alpha and build test intervals.

    Interval construction sees test predictions and entity ids only.

    Returns:
        Dict with intervals, clusters, grids, chosen, status
    """
    started = time.perf_counter()
    config = state["config"]
    cal, test = state["cal"], state["test"]
    drug_features, protein_features = state["drug_features"], state["protein_features"]

    intervals, clusters, grids, chosen = {}, {}, {}, {}
    pool = None

    for method in config.methods:
        if method in CCP_METHODS:
            if method == "CCP-FC" and (drug_features is None or protein_features is None):
                raise ConfigError("CCP-FC needs drug and protein feature tables")
            tuned = config.tuning is not None and method in config.tuning.methods
            chosen[method] = {}
            for alpha in config.alphas:
                gamma, k = config.ccp.gamma, config.ccp.n_clusters
                if tuned:
                    grids[(method, alpha)] = _tune(state, method, alpha)
                    gamma, k = grids[(method, alpha)].best
                chosen[method][alpha_label(alpha)] = {"gamma": gamma, "k": k}

        if method == "CCP-NN":
            if drug_features is None or protein_features is None:
                raise ConfigError("CCP-NN needs drug and protein feature tables for binary profiles")
            pool = pool or NeighborPool.from_table(cal, binarize_features(drug_features),
                                                   binarize_features(protein_features), config.ccp.n_neighbors)

        for alpha in config.alphas:
            if method == "MCP":
                batch = predict_intervals_mcp(test, calibrate_marginal(cal, alpha))
            elif method == "GCP":
                batch = predict_intervals_gcp(test, build_group_calibration(cal, alpha))
            elif method == "CCP-NN":
                batch = predict_intervals_ccp(test, pool=pool, alpha=alpha)
            else:
                setting = chosen[method][alpha_label(alpha)]
                ccp_config = CcpConfig(method=CCP_METHODS[method], gamma=setting["gamma"],
                                       n_clusters=setting["k"], n_neighbors=config.ccp.n_neighbors,
                                       alpha=alpha, seed=state["seed"], pooling=config.ccp.pooling,
                                       allow_any_gamma=True)
                model = calibrate_ccp(cal, ccp_config, drug_features, protein_features)
                batch = predict_intervals_ccp(test, model=model, drug_features=drug_features,
                                              protein_features=protein_features)
                clusters[(method, alpha)] = row_clusters(model, test, drug_features, protein_features)
            intervals[(method, alpha)] = batch
        log(f"  {method}: intervals for {len(config.alphas)} alpha level(s)")

    return {
        "intervals": intervals,
        "clusters": clusters,
        "grids": grids,
        "chosen": chosen,
        "timings": {**state["timings"], "calibrate": time.perf_counter() - started},
        "status": "calibrated",
    }
