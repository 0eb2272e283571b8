import time

from src.core import pair_features
from src.errors import ConfigError
from src.logger import log
from src.models import ExperimentState
from src.predictor import attach_external_predictions, fit_gbm, predict as gbm_predict


def predict(state: ExperimentState) -> dict:
    """
    Attach point predictions to the calibration and test rows.

    builtin: fit the gradient boosting model on the training rows.
    external: read them from the configured predictions CSV.

    Returns:
        Dict with cal, test (both with predictions), status
    """
    started = time.perf_counter()
    predictor = state["config"].predictor
    cal, test = state["cal"], state["test"]

    if predictor.kind == "external":
        cal = attach_external_predictions(cal, predictor.predictions_path)
        test = attach_external_predictions(test, predictor.predictions_path)
        log(f"  Predictions attached from {predictor.predictions_path}")
    else:
        drug_features, protein_features = state["drug_features"], state["protein_features"]
        if drug_features is None or protein_features is None:
            raise ConfigError("the builtin predictor needs drug and protein feature tables")
        train = state["train"]
        model = fit_gbm(pair_features(train, drug_features, protein_features), train.labels, predictor.gbm)
        cal = cal.with_predictions(gbm_predict(model, pair_features(cal, drug_features, protein_features)))
        test = test.with_predictions(gbm_predict(model, pair_features(test, drug_features, protein_features)))
        log(f"  Gradient boosting fitted: {len(model.trees)} stages on {len(train)} rows")

    return {
        "cal": cal,
        "test": test,
        "timings": {**state["timings"], "predict": time.perf_counter() - started},
        "status": "predicted",
    }
