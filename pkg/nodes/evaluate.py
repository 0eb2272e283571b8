import time

from src.evalx import evaluate_intervals, reliability_curve
from src.models import ExperimentState
from src.predictor import regression_metrics


def evaluate(state: ExperimentState) -> dict:
    """
    Score the intervals against the held-back test labels.

    This is the only stage that reads test_labels.

    Returns:
        Dict with reports, reliability, regression, status
    """
    started = time.perf_counter()
    config = state["config"]
    test, labels = state["test"], state["test_labels"]
    intervals, clusters = state["intervals"], state["clusters"] or {}

    reports = []
    for (method, alpha), batch in intervals.items():
        report = evaluate_intervals(batch, test, labels, alpha, config.min_subgroup_size,
                                    clusters=clusters.get((method, alpha)))
        reports.append({"method": method, "alpha": alpha, "report": report})

    reliability = []
    for method in config.methods:
        reliability.extend(reliability_curve(lambda a, m=method: intervals[(m, a)], labels, config.alphas,
                                             method=method, split=state["split_kind"]))

    return {
        "reports": reports,
        "reliability": reliability,
        "regression": regression_metrics(labels, test.predictions),
        "timings": {**state["timings"], "evaluate": time.perf_counter() - started},
        "status": "evaluated",
    }
