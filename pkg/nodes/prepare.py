import time

from src.core import apply_transforms, fit_transforms
from src.logger import log
from src.models import ExperimentState, SplitStrategy
from src.splits import split_table


def prepare(state: ExperimentState) -> dict:
    """
    Split the table and freeze the label transforms on the training rows.

    The test table handed downstream has its labels masked; the labels travel
    separately in test_labels and only the evaluate node reads them.

    Returns:
        Dict with split, train, cal, test, test_labels, transforms, status
    """
    started = time.perf_counter()
    config = state["config"]
    table = state["table"]

    split = split_table(table, SplitStrategy(kind=state["split_kind"], seed=state["seed"]))
    train = table.take(split.train_rows)
    cal = table.take(split.cal_rows)
    test = table.take(split.test_rows)

    fitted = []
    if config.transforms:
        fitted = fit_transforms(train.labels, config.transforms)
        train = train.with_labels(apply_transforms(train.labels, fitted))
        cal = cal.with_labels(apply_transforms(cal.labels, fitted))
        test = test.with_labels(apply_transforms(test.labels, fitted))
        for spec in fitted:
            if spec.kind == "BoxCox":
                log(f"  Box-Cox lambda fitted on {len(train)} training labels: {spec.lambda_:.4f}")

    sizes = split.sizes()
    log(f"  {state['split_kind']} split (seed {state['seed']}): "
        f"train={sizes['train']}, cal={sizes['cal']}, test={sizes['test']}")

    return {
        "split": split,
        "train": train,
        "cal": cal,
        "test": test.without_labels(),
        "test_labels": test.labels,
        "transforms": [spec.model_dump(by_alias=True) for spec in fitted],
        "timings": {**state["timings"], "prepare": time.perf_counter() - started},
        "status": "prepared",
    }
