import json
import time
from pathlib import Path

from settings import COVERAGE_FILE, GRID_FILE_TEMPLATE, INTERVALS_FILE, RELIABILITY_FILE
from src.conformal import write_intervals
from src.errors import ArtifactIOError
from src.evalx import summary_row, write_grid_csv, write_reliability_csv, write_report_json, write_summary_csv
from src.logger import log
from src.models import ExperimentState
from src.splits import write_split

SUMMARY_FILE = "summary.csv"
REGRESSION_FILE = "regression.json"


def alpha_dir(alpha: float) -> str:
    return f"alpha={alpha:g}"


def save(state: ExperimentState) -> dict:
    """
    Write every artifact of one (seed, split) run.

    Layout under output_dir/split_kind:
        train_rows.txt, cal_rows.txt, test_rows.txt, split.json
        {method}/alpha={a}/intervals.csv and coverage.json
        reliability.csv, regression.json, summary.csv, grid_{method}_alpha={a}.csv
    """
    started = time.perf_counter()
    split_dir = Path(state["output_dir"]) / state["split_kind"]
    test = state["test"]

    write_split(state["split"], split_dir)

    rows = []
    for entry in state["reports"]:
        method, alpha = entry["method"], entry["alpha"]
        target = split_dir / method / alpha_dir(alpha)
        write_intervals(state["intervals"][(method, alpha)], test, method, alpha, target / INTERVALS_FILE)
        write_report_json(entry["report"], target / COVERAGE_FILE)
        rows.append(summary_row(entry["report"], method, state["split_kind"], state["seed"]))

    write_summary_csv(rows, split_dir / SUMMARY_FILE)
    write_reliability_csv(state["reliability"], split_dir / RELIABILITY_FILE)
    for (method, alpha), result in (state["grids"] or {}).items():
        write_grid_csv(result, split_dir / GRID_FILE_TEMPLATE.format(method=method, alpha=alpha))

    try:
        (split_dir / REGRESSION_FILE).write_text(json.dumps(state["regression"], indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {split_dir / REGRESSION_FILE}: {e}") from e

    log(f"✓ Saved: {state['split_kind']} → {split_dir} ({len(rows)} interval sets)")
    return {
        "timings": {**state["timings"], "save": time.perf_counter() - started},
        "status": "saved",
    }
