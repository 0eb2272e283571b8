import hashlib
import platform
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Callable, Optional

import pandas as pd
import pydantic
from langgraph.graph import StateGraph, START, END

from settings import MANIFEST_FILE
from src import __version__
from src.core import load_features, load_interactions, write_frame
from src.errors import ArtifactIOError, CoverageLensError, StageError
from src.logger import log
from src.models import ExperimentConfig, ExperimentState, RunManifest
from src.synthetic import generate_synthetic
from nodes.prepare import prepare
from nodes.predict import predict
from nodes.calibrate import calibrate
from nodes.evaluate import evaluate
from nodes.save import save

AGGREGATE_FILE = "aggregate.csv"
AGGREGATE_METRICS = ["coverage", "mean_width", "macg_drug", "macg_protein", "combined_macg"]


def _stage(name: str, node: Callable, artifact: Callable[[ExperimentState], str]) -> Callable:
    """Re-raise node failures as StageError naming the stage and the artifact it was working on."""
    def run(state: ExperimentState) -> dict:
        try:
            return node(state)
        except StageError:
            raise
        except (CoverageLensError, OSError, pydantic.ValidationError) as e:
            raise StageError(name, artifact(state), e) from e
    return run


def _split_dir(state: ExperimentState) -> str:
    return str(Path(state["output_dir"]) / state["split_kind"])


def _data_source(state: ExperimentState) -> str:
    return state["config"].data.interactions or "synthetic data"


def _predictions_source(state: ExperimentState) -> str:
    predictor = state["config"].predictor
    return predictor.predictions_path if predictor.kind == "external" else "builtin gradient boosting"


def create_graph(save_artifacts: bool = True):
    """
    Create the experiment pipeline graph.

    Args:
        save_artifacts: If True, runs prepare → predict → calibrate → evaluate → save.
                        If False, stops after evaluate and writes nothing.
    """
    workflow = StateGraph(ExperimentState)

    workflow.add_node("prepare", _stage("prepare", prepare, _data_source))
    workflow.add_node("predict", _stage("predict", predict, _predictions_source))
    workflow.add_node("calibrate", _stage("calibrate", calibrate, _split_dir))
    workflow.add_node("evaluate", _stage("evaluate", evaluate, _split_dir))

    workflow.add_edge(START, "prepare")
    workflow.add_edge("prepare", "predict")
    workflow.add_edge("predict", "calibrate")
    workflow.add_edge("calibrate", "evaluate")

    if save_artifacts:
        workflow.add_node("save", _stage("save", save, _split_dir))
        workflow.add_edge("evaluate", "save")
        workflow.add_edge("save", END)
    else:
        workflow.add_edge("evaluate", END)

    # No checkpointer: state holds numpy arrays and tables, and nothing interrupts
    return workflow.compile()


def load_inputs(config: ExperimentConfig) -> tuple:
    """
    Resolve the configured data source.

    Returns:
        (InteractionTable, drug FeatureTable or None, protein FeatureTable or None, fingerprints)
    """
    data = config.data
    if data.interactions is None:
        synthetic = generate_synthetic(data.synthetic)
        fingerprints = {"interactions": synthetic.table.fingerprint(), "source": "synthetic"}
        return synthetic.table, synthetic.drug_features, synthetic.protein_features, fingerprints

    try:
        table = load_interactions(data.interactions)
        drug_features = load_features(data.drug_features, "Drug") if data.drug_features else None
        protein_features = load_features(data.protein_features, "Protein") if data.protein_features else None
    except CoverageLensError as e:
        raise StageError("load", data.interactions, e) from e

    fingerprints = {"interactions": table.fingerprint()}
    for key, path in (("drug_features", data.drug_features), ("protein_features", data.protein_features)):
        if path:
            fingerprints[key] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return table, drug_features, protein_features, fingerprints


def initial_state(config: ExperimentConfig, seed: int, split_kind: str, output_dir: str,
                  table, drug_features, protein_features) -> ExperimentState:
    return {
        "config": config,
        "seed": seed,
        "split_kind": split_kind,
        "output_dir": output_dir,
        "table": table,
        "drug_features": drug_features,
        "protein_features": protein_features,
        "split": None,
        "train": None,
        "cal": None,
        "test": None,
        "test_labels": None,
        "transforms": None,
        "regression": None,
        "intervals": None,
        "clusters": None,
        "grids": None,
        "chosen": None,
        "reports": None,
        "reliability": None,
        "timings": {},
        "status": "pending",
    }


def _versions() -> dict:
    versions = {"coveragelens": __version__, "python": platform.python_version()}
    for package in ("numpy", "pandas", "scipy", "pydantic", "langgraph"):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()


def aggregate_summary(rows: list[dict]) -> pd.DataFrame:
    """Mean and standard deviation over seeds per (split, method, alpha)."""
    frame = pd.DataFrame(rows)
    grouped = frame.groupby(["split", "method", "alpha"], sort=True)[AGGREGATE_METRICS]
    stats = grouped.agg(["mean", "std"])
    stats.columns = [f"{metric}_{stat}" for metric, stat in stats.columns]
    stats.insert(0, "n_seeds", grouped.size())
    return stats.reset_index()


def run_experiment(config: ExperimentConfig, graph=None) -> tuple[RunManifest, list[dict]]:
    """
    Run the pipeline for every (seed, split) and write the run manifest.

    With n_seeds > 1, each seed writes under output_dir/seed=<s>/ and an
    aggregate.csv summarizes all seeds.

    Returns:
        (RunManifest, flat summary rows across seeds and splits)
    """
    graph = graph or create_graph()
    output_dir = Path(config.output_dir)
    table, drug_features, protein_features, fingerprints = load_inputs(config)
    log(f"Loaded {len(table)} interactions, {len(table.unique_drugs())} drugs, "
        f"{len(table.unique_proteins())} proteins")

    seeds = [config.seed + i for i in range(config.n_seeds)]
    timings, discarded, chosen, transforms = {}, {}, {}, {}
    rows = []

    for seed in seeds:
        seed_dir = output_dir / f"seed={seed}" if config.n_seeds > 1 else output_dir
        for split_kind in config.splits:
            key = f"seed={seed}/{split_kind}" if config.n_seeds > 1 else split_kind
            log(f"\n[{key}]")
            started = time.perf_counter()
            state = initial_state(config, seed, split_kind, str(seed_dir), table, drug_features, protein_features)
            result = graph.invoke(state)

            timings[key] = time.perf_counter() - started
            for stage, seconds in result["timings"].items():
                timings[f"{key}:{stage}"] = seconds
            discarded[key] = result["split"].discarded
            chosen[key] = result["chosen"] or {}
            transforms[key] = result["transforms"] or []
            for entry in result["reports"]:
                report = entry["report"]
                rows.append({
                    "split": split_kind, "method": entry["method"], "alpha": entry["alpha"], "seed": seed,
                    "coverage": report["coverage"].coverage,
                    "mean_width": report["coverage"].mean_width,
                    "macg_drug": report["macg_drug"].macg,
                    "macg_protein": report["macg_protein"].macg,
                    "combined_macg": report["combined_macg"],
                    "rmse": result["regression"]["rmse"],
                    "r2": result["regression"]["r2"],
                })

    if config.n_seeds > 1:
        write_frame(aggregate_summary(rows), output_dir / AGGREGATE_FILE)

    manifest = RunManifest(
        config_hash=config_hash(config),
        config=config.model_dump(mode="json", by_alias=True),
        data_fingerprints=fingerprints,
        versions=_versions(),
        timings=timings,
        discarded=discarded,
        chosen=chosen,
        transforms=transforms,
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    write_manifest(manifest, output_dir / MANIFEST_FILE)
    return manifest, rows


def write_manifest(manifest: RunManifest, path) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(manifest.model_dump_json(indent=2) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write manifest {path}: {e}") from e


def read_manifest(path) -> Optional[RunManifest]:
    path = Path(path)
    if not path.exists():
        return None
    return RunManifest.model_validate_json(path.read_text())
