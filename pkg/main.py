import json
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

import pydantic

from settings import (
    DRUG_FEATURES_FILE, GRID_FILE_TEMPLATE, INTERACTIONS_FILE, INTERVALS_FILE, PROTEIN_FEATURES_FILE,
    TUNING_HOLDOUT_FRACTION,
)
from src.ccp import NeighborPool, calibrate_ccp, predict_intervals_ccp
from src.clustering import binarize_features
from src.conformal import (
    build_group_calibration, load_calibration, predict_intervals_gcp, predict_intervals_mcp, read_intervals,
    save_calibration, conformal_quantile, write_intervals,
)
from src.core import InteractionTable, load_features, load_interactions, pair_features, write_features, write_table
from src.errors import ArtifactIOError, ConfigError, CoverageLensError, ValidationError
from src.evalx import (
    evaluate_intervals, grid_search, tuning_holdout, write_grid_csv, write_report_json,
)
from src.graph import run_experiment
from src.logger import log, log_session_end, log_session_start, set_log_file
from src.models import (
    METHODS, SPLIT_KINDS, CalibrationArtifact, CcpConfig, ExperimentConfig, GbmConfig,
    SplitStrategy, SyntheticSpec, TuningConfig,
)
from src.predictor import (
    attach_external_predictions, fit_gbm, predict, regression_metrics, save_model, write_predictions,
)
from src.splits import read_split, split_table, write_split
from src.synthetic import generate_synthetic

CCP_METHODS = {"CCP-NC": "NC", "CCP-FC": "FC"}

# Optional sections filled with their defaults when an override reaches into them
OPTIONAL_SECTIONS = {"tuning": TuningConfig}


# --- Config loading ---

def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def apply_overrides(config: dict, extras: list[str]) -> dict:
    """
    Apply `--key value` pairs to a config dict.

    Dotted keys reach nested fields (--predictor.gbm.n_stages 50); dashes in a
    key read as underscores; values are parsed as JSON when possible.
    """
    if len(extras) % 2:
        raise ConfigError(f"overrides must come in --key value pairs, got {extras}")
    for flag, raw in zip(extras[::2], extras[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"expected an override flag, got '{flag}'")
        path = flag[2:].replace("-", "_").split(".")
        node = config
        for part in path[:-1]:
            if part not in node:
                raise ConfigError(f"unknown config key '{flag[2:]}'")
            if node[part] is None:
                section = OPTIONAL_SECTIONS.get(part)
                node[part] = section().model_dump(mode="json") if section else {}
            node = node[part]
            if not isinstance(node, dict):
                raise ConfigError(f"config key '{part}' is not a section")
        if path[-1] not in node:
            raise ConfigError(f"unknown config key '{flag[2:]}'")
        node[path[-1]] = _parse_value(raw)
    return config


def load_config(path: str, extras: list[str], seed: int) -> ExperimentConfig:
    """Read the JSON config, fill defaults, apply overrides and the mandatory seed."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ArtifactIOError(f"cannot read config {path}: {e}") from e
    except ValueError as e:
        raise ValidationError(f"invalid JSON in {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ValidationError(f"{path} must contain a JSON object")
    full = ExperimentConfig.model_validate(raw).model_dump(mode="json", by_alias=True)
    full = apply_overrides(full, extras)
    full["seed"] = seed
    return ExperimentConfig.model_validate(full)


# --- Subcommands ---

def cmd_synth(args) -> None:
    spec = SyntheticSpec()
    if args.spec:
        spec = SyntheticSpec.model_validate_json(Path(args.spec).read_text())
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    data = generate_synthetic(spec)
    out = Path(args.out)
    write_table(data.table, out / INTERACTIONS_FILE)
    write_features(data.drug_features, out / DRUG_FEATURES_FILE)
    write_features(data.protein_features, out / PROTEIN_FEATURES_FILE)
    log(f"✓ Wrote {len(data.table)} interactions, {len(data.drug_features.ids)} drugs, "
        f"{len(data.protein_features.ids)} proteins to {out}")


def cmd_split(args) -> None:
    table = load_interactions(args.interactions)
    result = split_table(table, SplitStrategy(kind=args.strategy, seed=args.seed))
    write_split(result, args.out)
    sizes = result.sizes()
    log(f"✓ {args.strategy} split: train={sizes['train']}, cal={sizes['cal']}, test={sizes['test']}, "
        f"discarded={result.discarded} → {args.out}")


def cmd_fit(args) -> None:
    table = load_interactions(args.interactions)
    split = read_split(args.split)
    drug_features = load_features(args.drug_features, "Drug")
    protein_features = load_features(args.protein_features, "Protein")
    config = GbmConfig(n_stages=args.n_stages, learning_rate=args.learning_rate, max_depth=args.max_depth,
                       min_samples_leaf=args.min_samples_leaf)

    train = table.take(split.train_rows)
    model = fit_gbm(pair_features(train, drug_features, protein_features), train.labels, config)
    save_model(model, args.model)
    log(f"✓ Fitted {len(model.trees)} stages on {len(train)} rows → {args.model}")

    if args.predictions:
        predicted = table.with_predictions(predict(model, pair_features(table, drug_features, protein_features)))
        write_predictions(predicted, args.predictions)
        test = predicted.take(split.test_rows)
        metrics = regression_metrics(test.labels, test.predictions)
        log(f"  Test RMSE={metrics['rmse']:.4f}, R2={metrics['r2']:.4f} ({metrics['n']} rows)")
        log(f"✓ Predictions for all {len(table)} rows → {args.predictions}")


def cmd_attach_preds(args) -> None:
    table = load_interactions(args.interactions)
    table = attach_external_predictions(table, args.predictions, overwrite=args.overwrite)
    write_table(table, args.out)
    log(f"✓ Attached predictions to {len(table)} rows → {args.out}")


def _split_tables(args):
    table = load_interactions(args.interactions)
    split = read_split(args.split)
    return table.take(split.cal_rows), table.take(split.test_rows)


def _optional_features(args):
    drug = load_features(args.drug_features, "Drug") if args.drug_features else None
    protein = load_features(args.protein_features, "Protein") if args.protein_features else None
    return drug, protein


def cmd_calibrate(args) -> None:
    cal, _ = _split_tables(args)
    artifact = CalibrationArtifact(method=args.method, alpha=args.alpha, n_neighbors=args.n_neighbors)
    if args.method in CCP_METHODS:
        drug_features, protein_features = _optional_features(args)
        config = CcpConfig(method=CCP_METHODS[args.method], gamma=args.gamma, n_clusters=args.k,
                           n_neighbors=args.n_neighbors, alpha=args.alpha, seed=args.seed,
                           pooling=args.pooling, allow_any_gamma=args.allow_any_gamma)
        artifact.ccp = calibrate_ccp(cal, config, drug_features, protein_features)
    else:
        artifact.group = build_group_calibration(cal, args.alpha)
    save_calibration(artifact, args.out)
    log(f"✓ {args.method} calibrated at alpha={args.alpha} on {len(cal)} rows → {args.out}")


def cmd_predict_intervals(args) -> None:
    artifact = load_calibration(args.calibration)
    _, test = _split_tables(args)
    test = test.without_labels()
    drug_features, protein_features = _optional_features(args)

    if artifact.method == "MCP":
        batch = predict_intervals_mcp(test, conformal_quantile(artifact.group.global_scores, artifact.alpha))
    elif artifact.method == "GCP":
        batch = predict_intervals_gcp(test, artifact.group)
    elif artifact.method == "CCP-NN":
        if drug_features is None or protein_features is None:
            raise ConfigError("CCP-NN needs --drug-features and --protein-features")
        pool = NeighborPool.from_calibration(artifact.group, binarize_features(drug_features),
                                             binarize_features(protein_features), artifact.n_neighbors)
        batch = predict_intervals_ccp(test, pool=pool, alpha=artifact.alpha)
    else:
        batch = predict_intervals_ccp(test, model=artifact.ccp, drug_features=drug_features,
                                      protein_features=protein_features)
    write_intervals(batch, test, artifact.method, artifact.alpha, args.out)
    log(f"✓ {len(batch)} {artifact.method} intervals → {args.out}")


def cmd_evaluate(args) -> None:
    frame, batch = read_intervals(args.intervals)
    if frame.empty:
        raise ValidationError(f"{args.intervals} has no intervals")
    alphas = frame["alpha"].unique()
    if len(alphas) != 1:
        raise ValidationError(f"{args.intervals} mixes alpha levels {sorted(alphas)}")
    table = load_interactions(args.interactions)
    label_of = dict(zip(zip(table.drug_ids, table.protein_ids), table.labels))
    keys = list(zip(frame["drug_id"], frame["protein_id"]))
    missing = [k for k in keys if k not in label_of]
    if missing:
        raise ValidationError(f"no label for {len(missing)} interval rows, first: {missing[:10]}")

    rows = InteractionTable.from_arrays(frame["drug_id"], frame["protein_id"], [label_of[k] for k in keys],
                                        batch.prediction)
    report = evaluate_intervals(batch, rows, rows.labels, float(alphas[0]), args.min_subgroup_size,
                                ddof=args.ddof)
    write_report_json(report, args.out)
    cov = report["coverage"]
    log(f"✓ coverage={cov.coverage:.4f}, mean width={cov.mean_width:.4f}, "
        f"combined MACG={report['combined_macg']:.4f} → {args.out}")


def cmd_tune(args) -> None:
    cal, test = _split_tables(args)
    drug_features, protein_features = _optional_features(args)
    if args.evaluation == "holdout":
        fit_rows, holdout_rows = tuning_holdout(len(cal), TUNING_HOLDOUT_FRACTION, args.seed)
        fit_table, eval_table = cal.take(fit_rows), cal.take(holdout_rows)
    else:
        fit_table, eval_table = cal, test
    out_dir = Path(args.out)
    for alpha in args.alphas:
        result = grid_search(fit_table, eval_table, eval_table.labels, CCP_METHODS[args.method], alpha,
                             seed=args.seed, drug_features=drug_features, protein_features=protein_features)
        target = out_dir / GRID_FILE_TEMPLATE.format(method=args.method, alpha=alpha)
        write_grid_csv(result, target)
        log(f"✓ {args.method} alpha={alpha:g}: best gamma={result.best_gamma}, K={result.best_k}, "
            f"combined MACG={result.objective:.4f} ({len(result.evaluated)} cells) → {target}")


def cmd_report(args) -> None:
    from analyze import report_run
    report_run(args.run_dir)


def cmd_run(args, extras: list[str]) -> None:
    config = load_config(args.config, extras, args.seed)
    output_dir = Path(config.output_dir)
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"cannot create output directory {output_dir}: {e}") from e
    set_log_file(output_dir / "run.log")

    log(f"Splits: {', '.join(config.splits)}")
    log(f"Methods: {', '.join(config.methods)}")
    log(f"Alphas: {', '.join(str(a) for a in config.alphas)}")
    manifest, rows = run_experiment(config)

    log(f"\n{'═' * 60}")
    log(f"Done! {len(rows)} reports written to {output_dir}")
    log(f"Config hash: {manifest.config_hash[:12]}")
    log(f"{'═' * 60}")


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(
        description="Conformal prediction intervals for drug-target interaction regression",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Full pipeline from a config file
  python main.py run --config experiment.json --seed 0

  # Override config fields on the command line
  python main.py run --config experiment.json --seed 1 --alphas "[0.05, 0.1]" --predictor.gbm.n_stages 100

  # Step by step
  python main.py synth --out data
  python main.py split --interactions data/interactions.csv --strategy ColdDrug --seed 0 --out split
  python main.py fit --interactions data/interactions.csv --split split \\
      --drug-features data/drug_features.csv --protein-features data/protein_features.csv \\
      --model gbm.json --predictions preds.csv
  python main.py attach-preds --interactions data/interactions.csv --predictions preds.csv --out scored.csv
  python main.py calibrate --interactions scored.csv --split split --method GCP --alpha 0.1 --out gcp.json
  python main.py predict-intervals --calibration gcp.json --interactions scored.csv --split split --out intervals.csv
  python main.py evaluate --intervals intervals.csv --interactions scored.csv --out coverage.json

  # Summarize a finished run
  python main.py report runs/latest

Exit codes: 0 ok, 2 validation error, 3 infeasible split, 4 I/O error
        """
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic interaction dataset")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--spec", help="SyntheticSpec JSON file (default: built-in spec)")
    p.add_argument("--seed", type=int, help="Override the SyntheticSpec seed")

    p = sub.add_parser("split", help="Split interactions into train/calibration/test rows")
    p.add_argument("--interactions", required=True)
    p.add_argument("--strategy", required=True, choices=SPLIT_KINDS)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="Directory for the row-index files")

    p = sub.add_parser("fit", help="Fit the gradient boosting predictor on the training rows")
    p.add_argument("--interactions", required=True)
    p.add_argument("--split", required=True, help="Directory written by the split subcommand")
    p.add_argument("--drug-features", required=True)
    p.add_argument("--protein-features", required=True)
    p.add_argument("--model", required=True, help="Output model JSON")
    p.add_argument("--predictions", help="Also write predictions for every row to this CSV")
    p.add_argument("--n-stages", type=int, default=GbmConfig().n_stages)
    p.add_argument("--learning-rate", type=float, default=GbmConfig().learning_rate)
    p.add_argument("--max-depth", type=int, default=GbmConfig().max_depth)
    p.add_argument("--min-samples-leaf", type=int, default=GbmConfig().min_samples_leaf)

    p = sub.add_parser("attach-preds", help="Attach external predictions to an interactions CSV")
    p.add_argument("--interactions", required=True)
    p.add_argument("--predictions", required=True, help="CSV with drug_id,protein_id,prediction")
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true", help="Replace predictions already in the table")

    for name, help_text in (("calibrate", "Calibrate one method at one alpha"),
                            ("predict-intervals", "Build intervals for the test rows")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--interactions", required=True, help="Interactions CSV with predictions")
        p.add_argument("--split", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--drug-features")
        p.add_argument("--protein-features")
        if name == "calibrate":
            p.add_argument("--method", required=True, choices=METHODS)
            p.add_argument("--alpha", type=float, required=True)
            p.add_argument("--gamma", type=float, default=0.5)
            p.add_argument("--k", type=int, default=5, help="Number of clusters (CCP-NC/FC)")
            p.add_argument("--n-neighbors", type=int, default=20, help="Neighbors per side (CCP-NN)")
            p.add_argument("--pooling", choices=["union", "intersection"], default="union")
            p.add_argument("--allow-any-gamma", action="store_true")
            p.add_argument("--seed", type=int, default=0)
        else:
            p.add_argument("--calibration", required=True, help="JSON written by the calibrate subcommand")

    p = sub.add_parser("evaluate", help="Coverage, width and MACG of an intervals CSV")
    p.add_argument("--intervals", required=True, help=f"CSV as written to {INTERVALS_FILE}")
    p.add_argument("--interactions", required=True, help="Interactions CSV holding the true labels")
    p.add_argument("--out", required=True)
    p.add_argument("--min-subgroup-size", type=int, default=1)
    p.add_argument("--ddof", type=int, default=0, help="0: population std of gaps, 1: sample std")

    p = sub.add_parser("tune", help="Grid-search (gamma, K) for CCP-NC or CCP-FC")
    p.add_argument("--interactions", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--method", required=True, choices=list(CCP_METHODS))
    p.add_argument("--alphas", type=float, nargs="+", default=[0.1])
    p.add_argument("--evaluation", choices=["holdout", "test"], default="holdout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Directory for one grid CSV per alpha")
    p.add_argument("--drug-features")
    p.add_argument("--protein-features")

    p = sub.add_parser("report", help="Summarize a run directory")
    p.add_argument("run_dir")

    p = sub.add_parser("run", help="Run the full pipeline from a config file")
    p.add_argument("--config", required=True, help="Experiment JSON (see experiment.json)")
    p.add_argument("--seed", type=int, required=True)

    return parser


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "fit": cmd_fit,
    "attach-preds": cmd_attach_preds,
    "calibrate": cmd_calibrate,
    "predict-intervals": cmd_predict_intervals,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
    "report": cmd_report,
}


def main():
    parser = build_parser()
    args, extras = parser.parse_known_args()
    if extras and args.command != "run":
        parser.error(f"unrecognized arguments: {' '.join(extras)}")

    log_session_start(args.command)
    try:
        if args.command == "run":
            cmd_run(args, extras)
        else:
            COMMANDS[args.command](args)
    except CoverageLensError as e:
        log(f"Error: {e}")
        sys.exit(e.exit_code)
    except pydantic.ValidationError as e:
        log(f"Error: invalid configuration: {e}")
        sys.exit(2)
    except OSError as e:
        log(f"Error: {e}")
        sys.exit(4)
    log_session_end(args.command)


if __name__ == "__main__":
    main()
