import argparse
import sys
from pathlib import Path

import pandas as pd

from settings import MANIFEST_FILE, RELIABILITY_FILE
from src.errors import ArtifactIOError, CoverageLensError, ValidationError

SUMMARY_FILE = "summary.csv"
REQUIRED_FIELDS = ["split", "method", "alpha", "seed", "coverage", "mean_width", "combined_macg"]


def load_summaries(run_dir) -> pd.DataFrame:
    """Concatenate every summary.csv under a run directory (one per seed and split)."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ArtifactIOError(f"{run_dir} not found. Run the pipeline first:\n"
                              f"  python main.py run --config experiment.json --seed 0")

    files = sorted(run_dir.rglob(SUMMARY_FILE))
    if not files:
        raise ArtifactIOError(f"no {SUMMARY_FILE} under {run_dir}; the run may have stopped before saving")

    frames = []
    for path in files:
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ArtifactIOError(f"malformed summary {path}: {e}") from e
        missing = [f for f in REQUIRED_FIELDS if f not in frame.columns]
        if missing:
            raise ValidationError(f"{path} is missing fields: {', '.join(missing)}")
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def _reliability_gaps(run_dir: Path) -> pd.DataFrame:
    files = sorted(run_dir.rglob(RELIABILITY_FILE))
    if not files:
        return pd.DataFrame()
    curve = pd.concat([pd.read_csv(f) for f in files], ignore_index=True)
    curve["gap"] = curve["observed"] - curve["expected"]
    return curve.groupby(["split", "method"], sort=True)["gap"].agg(["mean", "min"]).reset_index()


def report_run(run_dir) -> pd.DataFrame:
    """
    Print a per-(split, method, alpha) summary of a finished run.

    Returns:
        The table that was printed (means over seeds)
    """
    run_dir = Path(run_dir)
    summaries = load_summaries(run_dir)
    n_seeds = summaries["seed"].nunique()

    table = (summaries
             .groupby(["split", "method", "alpha"], sort=True)[["coverage", "mean_width", "combined_macg"]]
             .mean()
             .reset_index())

    print(f"\n{'═' * 72}")
    print(f"RUN SUMMARY - {run_dir}")
    print(f"({len(summaries)} reports, {n_seeds} seed(s))")
    print(f"{'═' * 72}")

    for split, group in table.groupby("split", sort=True):
        print(f"\n{'─' * 72}")
        print(f"{split}")
        print(f"{'─' * 72}")
        print(f"  {'method':<8} {'alpha':>6} {'coverage':>9} {'target':>7} {'width':>9} {'MACG':>8}")
        for row in group.itertuples(index=False):
            flag = "" if row.coverage >= 1.0 - row.alpha else "  below target"
            print(f"  {row.method:<8} {row.alpha:>6g} {row.coverage:>9.4f} {1.0 - row.alpha:>7.2f} "
                  f"{row.mean_width:>9.4f} {row.combined_macg:>8.4f}{flag}")

    gaps = _reliability_gaps(run_dir)
    if not gaps.empty:
        print(f"\n{'─' * 72}")
        print("RELIABILITY (observed - expected coverage over alphas)")
        print(f"{'─' * 72}")
        for row in gaps.itertuples(index=False):
            print(f"  {row.split:<12} {row.method:<8} mean {row.mean:+.4f}, worst {row.min:+.4f}")

    manifest = run_dir / MANIFEST_FILE
    if manifest.exists():
        from src.graph import read_manifest
        chosen = {k: v for k, v in read_manifest(manifest).chosen.items() if v}
        if chosen:
            print(f"\n{'─' * 72}")
            print("CLUSTER SETTINGS")
            print(f"{'─' * 72}")
            for key, methods in sorted(chosen.items()):
                for method, per_alpha in sorted(methods.items()):
                    for alpha, setting in sorted(per_alpha.items(), key=lambda item: float(item[0])):
                        print(f"  {key:<20} {method:<8} alpha={alpha:<6} gamma={setting['gamma']}, K={setting['k']}")

    return table


if __name__ == "__main__":
    parser = argparse.ArgumentParser(
        description="Summarize coverage, width and MACG of a finished run.",
        epilog="""
Examples:
  python analyze.py                  # Analyzes runs/latest (default)
  python analyze.py runs/cold_drug   # Analyzes another run directory
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    parser.add_argument(
        'run_dir',
        nargs='?',
        default='runs/latest',
        help='Run directory written by `main.py run` (default: runs/latest)'
    )

    args = parser.parse_args()
    try:
        report_run(args.run_dir)
    except CoverageLensError as e:
        print(f"Error: {e}")
        sys.exit(e.exit_code)
