"""
The four dataset-splitting strategies: Random, ColdDrug, ColdProtein, DoubleCold.

All strategies draw from numpy's PCG64 generator seeded with the strategy
seed, so a (table, seed) pair reproduces the same split on every platform.
Row index sets are returned sorted ascending.
"""

import json
from pathlib import Path

import numpy as np
import pydantic

from src.core import InteractionTable
from src.errors import ArtifactIOError, DegenerateInputError, InfeasibleSplitError
from src.logger import log
from src.models import SplitResult, SplitStrategy

SPLIT_FILES = {"train": "train_rows.txt", "cal": "cal_rows.txt", "test": "test_rows.txt"}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _halve(pool: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # cal takes the extra element on odd counts
    n_cal = (len(pool) + 1) // 2
    return pool[:n_cal], pool[n_cal:]


def _result(train, cal, test, strategy: SplitStrategy, discarded: int = 0) -> SplitResult:
    return SplitResult(
        train_rows=sorted(int(i) for i in train),
        cal_rows=sorted(int(i) for i in cal),
        test_rows=sorted(int(i) for i in test),
        strategy=strategy,
        discarded=discarded,
    )


def split_random(table: InteractionTable, seed: int) -> SplitResult:
    """
    Interaction-level 50/25/25 split.

    Args:
        table: Interactions to split (at least 4 rows)
        seed: RNG seed

    Returns:
        SplitResult with |train| = floor(n/2); cal and test halve the rest
    """
    n = len(table)
    if n < 4:
        raise DegenerateInputError(f"random split needs at least 4 rows, got {n}")
    perm = make_rng(seed).permutation(n)
    n_train = n // 2
    cal, test = _halve(perm[n_train:])
    return _result(perm[:n_train], cal, test, SplitStrategy(kind="Random", seed=seed))


def split_cold_entity(table: InteractionTable, kind: str, seed: int) -> SplitResult:
    """
    Entity-level split: no drug (or protein) appears in two subsets.

    Half of the unique entities (floor) go to training; the rest are shuffled and
    halved into calibration and test entities. The opposite side may be shared.
    """
    index = table.drug_index if kind == "Drug" else table.protein_index
    entities = sorted(index)
    if len(entities) < 4:
        raise DegenerateInputError(f"cold {kind.lower()} split needs at least 4 unique entities, got {len(entities)}")

    rng = make_rng(seed)
    order = rng.permutation(len(entities))
    n_train = len(entities) // 2
    cal_ent, test_ent = _halve(order[n_train:])

    def rows_of(positions) -> np.ndarray:
        if len(positions) == 0:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([index[entities[i]] for i in positions])

    strategy = SplitStrategy(kind="ColdDrug" if kind == "Drug" else "ColdProtein", seed=seed)
    return _result(rows_of(order[:n_train]), rows_of(cal_ent), rows_of(test_ent), strategy)


def double_cold_partition(table: InteractionTable, train_drugs, train_proteins) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Rows whose drug and protein are both in the training pools, rows with
    neither, and the count of mixed rows that belong to no subset.
    """
    drug_in = np.isin(table.drug_ids, list(train_drugs))
    protein_in = np.isin(table.protein_ids, list(train_proteins))
    train = np.flatnonzero(drug_in & protein_in)
    held_out = np.flatnonzero(~drug_in & ~protein_in)
    return train, held_out, len(table) - len(train) - len(held_out)


def split_double_cold(table: InteractionTable, seed: int) -> SplitResult:
    """
    New drug-protein split: cal/test pairs share no drug and no protein with training.

    Rows mixing a training entity with a held-out entity are discarded; the
    discard count is kept in the result's provenance.
    """
    drugs, proteins = table.unique_drugs(), table.unique_proteins()
    if len(drugs) < 4 or len(proteins) < 4:
        raise DegenerateInputError(
            f"double-cold split needs at least 4 unique drugs and 4 unique proteins, "
            f"got {len(drugs)} and {len(proteins)}")

    rng = make_rng(seed)
    drug_order = rng.permutation(len(drugs))
    protein_order = rng.permutation(len(proteins))
    train_drugs = {drugs[i] for i in drug_order[: len(drugs) // 2]}
    train_proteins = {proteins[i] for i in protein_order[: len(proteins) // 2]}

    train, held_out, discarded = double_cold_partition(table, train_drugs, train_proteins)

    held_out = held_out[rng.permutation(len(held_out))]
    cal, test = _halve(held_out)
    if len(train) == 0 or len(cal) == 0 or len(test) == 0:
        raise InfeasibleSplitError(
            f"double-cold split with seed {seed} left an empty subset "
            f"(train={len(train)}, cal={len(cal)}, test={len(test)}); try a new seed")
    if discarded:
        log(f"  Double-cold split discarded {discarded}/{len(table)} mixed rows")
    return _result(train, cal, test, SplitStrategy(kind="DoubleCold", seed=seed), discarded)


def split_table(table: InteractionTable, strategy: SplitStrategy) -> SplitResult:
    """Dispatch on the strategy kind."""
    if strategy.kind == "Random":
        result = split_random(table, strategy.seed)
    elif strategy.kind == "ColdDrug":
        result = split_cold_entity(table, "Drug", strategy.seed)
    elif strategy.kind == "ColdProtein":
        result = split_cold_entity(table, "Protein", strategy.seed)
    else:
        result = split_double_cold(table, strategy.seed)
    if not (result.train_rows and result.cal_rows and result.test_rows):
        raise InfeasibleSplitError(f"{strategy.kind} split with seed {strategy.seed} left an empty subset; try a new seed")
    return result


def write_split(result: SplitResult, out_dir) -> None:
    """Three row-index files plus a JSON provenance blob."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, rows in (("train", result.train_rows), ("cal", result.cal_rows), ("test", result.test_rows)):
            (out_dir / SPLIT_FILES[name]).write_text("".join(f"{i}\n" for i in rows))
        provenance = {
            "strategy": result.strategy.kind,
            "seed": result.strategy.seed,
            "sizes": result.sizes(),
            "discarded": result.discarded,
        }
        (out_dir / "split.json").write_text(json.dumps(provenance, indent=2) + "\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write split to {out_dir}: {e}") from e


def read_split(split_dir) -> SplitResult:
    split_dir = Path(split_dir)
    try:
        provenance = json.loads((split_dir / "split.json").read_text())
        rows = {
            name: [int(line) for line in (split_dir / fname).read_text().split()]
            for name, fname in SPLIT_FILES.items()
        }
    except (OSError, ValueError) as e:
        raise ArtifactIOError(f"cannot read split from {split_dir}: {e}") from e
    try:
        return SplitResult(
            train_rows=rows["train"], cal_rows=rows["cal"], test_rows=rows["test"],
            strategy=SplitStrategy(kind=provenance["strategy"], seed=provenance["seed"]),
            discarded=provenance.get("discarded", 0),
        )
    except (KeyError, TypeError, AttributeError, pydantic.ValidationError) as e:
        raise ArtifactIOError(f"malformed {split_dir / 'split.json'}: {e!r}") from e
