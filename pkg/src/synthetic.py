"""
Synthetic bipartite drug x protein data with per-entity noise clusters.

label(d, t) = <u_d, v_t> + eps, eps ~ Normal(0, sigma_d * sigma_t), where each
entity's sigma comes from the noise cluster it was drawn into. Feature vectors
are the latent vector plus independent noise, padded with noise-only columns.
"""

from dataclasses import dataclass

import numpy as np

from src.core import FeatureTable, InteractionTable
from src.errors import DegenerateInputError
from src.models import NoiseCluster, SyntheticSpec
from src.splits import make_rng

MIN_ROWS = 8


@dataclass(frozen=True)
class SyntheticData:
    table: InteractionTable
    drug_features: FeatureTable
    protein_features: FeatureTable
    # generating noise cluster per entity id (ground truth for purity checks)
    drug_noise_group: dict
    protein_noise_group: dict


def _noise_groups(n: int, clusters: list[NoiseCluster], rng: np.random.Generator) -> np.ndarray:
    counts = [int(np.floor(c.fraction * n)) for c in clusters]
    counts[-1] = n - sum(counts[:-1])
    groups = np.repeat(np.arange(len(clusters)), counts)
    return groups[rng.permutation(n)]


def _features(latent: np.ndarray, dim: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    padded = np.zeros((latent.shape[0], dim))
    padded[:, : latent.shape[1]] = latent
    return padded + noise * rng.standard_normal(padded.shape)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """
    Draw a synthetic interaction table and feature tables.

    Draw order from one PCG64 stream: drug latents, protein latents, drug
    noise groups, protein noise groups, pair mask, label noise, drug features,
    protein features. The same spec always yields the same data.
    """
    rng = make_rng(spec.seed)
    u = rng.standard_normal((spec.n_drugs, spec.latent_dim))
    v = rng.standard_normal((spec.n_proteins, spec.latent_dim))
    drug_group = _noise_groups(spec.n_drugs, spec.drug_noise_clusters, rng)
    protein_group = _noise_groups(spec.n_proteins, spec.protein_noise_clusters, rng)
    drug_sigma = np.asarray([c.noise_scale for c in spec.drug_noise_clusters])[drug_group]
    protein_sigma = np.asarray([c.noise_scale for c in spec.protein_noise_clusters])[protein_group]

    keep = rng.random((spec.n_drugs, spec.n_proteins)) < spec.density
    d_idx, t_idx = np.nonzero(keep)
    if len(d_idx) < MIN_ROWS:
        raise DegenerateInputError(
            f"density {spec.density} on {spec.n_drugs}x{spec.n_proteins} gave {len(d_idx)} rows; need at least {MIN_ROWS}")

    signal = np.einsum("ij,ij->i", u[d_idx], v[t_idx])
    labels = signal + rng.standard_normal(len(d_idx)) * drug_sigma[d_idx] * protein_sigma[t_idx]

    drug_ids = [f"D{i:04d}" for i in range(spec.n_drugs)]
    protein_ids = [f"P{j:04d}" for j in range(spec.n_proteins)]
    table = InteractionTable.from_arrays(
        [drug_ids[i] for i in d_idx], [protein_ids[j] for j in t_idx], labels)
    drug_features = FeatureTable("Drug", drug_ids, _features(u, spec.feature_dim_drug, spec.feature_noise, rng))
    protein_features = FeatureTable("Protein", protein_ids,
                                    _features(v, spec.feature_dim_protein, spec.feature_noise, rng))
    return SyntheticData(
        table=table,
        drug_features=drug_features,
        protein_features=protein_features,
        drug_noise_group=dict(zip(drug_ids, drug_group.tolist())),
        protein_noise_group=dict(zip(protein_ids, protein_group.tolist())),
    )
