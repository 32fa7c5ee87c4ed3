"""
Synthetic flow cytometry cohorts: per-patient Gaussian mixtures over the leaves
of a taxonomy whose centers follow the tree, so sibling populations sit closer
together than populations of different lineages.
"""
from typing import Dict, List, Mapping, Optional

import numpy as np

from fchc.components.data_provider import MARKERS, CellTable
from fchc.components.taxonomy import Taxonomy, get_builtin_taxonomy
from fchc.config.schema import SynthConfig
from fchc.errors import ConfigError, InvalidProportions, UnknownClass
from fchc.utils.utils import log, log_verbose

# spread of the top-level offsets; every level below halves it
CENTER_SPREAD = 3.0
DEPTH_DECAY = 0.5


def leaf_proportions(taxonomy: Taxonomy, proportions: Optional[Mapping[str, float]]) -> np.ndarray:
    """
    Mixture weight of every leaf, in canonical leaf order. Leaves missing from
    `proportions` share the remaining mass equally.
    """
    leaves = taxonomy.leaf_indices
    if not proportions:
        return np.full(len(leaves), 1.0 / len(leaves))

    position = {int(idx): i for i, idx in enumerate(leaves)}
    weights = np.full(len(leaves), np.nan)
    for key, value in proportions.items():
        try:
            ref = taxonomy.resolve(key)
        except UnknownClass as e:
            raise InvalidProportions(f"Proportion given for unknown class '{key}'") from e
        if ref.index not in position:
            raise InvalidProportions(f"Proportion given for '{key}', which is not a leaf")
        if not np.isfinite(value) or value < 0:
            raise InvalidProportions(f"Proportion of '{key}' must be a non-negative number, got {value}")
        weights[position[ref.index]] = float(value)

    given = np.nansum(weights)
    missing = np.isnan(weights)
    if missing.any():
        remainder = 1.0 - given
        if remainder < -1e-9:
            raise InvalidProportions(f"Proportions sum to {given:.6f} > 1")
        weights[missing] = max(remainder, 0.0) / missing.sum()
    elif abs(given - 1.0) > 1e-9:
        raise InvalidProportions(f"Proportions sum to {given:.6f}, expected 1")

    if weights.sum() <= 0:
        raise InvalidProportions("Proportions leave no mass for any leaf")
    return weights / weights.sum()


def informative_mask(n_features: int, informative: Optional[List[int]]) -> np.ndarray:
    mask = np.zeros(n_features, dtype=bool)
    if informative is None:
        mask[:] = True
        return mask
    for i in informative:
        if not 0 <= i < n_features:
            raise ConfigError(f"Informative feature index {i} out of range [0, {n_features})")
        mask[i] = True
    return mask


def leaf_centers(taxonomy: Taxonomy,
                 coupling: float,
                 rng: np.random.Generator,
                 n_features: int = len(MARKERS),
                 mask: Optional[np.ndarray] = None) -> Dict[int, np.ndarray]:
    """
    center = coupling * tree_center + (1 - coupling) * free_center, where the tree
    center sums one offset per ancestor (shrinking with depth) and the free
    center is drawn i.i.d. per leaf.
    """
    offsets = {
        c.index: rng.normal(0.0, CENTER_SPREAD * DEPTH_DECAY ** (c.depth - 1), n_features)
        for c in taxonomy.classes
    }
    centers = {}
    for leaf in taxonomy.leaf_indices:
        tree_center = np.zeros(n_features)
        current = int(leaf)
        while current is not None:
            tree_center += offsets[current]
            current = taxonomy.parent[current]
        free_center = rng.normal(0.0, CENTER_SPREAD, n_features)
        center = coupling * tree_center + (1.0 - coupling) * free_center
        if mask is not None:
            center = np.where(mask, center, 0.0)
        centers[int(leaf)] = center
    return centers


def synth_cohort(cfg: SynthConfig, taxonomy: Optional[Taxonomy] = None) -> List[CellTable]:
    """Generate `cfg.patients` labeled cell tables; identical cfg gives identical tables."""
    taxonomy = taxonomy or get_builtin_taxonomy(cfg.preset)
    weights = leaf_proportions(taxonomy, cfg.proportions)
    n_features = len(MARKERS)
    mask = informative_mask(n_features, cfg.informative_features)

    root_seq = np.random.SeedSequence(cfg.seed)
    center_seq, *patient_seqs = root_seq.spawn(cfg.patients + 1)
    center_rng = np.random.default_rng(center_seq)
    centers = leaf_centers(taxonomy, cfg.coupling, center_rng, n_features, mask)
    leaves = taxonomy.leaf_indices
    scales = {int(leaf): cfg.covariance_scale * center_rng.uniform(0.5, 1.5, n_features) for leaf in leaves}

    tables = []
    width = max(2, len(str(cfg.patients)))
    for p, seq in enumerate(patient_seqs):
        rng = np.random.default_rng(seq)
        shift = rng.normal(0.0, cfg.patient_shift, n_features) if cfg.patient_shift > 0 else np.zeros(n_features)
        counts = rng.multinomial(cfg.cells_per_patient, weights)

        features, labels = [], []
        for leaf, count in zip(leaves, counts):
            if count == 0:
                continue
            leaf = int(leaf)
            features.append(centers[leaf] + shift + rng.normal(0.0, 1.0, (count, n_features)) * scales[leaf])
            labels.extend([taxonomy.display_name(leaf)] * int(count))
        features = np.vstack(features)
        order = rng.permutation(features.shape[0])

        patient_id = f"patient_{p + 1:0{width}d}"
        tables.append(CellTable(patient_id, features[order], np.asarray(labels, dtype=object)[order]))
        log_verbose(f"Synthesized {patient_id}: {features.shape[0]} cells, leaf counts {counts.tolist()}")

    log(f"Synthesized {len(tables)} patients x {cfg.cells_per_patient} cells (seed {cfg.seed}, coupling {cfg.coupling})")
    return tables
