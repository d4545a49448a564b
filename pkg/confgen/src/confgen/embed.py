"""Distance-geometry-style conformer embedding with RMSD pruning.

Candidates start from random coordinates and are relaxed against distance
targets derived from the bond graph (bond lengths from covalent radii, 1-3
distances from idealized angles, lower bounds for everything else). Retained
conformers are greedily pruned in embed order so every kept pair is at least
``rmsd_cutoff`` apart.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .rmsd import kabsch_rmsd
from .smiles import AROMATIC_BOND, Molecule, parse_smiles

# single-bond covalent radii in Å
COVALENT_RADII = {
    "H": 0.31, "B": 0.84, "C": 0.76, "N": 0.71, "O": 0.66, "F": 0.57,
    "Si": 1.11, "P": 1.07, "S": 1.05, "Cl": 1.02, "Br": 1.20, "I": 1.39,
}

# bond length contraction per bond order relative to the single-bond length
ORDER_SCALE = {1.0: 1.0, 2.0: 0.87, 3.0: 0.78, AROMATIC_BOND: 0.93}

ANGLE_BY_HYB = {0: np.pi, 1: np.deg2rad(120.0), 2: np.deg2rad(109.47)}


@dataclass
class GenerationConfig:
    rmsd_cutoff: float = 0.5
    num_candidates: int = 60
    max_embed_attempts: int = 3
    seed: int = 0
    max_conformers: int = 40
    refine: bool = False          # extra relaxation pass on retained conformers

    def __post_init__(self):
        if self.rmsd_cutoff <= 0:
            raise ValueError("rmsd_cutoff must be positive")


def _bond_length(mol: Molecule, i: int, j: int, order: float) -> float:
    ri = COVALENT_RADII.get(mol.atoms[i].element, 1.0)
    rj = COVALENT_RADII.get(mol.atoms[j].element, 1.0)
    return (ri + rj) * ORDER_SCALE.get(order, 1.0)


def _hyb_angle(mol: Molecule, center: int) -> float:
    orders = [b.order for b in mol.bonds if center in (b.i, b.j)]
    if any(o == 3.0 for o in orders) or sum(o == 2.0 for o in orders) >= 2:
        return ANGLE_BY_HYB[0]
    if any(o in (2.0, AROMATIC_BOND) for o in orders):
        return ANGLE_BY_HYB[1]
    return ANGLE_BY_HYB[2]


def _distance_targets(mol: Molecule):
    """(pairs, targets, weights, is_lower_bound) arrays from the bond graph."""
    n = mol.num_atoms
    lengths: dict[tuple[int, int], float] = {}
    for b in mol.bonds:
        key = (min(b.i, b.j), max(b.i, b.j))
        lengths[key] = _bond_length(mol, b.i, b.j, b.order)
    one_three: dict[tuple[int, int], float] = {}
    neighbor_sets = [mol.neighbors(i) for i in range(n)]
    for center in range(n):
        angle = _hyb_angle(mol, center)
        nbrs = neighbor_sets[center]
        for a in range(len(nbrs)):
            for b in range(a + 1, len(nbrs)):
                i, j = nbrs[a], nbrs[b]
                key = (min(i, j), max(i, j))
                if key in lengths:
                    continue
                da = lengths[(min(center, i), max(center, i))]
                db = lengths[(min(center, j), max(center, j))]
                one_three[key] = np.sqrt(
                    da * da + db * db - 2 * da * db * np.cos(angle))
    pairs, targets, weights, lower = [], [], [], []
    for (i, j), d in lengths.items():
        pairs.append((i, j)), targets.append(d), weights.append(1.0)
        lower.append(False)
    for (i, j), d in one_three.items():
        pairs.append((i, j)), targets.append(d), weights.append(0.5)
        lower.append(False)
    constrained = set(lengths) | set(one_three)
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in constrained:
                pairs.append((i, j)), targets.append(2.2), weights.append(0.2)
                lower.append(True)
    return (np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
            np.asarray(targets), np.asarray(weights),
            np.asarray(lower, dtype=bool))


def _relax(coords: np.ndarray, pairs: np.ndarray, targets: np.ndarray,
           weights: np.ndarray, lower: np.ndarray, iterations: int,
           step: float = 0.05) -> np.ndarray:
    """Gradient descent on the weighted distance stress, batched over
    candidates; coords has shape (num_candidates, n, 3)."""
    if pairs.shape[0] == 0:
        return coords
    i_idx, j_idx = pairs[:, 0], pairs[:, 1]
    for _ in range(iterations):
        delta = coords[:, i_idx] - coords[:, j_idx]          # (C, P, 3)
        dist = np.sqrt((delta * delta).sum(axis=-1)) + 1e-12  # (C, P)
        err = dist - targets
        if lower.any():
            err = np.where(lower & (err > 0.0), 0.0, err)
        coeff = (2.0 * weights * err / dist)[..., None]       # d stress / d dist
        grad_pairs = coeff * delta
        grad = np.zeros_like(coords)
        np.add.at(grad, (slice(None), i_idx), grad_pairs)
        np.add.at(grad, (slice(None), j_idx), -grad_pairs)
        coords = coords - np.clip(step * grad, -0.3, 0.3)
    return coords


def _candidate_ok(coords: np.ndarray, pairs: np.ndarray, targets: np.ndarray,
                  lower: np.ndarray, tol: float = 0.25) -> np.ndarray:
    """Boolean mask of candidates whose hard constraints are satisfied."""
    if pairs.shape[0] == 0:
        return np.ones(coords.shape[0], dtype=bool)
    hard = ~lower
    if not hard.any():
        return np.ones(coords.shape[0], dtype=bool)
    delta = coords[:, pairs[hard, 0]] - coords[:, pairs[hard, 1]]
    dist = np.sqrt((delta * delta).sum(axis=-1))
    return np.abs(dist - targets[hard]).max(axis=1) <= tol


def _molecule_rng(cfg: GenerationConfig, smiles: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{cfg.seed}:{smiles}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def embed_molecule(mol: Molecule, cfg: GenerationConfig,
                   rng: np.random.Generator) -> list[np.ndarray]:
    """All successfully embedded candidate geometries, in embed order."""
    n = mol.num_atoms
    if n == 1:
        return [np.zeros((1, 3))]
    pairs, targets, weights, lower = _distance_targets(mol)
    scale = 1.5 * n ** (1.0 / 3.0)
    iterations = 150 + (150 if cfg.refine else 0)
    out: list[np.ndarray] = []
    for _ in range(cfg.max_embed_attempts):
        coords = rng.normal(scale=scale, size=(cfg.num_candidates, n, 3))
        coords = _relax(coords, pairs, targets, weights, lower, iterations)
        ok = _candidate_ok(coords, pairs, targets, lower)
        out.extend(coords[k] for k in range(cfg.num_candidates) if ok[k])
        if out:
            break
    return out


def prune_conformers(candidates: list[np.ndarray], rmsd_cutoff: float,
                     max_keep: int) -> list[np.ndarray]:
    """Greedy keep-first pruning: a candidate is kept only if it is at least
    rmsd_cutoff away from every conformer already kept."""
    kept: list[np.ndarray] = []
    for cand in candidates:
        if len(kept) >= max_keep:
            break
        if all(kabsch_rmsd(cand, ref) >= rmsd_cutoff for ref in kept):
            kept.append(cand)
    return kept


def generate_conformers(smiles: str, cfg: GenerationConfig
                        ) -> list[np.ndarray]:
    """Pruned conformers for one molecule; empty list when embedding fails.
    Raises SmilesError for unparseable input."""
    mol = parse_smiles(smiles)
    rng = _molecule_rng(cfg, smiles)
    candidates = embed_molecule(mol, cfg, rng)
    return prune_conformers(candidates, cfg.rmsd_cutoff, cfg.max_conformers)
