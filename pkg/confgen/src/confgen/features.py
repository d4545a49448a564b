"""Categorical featurization of parsed molecules: 9 atom columns and 3 bond
columns in the OGB column order.

Columns computed without a chemistry toolkit are filled with their honest
defaults (chirality and bond stereo are always "unspecified", radical
electrons always 0); everything else is derived from the parsed graph.
"""

from __future__ import annotations

import numpy as np

from .smiles import AROMATIC_BOND, Molecule, ring_bond_flags

NUM_NODE_FEATURES = 9
NUM_EDGE_FEATURES = 3

# hybridization categories: sp, sp2, sp3 (indices 0-2), other = 3
HYB_SP, HYB_SP2, HYB_SP3, HYB_OTHER = 0, 1, 2, 3

BOND_TYPE_INDEX = {1.0: 0, 2.0: 1, 3.0: 2, AROMATIC_BOND: 3}

# formal charge is shifted so the column stays a non-negative category index
CHARGE_OFFSET = 5


def _hybridization(mol: Molecule, i: int) -> int:
    orders = [b.order for b in mol.bonds if i in (b.i, b.j)]
    if not orders:
        return HYB_SP3
    if any(o == 3.0 for o in orders) or sum(o == 2.0 for o in orders) >= 2:
        return HYB_SP
    if any(o in (2.0, AROMATIC_BOND) for o in orders):
        return HYB_SP2
    return HYB_SP3


def atom_features(mol: Molecule) -> np.ndarray:
    """(n, 9) int64: atomic number index, chirality, degree, formal charge,
    hydrogen count, radical electrons, hybridization, aromatic, in-ring."""
    in_ring = atom_ring_flags(mol)
    rows = []
    for i, atom in enumerate(mol.atoms):
        rows.append([
            atom.atomic_number - 1,
            0,                                   # chirality: unspecified
            len(mol.neighbors(i)),
            atom.charge + CHARGE_OFFSET,
            mol.implicit_hydrogens(i),
            0,                                   # radical electrons
            _hybridization(mol, i),
            int(atom.aromatic),
            int(in_ring[i]),
        ])
    return np.asarray(rows, dtype=np.int64)


def atom_ring_flags(mol: Molecule) -> list[bool]:
    flags = ring_bond_flags(mol)
    in_ring = [False] * mol.num_atoms
    for b, on_ring in zip(mol.bonds, flags):
        if on_ring:
            in_ring[b.i] = in_ring[b.j] = True
    return in_ring


def bond_features(mol: Molecule) -> tuple[np.ndarray, np.ndarray]:
    """Both-direction edge index (2E, 2) and features (2E, 3): bond type,
    stereo (always unspecified), conjugated (aromatic bonds only)."""
    index, feats = [], []
    for b in mol.bonds:
        row = [BOND_TYPE_INDEX[b.order], 0, int(b.order == AROMATIC_BOND)]
        index.append([b.i, b.j])
        feats.append(row)
        index.append([b.j, b.i])
        feats.append(row)
    if not index:
        return (np.zeros((0, 2), dtype=np.int64),
                np.zeros((0, NUM_EDGE_FEATURES), dtype=np.int64))
    return (np.asarray(index, dtype=np.int64),
            np.asarray(feats, dtype=np.int64))


def graph_record(mol_id: str, mol: Molecule, target: float | None) -> dict:
    """One JSON-lines record in the graphs-file schema."""
    node_feat = atom_features(mol)
    edge_index, edge_feat = bond_features(mol)
    return {
        "id": mol_id,
        "num_nodes": mol.num_atoms,
        "node_feat": node_feat.tolist(),
        "edge_index": edge_index.tolist(),
        "edge_feat": edge_feat.tolist(),
        "target": target,
    }
