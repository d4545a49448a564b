"""Alignment-optimal RMSD between conformers.

Two independent implementations are provided: the SVD (Kabsch) route used by
the pruning code, and a quaternion eigenvalue route used to cross-check it.
"""

from __future__ import annotations

import numpy as np


def kabsch_rmsd(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum RMSD between 2 centered-and-rotated point sets via SVD."""
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"rmsd: incompatible shapes {a.shape} vs {b.shape}")
    pa = a - a.mean(axis=0)
    pb = b - b.mean(axis=0)
    h = pa.T @ pb
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    diff = pa @ rot.T - pb
    return float(np.sqrt((diff * diff).sum() / a.shape[0]))


def quaternion_rmsd(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum RMSD via the quaternion characteristic polynomial method."""
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"rmsd: incompatible shapes {a.shape} vs {b.shape}")
    pa = a - a.mean(axis=0)
    pb = b - b.mean(axis=0)
    m = pa.T @ pb
    sxx, sxy, sxz = m[0]
    syx, syy, syz = m[1]
    szx, szy, szz = m[2]
    key = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    lam = np.linalg.eigvalsh(key).max()
    sq = ((pa * pa).sum() + (pb * pb).sum() - 2.0 * lam) / a.shape[0]
    return float(np.sqrt(max(sq, 0.0)))
