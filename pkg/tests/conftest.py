import numpy as np
import pytest

from molgnn.molgraph import (ConformerSet, SplitSpec, save_conformer_dataset,
                             save_graph_dataset, save_split)
from molgnn.verify import random_conformers, random_molecule


def build_dataset(directory, n_mols=12, seed=0, conformers_per_mol=2):
    """Write a small molecule dataset (graphs, conformers, base split) into
    `directory` and return the three file paths."""
    rng = np.random.default_rng(seed)
    graphs, conf_sets = [], {}
    for i in range(n_mols):
        g = random_molecule(rng, n=int(rng.integers(3, 6)))
        g.id = f"mol-{i:03d}"
        g.target = float(rng.normal(loc=2.0, scale=0.5))
        graphs.append(g)
        conf_sets[g.id] = ConformerSet(
            g.id, random_conformers(rng, g.num_nodes, conformers_per_mol))
    graphs_path = directory / "graphs.jsonl"
    conf_path = directory / "conformers.jsonl"
    split_path = directory / "split.json"
    save_graph_dataset(graphs, graphs_path)
    save_conformer_dataset(conf_sets, conf_path)
    ids = [g.id for g in graphs]
    n_train = max(1, n_mols - 4)
    n_valid = min(2, n_mols - n_train)
    save_split(SplitSpec(name="base", train_ids=ids[:n_train],
                         valid_ids=ids[n_train:n_train + n_valid],
                         test_ids=ids[n_train + n_valid:]), split_path)
    return graphs_path, conf_path, split_path


@pytest.fixture
def dataset_dir(tmp_path):
    return build_dataset(tmp_path), tmp_path
