"""Molecular graph / conformer data model, file IO, batching, and splits.

File formats (all UTF-8, LF):
  graphs:     JSON-lines, one molecule per line:
              {"id", "num_nodes", "node_feat", "edge_index", "edge_feat", "target"}
  conformers: JSON-lines: {"id", "conformers": [[[x,y,z] * n] * k]}
  split:      one JSON object {"name", "train", "valid", "test"}
  vocab:      one JSON object {"node": [9 ints], "edge": [3 ints]}
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np

NUM_NODE_FEATURES = 9
NUM_EDGE_FEATURES = 3


class DatasetError(ValueError):
    """Malformed dataset file or invariant violation."""


@dataclass
class MolecularGraph:
    """Atoms with categorical features, directed bond edges, optional target."""

    id: str
    num_nodes: int
    node_feat: np.ndarray          # (n, 9) int64
    edge_index: np.ndarray         # (E, 2) int64, both directions materialized
    edge_feat: np.ndarray          # (E, 3) int64
    target: float | None = None

    def validate(self) -> None:
        n = self.num_nodes
        if self.node_feat.shape != (n, NUM_NODE_FEATURES):
            raise DatasetError(f"{self.id}: node_feat shape {self.node_feat.shape}, "
                               f"expected ({n}, {NUM_NODE_FEATURES})")
        if self.edge_index.size and (self.edge_index.min() < 0
                                     or self.edge_index.max() >= n):
            raise DatasetError(f"{self.id}: node index out of range")
        if self.edge_feat.shape[0] != self.edge_index.shape[0]:
            raise DatasetError(f"{self.id}: edge_feat rows != edge count")
        if self.edge_feat.size and self.edge_feat.shape[1] != NUM_EDGE_FEATURES:
            raise DatasetError(f"{self.id}: edge_feat must have "
                               f"{NUM_EDGE_FEATURES} columns")
        if np.any(self.node_feat < 0) or np.any(self.edge_feat < 0):
            raise DatasetError(f"{self.id}: negative categorical feature")


@dataclass
class ConformerSet:
    """Per-molecule list of (n, 3) coordinate arrays in Angstrom (may be empty)."""

    id: str
    conformers: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.conformers)


@dataclass
class FeatureVocab:
    node_vocab_sizes: list[int]
    edge_vocab_sizes: list[int]

    def validate_against(self, graphs: list[MolecularGraph]) -> None:
        for g in graphs:
            for j in range(NUM_NODE_FEATURES):
                if g.node_feat.size and g.node_feat[:, j].max() >= self.node_vocab_sizes[j]:
                    raise DatasetError(
                        f"{g.id}: node feature column {j} exceeds vocab "
                        f"{self.node_vocab_sizes[j]}")
            for j in range(NUM_EDGE_FEATURES):
                if g.edge_feat.size and g.edge_feat[:, j].max() >= self.edge_vocab_sizes[j]:
                    raise DatasetError(
                        f"{g.id}: edge feature column {j} exceeds vocab "
                        f"{self.edge_vocab_sizes[j]}")


@dataclass
class SplitSpec:
    name: str
    train_ids: list[str]
    valid_ids: list[str]
    test_ids: list[str]

    def validate(self) -> None:
        tr, va, te = set(self.train_ids), set(self.valid_ids), set(self.test_ids)
        if tr & va or tr & te or va & te:
            raise DatasetError(f"split {self.name}: id lists are not disjoint")


@dataclass
class Batch:
    """Disjoint union of graphs with re-indexed edges and node->graph segments."""

    node_feat: np.ndarray          # (N, 9)
    edge_index: np.ndarray         # (E, 2), batch-global node ids
    edge_feat: np.ndarray          # (E, 3)
    node_segments: np.ndarray      # (N,) graph index per node
    num_graphs: int
    graph_ids: list[str]
    targets: np.ndarray | None = None   # (num_graphs,) or None
    offsets: np.ndarray | None = None


# -- file IO ----------------------------------------------------------------


def _parse_graph_obj(obj: dict, lineno: int) -> MolecularGraph:
    try:
        g = MolecularGraph(
            id=str(obj["id"]),
            num_nodes=int(obj["num_nodes"]),
            node_feat=np.asarray(obj["node_feat"], dtype=np.int64).reshape(
                int(obj["num_nodes"]), NUM_NODE_FEATURES),
            edge_index=np.asarray(obj["edge_index"], dtype=np.int64).reshape(-1, 2),
            edge_feat=np.asarray(obj["edge_feat"], dtype=np.int64).reshape(
                -1, NUM_EDGE_FEATURES) if obj["edge_feat"] else
                np.zeros((0, NUM_EDGE_FEATURES), dtype=np.int64),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetError(f"line {lineno}: malformed molecule record: {exc}") from exc
    if not g.edge_index.size:
        g.edge_index = np.zeros((0, 2), dtype=np.int64)
    tgt = obj.get("target")
    g.target = None if tgt is None else float(tgt)
    g.validate()
    return g


def load_graph_dataset(path, vocab: FeatureVocab | None = None
                       ) -> tuple[list[MolecularGraph], FeatureVocab]:
    """Load a JSON-lines graphs file; vocab is derived unless supplied."""
    graphs: list[MolecularGraph] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON: {exc}") from exc
            graphs.append(_parse_graph_obj(obj, lineno))
    if vocab is None:
        node_sizes = [1] * NUM_NODE_FEATURES
        edge_sizes = [1] * NUM_EDGE_FEATURES
        for g in graphs:
            for j in range(NUM_NODE_FEATURES):
                if g.node_feat.size:
                    node_sizes[j] = max(node_sizes[j], int(g.node_feat[:, j].max()) + 1)
            for j in range(NUM_EDGE_FEATURES):
                if g.edge_feat.size:
                    edge_sizes[j] = max(edge_sizes[j], int(g.edge_feat[:, j].max()) + 1)
        vocab = FeatureVocab(node_sizes, edge_sizes)
    vocab.validate_against(graphs)
    return graphs, vocab


def save_graph_dataset(graphs: list[MolecularGraph], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in graphs:
            fh.write(json.dumps({
                "id": g.id,
                "num_nodes": g.num_nodes,
                "node_feat": g.node_feat.tolist(),
                "edge_index": g.edge_index.tolist(),
                "edge_feat": g.edge_feat.tolist(),
                "target": g.target,
            }) + "\n")


def load_conformer_dataset(path, graphs: list[MolecularGraph]
                           ) -> dict[str, ConformerSet]:
    """Load conformers keyed by molecule id; absent ids get empty sets."""
    by_id = {g.id: g for g in graphs}
    sets = {g.id: ConformerSet(g.id) for g in graphs}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON: {exc}") from exc
            mol_id = str(obj["id"])
            if mol_id not in by_id:
                raise DatasetError(f"line {lineno}: unknown molecule id {mol_id!r}")
            n = by_id[mol_id].num_nodes
            confs = []
            for coords in obj["conformers"]:
                arr = np.asarray(coords, dtype=np.float64)
                if arr.shape != (n, 3):
                    raise DatasetError(
                        f"{mol_id}: conformer has {arr.shape[0]} rows, "
                        f"molecule has {n} atoms")
                confs.append(arr)
            sets[mol_id] = ConformerSet(mol_id, confs)
    return sets


def save_conformer_dataset(sets: dict[str, ConformerSet], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for cid in sets:
            cs = sets[cid]
            if not cs.conformers:
                continue
            fh.write(json.dumps({
                "id": cs.id,
                "conformers": [c.tolist() for c in cs.conformers],
            }) + "\n")


def load_split(path) -> SplitSpec:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    spec = SplitSpec(name=str(obj["name"]),
                     train_ids=[str(i) for i in obj["train"]],
                     valid_ids=[str(i) for i in obj["valid"]],
                     test_ids=[str(i) for i in obj["test"]])
    spec.validate()
    return spec


def save_split(spec: SplitSpec, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"name": spec.name, "train": spec.train_ids,
                   "valid": spec.valid_ids, "test": spec.test_ids}, fh)
        fh.write("\n")


def load_vocab(path) -> FeatureVocab:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return FeatureVocab([int(x) for x in obj["node"]],
                        [int(x) for x in obj["edge"]])


# -- batching and graph operators --------------------------------------------


def batch_graphs(graphs: list[MolecularGraph]) -> Batch:
    """Disjoint-union batching with node-offset edge re-indexing."""
    if not graphs:
        raise DatasetError("batch_graphs: empty graph list")
    offsets = np.zeros(len(graphs), dtype=np.int64)
    total = 0
    for i, g in enumerate(graphs):
        offsets[i] = total
        total += g.num_nodes
    node_feat = np.concatenate([g.node_feat for g in graphs], axis=0)
    edge_index = np.concatenate(
        [g.edge_index + off for g, off in zip(graphs, offsets)], axis=0)
    edge_feat = np.concatenate([g.edge_feat for g in graphs], axis=0)
    segments = np.concatenate(
        [np.full(g.num_nodes, i, dtype=np.int64) for i, g in enumerate(graphs)])
    targets = None
    if all(g.target is not None for g in graphs):
        targets = np.array([g.target for g in graphs], dtype=np.float64)
    return Batch(node_feat=node_feat, edge_index=edge_index, edge_feat=edge_feat,
                 node_segments=segments, num_graphs=len(graphs),
                 graph_ids=[g.id for g in graphs], targets=targets,
                 offsets=offsets)


def normalized_adjacency(num_nodes, edge_index: np.ndarray | None = None
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetrically normalized adjacency with self-loops, as sparse COO.

    Accepts either a MolecularGraph or (num_nodes, edge_index).  Returns
    (rows, cols, vals) with vals[k] = 1/sqrt(deg(rows[k]) * deg(cols[k]))
    where degrees count self-loops.  Directed duplicates in edge_index are
    collapsed to one undirected entry per direction.
    """
    if isinstance(num_nodes, MolecularGraph):
        num_nodes, edge_index = num_nodes.num_nodes, num_nodes.edge_index
    pairs = {(int(s), int(d)) for s, d in edge_index}
    pairs |= {(d, s) for s, d in pairs}               # symmetrize
    pairs |= {(i, i) for i in range(num_nodes)}       # self-loops, exactly once
    rows = np.array(sorted(pairs), dtype=np.int64)
    cols = rows[:, 1].copy()
    rows = rows[:, 0]
    deg = np.bincount(rows, minlength=num_nodes).astype(np.float64)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return rows, cols, vals


def make_new_splits(original: SplitSpec, num_folds: int, seed: int
                    ) -> list[SplitSpec]:
    """Partition the original validation set into folds; fold k validates on
    part k and trains on the original train set plus the other parts."""
    valid = list(original.valid_ids)
    if num_folds < 1 or num_folds > len(valid):
        raise DatasetError(f"num_folds {num_folds} not in [1, {len(valid)}]")
    rng = random.Random(seed)
    rng.shuffle(valid)
    base, rem = divmod(len(valid), num_folds)
    parts: list[list[str]] = []
    start = 0
    for k in range(num_folds):
        size = base + (1 if k < rem else 0)
        parts.append(valid[start:start + size])
        start += size
    splits = []
    for k in range(num_folds):
        rest = [i for j, p in enumerate(parts) if j != k for i in p]
        spec = SplitSpec(name=f"{original.name}-fold-{k}",
                         train_ids=list(original.train_ids) + rest,
                         valid_ids=list(parts[k]),
                         test_ids=list(original.test_ids))
        spec.validate()
        splits.append(spec)
    return splits
