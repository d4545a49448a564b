"""3D model over conformer sets.

Each conformer is processed geometrically (radius graph + continuous-filter
interaction with shared weights), conformers exchange information through a
max-pooled aggregate graph refined on the bond topology, and the final set
is reduced by per-conformer sum readout followed by elementwise max.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .molgraph import ConformerSet, FeatureVocab, MolecularGraph
from .nn import CategoricalEncoder, Linear, MLP, shifted_softplus
from .tensor import (Parameter, Tensor, gather, maximum, segment_sum)


@dataclass
class Model3DConfig:
    num_confdss_layers: int = 5
    hidden_dim: int = 256
    radius_cutoff: float = 5.0
    num_rbf: int = 64
    max_train_conformers: int = 20
    max_predict_conformers: int = 40
    virtual_node: bool = True
    node_vocab_sizes: list[int] = field(default_factory=lambda: [2] * 9)
    edge_vocab_sizes: list[int] = field(default_factory=lambda: [2] * 3)

    def __post_init__(self):
        assert self.radius_cutoff > 0 and self.num_rbf >= 2
        assert self.max_train_conformers >= 1 and self.max_predict_conformers >= 1


@dataclass
class SpatialGraph:
    """Distance-thresholded atom-pair edges for one conformer."""

    edge_index: np.ndarray   # (E, 2), both directions, no self-edges
    distances: np.ndarray    # (E,)


def build_radius_graph(coords: np.ndarray, cutoff: float) -> SpatialGraph:
    """Edges between distinct atoms within the cutoff distance."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    mask = (dist <= cutoff) & ~np.eye(n, dtype=bool)
    src, dst = np.nonzero(mask)
    return SpatialGraph(edge_index=np.stack([src, dst], axis=1),
                        distances=dist[src, dst])


def rbf_expand(distances: np.ndarray, cutoff: float, num_rbf: int) -> np.ndarray:
    """Gaussian radial basis on evenly spaced centers over [0, cutoff]."""
    d = np.clip(np.asarray(distances, dtype=np.float64), 0.0, cutoff)
    centers = np.linspace(0.0, cutoff, num_rbf)
    width = centers[1] - centers[0]
    gamma = 1.0 / (2.0 * width * width)
    return np.exp(-gamma * (d[..., None] - centers) ** 2)


class SchNetInteraction:
    """Continuous-filter interaction block with a residual skip connection.

    x'_i = x_i + U2(act(U1(sum_j (V x_j) * filter(rbf(d_ij)))))
    """

    def __init__(self, name: str, dim: int, num_rbf: int,
                 rng: np.random.Generator):
        self.v = Linear(f"{name}.v", dim, dim, rng, bias=False)
        self.filter1 = Linear(f"{name}.filt1", num_rbf, dim, rng)
        self.filter2 = Linear(f"{name}.filt2", dim, dim, rng)
        self.u1 = Linear(f"{name}.u1", dim, dim, rng)
        self.u2 = Linear(f"{name}.u2", dim, dim, rng)

    def __call__(self, x: Tensor, spatial: SpatialGraph, rbf: np.ndarray) -> Tensor:
        n = x.shape[0]
        if spatial.edge_index.shape[0] > 0:
            src, dst = spatial.edge_index[:, 0], spatial.edge_index[:, 1]
            filt = self.filter2(shifted_softplus(self.filter1(Tensor(rbf))))
            msgs = gather(self.v(x), src) * filt
            agg = segment_sum(msgs, dst, n)
        else:
            agg = Tensor(np.zeros(x.shape))
        return x + self.u2(shifted_softplus(self.u1(agg)))

    def parameters(self) -> list[Parameter]:
        return (self.v.parameters() + self.filter1.parameters()
                + self.filter2.parameters() + self.u1.parameters()
                + self.u2.parameters())


def set_max_pool(conformer_feats: list[Tensor]) -> Tensor:
    """Elementwise max over a non-empty set of equally shaped tensors."""
    if not conformer_feats:
        raise ValueError("set_max_pool: empty conformer set")
    return reduce(maximum, conformer_feats)


class GINAggregated:
    """GIN layer on the bond-topology aggregated graph, with edge features."""

    def __init__(self, name: str, dim: int, edge_vocab_sizes: list[int],
                 rng: np.random.Generator):
        self.eps = Parameter(np.array(0.0), f"{name}.eps")
        self.edge_encoder = CategoricalEncoder(f"{name}.edge", edge_vocab_sizes,
                                               dim, rng)
        self.mlp = MLP(f"{name}.mlp", [dim, 2 * dim, dim], rng, batch_norm=True)

    def __call__(self, x: Tensor, edge_index: np.ndarray, edge_feat: np.ndarray,
                 training: bool) -> Tensor:
        n = x.shape[0]
        if edge_index.shape[0] > 0:
            src, dst = edge_index[:, 0], edge_index[:, 1]
            e = self.edge_encoder(edge_feat)
            msgs = (gather(x, src) + e).relu()
            agg = segment_sum(msgs, dst, n)
        else:
            agg = Tensor(np.zeros(x.shape))
        return self.mlp((self.eps + 1.0) * x + agg, training)

    def parameters(self) -> list[Parameter]:
        return [self.eps] + self.edge_encoder.parameters() + self.mlp.parameters()

    def state_dict(self) -> dict:
        return self.mlp.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.mlp.load_state_dict(state)


class ConfDSSLayer:
    """One conformer-set layer: shared geometric blocks per conformer,
    max-pooled aggregate refined by GIN (+ virtual node), aggregate features
    added back to every conformer branch."""

    def __init__(self, name: str, dim: int, num_rbf: int,
                 edge_vocab_sizes: list[int], virtual_node: bool,
                 rng: np.random.Generator):
        self.schnet = SchNetInteraction(f"{name}.schnet", dim, num_rbf, rng)
        self.gin = GINAggregated(f"{name}.gin", dim, edge_vocab_sizes, rng)
        self.vn_mlp = MLP(f"{name}.vn", [dim, dim, dim], rng) if virtual_node else None

    def __call__(self, conf_feats: list[Tensor], spatials: list[SpatialGraph],
                 rbfs: list[np.ndarray], molecule: MolecularGraph, g: Tensor,
                 training: bool, rng: np.random.Generator | None
                 ) -> tuple[list[Tensor], Tensor]:
        hidden = [self.schnet(x, sp, rbf)
                  for x, sp, rbf in zip(conf_feats, spatials, rbfs)]
        agg = set_max_pool(hidden)
        agg = self.gin(agg, molecule.edge_index, molecule.edge_feat, training)
        if self.vn_mlp is not None:
            # sum readout via a single-segment scatter so deterministic mode
            # keeps it independent of atom ordering
            readout = segment_sum(agg, np.zeros(agg.shape[0], dtype=np.int64), 1)
            g = self.vn_mlp(readout + g, training, rng)
            agg = agg + g
        return [h + agg for h in hidden], g

    def parameters(self) -> list[Parameter]:
        out = self.schnet.parameters() + self.gin.parameters()
        if self.vn_mlp is not None:
            out += self.vn_mlp.parameters()
        return out

    def state_dict(self) -> dict:
        return self.gin.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.gin.load_state_dict(state)


class Model3D:
    """Conformer-set model: shared atom encoder, stacked conformer-set layers
    with ReLU, per-conformer sum readout, set max, MLP head."""

    kind = "3d"

    def __init__(self, config: Model3DConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        f = config.hidden_dim
        self.atom_encoder = CategoricalEncoder("atom", config.node_vocab_sizes,
                                               f, rng)
        self.layers = [
            ConfDSSLayer(f"confdss{l}", f, config.num_rbf,
                         config.edge_vocab_sizes, config.virtual_node, rng)
            for l in range(config.num_confdss_layers)
        ]
        self.head = MLP("head", [f, f, 1], rng)

    def forward(self, molecule: MolecularGraph, conformers: ConformerSet,
                training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor | None:
        """Scalar prediction, or None when the molecule has no conformers."""
        coords_list = list(conformers.conformers)
        if not coords_list:
            return None
        cap = (self.config.max_train_conformers if training
               else self.config.max_predict_conformers)
        if len(coords_list) > cap:
            if training:
                idx = rng.choice(len(coords_list), size=cap, replace=False)
                idx.sort()
            else:
                idx = np.arange(cap)
            coords_list = [coords_list[i] for i in idx]

        cfg = self.config
        spatials = [build_radius_graph(c, cfg.radius_cutoff) for c in coords_list]
        rbfs = [rbf_expand(sp.distances, cfg.radius_cutoff, cfg.num_rbf)
                for sp in spatials]
        x0 = self.atom_encoder(molecule.node_feat)
        conf_feats = [x0 for _ in coords_list]
        g = Tensor(np.zeros((1, cfg.hidden_dim)))
        for layer in self.layers:
            conf_feats, g = layer(conf_feats, spatials, rbfs, molecule, g,
                                  training, rng)
            conf_feats = [h.relu() for h in conf_feats]
        zero_seg = np.zeros(molecule.num_nodes, dtype=np.int64)
        readouts = [segment_sum(h, zero_seg, 1) for h in conf_feats]
        mol_vec = set_max_pool(readouts)
        return self.head(mol_vec, training, rng).reshape(())

    __call__ = forward

    def parameters(self) -> list[Parameter]:
        out = self.atom_encoder.parameters()
        for layer in self.layers:
            out += layer.parameters()
        out += self.head.parameters()
        return out

    def state_dict(self) -> dict:
        state = {}
        for layer in self.layers:
            state.update(layer.state_dict())
        return state

    def load_state_dict(self, state: dict) -> None:
        for layer in self.layers:
            layer.load_state_dict(state)

    @classmethod
    def from_vocab(cls, config: Model3DConfig, vocab: FeatureVocab,
                   seed: int = 0) -> "Model3D":
        config.node_vocab_sizes = list(vocab.node_vocab_sizes)
        config.edge_vocab_sizes = list(vocab.edge_vocab_sizes)
        return cls(config, seed)
