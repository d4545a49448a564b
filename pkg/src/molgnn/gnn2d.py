"""Deep 2D molecular-graph model.

Architecture: categorical atom/bond encoders, a stack of pre-activation
residual message-passing layers (BN -> ReLU -> GENConv -> add) with a
virtual node exchanging global state after every layer, adaptive diffusion
over the normalized adjacency with learned sigmoid retainment scores, and
a sum-readout linear head producing one scalar per graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


from .molgraph import Batch, FeatureVocab, normalized_adjacency
from .nn import BatchNorm1d, CategoricalEncoder, Linear, MLP
from .tensor import Parameter, Tensor, gather, segment_softmax, segment_sum


@dataclass
class Model2DConfig:
    num_layers: int = 16
    dagnn_steps: int = 5
    hidden_dim: int = 600
    dropout_rate: float = 0.25
    epsilon: float = 1e-7
    virtual_node: bool = True
    node_vocab_sizes: list[int] = field(default_factory=lambda: [2] * 9)
    edge_vocab_sizes: list[int] = field(default_factory=lambda: [2] * 3)

    def __post_init__(self):
        assert self.num_layers >= 1 and self.dagnn_steps >= 0
        assert self.hidden_dim >= 1 and 0.0 <= self.dropout_rate < 1.0
        assert self.epsilon > 0.0


def genconv_message(x_j: Tensor, e_ji: Tensor, epsilon: float) -> Tensor:
    """Per-edge message ReLU(x_j + e_ji) + eps; strictly positive."""
    return (x_j + e_ji).relu() + epsilon


def softmax_agg(messages: Tensor, dst: np.ndarray, num_nodes: int,
                beta: Tensor) -> Tensor:
    """Softmax-weighted aggregation of per-edge messages, per dimension.

    Nodes with no incoming messages get the zero vector.
    """
    if messages.shape[0] == 0:
        return Tensor(np.zeros((num_nodes, messages.shape[1])))
    weights = segment_softmax(messages * beta, dst, num_nodes)
    return segment_sum(weights * messages, dst, num_nodes)


class GENConv:
    """Message-passing layer with softmax aggregation and a learnable
    inverse temperature."""

    def __init__(self, name: str, dim: int, edge_vocab_sizes: list[int],
                 epsilon: float, rng: np.random.Generator):
        self.epsilon = epsilon
        self.edge_encoder = CategoricalEncoder(f"{name}.edge", edge_vocab_sizes,
                                               dim, rng)
        self.beta = Parameter(np.array(1.0), f"{name}.beta")
        self.mlp = MLP(f"{name}.mlp", [dim, 2 * dim, dim], rng)

    def __call__(self, x: Tensor, edge_index: np.ndarray,
                 edge_feat: np.ndarray) -> Tensor:
        n = x.shape[0]
        if edge_index.shape[0] > 0:
            src, dst = edge_index[:, 0], edge_index[:, 1]
            e = self.edge_encoder(edge_feat)
            m = genconv_message(gather(x, src), e, self.epsilon)
            agg = softmax_agg(m, dst, n, self.beta)
            return self.mlp(x + agg)
        return self.mlp(x)

    def parameters(self) -> list[Parameter]:
        return (self.edge_encoder.parameters() + [self.beta]
                + self.mlp.parameters())


class DeeperGCNLayer:
    """Pre-activation residual block: x + GENConv(ReLU(BN(x)))."""

    def __init__(self, name: str, dim: int, edge_vocab_sizes: list[int],
                 epsilon: float, rng: np.random.Generator):
        self.norm = BatchNorm1d(f"{name}.bn", dim)
        self.conv = GENConv(f"{name}.conv", dim, edge_vocab_sizes, epsilon, rng)

    def __call__(self, x: Tensor, edge_index: np.ndarray, edge_feat: np.ndarray,
                 training: bool) -> Tensor:
        return x + self.conv(self.norm(x, training).relu(), edge_index, edge_feat)

    def parameters(self) -> list[Parameter]:
        return self.norm.parameters() + self.conv.parameters()

    def state_dict(self) -> dict:
        return self.norm.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.norm.load_state_dict(state)


def virtual_node_update(x: Tensor, g: Tensor, segments: np.ndarray,
                        num_graphs: int, mlp: MLP, training: bool,
                        rng: np.random.Generator | None) -> Tensor:
    """New global state g' = MLP(sum-readout(x) + g), one row per graph."""
    readout = segment_sum(x, segments, num_graphs)
    return mlp(readout + g, training, rng)


def dagnn_forward(z: Tensor, adjacency: tuple, s: Parameter, steps: int) -> Tensor:
    """Adaptive diffusion: mix powers of the normalized adjacency applied to
    z, weighted per node by sigmoid retainment scores from the vector s."""
    rows, cols, vals = adjacency
    n = z.shape[0]
    hops = [z]
    h = z
    for _ in range(steps):
        h = segment_sum(gather(h, cols) * vals[:, None], rows, n)
        hops.append(h)
    out = None
    for h in hops:
        score = (h @ s).sigmoid()        # (n, 1)
        term = score * h
        out = term if out is None else out + term
    return out


class Model2D:
    """The full 2D model: encoders, L residual layers (+ virtual node),
    K-step adaptive diffusion, sum readout, linear head."""

    kind = "2d"

    def __init__(self, config: Model2DConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        f = config.hidden_dim
        self.atom_encoder = CategoricalEncoder("atom", config.node_vocab_sizes,
                                               f, rng)
        self.layers = [
            DeeperGCNLayer(f"layer{l}", f, config.edge_vocab_sizes,
                           config.epsilon, rng)
            for l in range(config.num_layers)
        ]
        # batch norm inside the global-state MLP keeps the broadcast-added
        # virtual node from compounding the sum-readout scale every layer
        self.vn_mlp = (MLP("vn", [f, f, f], rng, batch_norm=True,
                           dropout_rate=config.dropout_rate)
                       if config.virtual_node else None)
        self.dagnn_s = Parameter(np.zeros((f, 1)), "dagnn.s")
        self.head = Linear("head", f, 1, rng, bias=False)

    def forward(self, batch: Batch, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        n = batch.node_feat.shape[0]
        x = self.atom_encoder(batch.node_feat)
        g = Tensor(np.zeros((batch.num_graphs, cfg.hidden_dim)))
        for layer in self.layers:
            x = layer(x, batch.edge_index, batch.edge_feat, training)
            if self.vn_mlp is not None:
                g = virtual_node_update(x, g, batch.node_segments,
                                        batch.num_graphs, self.vn_mlp,
                                        training, rng)
                x = x + gather(g, batch.node_segments)
        adjacency = normalized_adjacency(n, batch.edge_index)
        y = dagnn_forward(x, adjacency, self.dagnn_s, cfg.dagnn_steps)
        graph_repr = segment_sum(y, batch.node_segments, batch.num_graphs)
        return self.head(graph_repr).reshape(batch.num_graphs)

    __call__ = forward

    def parameters(self) -> list[Parameter]:
        out = self.atom_encoder.parameters()
        for layer in self.layers:
            out += layer.parameters()
        if self.vn_mlp is not None:
            out += self.vn_mlp.parameters()
        out += [self.dagnn_s] + self.head.parameters()
        return out

    def state_dict(self) -> dict:
        state = {}
        for layer in self.layers:
            state.update(layer.state_dict())
        if self.vn_mlp is not None:
            state.update(self.vn_mlp.state_dict())
        return state

    def load_state_dict(self, state: dict) -> None:
        for layer in self.layers:
            layer.load_state_dict(state)
        if self.vn_mlp is not None:
            self.vn_mlp.load_state_dict(state)

    @classmethod
    def from_vocab(cls, config: Model2DConfig, vocab: FeatureVocab,
                   seed: int = 0) -> "Model2D":
        config.node_vocab_sizes = list(vocab.node_vocab_sizes)
        config.edge_vocab_sizes = list(vocab.edge_vocab_sizes)
        return cls(config, seed)
