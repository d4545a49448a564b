"""Layer building blocks composed from autodiff primitives."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor, dropout, embedding


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Linear:
    """Affine map x @ W + b (bias optional)."""

    def __init__(self, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(glorot(rng, in_dim, out_dim), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim), f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    def parameters(self) -> list[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class BatchNorm1d:
    """Batch normalization over axis 0 with running statistics for eval."""

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, name: str, dim: int):
        self.name = name
        self.gamma = Parameter(np.ones(dim), f"{name}.gamma")
        self.beta = Parameter(np.zeros(dim), f"{name}.beta")
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            n = x.shape[0]
            mu = x.mean(axis=0, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=0, keepdims=True)
            xhat = centered * (var + self.EPS) ** -0.5
            # running stats track unbiased variance, torch-style
            unbiased = var.data[0] * (n / max(n - 1, 1))
            self.running_mean += self.MOMENTUM * (mu.data[0] - self.running_mean)
            self.running_var += self.MOMENTUM * (unbiased - self.running_var)
        else:
            xhat = (x - self.running_mean) * (self.running_var + self.EPS) ** -0.5
        return xhat * self.gamma + self.beta

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def state_dict(self) -> dict:
        return {f"{self.name}.running_mean": self.running_mean.copy(),
                f"{self.name}.running_var": self.running_var.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.running_mean = state[f"{self.name}.running_mean"].copy()
        self.running_var = state[f"{self.name}.running_var"].copy()


class MLP:
    """Stacked Linear layers with ReLU between, optional BN after hidden
    layers and dropout on hidden activations."""

    def __init__(self, name: str, dims: list[int], rng: np.random.Generator,
                 batch_norm: bool = False, dropout_rate: float = 0.0):
        self.linears = [Linear(f"{name}.lin{i}", dims[i], dims[i + 1], rng)
                        for i in range(len(dims) - 1)]
        self.norms = ([BatchNorm1d(f"{name}.bn{i}", dims[i + 1])
                       for i in range(len(dims) - 2)] if batch_norm else [])
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        last = len(self.linears) - 1
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < last:
                if self.norms:
                    x = self.norms[i](x, training)
                x = x.relu()
                if self.dropout_rate > 0.0:
                    x = dropout(x, self.dropout_rate, rng, training)
        return x

    def parameters(self) -> list[Parameter]:
        out = []
        for lin in self.linears:
            out += lin.parameters()
        for bn in self.norms:
            out += bn.parameters()
        return out

    def state_dict(self) -> dict:
        state = {}
        for bn in self.norms:
            state.update(bn.state_dict())
        return state

    def load_state_dict(self, state: dict) -> None:
        for bn in self.norms:
            bn.load_state_dict(state)


class CategoricalEncoder:
    """Sum of per-column embedding lookups for integer feature matrices."""

    def __init__(self, name: str, vocab_sizes: list[int], dim: int,
                 rng: np.random.Generator):
        self.tables = [
            Parameter(glorot(rng, size, dim), f"{name}.table{j}")
            for j, size in enumerate(vocab_sizes)
        ]

    def __call__(self, int_features: np.ndarray) -> Tensor:
        out = embedding(self.tables[0], int_features[:, 0])
        for j in range(1, len(self.tables)):
            out = out + embedding(self.tables[j], int_features[:, j])
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.tables)


def embed_features(int_features: np.ndarray, tables: list[Parameter]) -> Tensor:
    """Row i of the output is the sum over columns j of table_j[features[i, j]]."""
    out = embedding(tables[0], int_features[:, 0])
    for j in range(1, len(tables)):
        out = out + embedding(tables[j], int_features[:, j])
    return out


def shifted_softplus(x: Tensor) -> Tensor:
    """ln(0.5 e^x + 0.5): softplus shifted to pass through 0 at x=0."""
    return x.softplus() - np.log(2.0)
