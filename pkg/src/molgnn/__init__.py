"""Differentiable graph-network engine and training tools for molecular
HOMO-LUMO gap regression from 2D bond graphs and 3D conformer sets."""

__version__ = "0.1.0"

from .tensor import Parameter, Tensor  # noqa: F401
