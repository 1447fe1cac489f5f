"""Parameterised building blocks: LSTM cell, dense layer and dropout.

Weight layout (pinned, weight files depend on it): an LSTM cell stores one
stacked gate matrix ``W`` of shape ``(4*state, input + state)`` whose row
blocks are the forget, input, output and candidate gates in that order, and
whose columns multiply ``[x; h_prev]``.  The bias ``b`` is stacked the same
way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError

GATES = ("f", "i", "o", "g")
ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "identity": ad.identity}


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LstmCell:
    def __init__(self, input_dim: int, state_dim: int, rng: np.random.Generator | None = None):
        if input_dim < 1 or state_dim < 1:
            raise ContractError(f"LSTM dims must be >= 1, got ({input_dim}, {state_dim})")
        self.input_dim = input_dim
        self.state_dim = state_dim
        fan_in = input_dim + state_dim
        if rng is None:
            w = np.zeros((4 * state_dim, fan_in))
            b = np.zeros(4 * state_dim)
        else:
            w = _uniform(rng, (4 * state_dim, fan_in), fan_in)
            b = np.zeros(4 * state_dim)
            b[:state_dim] = 1.0  # forget gate
        self.W = Tensor(w, requires_grad=True, name="W")
        self.b = Tensor(b, requires_grad=True, name="b")
        assert self.param_count() == self.expected_param_count(input_dim, state_dim)

    @staticmethod
    def expected_param_count(input_dim: int, state_dim: int) -> int:
        return 4 * (input_dim * state_dim + state_dim * state_dim + state_dim)

    def param_count(self) -> int:
        return self.W.size + self.b.size

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "W", self.W
        yield "b", self.b

    def gate_weight(self, gate: str) -> np.ndarray:
        """View of one gate's ``(state, input + state)`` block, e.g. ``"f"``."""
        k = GATES.index(gate)
        s = self.state_dim
        return self.W.data[k * s:(k + 1) * s]

    def zero_state(self, batch: int | None = None) -> tuple[Tensor, Tensor]:
        shape = (self.state_dim,) if batch is None else (batch, self.state_dim)
        return Tensor(np.zeros(shape)), Tensor(np.zeros(shape))


def lstm_step(cell: LstmCell, h_prev: Tensor, c_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM update; returns ``(h, c)``."""
    s = cell.state_dim
    if x.shape[-1] != cell.input_dim or h_prev.shape[-1] != s or c_prev.shape[-1] != s:
        raise ShapeError(
            f"lstm_step: cell ({cell.input_dim}->{s}) got x {x.shape}, "
            f"h {h_prev.shape}, c {c_prev.shape}"
        )
    z = ad.affine(ad.concat(x, h_prev), cell.W, cell.b)
    f = ad.sigmoid(ad.slice_last(z, 0, s))
    i = ad.sigmoid(ad.slice_last(z, s, 2 * s))
    o = ad.sigmoid(ad.slice_last(z, 2 * s, 3 * s))
    g = ad.tanh(ad.slice_last(z, 3 * s, 4 * s))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


class DenseLayer:
    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: str = "identity",
        rng: np.random.Generator | None = None,
        bias: bool = True,
    ):
        if activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {activation!r}")
        if in_dim < 1 or out_dim < 1:
            raise ContractError(f"dense dims must be >= 1, got ({in_dim}, {out_dim})")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        w = np.zeros((out_dim, in_dim)) if rng is None else _uniform(rng, (out_dim, in_dim), in_dim)
        self.W = Tensor(w, requires_grad=True, name="W")
        self.b = Tensor(np.zeros(out_dim), requires_grad=True, name="b") if bias else None

    def param_count(self) -> int:
        return self.W.size + (self.b.size if self.b is not None else 0)

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "W", self.W
        if self.b is not None:
            yield "b", self.b


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"dense_forward: expected input width {layer.in_dim}, got {x.shape}")
    return ACTIVATIONS[layer.activation](ad.affine(x, layer.W, layer.b))


@dataclass(frozen=True)
class DropoutSpec:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""

    rate: float = 0.0
    mode: str = "eval"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ContractError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.mode not in ("train", "eval"):
            raise ContractError(f"dropout mode must be 'train' or 'eval', got {self.mode!r}")


def dropout_apply(spec: DropoutSpec, x: Tensor, rng: np.random.Generator | None) -> Tensor:
    if spec.mode == "eval" or spec.rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= spec.rate
    mask = Tensor._wrap(keep / (1.0 - spec.rate))
    return ad.mul(x, mask)
