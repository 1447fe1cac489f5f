"""Shared machinery for the forecasting networks.

Every network consumes an input block ``X`` of shape ``(N, Tx)`` (one window)
or ``(B, N, Tx)`` (a mini-batch) and emits ``Ty`` predictions.  Model code is
rank-agnostic: per-step tensors are ``(dim,)`` for a single window and
``(B, dim)`` for a batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DivergedError, ShapeError
from ..layers import (
    ACTIVATIONS,
    DenseLayer,
    DropoutSpec,
    LstmCell,
    dense_forward,
    dropout_apply,
    lstm_step,
)
from .config import ModelConfig


@dataclass(frozen=True)
class AttentionRecord:
    """Attention weights captured during one forward pass.

    ``spatial`` is ``(Ty, N)`` for decoder-side spatial attention and
    ``(Tx, N)`` for DA-RNN, whose spatial weights live in the encoder.
    ``temporal`` is ``(Ty, Tx)``.  Either may be ``None`` when the
    architecture has no such attention.  A batched forward pass produces a
    record with a leading window axis; :meth:`split` breaks it up.
    """

    spatial: np.ndarray | None
    temporal: np.ndarray | None
    arch: str = "stam"

    @property
    def batched(self) -> bool:
        ref = self.spatial if self.spatial is not None else self.temporal
        return ref is not None and ref.ndim == 3

    def split(self) -> list["AttentionRecord"]:
        if not self.batched:
            return [self]
        ref = self.spatial if self.spatial is not None else self.temporal
        return [
            AttentionRecord(
                None if self.spatial is None else self.spatial[k],
                None if self.temporal is None else self.temporal[k],
                self.arch,
            )
            for k in range(ref.shape[0])
        ]


class Forecaster:
    """Base class: parameter registry, encoder and attention helpers."""

    arch = "base"
    has_spatial = False
    has_temporal = False

    def __init__(self, config: ModelConfig, init: str = "random"):
        if config.arch != self.arch:
            raise ShapeError(f"{type(self).__name__} built with arch {config.arch!r}")
        self.config = config
        ss = np.random.SeedSequence(config.seed)
        init_ss, drop_ss = ss.spawn(2)
        self._init_rng = np.random.default_rng(init_ss) if init == "random" else None
        self.dropout_rng = np.random.default_rng(drop_ss)
        self.layers: dict[str, LstmCell | DenseLayer] = {}
        self._build()
        self._init_rng = None

    # -- construction ------------------------------------------------------

    def _build(self) -> None:
        raise NotImplementedError

    def _dense(self, name: str, in_dim: int, out_dim: int, activation="identity", bias=True):
        layer = DenseLayer(in_dim, out_dim, activation, rng=self._init_rng, bias=bias)
        self.layers[name] = layer
        return layer

    def _align(self, name: str) -> DenseLayer:
        c = self.config
        layer = self._dense(name, c.dec_dim + c.enc_dim, 1, "relu")
        if self._init_rng is not None:
            layer.b.data[:] = c.align_bias_init
        return layer

    def _lstm(self, name: str, in_dim: int, state_dim: int) -> LstmCell:
        cell = LstmCell(in_dim, state_dim, rng=self._init_rng)
        self.layers[name] = cell
        return cell

    def _build_embedder(self) -> None:
        c = self.config
        if c.embedding == "shared":
            self._dense("spatial_embedder", c.input_len, c.enc_dim, "relu")
        else:
            for i in range(c.n_vars):
                self._dense(f"spatial_embedder_{i}", c.input_len, c.enc_dim, "relu")

    def _build_encoder(self) -> None:
        c = self.config
        self._lstm("encoder_l1", c.n_vars, c.enc_dim)
        self._lstm("encoder_l2", c.enc_dim, c.enc_dim)

    # -- parameters ----------------------------------------------------------

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for lname, layer in self.layers.items():
            for pname, t in layer.parameters():
                yield f"{lname}.{pname}", t

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.parameters()]

    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def zero_grad(self) -> None:
        ad.zero_grad(self.param_tensors())

    # -- building blocks -----------------------------------------------------

    def _dropout(self, x: Tensor, mode: str, rng) -> Tensor:
        return dropout_apply(DropoutSpec(self.config.dropout_rate, mode), x, rng)

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        c = self.config
        if X.ndim not in (2, 3) or X.shape[-2:] != (c.n_vars, c.input_len):
            raise ShapeError(
                f"expected input of shape (N={c.n_vars}, Tx={c.input_len}) or a batch of them, "
                f"got {X.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise ShapeError("input block contains non-finite values")
        return X

    @staticmethod
    def _series(X: np.ndarray, i: int) -> Tensor:
        # x^i: the full input-window series of variable i
        return Tensor._wrap(X[..., i, :])

    @staticmethod
    def _step(X: np.ndarray, t: int) -> Tensor:
        # x_t: all variables at input step t
        return Tensor._wrap(np.ascontiguousarray(X[..., :, t]))

    def spatial_embed(self, X: np.ndarray) -> list[Tensor]:
        """Rows d^1..d^N of the embedding matrix D, one tensor per variable."""
        X = self._check_input(X)
        out = []
        for i in range(self.config.n_vars):
            if self.config.embedding == "shared":
                layer = self.layers["spatial_embedder"]
            else:
                layer = self.layers[f"spatial_embedder_{i}"]
            out.append(dense_forward(layer, self._series(X, i)))
        return out

    def encode(self, X: np.ndarray, mode: str = "eval", rng=None) -> list[Tensor]:
        """Two stacked LSTM layers over x_1..x_Tx; returns h_1..h_Tx of layer 2."""
        X = self._check_input(X)
        rng = self.dropout_rng if rng is None else rng
        l1, l2 = self.layers["encoder_l1"], self.layers["encoder_l2"]
        batch = X.shape[0] if X.ndim == 3 else None
        h1, c1 = l1.zero_state(batch)
        h2, c2 = l2.zero_state(batch)
        H = []
        for t in range(self.config.input_len):
            h1, c1 = lstm_step(l1, h1, c1, self._step(X, t))
            h2, c2 = lstm_step(l2, h2, c2, self._dropout(h1, mode, rng))
            H.append(self._dropout(h2, mode, rng))
        return H

    def _attend(self, align: DenseLayer, query: Tensor, keys: list[Tensor]) -> tuple[Tensor, Tensor]:
        # act(W [query; key_k] + b) for every key k, then normalise over k
        energies = ACTIVATIONS[align.activation](ad.align_scores(query, keys, align.W, align.b))
        weights = ad.softmax(energies)
        return weights, ad.weighted_sum(weights, keys)

    def spatial_attention(self, h_dec_prev: Tensor, D: list[Tensor]) -> tuple[Tensor, Tensor]:
        """(beta over the N variables, spatial context g)."""
        return self._attend(self.layers["spatial_align"], h_dec_prev, D)

    def temporal_attention(self, h_dec_prev: Tensor, H: list[Tensor]) -> tuple[Tensor, Tensor]:
        """(alpha over the Tx encoder steps, temporal context s)."""
        return self._attend(self.layers["temporal_align"], h_dec_prev, H)

    # -- forward -------------------------------------------------------------

    def forward(self, X, mode: str = "eval", rng=None) -> tuple[Tensor, AttentionRecord]:
        """Predict Ty values autoregressively from the input block ``X``.

        The decoder is fed its own previous prediction (0 before the first
        step) in both train and eval mode; targets are never an input.
        Returns ``(y_hat, attention)`` with ``y_hat`` of shape ``(Ty,)`` or
        ``(B, Ty)``.
        """
        X = self._check_input(X)
        rng = self.dropout_rng if rng is None else rng
        batch = X.shape[0] if X.ndim == 3 else None
        y_prev = Tensor._wrap(np.zeros((1,) if batch is None else (batch, 1)))
        state = self._start(X, mode, rng)
        preds, betas, alphas = [], [], []
        for j in range(self.config.output_len):
            y_hat, beta, alpha = self._decode_step(state, y_prev, mode, rng)
            if not np.all(np.isfinite(y_hat.data)):
                raise DivergedError(f"{self.arch}: non-finite prediction at decode step {j + 1}")
            preds.append(y_hat)
            if beta is not None:
                betas.append(beta.data)
            if alpha is not None:
                alphas.append(alpha.data)
            y_prev = y_hat
        y = ad.concat(*preds)
        return y, self._record(state, betas, alphas)

    def predict(self, X, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode predictions as a plain array, without recording a graph."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            return self.forward(X)[0].data.copy()
        out = [self.forward(X[k:k + batch_size])[0].data for k in range(0, len(X), batch_size)]
        return np.concatenate(out, axis=0)

    def _stack_axis(self, rows: list[np.ndarray]) -> np.ndarray | None:
        if not rows:
            return None
        return np.stack(rows, axis=-2)

    def _record(self, state, betas, alphas) -> AttentionRecord:
        return AttentionRecord(self._stack_axis(betas), self._stack_axis(alphas), self.arch)

    def _start(self, X, mode, rng):
        raise NotImplementedError

    def _decode_step(self, state, y_prev, mode, rng):
        raise NotImplementedError


def is_finite_model(model: Forecaster) -> bool:
    return all(np.all(np.isfinite(t.data)) for t in model.param_tensors())
