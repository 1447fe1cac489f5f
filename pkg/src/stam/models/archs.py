"""The five forecasting architectures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ConfigError
from ..layers import LstmCell, dense_forward, lstm_step
from .base import AttentionRecord, Forecaster
from .config import ModelConfig


@dataclass
class _DecoderState:
    h: Tensor
    c: Tensor


class StamModel(Forecaster):
    """Spatial and temporal attention in the decoder, one decoder LSTM each.

    At output step j the G-decoder state queries spatial attention over the
    variable embeddings and the S-decoder state queries temporal attention
    over the encoder states.  Each context is reduced to ``q`` dims, joined
    with the previous prediction and fed to its own LSTM; the head reads both
    decoder states.
    """

    arch = "stam"
    has_spatial = True
    has_temporal = True

    def _build(self):
        c = self.config
        self._build_embedder()
        self._build_encoder()
        self._align("spatial_align")
        self._align("temporal_align")
        self._dense("reduce_G", c.enc_dim, c.context_dim, "relu")
        self._dense("reduce_S", c.enc_dim, c.context_dim, "relu")
        self._lstm("dec_G", c.context_dim + 1, c.dec_dim)
        self._lstm("dec_S", c.context_dim + 1, c.dec_dim)
        self._dense("head", 2 * c.dec_dim, 1)

    def _start(self, X, mode, rng):
        batch = X.shape[0] if X.ndim == 3 else None
        return {
            "D": self.spatial_embed(X),
            "H": self.encode(X, mode, rng),
            "G": _DecoderState(*self.layers["dec_G"].zero_state(batch)),
            "S": _DecoderState(*self.layers["dec_S"].zero_state(batch)),
        }

    def stam_decode_step(self, state, y_prev: Tensor, mode: str = "eval", rng=None):
        rng = self.dropout_rng if rng is None else rng
        G, S = state["G"], state["S"]
        beta, g = self.spatial_attention(G.h, state["D"])
        alpha, s = self.temporal_attention(S.h, state["H"])
        r_G = ad.concat(dense_forward(self.layers["reduce_G"], g), y_prev)
        r_S = ad.concat(dense_forward(self.layers["reduce_S"], s), y_prev)
        G.h, G.c = lstm_step(self.layers["dec_G"], G.h, G.c, r_G)
        S.h, S.c = lstm_step(self.layers["dec_S"], S.h, S.c, r_S)
        joined = ad.concat(self._dropout(G.h, mode, rng), self._dropout(S.h, mode, rng))
        return dense_forward(self.layers["head"], joined), beta, alpha

    _decode_step = stam_decode_step


class StamLiteModel(Forecaster):
    """Single decoder LSTM fed the reduced concatenation of both contexts."""

    arch = "stam_lite"
    has_spatial = True
    has_temporal = True

    def _build(self):
        c = self.config
        self._build_embedder()
        self._build_encoder()
        self._align("spatial_align")
        self._align("temporal_align")
        self._dense("reduce_GS", 2 * c.enc_dim, c.context_dim, "relu")
        self._lstm("decoder", c.context_dim + 1, c.dec_dim)
        self._dense("head", c.dec_dim, 1)

    def _start(self, X, mode, rng):
        batch = X.shape[0] if X.ndim == 3 else None
        return {
            "D": self.spatial_embed(X),
            "H": self.encode(X, mode, rng),
            "dec": _DecoderState(*self.layers["decoder"].zero_state(batch)),
        }

    def _decode_step(self, state, y_prev, mode, rng):
        dec = state["dec"]
        beta, g = self.spatial_attention(dec.h, state["D"])
        alpha, s = self.temporal_attention(dec.h, state["H"])
        r = ad.concat(dense_forward(self.layers["reduce_GS"], ad.concat(g, s)), y_prev)
        dec.h, dec.c = lstm_step(self.layers["decoder"], dec.h, dec.c, r)
        y = dense_forward(self.layers["head"], self._dropout(dec.h, mode, rng))
        return y, beta, alpha


class EncDecModel(Forecaster):
    """No attention: the last encoder state, reduced to q dims, is repeated
    as decoder input at every output step."""

    arch = "enc_dec"

    def _build(self):
        c = self.config
        self._build_encoder()
        self._dense("reduce", c.enc_dim, c.context_dim, "relu")
        self._lstm("decoder", c.context_dim + 1, c.dec_dim)
        self._dense("head", c.dec_dim, 1)

    def _start(self, X, mode, rng):
        batch = X.shape[0] if X.ndim == 3 else None
        H = self.encode(X, mode, rng)
        return {
            "r": dense_forward(self.layers["reduce"], H[-1]),
            "dec": _DecoderState(*self.layers["decoder"].zero_state(batch)),
        }

    def _decode_step(self, state, y_prev, mode, rng):
        dec = state["dec"]
        dec.h, dec.c = lstm_step(self.layers["decoder"], dec.h, dec.c, ad.concat(state["r"], y_prev))
        y = dense_forward(self.layers["head"], self._dropout(dec.h, mode, rng))
        return y, None, None


class LstmAttModel(Forecaster):
    """Encoder-decoder with temporal attention only."""

    arch = "lstm_att"
    has_temporal = True

    def _build(self):
        self._build_encoder()
        self._build_decoder()

    def _build_decoder(self):
        c = self.config
        self._align("temporal_align")
        self._dense("reduce", c.enc_dim, c.context_dim, "relu")
        self._lstm("decoder", c.context_dim + 1, c.dec_dim)
        self._dense("head", c.dec_dim, 1)

    def _start(self, X, mode, rng):
        batch = X.shape[0] if X.ndim == 3 else None
        return {
            "H": self.encode(X, mode, rng),
            "dec": _DecoderState(*self.layers["decoder"].zero_state(batch)),
        }

    def _decode_step(self, state, y_prev, mode, rng):
        dec = state["dec"]
        alpha, s = self.temporal_attention(dec.h, state["H"])
        r = ad.concat(dense_forward(self.layers["reduce"], s), y_prev)
        dec.h, dec.c = lstm_step(self.layers["decoder"], dec.h, dec.c, r)
        y = dense_forward(self.layers["head"], self._dropout(dec.h, mode, rng))
        return y, None, alpha


class DaRnnModel(LstmAttModel):
    """Input attention inside a single-layer encoder, temporal attention in
    the decoder.

    At encoder step t the weight of variable i is
    ``softmax_i(v . tanh(W [h_{t-1}; c_{t-1}] + U x^i))`` where ``x^i`` is the
    variable's whole input-window series, so even the first weighted step
    depends on later inputs.  The alignment hidden size is Tx.
    """

    arch = "da_rnn"
    has_spatial = True
    has_temporal = True

    def _build(self):
        c = self.config
        self._lstm("encoder", c.n_vars, c.enc_dim)
        self._dense("input_align_state", 2 * c.enc_dim, c.input_len)
        self._dense("input_align_series", c.input_len, c.input_len, bias=False)
        self._dense("input_align_v", c.input_len, 1, bias=False)
        self._build_decoder()

    def _encode_weighted(self, X, mode, rng):
        cell: LstmCell = self.layers["encoder"]
        batch = X.shape[0] if X.ndim == 3 else None
        h, c = cell.zero_state(batch)
        series_terms = [
            dense_forward(self.layers["input_align_series"], self._series(X, i))
            for i in range(self.config.n_vars)
        ]
        H, X_hat, betas = [], [], []
        for t in range(self.config.input_len):
            state_term = dense_forward(self.layers["input_align_state"], ad.concat(h, c))
            energies = [
                dense_forward(self.layers["input_align_v"], ad.tanh(ad.add(state_term, u)))
                for u in series_terms
            ]
            beta = ad.softmax(ad.concat(*energies))
            x_hat = ad.mul(beta, self._step(X, t))
            h, c = lstm_step(cell, h, c, x_hat)
            H.append(self._dropout(h, mode, rng))
            X_hat.append(x_hat)
            betas.append(beta)
        return H, X_hat, betas

    def darnn_weighted_input(self, X) -> np.ndarray:
        """The weighted inputs x_hat as an (N, Tx) block (or (B, N, Tx))."""
        X = self._check_input(X)
        _, X_hat, _ = self._encode_weighted(X, "eval", None)
        return np.stack([x.data for x in X_hat], axis=-1)

    def encoder_spatial_weights(self, X) -> np.ndarray:
        X = self._check_input(X)
        _, _, betas = self._encode_weighted(X, "eval", None)
        return np.stack([b.data for b in betas], axis=-2)

    def _start(self, X, mode, rng):
        batch = X.shape[0] if X.ndim == 3 else None
        H, _, betas = self._encode_weighted(X, mode, rng)
        return {
            "H": H,
            "betas": [b.data for b in betas],
            "dec": _DecoderState(*self.layers["decoder"].zero_state(batch)),
        }

    def _record(self, state, betas, alphas) -> AttentionRecord:
        return AttentionRecord(self._stack_axis(state["betas"]), self._stack_axis(alphas), self.arch)


MODEL_CLASSES = {
    cls.arch: cls for cls in (StamModel, StamLiteModel, EncDecModel, LstmAttModel, DaRnnModel)
}


def build_model(config: ModelConfig, init: str = "random") -> Forecaster:
    """Construct the network named by ``config.arch``.

    ``init="zeros"`` gives all-zero parameters (useful for analytic checks).
    """
    try:
        cls = MODEL_CLASSES[config.arch]
    except KeyError:
        raise ConfigError(f"unknown arch {config.arch!r}") from None
    if init not in ("random", "zeros"):
        raise ConfigError(f"init must be 'random' or 'zeros', got {init!r}")
    return cls(config, init=init)
