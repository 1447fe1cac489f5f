"""Closed-form parameter counts and inference-cost estimates."""

from __future__ import annotations

from ..errors import ConfigError
from .config import ModelConfig


def lstm_params(input_dim: int, state_dim: int) -> int:
    return 4 * (input_dim * state_dim + state_dim * state_dim + state_dim)


def dense_params(in_dim: int, out_dim: int, bias: bool = True) -> int:
    return in_dim * out_dim + (out_dim if bias else 0)


def param_count(config: ModelConfig) -> int:
    """Trainable parameter total for ``config``, without building a model."""
    N, Tx = config.n_vars, config.input_len
    m, p, q = config.enc_dim, config.dec_dim, config.context_dim
    embed = dense_params(Tx, m) * (1 if config.embedding == "shared" else N)
    encoder = lstm_params(N, m) + lstm_params(m, m)
    align = dense_params(p + m, 1)
    decoder = lstm_params(q + 1, p)
    arch = config.arch
    if arch == "stam":
        return embed + encoder + 2 * align + 2 * dense_params(m, q) + 2 * decoder + dense_params(2 * p, 1)
    if arch == "stam_lite":
        return embed + encoder + 2 * align + dense_params(2 * m, q) + decoder + dense_params(p, 1)
    if arch == "enc_dec":
        return encoder + dense_params(m, q) + decoder + dense_params(p, 1)
    if arch == "lstm_att":
        return encoder + align + dense_params(m, q) + decoder + dense_params(p, 1)
    if arch == "da_rnn":
        input_attention = dense_params(2 * m, Tx) + dense_params(Tx, Tx, False) + dense_params(Tx, 1, False)
        return lstm_params(N, m) + input_attention + align + dense_params(m, q) + decoder + dense_params(p, 1)
    raise ConfigError(f"unknown arch {arch!r}")


def flop_estimate(config: ModelConfig) -> int:
    """Inference cost: encoder + attention + decoder terms.

    ``8(Nm + m^2 + 2m)Tx + (p + 2 + 2m)(N + Tx)Ty + k Ty(p^2 + pq + 3p)`` with
    ``k = 8`` for STAM (two decoder LSTMs) and ``k = 4`` for STAM-Lite.
    """
    decoder_factor = {"stam": 8, "stam_lite": 4}.get(config.arch)
    if decoder_factor is None:
        raise ConfigError(f"no cost model for arch {config.arch!r}; use stam or stam_lite")
    N, Tx, Ty = config.n_vars, config.input_len, config.output_len
    m, p, q = config.enc_dim, config.dec_dim, config.context_dim
    encoder = 8 * (N * m + m * m + 2 * m) * Tx
    attention = (p + 2 + 2 * m) * (N + Tx) * Ty
    decoder = decoder_factor * Ty * (p * p + p * q + 3 * p)
    return encoder + attention + decoder
