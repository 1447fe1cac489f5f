from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

ARCHS = ("stam", "stam_lite", "enc_dec", "lstm_att", "da_rnn")
ATTENTION_ARCHS = ("stam", "stam_lite", "lstm_att", "da_rnn")
EMBEDDINGS = ("shared", "per_variable")


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and architecture choice.

    ``n_vars`` (N), ``input_len`` (Tx) and ``output_len`` (Ty) describe the
    data; ``enc_dim`` (m), ``dec_dim`` (p) and ``context_dim`` (q) size the
    network.  ``embedding`` selects one spatial embedder shared by all
    variables (default) or one per variable.
    """

    n_vars: int
    input_len: int
    output_len: int
    enc_dim: int = 32
    dec_dim: int = 32
    context_dim: int = 4
    dropout_rate: float = 0.2
    arch: str = "stam"
    seed: int = 0
    embedding: str = "shared"
    align_bias_init: float = 0.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        out = []
        for name in ("n_vars", "input_len", "output_len", "enc_dim", "dec_dim", "context_dim"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                out.append(f"model.{name} must be an integer >= 1 (got {v!r})")
        if isinstance(self.context_dim, int) and isinstance(self.enc_dim, int):
            if self.context_dim > self.enc_dim:
                out.append(
                    f"model.context_dim ({self.context_dim}) must not exceed enc_dim ({self.enc_dim})"
                )
        if not isinstance(self.dropout_rate, (int, float)) or not 0.0 <= self.dropout_rate < 1.0:
            out.append(f"model.dropout_rate must be in [0, 1) (got {self.dropout_rate!r})")
        if self.arch not in ARCHS:
            out.append(f"model.arch must be one of {', '.join(ARCHS)} (got {self.arch!r})")
        if self.embedding not in EMBEDDINGS:
            out.append(f"model.embedding must be one of {', '.join(EMBEDDINGS)} (got {self.embedding!r})")
        if not isinstance(self.align_bias_init, (int, float)) or isinstance(self.align_bias_init, bool):
            out.append(f"model.align_bias_init must be a number (got {self.align_bias_init!r})")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            out.append(f"model.seed must be an integer (got {self.seed!r})")
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"model.{k} is not a known field" for k in unknown])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"model: {exc}") from None
