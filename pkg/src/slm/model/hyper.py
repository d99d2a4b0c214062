"""Model and training hyperparameters with the two named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class Hyperparams:
    d_model: int = 64
    d_index: int = 16
    lstm_units: int = 64
    lstm_layers: int = 1
    tf_layers: int = 2
    tf_heads: int = 2
    tf_ffn: int = 128
    vocab_size: int = 200
    k_idx: int = 32
    p_max: int = 8
    copy_enabled: bool = True
    root_attention: bool = True
    dropout: float = 0.0
    recurrent_dropout: float = 0.0
    lr: float = 1e-3
    decay_factor: float = 0.95
    decay_every: int = 20000
    batch_targets: int = 16
    beam_width: int = 5

    @property
    def d_type(self) -> int:
        return self.d_model - self.d_index

    def validate(self) -> "Hyperparams":
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must be >= 3 (PAD, UNK, EOS_TOK)")
        if not 0 < self.d_index < self.d_model:
            raise ConfigError("need 0 < d_index < d_model")
        if self.lstm_units % self.tf_heads:
            raise ConfigError("lstm_units must be divisible by tf_heads")
        for k in ("lstm_layers", "k_idx", "p_max", "batch_targets", "beam_width", "decay_every"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")
        if self.tf_layers < 0:
            raise ConfigError("tf_layers must be >= 0")
        for k in ("dropout", "recurrent_dropout"):
            if not 0.0 <= getattr(self, k) < 1.0:
                raise ConfigError(f"{k} must be in [0, 1)")
        return self

    @classmethod
    def desk(cls, **kw) -> "Hyperparams":
        return cls(**kw).validate()

    @classmethod
    def paper(cls, **kw) -> "Hyperparams":
        base = dict(d_model=512, d_index=64, lstm_units=256, lstm_layers=2, tf_layers=4, tf_heads=8,
                    tf_ffn=1024, vocab_size=1000, dropout=0.25, recurrent_dropout=0.5, lr=1e-4,
                    batch_targets=512, beam_width=5)
        base.update(kw)
        return cls(**base).validate()

    @classmethod
    def preset(cls, name: str, **kw) -> "Hyperparams":
        if name not in ("desk", "paper"):
            raise ConfigError(f"unknown preset {name!r}")
        return getattr(cls, name)(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d).validate()
