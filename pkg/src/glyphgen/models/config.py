"""Model hyperparameter bundle shared by all three architectures.

Fields irrelevant to a given kind are simply ignored by it; validation
covers only the invariants common to everything (positive counts, dropout
in [0, 1), twenty mixture components unless overridden).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import ConfigError

MODEL_KINDS = ("full_ns", "hlstm", "baseline")


@dataclass
class ModelConfig:
    kind: str
    # feed-forward CNN (location and termination submodels): one filter count per block
    cnn_filters: tuple[int, ...] = (16, 32, 32, 64)
    # no-pooling CNN feeding attention; the last entry is the feature-map channel count
    stroke_filters: tuple[int, ...] = (32, 64, 64)
    activation: str = "relu"
    dropout: float = 0.0
    dense_units: int = 128
    lstm_layers: int = 1
    lstm_units: int = 256
    attention_units: int = 64
    encoder_units: int = 256
    stroke_units: int = 256
    mlp_units: int = 128
    mixture_components: int = 20
    max_strokes: int = 10
    max_offsets_per_stroke: int = 30

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}, expected one of {MODEL_KINDS}")
        self.cnn_filters = tuple(int(k) for k in self.cnn_filters)
        self.stroke_filters = tuple(int(k) for k in self.stroke_filters)
        counts = (
            *self.cnn_filters,
            *self.stroke_filters,
            self.dense_units,
            self.lstm_layers,
            self.lstm_units,
            self.attention_units,
            self.encoder_units,
            self.stroke_units,
            self.mlp_units,
            self.mixture_components,
            self.max_strokes,
            self.max_offsets_per_stroke,
        )
        if any(c < 1 for c in counts):
            raise ConfigError("all size and cap hyperparameters must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_filters"] = list(self.cnn_filters)
        d["stroke_filters"] = list(self.stroke_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)
