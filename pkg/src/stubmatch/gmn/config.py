"""Network and training hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import TrainingError

EMBEDDING_DIM = 256

LOSS_REINTERPRETED = "reinterpreted"  # max(0, margin - label * similarity)
LOSS_AS_WRITTEN = "as_written"  # max(0, margin - label * (1 - similarity))


@dataclass(frozen=True)
class GmnConfig:
    node_hidden_dim: int = 32
    message_dim: int = 64
    propagation_rounds: int = 5
    embedding_dim: int = EMBEDDING_DIM
    margin: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_pairs: int = 32
    seed: int = 0
    loss_form: str = LOSS_REINTERPRETED

    def __post_init__(self) -> None:
        if self.embedding_dim != EMBEDDING_DIM:
            raise TrainingError(f"embedding_dim is fixed at {EMBEDDING_DIM}")
        if not 0 < self.margin <= 1:
            raise TrainingError("margin must lie in (0, 1]")
        for name in ("node_hidden_dim", "message_dim", "propagation_rounds", "epochs", "batch_pairs"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be non-negative")
        if self.loss_form not in (LOSS_REINTERPRETED, LOSS_AS_WRITTEN):
            raise TrainingError(f"unknown loss_form {self.loss_form!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GmnConfig":
        return cls(**data)
