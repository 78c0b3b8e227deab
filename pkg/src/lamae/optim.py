"""AdamW with decoupled weight decay and a linear-warmup + cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 1e-4
    warmup_epochs: float = 10.0
    warmup_start_factor: float = 0.5
    total_epochs: float | None = None
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.warmup_start_factor <= 1.0:
            raise ConfigError(f"warmup_start_factor must be in (0, 1], got {self.warmup_start_factor}")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be non-negative")
        if self.total_epochs is not None and self.warmup_epochs >= self.total_epochs:
            raise ConfigError(
                f"warmup_epochs ({self.warmup_epochs}) must be below total_epochs ({self.total_epochs})"
            )


def lr_at(epoch: float, cfg: ScheduleConfig) -> float:
    """Learning rate at a (fractional) epoch."""
    if cfg.total_epochs is None:
        raise ConfigError("schedule has no total_epochs")
    if epoch < 0 or epoch > cfg.total_epochs:
        raise ConfigError(f"epoch {epoch} outside schedule [0, {cfg.total_epochs}]")
    if epoch < cfg.warmup_epochs:
        frac = epoch / cfg.warmup_epochs
        return cfg.base_lr * (cfg.warmup_start_factor + (1.0 - cfg.warmup_start_factor) * frac)
    progress = (epoch - cfg.warmup_epochs) / (cfg.total_epochs - cfg.warmup_epochs)
    return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamW:
    """AdamW over a name -> Tensor table.

    Weight decay is applied directly to the weights (not through the
    moments) and only to tensors with two or more dimensions.
    """

    params: dict[str, Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p.data))
            self.v.setdefault(name, np.zeros_like(p.data))

    def decays(self, name: str) -> bool:
        return self.params[name].ndim >= 2

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in {name}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self.decays(name):
                p.data -= (lr * self.weight_decay) * p.data
            p.data -= (lr * update).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"optim/step": np.array([self.step_count], dtype=np.int64)}
        for name in self.params:
            out[f"optim/m/{name}"] = self.m[name]
            out[f"optim/v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["optim/step"][0])
        for name, p in self.params.items():
            for key, table in ((f"optim/m/{name}", self.m), (f"optim/v/{name}", self.v)):
                if key not in arrays:
                    raise ConfigError(f"checkpoint has no optimizer state {key}")
                if arrays[key].shape != p.shape:
                    raise ConfigError(f"optimizer state {key} has shape {arrays[key].shape}, expected {p.shape}")
                table[name] = arrays[key].astype(p.dtype).copy()
