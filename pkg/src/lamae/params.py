"""Named parameter table and keyed initialisers."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from . import rng as rngmod
from .tensor import Tensor


class ModelParams(dict):
    """``name -> Tensor`` mapping with a few conveniences.

    Names are dotted paths (``encoder.blocks.0.attn.qkv.w``); the first
    component is the parameter group used by the trainer.
    """

    def group(self, *prefixes: str) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.items():
            if any(name == p or name.startswith(p + ".") for p in prefixes):
                yield name, t

    def names(self) -> set[str]:
        return set(self.keys())

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def set_trainable(self, names: Iterable[str]) -> None:
        chosen = set(names)
        for name, t in self.items():
            t.requires_grad = name in chosen

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad) for k, v in self.items()}
        )

    def num_elements(self) -> int:
        return sum(t.size for t in self.values())


def xavier_uniform(seed: int, name: str, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rngmod.stream(seed, rngmod.INIT, name).uniform(-limit, limit, size=(fan_in, fan_out))


def normal(seed: int, name: str, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
    return rngmod.stream(seed, rngmod.INIT, name).normal(0.0, std, size=shape)


def add_linear(params: ModelParams, seed: int, name: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
    params[f"{name}.w"] = Tensor(xavier_uniform(seed, f"{name}.w", fan_in, fan_out), requires_grad=True)
    if bias:
        params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)


def add_layernorm(params: ModelParams, name: str, dim: int) -> None:
    params[f"{name}.g"] = Tensor(np.ones(dim), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(dim), requires_grad=True)
