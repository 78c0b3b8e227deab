"""Patch/tube embedding, sinusoidal positions and pre-norm transformer stacks.

The same stack implementation backs the frame encoder, the latent attention
module and the decoder.  There is no class token: pooled representations
are token averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .params import ModelParams, add_layernorm, add_linear
from .tensor import Tensor


@dataclass(frozen=True)
class PatchGrid:
    image_size: int = 224
    patch_size: int = 14
    channels: int = 1
    time_patch: int = 1

    def __post_init__(self):
        if self.patch_size <= 0 or self.image_size % self.patch_size:
            raise DimensionError(
                f"patch size {self.patch_size} does not divide image size {self.image_size}"
            )
        if self.time_patch < 1:
            raise DimensionError(f"time_patch must be >= 1, got {self.time_patch}")

    @property
    def side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens_per_frame(self) -> int:
        return self.side**2

    @property
    def patch_dim(self) -> int:
        """Pixels per token (one tube of ``time_patch`` frames)."""
        return self.patch_size**2 * self.channels * self.time_patch


@dataclass(frozen=True)
class BlockConfig:
    embed_dim: int
    num_layers: int
    num_heads: int
    mlp_ratio: float = 4.0
    qkv_bias: bool = True
    # Sorted key-axis reductions; makes self-attention bitwise permutation
    # equivariant at the cost of an (N, N, d) intermediate.
    order_invariant: bool = True

    def __post_init__(self):
        if self.num_layers < 0:
            raise DimensionError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise DimensionError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )

    @property
    def hidden_dim(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))


# -- positional encodings --------------------------------------------------
def sincos_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sin/cos features of integer positions; any ``dim`` >= 0."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    half = (dim + 1) // 2
    if dim == 0:
        return np.zeros((positions.size, 0))
    omega = 1.0 / 10000 ** (np.arange(half, dtype=np.float64) / max(half, 1))
    angles = positions[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)[:, :dim]


def sincos_2d(side: int, dim: int) -> np.ndarray:
    """(side*side, dim) table in row-major patch order: rows first, then columns."""
    d_row = dim // 2
    rows, cols = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return np.concatenate(
        [sincos_1d(rows.ravel(), d_row), sincos_1d(cols.ravel(), dim - d_row)], axis=1
    )


def sincos_3d(n_time: int, side: int, dim: int) -> np.ndarray:
    """(n_time*side*side, dim) table; time-major, then rows, then columns.

    A quarter of the channels encode time, the rest split between rows and
    columns, so tokens at the same spatial site differ only in the time block.
    """
    d_time = dim // 4
    spatial = sincos_2d(side, dim - d_time)
    times = sincos_1d(np.arange(n_time), d_time)
    return np.concatenate(
        [np.repeat(times, side * side, axis=0), np.tile(spatial, (n_time, 1))], axis=1
    )


def time_channels(dim: int) -> slice:
    """Channels of ``sincos_3d`` that carry the temporal position."""
    return slice(0, dim // 4)


# -- patchify ----------------------------------------------------------------
def patchify(frames: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """(..., C, H, W) -> (..., T, C*p*p) in row-major patch order."""
    *lead, c, h, w = frames.shape
    if c != grid.channels or h != grid.image_size or w != grid.image_size:
        raise DimensionError(
            f"frame shape {(c, h, w)} does not match grid "
            f"{(grid.channels, grid.image_size, grid.image_size)}"
        )
    p, s = grid.patch_size, grid.side
    x = frames.reshape(*lead, c, s, p, s, p)
    n = len(lead)
    x = x.transpose(*range(n), n + 1, n + 3, n, n + 2, n + 4)
    return x.reshape(*lead, s * s, c * p * p)


def unpatchify(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    *lead, t, _ = patches.shape
    p, s, c = grid.patch_size, grid.side, grid.channels
    if t != s * s:
        raise DimensionError(f"expected {s * s} patches, got {t}")
    x = patches.reshape(*lead, s, s, c, p, p)
    n = len(lead)
    x = x.transpose(*range(n), n + 2, n, n + 3, n + 1, n + 4)
    return x.reshape(*lead, c, s * p, s * p)


def tubify(clip: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """(..., F, C, H, W) -> (..., F/time_patch, T, time_patch*C*p*p)."""
    *lead, f, c, h, w = clip.shape
    tp = grid.time_patch
    if f % tp:
        raise DimensionError(f"time_patch {tp} does not divide frame count {f}")
    patches = patchify(clip, grid)  # (..., F, T, C*p*p)
    t, d = patches.shape[-2:]
    x = patches.reshape(*lead, f // tp, tp, t, d)
    x = np.swapaxes(x, -3, -2)  # (..., F/tp, T, tp, d)
    return x.reshape(*lead, f // tp, t, tp * d)


# -- embedding -----------------------------------------------------------------
def init_embed(params: ModelParams, seed: int, grid: PatchGrid, dim: int, name: str = "patch_embed") -> None:
    add_linear(params, seed, name, grid.patch_dim, dim)


def embed_tokens(patches, positions: np.ndarray, params: ModelParams, name: str = "patch_embed") -> Tensor:
    """Learned linear map of flattened patches plus fixed position features."""
    x = T.as_tensor(patches, like=params[f"{name}.w"])
    out = T.linear(x, params[f"{name}.w"], params[f"{name}.b"])
    return out + np.asarray(positions, dtype=out.dtype)


def patch_embed(frame, grid: PatchGrid, params: ModelParams, name: str = "patch_embed") -> Tensor:
    """One frame (C, H, W) -> (tokens_per_frame, D)."""
    data = frame.data if isinstance(frame, Tensor) else np.asarray(frame)
    if data.ndim == 2:
        data = data[None]
    if grid.time_patch != 1:
        raise DimensionError("patch_embed is the image path; use tube_embed for time_patch > 1")
    dim = params[f"{name}.w"].shape[1]
    return embed_tokens(patchify(data, grid), sincos_2d(grid.side, dim), params, name)


def tube_embed(clip, grid: PatchGrid, params: ModelParams, name: str = "patch_embed") -> Tensor:
    """One clip (F, C, H, W) -> ((F/time_patch)*tokens_per_frame, D), joint space-time positions."""
    data = clip.data if isinstance(clip, Tensor) else np.asarray(clip)
    if data.ndim == 3:
        data = data[:, None]
    tubes = tubify(data, grid)
    n_time = tubes.shape[0]
    dim = params[f"{name}.w"].shape[1]
    flat = tubes.reshape(n_time * grid.tokens_per_frame, grid.patch_dim)
    return embed_tokens(flat, sincos_3d(n_time, grid.side, dim), params, name)


# -- transformer ---------------------------------------------------------------
def init_stack(params: ModelParams, seed: int, prefix: str, cfg: BlockConfig) -> None:
    d = cfg.embed_dim
    for i in range(cfg.num_layers):
        b = f"{prefix}.blocks.{i}"
        add_layernorm(params, f"{b}.ln1", d)
        add_linear(params, seed, f"{b}.attn.qkv", d, 3 * d, bias=cfg.qkv_bias)
        add_linear(params, seed, f"{b}.attn.proj", d, d)
        add_layernorm(params, f"{b}.ln2", d)
        add_linear(params, seed, f"{b}.mlp.fc1", d, cfg.hidden_dim)
        add_linear(params, seed, f"{b}.mlp.fc2", cfg.hidden_dim, d)
    if cfg.num_layers:
        add_layernorm(params, f"{prefix}.norm", d)


def self_attention(x: Tensor, params: ModelParams, prefix: str, cfg: BlockConfig) -> Tensor:
    *lead, n, d = x.shape
    h = cfg.num_heads
    qkv = T.linear(x, params[f"{prefix}.qkv.w"], params.get(f"{prefix}.qkv.b"))
    qkv = qkv.reshape(*lead, n, 3, h, d // h)
    k_ = len(lead)
    # -> (3, ..., heads, n, head_dim)
    qkv = qkv.transpose(k_ + 1, *range(k_), k_ + 2, k_, k_ + 3)
    q, k, v = (T.index_select(qkv, i) for i in range(3))
    out = T.attention(q, k, v, order_invariant=cfg.order_invariant)
    out = out.transpose(*range(k_), k_ + 1, k_, k_ + 2).reshape(*lead, n, d)
    return T.linear(out, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])


def transformer_block(x: Tensor, params: ModelParams, prefix: str, cfg: BlockConfig) -> Tensor:
    h = T.layernorm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = x + self_attention(h, params, f"{prefix}.attn", cfg)
    h = T.layernorm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = T.gelu(T.linear(h, params[f"{prefix}.mlp.fc1.w"], params[f"{prefix}.mlp.fc1.b"]))
    return x + T.linear(h, params[f"{prefix}.mlp.fc2.w"], params[f"{prefix}.mlp.fc2.b"])


def transformer_stack(tokens: Tensor, cfg: BlockConfig, params: ModelParams, prefix: str) -> Tensor:
    """Pre-norm blocks plus a final layernorm; a 0-layer stack is the exact identity."""
    if tokens.shape[-1] != cfg.embed_dim:
        raise DimensionError(f"{prefix}: token dim {tokens.shape[-1]} != embed_dim {cfg.embed_dim}")
    if cfg.num_layers == 0:
        return tokens
    x = tokens
    for i in range(cfg.num_layers):
        x = transformer_block(x, params, f"{prefix}.blocks.{i}", cfg)
    return T.layernorm(x, params[f"{prefix}.norm.g"], params[f"{prefix}.norm.b"])
