"""Encoder patch masking, latent token dropping and decoder-order restoration.

Token order inside a study is view-major, then temporal slot (frame, or tube
for the video variants), then the sorted visible patch index.  Every sampled
plan carries enough bookkeeping to map each surviving latent token back to
its ``(view, frame, patch)`` coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, IntegrityError
from .tensor import Tensor


def mask_count(tokens: int, ratio: float) -> int:
    """Round-half-up number of masked tokens."""
    return int(math.floor(ratio * tokens + 0.5))


@dataclass
class MaskPlan:
    """Per-study masking bookkeeping.

    ``visible_idx`` and ``masked_idx`` have shape (views, slots, k) and hold
    sorted patch indices; ``latent_dropped`` lists positions (into the study's
    encoder-visible token order) removed before latent attention.
    """

    visible_idx: np.ndarray
    masked_idx: np.ndarray
    tokens_per_frame: int
    alpha_e: float
    alpha_la: float = 0.0
    latent_dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def num_views(self) -> int:
        return self.visible_idx.shape[0]

    @property
    def num_slots(self) -> int:
        return self.visible_idx.shape[1]

    @property
    def num_visible(self) -> int:
        return int(self.visible_idx.size)

    @property
    def is_full(self) -> bool:
        return self.masked_idx.shape[-1] == 0 and self.latent_dropped.size == 0

    def coords(self) -> np.ndarray:
        """(N, 3) array of (view, slot, patch) for every encoder-visible token."""
        v, f, k = self.visible_idx.shape
        views = np.broadcast_to(np.arange(v)[:, None, None], (v, f, k))
        slots = np.broadcast_to(np.arange(f)[None, :, None], (v, f, k))
        return np.stack([views.ravel(), slots.ravel(), self.visible_idx.ravel()], axis=1)

    def latent_keep(self) -> np.ndarray:
        """Sorted positions of tokens that survive latent masking."""
        keep = np.ones(self.num_visible, dtype=bool)
        keep[self.latent_dropped] = False
        return np.flatnonzero(keep)

    def dropped_coords(self) -> np.ndarray:
        return self.coords()[self.latent_dropped]

    def validate(self) -> None:
        t = self.tokens_per_frame
        if self.visible_idx.shape[:2] != self.masked_idx.shape[:2]:
            raise IntegrityError("visible/masked index tables disagree on (views, slots)")
        both = np.concatenate([self.visible_idx, self.masked_idx], axis=-1)
        expected = np.arange(t)
        if both.shape[-1] != t or not np.all(np.sort(both, axis=-1) == expected):
            raise IntegrityError("visible and masked indices do not partition the token range")
        for arr in (self.visible_idx, self.masked_idx):
            if arr.shape[-1] > 1 and np.any(np.diff(arr, axis=-1) <= 0):
                raise IntegrityError("mask indices must be sorted")
        if self.latent_dropped.size:
            if self.latent_dropped.min() < 0 or self.latent_dropped.max() >= self.num_visible:
                raise IntegrityError("latent-dropped position outside the encoder-visible set")
            if np.unique(self.latent_dropped).size != self.latent_dropped.size:
                raise IntegrityError("duplicate latent-dropped positions")
        if not 0.0 <= self.alpha_la < 1.0:
            raise IntegrityError(f"alpha_la {self.alpha_la} outside [0, 1)")


def sample_encoder_mask(
    tokens: int,
    alpha_e: float,
    rng: np.random.Generator,
    tube_mode: bool = False,
    frames: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``frames`` independent masks (or one shared tube mask).

    Returns sorted ``(visible, masked)`` index arrays of shape (frames, k).
    """
    if not 0.0 < alpha_e < 1.0:
        raise ConfigError(f"encoder mask ratio must be in (0, 1), got {alpha_e}")
    n_mask = mask_count(tokens, alpha_e)
    if n_mask == 0 or n_mask == tokens:
        raise ConfigError(
            f"mask ratio {alpha_e} on {tokens} tokens leaves {tokens - n_mask} visible and {n_mask} masked"
        )
    draws = 1 if tube_mode else frames
    order = np.argsort(rng.random((draws, tokens)), axis=1, kind="stable")
    visible = np.sort(order[:, n_mask:], axis=1)
    masked = np.sort(order[:, :n_mask], axis=1)
    if tube_mode:
        visible = np.repeat(visible, frames, axis=0)
        masked = np.repeat(masked, frames, axis=0)
    return visible, masked


def sample_latent_mask(coords: np.ndarray, alpha_la: float, rng: np.random.Generator) -> np.ndarray:
    """Positions (into ``coords``) of a uniform ``round(alpha_la*N)`` subset, sorted."""
    if not 0.0 <= alpha_la < 1.0:
        raise ConfigError(f"latent mask ratio must be in [0, 1), got {alpha_la}")
    n = len(coords)
    n_drop = mask_count(n, alpha_la)
    if n_drop == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=n_drop, replace=False)).astype(np.int64)


def sample_plan(
    views: int,
    slots: int,
    tokens: int,
    alpha_e: float,
    alpha_la: float,
    rng: np.random.Generator,
    tube_mode: bool = False,
) -> MaskPlan:
    """Encoder masks for every (view, slot) followed by latent masking."""
    vis, msk = [], []
    for _ in range(views):
        v, m = sample_encoder_mask(tokens, alpha_e, rng, tube_mode=tube_mode, frames=slots)
        vis.append(v)
        msk.append(m)
    plan = MaskPlan(np.stack(vis), np.stack(msk), tokens, alpha_e, alpha_la)
    plan.latent_dropped = sample_latent_mask(plan.coords(), alpha_la, rng)
    return plan


def full_plan(views: int, slots: int, tokens: int) -> MaskPlan:
    """No masking at all (finetune / evaluation path)."""
    visible = np.broadcast_to(np.arange(tokens), (views, slots, tokens)).copy()
    return MaskPlan(visible, np.zeros((views, slots, 0), dtype=np.int64), tokens, 0.0, 0.0)


def restore_index(plan: MaskPlan) -> np.ndarray:
    """(views, slots, T) map from decoder position to surviving-token row, or -1 for a mask token."""
    v, f, _ = plan.visible_idx.shape
    out = np.full((v, f, plan.tokens_per_frame), -1, dtype=np.int64)
    coords = plan.coords()
    keep = plan.latent_keep()
    kept = coords[keep]
    out[kept[:, 0], kept[:, 1], kept[:, 2]] = np.arange(len(keep))
    return out


def restore_order(tokens: Tensor, plan: MaskPlan, mask_token: Tensor, positions: np.ndarray) -> Tensor:
    """Scatter surviving tokens back to their patch positions.

    ``tokens`` is (n_kept, D) in the plan's order; masked and latent-dropped
    positions receive ``mask_token`` plus ``positions`` (broadcastable to
    (slots, T, D)).  Returns (views, slots, T, D).
    """
    index = restore_index(plan)
    n_kept = len(plan.latent_keep())
    if tokens.shape[0] != n_kept:
        raise IntegrityError(f"plan expects {n_kept} surviving tokens, got {tokens.shape[0]}")
    return restore_from_index(tokens, index, mask_token, positions)


def restore_from_index(tokens: Tensor, index: np.ndarray, mask_token: Tensor, positions: np.ndarray) -> Tensor:
    d = tokens.shape[-1]
    table = T.concat([tokens, mask_token.reshape(1, d)], axis=0)
    is_mask = index < 0
    rows = np.where(is_mask, len(tokens), index)
    out = T.gather(table, rows, axis=0)
    pos = np.broadcast_to(np.asarray(positions, dtype=out.dtype), index.shape[1:] + (d,))
    return out + np.where(is_mask[..., None], pos, 0.0).astype(out.dtype)
