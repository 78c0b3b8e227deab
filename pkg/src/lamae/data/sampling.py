"""View and frame sampling, plus the optional spatial augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import DataError
from .study import Study


@dataclass(frozen=True)
class SampledIndex:
    views: np.ndarray  # (n_views,) view indices into the study
    frames: np.ndarray  # (n_views, n_frames) frame indices within each chosen view

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(int(v), int(f)) for v, row in zip(self.views, self.frames) for f in row]


def window_indices(length: int, n_frames: int, window: int, start: int = 0) -> np.ndarray:
    """Equally spaced frames inside a window starting at ``start``.

    Videos shorter than the window fall back to start 0 with stride
    ``max(1, length // n_frames)`` and indices clamped to the last frame.
    """
    if length < 1:
        raise DataError("cannot sample frames from an empty video")
    if length >= window:
        if not 0 <= start <= length - window:
            raise DataError(f"window start {start} does not fit a {length}-frame video")
        return start + (window // n_frames) * np.arange(n_frames)
    stride = max(1, length // n_frames)
    return np.minimum(stride * np.arange(n_frames), length - 1)


def choose_views(n_available: int, n_views: int, rng: np.random.Generator) -> np.ndarray:
    """Without replacement; if the study is short on views, every view once then fill with replacement."""
    if n_available >= n_views:
        return rng.choice(n_available, size=n_views, replace=False)
    fill = rng.choice(n_available, size=n_views - n_available, replace=True)
    return rng.permutation(np.concatenate([np.arange(n_available), fill]))


def sample_views_frames(
    study: Study,
    n_views: int = 8,
    n_frames: int = 8,
    window: int = 32,
    rng: np.random.Generator | None = None,
) -> SampledIndex:
    if rng is None:
        rng = np.random.default_rng()
    if study.num_views == 0:
        raise DataError(f"study {study.study_id}: no views")
    views = choose_views(study.num_views, n_views, rng)
    frames = []
    for v in views:
        length = study.views[v].shape[0]
        start = int(rng.integers(0, length - window + 1)) if length >= window else 0
        frames.append(window_indices(length, n_frames, window, start))
    return SampledIndex(views.astype(np.int64), np.stack(frames).astype(np.int64))


def augment_view(
    frames: np.ndarray,
    rng: np.random.Generator,
    scale: tuple[float, float] = (0.6, 1.0),
    ratio: tuple[float, float] = (0.9, 1.1),
    max_rotation: float = 10.0,
) -> np.ndarray:
    """Random resized crop and rotation, shared by all frames of one view.

    ``frames`` is (F, H, W) float; output has the same shape.
    """
    f, h, w = frames.shape
    area = rng.uniform(*scale)
    aspect = np.exp(rng.uniform(np.log(ratio[0]), np.log(ratio[1])))
    ch = min(1.0, np.sqrt(area / aspect))
    cw = min(1.0, np.sqrt(area * aspect))
    cy = rng.uniform(ch / 2, 1 - ch / 2) * h
    cx = rng.uniform(cw / 2, 1 - cw / 2) * w
    theta = np.deg2rad(rng.uniform(-max_rotation, max_rotation))
    # Output pixel -> input pixel: centre, scale to the crop, rotate, recentre on the crop.
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    mat = rot @ np.diag([ch, cw])
    centre_out = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = np.array([cy - 0.5, cx - 0.5]) - mat @ centre_out
    return np.stack(
        [ndimage.affine_transform(fr, mat, offset=offset, order=1, mode="constant", cval=0.0) for fr in frames]
    )


def gather_pixels(
    study: Study,
    index: SampledIndex,
    augment_rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> np.ndarray:
    """(n_views, n_frames, H, W) pixels scaled to [0, 1]."""
    out = []
    for v, rows in zip(index.views, index.frames):
        clip = study.views[v][rows].astype(dtype) / 255.0
        if augment_rng is not None:
            clip = augment_view(clip, augment_rng).astype(dtype)
        out.append(clip)
    return np.stack(out)
