from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import DataError


@dataclass
class Study:
    """One examination: several videos (views) of the same subject.

    Each view is a (frames, H, W) uint8 array.  ``labels`` is a multi-hot
    vector over the selected codes, ``target`` an optional percent-valued
    regression target.
    """

    study_id: str
    views: list[np.ndarray]
    labels: np.ndarray | None = None
    target: float | None = None
    factors: dict[str, Any] | None = None
    split: str = "train"
    meta: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> "Study":
        if not self.views:
            raise DataError(f"study {self.study_id}: no views")
        for j, view in enumerate(self.views):
            if view.ndim != 3:
                raise DataError(f"study {self.study_id} view {j}: expected (frames, H, W), got shape {view.shape}")
            if view.shape[0] < 1:
                raise DataError(f"study {self.study_id} view {j}: no frames")
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.ndim != 1 or not np.isin(lab, (0, 1)).all():
                raise DataError(f"study {self.study_id}: labels must be a 0/1 vector")
        if self.target is not None and not np.isfinite(self.target):
            raise DataError(f"study {self.study_id}: non-finite regression target")
        return self

    @property
    def num_views(self) -> int:
        return len(self.views)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.views[0].shape[1:]
