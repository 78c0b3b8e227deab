"""Line-delimited JSON study manifests with PGM frames or .npy view blobs.

The first line may be a header ``{"kind": "header", "codes": [...],
"predicates": [...]}``.  Every other line is one study::

    {"study_id": "...", "split": "train",
     "views": [{"frames": ["a/0000.pgm", ...]} | {"blob": "a/view0.npy"}],
     "labels": [0, 1, ...], "target": 41.2, "factors": {...}}

Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from ..errors import DataError
from .study import Study


def write_pgm(path: Path, frame: np.ndarray) -> None:
    if frame.dtype != np.uint8 or frame.ndim != 2:
        raise DataError(f"PGM frames must be 2-D uint8, got {frame.dtype} {frame.shape}")
    Image.fromarray(frame).save(path, format="PPM")


def read_pgm(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise DataError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()


@dataclass
class Manifest:
    """Lazily streamed dataset handle."""

    path: Path
    codes: list[str] = field(default_factory=list)
    predicates: list[str] = field(default_factory=list)

    @classmethod
    def open(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        m = cls(path)
        first = m._first_record()
        if first is not None and first.get("kind") == "header":
            m.codes = list(first.get("codes", []))
            m.predicates = list(first.get("predicates", []))
        return m

    def _lines(self) -> Iterator[tuple[int, dict]]:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{self.path}:{lineno}: invalid JSON ({exc.msg})") from None

    def _first_record(self) -> dict | None:
        for _, rec in self._lines():
            return rec
        return None

    def records(self) -> Iterator[dict]:
        for lineno, rec in self._lines():
            if rec.get("kind") == "header":
                continue
            if "study_id" not in rec or "views" not in rec:
                raise DataError(f"{self.path}:{lineno}: record needs study_id and views")
            yield rec

    def __iter__(self) -> Iterator[Study]:
        for rec in self.records():
            yield self._load(rec)

    def __len__(self) -> int:
        return sum(1 for _ in self.records())

    def studies(self, split: str | None = None) -> list[Study]:
        return [s for s in self if split is None or s.split == split]

    def _load(self, rec: dict) -> Study:
        sid = str(rec["study_id"])
        root = self.path.parent
        views = []
        for j, entry in enumerate(rec["views"]):
            if "blob" in entry:
                p = root / entry["blob"]
                if not p.exists():
                    raise DataError(f"study {sid} view {j}: missing blob {p}")
                arr = np.load(p)
                if arr.dtype != np.uint8:
                    raise DataError(f"study {sid} view {j}: blob {p} is {arr.dtype}, expected uint8")
            elif "frames" in entry:
                frames = []
                for fp in entry["frames"]:
                    p = root / fp
                    if not p.exists():
                        raise DataError(f"study {sid} view {j}: missing frame {p}")
                    frames.append(read_pgm(p))
                if not frames:
                    raise DataError(f"study {sid} view {j}: no frames")
                if len({f.shape for f in frames}) != 1:
                    raise DataError(f"study {sid} view {j}: frames differ in size")
                arr = np.stack(frames)
            else:
                raise DataError(f"study {sid} view {j}: entry needs 'frames' or 'blob'")
            views.append(arr)
        labels = rec.get("labels")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.uint8)
            if self.codes and len(labels) != len(self.codes):
                raise DataError(f"study {sid}: {len(labels)} labels but the manifest lists {len(self.codes)} codes")
        target = rec.get("target")
        return Study(
            study_id=sid,
            views=views,
            labels=labels,
            target=None if target is None else float(target),
            factors=rec.get("factors"),
            split=rec.get("split", "train"),
        ).validate()


def load_manifest(path: str | Path) -> Manifest:
    return Manifest.open(path)


def write_dataset(
    studies: list[Study],
    out_dir: str | Path,
    codes: list[str] | None = None,
    predicates: list[str] | None = None,
    frame_format: str = "pgm",
    name: str = "manifest.jsonl",
) -> Path:
    """Write frames and a manifest; returns the manifest path."""
    if frame_format not in ("pgm", "npy"):
        raise DataError(f"unknown frame format {frame_format!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"kind": "header", "codes": codes or [], "predicates": predicates or []})]
    for s in studies:
        s.validate()
        sdir = out / "frames" / s.study_id
        sdir.mkdir(parents=True, exist_ok=True)
        views = []
        for j, view in enumerate(s.views):
            if frame_format == "npy":
                p = sdir / f"view{j}.npy"
                np.save(p, view.astype(np.uint8))
                views.append({"blob": p.relative_to(out).as_posix()})
            else:
                rel = []
                for t, frame in enumerate(view):
                    p = sdir / f"v{j}_f{t:04d}.pgm"
                    write_pgm(p, frame)
                    rel.append(p.relative_to(out).as_posix())
                views.append({"frames": rel})
        rec = {"study_id": s.study_id, "split": s.split, "views": views}
        if s.labels is not None:
            rec["labels"] = [int(x) for x in s.labels]
        if s.target is not None:
            rec["target"] = float(s.target)
        if s.factors is not None:
            rec["factors"] = s.factors
        lines.append(json.dumps(rec))
    path = out / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
