"""Procedural multi-view "echo" studies with known generating factors.

Each study is a filled ellipse whose size beats periodically.  Every view
shows the same ellipse under its own rotation and shift, with multiplicative
speckle.  Labels are deterministic predicates of the recorded factors, so
they can be regenerated from the factors alone and are learnable from pixels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DataError
from .icd import reference_table
from .study import Study

FACTOR_RANGES = {
    "axis_major": (0.45, 0.75),
    "axis_minor": (0.25, 0.45),
    "amplitude": (0.1, 0.4),
    "intensity": (0.45, 0.95),
}
LABEL_FACTORS = tuple(FACTOR_RANGES)
VIEW_INTENSITY_RANGE = (0.3, 1.0)
# |c1 - c2| exceeds this fraction of the range with probability 1/2 for two uniform draws.
DISAGREE_FRACTION = 1.0 - np.sqrt(0.5)


@dataclass(frozen=True)
class SyntheticConfig:
    image_size: int = 28
    n_views: int = 2
    n_frames: int = 32
    period: float = 32.0
    phase_jitter: float = 0.3
    noise: float = 0.1
    max_rotation: float = 180.0
    max_shift: float = 0.1
    supersample: int = 4
    task: str = "codes"  # "codes" or "cross_view"


@dataclass
class SyntheticFactors:
    axis_major: float
    axis_minor: float
    amplitude: float
    phase: float
    intensity: float
    noise: float
    rotations: list[float]
    shifts: list[list[float]]
    view_intensity: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.axis_major <= 0 or self.axis_minor <= 0:
            raise DataError(f"degenerate ellipse axes ({self.axis_major}, {self.axis_minor})")
        if not 0.0 <= self.amplitude < 1.0:
            raise DataError(f"beat amplitude must lie in [0, 1), got {self.amplitude}")
        if not self.view_intensity:
            self.view_intensity = [1.0] * len(self.rotations)
        if len(self.shifts) != len(self.rotations) or len(self.view_intensity) != len(self.rotations):
            raise DataError("per-view factor lists disagree in length")

    @property
    def area_fraction(self) -> float:
        """(max area - min area) / max area; both axes shrink by (1 - amplitude) at end-systole."""
        return 1.0 - (1.0 - self.amplitude) ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticFactors":
        return cls(**d)


def sample_factors(cfg: SyntheticConfig, rng: np.random.Generator) -> SyntheticFactors:
    draw = {k: float(rng.uniform(*r)) for k, r in FACTOR_RANGES.items()}
    v = cfg.n_views
    rotations = rng.uniform(-cfg.max_rotation, cfg.max_rotation, size=v)
    shifts = rng.uniform(-cfg.max_shift, cfg.max_shift, size=(v, 2))
    if cfg.task == "cross_view":
        view_intensity = rng.uniform(*VIEW_INTENSITY_RANGE, size=v)
    else:
        view_intensity = np.ones(v)
    return SyntheticFactors(
        axis_major=draw["axis_major"],
        axis_minor=min(draw["axis_minor"], draw["axis_major"]),
        amplitude=draw["amplitude"],
        phase=float(rng.uniform(-cfg.phase_jitter, cfg.phase_jitter)),
        intensity=draw["intensity"],
        noise=cfg.noise,
        rotations=rotations.tolist(),
        shifts=shifts.tolist(),
        view_intensity=view_intensity.tolist(),
    )


def beat_scale(t: np.ndarray, amplitude: float, phase: float, period: float) -> np.ndarray:
    """Linear size factor: 1 at end-diastole, 1 - amplitude at end-systole."""
    return 1.0 - amplitude * (1.0 - np.cos(2.0 * np.pi * np.asarray(t) / period + phase)) / 2.0


def render_ellipse(
    size: int,
    axis_major: float,
    axis_minor: float,
    rotation_deg: float = 0.0,
    shift: tuple[float, float] = (0.0, 0.0),
    scale: float = 1.0,
    supersample: int = 4,
) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of a filled ellipse.

    Axes are semi-axis lengths as a fraction of the half-width of the image;
    ``shift`` is (dy, dx) in the same units.
    """
    if axis_major <= 0 or axis_minor <= 0 or scale <= 0:
        raise DataError("ellipse axes and scale must be positive")
    n = size * supersample
    # Sub-pixel centres in normalised coordinates [-1, 1].
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    yy, xx = np.meshgrid(c - shift[0], c - shift[1], indexing="ij")
    th = np.deg2rad(rotation_deg)
    u = xx * np.cos(th) + yy * np.sin(th)
    w = -xx * np.sin(th) + yy * np.cos(th)
    a, b = axis_major * scale, axis_minor * scale
    inside = (u / a) ** 2 + (w / b) ** 2 <= 1.0
    return inside.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


def analytic_area(axis_major: float, axis_minor: float, size: int, scale: float = 1.0) -> float:
    """Ellipse area in pixels for the normalised axes used by :func:`render_ellipse`."""
    half = size / 2.0
    return float(np.pi * axis_major * axis_minor * scale * scale * half * half)


def render_view(f: SyntheticFactors, view: int, cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """(n_frames, H, W) uint8 video of one view."""
    scales = beat_scale(np.arange(cfg.n_frames), f.amplitude, f.phase, cfg.period)
    gain = f.intensity * f.view_intensity[view]
    frames = np.empty((cfg.n_frames, cfg.image_size, cfg.image_size), dtype=np.float64)
    for t, s in enumerate(scales):
        frames[t] = gain * render_ellipse(
            cfg.image_size, f.axis_major, f.axis_minor, f.rotations[view], tuple(f.shifts[view]), s, cfg.supersample
        )
    if f.noise > 0:
        frames *= np.clip(1.0 + f.noise * rng.standard_normal(frames.shape), 0.0, None)
    return np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class LabelPredicate:
    """``factor > threshold`` (or ``<`` when ``above`` is false)."""

    name: str
    factor: str
    threshold: float
    above: bool = True

    def __call__(self, f: SyntheticFactors) -> int:
        if self.factor == "view_spread":
            value = max(f.view_intensity) - min(f.view_intensity)
        else:
            value = getattr(f, self.factor)
        return int(value > self.threshold if self.above else value < self.threshold)

    def describe(self) -> str:
        return f"{self.name}: {self.factor} {'>' if self.above else '<'} {self.threshold:.6g}"


def code_predicates(k: int = 40) -> list[LabelPredicate]:
    """One threshold predicate per bundled code, matching its prevalence under uniform factors."""
    preds = []
    for i, entry in enumerate(reference_table(k)):
        factor = LABEL_FACTORS[i % len(LABEL_FACTORS)]
        lo, hi = FACTOR_RANGES[factor]
        p = entry.prevalence / 100.0
        above = (i // len(LABEL_FACTORS)) % 2 == 0
        thr = lo + (hi - lo) * ((1.0 - p) if above else p)
        preds.append(LabelPredicate(entry.code, factor, thr, above))
    return preds


def cross_view_predicates() -> list[LabelPredicate]:
    lo, hi = VIEW_INTENSITY_RANGE
    return [LabelPredicate("views_disagree", "view_spread", DISAGREE_FRACTION * (hi - lo))]


def predicates_for(cfg: SyntheticConfig, k: int = 40) -> list[LabelPredicate]:
    if cfg.task == "codes":
        return code_predicates(k)
    if cfg.task == "cross_view":
        return cross_view_predicates()
    raise DataError(f"unknown synthetic task {cfg.task!r}")


def derive_labels(f: SyntheticFactors, predicates: list[LabelPredicate]) -> np.ndarray:
    return np.array([p(f) for p in predicates], dtype=np.uint8)


def generate_synthetic_study(
    study_id: str,
    rng: np.random.Generator,
    cfg: SyntheticConfig = SyntheticConfig(),
    factors: SyntheticFactors | None = None,
    predicates: list[LabelPredicate] | None = None,
    split: str = "train",
) -> Study:
    if cfg.image_size < 2:
        raise DataError(f"image_size must be at least 2, got {cfg.image_size}")
    f = factors if factors is not None else sample_factors(cfg, rng)
    preds = predicates if predicates is not None else predicates_for(cfg)
    views = [render_view(f, j, cfg, rng) for j in range(len(f.rotations))]
    return Study(
        study_id=study_id,
        views=views,
        labels=derive_labels(f, preds),
        target=100.0 * f.area_fraction,
        factors=f.to_dict(),
        split=split,
    ).validate()


def generate_dataset(
    n_studies: int,
    seed: int,
    cfg: SyntheticConfig = SyntheticConfig(),
    val_fraction: float = 0.0,
) -> list[Study]:
    """Deterministic list of studies; each draws from its own keyed stream."""
    from .. import rng as rngmod

    preds = predicates_for(cfg)
    n_val = int(round(val_fraction * n_studies))
    return [
        generate_synthetic_study(
            f"syn{i:05d}",
            rngmod.stream(seed, rngmod.DATA, "synthetic", i),
            cfg,
            predicates=preds,
            split="val" if i >= n_studies - n_val else "train",
        )
        for i in range(n_studies)
    ]
