"""Goal candidate generation and non-maximum suppression selection.

Candidates are a deterministic grid over the scene scored by the posterior
predictive density (a seeded sampling generator is available as an
alternative source). Selection is greedy: repeatedly keep the most
probable remaining candidate and drop every candidate whose circle IoU
with it exceeds the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import Scenario
from .errors import EmptyCandidatePool, RegionTooLarge, ValidationError
from .mixture import MixturePosterior, predictive_log_densities
from .distributions import posterior_predictive_params, sample_student_t


@dataclass(frozen=True)
class ScoredCandidate:
    """A candidate goal location with its predictive log density."""

    location: np.ndarray
    log_prob: float

    def __post_init__(self):
        loc = np.asarray(self.location, dtype=float).reshape(2)
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "log_prob", float(self.log_prob))
        if not (np.all(np.isfinite(loc)) and math.isfinite(self.log_prob)):
            raise ValidationError(f"candidate must be finite, got {loc}, {self.log_prob}")


@dataclass(frozen=True)
class NmsConfig:
    radius: float = 2.0
    iou_threshold: float = 0.0
    k: int = 6

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValidationError(f"radius must be positive, got {self.radius}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValidationError(f"iou_threshold must lie in [0, 1], got {self.iou_threshold}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


def _lens_area(d: np.ndarray, r: float) -> np.ndarray:
    """Intersection area of two radius-r discs at center distance d (< 2r)."""
    return 2.0 * r * r * np.arccos(d / (2.0 * r)) - 0.5 * d * np.sqrt(4.0 * r * r - d * d)


def circle_iou_from_distance(d: np.ndarray, r: float) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    overlapping = d < 2.0 * r
    if np.any(overlapping):
        area = _lens_area(d[overlapping], r)
        out[overlapping] = np.clip(area / (2.0 * math.pi * r * r - area), 0.0, 1.0)
    return out


def circle_iou(p1, p2, r: float) -> float:
    """IoU of two discs of radius r centered at p1 and p2."""
    if r <= 0.0:
        raise ValidationError(f"radius must be positive, got {r}")
    p1 = np.asarray(p1, dtype=float).reshape(2)
    p2 = np.asarray(p2, dtype=float).reshape(2)
    d = float(np.hypot(*(p1 - p2)))
    return float(circle_iou_from_distance(np.array([d]), r)[0])


def nms_select(candidates: list[ScoredCandidate], cfg: NmsConfig) -> list[ScoredCandidate]:
    """Greedy suppression over the whole pool, most probable first.

    Runs until the pool is empty; truncation to the top k is left to the
    caller. A candidate is suppressed when its circle IoU with an already
    selected candidate strictly exceeds the threshold.
    """
    if not candidates:
        raise EmptyCandidatePool("no candidates to select from")
    locs = np.stack([c.location for c in candidates])
    log_probs = np.array([c.log_prob for c in candidates])
    # Stable sort keeps input order among equal probabilities.
    order = np.argsort(-log_probs, kind="stable")
    alive = np.ones(len(candidates), dtype=bool)
    selected: list[int] = []
    for idx in order:
        if not alive[idx]:
            continue
        selected.append(idx)
        alive[idx] = False
        rest = np.flatnonzero(alive)
        if rest.size == 0:
            break
        d = np.hypot(*(locs[rest] - locs[idx]).T)
        suppress = circle_iou_from_distance(d, cfg.radius) > cfg.iou_threshold
        alive[rest[suppress]] = False
    return [candidates[i] for i in selected]


@dataclass(frozen=True)
class Region:
    """Axis-aligned candidate box in target-frame meters."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValidationError("region must have positive extent")

    def inflate(self, margin: float) -> "Region":
        return Region(
            self.x_min - margin, self.y_min - margin, self.x_max + margin, self.y_max + margin
        )


def scene_region(s: Scenario, margin: float = 10.0) -> Region:
    """Bounding box of all map points inflated by `margin` meters.

    Falls back to the box of agent states when the map is empty (for
    example after masking with radius zero) so the pipeline still runs.
    """
    points = [p.points for p in s.map]
    if not points:
        points = [
            np.array([[st.x, st.y] for st in track.states]) for track in s.agents if track.states
        ]
    allpts = np.concatenate(points, axis=0)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    # Degenerate boxes (single lane along an axis) still need area.
    pad = 1e-6 + 0.0
    return Region(lo[0] - pad, lo[1] - pad, hi[0] + pad, hi[1] + pad).inflate(margin)


def generate_candidates(
    mix: MixturePosterior,
    weights,
    region: Region,
    spacing: float,
    cell_cap: int = 1_000_000,
) -> list[ScoredCandidate]:
    """Regular grid over the region scored by the predictive log density.

    Row-major ordering with ties broken by grid index; endpoints included.
    """
    if spacing <= 0.0:
        raise ValidationError(f"spacing must be positive, got {spacing}")
    nx = int(math.floor((region.x_max - region.x_min) / spacing + 1e-9)) + 1
    ny = int(math.floor((region.y_max - region.y_min) / spacing + 1e-9)) + 1
    if nx * ny > cell_cap:
        raise RegionTooLarge(f"grid of {nx}x{ny} cells exceeds the cap of {cell_cap}")
    xs = region.x_min + spacing * np.arange(nx)
    ys = region.y_min + spacing * np.arange(ny)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    log_probs = predictive_log_densities(pts, mix, weights)
    return [ScoredCandidate(location=p, log_prob=lp) for p, lp in zip(pts, log_probs)]


def sample_candidates(
    mix: MixturePosterior, weights, n: int, rng: np.random.Generator
) -> list[ScoredCandidate]:
    """Seeded draws from the Student-t mixture, scored by its own density."""
    weights = np.asarray(weights, dtype=float)
    counts = rng.multinomial(n, weights / weights.sum())
    points = []
    for comp, count in zip(mix.components, counts):
        if count == 0:
            continue
        t = posterior_predictive_params(comp)
        points.append(sample_student_t(t, rng, count))
    pts = np.concatenate(points, axis=0)
    log_probs = predictive_log_densities(pts, mix, weights)
    return [ScoredCandidate(location=p, log_prob=lp) for p, lp in zip(pts, log_probs)]
