"""Axis-aligned boxes and the interval arithmetic the scoring model is built on.

A box is a pair of corner vectors (lower, upper) with lower <= upper
element-wise.  Degenerate boxes (zero width in some or all dimensions) are
valid; they behave as points along those axes.  An empty intersection is
represented by ``None`` rather than an inverted box, so callers can never
accidentally feed an invalid box back into the arithmetic.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box corners must be 1-d vectors of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box corners must be finite")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def center(box: Box) -> np.ndarray:
    """Midpoint of the box, element-wise."""
    return (box.lower + box.upper) / 2.0


def width_plus_one(box: Box) -> np.ndarray:
    """Element-wise width shifted by one: upper - lower + 1.

    The shift keeps the value >= 1 so it can be used both as a divisor
    (inside a box) and a multiplier (outside) without a sign change.
    """
    return box.upper - box.lower + 1.0


def contains(box: Box, point: np.ndarray) -> bool:
    """Whether the point lies in the box, boundary inclusive."""
    p = np.asarray(point, dtype=np.float64)
    if p.shape != box.lower.shape:
        raise ValueError("point dimensionality does not match box")
    return bool(np.all(box.lower <= p) and np.all(p <= box.upper))


def intersect(a: Box, b: Box) -> Box | None:
    """Intersection of two boxes, or None when they are disjoint.

    Boxes that merely touch (shared boundary) intersect in a degenerate box.
    """
    if a.dim != b.dim:
        raise ValueError("boxes have different dimensionality")
    lo = np.maximum(a.lower, b.lower)
    hi = np.minimum(a.upper, b.upper)
    if np.any(lo > hi):
        return None
    return Box(lo, hi)


def contains_box(outer: Box, inner: Box) -> bool:
    """Whether ``inner`` lies entirely within ``outer`` (closed containment)."""
    if outer.dim != inner.dim:
        raise ValueError("boxes have different dimensionality")
    return bool(np.all(outer.lower <= inner.lower) and np.all(inner.upper <= outer.upper))


def grow_to_cover(target: Box, region: Box | None) -> Box:
    """Minimal enlargement of ``target`` that covers ``region``.

    Each violated bound moves exactly to the region's bound; satisfied
    dimensions are untouched.  An empty region (None) is a no-op and only
    emits a warning, since there is nothing to cover.
    """
    if region is None:
        warnings.warn("grow_to_cover called with an empty region; no-op", stacklevel=2)
        return target
    if target.dim != region.dim:
        raise ValueError("boxes have different dimensionality")
    return Box(np.minimum(target.lower, region.lower), np.maximum(target.upper, region.upper))
