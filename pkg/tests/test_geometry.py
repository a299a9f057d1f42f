"""Box construction and interval arithmetic."""
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxkb.geometry import (Box, center, contains, contains_box, grow_to_cover,
                            intersect, width_plus_one)


def boxes(dim=3, lo=-10.0, hi=10.0):
    corner = st.lists(st.floats(lo, hi, allow_nan=False), min_size=dim, max_size=dim)
    return st.tuples(corner, corner).map(
        lambda ab: Box(np.minimum(ab[0], ab[1]), np.maximum(ab[0], ab[1])))


def test_box_validates_shape_and_order():
    with pytest.raises(ValueError):
        Box(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        Box(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        Box(np.array([np.nan]), np.array([1.0]))
    with pytest.raises(ValueError):
        Box(np.zeros((2, 2)), np.zeros((2, 2)))


def test_degenerate_box_is_a_point():
    b = Box(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert contains(b, np.array([1.0, 2.0]))
    assert not contains(b, np.array([1.0, 2.0 + 1e-12]))
    assert np.array_equal(width_plus_one(b), [1.0, 1.0])


def test_center_and_width_anchors():
    b = Box(np.array([-1.0, 0.0]), np.array([1.0, 3.0]))
    assert np.array_equal(center(b), [0.0, 1.5])
    assert np.array_equal(width_plus_one(b), [3.0, 4.0])


def test_contains_is_boundary_inclusive():
    b = Box(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    assert contains(b, np.array([0.0, 2.0]))
    assert contains(b, np.array([1.0, 0.0]))
    assert not contains(b, np.array([1.0 + 1e-15, 0.0]))


def test_contains_rejects_dim_mismatch():
    b = Box(np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        contains(b, np.zeros(3))
    with pytest.raises(ValueError):
        intersect(b, Box(np.zeros(3), np.ones(3)))


def test_intersect_disjoint_returns_none():
    a = Box(np.array([0.0]), np.array([1.0]))
    b = Box(np.array([2.0]), np.array([3.0]))
    assert intersect(a, b) is None


def test_intersect_touching_is_degenerate():
    a = Box(np.array([0.0]), np.array([1.0]))
    b = Box(np.array([1.0]), np.array([3.0]))
    r = intersect(a, b)
    assert r is not None
    assert r.lower[0] == r.upper[0] == 1.0


def test_grow_to_cover_moves_only_violated_bounds():
    target = Box(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    region = Box(np.array([-1.0, 0.25]), np.array([0.5, 2.0]))
    grown = grow_to_cover(target, region)
    assert np.array_equal(grown.lower, [-1.0, 0.0])
    assert np.array_equal(grown.upper, [1.0, 2.0])


def test_grow_to_cover_empty_region_warns_and_noops():
    target = Box(np.array([0.0]), np.array([1.0]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = grow_to_cover(target, None)
    assert out is target
    assert len(caught) == 1


@settings(max_examples=200)
@given(boxes(), boxes())
def test_intersection_is_contained_in_both(a, b):
    r = intersect(a, b)
    if r is not None:
        assert contains_box(a, r)
        assert contains_box(b, r)


@settings(max_examples=200)
@given(boxes(), boxes())
def test_intersect_commutes(a, b):
    r1, r2 = intersect(a, b), intersect(b, a)
    if r1 is None:
        assert r2 is None
    else:
        assert np.array_equal(r1.lower, r2.lower)
        assert np.array_equal(r1.upper, r2.upper)


@settings(max_examples=200)
@given(boxes(), boxes())
def test_grow_to_cover_is_minimal_cover(target, region):
    grown = grow_to_cover(target, region)
    assert contains_box(grown, target)
    assert contains_box(grown, region)
    # minimality: every bound equals one of the inputs' bounds
    assert np.all((grown.lower == target.lower) | (grown.lower == region.lower))
    assert np.all((grown.upper == target.upper) | (grown.upper == region.upper))


@settings(max_examples=200)
@given(boxes(), boxes())
def test_grow_to_cover_idempotent(target, region):
    once = grow_to_cover(target, region)
    twice = grow_to_cover(once, region)
    assert np.array_equal(once.lower, twice.lower)
    assert np.array_equal(once.upper, twice.upper)


@settings(max_examples=200)
@given(boxes())
def test_containment_from_membership_of_corners(a):
    # a box contains itself, and containment agrees with corner membership
    assert contains_box(a, a)
    assert contains(a, a.lower) and contains(a, a.upper)
