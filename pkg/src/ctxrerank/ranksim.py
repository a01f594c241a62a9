"""Rank-based pairwise similarity between a target and a context sample.

Given the mutual 1-based positions (l_ab, l_ba) of two samples in each
other's ranking lists, four measures are defined, selectable per run:

    nonreciprocal   1 / l_ab
    max             1 / max(l_ab, l_ba)
    sum             1 / (l_ab + l_ba)
    combined        1 / (l_ab + l_ba + max(l_ab, l_ba))

`combined` is the default: it separates position pairs that `max`
conflates (e.g. (1,3) vs (2,3)) and pairs that `sum` conflates (e.g.
(1,7) vs (4,4)), penalizing unstable one-sided pairs.

A position of 0 is the self sentinel. When both positions are 0 the pair
is a sample compared with itself; such pairs score SELF_SIMILARITY, which
caps every measure from above.
"""

from __future__ import annotations

import numpy as np

MEASURES = ("nonreciprocal", "max", "sum", "combined")

# score assigned when a candidate coincides with a context sample; sits
# strictly above the combined measure's non-self maximum of 1/3
SELF_SIMILARITY = 1.0


def rank_nonreciprocal(l_ab: int) -> float:
    """1/position similarity from a single ranking list."""
    if l_ab < 1:
        raise ValueError(f"position must be >= 1, got {l_ab}")
    return 1.0 / l_ab


def _check_pair(l_ab: int, l_ba: int) -> None:
    if l_ab < 1 or l_ba < 1:
        raise ValueError(
            f"mutual positions must both be >= 1, got ({l_ab}, {l_ba})"
        )


def rank_reciprocal_max(l_ab: int, l_ba: int) -> float:
    """Reciprocal of the worse of the two mutual positions."""
    _check_pair(l_ab, l_ba)
    return 1.0 / max(l_ab, l_ba)


def rank_reciprocal_sum(l_ab: int, l_ba: int) -> float:
    """Reciprocal of the summed mutual positions."""
    _check_pair(l_ab, l_ba)
    return 1.0 / (l_ab + l_ba)


def rank_combined(l_ab: int, l_ba: int) -> float:
    """Combined reciprocal measure; accepts the (0, 0) self pair."""
    if l_ab == 0 and l_ba == 0:
        return SELF_SIMILARITY
    if l_ab == 0 or l_ba == 0:
        raise ValueError(
            f"invalid pair ({l_ab}, {l_ba}): exactly one self sentinel"
        )
    return 1.0 / (l_ab + l_ba + max(l_ab, l_ba))


def rank_similarity(l_ab: int, l_ba: int, measure: str = "combined") -> float:
    """Dispatch on measure kind; self pairs score SELF_SIMILARITY."""
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}, expected one of {MEASURES}")
    if l_ab == 0 and l_ba == 0:
        return SELF_SIMILARITY
    if measure == "nonreciprocal":
        return rank_nonreciprocal(l_ab)
    if measure == "max":
        return rank_reciprocal_max(l_ab, l_ba)
    if measure == "sum":
        return rank_reciprocal_sum(l_ab, l_ba)
    return rank_combined(l_ab, l_ba)


def rank_similarity_array(
    l_ab: np.ndarray, l_ba: np.ndarray, measure: str = "combined"
) -> np.ndarray:
    """Vectorized rank_similarity over position arrays.

    Self pairs (both sentinels 0) get SELF_SIMILARITY; mixed sentinel
    pairs cannot occur between gallery samples and are not checked here.
    """
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}, expected one of {MEASURES}")
    a = np.asarray(l_ab, dtype=np.float64)
    b = np.asarray(l_ba, dtype=np.float64)
    self_pair = (a == 0) & (b == 0)
    if measure == "nonreciprocal":
        denom = a
    elif measure == "max":
        denom = np.maximum(a, b)
    elif measure == "sum":
        denom = a + b
    else:
        denom = a + b + np.maximum(a, b)
    with np.errstate(divide="ignore"):
        r = 1.0 / denom
    return np.where(self_pair, SELF_SIMILARITY, r)
