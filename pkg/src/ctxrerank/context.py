"""Neighbor contexts, ranking-list reliability, and context-sample weights.

A sample's first-order context is the top-k of its ranking list. Its
second-order context concatenates the first-order contexts of its top-k0
neighbors, block by block; the same gallery index may appear in several
blocks, and every occurrence contributes separately (multiplicity is an
implicit weight).

Reliability measures the cohesion of an anchor's top-k neighborhood:
how much the neighbors' own top-k sets overlap the anchor's. It weights
second-order context entries per source block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .baseline import PositionTable, RankingList
from .ranksim import SELF_SIMILARITY, rank_combined


@dataclass(frozen=True)
class ContextSet:
    """Weighted (multi)set of gallery indices around one anchor.

    order=1: indices are the k distinct top-k neighbors, in rank order.
    order=2: indices are k0 blocks of k entries; blocks[i] is the 1-based
    source block of entry i and block_anchors lists the k0 block anchors.
    Weights are None until a weighting operation fills them.
    """

    anchor: int  # gallery index, or -1 for a probe
    order: int
    k: int
    indices: np.ndarray  # int32 (m,)
    weights: Optional[np.ndarray] = None  # float64 (m,)
    k0: Optional[int] = None
    blocks: Optional[np.ndarray] = None  # int32 (m,), 1-based
    block_anchors: Optional[np.ndarray] = None  # int32 (k0,)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ReliabilityTable:
    """Per-gallery-sample ranking-list reliability in [0, 1]."""

    kappa: np.ndarray  # float64 (N,)
    k_used: int

    def __post_init__(self):
        if np.any(self.kappa < 0) or np.any(self.kappa > 1):
            raise ValueError("reliability values must lie in [0, 1]")


def first_order_context(ranking: RankingList, k: int) -> ContextSet:
    """Top-k of a ranking list, weights unset."""
    if not 1 <= k <= len(ranking):
        raise ValueError(
            f"k={k} out of range for ranking list of length {len(ranking)}"
        )
    return ContextSet(
        anchor=ranking.anchor,
        order=1,
        k=k,
        indices=ranking.order[:k].astype(np.int32, copy=True),
    )


def second_order_context(
    anchor_ranking: RankingList,
    gallery_rankings: list[RankingList],
    k0: int,
    k: int,
) -> ContextSet:
    """Concatenated first-order contexts of the top-k0 neighbors.

    Entries keep block order and duplicates; |result| = k0 * k.
    """
    if k0 < 1 or k < 1:
        raise ValueError("k0 and k must be >= 1")
    if k0 > len(anchor_ranking):
        raise ValueError(f"k0={k0} exceeds ranking length {len(anchor_ranking)}")
    block_anchors = anchor_ranking.order[:k0]
    idx_blocks = []
    for j, ga in enumerate(block_anchors, start=1):
        if ga >= len(gallery_rankings) or gallery_rankings[ga] is None:
            raise ValueError(f"missing gallery ranking for sample {ga}")
        idx_blocks.append(first_order_context(gallery_rankings[ga], k).indices)
    return ContextSet(
        anchor=anchor_ranking.anchor,
        order=2,
        k=k,
        k0=k0,
        indices=np.concatenate(idx_blocks).astype(np.int32),
        blocks=np.repeat(np.arange(1, k0 + 1, dtype=np.int32), k),
        block_anchors=block_anchors.astype(np.int32, copy=True),
    )


def _rank_weight_scale(k: int) -> Optional[int]:
    """lcm(1..k) when the scaled sums stay exactly representable."""
    scale = math.lcm(*range(1, k + 1))
    return scale if k * k * scale <= 2**53 else None


def _kappa_from_counts(counts: np.ndarray, k: int) -> np.ndarray:
    """Reliability from per-neighbor inside-counts.

    counts[..., i-1] is how many of neighbor i's top-k fall in the
    extended set. Scaling 1/i by lcm(1..k) keeps the sums integral, so
    the result is the correctly rounded float of the exact rational
    (falls back to float accumulation for very large k).
    """
    scale = _rank_weight_scale(k)
    if scale is not None:
        w = scale // np.arange(1, k + 1, dtype=np.int64)
        num = (counts.astype(np.int64) * w).sum(axis=-1)
        den = k * int(w.sum())
        return num / float(den)
    w = 1.0 / np.arange(1, k + 1, dtype=np.float64)
    return (counts * w).sum(axis=-1) / (k * w.sum())


def reliability_kappa(
    anchor_ranking: RankingList,
    gallery_rankings: list[RankingList],
    k: int,
) -> float:
    """Cohesion of the anchor's top-k neighborhood, in [0, 1].

    The i-th neighbor contributes weight 1/i for each member of its own
    top-k that falls inside the anchor's top-k set extended with the
    anchor itself; the result is normalized by the all-members-inside
    total k * sum(1/i).
    """
    if k < 1 or k > len(anchor_ranking):
        raise ValueError(f"k={k} out of range for ranking of length {len(anchor_ranking)}")
    anchor = anchor_ranking.anchor
    top = anchor_ranking.order[:k]
    extended = set(int(x) for x in top)
    if anchor >= 0:
        extended.add(anchor)
    counts = np.zeros(k, dtype=np.int64)
    for i, q_i in enumerate(top):
        neigh = gallery_rankings[q_i]
        if neigh is None or k > len(neigh):
            raise ValueError(f"k={k} exceeds ranking depth of sample {q_i}")
        counts[i] = sum(1 for member in neigh.order[:k] if int(member) in extended)
    return float(_kappa_from_counts(counts, k))


def reliability_table(
    order: np.ndarray, positions: np.ndarray, k: int
) -> ReliabilityTable:
    """Vectorized reliability for every gallery anchor at once.

    order is the (N, N-1) gallery ranking matrix and positions the dense
    position table; membership of x in anchor n's extended top-k set is
    positions[n, x] <= k or x == n. Requires k within table depth.
    """
    n = order.shape[0]
    if k < 1 or k > order.shape[1]:
        raise ValueError(f"k={k} out of range for rankings of depth {order.shape[1]}")
    topk = order[:, :k]  # (N, k)
    members = order[topk.reshape(-1), :k].reshape(n, k, k)
    anchors = np.arange(n, dtype=np.int64)[:, None, None]
    pos = positions[anchors, members]
    inside = (pos <= k) | (members == anchors)
    counts = inside.sum(axis=2)  # (N, k)
    return ReliabilityTable(kappa=_kappa_from_counts(counts, k), k_used=k)


# ----------------------------------------------------------------------
# Weighting operations (pure; each returns a new ContextSet)
# ----------------------------------------------------------------------


def mutual_rank_weights(
    anchor: int, entries: np.ndarray, table: np.ndarray
) -> np.ndarray:
    """Combined reciprocal-rank weight of each entry w.r.t. the anchor.

    Uses both directions of the gallery position table; an entry equal to
    the anchor (possible inside second-order contexts) takes the self cap.
    """
    l_entry = table[anchor, entries].astype(np.float64)
    l_anchor = table[entries, anchor].astype(np.float64)
    self_pair = (l_entry == 0) & (l_anchor == 0)
    denom = l_entry + l_anchor + np.maximum(l_entry, l_anchor)
    with np.errstate(divide="ignore"):
        w = 1.0 / denom
    return np.where(self_pair, SELF_SIMILARITY, w)


def weight_first_order_offline(c: ContextSet, positions: PositionTable) -> ContextSet:
    """Combined mutual-rank weights for a gallery anchor's context."""
    if c.anchor < 0:
        raise ValueError("offline weighting requires a gallery anchor")
    return replace(c, weights=mutual_rank_weights(c.anchor, c.indices, positions.table))


def weight_first_order_online(c: ContextSet) -> ContextSet:
    """Reciprocal-of-list-position weights for a probe's top-k context."""
    w = 1.0 / np.arange(1, len(c.indices) + 1, dtype=np.float64)
    return replace(c, weights=w)


def weight_second_order(c: ContextSet, reliability: ReliabilityTable) -> ContextSet:
    """Per-block reliability weights: every entry of block j gets kappa of
    block j's anchor."""
    if c.order != 2 or c.block_anchors is None:
        raise ValueError("reliability weighting applies to second-order contexts")
    if np.any(c.block_anchors >= len(reliability.kappa)):
        raise ValueError("reliability value missing for a block anchor")
    w = np.repeat(reliability.kappa[c.block_anchors], c.k)
    return replace(c, weights=w)


def weight_second_order_mutual_rank(
    c: ContextSet, positions: PositionTable
) -> ContextSet:
    """Per-entry combined mutual-rank weights for a gallery second-order
    context (the reliability-free weighting mode)."""
    if c.anchor < 0:
        raise ValueError("mutual-rank weighting requires a gallery anchor")
    return replace(c, weights=mutual_rank_weights(c.anchor, c.indices, positions.table))


def weight_by_probe_positions(c: ContextSet, probe_positions: np.ndarray) -> ContextSet:
    """Per-entry reciprocal of the entry's position in the probe's current
    list (the reliability-free mode, probe side)."""
    w = 1.0 / probe_positions[c.indices].astype(np.float64)
    return replace(c, weights=w)


def weight_uniform(c: ContextSet) -> ContextSet:
    """Unit weights; the point-to-set score becomes a plain sum."""
    return replace(c, weights=np.ones(len(c.indices), dtype=np.float64))
