"""Online query engine: bilateral point-to-set scoring over top-L candidates.

A query starts from the probe's full initial ranking list. Only the top-L
candidates are re-scored; the tail keeps its initial order. Re-ranking is
progressive: second-order contexts refine the list first, then first-order
contexts fine-tune the result using the refined positions.

Per candidate g the score sums two sides:
  * probe vs g's context  - entries looked up in the probe's current list
    (nonreciprocal reciprocal-rank, the cheap online form), and
  * g vs the probe's context - entries paired with g through the offline
    gallery position table under the configured measure.
Either side can be dropped to reproduce the unilateral variants.

All per-query work after the initial ranking is O(k0*k*L + L*log L);
queries share the immutable index and may run concurrently.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .baseline import Metric, RankingList, compute_probe_ranking, ingest_probe_scores
from .context import ContextSet
from .index import GalleryIndex, RerankParams
from .ranksim import rank_nonreciprocal, rank_similarity, rank_similarity_array

_STRUCTURAL_FIELDS = ("k0", "k", "depth")


@dataclass(frozen=True)
class ScoredCandidate:
    """One re-scored gallery candidate of a query."""

    gallery_index: int
    initial_position: int
    stage1_score: float
    stage2_score: Optional[float] = None


@dataclass
class QueryResult:
    """Outcome of one query: full re-ranked permutation plus diagnostics.

    final_order is a permutation of all N gallery indices; entries beyond
    the re-scored candidates keep the initial ordering. Candidates are
    listed in final order. Timings are in microseconds; total_micros
    includes computing the initial ranking when the engine computed it.
    """

    probe_id: str
    final_order: np.ndarray
    candidates: list[ScoredCandidate]
    rerank_micros: float
    total_micros: float


def point_to_set_score(
    context: ContextSet,
    *,
    probe_positions: Optional[np.ndarray] = None,
    candidate: Optional[int] = None,
    positions: Optional[np.ndarray] = None,
    measure: str = "combined",
) -> float:
    """Weighted similarity between a target sample and a counterpart context.

    Probe-side form (pass probe_positions): the target is the probe and
    each entry contributes weight / (its position in the probe's current
    list). Gallery-side form (pass candidate + positions): each entry is
    paired with the candidate through the gallery position table under
    `measure`; a candidate that appears inside the context contributes at
    the self cap.
    """
    if context.weights is None:
        raise ValueError("context weights are unset; apply a weighting op first")
    if (probe_positions is None) == (candidate is None):
        raise ValueError("pass exactly one of probe_positions or candidate")
    total = 0.0
    if probe_positions is not None:
        for idx, w in zip(context.indices, context.weights):
            total += float(w) * rank_nonreciprocal(int(probe_positions[idx]))
        return total
    if positions is None:
        raise ValueError("gallery-side scoring needs the position table")
    for idx, w in zip(context.indices, context.weights):
        l_entry = int(positions[candidate, idx])
        l_cand = int(positions[idx, candidate])
        total += float(w) * rank_similarity(l_entry, l_cand, measure)
    return total


def bilateral_score(probe_side: float, gallery_side: float, context_side: str) -> float:
    """Combine the two point-to-set scores according to the side mode."""
    if context_side == "bilateral":
        return probe_side + gallery_side
    if context_side == "probe":  # keep the probe's context
        return gallery_side
    if context_side == "gallery":  # keep the gallery's context
        return probe_side
    raise ValueError(f"unknown context_side {context_side!r}")


def _stage_scores(
    cands: np.ndarray,
    probe_order: np.ndarray,
    probe_pos: np.ndarray,
    index: GalleryIndex,
    context_order: int,
    params: RerankParams,
) -> np.ndarray:
    """Vectorized bilateral scores of `cands` for one stage.

    probe_order/probe_pos describe the probe's current ranking list.
    context_order selects first- (1) or second- (2) order contexts.
    """
    table = index.positions
    k0, k = index.params.k0, index.params.k
    weighting = params.weighting

    if context_order == 2:
        g_idx = index.ctx2_idx[cands]
        if weighting == "reliability":
            g_w = index.ctx2_w[cands]
        elif weighting == "uniform":
            g_w = np.ones_like(g_idx, dtype=np.float64)
        else:  # rank: per-entry combined mutual-rank weight vs the anchor
            a = table[cands[:, None], g_idx].astype(np.float64)
            b = table[g_idx, cands[:, None]].astype(np.float64)
            g_w = rank_similarity_array(a, b, "combined")
        p_blocks = probe_order[:k0]
        p_idx = index.ctx1_idx[p_blocks].reshape(-1)
        if weighting == "reliability":
            p_w = np.repeat(index.kappa[p_blocks], k)
        elif weighting == "uniform":
            p_w = np.ones(p_idx.shape[0], dtype=np.float64)
        else:  # rank: nonreciprocal position in the probe's current list
            p_w = 1.0 / probe_pos[p_idx].astype(np.float64)
    elif context_order == 1:
        g_idx = index.ctx1_idx[cands]
        if weighting == "uniform":
            g_w = np.ones_like(g_idx, dtype=np.float64)
        else:
            g_w = index.ctx1_w[cands]
        p_idx = probe_order[:k]
        if weighting == "uniform":
            p_w = np.ones(k, dtype=np.float64)
        else:
            p_w = 1.0 / np.arange(1, k + 1, dtype=np.float64)
    else:
        raise ValueError(f"context_order must be 1 or 2, got {context_order}")

    # probe vs gallery contexts: nonreciprocal lookups in the probe's list
    s_probe = (g_w * (1.0 / probe_pos[g_idx])).sum(axis=1)

    # candidates vs the probe's context: offline mutual-rank similarities
    l_entry = table[cands[:, None], p_idx[None, :]]
    l_cand = table[p_idx[None, :], cands[:, None]]
    r = rank_similarity_array(l_entry, l_cand, params.measure)
    s_gallery = (p_w[None, :] * r).sum(axis=1)

    if params.context_side == "bilateral":
        return s_probe + s_gallery
    if params.context_side == "probe":
        return s_gallery
    return s_probe


def stage_rerank(
    probe_ranking: RankingList,
    index: GalleryIndex,
    candidates: np.ndarray,
    context_order: int,
    params: Optional[RerankParams] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Re-rank `candidates` (given in their current order) by one stage.

    Returns (candidates re-sorted by descending score, scores aligned to
    the incoming candidate order). Ties keep the incoming order.
    """
    params = resolve_params(index, params)
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = _stage_scores(
        candidates,
        probe_ranking.order,
        probe_ranking.positions,
        index,
        context_order,
        params,
    )
    new_order = candidates[np.argsort(-scores, kind="stable")]
    return new_order, scores


def resolve_params(index: GalleryIndex, params: Optional[RerankParams]) -> RerankParams:
    """Merge query params with the index defaults; structural fields must
    match the index they were built into."""
    if params is None:
        return index.params
    for name in _STRUCTURAL_FIELDS:
        if getattr(params, name) != getattr(index.params, name):
            raise ValueError(
                f"{name}={getattr(params, name)} does not match the index "
                f"(built with {name}={getattr(index.params, name)})"
            )
    return params


def progressive_rerank(
    probe_ranking: RankingList,
    index: GalleryIndex,
    params: Optional[RerankParams] = None,
    probe_id: str = "",
    initial_micros: float = 0.0,
) -> QueryResult:
    """Run the configured stages over the top-L of an initial ranking list.

    stages=progressive refines with second-order contexts, rebuilds the
    probe's current list, then fine-tunes the same candidates with
    first-order contexts; first/second run a single stage.
    """
    params = resolve_params(index, params)
    n = index.n
    if len(probe_ranking.order) != n:
        raise ValueError("probe ranking does not cover the gallery")
    t0 = time.perf_counter()

    L = params.L
    if L > n:
        warnings.warn(f"L={L} exceeds gallery size {n}; clamping", stacklevel=2)
        L = n
    order0 = probe_ranking.order
    pos0 = probe_ranking.positions
    cands = np.asarray(order0[:L], dtype=np.int64)

    stage_scores: list[tuple[np.ndarray, np.ndarray]] = []  # (cand seq, scores)
    cur_order, cur_pos = order0, pos0
    cur_cands = cands
    if params.stages in ("second", "progressive"):
        scores1 = _stage_scores(cur_cands, cur_order, cur_pos, index, 2, params)
        stage_scores.append((cur_cands, scores1))
        cur_cands = cur_cands[np.argsort(-scores1, kind="stable")]
        cur_order, cur_pos = _merge_ranking(order0, pos0, cur_cands, L)
    if params.stages in ("first", "progressive"):
        scores2 = _stage_scores(cur_cands, cur_order, cur_pos, index, 1, params)
        stage_scores.append((cur_cands, scores2))
        cur_cands = cur_cands[np.argsort(-scores2, kind="stable")]

    final_order = np.concatenate([cur_cands.astype(np.int32), order0[L:]])
    rerank_micros = (time.perf_counter() - t0) * 1e6

    by_candidate: dict[int, list[float]] = {int(g): [] for g in cands}
    for seq, scores in stage_scores:
        for g, s in zip(seq, scores):
            by_candidate[int(g)].append(float(s))
    two_stage = len(stage_scores) == 2
    cand_records = [
        ScoredCandidate(
            gallery_index=int(g),
            initial_position=int(pos0[g]),
            stage1_score=by_candidate[int(g)][0],
            stage2_score=by_candidate[int(g)][1] if two_stage else None,
        )
        for g in cur_cands
    ]
    return QueryResult(
        probe_id=probe_id,
        final_order=final_order,
        candidates=cand_records,
        rerank_micros=rerank_micros,
        total_micros=rerank_micros + initial_micros,
    )


def _merge_ranking(
    order0: np.ndarray, pos0: np.ndarray, cand_order: np.ndarray, L: int
) -> tuple[np.ndarray, np.ndarray]:
    """Current list after a stage: re-ranked candidates at positions 1..L,
    everything else untouched at its initial position."""
    merged = np.concatenate([cand_order.astype(order0.dtype), order0[L:]])
    pos = pos0.copy()
    pos[cand_order] = np.arange(1, L + 1, dtype=pos.dtype)
    return merged, pos


class Reranker:
    """Query front-end bound to one immutable gallery index.

    Accepts probes as feature vectors (requires a feature-built index),
    precomputed score rows, or ready-made RankingLists. Thread-safe;
    batch entry points parallelize across queries.
    """

    def __init__(self, index: GalleryIndex, params: Optional[RerankParams] = None):
        self.index = index
        self.params = resolve_params(index, params)
        self._metric = (
            Metric(index.metric_kind) if index.metric_kind != "precomputed" else None
        )

    def initial_ranking(self, probe_vector: np.ndarray) -> RankingList:
        if self.index.features is None or self._metric is None:
            raise ValueError(
                "index carries no gallery features; supply precomputed scores instead"
            )
        return compute_probe_ranking(probe_vector, self.index.features, self._metric)

    def query_vector(self, probe_vector: np.ndarray, probe_id: str = "") -> QueryResult:
        t0 = time.perf_counter()
        ranking = self.initial_ranking(probe_vector)
        initial_micros = (time.perf_counter() - t0) * 1e6
        return progressive_rerank(
            ranking, self.index, self.params, probe_id, initial_micros
        )

    def query_scores(self, score_row: np.ndarray, probe_id: str = "") -> QueryResult:
        t0 = time.perf_counter()
        (ranking,) = ingest_probe_scores(np.asarray(score_row)[None, :])
        initial_micros = (time.perf_counter() - t0) * 1e6
        return progressive_rerank(
            ranking, self.index, self.params, probe_id, initial_micros
        )

    def query_ranking(self, ranking: RankingList, probe_id: str = "") -> QueryResult:
        return progressive_rerank(ranking, self.index, self.params, probe_id)

    def query_batch(
        self,
        probes: np.ndarray,
        probe_ids: Optional[Sequence[str]] = None,
        threads: Optional[int] = None,
        scores: bool = False,
    ) -> list[QueryResult]:
        """Re-rank a batch of probes (feature rows, or score rows with
        scores=True) preserving input order."""
        probes = np.asarray(probes)
        if probes.ndim == 1:
            probes = probes[None, :]
        ids = probe_ids if probe_ids is not None else [f"q{i:06d}" for i in range(len(probes))]
        run = self.query_scores if scores else self.query_vector
        if threads is not None and threads <= 1:
            return [run(probes[i], ids[i]) for i in range(len(probes))]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(run, probes[i], ids[i]) for i in range(len(probes))]
            return [f.result() for f in futs]

    def baseline_results(
        self, probes: np.ndarray, probe_ids: Optional[Sequence[str]] = None,
        scores: bool = False,
    ) -> list[QueryResult]:
        """Initial rankings wrapped as QueryResults (no re-ranking)."""
        probes = np.asarray(probes)
        if probes.ndim == 1:
            probes = probes[None, :]
        ids = probe_ids if probe_ids is not None else [f"q{i:06d}" for i in range(len(probes))]
        out = []
        for i in range(len(probes)):
            t0 = time.perf_counter()
            if scores:
                (ranking,) = ingest_probe_scores(probes[i][None, :])
            else:
                ranking = self.initial_ranking(probes[i])
            micros = (time.perf_counter() - t0) * 1e6
            out.append(
                QueryResult(
                    probe_id=ids[i],
                    final_order=ranking.order.copy(),
                    candidates=[],
                    rerank_micros=0.0,
                    total_micros=micros,
                )
            )
        return out
