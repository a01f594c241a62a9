"""Initial content-based rankings over the gallery.

Everything downstream consumes only rank positions, so this module is the
single place where raw similarities exist. All similarities follow one
orientation: greater means more similar (Euclidean distances are negated
at this boundary). Ranking lists sort by descending similarity with ties
broken by ascending gallery index, and a gallery sample never appears in
its own list (its self position is the sentinel 0).
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

# position value meaning "this is the anchor itself"
SELF_POSITION = 0

_BLOCK_ROWS = 512


@dataclass(frozen=True)
class Metric:
    """Similarity metric over feature vectors.

    kind:
        euclidean   similarity = -||a - b||
        cosine      similarity = cos(a, b); zero vectors score 0
        precomputed marker for rankings ingested from a score matrix
    """

    kind: str = "euclidean"

    def __post_init__(self):
        if self.kind not in ("euclidean", "cosine", "precomputed"):
            raise ValueError(f"unknown metric kind {self.kind!r}")

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Similarity matrix between rows of a and rows of b (float64)."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != b.shape[1]:
            raise ValueError(
                f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}"
            )
        if self.kind == "euclidean":
            sq = (
                np.sum(a * a, axis=1)[:, None]
                + np.sum(b * b, axis=1)[None, :]
                - 2.0 * (a @ b.T)
            )
            np.maximum(sq, 0.0, out=sq)
            return -np.sqrt(sq)
        if self.kind == "cosine":
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            na[na == 0.0] = np.inf
            nb[nb == 0.0] = np.inf
            return (a / na[:, None]) @ (b / nb[:, None]).T
        raise ValueError("precomputed metric has no feature-space form")


@dataclass
class RankingList:
    """Ordering of eligible gallery indices for one anchor.

    `order[i]` is the gallery index at 1-based position i+1; for a gallery
    anchor the anchor itself is excluded. `positions` is the inverse map
    over all N gallery indices, with SELF_POSITION at the anchor.
    """

    anchor: int  # gallery index, or -1 for a probe
    order: np.ndarray  # int32, eligible indices by descending similarity
    gallery_size: int
    _positions: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def positions(self) -> np.ndarray:
        if self._positions is None:
            pos = np.zeros(self.gallery_size, dtype=np.int32)
            pos[self.order] = np.arange(1, len(self.order) + 1, dtype=np.int32)
            self._positions = pos
        return self._positions

    def position_of(self, gallery_index: int) -> int:
        """1-based position; SELF_POSITION for the anchor itself."""
        return int(self.positions[gallery_index])

    def __len__(self) -> int:
        return len(self.order)


@dataclass
class PositionTable:
    """Dense table of mutual rank positions among gallery samples.

    table[b, a] = 1-based position of sample a in sample b's ranking list;
    the diagonal is SELF_POSITION. In depth-capped mode every position
    beyond `depth` is stored as the sentinel depth+1.
    """

    table: np.ndarray  # (N, N) integer
    depth: Optional[int] = None  # None = full

    @property
    def n(self) -> int:
        return self.table.shape[0]

    def lookup(self, a: int, b: int) -> int:
        """Position of sample a in sample b's ranking list."""
        return int(self.table[b, a])


def _argsort_desc(sims: np.ndarray) -> np.ndarray:
    """Row-wise descending stable argsort (ties -> ascending index)."""
    return np.argsort(-sims, axis=-1, kind="stable").astype(np.int32)


def _gallery_block(
    sims: np.ndarray, row_offset: int, out_order: np.ndarray, out_pos: np.ndarray
) -> None:
    """Fill order/position rows for one block of gallery anchors."""
    b, n = sims.shape
    rows = np.arange(b)
    anchors = row_offset + rows
    # force self strictly first so dropping column 0 removes it
    sims[rows, anchors] = np.inf
    idx = _argsort_desc(sims)
    order = idx[:, 1:]
    out_order[row_offset : row_offset + b] = order
    pos_block = out_pos[row_offset : row_offset + b]
    np.put_along_axis(
        pos_block, order, np.arange(1, n, dtype=out_pos.dtype)[None, :], axis=1
    )
    pos_block[rows, anchors] = SELF_POSITION


def _build_gallery_tables(
    sim_rows, n: int, depth: Optional[int], threads: Optional[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Compute (order, positions) from a per-block similarity supplier.

    sim_rows(start, stop) must return the float similarity block for
    gallery anchors [start, stop) against all N gallery samples.
    """
    order = np.empty((n, n - 1), dtype=np.int32)
    positions = np.empty((n, n), dtype=np.int32)

    def work(start: int) -> None:
        stop = min(start + _BLOCK_ROWS, n)
        sims = np.array(sim_rows(start, stop), dtype=np.float64, copy=True)
        _gallery_block(sims, start, order, positions)

    starts = range(0, n, _BLOCK_ROWS)
    if threads is not None and threads <= 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))

    if depth is not None:
        np.minimum(positions, depth + 1, out=positions)
        if depth + 1 <= np.iinfo(np.uint16).max:
            positions = positions.astype(np.uint16)
    return order, positions


def compute_gallery_tables(
    gallery,
    metric: Metric,
    depth: Optional[int] = None,
    threads: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Matrix form of compute_gallery_rankings: (order, positions).

    order[g] lists the other N-1 gallery indices by descending similarity
    to g; positions is the dense table with positions[b, a] = l_a(R_b).
    """
    n = gallery.n
    if n < 2:
        raise ValueError("gallery must contain at least 2 samples")
    feats = gallery.features.astype(np.float64)

    def sim_rows(start, stop):
        return metric.pairwise(feats[start:stop], feats)

    return _build_gallery_tables(sim_rows, n, depth, threads)


def compute_gallery_rankings(
    gallery,
    metric: Metric,
    depth: Optional[int] = None,
    threads: Optional[int] = None,
) -> tuple[list[RankingList], PositionTable]:
    """Rank every gallery sample against all others.

    Returns N ranking lists of length N-1 (self excluded) and the
    consistent PositionTable. Requires N >= 2.
    """
    order, positions = compute_gallery_tables(gallery, metric, depth, threads)
    n = order.shape[0]
    lists = [RankingList(anchor=g, order=order[g], gallery_size=n) for g in range(n)]
    return lists, PositionTable(positions, depth=depth)


def compute_probe_ranking(probe: np.ndarray, gallery, metric: Metric) -> RankingList:
    """Full-length ranking of all N gallery samples for one probe vector."""
    probe = np.asarray(probe, dtype=np.float64).reshape(-1)
    if probe.shape[0] != gallery.dim:
        raise ValueError(
            f"probe dimension {probe.shape[0]} does not match gallery dimension {gallery.dim}"
        )
    sims = metric.pairwise(probe[None, :], gallery.features.astype(np.float64))[0]
    order = _argsort_desc(sims)
    return RankingList(anchor=-1, order=order, gallery_size=gallery.n)


def ingest_probe_scores(scores: np.ndarray) -> list[RankingList]:
    """Build probe ranking lists from a precomputed (n_probe, N) score matrix.

    Only the induced per-row ordering matters; any strictly increasing
    transform of the scores yields identical lists.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[None, :]
    if not np.all(np.isfinite(scores)):
        raise ValueError("probe score matrix contains non-finite entries")
    n = scores.shape[1]
    idx = _argsort_desc(scores)
    return [RankingList(anchor=-1, order=idx[i], gallery_size=n) for i in range(len(idx))]


def ingest_gallery_tables(
    scores: np.ndarray,
    depth: Optional[int] = None,
    threads: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Matrix form of ingest_gallery_scores: (order, positions)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError("gallery score matrix must be square")
    if not np.all(np.isfinite(scores)):
        raise ValueError("gallery score matrix contains non-finite entries")
    n = scores.shape[0]
    if n < 2:
        raise ValueError("gallery must contain at least 2 samples")

    def sim_rows(start, stop):
        return scores[start:stop]

    return _build_gallery_tables(sim_rows, n, depth, threads)


def ingest_gallery_scores(
    scores: np.ndarray,
    depth: Optional[int] = None,
    threads: Optional[int] = None,
) -> tuple[list[RankingList], PositionTable]:
    """Build gallery rankings from a precomputed (N, N) similarity matrix.

    The diagonal is ignored (a sample never ranks itself). Downstream
    behavior is identical to metric-based computation with the same
    induced ordering.
    """
    order, positions = ingest_gallery_tables(scores, depth, threads)
    n = order.shape[0]
    lists = [RankingList(anchor=g, order=order[g], gallery_size=n) for g in range(n)]
    return lists, PositionTable(positions, depth=depth)


SCORES_MAGIC = b"PBCS"
SCORES_VERSION = 1


def save_score_matrix(scores: np.ndarray, path) -> None:
    """Write a similarity matrix in the PBCS binary format."""
    scores = np.asarray(scores)
    if scores.ndim != 2:
        raise ValueError("score matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(SCORES_MAGIC)
        fh.write(struct.pack("<III", SCORES_VERSION, scores.shape[0], scores.shape[1]))
        fh.write(np.ascontiguousarray(scores, dtype="<f4").tobytes())


def load_score_matrix(path) -> np.ndarray:
    """Read a PBCS similarity matrix as float32."""
    data = Path(path).read_bytes()
    if data[:4] != SCORES_MAGIC:
        raise ValueError(f"{path}: bad magic, not a PBCS file")
    version, rows, cols = struct.unpack_from("<III", data, 4)
    if version != SCORES_VERSION:
        raise ValueError(f"{path}: unsupported PBCS version {version}")
    expected = 16 + 4 * rows * cols
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols).copy()


def write_ranking_dump(path, named_orders, topk: Optional[int] = None) -> None:
    """Write `anchor_id: id1 id2 ...` lines for debugging or evaluation."""
    with open(path, "w", encoding="utf-8") as fh:
        for anchor_id, ids in named_orders:
            shown = ids if topk is None else ids[:topk]
            fh.write(f"{anchor_id}: {' '.join(shown)}\n")


def read_ranking_dump(path) -> list[tuple[str, list[str]]]:
    """Parse lines written by write_ranking_dump."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'anchor: id ...'")
            anchor, rest = line.split(":", 1)
            out.append((anchor.strip(), rest.split()))
    return out
