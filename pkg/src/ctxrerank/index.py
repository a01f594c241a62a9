"""Offline gallery index: everything the online query path only looks up.

Building an index touches gallery data exclusively. It precomputes the
gallery-gallery ranking orders and position table, per-sample first- and
second-order contexts with their offline weights, and the reliability
table. Once built it is immutable and safe to share across concurrent
queries.

The on-disk container (magic ``PBCI``) embeds the build parameters, a
fingerprint of the source gallery, and all component tables; it
round-trips bit-exactly and rejects unknown versions, truncation, and
fingerprint mismatches with distinct errors.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataset as ds
from .baseline import (
    Metric,
    PositionTable,
    RankingList,
    compute_gallery_tables,
    ingest_gallery_tables,
)
from .context import ContextSet, ReliabilityTable, reliability_table
from .ranksim import MEASURES

INDEX_MAGIC = b"PBCI"
INDEX_VERSION = 1

WEIGHTINGS = ("uniform", "rank", "reliability")
CONTEXT_SIDES = ("probe", "gallery", "bilateral")
STAGE_MODES = ("first", "second", "progressive")


class GalleryIndexError(Exception):
    """Base class for index persistence and compatibility errors."""


class IndexVersionError(GalleryIndexError):
    """Index file declares an unsupported format version."""


class CorruptIndexError(GalleryIndexError):
    """Index file is truncated or fails its integrity check."""


class FingerprintMismatchError(GalleryIndexError):
    """Index was built from a different gallery than the one supplied."""


@dataclass(frozen=True)
class RerankParams:
    """All knobs of the re-ranking method.

    k0, k and depth are structural (baked into an index at build time);
    L, measure, weighting, context_side and stages select query-time
    behavior and default to the values recorded in the index.
    """

    k0: int = 2
    k: int = 10
    L: int = 200
    measure: str = "combined"
    weighting: str = "reliability"
    context_side: str = "bilateral"
    stages: str = "progressive"
    depth: Optional[int] = None

    def __post_init__(self):
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.L < self.k:
            raise ValueError("L must be >= k")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.context_side not in CONTEXT_SIDES:
            raise ValueError(f"context_side must be one of {CONTEXT_SIDES}")
        if self.stages not in STAGE_MODES:
            raise ValueError(f"stages must be one of {STAGE_MODES}")
        if self.depth is not None and self.depth < self.k:
            raise ValueError("depth cap must be >= k")


def fingerprint_features(fs: ds.FeatureSet) -> str:
    """Content checksum of a feature set (ids, metadata, feature bytes)."""
    h = hashlib.sha256()
    h.update(struct.pack("<II", fs.n, fs.dim))
    for i in range(fs.n):
        h.update(fs.ids[i].encode("utf-8"))
        h.update(b"\x00")
        h.update(str(fs.cameras[i]).encode("utf-8"))
        h.update(b"\x00")
        h.update(str(fs.labels[i]).encode("utf-8"))
        h.update(b"\x00")
    h.update(np.ascontiguousarray(fs.features, dtype="<f4").tobytes())
    return h.hexdigest()


@dataclass
class GalleryIndex:
    """Immutable offline artifact consumed by the online query engine.

    Context entries and weights are stored as dense (N, k) / (N, k0*k)
    matrices; ctx1_w holds the combined mutual-rank weights and ctx2_w
    the per-block reliability weights. Other weighting modes are derived
    at query time from the position table and kappa.
    """

    params: RerankParams
    metric_kind: str
    fingerprint: str
    features: Optional[ds.FeatureSet]
    order: np.ndarray  # (N, N-1) int32
    positions: np.ndarray  # (N, N) int32 or uint16
    ctx1_idx: np.ndarray  # (N, k) int32
    ctx1_w: np.ndarray  # (N, k) float64
    ctx2_idx: np.ndarray  # (N, k0*k) int32
    ctx2_w: np.ndarray  # (N, k0*k) float64
    kappa: np.ndarray  # (N,) float64
    gallery_ids: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.order.shape[0]

    @property
    def position_table(self) -> PositionTable:
        return PositionTable(self.positions, depth=self.params.depth)

    def ranking(self, g: int) -> RankingList:
        return RankingList(anchor=g, order=self.order[g], gallery_size=self.n)

    def context1(self, g: int) -> ContextSet:
        return ContextSet(
            anchor=g,
            order=1,
            k=self.params.k,
            indices=self.ctx1_idx[g],
            weights=self.ctx1_w[g],
        )

    def context2(self, g: int) -> ContextSet:
        k0, k = self.params.k0, self.params.k
        return ContextSet(
            anchor=g,
            order=2,
            k=k,
            k0=k0,
            indices=self.ctx2_idx[g],
            weights=self.ctx2_w[g],
            blocks=np.repeat(np.arange(1, k0 + 1, dtype=np.int32), k),
            block_anchors=self.order[g, :k0],
        )

    @property
    def reliability(self) -> ReliabilityTable:
        return ReliabilityTable(kappa=self.kappa, k_used=self.params.k)

    def verify_gallery(self, gallery: ds.FeatureSet) -> None:
        """Raise FingerprintMismatchError if `gallery` is not the set this
        index was built from."""
        fp = fingerprint_features(gallery)
        if fp != self.fingerprint:
            raise FingerprintMismatchError(
                f"index fingerprint {self.fingerprint[:12]} does not match "
                f"gallery fingerprint {fp[:12]}"
            )


def _derive_contexts(
    order: np.ndarray, positions: np.ndarray, params: RerankParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Compute ctx1/ctx2 index+weight matrices and kappa from the tables."""
    n = order.shape[0]
    k0, k = params.k0, params.k
    ctx1_idx = order[:, :k].astype(np.int32, copy=True)

    anchors = np.arange(n, dtype=np.int64)
    # entries are the anchor's top-k, so their position in the anchor's
    # list is simply 1..k; the reverse position needs a table gather
    l_entry = np.arange(1, k + 1, dtype=np.float64)[None, :]
    l_anchor = positions[ctx1_idx, anchors[:, None]].astype(np.float64)
    ctx1_w = 1.0 / (l_entry + l_anchor + np.maximum(l_entry, l_anchor))

    top_k0 = order[:, :k0]
    ctx2_idx = ctx1_idx[top_k0.reshape(-1)].reshape(n, k0 * k)

    rel = reliability_table(order, positions, k)
    ctx2_w = np.repeat(rel.kappa[top_k0], k, axis=1)
    return ctx1_idx, ctx1_w, ctx2_idx, ctx2_w, rel.kappa


def build_index(
    gallery: ds.FeatureSet,
    metric: Metric,
    params: RerankParams,
    threads: Optional[int] = None,
) -> GalleryIndex:
    """Precompute all offline artifacts from gallery features.

    Pure function of (gallery, metric, params); never reads probe data.
    """
    _check_build_size(gallery.n, params)
    order, positions = compute_gallery_tables(
        gallery, metric, depth=params.depth, threads=threads
    )
    return _assemble(
        params,
        metric.kind,
        fingerprint_features(gallery),
        gallery,
        order,
        positions,
        gallery.ids,
    )


def build_index_from_scores(
    scores: np.ndarray,
    params: RerankParams,
    gallery: Optional[ds.FeatureSet] = None,
    threads: Optional[int] = None,
) -> GalleryIndex:
    """Precompute the index from a gallery-gallery similarity matrix.

    The matrix diagonal is ignored. Without an accompanying feature set
    the fingerprint covers the induced ranking orders, so any strictly
    increasing transform of the scores yields an identical index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError("gallery score matrix must be square")
    _check_build_size(scores.shape[0], params)
    order, positions = ingest_gallery_tables(scores, depth=params.depth, threads=threads)
    if gallery is not None:
        if gallery.n != scores.shape[0]:
            raise ValueError("gallery feature set does not match score matrix size")
        fp = fingerprint_features(gallery)
        ids = gallery.ids
    else:
        fp = hashlib.sha256(order.astype("<i4").tobytes()).hexdigest()
        ids = tuple(f"g{i:06d}" for i in range(scores.shape[0]))
    return _assemble(params, "precomputed", fp, gallery, order, positions, ids)


def _check_build_size(n: int, params: RerankParams) -> None:
    if n < 2:
        raise ValueError("index build requires at least 2 gallery samples")
    if params.k > n - 1:
        raise ValueError(f"k={params.k} exceeds gallery ranking depth {n - 1}")
    if params.k0 > n - 1:
        raise ValueError(f"k0={params.k0} exceeds gallery ranking depth {n - 1}")


def _assemble(params, metric_kind, fp, features, order, positions, ids) -> GalleryIndex:
    ctx1_idx, ctx1_w, ctx2_idx, ctx2_w, kappa = _derive_contexts(
        order, positions, params
    )
    return GalleryIndex(
        params=params,
        metric_kind=metric_kind,
        fingerprint=fp,
        features=features,
        order=order,
        positions=positions,
        ctx1_idx=ctx1_idx,
        ctx1_w=ctx1_w,
        ctx2_idx=ctx2_idx,
        ctx2_w=ctx2_w,
        kappa=kappa,
        gallery_ids=tuple(ids),
    )


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------

_ARRAY_FIELDS = ("order", "positions", "ctx1_idx", "ctx1_w", "ctx2_idx", "ctx2_w", "kappa")


def save_index(ix: GalleryIndex, path) -> None:
    """Serialize to the PBCI container; bit-exact under round-trip."""
    buf = io.BytesIO()
    header = {
        "params": asdict(ix.params),
        "metric_kind": ix.metric_kind,
        "fingerprint": ix.fingerprint,
        "has_features": ix.features is not None,
        "gallery_ids": list(ix.gallery_ids),
        "arrays": [
            [name, str(getattr(ix, name).dtype), list(getattr(ix, name).shape)]
            for name in _ARRAY_FIELDS
        ],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<Q", len(head)))
    buf.write(head)
    if ix.features is not None:
        blob = ds.features_to_bytes(ix.features)
        buf.write(struct.pack("<Q", len(blob)))
        buf.write(blob)
    for name in _ARRAY_FIELDS:
        buf.write(np.ascontiguousarray(getattr(ix, name)).tobytes())
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<IQ", INDEX_VERSION, len(payload)))
        fh.write(payload)
        fh.write(digest)


def load_index(path) -> GalleryIndex:
    """Read a PBCI container, verifying integrity and version."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != INDEX_MAGIC:
        raise CorruptIndexError(f"{path}: not a PBCI index file")
    version, payload_len = struct.unpack_from("<IQ", data, 4)
    if version != INDEX_VERSION:
        raise IndexVersionError(
            f"{path}: index format version {version} is not supported "
            f"(expected {INDEX_VERSION})"
        )
    start = 16
    end = start + payload_len
    if len(data) < end + 32:
        raise CorruptIndexError(f"{path}: truncated index file")
    payload = data[start:end]
    digest = data[end : end + 32]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptIndexError(f"{path}: integrity check failed")

    off = 0
    (head_len,) = struct.unpack_from("<Q", payload, off)
    off += 8
    try:
        header = json.loads(payload[off : off + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptIndexError(f"{path}: bad index header: {exc}") from None
    off += head_len

    features = None
    if header["has_features"]:
        (blob_len,) = struct.unpack_from("<Q", payload, off)
        off += 8
        try:
            features = ds.features_from_bytes(
                payload[off : off + blob_len], source=f"{path}#features"
            )
        except ds.FeatureFileError as exc:
            raise CorruptIndexError(str(exc)) from None
        off += blob_len

    arrays = {}
    for name, dtype_s, shape in header["arrays"]:
        dtype = np.dtype(dtype_s)
        count = int(np.prod(shape)) if shape else 1
        nbytes = dtype.itemsize * count
        if off + nbytes > len(payload):
            raise CorruptIndexError(f"{path}: truncated array section {name}")
        arrays[name] = (
            np.frombuffer(payload, dtype=dtype, count=count, offset=off)
            .reshape(shape)
            .copy()
        )
        off += nbytes
    if off != len(payload):
        raise CorruptIndexError(f"{path}: trailing bytes in payload")

    return GalleryIndex(
        params=RerankParams(**header["params"]),
        metric_kind=header["metric_kind"],
        fingerprint=header["fingerprint"],
        features=features,
        gallery_ids=tuple(header["gallery_ids"]),
        **arrays,
    )
