"""Feature-set ingestion, serialization, and synthetic data generation.

A FeatureSet bundles sample identifiers, optional camera/label metadata,
and a dense feature matrix. Two on-disk formats are supported: a CSV
format for interoperability and a compact binary format (magic ``PBCF``)
for exact round-trips. The synthetic generator produces gallery/probe
splits with per-identity centroids, per-camera offsets, and isotropic
noise, so retrieval behavior can be exercised at desk scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

BINARY_MAGIC = b"PBCF"
BINARY_VERSION = 1

# float32 values survive a decimal round-trip at 9 significant digits
_CSV_FLOAT_FMT = "%.9g"


class FeatureFileError(ValueError):
    """Raised when a feature file is malformed or inconsistent."""


@dataclass(frozen=True)
class FeatureSet:
    """Immutable collection of samples with dense feature vectors.

    Attributes:
        ids: Unique sample identifiers, in file/generation order.
        features: (N, d) float32 matrix, one row per sample.
        cameras: Per-sample camera id, None where absent.
        labels: Per-sample identity label, None where absent.
    """

    ids: tuple[str, ...]
    features: np.ndarray
    cameras: tuple[Optional[int], ...]
    labels: tuple[Optional[str], ...]

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        object.__setattr__(self, "features", feats)
        n, d = feats.shape
        if n < 1:
            raise ValueError("feature set must contain at least one sample")
        if d < 1:
            raise ValueError("feature dimension must be >= 1")
        if len(self.ids) != n or len(self.cameras) != n or len(self.labels) != n:
            raise ValueError("ids/cameras/labels must have one entry per feature row")
        if len(set(self.ids)) != n:
            dup = _first_duplicate(self.ids)
            raise ValueError(f"duplicate sample_id {dup!r}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_cameras(self) -> bool:
        return all(c is not None for c in self.cameras)

    @property
    def has_labels(self) -> bool:
        return all(lb is not None for lb in self.labels)

    def camera_array(self, missing: int = -1) -> np.ndarray:
        return np.array(
            [missing if c is None else c for c in self.cameras], dtype=np.int32
        )

    @staticmethod
    def build(
        ids,
        features,
        cameras=None,
        labels=None,
    ) -> "FeatureSet":
        """Construct a FeatureSet, filling absent metadata with None."""
        n = len(ids)
        cams = tuple(cameras) if cameras is not None else (None,) * n
        labs = tuple(labels) if labels is not None else (None,) * n
        return FeatureSet(tuple(str(i) for i in ids), np.asarray(features), cams, labs)


def _first_duplicate(items) -> str:
    seen = set()
    for it in items:
        if it in seen:
            return it
        seen.add(it)
    return ""


@dataclass(frozen=True)
class SynthConfig:
    """Parameters for the synthetic gallery/probe generator.

    Each identity gets a unit-norm centroid; every image of that identity
    is centroid + camera offset + isotropic noise. Output is a pure
    function of this config (fixed RNG draw order).
    """

    num_ids: int
    gallery_per_id: int
    probes_per_id: int = 1
    dim: int = 16
    intra_id_noise: float = 0.1
    camera_offset_scale: float = 0.0
    num_cameras: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_ids < 2:
            raise ValueError("num_ids must be >= 2")
        if self.gallery_per_id < 1:
            raise ValueError("gallery_per_id must be >= 1")
        if self.probes_per_id < 1:
            raise ValueError("probes_per_id must be >= 1")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.intra_id_noise < 0:
            raise ValueError("intra_id_noise must be >= 0")
        if self.camera_offset_scale < 0:
            raise ValueError("camera_offset_scale must be >= 0")
        if self.num_cameras < 2:
            raise ValueError("num_cameras must be >= 2")


def generate_synthetic(cfg: SynthConfig) -> tuple[FeatureSet, FeatureSet]:
    """Generate a (gallery, probes) pair from a SynthConfig.

    Gallery images of one identity cycle through cameras; probe cameras
    are chosen so every probe differs in camera from at least one gallery
    image of its identity. Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(cfg.seed)
    centroids = rng.normal(size=(cfg.num_ids, cfg.dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    cam_dirs = rng.normal(size=(cfg.num_cameras, cfg.dim))
    cam_dirs /= np.linalg.norm(cam_dirs, axis=1, keepdims=True)
    cam_offsets = cam_dirs * cfg.camera_offset_scale

    g_ids, g_cams, g_labels, g_feats = [], [], [], []
    for i in range(cfg.num_ids):
        label = f"id{i:04d}"
        for j in range(cfg.gallery_per_id):
            cam = j % cfg.num_cameras
            vec = (
                centroids[i]
                + cam_offsets[cam]
                + rng.normal(size=cfg.dim) * cfg.intra_id_noise
            )
            g_ids.append(f"g{len(g_ids):06d}")
            g_cams.append(cam)
            g_labels.append(label)
            g_feats.append(vec)

    p_ids, p_cams, p_labels, p_feats = [], [], [], []
    for i in range(cfg.num_ids):
        label = f"id{i:04d}"
        for t in range(cfg.probes_per_id):
            cam = _probe_camera(cfg, t)
            vec = (
                centroids[i]
                + cam_offsets[cam]
                + rng.normal(size=cfg.dim) * cfg.intra_id_noise
            )
            p_ids.append(f"q{len(p_ids):06d}")
            p_cams.append(cam)
            p_labels.append(label)
            p_feats.append(vec)

    gallery = FeatureSet.build(g_ids, np.array(g_feats), g_cams, g_labels)
    probes = FeatureSet.build(p_ids, np.array(p_feats), p_cams, p_labels)
    return gallery, probes


def _probe_camera(cfg: SynthConfig, t: int) -> int:
    # With a single gallery image (camera 0), probes must avoid camera 0
    # entirely; otherwise the gallery spans >= 2 cameras and any probe
    # camera differs from at least one gallery image's camera.
    if cfg.gallery_per_id == 1:
        return 1 + t % (cfg.num_cameras - 1)
    return (cfg.gallery_per_id + t) % cfg.num_cameras


# ----------------------------------------------------------------------
# File I/O
# ----------------------------------------------------------------------


def save_features(fs: FeatureSet, path, format: str = "binary") -> None:
    """Write a FeatureSet to disk in `csv` or `binary` format."""
    path = Path(path)
    if format == "csv":
        _save_csv(fs, path)
    elif format == "binary":
        _save_binary(fs, path)
    else:
        raise ValueError(f"unknown feature file format {format!r}")


def load_features(path, format: Optional[str] = None) -> FeatureSet:
    """Read a FeatureSet from disk; format auto-detected unless given."""
    path = Path(path)
    if not path.exists():
        raise FeatureFileError(f"feature file not found: {path}")
    if format is None:
        with open(path, "rb") as fh:
            format = "binary" if fh.read(4) == BINARY_MAGIC else "csv"
    if format == "csv":
        return _load_csv(path)
    if format == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown feature file format {format!r}")


def _save_csv(fs: FeatureSet, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"id,camera,label,d={fs.dim}\n")
        for i in range(fs.n):
            cam = "-" if fs.cameras[i] is None else str(fs.cameras[i])
            lab = "-" if fs.labels[i] is None else str(fs.labels[i])
            for val, name in ((fs.ids[i], "sample_id"), (lab, "label_id")):
                if "," in val:
                    raise ValueError(f"{name} {val!r} contains a comma")
            row = ",".join(_CSV_FLOAT_FMT % v for v in fs.features[i])
            fh.write(f"{fs.ids[i]},{cam},{lab},{row}\n")


def _load_csv(path: Path) -> FeatureSet:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FeatureFileError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) != 4 or header[:3] != ["id", "camera", "label"] or not header[
        3
    ].startswith("d="):
        raise FeatureFileError(f"{path}: malformed header {lines[0]!r}")
    try:
        dim = int(header[3][2:])
    except ValueError:
        raise FeatureFileError(f"{path}: malformed dimension in header") from None
    if dim < 1:
        raise FeatureFileError(f"{path}: dimension must be >= 1")

    ids, cams, labs, rows = [], [], [], []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3 + dim:
            raise FeatureFileError(
                f"{path}:{lineno}: expected {3 + dim} columns, got {len(parts)}"
            )
        sid, cam_s, lab_s = parts[0], parts[1], parts[2]
        if sid in seen:
            raise FeatureFileError(f"{path}:{lineno}: duplicate sample_id {sid!r}")
        seen.add(sid)
        try:
            cam = None if cam_s == "-" else int(cam_s)
        except ValueError:
            raise FeatureFileError(
                f"{path}:{lineno}: camera_id {cam_s!r} is not an integer"
            ) from None
        try:
            vec = [float(v) for v in parts[3:]]
        except ValueError:
            raise FeatureFileError(f"{path}:{lineno}: non-numeric feature value") from None
        ids.append(sid)
        cams.append(cam)
        labs.append(None if lab_s == "-" else lab_s)
        rows.append(vec)
    if not ids:
        raise FeatureFileError(f"{path}: no data rows")
    return FeatureSet(tuple(ids), np.array(rows, dtype=np.float32), tuple(cams), tuple(labs))


def features_to_bytes(fs: FeatureSet) -> bytes:
    """Encode a FeatureSet in the PBCF binary layout."""
    has_cam = any(c is not None for c in fs.cameras)
    has_lab = any(lb is not None for lb in fs.labels)
    if has_cam and not fs.has_cameras:
        raise ValueError("binary format cannot mix present and absent camera ids")
    if has_lab and not fs.has_labels:
        raise ValueError("binary format cannot mix present and absent labels")
    flags = (1 if has_cam else 0) | (2 if has_lab else 0)
    parts = [BINARY_MAGIC, struct.pack("<IIIB", BINARY_VERSION, fs.n, fs.dim, flags)]
    for i in range(fs.n):
        sid = fs.ids[i].encode("utf-8")
        parts.append(struct.pack("<H", len(sid)))
        parts.append(sid)
        if has_cam:
            parts.append(struct.pack("<i", fs.cameras[i]))
        if has_lab:
            lab = str(fs.labels[i]).encode("utf-8")
            parts.append(struct.pack("<H", len(lab)))
            parts.append(lab)
        parts.append(fs.features[i].astype("<f4").tobytes())
    return b"".join(parts)


def features_from_bytes(data: bytes, source: str = "<bytes>") -> FeatureSet:
    """Decode a PBCF binary blob into a FeatureSet."""
    view = memoryview(data)
    if data[:4] != BINARY_MAGIC:
        raise FeatureFileError(f"{source}: bad magic, not a PBCF file")
    try:
        version, n, dim, flags = struct.unpack_from("<IIIB", view, 4)
    except struct.error:
        raise FeatureFileError(f"{source}: truncated header") from None
    if version != BINARY_VERSION:
        raise FeatureFileError(f"{source}: unsupported PBCF version {version}")
    has_cam, has_lab = bool(flags & 1), bool(flags & 2)
    off = 17
    ids, cams, labs = [], [], []
    feats = np.empty((n, dim), dtype=np.float32)
    try:
        for i in range(n):
            (id_len,) = struct.unpack_from("<H", view, off)
            off += 2
            ids.append(bytes(view[off : off + id_len]).decode("utf-8"))
            off += id_len
            if has_cam:
                (cam,) = struct.unpack_from("<i", view, off)
                off += 4
                cams.append(cam)
            else:
                cams.append(None)
            if has_lab:
                (lab_len,) = struct.unpack_from("<H", view, off)
                off += 2
                labs.append(bytes(view[off : off + lab_len]).decode("utf-8"))
                off += lab_len
            else:
                labs.append(None)
            end = off + 4 * dim
            if end > len(data):
                raise FeatureFileError(f"{source}: truncated at record {i}")
            feats[i] = np.frombuffer(view[off:end], dtype="<f4")
            off = end
    except struct.error:
        raise FeatureFileError(f"{source}: truncated record") from None
    if off != len(data):
        raise FeatureFileError(f"{source}: {len(data) - off} trailing bytes")
    try:
        return FeatureSet(tuple(ids), feats, tuple(cams), tuple(labs))
    except ValueError as exc:
        raise FeatureFileError(f"{source}: {exc}") from None


def _save_binary(fs: FeatureSet, path: Path) -> None:
    path.write_bytes(features_to_bytes(fs))


def _load_binary(path: Path) -> FeatureSet:
    return features_from_bytes(path.read_bytes(), source=str(path))
