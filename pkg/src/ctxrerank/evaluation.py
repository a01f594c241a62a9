"""Retrieval-quality and latency measurement.

CMC rank-k is the fraction of probes whose first true match appears
within the top k of the junk-cleaned list; mAP averages, per probe, the
precision at each positive's position. Junk handling is a per-probe
exclusion mask (e.g. same identity seen by the same camera), removed
from the list before any counting, so the metrics stay dataset-agnostic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass
class GroundTruth:
    """Per-probe positive and junk gallery index sets (disjoint)."""

    positives: dict[str, set[int]]
    junk: dict[str, set[int]] = field(default_factory=dict)

    def __post_init__(self):
        for pid, pos in self.positives.items():
            overlap = pos & self.junk.get(pid, set())
            if overlap:
                raise ValueError(
                    f"probe {pid!r}: positives and junk overlap on {sorted(overlap)[:5]}"
                )


@dataclass
class TimingSummary:
    """Aggregate per-query latency statistics, in microseconds."""

    count: int
    mean_us: float
    median_us: float
    p95_us: float
    total_us: float


@dataclass
class EvalReport:
    """Evaluation outcome: CMC vector, mAP, per-probe APs, and timings."""

    cmc: np.ndarray  # rates at ranks 1..max_k
    map: float
    aps: dict[str, float]
    probes_scored: int
    probes_skipped: int
    offline_seconds: Optional[float] = None
    online: Optional[TimingSummary] = None

    def rank(self, k: int) -> float:
        return float(self.cmc[k - 1])

    def to_keyvalues(self) -> str:
        lines = [
            f"probes_scored={self.probes_scored}",
            f"probes_skipped={self.probes_skipped}",
            f"map={self.map:.6f}",
        ]
        for k in (1, 5, 10, 20):
            if k <= len(self.cmc):
                lines.append(f"cmc_rank{k}={self.cmc[k - 1]:.6f}")
        if self.offline_seconds is not None:
            lines.append(f"offline_seconds={self.offline_seconds:.3f}")
        if self.online is not None:
            lines.append(f"online_single_ms_mean={self.online.mean_us / 1e3:.3f}")
            lines.append(f"online_single_ms_median={self.online.median_us / 1e3:.3f}")
            lines.append(f"online_single_ms_p95={self.online.p95_us / 1e3:.3f}")
            lines.append(f"online_total_s={self.online.total_us / 1e6:.3f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [("probes scored", f"{self.probes_scored}")]
        if self.probes_skipped:
            rows.append(("probes skipped (no positives)", f"{self.probes_skipped}"))
        rows.append(("mAP", f"{self.map * 100:.1f}%"))
        for k in (1, 5, 10, 20):
            if k <= len(self.cmc):
                rows.append((f"Rank-{k}", f"{self.cmc[k - 1] * 100:.1f}%"))
        if self.offline_seconds is not None:
            rows.append(("offline build", f"{self.offline_seconds:.2f} s"))
        if self.online is not None:
            rows.append(("online single (median)", f"{self.online.median_us / 1e3:.2f} ms"))
            rows.append(("online total", f"{self.online.total_us / 1e6:.2f} s"))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {val}" for name, val in rows) + "\n"


def _relevance_pattern(order, positives, junk):
    """Junk-cleaned relevance pattern for one probe's ranked list."""
    keep = [g for g in order if g not in junk]
    return np.array([1 if g in positives else 0 for g in keep], dtype=np.int64)


def _split_scored(results, gt: GroundTruth, warn: bool = True):
    scored, skipped = [], 0
    for res in results:
        positives = gt.positives.get(res.probe_id, set())
        if not positives:
            skipped += 1
            continue
        scored.append((res, positives, gt.junk.get(res.probe_id, set())))
    if skipped and warn:
        warnings.warn(f"{skipped} probe(s) without positives excluded from metrics")
    if not scored:
        raise ValueError("no probe has positive gallery samples")
    return scored, skipped


def _cmc(scored, max_k: int) -> np.ndarray:
    hits = np.zeros(max_k, dtype=np.float64)
    for res, positives, junk in scored:
        pattern = _relevance_pattern(res.final_order, positives, junk)
        nz = np.flatnonzero(pattern)
        if len(nz) and nz[0] < max_k:
            hits[nz[0] :] += 1.0
    return hits / len(scored)


def _aps(scored) -> dict[str, float]:
    aps: dict[str, float] = {}
    for res, positives, junk in scored:
        pattern = _relevance_pattern(res.final_order, positives, junk)
        cum = np.cumsum(pattern)
        ranks = np.arange(1, len(pattern) + 1)
        precisions = (cum / ranks)[pattern == 1]
        aps[res.probe_id] = float(precisions.sum() / len(positives))
    return aps


def cmc_curve(results, gt: GroundTruth, max_k: int) -> np.ndarray:
    """Rank-k match rates over ranks 1..max_k.

    Junk entries are removed before counting; rate at k is the fraction
    of scored probes whose first positive sits at position <= k. Probes
    without positives are excluded with a warning.
    """
    scored, _ = _split_scored(results, gt)
    return _cmc(scored, max_k)


def per_query_average_precision(results, gt: GroundTruth) -> dict[str, float]:
    """AP per scored probe on the junk-cleaned list.

    AP averages, over all |positives|, the precision at each positive's
    position; positives missing from a (truncated) list contribute zero.
    """
    scored, _ = _split_scored(results, gt)
    return _aps(scored)


def mean_average_precision(results, gt: GroundTruth) -> float:
    aps = per_query_average_precision(results, gt)
    return float(np.mean(list(aps.values())))


def timing_report(
    build_seconds: Optional[float], per_query_micros: Sequence[float]
) -> tuple[Optional[float], Optional[TimingSummary]]:
    """Summarize offline and online timings; empty online data stays absent."""
    if build_seconds is not None and build_seconds < 0:
        raise ValueError("build_seconds must be nonnegative")
    micros = np.asarray(list(per_query_micros), dtype=np.float64)
    if micros.size == 0:
        return build_seconds, None
    if np.any(micros < 0):
        raise ValueError("per-query times must be nonnegative")
    summary = TimingSummary(
        count=int(micros.size),
        mean_us=float(micros.mean()),
        median_us=float(np.median(micros)),
        p95_us=float(np.percentile(micros, 95)),
        total_us=float(micros.sum()),
    )
    return build_seconds, summary


def evaluate(
    results,
    gt: GroundTruth,
    max_k: int = 20,
    build_seconds: Optional[float] = None,
    per_query_micros: Optional[Sequence[float]] = None,
) -> EvalReport:
    """Full evaluation of a batch of query results."""
    scored, skipped = _split_scored(results, gt)
    aps = _aps(scored)
    offline, online = timing_report(
        build_seconds, per_query_micros if per_query_micros is not None else []
    )
    return EvalReport(
        cmc=_cmc(scored, max_k),
        map=float(np.mean(list(aps.values()))),
        aps=aps,
        probes_scored=len(aps),
        probes_skipped=skipped,
        offline_seconds=offline,
        online=online,
    )


def cross_camera_ground_truth(gallery, probes) -> GroundTruth:
    """Standard protocol: same label is positive, except same-label
    same-camera entries which are junk. Without camera ids, all same-label
    entries are positives."""
    positives: dict[str, set[int]] = {}
    junk: dict[str, set[int]] = {}
    labels = list(gallery.labels)
    cameras = list(gallery.cameras)
    for p in range(probes.n):
        pid = probes.ids[p]
        plabel = probes.labels[p]
        pcam = probes.cameras[p]
        pos, jnk = set(), set()
        for g in range(gallery.n):
            if labels[g] is None or labels[g] != plabel:
                continue
            if pcam is not None and cameras[g] is not None and cameras[g] == pcam:
                jnk.add(g)
            else:
                pos.add(g)
        positives[pid] = pos
        junk[pid] = jnk
    return GroundTruth(positives=positives, junk=junk)


# ----------------------------------------------------------------------
# Ground-truth file format: `probe_id | pos: id,id | junk: id,id`
# ----------------------------------------------------------------------


def save_ground_truth(gt: GroundTruth, path, gallery_ids: Sequence[str]) -> None:
    ids = list(gallery_ids)
    with open(path, "w", encoding="utf-8") as fh:
        for pid in gt.positives:
            pos = ",".join(ids[g] for g in sorted(gt.positives[pid]))
            jnk = ",".join(ids[g] for g in sorted(gt.junk.get(pid, set())))
            fh.write(f"{pid} | pos: {pos} | junk: {jnk}\n")


def load_ground_truth(path, gallery_ids: Sequence[str]) -> GroundTruth:
    id_to_idx = {sid: i for i, sid in enumerate(gallery_ids)}
    positives: dict[str, set[int]] = {}
    junk: dict[str, set[int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 3 or not parts[1].startswith("pos:") or not parts[
                2
            ].startswith("junk:"):
                raise ValueError(
                    f"{path}:{lineno}: expected 'probe | pos: ... | junk: ...'"
                )
            pid = parts[0]

            def to_idx(section: str) -> set[int]:
                body = section.split(":", 1)[1].strip()
                if not body:
                    return set()
                try:
                    return {id_to_idx[s.strip()] for s in body.split(",")}
                except KeyError as exc:
                    raise ValueError(
                        f"{path}:{lineno}: unknown gallery id {exc.args[0]!r}"
                    ) from None

            positives[pid] = to_idx(parts[1])
            junk[pid] = to_idx(parts[2])
    return GroundTruth(positives=positives, junk=junk)
