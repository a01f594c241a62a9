"""Command-line interface: synth, build-index, rerank, evaluate.

Every flag can also come from a `--config` file of key=value lines
(flags win). The fully resolved configuration is echoed to stderr before
work starts, and all randomness flows through explicit seeds, so
identical invocations produce identical artifacts.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from . import __version__, dataset
from .baseline import (
    SCORES_MAGIC,
    Metric,
    load_score_matrix,
    read_ranking_dump,
    write_ranking_dump,
)
from .dataset import BINARY_MAGIC, FeatureFileError, SynthConfig, generate_synthetic
from .evaluation import (
    GroundTruth,
    cross_camera_ground_truth,
    evaluate,
    save_ground_truth,
)
from .index import (
    INDEX_VERSION,
    GalleryIndexError,
    RerankParams,
    build_index,
    build_index_from_scores,
    load_index,
    save_index,
)
from .rerank import QueryResult, Reranker


class UserError(Exception):
    """Invalid invocation or input; reported without a stack trace."""


@dataclass(frozen=True)
class Opt:
    name: str  # long flag without dashes, underscores inside
    type: Callable[[str], Any]
    default: Any = None
    help: str = ""
    choices: Optional[tuple] = None
    required: bool = False
    is_flag: bool = False


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_int(s: str) -> Optional[int]:
    return None if s.strip().lower() in ("", "none", "full") else int(s)


_COMMON = (
    Opt("config", str, None, "key=value file with defaults for any flag"),
    Opt("threads", int, 0, "worker threads (0 = available parallelism)"),
)

_QUERY_OPTS = (
    Opt("L", _opt_int, None, "re-rank depth (default: value stored in the index)"),
    Opt("stages", str, None, "first|second|progressive", ("first", "second", "progressive")),
    Opt("measure", str, None, "nonreciprocal|max|sum|combined",
        ("nonreciprocal", "max", "sum", "combined")),
    Opt("weighting", str, None, "uniform|rank|reliability",
        ("uniform", "rank", "reliability")),
    Opt("context_side", str, None, "probe|gallery|bilateral",
        ("probe", "gallery", "bilateral")),
)

_SUBCOMMANDS: dict[str, tuple[Opt, ...]] = {
    "synth": _COMMON + (
        Opt("num_ids", int, 100, "number of identities"),
        Opt("gallery_per_id", int, 6, "gallery images per identity"),
        Opt("probes_per_id", int, 1, "probe images per identity"),
        Opt("dim", int, 32, "feature dimension"),
        Opt("noise", float, 0.3, "intra-identity noise scale"),
        Opt("camera_offset", float, 0.3, "per-camera offset scale"),
        Opt("num_cameras", int, 3, "number of cameras"),
        Opt("seed", int, 0, "RNG seed"),
        Opt("format", str, "binary", "feature file format", ("csv", "binary")),
        Opt("out_gallery", str, required=True, help="gallery output path"),
        Opt("out_probes", str, required=True, help="probes output path"),
        Opt("out_gt", str, None, "cross-camera ground-truth output path"),
    ),
    "build-index": _COMMON + (
        Opt("gallery", str, None, "gallery feature file (csv or PBCF)"),
        Opt("gallery_scores", str, None, "gallery-gallery PBCS score matrix"),
        Opt("metric", str, "euclidean", "euclidean|cosine", ("euclidean", "cosine")),
        Opt("k0", int, 2, "second-order block count"),
        Opt("k", int, 10, "context size"),
        Opt("L", int, 200, "default re-rank depth recorded in the index"),
        Opt("depth", _opt_int, None, "position table cap (default: full)"),
        Opt("measure", str, "combined", "default measure recorded in the index",
            ("nonreciprocal", "max", "sum", "combined")),
        Opt("weighting", str, "reliability", "default weighting recorded in the index",
            ("uniform", "rank", "reliability")),
        Opt("context_side", str, "bilateral", "default side recorded in the index",
            ("probe", "gallery", "bilateral")),
        Opt("stages", str, "progressive", "default stages recorded in the index",
            ("first", "second", "progressive")),
        Opt("out", str, required=True, help="index output path (PBCI)"),
    ),
    "rerank": _COMMON + _QUERY_OPTS + (
        Opt("index", str, required=True, help="gallery index file (PBCI)"),
        Opt("queries", str, required=True,
            help="probe features (csv/PBCF) or scores (PBCS)"),
        Opt("topk_out", int, 0, "emit only the top K per probe (0 = all)"),
        Opt("out", str, required=True, help="rankings output path"),
        Opt("dump_scores", str, None, "per-candidate score dump path"),
        Opt("timing_out", str, None, "per-query microsecond log path"),
        Opt("baseline_only", _bool, False, "emit initial rankings unchanged",
            is_flag=True),
    ),
    "evaluate": _COMMON + (
        Opt("rankings", str, required=True, help="rankings file from `rerank`"),
        Opt("gt", str, required=True, help="ground-truth file"),
        Opt("max_rank", int, 20, "CMC depth"),
        Opt("timing", str, None, "per-query microsecond log from `rerank`"),
        Opt("offline_seconds", float, None, "offline build time to report"),
        Opt("out", str, None, "report output path (default: stdout only)"),
    ),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxrerank",
        description="Context-driven re-ranking of feature-based retrieval results.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"ctxrerank {__version__} (index format v{INDEX_VERSION})",
    )
    subs = parser.add_subparsers(dest="command")
    for name, opts in _SUBCOMMANDS.items():
        sub = subs.add_parser(name)
        for opt in opts:
            flag = "--" + opt.name.replace("_", "-")
            if opt.is_flag:
                sub.add_argument(flag, dest=opt.name, action="store_const", const=True)
            else:
                sub.add_argument(
                    flag,
                    dest=opt.name,
                    type=str,
                    choices=None,  # validated after config merge
                    help=opt.help,
                )
    return parser


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UserError(f"{path}:{lineno}: expected key=value")
                key, val = line.split("=", 1)
                values[key.strip().replace("-", "_")] = val.strip()
    except OSError as exc:
        raise UserError(f"cannot read config file: {exc}") from None
    return values


def _resolve(args: argparse.Namespace, opts: tuple[Opt, ...]) -> dict[str, Any]:
    file_values: dict[str, str] = {}
    config_path = getattr(args, "config", None)
    if config_path:
        file_values = _read_config_file(config_path)
        unknown = set(file_values) - {o.name for o in opts}
        if unknown:
            raise UserError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    resolved: dict[str, Any] = {}
    for opt in opts:
        raw = getattr(args, opt.name, None)
        if raw is None and opt.name in file_values:
            raw = file_values[opt.name]
        if raw is None:
            value = opt.default
        else:
            try:
                value = raw if not isinstance(raw, str) else opt.type(raw)
            except ValueError as exc:
                raise UserError(f"--{opt.name.replace('_', '-')}: {exc}") from None
        if value is None and opt.required:
            raise UserError(f"missing required --{opt.name.replace('_', '-')}")
        if opt.choices is not None and value is not None and value not in opt.choices:
            raise UserError(
                f"--{opt.name.replace('_', '-')}: invalid choice {value!r} "
                f"(choose from {', '.join(opt.choices)})"
            )
        resolved[opt.name] = value
    return resolved


def _echo_config(command: str, cfg: dict[str, Any]) -> None:
    print(f"config: command={command}", file=sys.stderr)
    for key in sorted(cfg):
        print(f"config: {key}={cfg[key]}", file=sys.stderr)


def _threads(cfg: dict[str, Any]) -> Optional[int]:
    t = cfg.get("threads") or 0
    return t if t > 0 else (os.cpu_count() or 1)


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def cmd_synth(cfg: dict[str, Any]) -> int:
    sc = SynthConfig(
        num_ids=cfg["num_ids"],
        gallery_per_id=cfg["gallery_per_id"],
        probes_per_id=cfg["probes_per_id"],
        dim=cfg["dim"],
        intra_id_noise=cfg["noise"],
        camera_offset_scale=cfg["camera_offset"],
        num_cameras=cfg["num_cameras"],
        seed=cfg["seed"],
    )
    gallery, probes = generate_synthetic(sc)
    dataset.save_features(gallery, cfg["out_gallery"], format=cfg["format"])
    dataset.save_features(probes, cfg["out_probes"], format=cfg["format"])
    if cfg["out_gt"]:
        gt = cross_camera_ground_truth(gallery, probes)
        save_ground_truth(gt, cfg["out_gt"], gallery.ids)
    print(
        f"synth: wrote {gallery.n} gallery / {probes.n} probe samples (dim={sc.dim})",
        file=sys.stderr,
    )
    return 0


def cmd_build_index(cfg: dict[str, Any]) -> int:
    params = RerankParams(
        k0=cfg["k0"],
        k=cfg["k"],
        L=cfg["L"],
        measure=cfg["measure"],
        weighting=cfg["weighting"],
        context_side=cfg["context_side"],
        stages=cfg["stages"],
        depth=cfg["depth"],
    )
    t0 = time.perf_counter()
    if cfg["gallery_scores"]:
        scores = load_score_matrix(cfg["gallery_scores"])
        gallery = (
            dataset.load_features(cfg["gallery"]) if cfg["gallery"] else None
        )
        ix = build_index_from_scores(
            scores, params, gallery=gallery, threads=_threads(cfg)
        )
    elif cfg["gallery"]:
        gallery = dataset.load_features(cfg["gallery"])
        ix = build_index(gallery, Metric(cfg["metric"]), params, threads=_threads(cfg))
    else:
        raise UserError("build-index needs --gallery or --gallery-scores")
    build_s = time.perf_counter() - t0
    save_index(ix, cfg["out"])
    print(
        f"build-index: N={ix.n} built in {build_s:.2f} s -> {cfg['out']}",
        file=sys.stderr,
    )
    return 0


def _load_queries(path: str) -> tuple[str, Any]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == SCORES_MAGIC:
        return "scores", load_score_matrix(path)
    if magic == BINARY_MAGIC:
        return "features", dataset.load_features(path, format="binary")
    return "features", dataset.load_features(path, format="csv")


def cmd_rerank(cfg: dict[str, Any]) -> int:
    index = load_index(cfg["index"])
    base = index.params
    params = RerankParams(
        k0=base.k0,
        k=base.k,
        depth=base.depth,
        L=cfg["L"] if cfg["L"] is not None else base.L,
        stages=cfg["stages"] or base.stages,
        measure=cfg["measure"] or base.measure,
        weighting=cfg["weighting"] or base.weighting,
        context_side=cfg["context_side"] or base.context_side,
    )
    for name in ("L", "stages", "measure", "weighting", "context_side"):
        print(f"config: effective {name}={getattr(params, name)}", file=sys.stderr)
    engine = Reranker(index, params)
    kind, queries = _load_queries(cfg["queries"])
    if kind == "scores":
        if queries.shape[1] != index.n:
            raise UserError(
                f"score matrix has {queries.shape[1]} columns, index has {index.n} samples"
            )
        probes = np.asarray(queries, dtype=np.float64)
        ids = [f"q{i:06d}" for i in range(len(probes))]
        use_scores = True
    else:
        if index.features is None:
            raise UserError(
                "index has no gallery features; supply PBCS probe scores instead"
            )
        if queries.dim != index.features.dim:
            raise UserError(
                f"probe dimension {queries.dim} does not match gallery "
                f"dimension {index.features.dim}"
            )
        probes = queries.features
        ids = list(queries.ids)
        use_scores = False

    if cfg["baseline_only"]:
        results = engine.baseline_results(probes, ids, scores=use_scores)
    else:
        results = engine.query_batch(
            probes, ids, threads=_threads(cfg), scores=use_scores
        )

    gids = index.gallery_ids
    topk = cfg["topk_out"] or None
    write_ranking_dump(
        cfg["out"],
        ((r.probe_id, [gids[g] for g in r.final_order]) for r in results),
        topk=topk,
    )
    if cfg["dump_scores"]:
        with open(cfg["dump_scores"], "w", encoding="utf-8") as fh:
            for r in results:
                for c in r.candidates:
                    s2 = "-" if c.stage2_score is None else f"{c.stage2_score:.9g}"
                    fh.write(
                        f"{r.probe_id} {gids[c.gallery_index]} "
                        f"{c.stage1_score:.9g} {s2}\n"
                    )
    if cfg["timing_out"]:
        with open(cfg["timing_out"], "w", encoding="utf-8") as fh:
            for r in results:
                fh.write(f"{r.rerank_micros:.3f} {r.total_micros:.3f}\n")
    rr = np.array([r.rerank_micros for r in results])
    print(
        f"rerank: {len(results)} queries, median {np.median(rr) / 1e3:.2f} ms "
        f"re-rank time -> {cfg['out']}",
        file=sys.stderr,
    )
    return 0


def cmd_evaluate(cfg: dict[str, Any]) -> int:
    lines = read_ranking_dump(cfg["rankings"])
    vocab: dict[str, int] = {}

    def to_idx(sid: str) -> int:
        return vocab.setdefault(sid, len(vocab))

    results = [
        QueryResult(
            probe_id=pid,
            final_order=np.array([to_idx(s) for s in ids], dtype=np.int64),
            candidates=[],
            rerank_micros=0.0,
            total_micros=0.0,
        )
        for pid, ids in lines
    ]

    positives: dict[str, set[int]] = {}
    junk: dict[str, set[int]] = {}
    with open(cfg["gt"], "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 3 or not parts[1].startswith("pos:") or not parts[
                2
            ].startswith("junk:"):
                raise UserError(
                    f"{cfg['gt']}:{lineno}: expected 'probe | pos: ... | junk: ...'"
                )
            pid = parts[0]
            positives[pid] = {
                to_idx(s.strip())
                for s in parts[1].split(":", 1)[1].split(",")
                if s.strip()
            }
            junk[pid] = {
                to_idx(s.strip())
                for s in parts[2].split(":", 1)[1].split(",")
                if s.strip()
            }
    gt = GroundTruth(positives=positives, junk=junk)

    micros: list[float] = []
    if cfg["timing"]:
        with open(cfg["timing"], "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    micros.append(float(line.split()[0]))

    report = evaluate(
        results,
        gt,
        max_k=cfg["max_rank"],
        build_seconds=cfg["offline_seconds"],
        per_query_micros=micros,
    )
    text = report.to_table() + "\n" + report.to_keyvalues()
    if cfg["out"]:
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(report.to_keyvalues())
    return 0


_DISPATCH = {
    "synth": cmd_synth,
    "build-index": cmd_build_index,
    "rerank": cmd_rerank,
    "evaluate": cmd_evaluate,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse printed its own message (or --version)
        return int(exc.code or 0)
    if not args.command:
        parser.print_help(sys.stderr)
        return 2
    try:
        cfg = _resolve(args, _SUBCOMMANDS[args.command])
        _echo_config(args.command, cfg)
        return _DISPATCH[args.command](cfg)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FeatureFileError, GalleryIndexError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
