"""Command-line entry point.

Every subcommand reads all of its inputs before writing anything and writes
outputs atomically. Options can also come from a JSON ``--config`` file whose
keys are option names (``n_videos`` or ``n-videos``); flags on the command
line win. Exit codes: 0 success, 1 usage error, 2 data error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text
from .dataset import (
    CN,
    UCN,
    RegionOverflowError,
    VideoRecord,
    layout_video,
    read_manifest,
    split_manifest,
    write_manifest,
)
from .embeddings import (
    EmbeddingRecords,
    build_gallery,
    gallery_from_records,
    read_embeddings,
    read_header,
    top_k_batch,
    write_embeddings,
)
from .geodesy import MU_HIGH, MU_LOW, gps_range_mu
from .hierarchical import ReductionPolicy, run_pipeline, screen_regions
from .loss import run_loss_checks
from .metrics import EvalConfig, Prediction, evaluate
from .synth import SynthConfig, gen_paired_embeddings, gen_world

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, indent=2, ensure_ascii=False))


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _load_manifest(path):
    return split_manifest(read_manifest(path))


def _read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return out


def _region_to_tiles(tiles) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for t in tiles:
        if t.kind == UCN:
            out.setdefault(t.region_id, []).append(t.tile_id)
    return out


# -- subcommands ---------------------------------------------------------------


def cmd_filter_videos(args) -> dict:
    _require(args, "manifest", "output")
    videos = _load_manifest(args.manifest)["videos"]
    if not videos:
        raise ValueError(f"{args.manifest}: no video records")
    mus = np.array([gps_range_mu(v.points).mu for v in videos])
    keep = [v for v, mu in zip(videos, mus) if args.lo <= mu <= args.hi]
    counts, edges = np.histogram(mus, bins=args.bins, range=(0.0, max(2 * args.hi, float(mus.max()))))
    write_manifest(keep, args.output)
    return {
        "total": len(videos),
        "accepted": len(keep),
        "rejected": len(videos) - len(keep),
        "bounds": [args.lo, args.hi],
        "mu_histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
    }


def cmd_tile(args) -> dict:
    _require(args, "manifest", "output")
    videos = _load_manifest(args.manifest)["videos"]
    if not videos:
        raise ValueError(f"{args.manifest}: no video records")
    kept: list[VideoRecord] = []
    regions, ucn, clips, cn = [], [], [], []
    overflow = []
    for v in videos:
        try:
            layout = layout_video(v)
        except RegionOverflowError:
            overflow.append(v.video_id)
            continue
        kept.append(v)
        regions.append(layout.region)
        ucn.extend(layout.ucn_tiles)
        clips.extend(layout.clips)
        cn.extend(layout.cn_tiles)
    write_manifest([*kept, *regions, *ucn, *clips, *cn], args.output)
    return {
        "videos": len(kept),
        "regions": len(regions),
        "ucn_tiles": len(ucn),
        "clips": len(clips),
        "cn_tiles": len(cn),
        "overflow": overflow,
    }


def cmd_build_gallery(args) -> dict:
    _require(args, "embeddings", "output")
    records = read_embeddings(args.embeddings)
    if args.manifest:
        parts = _load_manifest(args.manifest)
        if args.kind == "region":
            allowed = {r.region_id for r in parts["regions"]}
        else:
            allowed = {t.tile_id for t in parts["tiles"] if t.kind == args.kind.upper()}
        missing = [i for i in records.ids if i not in allowed]
        if missing:
            raise ValueError(f"{len(missing)} ids not found among {args.kind} records, e.g. {missing[0]!r}")
    g = gallery_from_records(records)
    write_embeddings(EmbeddingRecords(g.ids, g.vectors, True), args.output)
    return {"count": len(g), "dim": g.dim, "vector_bytes": g.nbytes}


def _default_k(n: int) -> int:
    return max(10, -(-n // 100))


def cmd_retrieve(args) -> dict:
    _require(args, "gallery", "queries", "output")
    gallery = gallery_from_records(read_embeddings(args.gallery))
    queries = read_embeddings(args.queries)
    k = min(args.k or _default_k(len(gallery)), len(gallery))
    results = top_k_batch(gallery, queries.vectors, k, args.workers)
    atomic_write_text(
        args.output, (_dumps({"query_id": q, "ranked": r.to_json()}) for q, r in zip(queries.ids, results))
    )
    return {"queries": len(queries), "gallery_size": len(gallery), "k": k}


def _clips_by_video(clips) -> dict[str, list]:
    out: dict[str, list] = {}
    for c in clips:
        out.setdefault(c.video_id, []).append(c)
    return out


def cmd_screen(args) -> dict:
    _require(args, "manifest", "retrieval", "tiles", "regions", "output")
    parts = _load_manifest(args.manifest)
    retrieval = {row["query_id"]: row["ranked"] for row in _read_jsonl(args.retrieval)}
    tiles = gallery_from_records(read_embeddings(args.tiles))
    regions = gallery_from_records(read_embeddings(args.regions))
    k = min(args.k or 10, len(regions))
    lines = []
    for video_id, clips in _clips_by_video(parts["clips"]).items():
        predicted = [retrieval[c.clip_id][0][0] for c in clips if c.clip_id in retrieval]
        if not predicted:
            continue
        seq = tiles.vectors[[tiles.position(t) for t in predicted]]
        ranked = screen_regions(seq, regions, k, args.seq_len)
        length = len(seq) if args.seq_len is None else min(len(seq), args.seq_len)
        lines.append({"video_id": video_id, "sequence_length": length, "regions": ranked.to_json()})
    atomic_write_text(args.output, map(_dumps, lines))
    return {"videos": len(lines), "region_gallery_size": len(regions), "k": k}


def cmd_pipeline(args) -> dict:
    _require(args, "manifest", "clips", "tiles", "regions", "output")
    parts = _load_manifest(args.manifest)
    clip_emb = read_embeddings(args.clips)
    tiles = gallery_from_records(read_embeddings(args.tiles))
    regions = gallery_from_records(read_embeddings(args.regions))
    policy = ReductionPolicy.parse(args.policy)
    clip_video = {c.clip_id: c.video_id for c in parts["clips"]}
    missing = [c for c in clip_emb.ids if c not in clip_video]
    if missing:
        raise ValueError(f"clip {missing[0]!r} has no clip record in the manifest")
    truth = None
    if all(c.tile_id is not None for c in parts["clips"]):
        truth = {c.clip_id: c.tile_id for c in parts["clips"]}
    region_to_tiles = _region_to_tiles(parts["tiles"])
    k = min(args.k or _default_k(len(tiles)), len(tiles))
    result = run_pipeline(
        clip_emb.ids,
        clip_emb.vectors,
        clip_video,
        tiles,
        regions,
        region_to_tiles,
        policy,
        k=k,
        truth=truth,
        max_len=args.seq_len,
        workers=args.workers,
    )
    atomic_write_text(args.output, (_dumps(v.to_json()) for v in result.videos))
    summary = {"videos": len(result.videos), "clips": len(result.clips()), "policy": str(policy), "k": k}
    if truth is not None:
        summary["retained_gt"] = result.retained_fraction()
    return summary


def _predictions_from_file(rows: list[dict], step: str) -> tuple[list[tuple[str, list]], int | None]:
    """``[(clip_id, ranked ids)]`` and the smallest searched gallery (pipeline files)."""
    if rows and "clips" in rows[0]:
        out = []
        smallest = None
        for video in rows:
            size = video["reduced_size"] if step == "step4" else None
            if size is not None:
                smallest = size if smallest is None else min(smallest, size)
            for c in video["clips"]:
                out.append((c["clip_id"], [i for i, _ in c[step]]))
        return out, smallest
    return [(row["query_id"], [i for i, _ in row["ranked"]]) for row in rows], None


def cmd_evaluate(args) -> dict:
    _require(args, "manifest", "predictions")
    parts = _load_manifest(args.manifest)
    rows = _read_jsonl(args.predictions)
    if not rows:
        raise ValueError(f"{args.predictions}: no predictions")
    mode = args.mode.upper()
    clips = {c.clip_id: c for c in parts["clips"]}
    centers = {t.tile_id: t.center_gps for t in parts["tiles"]}
    centers.update({r.region_id: r.center_gps for r in parts["regions"]})

    if args.gallery_size is not None:
        full = args.gallery_size
    elif args.gallery is not None:
        full = read_header(args.gallery)[1]
    else:
        full = sum(1 for t in parts["tiles"] if t.kind == (CN if mode == CN else UCN))

    ranked, reduced = _predictions_from_file(rows, args.step)
    preds = []
    for query_id, ids in ranked:
        clip = clips.get(query_id)
        if clip is None:
            raise ValueError(f"prediction for unknown clip {query_id!r}")
        try:
            points = tuple(centers[i] for i in ids)
        except KeyError as exc:
            raise ValueError(f"missing prediction GPS for tile {exc.args[0]!r}") from None
        preds.append(Prediction(query_id, tuple(ids), clip.tile_id, clip.label, points))

    config = EvalConfig(
        mode=mode,
        ks=args.ks,
        thresholds=args.thresholds,
        pct=args.pct,
        gallery_size=reduced if reduced is not None else full,
        reference_size=full,
    )
    report = evaluate(preds, config)
    print(report.to_table())
    out = report.to_dict()
    if args.output:
        atomic_write_text(args.output, [json.dumps(out, indent=2)])
    else:
        print(json.dumps(out, indent=2))
    return out


def cmd_synth(args) -> dict:
    _require(args, "output")
    cfg = SynthConfig(
        seed=args.seed,
        n_videos=args.n_videos,
        n_regions=args.n_regions,
        clips_per_video=args.clips_per_video,
        dim=args.dim,
        noise_sigma=args.sigma,
        region_signature_strength=args.strength,
    )
    world = gen_world(cfg)
    emb = gen_paired_embeddings(cfg, world)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(world.records(), out / "manifest.jsonl")
    write_embeddings(emb.clips, out / "clips.emb")
    write_embeddings(emb.tiles, out / "tiles.emb")
    write_embeddings(emb.regions, out / "regions.emb")
    return {
        "output": str(out),
        "videos": len(world.videos),
        "regions": len(world.regions),
        "ucn_tiles": len(world.ucn_tiles),
        "clips": len(world.clips),
        "cn_tiles": len(world.cn_tiles),
        "dim": cfg.dim,
    }


def cmd_loss_check(args) -> dict:
    summary = run_loss_checks(trials=args.trials, seed=args.seed)
    if args.output:
        atomic_write_text(args.output, [json.dumps(summary, indent=2)])
    return summary


# -- parser --------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--output", help="output path")

    parser = _Parser(prog="vidgeo", description="Cross-view video geo-localization toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("filter-videos", cmd_filter_videos, "keep videos whose GPS range lies in the accepted band")
    p.add_argument("--manifest")
    p.add_argument("--lo", type=float, default=MU_LOW)
    p.add_argument("--hi", type=float, default=MU_HIGH)
    p.add_argument("--bins", type=int, default=16)

    p = add("tile", cmd_tile, "emit regions, UCN tiles, clips and CN tiles for videos")
    p.add_argument("--manifest")

    p = add("build-gallery", cmd_build_gallery, "validate and normalize an embedding file")
    p.add_argument("--embeddings")
    p.add_argument("--manifest")
    p.add_argument("--kind", choices=["ucn", "cn", "region"], default="ucn")

    p = add("retrieve", cmd_retrieve, "exact top-k search of query embeddings in a gallery")
    p.add_argument("--gallery")
    p.add_argument("--queries")
    p.add_argument("-k", "--k", type=int)

    p = add("screen", cmd_screen, "rank large regions from each video's top-1 tile sequence")
    p.add_argument("--manifest")
    p.add_argument("--retrieval", help="output of `retrieve` for clips against tiles")
    p.add_argument("--tiles")
    p.add_argument("--regions")
    p.add_argument("-k", "--k", type=int)
    p.add_argument("--seq-len", type=int)

    p = add("pipeline", cmd_pipeline, "full clip -> region -> reduced gallery -> clip pipeline")
    p.add_argument("--manifest")
    p.add_argument("--clips")
    p.add_argument("--tiles")
    p.add_argument("--regions")
    p.add_argument("--policy", default="top-percent:1")
    p.add_argument("-k", "--k", type=int)
    p.add_argument("--seq-len", type=int)

    p = add("evaluate", cmd_evaluate, "recall@k, recall@1%% and top-1@distance report")
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--step", choices=["step1", "step4"], default="step4")
    p.add_argument("--mode", choices=["ucn", "cn", "UCN", "CN"], default="ucn")
    p.add_argument("--ks", type=_int_list, default=(1, 5, 10))
    p.add_argument("--thresholds", type=_float_list, default=(0.1, 0.2, 0.5, 1.0))
    p.add_argument("--pct", type=float, default=1.0)
    p.add_argument("--gallery-size", type=int)
    p.add_argument("--gallery", help="embedding file whose record count is the gallery size")

    p = add("synth", cmd_synth, "write a synthetic manifest and embedding files")
    defaults = SynthConfig()
    p.add_argument("--n-videos", type=int, default=defaults.n_videos)
    p.add_argument("--n-regions", type=int, default=defaults.n_regions)
    p.add_argument("--clips-per-video", type=int, default=defaults.clips_per_video)
    p.add_argument("--dim", type=int, default=defaults.dim)
    p.add_argument("--sigma", type=float, default=defaults.noise_sigma)
    p.add_argument("--strength", type=float, default=defaults.region_signature_strength)

    p = add("loss-check", cmd_loss_check, "compare the loss against a loop oracle and finite differences")
    p.add_argument("--trials", type=int, default=100)

    return parser, subs


def _apply_config(sub: argparse.ArgumentParser, path: str) -> None:
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise UsageError("config file must hold a JSON object")
    actions = {a.dest: a for a in sub._actions}
    values = {}
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("help", "config", "func"):
            raise UsageError(f"unknown config key {key!r}")
        action = actions[dest]
        if isinstance(value, str) and action.type is not None:
            value = action.type(value)
        elif isinstance(value, list) and action.type in (_int_list, _float_list):
            value = tuple(value)
        values[dest] = value
    sub.set_defaults(**values)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if args.config:
            _apply_config(subs[args.command], args.config)
            args = parser.parse_args(argv)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        summary = args.func(args)
    except UsageError as exc:
        print(f"vidgeo: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError) as exc:
        print(f"vidgeo: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"vidgeo: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if args.command != "evaluate":
        _emit(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
