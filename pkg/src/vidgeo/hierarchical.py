"""Video-level screening and per-video gallery reduction.

1. Every clip of a video is matched against the full tile gallery.
2. The embeddings of the top-1 predicted tiles are mean-pooled and matched
   against the large-region gallery.
3. The tiles of the best-ranked regions form a reduced gallery for the video.
4. Every clip is matched again, now against the reduced gallery.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embeddings import Gallery, QueryResult, top_k, top_k_batch

TOP_N = "top_n"
TOP_PERCENT = "top_percent"


class DegenerateSequenceError(ValueError):
    pass


@dataclass(frozen=True)
class ReductionPolicy:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind == TOP_N:
            if int(self.value) != self.value or self.value < 1:
                raise ValueError(f"top-N policy needs an integer N >= 1, got {self.value}")
        elif self.kind == TOP_PERCENT:
            if not self.value > 0:
                raise ValueError(f"top-percent policy needs pct > 0, got {self.value}")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def top_n(cls, n: int) -> "ReductionPolicy":
        return cls(TOP_N, n)

    @classmethod
    def top_percent(cls, pct: float) -> "ReductionPolicy":
        return cls(TOP_PERCENT, pct)

    @classmethod
    def parse(cls, text: str) -> "ReductionPolicy":
        """Parse ``top-n:10``, ``top-percent:1`` or ``all``."""
        text = text.strip().lower()
        if text == "all":
            return cls(TOP_PERCENT, 100.0)
        kind, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"bad policy {text!r}; expected top-n:N, top-percent:P or all")
        kind = kind.replace("-", "_")
        return cls(kind, int(value) if kind == TOP_N else float(value))

    def region_count(self, n_regions: int) -> int:
        """How many regions the policy keeps out of ``n_regions``."""
        if self.kind == TOP_N:
            count = int(self.value)
        else:
            count = math.ceil(round(self.value / 100.0 * n_regions, 9))
        return max(1, min(count, n_regions))

    def __str__(self):
        return f"top-n:{int(self.value)}" if self.kind == TOP_N else f"top-percent:{self.value:g}"


def aggregate_sequence(tile_vectors, max_len: int | None = None) -> np.ndarray:
    """Mean of a sequence of tile embeddings, rescaled to unit length."""
    seq = np.asarray(tile_vectors, dtype=np.float64)
    if seq.ndim != 2 or len(seq) == 0:
        raise ValueError("sequence must be a non-empty (L, D) array")
    if max_len is not None:
        seq = seq[:max_len]
    mean = seq.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise DegenerateSequenceError("degenerate sequence")
    return mean / norm


def screen_regions(tile_vectors, region_gallery: Gallery, k: int, max_len: int | None = None) -> QueryResult:
    """Rank large regions against the pooled sequence of predicted tiles."""
    return top_k(region_gallery, aggregate_sequence(tile_vectors, max_len), k)


def reduce_gallery(
    ranked_regions: Sequence[str],
    policy: ReductionPolicy,
    region_to_tiles: Mapping[str, Sequence[str]],
    full_tiles: Gallery,
    n_regions: int | None = None,
) -> Gallery:
    """Tiles of the top regions under ``policy``.

    ``n_regions`` is the size of the region gallery that percentages refer
    to; it defaults to ``len(region_to_tiles)``.
    """
    n_regions = n_regions if n_regions is not None else len(region_to_tiles)
    count = policy.region_count(n_regions)
    if len(ranked_regions) < count:
        raise ValueError(f"policy {policy} needs {count} ranked regions, got {len(ranked_regions)}")
    keep = []
    for region in ranked_regions[:count]:
        try:
            tiles = region_to_tiles[region]
        except KeyError:
            raise KeyError(f"unknown region id {region!r}") from None
        if not tiles:
            raise ValueError(f"region {region!r} has no tiles")
        keep.extend(tiles)
    return full_tiles.subset(keep)


@dataclass(frozen=True)
class ClipOutcome:
    clip_id: str
    step1: QueryResult
    step4: QueryResult
    truth_id: str | None = None
    retained_gt: bool | None = None
    rank_step1: int | None = None
    rank_step4: int | None = None


@dataclass(frozen=True)
class VideoOutcome:
    video_id: str
    regions: QueryResult
    reduced_size: int
    sequence_length: int
    clips: tuple[ClipOutcome, ...]

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "regions": self.regions.to_json(),
            "reduced_size": self.reduced_size,
            "sequence_length": self.sequence_length,
            "clips": [
                {
                    "clip_id": c.clip_id,
                    "truth": c.truth_id,
                    "retained_gt": c.retained_gt,
                    "rank_step1": c.rank_step1,
                    "rank_step4": c.rank_step4,
                    "step1": c.step1.to_json(),
                    "step4": c.step4.to_json(),
                }
                for c in self.clips
            ],
        }


@dataclass(frozen=True)
class PipelineResult:
    videos: tuple[VideoOutcome, ...]
    policy: ReductionPolicy
    full_size: int

    def clips(self) -> list[ClipOutcome]:
        return [c for v in self.videos for c in v.clips]

    def retained_fraction(self) -> float:
        flags = [c.retained_gt for c in self.clips() if c.retained_gt is not None]
        return float(np.mean(flags)) if flags else float("nan")


def run_pipeline(
    clip_ids: Sequence[str],
    clip_vectors,
    clip_video: Mapping[str, str],
    tile_gallery: Gallery,
    region_gallery: Gallery,
    region_to_tiles: Mapping[str, Sequence[str]],
    policy: ReductionPolicy,
    k: int = 10,
    truth: Mapping[str, str] | None = None,
    max_len: int | None = None,
    workers: int = 1,
) -> PipelineResult:
    """Run the four steps for every video.

    ``clip_vectors[i]`` is the embedding of ``clip_ids[i]``; ``clip_video``
    maps clips to their video. When ``truth`` (clip id to ground-truth tile
    id) is given, each clip records whether its ground truth survived the
    reduction and its rank before and after.
    """
    clip_vectors = np.asarray(clip_vectors, dtype=np.float64)
    if len(clip_ids) != len(clip_vectors):
        raise ValueError("one vector per clip id required")
    k = min(k, len(tile_gallery))
    step1 = top_k_batch(tile_gallery, clip_vectors, k, workers)
    ranks1 = None
    if truth is not None:
        ranks1 = tile_gallery.rank_of(clip_vectors, [truth[c] for c in clip_ids], workers)

    by_video: dict[str, list[int]] = {}
    for i, cid in enumerate(clip_ids):
        by_video.setdefault(clip_video[cid], []).append(i)
    # keep at least 10 ranked regions for video-level recall
    n_screen = max(policy.region_count(len(region_gallery)), min(10, len(region_gallery)))

    def one_video(item):
        video_id, rows = item
        predicted = [step1[i].ids[0] for i in rows]
        seq = tile_gallery.vectors[[tile_gallery.position(t) for t in predicted]]
        regions = screen_regions(seq, region_gallery, n_screen, max_len)
        reduced = reduce_gallery(regions.ids, policy, region_to_tiles, tile_gallery, len(region_gallery))
        q = clip_vectors[rows]
        step4 = top_k_batch(reduced, q, min(k, len(reduced)))
        outcomes = []
        if truth is None:
            outcomes = [ClipOutcome(clip_ids[i], step1[i], r4) for i, r4 in zip(rows, step4)]
        else:
            gt = [truth[clip_ids[i]] for i in rows]
            kept = [g in reduced for g in gt]
            kept_rows = [j for j, flag in enumerate(kept) if flag]
            ranks4 = {}
            if kept_rows:
                r = reduced.rank_of(q[kept_rows], [gt[j] for j in kept_rows])
                ranks4 = dict(zip(kept_rows, r.tolist()))
            for j, (i, r4) in enumerate(zip(rows, step4)):
                outcomes.append(
                    ClipOutcome(clip_ids[i], step1[i], r4, gt[j], kept[j], int(ranks1[i]), ranks4.get(j))
                )
        seq_len = len(seq) if max_len is None else min(len(seq), max_len)
        return VideoOutcome(video_id, regions, len(reduced), seq_len, tuple(outcomes))

    items = list(by_video.items())
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            videos = list(pool.map(one_video, items))
    else:
        videos = [one_video(it) for it in items]
    return PipelineResult(tuple(videos), policy, len(tile_gallery))
