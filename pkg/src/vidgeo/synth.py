"""Seeded synthetic trajectories, region layouts and paired embeddings.

Every random draw comes from a stream derived from the global seed and the
id of the entity being generated, so outputs do not depend on generation
order or on how work is split.

Embedding model, per region ``r`` with unit signature ``s_r``:

* tile   = normalize(strength * s_r + (1 - strength) * u),  u a random unit vector
* clip   = normalize(tile + n),  n ~ N(0, sigma^2) independently per dimension
* region = normalize(mean of its 49 UCN tile vectors)
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    AerialTile,
    ClipRecord,
    LargeAerialRegion,
    VideoRecord,
    layout_video,
    region_centered_on,
    tile_grid,
)
from .embeddings import EmbeddingRecords, l2_normalize
from .geodesy import MU_HIGH, MU_LOW, GeoPoint


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_videos: int = 1000
    n_regions: int = 100
    clips_per_video: int = 40
    dim: int = 32
    noise_sigma: float = 0.15
    region_signature_strength: float = 0.8
    lat_band: tuple[float, float] = (30.0, 33.0)
    lon_band: tuple[float, float] = (-98.0, -94.0)
    mu_range: tuple[float, float] = (MU_LOW, MU_HIGH)

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.region_signature_strength <= 1.0:
            raise ValueError("region_signature_strength must lie in [0, 1]")
        if self.n_regions < 1 or self.n_videos < 1 or self.clips_per_video < 1 or self.dim < 1:
            raise ValueError("counts and dim must be positive")


def derive_rng(seed: int, *key) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``, stable across processes."""
    text = "|".join([str(seed), *map(str, key)]).encode()
    digest = hashlib.blake2b(text, digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def _random_point(rng: np.random.Generator, cfg: SynthConfig) -> GeoPoint:
    return GeoPoint(float(rng.uniform(*cfg.lat_band)), float(rng.uniform(*cfg.lon_band)))


def gen_trajectory(
    cfg: SynthConfig,
    video_id: str,
    center: GeoPoint | None = None,
    target_mu: float | None = None,
) -> VideoRecord:
    """A smooth random walk with one GPS label per second.

    The walk is scaled so its range statistic equals ``target_mu`` (drawn
    from ``cfg.mu_range`` when not given) and its bounding box is centered
    on ``center``.
    """
    rng = derive_rng(cfg.seed, "trajectory", video_id)
    if target_mu is None:
        target_mu = float(rng.uniform(*cfg.mu_range))
    if center is None:
        center = _random_point(rng, cfg)
    n = cfg.clips_per_video
    heading = rng.uniform(0, 2 * math.pi) + np.cumsum(rng.normal(0, 0.3, n))
    steps = np.column_stack([np.cos(heading), np.sin(heading)]) * rng.uniform(0.5, 1.5, (n, 1))
    pos = np.cumsum(steps, axis=0)
    pos[0] = 0.0
    extent = pos.max(axis=0) - pos.min(axis=0)
    if target_mu > 0 and extent.max() > 0:
        pos = pos * (target_mu / extent.max())
        pos -= (pos.max(axis=0) + pos.min(axis=0)) / 2
    else:
        pos = np.zeros_like(pos)
    labels = [(s, GeoPoint(center.lat + float(dlat), center.lon + float(dlon))) for s, (dlat, dlon) in enumerate(pos)]
    return VideoRecord(video_id, labels)


def gen_filter_cases(cfg: SynthConfig, n: int, mu_max: float = 0.008, stationary_frac: float = 0.1):
    """Trajectories with known filter outcome: ``[(video, should_accept), ...]``.

    Target ranges are uniform on ``[0, mu_max]``, plus a share of exactly
    stationary videos.
    """
    lo, hi = MU_LOW, MU_HIGH
    out = []
    for i in range(n):
        vid = f"fv{i:06d}"
        rng = derive_rng(cfg.seed, "filter-case", vid)
        mu = 0.0 if rng.random() < stationary_frac else float(rng.uniform(0, mu_max))
        out.append((gen_trajectory(cfg, vid, target_mu=mu), lo <= mu <= hi))
    return out


@dataclass
class SynthWorld:
    regions: list[LargeAerialRegion]
    ucn_tiles: list[AerialTile]
    videos: list[VideoRecord]
    clips: list[ClipRecord]
    cn_tiles: list[AerialTile]
    video_region: dict[str, str] = field(default_factory=dict)

    def records(self) -> list:
        """All records in manifest order."""
        return [*self.videos, *self.regions, *self.ucn_tiles, *self.clips, *self.cn_tiles]

    def region_to_tiles(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {r.region_id: [] for r in self.regions}
        for t in self.ucn_tiles:
            out[t.region_id].append(t.tile_id)
        return out


def region_id_for(index: int) -> str:
    return f"region{index:05d}"


def video_id_for(index: int) -> str:
    return f"video{index:06d}"


def gen_world(cfg: SynthConfig) -> SynthWorld:
    """Regions at random places in the configured band, with videos inside them.

    Video ``i`` drives through region ``i % n_regions``.
    """
    regions = []
    for r in range(cfg.n_regions):
        rid = region_id_for(r)
        regions.append(region_centered_on(rid, _random_point(derive_rng(cfg.seed, "region", rid), cfg)))
    world = SynthWorld(regions, [t for reg in regions for t in tile_grid(reg)], [], [], [])
    for v in range(cfg.n_videos):
        region = regions[v % cfg.n_regions]
        video = gen_trajectory(cfg, video_id_for(v), center=region.center_gps)
        layout = layout_video(video, region)
        world.videos.append(video)
        world.clips.extend(layout.clips)
        world.cn_tiles.extend(layout.cn_tiles)
        world.video_region[video.video_id] = region.region_id
    return world


@dataclass
class SynthEmbeddings:
    clips: EmbeddingRecords
    tiles: EmbeddingRecords
    regions: EmbeddingRecords
    region_to_tiles: dict[str, list[str]]
    truth: dict[str, str]
    clip_video: dict[str, str]


def _unit_draw(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def gen_paired_embeddings(cfg: SynthConfig, world: SynthWorld | None = None) -> SynthEmbeddings:
    """Region-structured tile, region and clip embeddings for a synthetic world."""
    if world is None:
        world = gen_world(cfg)
    strength = cfg.region_signature_strength
    signatures = {r.region_id: _unit_draw(derive_rng(cfg.seed, "signature", r.region_id), cfg.dim) for r in world.regions}

    tile_ids = [t.tile_id for t in world.ucn_tiles]
    tiles = np.empty((len(tile_ids), cfg.dim))
    for i, t in enumerate(world.ucn_tiles):
        u = _unit_draw(derive_rng(cfg.seed, "tile", t.tile_id), cfg.dim)
        tiles[i] = strength * signatures[t.region_id] + (1.0 - strength) * u
    tiles = l2_normalize(tiles)
    tile_pos = {tid: i for i, tid in enumerate(tile_ids)}

    region_to_tiles = world.region_to_tiles()
    region_ids = [r.region_id for r in world.regions]
    regions = l2_normalize(np.array([tiles[[tile_pos[t] for t in region_to_tiles[r]]].mean(axis=0) for r in region_ids]))

    clip_ids = [c.clip_id for c in world.clips]
    clips = np.empty((len(clip_ids), cfg.dim))
    for i, c in enumerate(world.clips):
        noise = derive_rng(cfg.seed, "clip", c.clip_id).normal(0.0, cfg.noise_sigma, cfg.dim) if cfg.noise_sigma > 0 else 0.0
        clips[i] = tiles[tile_pos[c.tile_id]] + noise
    clips = l2_normalize(clips)

    return SynthEmbeddings(
        EmbeddingRecords(tuple(clip_ids), clips.astype(np.float32), True),
        EmbeddingRecords(tuple(tile_ids), tiles.astype(np.float32), True),
        EmbeddingRecords(tuple(region_ids), regions.astype(np.float32), True),
        region_to_tiles,
        {c.clip_id: c.tile_id for c in world.clips},
        {c.clip_id: c.video_id for c in world.clips},
    )


def gen_latent_pairs(n: int, d_in: int, noise: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Ground/aerial latent pairs where the aerial latent is the ground one plus noise."""
    rng = derive_rng(seed, "latent-pairs", n, d_in)
    ground = rng.standard_normal((n, d_in))
    return ground, ground + rng.normal(0.0, noise, (n, d_in))
