"""Videos, clips and the aerial gallery geometry, plus manifest I/O.

A video with per-second GPS labels is cut into one clip per labeled second.
Each accepted video gets a 1792x1792 pixel region at zoom 19, which is cut
into a 7x7 grid of 256x256 uncentered (UCN) tiles; every clip additionally
gets a 256x256 centered (CN) crop around its own label.

Manifests are line-delimited JSON with one record per line and a ``kind``
field in ``{"video", "clip", "region", "tile"}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from ._io import atomic_write_text
from .geodesy import (
    GeoPoint,
    PixelCoord,
    global_pixel_to_gps,
    gps_to_global_pixel,
    world_size_px,
)

ZOOM = 19
TILE_PX = 256
GRID = 7
REGION_PX = GRID * TILE_PX
FRAMES_PER_CLIP = 8
FRAME_SKIP = 1

UCN = "UCN"
CN = "CN"


class RegionOverflowError(ValueError):
    pass


class ManifestError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    gps_labels: tuple[tuple[int, GeoPoint], ...]
    day_flag: bool | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "gps_labels", tuple((int(s), p) for s, p in self.gps_labels))
        if not self.gps_labels:
            raise ValueError(f"video {self.video_id!r} has no GPS labels")
        seconds = [s for s, _ in self.gps_labels]
        if seconds[0] < 0 or any(b <= a for a, b in zip(seconds, seconds[1:])):
            raise ValueError(f"video {self.video_id!r}: second indices must be strictly increasing and >= 0")

    @property
    def points(self) -> list[GeoPoint]:
        return [p for _, p in self.gps_labels]


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    video_id: str
    second_index: int
    label: GeoPoint
    frame_count: int = FRAMES_PER_CLIP
    frame_skip: int = FRAME_SKIP
    # ground-truth assignment, filled once the region geometry is known
    region_id: str | None = None
    tile_id: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.frame_count != FRAMES_PER_CLIP or self.frame_skip != FRAME_SKIP:
            raise ValueError(f"clip {self.clip_id!r}: clips are {FRAMES_PER_CLIP} frames with skip {FRAME_SKIP}")


@dataclass(frozen=True)
class LargeAerialRegion:
    region_id: str
    origin: PixelCoord
    side_px: int = REGION_PX
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.side_px != REGION_PX:
            raise ValueError(f"region side must be {REGION_PX} px, got {self.side_px}")
        size = world_size_px(self.origin.zoom)
        if self.origin.x + self.side_px > size or self.origin.y + self.side_px > size:
            raise ValueError(f"region {self.region_id!r} extends past the world edge")

    def offset_of(self, px: PixelCoord) -> tuple[int, int]:
        """Pixel offset ``(dx, dy)`` of ``px`` inside the region."""
        if px.zoom != self.origin.zoom:
            raise ValueError("zoom mismatch between point and region")
        dx = px.x - self.origin.x
        dy = px.y - self.origin.y
        if not (0 <= dx < self.side_px and 0 <= dy < self.side_px):
            raise ValueError(f"point outside region {self.region_id!r}")
        return dx, dy

    @property
    def center_gps(self) -> GeoPoint:
        half = self.side_px // 2
        return global_pixel_to_gps(PixelCoord(self.origin.x + half, self.origin.y + half, self.origin.zoom))


@dataclass(frozen=True)
class AerialTile:
    tile_id: str
    kind: str
    region_id: str
    origin: PixelCoord
    center_gps: GeoPoint
    grid_rc: tuple[int, int] | None = None
    clip_id: str | None = None
    side_px: int = TILE_PX
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in (UCN, CN):
            raise ValueError(f"unknown tile kind {self.kind!r}")
        if self.side_px != TILE_PX:
            raise ValueError(f"tile side must be {TILE_PX} px")
        if self.grid_rc is not None:
            object.__setattr__(self, "grid_rc", tuple(int(v) for v in self.grid_rc))


def _tile_center_gps(origin: PixelCoord) -> GeoPoint:
    half = TILE_PX // 2
    return global_pixel_to_gps(PixelCoord(origin.x + half, origin.y + half, origin.zoom))


def segment_clips(v: VideoRecord) -> list[ClipRecord]:
    """One clip per labeled second, in label order. Unlabeled seconds yield nothing."""
    return [ClipRecord(f"{v.video_id}:{sec}", v.video_id, sec, point) for sec, point in v.gps_labels]


def region_for_video(v: VideoRecord, region_id: str | None = None, zoom: int = ZOOM) -> LargeAerialRegion:
    """Place a region on the pixel centroid of the video's labels.

    The window is then shifted the least amount needed to contain every
    label, and finally clamped to the world.
    """
    pixels = [gps_to_global_pixel(p, zoom) for p in v.points]
    xs = [p.x for p in pixels]
    ys = [p.y for p in pixels]
    if max(xs) - min(xs) + 1 > REGION_PX or max(ys) - min(ys) + 1 > REGION_PX:
        raise RegionOverflowError(f"region overflow: labels of video {v.video_id!r} span more than {REGION_PX} px")
    world = world_size_px(zoom)

    def place(coords):
        start = math.floor(sum(coords) / len(coords)) - REGION_PX // 2
        start = min(start, min(coords))
        start = max(start, max(coords) - REGION_PX + 1)
        return min(max(start, 0), world - REGION_PX)

    origin = PixelCoord(place(xs), place(ys), zoom)
    return LargeAerialRegion(region_id or f"{v.video_id}:region", origin)


def region_centered_on(region_id: str, center: GeoPoint, zoom: int = ZOOM) -> LargeAerialRegion:
    """Region whose center pixel is the pixel containing ``center``."""
    px = gps_to_global_pixel(center, zoom)
    world = world_size_px(zoom)
    ox = min(max(px.x - REGION_PX // 2, 0), world - REGION_PX)
    oy = min(max(px.y - REGION_PX // 2, 0), world - REGION_PX)
    return LargeAerialRegion(region_id, PixelCoord(ox, oy, zoom))


def ucn_tile_id(region_id: str, row: int, col: int) -> str:
    return f"{region_id}:r{row}c{col}"


def tile_grid(r: LargeAerialRegion) -> list[AerialTile]:
    """The 49 uncentered tiles of a region, row-major."""
    tiles = []
    for row in range(GRID):
        for col in range(GRID):
            origin = PixelCoord(r.origin.x + col * TILE_PX, r.origin.y + row * TILE_PX, r.origin.zoom)
            tiles.append(
                AerialTile(
                    ucn_tile_id(r.region_id, row, col),
                    UCN,
                    r.region_id,
                    origin,
                    _tile_center_gps(origin),
                    grid_rc=(row, col),
                )
            )
    return tiles


def locate_tile(r: LargeAerialRegion, p: GeoPoint) -> tuple[int, int]:
    """Grid cell ``(row, col)`` of the UCN tile containing ``p``."""
    dx, dy = r.offset_of(gps_to_global_pixel(p, r.origin.zoom))
    return dy // TILE_PX, dx // TILE_PX


def centered_crop(r: LargeAerialRegion, p: GeoPoint, clip_id: str | None = None) -> AerialTile:
    """A CN tile centered on ``p``, translated minimally to stay inside the region."""
    px = gps_to_global_pixel(p, r.origin.zoom)
    r.offset_of(px)
    half = TILE_PX // 2
    hi = r.side_px - TILE_PX
    ox = r.origin.x + min(max(px.x - half - r.origin.x, 0), hi)
    oy = r.origin.y + min(max(px.y - half - r.origin.y, 0), hi)
    origin = PixelCoord(ox, oy, r.origin.zoom)
    tile_id = f"{clip_id}:cn" if clip_id is not None else f"{r.region_id}:cn:{px.x}:{px.y}"
    return AerialTile(tile_id, CN, r.region_id, origin, _tile_center_gps(origin), clip_id=clip_id)


@dataclass
class VideoLayout:
    region: LargeAerialRegion
    ucn_tiles: list[AerialTile]
    clips: list[ClipRecord]
    cn_tiles: list[AerialTile]


def layout_video(v: VideoRecord, region: LargeAerialRegion | None = None) -> VideoLayout:
    """Region, UCN grid, clips (with ground-truth tile) and CN crops of one video."""
    if region is None:
        region = region_for_video(v)
    clips = []
    cn_tiles = []
    for clip in segment_clips(v):
        row, col = locate_tile(region, clip.label)
        clip = ClipRecord(
            clip.clip_id,
            clip.video_id,
            clip.second_index,
            clip.label,
            region_id=region.region_id,
            tile_id=ucn_tile_id(region.region_id, row, col),
        )
        clips.append(clip)
        cn_tiles.append(centered_crop(region, clip.label, clip.clip_id))
    return VideoLayout(region, tile_grid(region), clips, cn_tiles)


# -- manifest I/O -------------------------------------------------------------


class _Degrees(float):
    """Marks a float that is written with at least six fractional digits."""


def _format_degrees(x: float) -> str:
    for digits in range(6, 18):
        s = f"{x:.{digits}f}"
        if float(s) == x:
            return s
    return repr(float(x))


def _encode(obj) -> str:
    if isinstance(obj, _Degrees):
        return _format_degrees(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    return json.dumps(obj, ensure_ascii=False)


def _gps(p: GeoPoint) -> list:
    return [_Degrees(p.lat), _Degrees(p.lon)]


def record_to_dict(rec) -> dict:
    if isinstance(rec, VideoRecord):
        d = {
            "kind": "video",
            "video_id": rec.video_id,
            "gps": [[s, *_gps(p)] for s, p in rec.gps_labels],
            "day": rec.day_flag,
        }
    elif isinstance(rec, ClipRecord):
        d = {
            "kind": "clip",
            "clip_id": rec.clip_id,
            "video_id": rec.video_id,
            "second": rec.second_index,
            "frames": rec.frame_count,
            "skip": rec.frame_skip,
            "label": _gps(rec.label),
            "region_id": rec.region_id,
            "tile_id": rec.tile_id,
        }
    elif isinstance(rec, LargeAerialRegion):
        d = {
            "kind": "region",
            "region_id": rec.region_id,
            "zoom": rec.origin.zoom,
            "origin": [rec.origin.x, rec.origin.y],
            "side": rec.side_px,
        }
    elif isinstance(rec, AerialTile):
        d = {
            "kind": "tile",
            "tile_id": rec.tile_id,
            "tile_kind": rec.kind,
            "region_id": rec.region_id,
            "zoom": rec.origin.zoom,
            "origin": [rec.origin.x, rec.origin.y],
            "side": rec.side_px,
            "grid": list(rec.grid_rc) if rec.grid_rc is not None else None,
            "center": _gps(rec.center_gps),
            "clip_id": rec.clip_id,
        }
    else:
        raise TypeError(f"not a manifest record: {type(rec).__name__}")
    for key, value in rec.extra.items():
        d.setdefault(key, value)
    return d


_KNOWN = {
    "video": {"kind", "video_id", "gps", "day"},
    "clip": {"kind", "clip_id", "video_id", "second", "frames", "skip", "label", "region_id", "tile_id"},
    "region": {"kind", "region_id", "zoom", "origin", "side"},
    "tile": {"kind", "tile_id", "tile_kind", "region_id", "zoom", "origin", "side", "grid", "center", "clip_id"},
}


def record_from_dict(d: dict):
    kind = d.get("kind")
    if kind not in _KNOWN:
        raise ValueError(f"unknown record kind {kind!r}")
    extra = {k: v for k, v in d.items() if k not in _KNOWN[kind]}
    if kind == "video":
        labels = tuple((int(s), GeoPoint(float(lat), float(lon))) for s, lat, lon in d["gps"])
        return VideoRecord(str(d["video_id"]), labels, d.get("day"), extra)
    if kind == "clip":
        lat, lon = d["label"]
        return ClipRecord(
            str(d["clip_id"]),
            str(d["video_id"]),
            int(d["second"]),
            GeoPoint(float(lat), float(lon)),
            int(d.get("frames", FRAMES_PER_CLIP)),
            int(d.get("skip", FRAME_SKIP)),
            d.get("region_id"),
            d.get("tile_id"),
            extra,
        )
    if kind == "region":
        x, y = d["origin"]
        return LargeAerialRegion(
            str(d["region_id"]), PixelCoord(int(x), int(y), int(d["zoom"])), int(d.get("side", REGION_PX)), extra
        )
    x, y = d["origin"]
    lat, lon = d["center"]
    return AerialTile(
        str(d["tile_id"]),
        d["tile_kind"],
        str(d["region_id"]),
        PixelCoord(int(x), int(y), int(d["zoom"])),
        GeoPoint(float(lat), float(lon)),
        grid_rc=tuple(d["grid"]) if d.get("grid") is not None else None,
        clip_id=d.get("clip_id"),
        side_px=int(d.get("side", TILE_PX)),
        extra=extra,
    )


def _record_key(rec) -> tuple[str, str]:
    if isinstance(rec, VideoRecord):
        return "video", rec.video_id
    if isinstance(rec, ClipRecord):
        return "clip", rec.clip_id
    if isinstance(rec, LargeAerialRegion):
        return "region", rec.region_id
    return "tile", rec.tile_id


def write_manifest(records: Iterable, path) -> None:
    atomic_write_text(path, (_encode(record_to_dict(r)) for r in records))


def iter_manifest(path) -> Iterator:
    """Yield records from a manifest, raising :class:`ManifestError` with the line number."""
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if not isinstance(d, dict):
                    raise ValueError("record is not a JSON object")
                rec = record_from_dict(d)
            except (ValueError, KeyError, TypeError) as exc:
                raise ManifestError(lineno, f"malformed record ({exc})") from None
            key = _record_key(rec)
            if key in seen:
                raise ManifestError(lineno, f"duplicate {key[0]} id {key[1]!r}")
            seen.add(key)
            yield rec


def read_manifest(path) -> list:
    return list(iter_manifest(path))


def split_manifest(records: Sequence) -> dict[str, list]:
    """Group records by kind: ``videos``, ``clips``, ``regions``, ``tiles``."""
    out = {"videos": [], "clips": [], "regions": [], "tiles": []}
    for rec in records:
        out[_record_key(rec)[0] + "s"].append(rec)
    return out
