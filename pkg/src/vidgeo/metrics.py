"""Recall-based evaluation of clip retrieval.

Two correctness rules are supported:

* ``UCN``: a prediction is correct when it is the ground-truth tile itself.
* ``CN``: a prediction is correct when its tile center lies within
  ``cn_radius`` miles (0.05 by default) of the clip's GPS label, because
  centered crops of nearby labels overlap.

The predicted GPS of a retrieved tile is its center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geodesy import GeoPoint, haversine_miles_array

UCN = "UCN"
CN = "CN"
CN_RADIUS_MILES = 0.05
DEFAULT_KS = (1, 5, 10)
DEFAULT_THRESHOLDS = (0.1, 0.2, 0.5, 1.0)


@dataclass(frozen=True)
class Prediction:
    """Ranked predictions for one query, with ground truth."""

    query_id: str
    ranked_ids: tuple[str, ...]
    truth_id: str | None = None
    truth_point: GeoPoint | None = None
    ranked_points: tuple[GeoPoint, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ranked_ids", tuple(self.ranked_ids))
        if not self.ranked_ids:
            raise ValueError(f"query {self.query_id!r} has no predictions")
        if len(set(self.ranked_ids)) != len(self.ranked_ids):
            raise ValueError(f"query {self.query_id!r} has duplicate predictions")
        if self.ranked_points is not None:
            object.__setattr__(self, "ranked_points", tuple(self.ranked_points))
            if len(self.ranked_points) != len(self.ranked_ids):
                raise ValueError(f"query {self.query_id!r}: one GPS point per prediction required")


def _check_mode(mode: str) -> str:
    mode = mode.upper()
    if mode not in (UCN, CN):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    return mode


def _distances(p: Prediction, upto: int | None = None) -> np.ndarray:
    if p.ranked_points is None or p.truth_point is None:
        raise ValueError(f"missing prediction GPS for query {p.query_id!r}")
    pts = p.ranked_points[:upto]
    lat = np.array([q.lat for q in pts])
    lon = np.array([q.lon for q in pts])
    return haversine_miles_array(p.truth_point.lat, p.truth_point.lon, lat, lon)


def first_hits(preds: Sequence[Prediction], mode: str = UCN, cn_radius: float = CN_RADIUS_MILES) -> np.ndarray:
    """0-based position of the first correct prediction per query, ``-1`` if none."""
    mode = _check_mode(mode)
    out = np.full(len(preds), -1, dtype=np.int64)
    for i, p in enumerate(preds):
        if mode == UCN:
            if p.truth_id is None:
                raise ValueError(f"missing ground-truth id for query {p.query_id!r}")
            try:
                out[i] = p.ranked_ids.index(p.truth_id)
            except ValueError:
                pass
        else:
            hit = np.flatnonzero(_distances(p) <= cn_radius)
            if len(hit):
                out[i] = hit[0]
    return out


def _recall_from_hits(hits: np.ndarray, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return float(np.mean((hits >= 0) & (hits < k)))


def recall_at_k(preds: Sequence[Prediction], k: int, mode: str = UCN, cn_radius: float = CN_RADIUS_MILES) -> float:
    """Fraction of queries with a correct item among the first ``k`` predictions.

    Rankings shorter than ``k`` are evaluated on what is available.
    """
    if not preds:
        raise ValueError("empty prediction set")
    return _recall_from_hits(first_hits(preds, mode, cn_radius), k)


def percent_k(gallery_size: int, pct: float = 1.0) -> int:
    """Number of items making up ``pct`` percent of a gallery (rounded up)."""
    if gallery_size < 1:
        raise ValueError("gallery_size must be >= 1")
    # round first so that e.g. 1% of 243000 is not 2430.0000000000005
    return max(1, math.ceil(round(pct / 100.0 * gallery_size, 9)))


def recall_at_percent(
    preds: Sequence[Prediction], gallery_size: int, pct: float = 1.0, mode: str = UCN, cn_radius: float = CN_RADIUS_MILES
) -> float:
    return recall_at_k(preds, percent_k(gallery_size, pct), mode, cn_radius)


def top1_at_threshold(preds: Sequence[Prediction], t_miles: float) -> float:
    """Fraction of queries whose top-1 predicted GPS is within ``t_miles`` of the truth."""
    if not preds:
        raise ValueError("empty prediction set")
    if not t_miles > 0:
        raise ValueError("distance threshold must be positive")
    d = np.array([_distances(p, 1)[0] for p in preds])
    return float(np.mean(d <= t_miles))


@dataclass(frozen=True)
class EvalConfig:
    mode: str = UCN
    ks: tuple[int, ...] = DEFAULT_KS
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    pct: float = 1.0
    gallery_size: int | None = None
    # size the percentage refers to; defaults to gallery_size. Set it to the
    # full gallery when evaluating against a reduced one.
    reference_size: int | None = None
    cn_radius: float = CN_RADIUS_MILES


@dataclass
class MetricsReport:
    recall_at: dict[int, float]
    recall_at_1pct: float | None
    top1_at_threshold: dict[float, float]
    gallery_size: int | None
    mode: str
    n_queries: int
    pct: float = 1.0
    pct_k: int | None = None
    truncated_ks: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_queries": self.n_queries,
            "gallery_size": self.gallery_size,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "recall_at_pct": {"pct": self.pct, "k": self.pct_k, "value": self.recall_at_1pct},
            "top1_at_threshold": {repr(t): v for t, v in self.top1_at_threshold.items()},
            "truncated_ks": self.truncated_ks,
        }

    def to_table(self) -> str:
        """Aligned two-column text table."""
        rows = [("mode", self.mode), ("queries", str(self.n_queries)), ("gallery", str(self.gallery_size))]
        rows += [(f"R@{k}", f"{100 * v:.2f}") for k, v in self.recall_at.items()]
        pct_label = f"R@{self.pct:g}%"
        rows.append((pct_label, "-" if self.recall_at_1pct is None else f"{100 * self.recall_at_1pct:.2f}"))
        rows += [(f"Top-1@{t:g}mi", f"{100 * v:.2f}") for t, v in self.top1_at_threshold.items()]
        if self.truncated_ks:
            rows.append(("truncated k", ",".join(map(str, self.truncated_ks))))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value:>8}" for name, value in rows)


def evaluate(preds: Sequence[Prediction], config: EvalConfig = EvalConfig()) -> MetricsReport:
    """All metrics for one run.

    Recall at a percentage is reported as ``None`` when the searched gallery
    holds fewer items than that percentage of the reference gallery.
    """
    if not preds:
        raise ValueError("empty prediction set")
    mode = _check_mode(config.mode)
    hits = first_hits(preds, mode, config.cn_radius)
    shortest = min(len(p.ranked_ids) for p in preds)
    ks = sorted(set(config.ks))
    recall = {k: _recall_from_hits(hits, k) for k in ks}
    truncated = [k for k in ks if k > shortest]

    pct_value = None
    k_pct = None
    reference = config.reference_size or config.gallery_size
    if reference is not None:
        k_pct = percent_k(reference, config.pct)
        if config.gallery_size is None or k_pct <= config.gallery_size:
            pct_value = _recall_from_hits(hits, k_pct)
            if k_pct > shortest:
                truncated.append(k_pct)

    top1 = {float(t): top1_at_threshold(preds, t) for t in sorted(config.thresholds)}
    return MetricsReport(
        recall, pct_value, top1, config.gallery_size, mode, len(preds), config.pct, k_pct, sorted(set(truncated))
    )
