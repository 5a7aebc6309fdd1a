"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Oracles here are written independently of the library code they check.
Run on its own with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from vidgeo.cli import main as cli_main
from vidgeo.dataset import (
    GRID,
    REGION_PX,
    TILE_PX,
    ZOOM,
    LargeAerialRegion,
    centered_crop,
    tile_grid,
)
from vidgeo.embeddings import build_gallery, gallery_from_records, l2_normalize, top_k_batch
from vidgeo.geodesy import (
    EARTH_RADIUS_MILES,
    GeoPoint,
    PixelCoord,
    accept_video,
    global_pixel_to_gps,
    gps_to_global_pixel,
)
from vidgeo.hierarchical import ReductionPolicy, run_pipeline
from vidgeo.loss import (
    LossConfig,
    anchor_losses,
    init_toy_encoders,
    nt_xent_cross_modal,
    nt_xent_gradient,
    train_toy_encoders,
)
from vidgeo.metrics import CN, UCN, EvalConfig, Prediction, evaluate
from vidgeo.synth import SynthConfig, gen_filter_cases, gen_latent_pairs, gen_paired_embeddings, gen_world

pytestmark = pytest.mark.slow


# -- independent oracles -----------------------------------------------------------


def loop_loss(c, a, tau):
    """Symmetrized loss from plain Python scalars; positive excluded from the denominator."""
    n = len(c)

    def sim(u, v):
        return sum(x * y for x, y in zip(u, v)) / tau

    def one_side(anchor, same, other):
        total = 0.0
        for i in range(n):
            den = sum(math.exp(sim(anchor[i], same[k])) + math.exp(sim(anchor[i], other[k])) for k in range(n) if k != i)
            total += math.log(den) - sim(anchor[i], other[i])
        return total / n

    c, a = c.tolist(), a.tolist()
    return 0.5 * (one_side(c, c, a) + one_side(a, a, c))


def fd_gradient(c, a, tau, h=1e-5):
    cfg = LossConfig(tau=tau)
    x = np.concatenate([c.ravel(), a.ravel()])
    out = np.empty_like(x)

    def f(v):
        return nt_xent_cross_modal(v[: c.size].reshape(c.shape), v[c.size :].reshape(a.shape), cfg, normalize=True)

    for j in range(len(x)):
        up, down = x.copy(), x.copy()
        up[j] += h
        down[j] -= h
        out[j] = (f(up) - f(down)) / (2 * h)
    return out


def scan_top_k(ids_sorted_rank, unit32, queries, k, chunk=256):
    """Full float64 scan, rows ordered by (-score, id)."""
    g64 = unit32.astype(np.float64)
    out = []
    for s in range(0, len(queries), chunk):
        scores = np.asarray(queries[s : s + chunk], dtype=np.float64) @ g64.T
        for row in scores:
            cut = np.partition(row, len(row) - k)[len(row) - k]
            cand = np.nonzero(row >= cut)[0]
            order = sorted(cand.tolist(), key=lambda p: (-row[p], ids_sorted_rank[p]))[:k]
            out.append((order, row[order]))
    return out


def haversine(a, b):
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(b.lon - a.lon) / 2) ** 2
    return 2 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(h)))


def serialize(results):
    return json.dumps([r.to_json() for r in results]).encode()


# -- shared fixtures ---------------------------------------------------------------


@pytest.fixture(scope="module")
def big_gallery():
    rng = np.random.default_rng(2024)
    n, d = 100_000, 512
    ids = [f"tile{i:06d}" for i in rng.permutation(n)]
    g = build_gallery(ids, rng.standard_normal((n, d), dtype=np.float32))
    rank = np.empty(n, dtype=np.int64)
    rank[np.argsort(np.array(g.ids))] = np.arange(n)
    return g, rank


@pytest.fixture(scope="module")
def e2e_runs(tmp_path_factory):
    """Two full CLI runs with the same seed and different worker counts."""
    runs = []
    for workers in (4, 1):
        d = tmp_path_factory.mktemp(f"e2e_w{workers}")
        t0 = time.perf_counter()
        codes = [
            cli_main(["synth", "--seed", "7", "--output", str(d)]),
            cli_main(["pipeline", "--manifest", str(d / "manifest.jsonl"), "--clips", str(d / "clips.emb"),
                      "--tiles", str(d / "tiles.emb"), "--regions", str(d / "regions.emb"),
                      "--policy", "top-percent:1", "--workers", str(workers), "--output", str(d / "pipeline.jsonl")]),
        ]
        for step in ("step1", "step4"):
            codes.append(cli_main(["evaluate", "--manifest", str(d / "manifest.jsonl"),
                                   "--predictions", str(d / "pipeline.jsonl"), "--step", step,
                                   "--output", str(d / f"eval_{step}.json")]))
        runs.append((d, codes, time.perf_counter() - t0))
    return runs


E2E_FILES = ("manifest.jsonl", "clips.emb", "tiles.emb", "regions.emb", "pipeline.jsonl",
             "eval_step1.json", "eval_step4.json")


# -- criteria ----------------------------------------------------------------------


def test_1_loss_fidelity(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    value_err = grad_err = 0.0
    for _ in range(100):
        n, d = int(rng.integers(2, 17)), int(rng.integers(4, 65))
        tau = float(rng.uniform(0.05, 1.0))
        c, a = rng.standard_normal((2, n, d))
        cu, au = l2_normalize(c), l2_normalize(a)
        value_err = max(value_err, abs(nt_xent_cross_modal(cu, au, LossConfig(tau=tau)) - loop_loss(cu, au, tau)))
        analytic = np.concatenate([g.ravel() for g in nt_xent_gradient(c, a, LossConfig(tau=tau))])
        numeric = fd_gradient(c, a, tau)
        grad_err = max(grad_err, float(np.abs(analytic - numeric).max() / np.abs(numeric).max()))
    elapsed = time.perf_counter() - t0
    ok = value_err < 1e-10 and grad_err < 1e-4 and elapsed < 30
    acceptance(1, "loss fidelity", ok,
               f"max |vec-loop|={value_err:.2e} (<1e-10), max grad rel err={grad_err:.2e} (<1e-4), {elapsed:.1f}s (<30s)")


def test_2_closed_form(acceptance):
    u = l2_normalize([1.0, 2.0, 3.0])
    same = np.vstack([u, u])
    errs = []
    for tau in (0.05, 0.1, 0.5, 1.0):
        errs.append(np.abs(anchor_losses(same, same, LossConfig(tau=tau)) - math.log(2)).max())
        e = np.eye(2)
        errs.append(np.abs(anchor_losses(e, e, LossConfig(tau=tau)) - (math.log(2) - 1 / tau)).max())
    worst = float(max(errs))
    acceptance(2, "closed-form cases", worst <= 1e-9, f"max error {worst:.2e} (<=1e-9) over tau in 0.05..1")


def test_3_learnability(acceptance):
    t0 = time.perf_counter()
    ground, aerial = gen_latent_pairs(2500, 64, noise=0.1, seed=3)
    enc = train_toy_encoders(ground[:2000], aerial[:2000], dim=32)
    held_g, held_a = ground[2000:], aerial[2000:]
    ids = [f"a{i:04d}" for i in range(500)]

    def recall(encoders):
        g = build_gallery(ids, encoders.encode_aerial(held_a))
        res = top_k_batch(g, encoders.encode_ground(held_g), 1)
        return float(np.mean([r.ids[0] == i for r, i in zip(res, ids)]))

    before = recall(init_toy_encoders(64, 32, seed=0))
    after = recall(enc)
    elapsed = time.perf_counter() - t0
    ok = after >= 0.9 and before <= 0.02 and elapsed < 60
    acceptance(3, "end-to-end learnability", ok,
               f"recall@1 {after:.3f} (>=0.9), random init {before:.3f} (<=0.02), {elapsed:.1f}s (<60s)")


def test_4_retrieval_exactness(acceptance, big_gallery):
    g, id_rank = big_gallery
    queries = np.random.default_rng(44).standard_normal((10_000, 512))
    k = 10
    serial = top_k_batch(g, queries, k, workers=1)
    oracle = scan_top_k(id_rank, g.vectors, queries, k)
    id_mismatch = sum(r.ids != [g.ids[p] for p in order] for r, (order, _) in zip(serial, oracle))
    score_err = max(float(np.abs(np.array(r.scores) - s).max()) for r, (_, s) in zip(serial, oracle))
    ref = serialize(serial)
    parallel_equal = {w: serialize(top_k_batch(g, queries, k, workers=w)) == ref for w in (2, 4, 8)}
    ok = id_mismatch == 0 and score_err <= 1e-12 and all(parallel_equal.values())
    acceptance(4, "retrieval exactness", ok,
               f"10k x 100k x 512: {id_mismatch} ranking mismatches vs full scan, max score diff {score_err:.1e}; "
               f"byte-identical for workers {parallel_equal}")


def random_prediction_set(rng):
    size = int(rng.integers(50, 600))
    centers = [GeoPoint(31 + float(a), -96 + float(b)) for a, b in rng.uniform(-0.01, 0.01, (size, 2))]
    preds = []
    for q in range(int(rng.integers(5, 80))):
        k = int(rng.integers(1, 15))
        ranked = [int(i) for i in rng.choice(size, k, replace=False)]
        truth = ranked[int(rng.integers(k))] if rng.random() < 0.5 else int(rng.integers(size))
        preds.append(Prediction(f"q{q}", tuple(f"t{i}" for i in ranked), f"t{truth}", centers[truth],
                                tuple(centers[i] for i in ranked)))
    return preds, size


def brute_recall(preds, k, mode):
    hits = 0
    for p in preds:
        for j, (pid, pt) in enumerate(zip(p.ranked_ids, p.ranked_points)):
            if j >= k:
                break
            if (pid == p.truth_id) if mode == UCN else (haversine(pt, p.truth_point) <= 0.05):
                hits += 1
                break
    return hits / len(preds)


def test_5_metric_oracle(acceptance):
    rng = np.random.default_rng(5)
    mismatches = 0
    non_monotone = 0
    thresholds = (0.1, 0.2, 0.5, 1.0)
    for _ in range(100):
        preds, size = random_prediction_set(rng)
        for mode in (UCN, CN):
            rep = evaluate(preds, EvalConfig(mode=mode, ks=(1, 5, 10), thresholds=thresholds, gallery_size=size))
            expect = {k: brute_recall(preds, k, mode) for k in (1, 5, 10)}
            pct_k = -(-size // 100)
            top1 = {t: sum(haversine(p.ranked_points[0], p.truth_point) <= t for p in preds) / len(preds)
                    for t in thresholds}
            mismatches += rep.recall_at != expect
            mismatches += rep.recall_at_1pct != brute_recall(preds, pct_k, mode)
            mismatches += rep.top1_at_threshold != top1
            r = [rep.recall_at[k] for k in (1, 5, 10)]
            t = [rep.top1_at_threshold[x] for x in thresholds]
            non_monotone += r != sorted(r) or t != sorted(t)
    ok = mismatches == 0 and non_monotone == 0
    acceptance(5, "metric oracle", ok, f"100 sets x 2 modes: {mismatches} mismatches, {non_monotone} monotonicity violations")


def test_6_hierarchical(acceptance):
    cfg = SynthConfig()
    emb = gen_paired_embeddings(cfg, gen_world(cfg))
    tiles, regions = gallery_from_records(emb.tiles), gallery_from_records(emb.regions)
    res = run_pipeline(emb.clips.ids, emb.clips.vectors, emb.clip_video, tiles, regions, emb.region_to_tiles,
                       ReductionPolicy.top_percent(1.0), k=10, truth=emb.truth)
    clips = res.clips()
    step1 = evaluate([Prediction(c.clip_id, tuple(c.step1.ids), c.truth_id) for c in clips], EvalConfig(ks=(1,), thresholds=()))
    step4 = evaluate([Prediction(c.clip_id, tuple(c.step4.ids), c.truth_id) for c in clips], EvalConfig(ks=(1,), thresholds=()))
    r1, r4 = step1.recall_at[1], step4.recall_at[1]
    kept = [c for c in clips if c.retained_gt]
    monotone = sum(c.rank_step4 <= c.rank_step1 for c in kept) / len(kept)
    ok = r4 > r1 and monotone == 1.0
    acceptance(6, "hierarchical property", ok,
               f"R@1 step1 {r1:.6f} -> step4 {r4:.6f} (strictly greater), rank non-increase on "
               f"{100 * monotone:.1f}% of {len(kept)} retained clips (GT retained {100 * res.retained_fraction():.1f}%)")


def test_7_geometry(acceptance):
    rng = np.random.default_rng(7)
    roundtrip_bad = 0
    for _ in range(10_000):
        z = int(rng.integers(1, 20))
        p = GeoPoint(float(rng.uniform(-85, 85)), float(rng.uniform(-180, 180)))
        px = gps_to_global_pixel(p, z)
        back = gps_to_global_pixel(global_pixel_to_gps(px), z)
        roundtrip_bad += abs(back.x - px.x) > 1 or abs(back.y - px.y) > 1

    partition_bad = crop_bad = 0
    for i in range(1000):
        ox, oy = (int(v) for v in rng.integers(1 << 24, (1 << 27) - REGION_PX, 2))
        r = LargeAerialRegion(f"r{i}", PixelCoord(ox, oy, ZOOM))
        tiles = tile_grid(r)
        origins = sorted((t.origin.x - ox, t.origin.y - oy) for t in tiles)
        expect = sorted((TILE_PX * c, TILE_PX * rr) for rr in range(GRID) for c in range(GRID))
        partition_bad += origins != expect or len(tiles) != 49
        if i < 20:
            cover = np.zeros((REGION_PX, REGION_PX), dtype=np.int8)
            for t in tiles:
                cover[t.origin.y - oy : t.origin.y - oy + TILE_PX, t.origin.x - ox : t.origin.x - ox + TILE_PX] += 1
            partition_bad += not (cover == 1).all()
        for dx, dy in rng.integers(0, REGION_PX, (5, 2)):
            px = (ox + int(dx), oy + int(dy))
            crop = centered_crop(r, global_pixel_to_gps(PixelCoord(*px, ZOOM)))
            want = [min(max(v - TILE_PX // 2, o), o + REGION_PX - TILE_PX) for v, o in zip(px, (ox, oy))]
            crop_bad += [crop.origin.x, crop.origin.y] != want
            interior = all(TILE_PX // 2 <= d < REGION_PX - TILE_PX // 2 for d in (dx, dy))
            if interior:
                crop_bad += (crop.origin.x + TILE_PX // 2, crop.origin.y + TILE_PX // 2) != px

    world = gen_world(SynthConfig(n_videos=200, n_regions=50, seed=8))
    by_region = {}
    for t in world.ucn_tiles:
        by_region.setdefault(t.region_id, []).append(t)
    label_bad = 0
    for c in world.clips:
        px = gps_to_global_pixel(c.label, ZOOM)
        hits = [t.tile_id for t in by_region[c.region_id]
                if t.origin.x <= px.x < t.origin.x + TILE_PX and t.origin.y <= px.y < t.origin.y + TILE_PX]
        label_bad += hits != [c.tile_id]
    ok = roundtrip_bad == label_bad == partition_bad == crop_bad == 0
    acceptance(7, "geometry", ok,
               f"roundtrip >1px: {roundtrip_bad}/10000; bad partitions {partition_bad}/1000; bad crops {crop_bad}/5000; "
               f"labels not in exactly one tile {label_bad}/{len(world.clips)}")


def test_8_filter_fidelity(acceptance):
    cases = gen_filter_cases(SynthConfig(seed=8), 2000)
    agree = sum(accept_video(v.points) == truth for v, truth in cases)
    n_accept = sum(t for _, t in cases)
    acceptance(8, "filter fidelity", agree == len(cases),
               f"{agree}/{len(cases)} agree ({n_accept} should pass, {len(cases) - n_accept} should fail)")


def test_9_performance(acceptance, big_gallery, e2e_runs):
    g, _ = big_gallery
    queries = np.random.default_rng(9).standard_normal((1000, 512))
    t0 = time.perf_counter()
    top_k_batch(g, queries, 10, workers=4)
    query_time = time.perf_counter() - t0
    _, codes, e2e_time = e2e_runs[0]
    ok = query_time < 10 and e2e_time < 300 and codes == [0, 0, 0, 0]
    acceptance(9, "performance", ok,
               f"1k x 100k x 512 top-10 on 4 workers {query_time:.2f}s (<10s); "
               f"synth->pipeline->evaluate (1k videos) {e2e_time:.1f}s (<300s), exit codes {codes}")


def test_10_determinism(acceptance, e2e_runs):
    (a, codes_a, _), (b, codes_b, _) = e2e_runs
    same = {name: (a / name).read_bytes() == (b / name).read_bytes() for name in E2E_FILES}
    ok = all(same.values()) and codes_a == codes_b == [0, 0, 0, 0]
    differing = [n for n, s in same.items() if not s]
    acceptance(10, "determinism", ok,
               f"{len(same)} output files compared across workers 4 vs 1, differing: {differing or 'none'}")
