import numpy as np
import pytest

from vidgeo.embeddings import build_gallery, gallery_from_records, l2_normalize, top_k_batch
from vidgeo.hierarchical import (
    DegenerateSequenceError,
    ReductionPolicy,
    aggregate_sequence,
    reduce_gallery,
    run_pipeline,
    screen_regions,
)
from vidgeo.synth import SynthConfig, gen_paired_embeddings, gen_world


def small_synth(**kw):
    cfg = SynthConfig(n_videos=30, n_regions=12, clips_per_video=10, **kw)
    emb = gen_paired_embeddings(cfg, gen_world(cfg))
    return cfg, emb, gallery_from_records(emb.tiles), gallery_from_records(emb.regions)


def pipeline(emb, tiles, regions, policy, **kw):
    return run_pipeline(
        emb.clips.ids, emb.clips.vectors, emb.clip_video, tiles, regions, emb.region_to_tiles, policy, **kw
    )


class TestPolicy:
    @pytest.mark.parametrize(
        "text,count", [("top-n:3", 3), ("top-percent:1", 10), ("top-percent:0.05", 1), ("all", 1000)]
    )
    def test_parse_and_count(self, text, count):
        assert ReductionPolicy.parse(text).region_count(1000) == count

    def test_str_roundtrip(self):
        for p in (ReductionPolicy.top_n(4), ReductionPolicy.top_percent(2.5)):
            assert ReductionPolicy.parse(str(p)) == p

    @pytest.mark.parametrize("text", ["top-n:0", "top-percent:-1", "best:3", "top-n"])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            ReductionPolicy.parse(text)


class TestAggregate:
    def test_single(self):
        v = l2_normalize([1.0, 2.0, 2.0])
        np.testing.assert_allclose(aggregate_sequence([v]), v, atol=1e-15)

    def test_opposite(self):
        with pytest.raises(DegenerateSequenceError, match="degenerate sequence"):
            aggregate_sequence([[1.0, 0.0], [-1.0, 0.0]])

    def test_loop_mean(self):
        seq = np.random.default_rng(0).standard_normal((32, 10))
        total = [0.0] * 10
        for row in seq:
            for j, x in enumerate(row):
                total[j] += x / 32
        norm = sum(x * x for x in total) ** 0.5
        np.testing.assert_allclose(aggregate_sequence(seq), [x / norm for x in total], atol=1e-7)

    def test_truncation_is_prefix_mean(self):
        seq = np.random.default_rng(1).standard_normal((32, 6))
        np.testing.assert_array_equal(aggregate_sequence(seq, 8), aggregate_sequence(seq[:8]))


class TestScreen:
    def test_self_match(self):
        rng = np.random.default_rng(2)
        seq = l2_normalize(rng.standard_normal((5, 8)))
        others = rng.standard_normal((20, 8))
        g = build_gallery(["target", *[f"r{i}" for i in range(20)]], np.vstack([aggregate_sequence(seq), others]))
        assert screen_regions(seq, g, 1).ids == ["target"]

    def test_signature_tiles_find_region(self):
        _, emb, tiles, regions = small_synth()
        for rid, tile_ids in emb.region_to_tiles.items():
            seq = tiles.vectors[[tiles.position(t) for t in tile_ids[:8]]]
            assert screen_regions(seq, regions, 1).ids == [rid]


class TestReduce:
    def test_all_regions_full_set(self):
        _, emb, tiles, regions = small_synth()
        ranked = list(regions.ids)
        red = reduce_gallery(ranked, ReductionPolicy.top_n(len(ranked)), emb.region_to_tiles, tiles)
        assert set(red.ids) == set(tiles.ids)

    def test_top_percent_arithmetic(self):
        rids = [f"r{i:04d}" for i in range(1000)]
        r2t = {r: [f"{r}:t{j}" for j in range(49)] for r in rids}
        all_tiles = [t for r in rids for t in r2t[r]]
        g = build_gallery(all_tiles, np.random.default_rng(3).standard_normal((len(all_tiles), 4)))
        red = reduce_gallery(rids, ReductionPolicy.top_percent(1.0), r2t, g)
        assert len(red) == 490

    def test_gt_retained_when_region_kept(self):
        _, emb, tiles, regions = small_synth()
        for clip_id in emb.clips.ids[:50]:
            gt = emb.truth[clip_id]
            rid = gt.split(":")[0]
            red = reduce_gallery([rid, *[r for r in regions.ids if r != rid]], ReductionPolicy.top_n(2),
                                 emb.region_to_tiles, tiles)
            assert gt in red

    def test_unknown_region(self):
        _, emb, tiles, _ = small_synth()
        with pytest.raises(KeyError):
            reduce_gallery(["nowhere"], ReductionPolicy.top_n(1), emb.region_to_tiles, tiles)


class TestPipeline:
    def test_identity_reduction(self):
        _, emb, tiles, regions = small_synth()
        res = pipeline(emb, tiles, regions, ReductionPolicy.parse("all"), truth=emb.truth)
        for c in res.clips():
            assert c.step4 == c.step1
            assert c.rank_step4 == c.rank_step1
        assert res.retained_fraction() == 1.0

    def test_rank_never_worse(self):
        _, emb, tiles, regions = small_synth(noise_sigma=0.4)
        res = pipeline(emb, tiles, regions, ReductionPolicy.top_n(2), truth=emb.truth)
        kept = [c for c in res.clips() if c.retained_gt]
        assert kept
        assert all(c.rank_step4 <= c.rank_step1 for c in kept)

    def test_ranks_match_full_ranking(self):
        _, emb, tiles, regions = small_synth(noise_sigma=0.4)
        res = pipeline(emb, tiles, regions, ReductionPolicy.top_n(1), truth=emb.truth)
        full = top_k_batch(tiles, emb.clips.vectors, len(tiles))
        for c, r in zip(res.clips(), full):
            assert c.rank_step1 == r.ids.index(c.truth_id) + 1

    def test_workers_identical(self):
        _, emb, tiles, regions = small_synth()
        a = pipeline(emb, tiles, regions, ReductionPolicy.top_n(2), truth=emb.truth)
        b = pipeline(emb, tiles, regions, ReductionPolicy.top_n(2), truth=emb.truth, workers=4)
        assert [v.to_json() for v in a.videos] == [v.to_json() for v in b.videos]

    def test_distractor_removed(self):
        # the GT region dominates screening, but one outside tile beats GT at clip level
        d = 8
        e = np.eye(d)
        gt_region = [l2_normalize(e[0] + 0.3 * e[i]) for i in range(1, 4)]
        other_region = [l2_normalize(e[5] + 0.3 * e[i]) for i in range(6, 8)]
        query = l2_normalize(e[0] + 0.3 * e[1] + 0.1 * e[4])
        distractor = l2_normalize(e[0] + 0.3 * e[1] + 0.12 * e[4] + 0.05 * e[5])
        other_region.append(distractor)
        tile_ids = ["A:0", "A:1", "A:2", "B:0", "B:1", "B:2"]
        tiles = build_gallery(tile_ids, np.vstack([*gt_region, *other_region]))
        means = [l2_normalize(np.mean(gt_region, 0)), l2_normalize(np.mean(other_region, 0))]
        regions = build_gallery(["A", "B"], np.vstack(means))
        r2t = {"A": tile_ids[:3], "B": tile_ids[3:]}
        res = run_pipeline(["c"], [query], {"c": "v"}, tiles, regions, r2t, ReductionPolicy.top_n(1),
                           k=3, truth={"c": "A:0"})
        clip = res.clips()[0]
        assert res.videos[0].regions.ids[0] == "A"
        assert clip.step1.ids[0] == "B:2"
        assert clip.rank_step4 < clip.rank_step1
