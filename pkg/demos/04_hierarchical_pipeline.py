"""Video-level screening shrinks each video's gallery before clips are matched again.

Run: python3 demos/04_hierarchical_pipeline.py
"""

import numpy as np

from vidgeo.embeddings import gallery_from_records
from vidgeo.hierarchical import ReductionPolicy, run_pipeline
from vidgeo.synth import SynthConfig, gen_paired_embeddings, gen_world

cfg = SynthConfig(n_videos=300, n_regions=100)
emb = gen_paired_embeddings(cfg, gen_world(cfg))
tiles = gallery_from_records(emb.tiles)
regions = gallery_from_records(emb.regions)
print(f"{len(emb.clips)} clips, {len(tiles)} tiles in {len(regions)} regions")

for text in ("all", "top-n:5", "top-percent:1"):
    policy = ReductionPolicy.parse(text)
    res = run_pipeline(emb.clips.ids, emb.clips.vectors, emb.clip_video, tiles, regions,
                       emb.region_to_tiles, policy, truth=emb.truth)
    clips = res.clips()
    r1 = np.mean([c.rank_step1 == 1 for c in clips])
    r4 = np.mean([c.rank_step4 == 1 for c in clips])
    worse = sum(c.rank_step4 > c.rank_step1 for c in clips if c.retained_gt)
    sizes = sorted({v.reduced_size for v in res.videos})
    print(f"{text:>14}: R@1 {r1:.4f} -> {r4:.4f}, GT kept {res.retained_fraction():.3f}, "
          f"reduced gallery {sizes}, clips ranked worse {worse}")
