"""Exact top-k search, parallel batches, and the recall / distance metrics.

Run: python3 demos/03_retrieval_and_metrics.py
"""

import time

import numpy as np

from vidgeo.embeddings import build_gallery, top_k_batch
from vidgeo.metrics import CN, UCN, EvalConfig, Prediction, evaluate
from vidgeo.synth import SynthConfig, gen_paired_embeddings, gen_world

rng = np.random.default_rng(0)
gallery = build_gallery([f"g{i:05d}" for i in range(20_000)], rng.standard_normal((20_000, 128)))
queries = rng.standard_normal((500, 128))

t0 = time.perf_counter()
serial = top_k_batch(gallery, queries, 10)
t1 = time.perf_counter()
parallel = top_k_batch(gallery, queries, 10, workers=4)
t2 = time.perf_counter()
print(f"500 queries x 20k gallery: serial {t1 - t0:.2f}s, 4 workers {t2 - t1:.2f}s, identical: {serial == parallel}")
print("best match for query 0:", serial[0].ranked[:3])

# Clip queries against the UCN tiles of a small synthetic world.
cfg = SynthConfig(n_videos=40, n_regions=10)
world = gen_world(cfg)
emb = gen_paired_embeddings(cfg, world)
tiles = build_gallery(emb.tiles.ids, emb.tiles.vectors)
results = top_k_batch(tiles, emb.clips.vectors, 10)

centers = {t.tile_id: t.center_gps for t in world.ucn_tiles}
clips = {c.clip_id: c for c in world.clips}
preds = [
    Prediction(cid, tuple(r.ids), clips[cid].tile_id, clips[cid].label, tuple(centers[i] for i in r.ids))
    for cid, r in zip(emb.clips.ids, results)
]
for mode in (UCN, CN):
    report = evaluate(preds, EvalConfig(mode=mode, gallery_size=len(tiles)))
    print(f"\n{mode} evaluation\n{report.to_table()}")
