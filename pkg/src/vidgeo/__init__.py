"""Cross-view video geo-localization toolkit.

Tile geometry for ground videos and aerial imagery, the image-video
contrastive loss, exact embedding retrieval, hierarchical gallery
reduction and recall-based evaluation.
"""

__version__ = "0.1.0"

from .geodesy import (
    GeoPoint,
    MuRange,
    PixelCoord,
    accept_video,
    global_pixel_to_gps,
    gps_range_mu,
    gps_to_global_pixel,
    haversine_miles,
)
from .dataset import (
    AerialTile,
    ClipRecord,
    LargeAerialRegion,
    VideoRecord,
    centered_crop,
    locate_tile,
    read_manifest,
    region_for_video,
    segment_clips,
    tile_grid,
    write_manifest,
)
from .embeddings import (
    EmbeddingRecords,
    Gallery,
    QueryResult,
    build_gallery,
    l2_normalize,
    read_embeddings,
    subset,
    top_k,
    top_k_batch,
    write_embeddings,
)
from .loss import LossConfig, nt_xent_cross_modal, nt_xent_gradient, train_toy_encoders
from .metrics import EvalConfig, MetricsReport, Prediction, evaluate, recall_at_k, recall_at_percent, top1_at_threshold
from .hierarchical import ReductionPolicy, aggregate_sequence, reduce_gallery, run_pipeline, screen_regions
from .synth import SynthConfig, gen_paired_embeddings, gen_trajectory, gen_world
