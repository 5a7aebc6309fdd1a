"""From a GPS trajectory to a large aerial region, its 7x7 tile grid and centered crops.

Run: python3 demos/01_tile_geometry.py
"""

from vidgeo.dataset import layout_video
from vidgeo.geodesy import accept_video, gps_range_mu, gps_to_global_pixel, haversine_miles
from vidgeo.synth import SynthConfig, gen_trajectory

cfg = SynthConfig(seed=1)

# A 40-second drive, one GPS label per second.
video = gen_trajectory(cfg, "demo-video")
mu = gps_range_mu(video.points)
print(f"{len(video.gps_labels)} labels, lat range {mu.lat_range:.5f}, lon range {mu.lon_range:.5f}, mu {mu.mu:.5f}")
print("kept by the range filter:", accept_video(video.points))

# Distance covered between consecutive labels.
steps = [haversine_miles(a, b) for a, b in zip(video.points, video.points[1:])]
print(f"path length {sum(steps):.3f} miles, longest step {max(steps) * 5280:.1f} ft")

# The region around the drive, its 49 uncentered tiles and one centered crop per clip.
layout = layout_video(video)
region = layout.region
print(f"region {region.region_id} origin px ({region.origin.x}, {region.origin.y}) at zoom {region.origin.zoom}")
print(f"{len(layout.ucn_tiles)} UCN tiles, {len(layout.clips)} clips, {len(layout.cn_tiles)} CN crops")

for clip, crop in list(zip(layout.clips, layout.cn_tiles))[:5]:
    px = gps_to_global_pixel(clip.label, region.origin.zoom)
    dx, dy = region.offset_of(px)
    print(f"  {clip.clip_id:>14}  offset ({dx:4d}, {dy:4d})  UCN {clip.tile_id.split(':')[-1]}"
          f"  CN origin offset ({crop.origin.x - region.origin.x}, {crop.origin.y - region.origin.y})")

visited = sorted({c.tile_id for c in layout.clips})
print(f"the drive touches {len(visited)} of the 49 UCN tiles")
