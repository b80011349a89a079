"""Memory-centric renderer: per tile, stream scheduled voxels through the
hierarchical filter, sort survivors by depth inside each voxel, and blend with
pixel state carried across voxels.  Nothing but final pixels is ever written
back, so the intermediate traffic stages stay at zero bytes by construction.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blending import T_FREEZE, blend, composite_background, tile_pixel_centers
from .filtering import FilterStats, coarse_filter, fine_filter, tile_rect
from .scene import Camera, TILE_EDGE
from .scheduler import schedule, traverse, voxel_depths
from .traffic import PIXEL_BYTES, TrafficLedger
from .voxelstore import VoxelGrid, VoxelRecord, stream_coarse, stream_fine
from .vq import Codebook

VOXEL_BATCH_CAPACITY = 4096  # on-chip sorting buffer bound; overflow splits in depth order


@dataclass
class StreamStats:
    filter: FilterStats = field(default_factory=FilterStats)
    voxels_scheduled: int = 0
    voxels_skipped_early: int = 0
    cycles_broken: int = 0
    batch_splits: int = 0
    blended: int = 0

    def merge(self, other: "StreamStats") -> None:
        self.filter.merge(other.filter)
        self.voxels_scheduled += other.voxels_scheduled
        self.voxels_skipped_early += other.voxels_skipped_early
        self.cycles_broken += other.cycles_broken
        self.batch_splits += other.batch_splits
        self.blended += other.blended

    def as_dict(self) -> dict:
        return {
            "filter": self.filter.as_dict(),
            "voxels_scheduled": self.voxels_scheduled,
            "voxels_skipped_early": self.voxels_skipped_early,
            "cycles_broken": self.cycles_broken,
            "batch_splits": self.batch_splits,
            "blended": self.blended,
        }


def render_tile_streaming(
    tile: tuple[int, int],
    camera: Camera,
    grid: VoxelGrid,
    records: list[VoxelRecord],
    books: dict[str, Codebook] | None,
    ledger: TrafficLedger,
    background=(0.0, 0.0, 0.0),
    trace: list | None = None,
    pixel_trace: tuple[int, list] | None = None,
    early_exit: bool = True,
    batch_capacity: int = VOXEL_BATCH_CAPACITY,
) -> tuple[np.ndarray, StreamStats]:
    """Render one 16x16 tile; returns (256, 3) colors and the tile's stats."""
    tx, ty = tile
    stats = StreamStats()
    rect = tile_rect(tx, ty)
    centers = tile_pixel_centers(tx, ty)
    color = np.zeros((TILE_EDGE * TILE_EDGE, 3))
    transmittance = np.ones(TILE_EDGE * TILE_EDGE)

    table = traverse(tile, camera, grid)
    seen = {v for row in table for v in row}
    order, meta = schedule(table, voxel_depths(seen, camera, grid))
    stats.cycles_broken = meta.cycles_broken
    stats.voxels_scheduled = len(order)

    for k, vid_r in enumerate(order):
        if early_exit and np.all(transmittance < T_FREEZE):
            stats.voxels_skipped_early += len(order) - k
            break
        rec = records[vid_r]
        positions, max_scales = stream_coarse(rec, ledger)
        mask, _, _ = coarse_filter(camera, rect, positions, max_scales, stats.filter)
        survivors = np.flatnonzero(mask)
        if not len(survivors):
            continue
        scales, rots, dc, rest, opac = stream_fine(rec, survivors, books, ledger)
        sh = np.concatenate([dc[:, None, :], rest], axis=1)
        batch = fine_filter(
            camera,
            rect,
            positions[survivors],
            scales,
            rots,
            opac,
            sh,
            rec.ids[survivors],
            stats.filter,
        )
        if not len(batch):
            continue
        batch = batch.sorted_by_depth()
        for start in range(0, len(batch), batch_capacity):
            if start:
                stats.batch_splits += 1
            chunk = batch.take(np.arange(start, min(start + batch_capacity, len(batch))))
            stats.blended += blend(chunk, centers, color, transmittance, trace, pixel_trace)

    composite_background(color, transmittance, background)
    ledger.charge("pixel-writeback", PIXEL_BYTES * len(centers), len(centers))
    stats.filter.check()
    return color, stats


def render_frame_streaming(
    camera: Camera,
    grid: VoxelGrid,
    records: list[VoxelRecord],
    books: dict[str, Codebook] | None = None,
    *,
    background=(0.0, 0.0, 0.0),
    threads: int = 1,
    scene_hash: str = "",
    early_exit: bool = True,
) -> tuple[np.ndarray, TrafficLedger, StreamStats]:
    """Render all tiles; output is independent of the worker count.

    Returns (framebuffer (H, W, 3) float32, ledger, aggregate stats).
    """
    ntx, nty = camera.tile_counts
    tiles = [(tx, ty) for ty in range(nty) for tx in range(ntx)]

    def run(tile):
        sub = TrafficLedger()
        color, stats = render_tile_streaming(
            tile, camera, grid, records, books, sub, background=background,
            early_exit=early_exit,
        )
        return color, sub, stats

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tiles))
    else:
        results = [run(t) for t in tiles]

    frame = np.zeros((camera.height, camera.width, 3), dtype=np.float64)
    ledger = TrafficLedger(scene_hash=scene_hash)
    stats = StreamStats()
    for (tx, ty), (color, sub, tstats) in zip(tiles, results):
        y0, x0 = ty * TILE_EDGE, tx * TILE_EDGE
        frame[y0 : y0 + TILE_EDGE, x0 : x0 + TILE_EDGE] = color.reshape(TILE_EDGE, TILE_EDGE, 3)
        ledger.merge(sub)
        stats.merge(tstats)
    ledger.macs_coarse = stats.filter.macs_coarse
    ledger.macs_fine = stats.filter.macs_fine
    return frame.astype(np.float32), ledger, stats
