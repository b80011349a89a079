"""Quality diagnostics: PSNR, cross-voxel extent checks, depth-order penalty."""

from __future__ import annotations

import numpy as np

from .filtering import quat_to_rotmat
from .scene import Scene
from .voxelstore import VoxelGrid

CBP_BETA_DEFAULT = 0.05
EXTENT_SIGMAS = 3.0


def psnr(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """10*log10(1/MSE) for images in [0, 1]; +inf when identical."""
    img_a = np.asarray(img_a, dtype=np.float64)
    img_b = np.asarray(img_b, dtype=np.float64)
    if img_a.shape != img_b.shape:
        raise ValueError(f"image shapes differ: {img_a.shape} vs {img_b.shape}")
    mse = float(np.mean((img_a - img_b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def extent_boxes(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    """Conservative axis-aligned bounds of each splat's rotated 3-sigma box."""
    rot = quat_to_rotmat(scene.rotations)
    half = EXTENT_SIGMAS * np.einsum("nij,nj->ni", np.abs(rot), scene.scales)
    return scene.positions - half, scene.positions + half


def cross_boundary_stats(scene: Scene, grid: VoxelGrid) -> dict:
    """Fraction of splats whose 3-sigma box exits their resident voxel."""
    n = len(scene)
    if n == 0:
        return {"ratio": 0.0, "crossing": 0, "total": 0, "per_voxel": {}}
    lo, hi = extent_boxes(scene)
    cells = grid.cell_of(scene.positions)
    vox_lo = grid.origin + cells * grid.edge
    vox_hi = vox_lo + grid.edge
    crossing = np.any((lo < vox_lo) | (hi > vox_hi), axis=1)
    rename = grid.dense_renaming()
    vids = grid.vid_of_cell(cells)
    per_voxel: dict[int, int] = {}
    for i in np.flatnonzero(crossing):
        vid_r = int(rename[vids[i]])
        per_voxel[vid_r] = per_voxel.get(vid_r, 0) + 1
    return {
        "ratio": float(crossing.mean()),
        "crossing": int(crossing.sum()),
        "total": n,
        "per_voxel": per_voxel,
    }


def cbp_loss(render_order) -> float:
    """Mean max-scale over depth-order violations in a blend trace.

    ``render_order`` is a sequence of (depth, max_scale) in the order actually
    blended; splat i counts iff its depth is below the running maximum of all
    earlier depths.  Empty traces score 0.
    """
    order = list(render_order)
    if not order:
        return 0.0
    total = 0.0
    running_max = -np.inf
    for depth, s in order:
        if depth < running_max:
            total += s
        running_max = max(running_max, depth)
    return total / len(order)
