"""Front-to-back alpha blending — the single source of truth for both pipelines.

Per splat and pixel: alpha = min(0.99, opacity * exp(-0.5 d^T conic d)),
skipped below 1/255; color += T * alpha * rgb; T *= 1 - alpha.  A pixel whose
transmittance falls below 1e-4 is frozen and accumulates nothing further;
because the rule is part of the blend itself, exhaustive and early-exiting
schedules produce identical pixels.
"""

from __future__ import annotations

import numpy as np

from .filtering import ProjectedBatch
from .scene import TILE_EDGE

ALPHA_CAP = 0.99
ALPHA_MIN = 1.0 / 255.0
T_FREEZE = 1e-4


def tile_pixel_centers(tx: int, ty: int) -> np.ndarray:
    """(256, 2) pixel-center coordinates of a tile, row-major."""
    ys, xs = np.mgrid[0:TILE_EDGE, 0:TILE_EDGE]
    px = tx * TILE_EDGE + xs.ravel() + 0.5
    py = ty * TILE_EDGE + ys.ravel() + 0.5
    return np.stack([px, py], axis=1)


def blend(
    batch: ProjectedBatch,
    centers: np.ndarray,
    color: np.ndarray,
    transmittance: np.ndarray,
    trace: list | None = None,
    pixel_trace: tuple[int, list] | None = None,
) -> int:
    """Blend depth-sorted splats into the running pixel state (in place).

    Returns the number of splats processed.  ``trace`` collects one
    (depth, max_scale) pair per processed splat, in blend order;
    ``pixel_trace`` is (pixel_index, list) and collects only the splats that
    actually contributed to that pixel.
    """
    n = 0
    for i in range(len(batch)):
        active = transmittance >= T_FREEZE
        if not active.any():
            break
        n += 1
        if trace is not None:
            trace.append((float(batch.depth[i]), float(batch.max_scale[i])))
        d = centers - batch.mean2d[i]
        a, b, c = batch.conic[i]
        power = -0.5 * (a * d[:, 0] ** 2 + c * d[:, 1] ** 2) - b * d[:, 0] * d[:, 1]
        alpha = np.minimum(ALPHA_CAP, batch.opacity[i] * np.exp(power))
        hit = active & (alpha >= ALPHA_MIN)
        if pixel_trace is not None and hit[pixel_trace[0]]:
            pixel_trace[1].append((float(batch.depth[i]), float(batch.max_scale[i])))
        if not hit.any():
            continue
        w = transmittance[hit] * alpha[hit]
        color[hit] += w[:, None] * batch.rgb[i]
        transmittance[hit] *= 1.0 - alpha[hit]
    return n


def composite_background(color: np.ndarray, transmittance: np.ndarray, background) -> None:
    color += transmittance[:, None] * np.asarray(background, dtype=np.float64)
