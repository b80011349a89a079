import numpy as np
import pytest

from voxsplat import look_at_camera
from voxsplat.filtering import (
    COARSE_MACS,
    FINE_MACS,
    FilterStats,
    coarse_filter,
    disc_overlaps_rect,
    fine_filter,
    project_splats,
    quat_to_rotmat,
    tile_rect,
)
from voxsplat.sh import evaluate_sh


def _camera():
    return look_at_camera([0, 0, -8], [0, 0, 0], focal=300.0)


def _random_inputs(rng, n):
    pos = rng.uniform([-4, -4, -3], [4, 4, 3], size=(n, 3))
    scales = rng.uniform(0.005, 0.4, size=(n, 3))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opac = rng.uniform(0.05, 0.99, size=n)
    sh = rng.normal(0, 0.2, size=(n, 16, 3))
    ids = np.arange(n)
    return pos, scales, q, opac, sh, ids


# --- independent projection oracle (explicit matrices, scalar loop) ----------

def _quat_matrix_scalar(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * x * z + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * x * z - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def _oracle_project_one(camera, p, scale, q):
    t = camera.rotation @ p + camera.translation
    sigma = _quat_matrix_scalar(q) @ np.diag(scale**2) @ _quat_matrix_scalar(q).T
    jac = np.array(
        [
            [camera.fx / t[2], 0, -camera.fx * t[0] / t[2] ** 2],
            [0, camera.fy / t[2], -camera.fy * t[1] / t[2] ** 2],
        ]
    )
    cov2 = jac @ camera.rotation @ sigma @ camera.rotation.T @ jac.T
    cov2 = cov2 + np.diag([0.3, 0.3])
    det = np.linalg.det(cov2)
    conic = np.linalg.inv(cov2)
    lam = np.linalg.eigvalsh(cov2).max()
    radius = 3.0 * np.sqrt(lam)
    mean2d = np.array(
        [camera.fx * t[0] / t[2] + camera.cx, camera.fy * t[1] / t[2] + camera.cy]
    )
    return mean2d, (conic[0, 0], conic[0, 1], conic[1, 1]), radius, det


def test_projection_matches_independent_implementation():
    rng = np.random.default_rng(21)
    camera = _camera()
    pos, scales, q, opac, sh, ids = _random_inputs(rng, 200)
    valid, batch, _ = project_splats(camera, pos, scales, q, opac, sh, ids)
    for i in np.flatnonzero(valid):
        mean2d, conic, radius, det = _oracle_project_one(camera, pos[i], scales[i], q[i])
        assert np.allclose(batch.mean2d[i], mean2d, rtol=1e-9)
        assert np.allclose(batch.conic[i], conic, rtol=1e-4, atol=1e-9)
        assert radius == pytest.approx(batch.radius[i], rel=1e-4)


def test_isotropic_splat_has_symmetric_conic():
    camera = _camera()
    pos = np.array([[0.0, 0.0, 0.0]])  # projects to the image center
    scales = np.full((1, 3), 0.2)
    q = np.array([[1.0, 0, 0, 0]])
    valid, batch, _ = project_splats(
        camera, pos, scales, q, np.array([0.5]), np.zeros((1, 16, 3)), np.array([0])
    )
    assert valid[0]
    a, b, c = batch.conic[0]
    assert a == pytest.approx(c, abs=1e-5)
    assert b == pytest.approx(0.0, abs=1e-5)


def test_behind_camera_rejected_by_coarse():
    camera = _camera()
    stats = FilterStats()
    mask, _, _ = coarse_filter(
        camera, tile_rect(8, 8), np.array([[0.0, 0.0, -20.0]]), np.array([1.0]), stats
    )
    assert not mask[0]
    assert stats.loaded == 1 and stats.coarse_survivors == 0


def test_center_of_tile_passes_coarse():
    camera = _camera()
    stats = FilterStats()
    mask, _, _ = coarse_filter(
        camera, tile_rect(8, 8), np.array([[0.0, 0.0, 0.0]]), np.array([0.01]), stats
    )
    assert mask[0]


def test_mac_charges_are_55_and_427():
    camera = _camera()
    stats = FilterStats()
    pos = np.array([[0.0, 0.0, 0.0]])
    mask, _, _ = coarse_filter(camera, tile_rect(8, 8), pos, np.array([0.1]), stats)
    assert stats.macs_coarse == 55 == COARSE_MACS
    fine_filter(
        camera, tile_rect(8, 8), pos, np.full((1, 3), 0.1), np.array([[1.0, 0, 0, 0]]),
        np.array([0.5]), np.zeros((1, 16, 3)), np.array([0]), stats,
    )
    assert stats.macs_coarse + stats.macs_fine == 427
    assert FINE_MACS == 427 - 55


def test_conservativeness_fine_pass_implies_coarse_pass():
    # randomized splats/cameras/tiles; zero fine passes may be coarse rejects
    rng = np.random.default_rng(22)
    total = 0
    for trial in range(20):
        eye = rng.uniform([-2, -2, -12], [2, 2, -6])
        camera = look_at_camera(eye, rng.uniform(-1, 1, size=3), focal=rng.uniform(150, 500))
        n = 5000
        pos, scales, q, opac, sh, ids = _random_inputs(rng, n)
        scales *= rng.uniform(0.05, 2.0)  # include near-zero and large splats
        tile = (int(rng.integers(0, 16)), int(rng.integers(0, 16)))
        rect = tile_rect(*tile)
        stats = FilterStats()
        cmask, _, _ = coarse_filter(camera, rect, pos, scales.max(axis=1), stats)
        fine = fine_filter(camera, rect, pos, scales, q, opac, sh, ids, stats)
        fine_ids = set(fine.ids.tolist())
        coarse_ids = set(np.asarray(ids)[cmask].tolist())
        assert fine_ids <= coarse_ids
        total += n
    assert total >= 100000


def test_filter_stats_monotone():
    rng = np.random.default_rng(23)
    camera = _camera()
    stats = FilterStats()
    for _ in range(10):
        pos, scales, q, opac, sh, ids = _random_inputs(rng, 100)
        rect = tile_rect(int(rng.integers(0, 16)), int(rng.integers(0, 16)))
        cmask, _, _ = coarse_filter(camera, rect, pos, scales.max(axis=1), stats)
        sel = np.flatnonzero(cmask)
        fine_filter(camera, rect, pos[sel], scales[sel], q[sel], opac[sel], sh[sel], ids[sel],
                    stats)
        stats.check()


def test_emitted_conics_positive_definite():
    rng = np.random.default_rng(24)
    camera = _camera()
    pos, scales, q, opac, sh, ids = _random_inputs(rng, 2000)
    stats = FilterStats()
    batch = fine_filter(camera, tile_rect(7, 9), pos, scales, q, opac, sh, ids, stats)
    a, b, c = batch.conic[:, 0], batch.conic[:, 1], batch.conic[:, 2]
    assert np.all(a > 0) and np.all(c > 0) and np.all(a * c - b * b > 0)
    assert np.all(batch.depth > camera.near)


def test_fine_color_is_sh_toward_center():
    rng = np.random.default_rng(25)
    camera = _camera()
    pos = np.array([[0.3, -0.2, 0.5]])
    sh = rng.normal(0, 0.3, size=(1, 16, 3))
    stats = FilterStats()
    batch = fine_filter(
        camera, tile_rect(8, 8), pos, np.full((1, 3), 0.3), np.array([[1.0, 0, 0, 0]]),
        np.array([0.7]), sh, np.array([4]), stats,
    )
    d = pos[0] - camera.position
    want = evaluate_sh(sh[0], d / np.linalg.norm(d))
    assert np.allclose(batch.rgb[0], want)


def test_disc_rect_overlap_cases():
    rect = (0.0, 0.0, 16.0, 16.0)
    center = np.array([[8.0, 8.0], [20.0, 8.0], [20.0, 8.0], [17.0, 17.0]])
    radius = np.array([1.0, 3.0, 5.0, 1.0])
    got = disc_overlaps_rect(center, radius, rect)
    assert got.tolist() == [True, False, True, False]


def test_quat_rotmat_is_rotation():
    rng = np.random.default_rng(26)
    q = rng.normal(size=(50, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    mats = quat_to_rotmat(q)
    for m in mats:
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0)
