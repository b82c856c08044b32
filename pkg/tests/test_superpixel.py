from collections import deque

import numpy as np
import pytest

from hsipll import hsi_data, superpixel
from hsipll.errors import DataError


def flood_reaches_all(labels, k):
    pts = np.argwhere(labels == k)
    start = tuple(pts[0])
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < labels.shape[0] and 0 <= cc < labels.shape[1] \
                    and labels[rr, cc] == k and (rr, cc) not in seen:
                seen.add((rr, cc))
                queue.append((rr, cc))
    return len(seen) == len(pts)


def test_base_image_single_band_is_minmax():
    rng = np.random.default_rng(0)
    data = rng.uniform(2.0, 9.0, size=(1, 6, 7)).astype("<f4")
    cube = hsi_data.HsiCube(height=6, width=7, bands=1, data=data)
    base = superpixel.compute_base_image(cube)
    band = data[0].astype(np.float64)
    expected = (band - band.min()) / (band.max() - band.min())
    assert np.allclose(base, expected, atol=1e-6)


def test_base_image_constant_cube_is_half():
    cube = hsi_data.HsiCube(height=3, width=3, bands=2,
                            data=np.full((2, 3, 3), 1.5, dtype="<f4"))
    assert np.all(superpixel.compute_base_image(cube) == 0.5)


def test_pc1_variance_dominates_every_band():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(4, 8, 8)).astype("<f4")
    cube = hsi_data.HsiCube(height=8, width=8, bands=4, data=data)
    scores = superpixel.spectral_pc1(cube)
    band_vars = [data[b].astype(np.float64).var() for b in range(4)]
    assert scores.var() >= max(band_vars) - 1e-12


def test_segment_single_superpixel():
    base = np.random.default_rng(1).uniform(size=(9, 5))
    seg = superpixel.segment(base, 1)
    assert seg.n_superpixels == 1 and np.all(seg.labels == 0)


def test_segment_every_pixel_own_superpixel():
    base = np.random.default_rng(1).uniform(size=(12, 9))
    seg = superpixel.segment(base, 12 * 9, compactness=1e6)
    assert seg.n_superpixels == 12 * 9
    assert np.unique(seg.labels).size == 12 * 9


def test_segment_recovers_quadrants():
    cube, gt = hsi_data.generate_synthetic_scene(32, 32, 4, 4, 0.0, seed=1)
    seg = superpixel.segment(superpixel.compute_base_image(cube), 4)
    assert seg.n_superpixels == 4
    for k in range(1, 5):
        assert np.unique(seg.labels[gt.labels == k]).size == 1


def test_segment_rejects_bad_k():
    base = np.zeros((4, 4))
    for bad in (0, 17, -1):
        with pytest.raises(DataError):
            superpixel.segment(base, bad)


def test_segment_partition_and_connectivity():
    cube, _ = hsi_data.generate_synthetic_scene(20, 26, 6, 4, 0.3, seed=2)
    seg = superpixel.segment(superpixel.compute_base_image(cube), 10)
    assert np.unique(seg.labels).size == seg.n_superpixels
    assert seg.labels.min() == 0 and seg.labels.max() == seg.n_superpixels - 1
    for k in range(seg.n_superpixels):
        assert flood_reaches_all(seg.labels, k)


def test_segment_deterministic():
    cube, _ = hsi_data.generate_synthetic_scene(16, 16, 5, 4, 0.2, seed=4)
    base = superpixel.compute_base_image(cube)
    a = superpixel.segment(base, 9, seed=1)
    b = superpixel.segment(base, 9, seed=1)
    assert np.array_equal(a.labels, b.labels)


def test_group_pixels_single_block():
    cube, _ = hsi_data.generate_synthetic_scene(5, 4, 3, 2, 0.1, seed=0)
    seg = superpixel.Segmentation(labels=np.zeros((5, 4), dtype=np.int64), n_superpixels=1)
    blocks, pixel_map = superpixel.group_pixels(cube, seg)
    assert len(blocks) == 1 and blocks[0].n_pixels == 20
    assert np.all(pixel_map[:, 0] == 0)
    assert np.array_equal(pixel_map[:, 1], np.arange(20))


def test_group_pixels_two_row_example():
    data = np.arange(4, dtype="<f4").reshape(1, 2, 2)
    cube = hsi_data.HsiCube(height=2, width=2, bands=1, data=data)
    seg = superpixel.Segmentation(labels=np.array([[0, 0], [1, 1]]), n_superpixels=2)
    blocks, _ = superpixel.group_pixels(cube, seg)
    assert blocks[0].coords.tolist() == [[0, 0], [0, 1]]
    assert blocks[1].coords.tolist() == [[1, 0], [1, 1]]
    assert blocks[0].matrix.tolist() == [[0.0, 1.0]]
    assert blocks[1].matrix.tolist() == [[2.0, 3.0]]


def test_group_pixels_reassembles_cube_exactly():
    cube, _ = hsi_data.generate_synthetic_scene(14, 11, 4, 3, 0.2, seed=5)
    seg = superpixel.segment(superpixel.compute_base_image(cube), 6)
    blocks, pixel_map = superpixel.group_pixels(cube, seg)
    assert sum(b.n_pixels for b in blocks) == cube.n_pixels
    rebuilt = np.empty((cube.bands, cube.n_pixels))
    for pix in range(cube.n_pixels):
        d, v = pixel_map[pix]
        rebuilt[:, pix] = blocks[d].matrix[:, v]
    assert np.array_equal(rebuilt, cube.pixel_matrix().astype(np.float64))


def test_group_pixels_dimension_mismatch():
    cube, _ = hsi_data.generate_synthetic_scene(4, 4, 2, 2, 0.0, seed=0)
    seg = superpixel.Segmentation(labels=np.zeros((3, 3), dtype=np.int64), n_superpixels=1)
    with pytest.raises(DataError):
        superpixel.group_pixels(cube, seg)


def test_segmentation_raster_round_trip(tmp_path):
    cube, _ = hsi_data.generate_synthetic_scene(10, 10, 3, 4, 0.1, seed=8)
    seg = superpixel.segment(superpixel.compute_base_image(cube), 5)
    path = str(tmp_path / "seg.txt")
    superpixel.save_segmentation(seg, path)
    back = superpixel.load_segmentation(path)
    assert back.n_superpixels == seg.n_superpixels
    assert np.array_equal(back.labels, seg.labels)
