import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsipll import hsi_data
from hsipll.errors import DataError


def write_scene(tmp_path, width, height, bands, values, declared=None):
    data_path = tmp_path / "scene.raw"
    np.asarray(values, dtype="<f4").tofile(data_path)
    header = tmp_path / "scene.hdr"
    d = declared or {}
    header.write_text(
        f"width = {d.get('width', width)}\n"
        f"height = {d.get('height', height)}\n"
        f"bands = {d.get('bands', bands)}\n"
        "dtype = float32\ninterleave = bsq\nbyteorder = little\n"
        "data = scene.raw\n")
    return str(header)


def test_load_cube_identity(tmp_path):
    header = write_scene(tmp_path, 2, 2, 1, [1.0, 2.0, 3.0, 4.0])
    cube = hsi_data.load_cube(header)
    assert (cube.height, cube.width, cube.bands) == (2, 2, 1)
    assert cube.pixel_matrix().tolist() == [[1.0, 2.0, 3.0, 4.0]]


def test_load_cube_size_mismatch(tmp_path):
    header = write_scene(tmp_path, 5, 1, 1, [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(DataError, match="size mismatch"):
        hsi_data.load_cube(header)


def test_load_cube_missing_data_file(tmp_path):
    header = tmp_path / "scene.hdr"
    header.write_text("width = 1\nheight = 1\nbands = 1\ndtype = float32\n"
                      "interleave = bsq\nbyteorder = little\ndata = nope.raw\n")
    with pytest.raises(DataError, match="not found"):
        hsi_data.load_cube(str(header))


def test_load_cube_non_finite_reports_offset(tmp_path):
    header = write_scene(tmp_path, 2, 2, 1, [1.0, 2.0, np.nan, 4.0])
    with pytest.raises(DataError, match="offset 2"):
        hsi_data.load_cube(header)


def test_cube_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(size=(3, 4, 5)).astype("<f4")
    cube = hsi_data.HsiCube(height=4, width=5, bands=3, data=data)
    header = str(tmp_path / "out.hdr")
    hsi_data.write_cube(cube, header)
    back = hsi_data.load_cube(header)
    assert back.data.tobytes() == cube.data.tobytes()


def make_gt(labels):
    labels = np.asarray(labels, dtype=np.int64)
    return hsi_data.GroundTruth(height=labels.shape[0], width=labels.shape[1],
                                labels=labels)


def test_load_ground_truth(tmp_path):
    cube, _ = hsi_data.generate_synthetic_scene(2, 2, 1, 1, 0.0, 0)
    path = tmp_path / "gt.txt"
    path.write_text("0 1\n2 1\n")
    gt = hsi_data.load_ground_truth(str(path), cube)
    assert gt.flat_labels().tolist() == [0, 1, 2, 1]
    assert gt.num_classes == 2


def test_ground_truth_class_gap_rejected():
    with pytest.raises(DataError, match="class 2 has no pixels"):
        make_gt([[0, 1], [3, 1]])


def test_load_ground_truth_dimension_mismatch(tmp_path):
    cube, _ = hsi_data.generate_synthetic_scene(2, 2, 1, 1, 0.0, 0)
    path = tmp_path / "gt.txt"
    path.write_text("0 1 1\n2 1 1\n1 1 2\n")
    with pytest.raises(DataError, match="raster is 3x3"):
        hsi_data.load_ground_truth(str(path), cube)


def test_ground_truth_negative_labels_rejected():
    with pytest.raises(DataError, match="negative"):
        make_gt([[0, -1], [1, 1]])


def test_split_counts():
    labels = np.zeros((10, 11), dtype=np.int64)
    labels.reshape(-1)[:100] = 1
    labels.reshape(-1)[100:110] = 2
    gt = make_gt(labels)
    train, test = hsi_data.split_train_test(gt, 0.05, seed=3)
    flat = gt.flat_labels()
    assert (flat[train] == 1).sum() == 5 and (flat[test] == 1).sum() == 95
    # 1% of a 10-pixel class still trains one pixel (ceil with floor of one)
    assert (flat[train] == 2).sum() == 1 and (flat[test] == 2).sum() == 9


def test_split_deterministic():
    _, gt = hsi_data.generate_synthetic_scene(12, 12, 3, 4, 0.1, 7)
    a = hsi_data.split_train_test(gt, 0.2, seed=11)
    b = hsi_data.split_train_test(gt, 0.2, seed=11)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_split_rejects_tiny_class():
    gt = make_gt([[1, 2], [2, 2]])
    with pytest.raises(DataError, match="at least 2"):
        hsi_data.split_train_test(gt, 0.5, seed=0)


def test_split_rejects_bad_percent():
    _, gt = hsi_data.generate_synthetic_scene(8, 8, 2, 2, 0.0, 0)
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(DataError):
            hsi_data.split_train_test(gt, bad, seed=0)


@settings(deadline=None, max_examples=25)
@given(seed=st.integers(0, 2**32 - 1), percent=st.floats(0.01, 0.99))
def test_split_partitions_labeled_pixels(seed, percent):
    _, gt = hsi_data.generate_synthetic_scene(10, 10, 2, 4, 0.1, 5)
    train, test = hsi_data.split_train_test(gt, percent, seed=seed)
    labeled = np.flatnonzero(gt.flat_labels() > 0)
    assert np.intersect1d(train, test).size == 0
    assert np.array_equal(np.union1d(train, test), labeled)


def test_candidates_r0_is_singleton_truth():
    _, gt = hsi_data.generate_synthetic_scene(8, 8, 2, 4, 0.0, 1)
    train, _ = hsi_data.split_train_test(gt, 0.2, seed=2)
    pset = hsi_data.generate_candidates(train, gt, r=0, seed=2)
    flat = gt.flat_labels()
    for e in pset.entries:
        assert e.candidates == (flat[e.pixel_index],)


def test_candidates_r1_sixteen_classes():
    _, gt = hsi_data.generate_synthetic_scene(16, 16, 2, 16, 0.0, 1)
    train, _ = hsi_data.split_train_test(gt, 0.3, seed=4)
    pset = hsi_data.generate_candidates(train, gt, r=1, seed=4)
    for e in pset.entries:
        assert len(e.candidates) == 2 and e.true_label in e.candidates


def test_candidates_r_max_is_full_label_space():
    _, gt = hsi_data.generate_synthetic_scene(8, 8, 2, 4, 0.0, 1)
    train, _ = hsi_data.split_train_test(gt, 0.2, seed=2)
    pset = hsi_data.generate_candidates(train, gt, r=3, seed=2)
    for e in pset.entries:
        assert e.candidates == (1, 2, 3, 4)


def test_candidates_r_too_large_rejected():
    _, gt = hsi_data.generate_synthetic_scene(8, 8, 2, 4, 0.0, 1)
    train, _ = hsi_data.split_train_test(gt, 0.2, seed=2)
    with pytest.raises(DataError, match="smaller than the class count"):
        hsi_data.generate_candidates(train, gt, r=4, seed=2)


@settings(deadline=None, max_examples=25)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(0, 3))
def test_candidate_invariants(seed, r):
    _, gt = hsi_data.generate_synthetic_scene(10, 10, 2, 4, 0.05, 9)
    train, _ = hsi_data.split_train_test(gt, 0.15, seed=seed)
    pset = hsi_data.generate_candidates(train, gt, r=r, seed=seed)
    flat = gt.flat_labels()
    for e in pset.entries:
        assert len(e.candidates) == r + 1
        assert len(set(e.candidates)) == r + 1
        assert flat[e.pixel_index] in e.candidates
        assert all(1 <= lab <= gt.num_classes for lab in e.candidates)


def test_candidate_file_round_trip(tmp_path):
    _, gt = hsi_data.generate_synthetic_scene(8, 8, 2, 4, 0.0, 1)
    train, _ = hsi_data.split_train_test(gt, 0.2, seed=2)
    pset = hsi_data.generate_candidates(train, gt, r=2, seed=2)
    path = str(tmp_path / "cands.csv")
    hsi_data.save_candidates(pset, path)
    first = open(path).readline().strip()
    idx, true, cands = first.split(",")
    assert int(idx) == pset.entries[0].pixel_index
    assert tuple(int(t) for t in cands.split(";")) == pset.entries[0].candidates
    back = hsi_data.load_candidates(path, gt.num_classes)
    assert back.entries == pset.entries and back.r == pset.r


def test_synthetic_zero_noise_identical_vectors():
    cube, gt = hsi_data.generate_synthetic_scene(8, 8, 5, 3, 0.0, seed=6)
    pixels = cube.pixel_matrix().T
    flat = gt.flat_labels()
    for k in range(1, 4):
        block = pixels[flat == k]
        assert np.all(block == block[0])


def test_synthetic_single_class_uniform():
    _, gt = hsi_data.generate_synthetic_scene(6, 7, 3, 1, 0.2, seed=0)
    assert np.all(gt.labels == 1)


def test_synthetic_noise_variance_matches_sigma():
    sigma = 0.05
    cube, gt = hsi_data.generate_synthetic_scene(32, 32, 16, 4, sigma, seed=13)
    pixels = cube.pixel_matrix().T.astype(np.float64)
    flat = gt.flat_labels()
    # independent oracle: per-band sample variance inside one homogeneous class
    per_band = [pixels[flat == k].var(axis=0, ddof=1).mean() for k in range(1, 5)]
    assert abs(np.mean(per_band) - sigma**2) < 0.1 * sigma**2


def test_synthetic_rejects_too_many_classes():
    with pytest.raises(DataError):
        hsi_data.generate_synthetic_scene(2, 2, 3, 5, 0.0, seed=0)
