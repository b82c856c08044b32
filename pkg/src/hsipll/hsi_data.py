"""Hyperspectral cube ingestion, ground truth, and partial-label training sets.

Cubes live on disk as a flat key=value header plus a raw little-endian
float32 file in band-sequential order (band-major, then row-major within a
band). Ground truth is an ASCII integer raster with 0 meaning unlabeled.
Training sets carry candidate label sets: the hidden true label plus ``r``
distinct false labels drawn uniformly from the remaining classes.

All randomness flows through ``numpy.random.default_rng`` (PCG64) seeded
explicitly, so every generated artifact is reproducible across machines.
All container types are immutable after construction.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .fileio import read_kv_file, read_label_raster, write_kv_file, write_label_raster

CUBE_DTYPE = np.dtype("<f4")

_REQUIRED_HEADER_KEYS = ("width", "height", "bands", "dtype", "interleave", "byteorder", "data")


@dataclass(frozen=True)
class HsiCube:
    """A hyperspectral image: ``data`` has shape (bands, height, width)."""

    height: int
    width: int
    bands: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.bands, self.height, self.width):
            raise DataError(
                f"cube data shape {self.data.shape} does not match "
                f"(bands={self.bands}, height={self.height}, width={self.width})"
            )
        self.data.setflags(write=False)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def pixel_matrix(self) -> np.ndarray:
        """Pixels as columns: shape (bands, height*width), row-major pixel order."""
        return self.data.reshape(self.bands, self.n_pixels)


@dataclass(frozen=True)
class GroundTruth:
    """Integer label raster; 0 = unlabeled, classes are 1..num_classes."""

    height: int
    width: int
    labels: np.ndarray
    num_classes: int = field(init=False)

    def __post_init__(self):
        if self.labels.shape != (self.height, self.width):
            raise DataError(
                f"ground truth shape {self.labels.shape} does not match "
                f"({self.height}, {self.width})"
            )
        if self.labels.min(initial=0) < 0:
            raise DataError("ground truth contains negative labels")
        c = int(self.labels.max(initial=0))
        present = np.unique(self.labels)
        for k in range(1, c + 1):
            if k not in present:
                raise DataError(f"class {k} has no pixels but max label is {c}")
        object.__setattr__(self, "num_classes", c)
        self.labels.setflags(write=False)

    def flat_labels(self) -> np.ndarray:
        return self.labels.reshape(-1)


@dataclass(frozen=True)
class CandidateEntry:
    pixel_index: int
    true_label: int
    candidates: tuple[int, ...]  # sorted ascending, includes true_label


@dataclass(frozen=True)
class PartialLabeledSet:
    """Training pixels with candidate label sets of size r+1 each."""

    entries: tuple[CandidateEntry, ...]
    r: int
    num_classes: int

    def __post_init__(self):
        for e in self.entries:
            if len(e.candidates) != self.r + 1:
                raise DataError(f"candidate set size {len(e.candidates)} != r+1 = {self.r + 1}")
            if e.true_label not in e.candidates:
                raise DataError(f"true label {e.true_label} missing from candidates {e.candidates}")
            if len(set(e.candidates)) != len(e.candidates):
                raise DataError(f"duplicate candidates in {e.candidates}")
            for lab in e.candidates:
                if not 1 <= lab <= self.num_classes:
                    raise DataError(f"candidate label {lab} outside 1..{self.num_classes}")

    @property
    def p(self) -> int:
        return len(self.entries)

    def pixel_indices(self) -> np.ndarray:
        return np.array([e.pixel_index for e in self.entries], dtype=np.int64)

    def true_labels(self) -> np.ndarray:
        return np.array([e.true_label for e in self.entries], dtype=np.int64)


def load_cube(header_path: str) -> HsiCube:
    """Load a cube from its header file; values are little-endian float32, BSQ."""
    header = read_kv_file(header_path)
    missing = [k for k in _REQUIRED_HEADER_KEYS if k not in header]
    if missing:
        raise DataError(f"{header_path}: missing header keys {missing}")
    for key, expected in (("dtype", "float32"), ("interleave", "bsq"), ("byteorder", "little")):
        if header[key] != expected:
            raise DataError(f"{header_path}: unsupported {key}={header[key]!r} (only {expected!r})")
    try:
        width = int(header["width"])
        height = int(header["height"])
        bands = int(header["bands"])
    except ValueError as exc:
        raise DataError(f"{header_path}: non-integer dimension ({exc})") from exc
    if width < 1 or height < 1 or bands < 1:
        raise DataError(f"{header_path}: non-positive dimensions {width}x{height}x{bands}")

    data_path = os.path.join(os.path.dirname(os.path.abspath(header_path)), header["data"])
    if not os.path.isfile(data_path):
        raise DataError(f"{header_path}: data file not found: {data_path}")
    n_values = width * height * bands
    actual = os.path.getsize(data_path)
    expected_bytes = n_values * CUBE_DTYPE.itemsize
    if actual != expected_bytes:
        raise DataError(
            f"{data_path}: size mismatch, header declares {n_values} values "
            f"({expected_bytes} bytes) but file has {actual} bytes"
        )
    flat = np.fromfile(data_path, dtype=CUBE_DTYPE)
    finite = np.isfinite(flat)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise DataError(f"{data_path}: non-finite value at offset {bad}")
    return HsiCube(height=height, width=width, bands=bands,
                   data=flat.reshape(bands, height, width))


def write_cube(cube: HsiCube, header_path: str, data_name: str | None = None) -> None:
    """Write header + raw data; inverse of load_cube (bit-exact round trip)."""
    if data_name is None:
        data_name = os.path.splitext(os.path.basename(header_path))[0] + ".raw"
    data_path = os.path.join(os.path.dirname(os.path.abspath(header_path)), data_name)
    np.ascontiguousarray(cube.data, dtype=CUBE_DTYPE).tofile(data_path)
    write_kv_file(header_path, [
        ("width", cube.width),
        ("height", cube.height),
        ("bands", cube.bands),
        ("dtype", "float32"),
        ("interleave", "bsq"),
        ("byteorder", "little"),
        ("data", data_name),
    ])


def load_ground_truth(path: str, cube: HsiCube) -> GroundTruth:
    """Read an ASCII label raster and validate it against the cube dimensions."""
    labels = read_label_raster(path)
    if labels.shape != (cube.height, cube.width):
        raise DataError(
            f"{path}: raster is {labels.shape[0]}x{labels.shape[1]} but cube is "
            f"{cube.height}x{cube.width}"
        )
    return GroundTruth(height=cube.height, width=cube.width, labels=labels)


def write_ground_truth(gt: GroundTruth, path: str) -> None:
    write_label_raster(path, gt.labels)


def split_train_test(gt: GroundTruth, percent_per_class: float, seed: int):
    """Per-class split: max(ceil(percent * n_k), 1) training pixels per class.

    The ceil-with-floor-of-one rule guarantees every class is represented in
    the training set. Returns sorted (train, test) arrays of linear pixel
    indices; unlabeled pixels appear in neither.
    """
    if not 0.0 < percent_per_class < 1.0:
        raise DataError(f"percent_per_class must be in (0, 1), got {percent_per_class}")
    if gt.num_classes < 1:
        raise DataError("ground truth has no labeled classes")
    flat = gt.flat_labels()
    rng = np.random.default_rng(seed)
    train: list[np.ndarray] = []
    test: list[np.ndarray] = []
    for k in range(1, gt.num_classes + 1):
        idx = np.flatnonzero(flat == k)
        if idx.size < 2:
            raise DataError(f"class {k} has {idx.size} labeled pixels, need at least 2")
        n_train = max(int(np.ceil(percent_per_class * idx.size)), 1)
        perm = rng.permutation(idx.size)
        train.append(idx[perm[:n_train]])
        test.append(idx[perm[n_train:]])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def generate_candidates(train_indices: np.ndarray, gt: GroundTruth, r: int,
                        seed: int) -> PartialLabeledSet:
    """Attach candidate sets: the true label plus r distinct false labels.

    False labels are drawn uniformly without replacement from the other
    classes, per the candidate-label controlling protocol.
    """
    c = gt.num_classes
    if r < 0:
        raise DataError(f"r must be non-negative, got {r}")
    if r >= c:
        raise DataError(f"r = {r} must be smaller than the class count c = {c}")
    flat = gt.flat_labels()
    rng = np.random.default_rng(seed)
    entries = []
    for pix in np.asarray(train_indices, dtype=np.int64):
        true = int(flat[pix])
        if true < 1:
            raise DataError(f"training pixel {int(pix)} is unlabeled")
        others = [lab for lab in range(1, c + 1) if lab != true]
        false = rng.choice(len(others), size=r, replace=False) if r else np.empty(0, np.int64)
        cand = sorted([true] + [others[int(j)] for j in false])
        entries.append(CandidateEntry(int(pix), true, tuple(cand)))
    return PartialLabeledSet(entries=tuple(entries), r=r, num_classes=c)


def save_candidates(pset: PartialLabeledSet, path: str) -> None:
    """Export one line per training pixel: linear_index,true_label,cand1;cand2;..."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in pset.entries:
            cands = ";".join(str(lab) for lab in e.candidates)
            fh.write(f"{e.pixel_index},{e.true_label},{cands}\n")


def load_candidates(path: str, num_classes: int) -> PartialLabeledSet:
    if not os.path.isfile(path):
        raise DataError(f"file not found: {path}")
    entries = []
    r = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise DataError(f"{path}:{lineno}: expected index,true,candidates")
            cand = tuple(int(tok) for tok in parts[2].split(";"))
            entries.append(CandidateEntry(int(parts[0]), int(parts[1]), cand))
            if r is None:
                r = len(cand) - 1
            elif len(cand) - 1 != r:
                raise DataError(f"{path}:{lineno}: inconsistent candidate set size")
    if not entries:
        raise DataError(f"{path}: no candidate entries")
    return PartialLabeledSet(entries=tuple(entries), r=r, num_classes=num_classes)


def generate_synthetic_scene(height: int, width: int, bands: int, classes: int,
                             noise_sigma: float, seed: int):
    """Desk-scale test scene: rectangular single-class regions plus Gaussian noise.

    The grid is floor(sqrt(classes)) rows of ceil(classes / rows) cells; spare
    trailing cells in the last row are absorbed by the last class, which keeps
    every region rectangular. Class spectra are distinct uniform random
    vectors; per-pixel noise has standard deviation ``noise_sigma``.
    """
    if height < 1 or width < 1 or bands < 1 or classes < 1:
        raise DataError("scene dimensions must be positive")
    if classes > height * width:
        raise DataError(f"cannot place {classes} classes on {height}x{width} pixels")
    if noise_sigma < 0:
        raise DataError("noise_sigma must be non-negative")

    grid_rows = min(int(np.floor(np.sqrt(classes))), height)
    grid_cols = int(np.ceil(classes / grid_rows))
    if grid_cols > width:
        raise DataError(f"cannot fit {classes} rectangular regions on {height}x{width}")

    row_edges = np.round(np.linspace(0, height, grid_rows + 1)).astype(int)
    col_edges = np.round(np.linspace(0, width, grid_cols + 1)).astype(int)
    labels = np.zeros((height, width), dtype=np.int64)
    for cell in range(grid_rows * grid_cols):
        gr, gc = divmod(cell, grid_cols)
        k = min(cell + 1, classes)
        labels[row_edges[gr]:row_edges[gr + 1], col_edges[gc]:col_edges[gc + 1]] = k
    present = np.unique(labels)
    if present.size != classes or labels.min() < 1:
        raise DataError(f"degenerate dimensions: {classes} classes do not fit {height}x{width}")

    rng = np.random.default_rng(seed)
    spectra = rng.uniform(0.0, 1.0, size=(classes, bands))
    data = spectra[labels.reshape(-1) - 1].T.reshape(bands, height, width)
    if noise_sigma > 0:
        data = data + rng.normal(0.0, noise_sigma, size=data.shape)
    cube = HsiCube(height=height, width=width, bands=bands,
                   data=data.astype(CUBE_DTYPE))
    return cube, GroundTruth(height=height, width=width, labels=labels)
