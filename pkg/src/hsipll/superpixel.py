"""Superpixel segmentation and per-superpixel pixel grouping.

Segmentation is a SLIC-style local k-means over (feature, row, col) with
seeds on a regular grid, followed by connectivity enforcement that merges
orphan components into the largest adjacent superpixel. The default feature
is the first principal component of the spectra; the full spectrum can be
used instead via ``segment_cube``.

The algorithm is deterministic: the ``seed`` parameter is accepted for
interface uniformity but never consumed, so identical inputs always produce
identical segmentations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .fileio import read_label_raster, write_label_raster
from .hsi_data import HsiCube

SLIC_ITERATIONS = 10
DEFAULT_COMPACTNESS = 0.1


@dataclass(frozen=True)
class Segmentation:
    """Label raster with values 0..n_superpixels-1, each region 4-connected."""

    labels: np.ndarray
    n_superpixels: int

    def __post_init__(self):
        self.labels.setflags(write=False)


@dataclass(frozen=True)
class SuperpixelBlock:
    """Pixels of one superpixel as columns of a (bands, n) matrix.

    ``coords`` lists (row, col) per column in row-major scan order, which
    defines the canonical local column index of each pixel.
    """

    index: int
    matrix: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)
        self.coords.setflags(write=False)

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[1]


def spectral_pc1(cube: HsiCube) -> np.ndarray:
    """Scores of the first principal component, shape (height, width).

    The leading eigenvector's sign is fixed (largest-magnitude loading made
    positive) so results do not depend on the eigensolver's sign convention.
    """
    pixels = cube.pixel_matrix().T.astype(np.float64)  # (N, bands)
    centered = pixels - pixels.mean(axis=0)
    cov = centered.T @ centered / max(pixels.shape[0], 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    lead = eigvecs[:, -1]
    pivot = int(np.argmax(np.abs(lead)))
    if lead[pivot] < 0:
        lead = -lead
    return (centered @ lead).reshape(cube.height, cube.width)


def compute_base_image(cube: HsiCube) -> np.ndarray:
    """First-PC intensity raster min-max normalized to [0, 1].

    A zero-variance cube has no principal direction; the documented fallback
    is a uniform 0.5 raster.
    """
    scores = spectral_pc1(cube)
    lo, hi = float(scores.min()), float(scores.max())
    if hi - lo <= 0.0:
        return np.full((cube.height, cube.width), 0.5)
    return (scores - lo) / (hi - lo)


def segment(base: np.ndarray, k_target: int, compactness: float = DEFAULT_COMPACTNESS,
            seed: int = 0) -> Segmentation:
    """SLIC-style segmentation of an intensity raster into ~k_target regions."""
    base = np.asarray(base, dtype=np.float64)
    if base.ndim != 2:
        raise DataError(f"base raster must be 2-D, got shape {base.shape}")
    return _slic(base[:, :, None], k_target, compactness)


def segment_cube(cube: HsiCube, k_target: int,
                 compactness: float = DEFAULT_COMPACTNESS) -> Segmentation:
    """Full-spectrum variant: per-band min-max features scaled by 1/sqrt(bands)."""
    feats = cube.data.astype(np.float64)
    lo = feats.min(axis=(1, 2), keepdims=True)
    rng = feats.max(axis=(1, 2), keepdims=True) - lo
    rng[rng == 0] = 1.0
    feats = (feats - lo) / rng / np.sqrt(cube.bands)
    return _slic(np.moveaxis(feats, 0, 2), k_target, compactness)


def _slic(features: np.ndarray, k_target: int, compactness: float) -> Segmentation:
    height, width, _ = features.shape
    n_pixels = height * width
    if not 1 <= k_target <= n_pixels:
        raise DataError(f"k_target must be in 1..{n_pixels}, got {k_target}")

    interval = np.sqrt(n_pixels / k_target)
    ny = max(1, int(round(height / interval)))
    nx = max(1, int(round(width / interval)))
    step_r = height / ny
    step_c = width / nx

    # Cell centers in pixel-index coordinates (pixel r sits at coordinate r),
    # so a unit grid puts every seed exactly on its own pixel.
    seed_r = (np.arange(ny) + 0.5) * step_r - 0.5
    seed_c = (np.arange(nx) + 0.5) * step_c - 0.5
    centers_r = np.repeat(seed_r, nx)
    centers_c = np.tile(seed_c, ny)
    pix_r = np.clip(np.rint(centers_r).astype(int), 0, height - 1)
    pix_c = np.clip(np.rint(centers_c).astype(int), 0, width - 1)
    centers_f = features[pix_r, pix_c, :].copy()

    rows = np.arange(height, dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    m2 = compactness * compactness

    # Initial assignment: each pixel to its grid cell's seed, so every pixel
    # always holds a valid label even if a drifting center never reaches it.
    cell_r = np.minimum((np.arange(height) / step_r).astype(int), ny - 1)
    cell_c = np.minimum((np.arange(width) / step_c).astype(int), nx - 1)
    labels = (cell_r[:, None] * nx + cell_c[None, :]).astype(np.int64)

    half_r = int(np.ceil(step_r)) + 1
    half_c = int(np.ceil(step_c)) + 1
    for _ in range(SLIC_ITERATIONS):
        best = np.full((height, width), np.inf)
        new_labels = labels.copy()
        for k in range(ny * nx):
            r0 = max(int(centers_r[k]) - half_r, 0)
            r1 = min(int(centers_r[k]) + half_r + 1, height)
            c0 = max(int(centers_c[k]) - half_c, 0)
            c1 = min(int(centers_c[k]) + half_c + 1, width)
            if r0 >= r1 or c0 >= c1:
                continue
            df = ((features[r0:r1, c0:c1, :] - centers_f[k]) ** 2).sum(axis=2)
            dr = (rows[r0:r1, None] - centers_r[k]) / step_r
            dc = (cols[None, c0:c1] - centers_c[k]) / step_c
            dist = df + m2 * (dr * dr + dc * dc)
            win = dist < best[r0:r1, c0:c1]
            best[r0:r1, c0:c1][win] = dist[win]
            new_labels[r0:r1, c0:c1][win] = k
        labels = new_labels
        flat = labels.reshape(-1)
        counts = np.bincount(flat, minlength=ny * nx).astype(np.float64)
        nonempty = counts > 0
        sum_r = np.bincount(flat, weights=np.repeat(rows, width), minlength=ny * nx)
        sum_c = np.bincount(flat, weights=np.tile(cols, height), minlength=ny * nx)
        centers_r[nonempty] = sum_r[nonempty] / counts[nonempty]
        centers_c[nonempty] = sum_c[nonempty] / counts[nonempty]
        for f in range(features.shape[2]):
            sum_f = np.bincount(flat, weights=features[:, :, f].reshape(-1),
                                minlength=ny * nx)
            centers_f[nonempty, f] = sum_f[nonempty] / counts[nonempty]

    labels = _enforce_connectivity(labels)
    labels, k_final = _relabel_dense(labels)
    return Segmentation(labels=labels, n_superpixels=k_final)


def _connected_components(labels: np.ndarray):
    """4-connected components of equal-label regions, in row-major discovery order."""
    height, width = labels.shape
    comp = np.full((height, width), -1, dtype=np.int64)
    comps: list[np.ndarray] = []
    for start_r in range(height):
        for start_c in range(width):
            if comp[start_r, start_c] >= 0:
                continue
            cid = len(comps)
            lab = labels[start_r, start_c]
            stack = [(start_r, start_c)]
            comp[start_r, start_c] = cid
            member = [(start_r, start_c)]
            while stack:
                r, c = stack.pop()
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < height and 0 <= cc < width \
                            and comp[rr, cc] < 0 and labels[rr, cc] == lab:
                        comp[rr, cc] = cid
                        stack.append((rr, cc))
                        member.append((rr, cc))
            comps.append(np.asarray(member, dtype=np.int64))
    return comp, comps


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Merge every orphan component into the largest adjacent superpixel.

    For each label the largest component (first in scan order on ties) keeps
    the label; other components are relabeled to the adjacent superpixel with
    the most pixels. Each merge joins an adjacent region, so the pass count is
    bounded and the result has one component per surviving label.
    """
    labels = labels.copy()
    height, width = labels.shape
    while True:
        comp, comps = _connected_components(labels)
        keeper: dict[int, int] = {}
        for cid, member in enumerate(comps):
            lab = int(labels[member[0][0], member[0][1]])
            if lab not in keeper or len(comps[keeper[lab]]) < len(member):
                keeper[lab] = cid
        orphans = [cid for cid, member in enumerate(comps)
                   if keeper[int(labels[member[0][0], member[0][1]])] != cid]
        if not orphans:
            return labels
        sizes = np.bincount(labels.reshape(-1))
        for cid in orphans:
            member = comps[cid]
            own = int(labels[member[0][0], member[0][1]])
            neighbors: set[int] = set()
            for r, c in member:
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < height and 0 <= cc < width:
                        lab = int(labels[rr, cc])
                        if lab != own:
                            neighbors.add(lab)
            if not neighbors:
                continue
            target = max(neighbors, key=lambda lab: (sizes[lab] if lab < len(sizes) else 0, -lab))
            labels[member[:, 0], member[:, 1]] = target
            sizes = np.bincount(labels.reshape(-1))


def _relabel_dense(labels: np.ndarray):
    """Map surviving labels to 0..K-1 preserving ascending original order."""
    unique = np.unique(labels)
    mapping = np.zeros(int(unique.max()) + 1, dtype=np.int64)
    mapping[unique] = np.arange(unique.size)
    return mapping[labels], int(unique.size)


def group_pixels(cube: HsiCube, seg: Segmentation):
    """Split the cube into per-superpixel blocks plus the inverse pixel map.

    Returns (blocks, pixel_map) where pixel_map has shape (height*width, 2):
    column 0 the superpixel index, column 1 the local column index of the
    pixel inside that superpixel's matrix. Columns follow row-major scan
    order within each block.
    """
    if seg.labels.shape != (cube.height, cube.width):
        raise DataError(
            f"segmentation shape {seg.labels.shape} does not match cube "
            f"({cube.height}, {cube.width})"
        )
    flat_labels = seg.labels.reshape(-1)
    pixels = cube.pixel_matrix().astype(np.float64)
    n = cube.n_pixels
    order = np.argsort(flat_labels, kind="stable")  # stable keeps scan order per label
    pixel_map = np.empty((n, 2), dtype=np.int64)
    blocks: list[SuperpixelBlock] = []
    boundaries = np.flatnonzero(np.diff(flat_labels[order])) + 1
    for i, chunk in enumerate(np.split(order, boundaries)):
        coords = np.stack([chunk // cube.width, chunk % cube.width], axis=1)
        blocks.append(SuperpixelBlock(index=i, matrix=pixels[:, chunk], coords=coords))
        pixel_map[chunk, 0] = i
        pixel_map[chunk, 1] = np.arange(chunk.size)
    if len(blocks) != seg.n_superpixels:
        raise DataError(
            f"segmentation reports {seg.n_superpixels} superpixels but "
            f"{len(blocks)} are present"
        )
    return blocks, pixel_map


def save_segmentation(seg: Segmentation, path: str) -> None:
    write_label_raster(path, seg.labels)


def load_segmentation(path: str) -> Segmentation:
    labels = read_label_raster(path)
    if labels.min() < 0:
        raise DataError(f"{path}: negative superpixel label")
    k = int(labels.max()) + 1
    present = np.unique(labels)
    if present.size != k:
        raise DataError(f"{path}: superpixel labels are not dense 0..{k - 1}")
    return Segmentation(labels=labels, n_superpixels=k)
