"""Per-superpixel graph Laplacian prior and its Moore-Penrose pseudoinverse.

The graph connects each pixel to its k nearest spectral neighbors inside the
superpixel, with Gaussian weights exp(-d^2 / (2 sigma^2)) symmetrized by max.
sigma is the mean nearest-neighbor distance, which removes the free bandwidth
parameter. The Laplacian G = D - W is symmetric PSD with zero row sums; its
pseudoinverse feeds the trace regularizer's linear-system update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .superpixel import SuperpixelBlock

DEFAULT_K_NEIGHBORS = 10
RANK_REL_TOL = 1e-10


@dataclass(frozen=True)
class LaplacianPrior:
    G: np.ndarray
    G_pinv: np.ndarray

    def __post_init__(self):
        self.G.setflags(write=False)
        self.G_pinv.setflags(write=False)


def pseudoinverse(M: np.ndarray, rel_tol: float = RANK_REL_TOL) -> np.ndarray:
    """Pseudoinverse of a symmetric matrix via eigendecomposition.

    Eigenvalues with |lambda| <= rel_tol * max|lambda| are treated as zero,
    which a Laplacian always needs (>= 1 exact zero eigenvalue).
    """
    M = np.asarray(M, dtype=np.float64)
    asym = np.linalg.norm(M - M.T)
    if asym > 1e-10 * max(np.linalg.norm(M), 1e-300):
        raise ValueError(f"pseudoinverse requires a symmetric matrix (asymmetry {asym:.3e})")
    eigvals, eigvecs = np.linalg.eigh((M + M.T) / 2.0)
    cutoff = rel_tol * np.abs(eigvals).max(initial=0.0)
    inv = np.where(np.abs(eigvals) > cutoff, 1.0, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(inv > 0, 1.0 / np.where(eigvals != 0, eigvals, 1.0), 0.0)
    out = (eigvecs * inv) @ eigvecs.T
    return (out + out.T) / 2.0


def build_laplacian(block: SuperpixelBlock, k_neighbors: int = DEFAULT_K_NEIGHBORS,
                    sigma_mode: str = "mean_nn") -> LaplacianPrior:
    """Build the kNN Gaussian-weight Laplacian prior for one superpixel."""
    if sigma_mode != "mean_nn":
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}")
    n = block.n_pixels
    if n == 1:
        zero = np.zeros((1, 1))
        return LaplacianPrior(G=zero, G_pinv=zero.copy())

    X = block.matrix.astype(np.float64)
    sq = (X * X).sum(axis=0)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X.T @ X)
    np.maximum(d2, 0.0, out=d2)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, np.inf)

    k = min(k_neighbors, n - 1)
    nn_order = np.argsort(dist, axis=1, kind="stable")
    sigma = float(np.mean(dist[np.arange(n), nn_order[:, 0]]))
    if sigma <= 0.0:
        sigma = 1.0  # duplicate-point block: all relevant distances are zero

    W = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k)
    cols = nn_order[:, :k].reshape(-1)
    W[rows, cols] = np.exp(-dist[rows, cols] ** 2 / (2.0 * sigma * sigma))
    W = np.maximum(W, W.T)
    G = np.diag(W.sum(axis=1)) - W
    return LaplacianPrior(G=G, G_pinv=pseudoinverse(G))
