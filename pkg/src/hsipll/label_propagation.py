"""Training-pixel affinity assembly, confidence propagation, disambiguation.

The affinity between two training pixels is their coefficient in the shared
superpixel's solution (zero across superpixels), column-normalized to unit
l2 and symmetrized. Labeling confidence starts uniform over each candidate
set and is propagated as a convex combination of the initial matrix and the
graph-smoothed previous round, rescaled back onto the candidate-restricted
simplex after every round. Disambiguation is the candidate-restricted argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .hsi_data import PartialLabeledSet

DEFAULT_ALPHA = 0.96
DEFAULT_PROP_TOL = 1e-6
DEFAULT_PROP_ROUNDS = 100


@dataclass(frozen=True)
class TrainingAffinity:
    """Z_tr (block-sparse by superpixel, unit-norm columns) and its symmetrization."""

    Z_tr: np.ndarray
    G_tr: np.ndarray

    def __post_init__(self):
        self.Z_tr.setflags(write=False)
        self.G_tr.setflags(write=False)


def training_index(pixel_indices: np.ndarray, pixel_map: np.ndarray) -> np.ndarray:
    """Map linear pixel indices to (superpixel index, local column) pairs."""
    pixel_indices = np.asarray(pixel_indices, dtype=np.int64)
    if pixel_indices.size and (pixel_indices.min() < 0 or pixel_indices.max() >= len(pixel_map)):
        raise DataError("training pixel index outside the image")
    return pixel_map[pixel_indices]


def assemble_affinity(solutions, index: np.ndarray) -> TrainingAffinity:
    """Build the p x p training affinity from the per-superpixel coefficients."""
    index = np.asarray(index, dtype=np.int64)
    p = index.shape[0]
    Z_tr = np.zeros((p, p))
    for sp in np.unique(index[:, 0]):
        if not 0 <= sp < len(solutions):
            raise DataError(f"superpixel index {sp} out of range")
        members = np.flatnonzero(index[:, 0] == sp)
        local = index[members, 1]
        Z_sp = solutions[sp].Z
        if local.size and local.max() >= Z_sp.shape[0]:
            raise DataError(f"local column {local.max()} out of range for superpixel {sp}")
        Z_tr[np.ix_(members, members)] = Z_sp[np.ix_(local, local)]
    norms = np.linalg.norm(Z_tr, axis=0)
    nonzero = norms > 0
    Z_tr[:, nonzero] /= norms[nonzero]
    G_tr = (Z_tr + Z_tr.T) / 2.0
    return TrainingAffinity(Z_tr=Z_tr, G_tr=G_tr)


def init_confidence(pset: PartialLabeledSet) -> np.ndarray:
    """Uniform confidence over each candidate set: Q0[i, b] = 1/|C_i| on C_i."""
    Q = np.zeros((pset.p, pset.num_classes))
    for i, entry in enumerate(pset.entries):
        if not entry.candidates:
            raise DataError(f"entry {i} has an empty candidate set")
        Q[i, np.asarray(entry.candidates) - 1] = 1.0 / len(entry.candidates)
    return Q


def propagate(Q0: np.ndarray, G_tr: np.ndarray, alpha: float = DEFAULT_ALPHA,
              max_rounds: int = DEFAULT_PROP_ROUNDS,
              tol: float = DEFAULT_PROP_TOL) -> np.ndarray:
    """Iterate Q~ = (1-alpha) Q0 + alpha G_tr Q, rescaling onto the candidate simplex.

    The candidate support is read off Q0 (positive entries). Rows whose
    candidate mass vanishes after a round revert to their initial uniform row,
    which keeps the simplex invariant without inventing information. Stops
    when the entrywise change drops below tol or after max_rounds.
    """
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must be in (0, 1), got {alpha}")
    Q0 = np.asarray(Q0, dtype=np.float64)
    support = Q0 > 0
    Q = Q0.copy()
    for _ in range(max_rounds):
        raw = (1.0 - alpha) * Q0 + alpha * (G_tr @ Q)
        raw = np.where(support, raw, 0.0)
        sums = raw.sum(axis=1)
        ok = sums > 0
        new = np.empty_like(raw)
        new[ok] = raw[ok] / sums[ok, None]
        new[~ok] = Q0[~ok]
        delta = np.abs(new - Q).max(initial=0.0)
        Q = new
        if delta < tol:
            break
    return Q


def disambiguate(Q: np.ndarray, pset: PartialLabeledSet) -> np.ndarray:
    """Candidate-restricted argmax per row; ties resolve to the smallest label."""
    Q = np.asarray(Q)
    resolved = np.empty(pset.p, dtype=np.int64)
    for i, entry in enumerate(pset.entries):
        cand = np.asarray(entry.candidates)  # sorted, so argmax ties pick the smallest
        resolved[i] = cand[int(np.argmax(Q[i, cand - 1]))]
    return resolved


def disambiguation_accuracy(resolved: np.ndarray, pset: PartialLabeledSet) -> float:
    """Fraction of training pixels whose resolved label equals the hidden truth."""
    return float(np.mean(np.asarray(resolved) == pset.true_labels()))


def save_resolved(pset: PartialLabeledSet, resolved: np.ndarray, path: str) -> None:
    """Candidate-set export format plus a fourth field with the resolved label."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry, lab in zip(pset.entries, resolved):
            cands = ";".join(str(v) for v in entry.candidates)
            fh.write(f"{entry.pixel_index},{entry.true_label},{cands},{int(lab)}\n")


def load_resolved(path: str):
    """Read back the resolved-label export: (pixel indices, resolved labels)."""
    import os

    if not os.path.isfile(path):
        raise DataError(f"file not found: {path}")
    pixels, labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields")
            pixels.append(int(parts[0]))
            labels.append(int(parts[3]))
    return np.asarray(pixels, dtype=np.int64), np.asarray(labels, dtype=np.int64)
