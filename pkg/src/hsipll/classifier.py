"""Kernel classifier over the denoised representation.

Features are the columns of each superpixel's denoised matrix, reassembled
into global row-major pixel order and min-max normalized per band (fit on the
training rows, applied everywhere). The classifier is a one-vs-one RBF SVM
whose binary subproblems are solved by SMO with maximal-violating-pair
selection; prediction is majority vote with ties broken toward the smallest
label. A 1-nearest-neighbor model implements the same train/predict contract
as a debugging fallback.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._blas import single_threaded_blas
from .errors import DataError

DEFAULT_C = 100.0
DEFAULT_KKT_TOL = 1e-3
MODEL_MAGIC = b"HSIPLL-SVM v1\n"
NN_MODEL_MAGIC = b"HSIPLL-NN1 v1\n"


@dataclass(frozen=True)
class FeatureTable:
    """Row-per-pixel feature matrix plus the pixel index each row describes."""

    values: np.ndarray
    pixel_map: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise DataError("feature table contains non-finite values")
        if len(np.unique(self.pixel_map)) != len(self.pixel_map):
            raise DataError("feature table pixel map is not injective")
        self.values.setflags(write=False)
        self.pixel_map.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def restrict(self, pixel_indices: np.ndarray) -> "FeatureTable":
        """Rows for the given pixel indices, in the given order."""
        lookup = {int(p): i for i, p in enumerate(self.pixel_map)}
        try:
            rows = np.array([lookup[int(p)] for p in pixel_indices], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"pixel {exc} missing from feature table") from exc
        return FeatureTable(values=self.values[rows].copy(),
                            pixel_map=np.asarray(pixel_indices, dtype=np.int64).copy())


def reassemble_denoised(solutions, blocks, height: int, width: int) -> FeatureTable:
    """Scatter every denoised column back to its pixel, row-major order."""
    if len(solutions) != len(blocks):
        raise DataError(f"{len(blocks)} blocks but {len(solutions)} solutions")
    n = height * width
    dim = blocks[0].matrix.shape[0] if blocks else 0
    values = np.full((n, dim), np.nan)
    for block, sol in zip(blocks, solutions):
        if sol is None:
            raise DataError(f"missing solution for superpixel {block.index}")
        linear = block.coords[:, 0] * width + block.coords[:, 1]
        values[linear] = sol.denoised.T
    if np.isnan(values).any():
        raise DataError("denoised reassembly left uncovered pixels")
    return FeatureTable(values=values, pixel_map=np.arange(n, dtype=np.int64))


def rbf_kernel(x: np.ndarray, y: np.ndarray, sigma_k: float) -> float:
    """Gaussian similarity exp(-||x - y||^2 / (2 sigma_k^2)), in (0, 1]."""
    if sigma_k <= 0:
        raise DataError(f"sigma_k must be positive, got {sigma_k}")
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-(diff @ diff) / (2.0 * sigma_k * sigma_k)))


def _kernel_matrix(A: np.ndarray, B: np.ndarray, sigma_k: float) -> np.ndarray:
    sq_a = (A * A).sum(axis=1)[:, None]
    sq_b = (B * B).sum(axis=1)[None, :]
    d2 = np.maximum(sq_a + sq_b - 2.0 * (A @ B.T), 0.0)
    return np.exp(-d2 / (2.0 * sigma_k * sigma_k))


def median_pairwise_distance(X: np.ndarray) -> float:
    """Median of the distinct-pair distances; the default kernel bandwidth."""
    n = X.shape[0]
    sq = (X * X).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    med = float(np.median(np.sqrt(d2[np.triu_indices(n, k=1)]))) if n > 1 else 0.0
    return med if med > 0 else 1.0


@dataclass(frozen=True)
class _PairModel:
    class_a: int  # mapped to decision value +1
    class_b: int  # mapped to decision value -1
    sv_rows: np.ndarray  # indices into the model's stored vectors
    coef: np.ndarray  # alpha_i * y_i per support vector
    bias: float


@dataclass(frozen=True)
class SvmModel:
    classes: np.ndarray
    band_min: np.ndarray
    band_range: np.ndarray
    sigma_k: float
    C: float
    vectors: np.ndarray  # scaled support-vector superset, one row per stored vector
    pairs: tuple[_PairModel, ...]


def _smo_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_steps: int):
    """Maximal-violating-pair SMO on the dual; returns (alpha, bias).

    Minimizes 0.5 a^T Q a - 1^T a with Q = yy^T * K subject to 0 <= a <= C and
    y^T a = 0, stopping when the maximal KKT violation drops below tol.
    """
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0
    Qy = y[:, None] * y[None, :] * K
    for _ in range(max_steps):
        viol = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(viol[up])])
        j = int(np.flatnonzero(low)[np.argmin(viol[low])])
        if viol[i] - viol[j] <= tol:
            break
        eta = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        step = (viol[i] - viol[j]) / eta
        head = C - alpha[i] if y[i] > 0 else alpha[i]
        tail = alpha[j] if y[j] > 0 else C - alpha[j]
        step = min(step, head, tail)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        grad += step * (Qy[:, i] * y[i] - Qy[:, j] * y[j])
    viol = -y * grad
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
    hi = viol[up].max() if up.any() else 0.0
    lo = viol[low].min() if low.any() else 0.0
    return alpha, (hi + lo) / 2.0


def train(features: FeatureTable, labels: np.ndarray, C: float = DEFAULT_C,
          sigma_mode="median", kkt_tol: float = DEFAULT_KKT_TOL) -> SvmModel:
    """Fit one-vs-one RBF SVMs on the (train-row) feature table.

    ``sigma_mode`` is either "median" (median pairwise training distance) or a
    positive number used directly as the kernel bandwidth.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != features.values.shape[0]:
        raise DataError("label count does not match feature rows")
    classes = np.unique(labels)
    if classes.size < 2:
        raise DataError(f"need at least 2 classes to train, got {classes.size}")

    band_min = features.values.min(axis=0)
    band_range = features.values.max(axis=0) - band_min
    band_range = np.where(band_range > 0, band_range, 1.0)
    X = (features.values - band_min) / band_range

    if sigma_mode == "median":
        sigma_k = median_pairwise_distance(X)
    else:
        sigma_k = float(sigma_mode)
        if sigma_k <= 0:
            raise DataError(f"kernel bandwidth must be positive, got {sigma_k}")

    with single_threaded_blas():
        K = _kernel_matrix(X, X, sigma_k)
        pairs = []
        sv_mask = np.zeros(X.shape[0], dtype=bool)
        raw_pairs = []
        for ai in range(classes.size):
            for bi in range(ai + 1, classes.size):
                a, b = int(classes[ai]), int(classes[bi])
                rows = np.flatnonzero((labels == a) | (labels == b))
                y = np.where(labels[rows] == a, 1.0, -1.0)
                max_steps = max(200 * rows.size, 2000)
                alpha, bias = _smo_binary(K[np.ix_(rows, rows)], y, C, kkt_tol, max_steps)
                sv_local = np.flatnonzero(alpha > 0)
                raw_pairs.append((a, b, rows[sv_local], alpha[sv_local] * y[sv_local], bias))
                sv_mask[rows[sv_local]] = True

    stored = np.flatnonzero(sv_mask)
    position = np.full(X.shape[0], -1, dtype=np.int64)
    position[stored] = np.arange(stored.size)
    for a, b, sv_global, coef, bias in raw_pairs:
        pairs.append(_PairModel(class_a=a, class_b=b, sv_rows=position[sv_global],
                                coef=coef, bias=float(bias)))
    return SvmModel(classes=classes, band_min=band_min, band_range=band_range,
                    sigma_k=sigma_k, C=C, vectors=X[stored].copy(), pairs=tuple(pairs))


def predict(model: SvmModel, features: FeatureTable, chunk: int = 2048) -> np.ndarray:
    """One-vs-one voting over all feature rows; returns labels in model.classes."""
    if features.dim != model.band_min.shape[0]:
        raise DataError(f"feature dim {features.dim} does not match model "
                        f"dim {model.band_min.shape[0]}")
    X = (features.values - model.band_min) / model.band_range
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    with single_threaded_blas():
        for start in range(0, n, chunk):
            rows = X[start:start + chunk]
            Kc = _kernel_matrix(rows, model.vectors, model.sigma_k)
            votes = np.zeros((rows.shape[0], model.classes.size), dtype=np.int64)
            class_pos = {int(c): i for i, c in enumerate(model.classes)}
            for pair in model.pairs:
                dec = Kc[:, pair.sv_rows] @ pair.coef + pair.bias
                votes[:, class_pos[pair.class_a]] += dec >= 0
                votes[:, class_pos[pair.class_b]] += dec < 0
            out[start:start + chunk] = model.classes[np.argmax(votes, axis=1)]
    return out


def train_nn(features: FeatureTable, labels: np.ndarray) -> "NnModel":
    """1-nearest-neighbor fallback honoring the same scaling contract."""
    labels = np.asarray(labels, dtype=np.int64)
    band_min = features.values.min(axis=0)
    band_range = features.values.max(axis=0) - band_min
    band_range = np.where(band_range > 0, band_range, 1.0)
    X = (features.values - band_min) / band_range
    return NnModel(band_min=band_min, band_range=band_range,
                   vectors=X.copy(), labels=labels.copy())


@dataclass(frozen=True)
class NnModel:
    band_min: np.ndarray
    band_range: np.ndarray
    vectors: np.ndarray
    labels: np.ndarray


def predict_nn(model: NnModel, features: FeatureTable, chunk: int = 2048) -> np.ndarray:
    X = (features.values - model.band_min) / model.band_range
    out = np.empty(X.shape[0], dtype=np.int64)
    sq_sv = (model.vectors * model.vectors).sum(axis=1)
    for start in range(0, X.shape[0], chunk):
        rows = X[start:start + chunk]
        d2 = sq_sv[None, :] - 2.0 * (rows @ model.vectors.T)
        out[start:start + chunk] = model.labels[np.argmin(d2, axis=1)]
    return out


def _write_array(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<q", arr.size))
    fh.write(arr.tobytes())


def _read_array(fh, shape=None) -> np.ndarray:
    (size,) = struct.unpack("<q", fh.read(8))
    arr = np.frombuffer(fh.read(size * 8), dtype="<f8").copy()
    return arr.reshape(shape) if shape is not None else arr


def save_model(model: SvmModel, path: str) -> None:
    """Flat binary layout: magic, counts, then little-endian float64 arrays."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<qqqq", model.classes.size, model.band_min.size,
                             model.vectors.shape[0], len(model.pairs)))
        fh.write(struct.pack("<dd", model.C, model.sigma_k))
        fh.write(np.ascontiguousarray(model.classes, dtype="<q").tobytes())
        _write_array(fh, model.band_min)
        _write_array(fh, model.band_range)
        _write_array(fh, model.vectors)
        for pair in model.pairs:
            fh.write(struct.pack("<qqq", pair.class_a, pair.class_b, pair.sv_rows.size))
            fh.write(np.ascontiguousarray(pair.sv_rows, dtype="<q").tobytes())
            _write_array(fh, pair.coef)
            fh.write(struct.pack("<d", pair.bias))


def load_model(path: str) -> SvmModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise DataError(f"{path}: not a model file (bad header {magic!r})")
        n_classes, dim, n_vecs, n_pairs = struct.unpack("<qqqq", fh.read(32))
        C, sigma_k = struct.unpack("<dd", fh.read(16))
        classes = np.frombuffer(fh.read(n_classes * 8), dtype="<q").copy()
        band_min = _read_array(fh)
        band_range = _read_array(fh)
        vectors = _read_array(fh, shape=(n_vecs, dim))
        pairs = []
        for _ in range(n_pairs):
            a, b, n_sv = struct.unpack("<qqq", fh.read(24))
            sv_rows = np.frombuffer(fh.read(n_sv * 8), dtype="<q").copy()
            coef = _read_array(fh)
            (bias,) = struct.unpack("<d", fh.read(8))
            pairs.append(_PairModel(class_a=a, class_b=b, sv_rows=sv_rows,
                                    coef=coef, bias=bias))
    return SvmModel(classes=classes, band_min=band_min, band_range=band_range,
                    sigma_k=sigma_k, C=C, vectors=vectors, pairs=tuple(pairs))
