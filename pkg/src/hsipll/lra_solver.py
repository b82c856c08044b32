"""Laplacian-regularized non-negative low-rank approximation per superpixel.

Solves, for one superpixel matrix X (pixels as columns),

    min_{Z,E}  ||Z||_* + lam * ||E||_{2,1} + gamma * Tr(X Z G (X Z)^T)
    s.t.       X = X Z + E,  Z >= 0,

by an inexact augmented Lagrangian with auxiliary splits W = Z (nuclear norm)
and J = Z (trace regularizer). Each sweep updates W by singular value
thresholding, Z by an SPD linear solve with non-negative clipping, E by the
l2,1 column-shrinkage proximal step, J through the linear system

    2*gamma * X^T X * J + mu * J * G^+ = mu * (Z + Gamma2/mu) * G^+

solved spectrally (both coefficient matrices are symmetric PSD), and finally
the multipliers and the penalty mu. Iteration stops once all three constraint
residuals fall below eps in the entrywise max norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._blas import single_threaded_blas
from .errors import NumericalError
from .graph_prior import LaplacianPrior
from .superpixel import SuperpixelBlock

SYLVESTER_DENOM_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Solver weights and the augmented-Lagrangian schedule constants."""

    lam: float = 1.0
    gamma: float = 0.0
    mu0: float = 1e-4
    mu_max: float = 1e12
    rho: float = 1.1
    eps: float = 1e-3
    max_iters: int = 200
    truncated_svd: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.mu0 <= 0 or self.rho <= 1 or self.eps <= 0 or self.max_iters < 1:
            raise ValueError("invalid solver schedule constants")


@dataclass
class LraState:
    """Mutable per-solve state; owned by a single solve call."""

    W: np.ndarray
    Z: np.ndarray
    J: np.ndarray
    E: np.ndarray
    Gamma1: np.ndarray
    Gamma2: np.ndarray
    Gamma3: np.ndarray
    mu: float
    iteration: int = 0


@dataclass(frozen=True)
class LraSolution:
    """Coefficients Z, noise E, denoised columns X @ Z, and the residual history."""

    Z: np.ndarray
    E: np.ndarray
    denoised: np.ndarray
    converged: bool
    iterations: int
    history: np.ndarray = field(repr=False)  # rows of (res1, res2, res3, mu)

    @property
    def residual_trace(self) -> np.ndarray:
        """Per-iteration max of the three constraint residuals."""
        return self.history[:, :3].max(axis=1)


def svt(P: np.ndarray, tau: float, truncated: bool = False) -> np.ndarray:
    """Singular value thresholding: soft-threshold the singular values by tau.

    Minimizes ||W||_* + 1/(2*tau) * ||P - W||_F^2. The Frobenius norm bounds
    the largest singular value, so the decomposition is skipped outright while
    the threshold still dominates (most early iterations of a solve). The
    truncated path tries an iterative partial SVD sized by the expected
    surviving rank, falling back to the full decomposition when the estimate
    is too small.
    """
    P = np.asarray(P, dtype=np.float64)
    if np.linalg.norm(P) <= tau:
        return np.zeros_like(P)
    if truncated and min(P.shape) > 20:
        out = _svt_truncated(P, tau)
        if out is not None:
            return out
    U, s, Vt = np.linalg.svd(P, full_matrices=False)
    keep = s > tau
    if not keep.any():
        return np.zeros_like(P)
    return (U[:, keep] * (s[keep] - tau)) @ Vt[keep, :]


def _svt_truncated(P: np.ndarray, tau: float, start_rank: int = 10):
    import scipy.sparse.linalg

    n = min(P.shape)
    k = min(start_rank, n - 1)
    while k < n:
        try:
            U, s, Vt = scipy.sparse.linalg.svds(P, k=k)
        except Exception:
            return None
        if s.min() <= tau:  # all surviving singular values were captured
            keep = s > tau
            if not keep.any():
                return np.zeros_like(P)
            return (U[:, keep] * (s[keep] - tau)) @ Vt[keep, :]
        k = min(2 * k, n - 1) if k < n - 1 else n
    return None


def prox_l21(D: np.ndarray, tau: float) -> np.ndarray:
    """Column-wise l2 shrinkage: scale each column by (||d|| - tau)+ / ||d||."""
    D = np.asarray(D, dtype=np.float64)
    norms = np.linalg.norm(D, axis=0)
    scale = np.zeros_like(norms)
    hit = norms > tau
    scale[hit] = (norms[hit] - tau) / norms[hit]
    return D * scale


def make_ridge_solver(X: np.ndarray):
    """Return a callable R -> (X^T X + 2I)^{-1} R.

    Applies the Woodbury identity through a (d, d) factorization when the
    block is wider than tall (the usual case, d spectral bands vs n pixels),
    otherwise factors the (n, n) system directly.
    """
    d, n = X.shape
    if d < n:
        inner = scipy.linalg.cho_factor(2.0 * np.eye(d) + X @ X.T)

        def apply(R):
            return (R - X.T @ scipy.linalg.cho_solve(inner, X @ R)) / 2.0
    else:
        outer = scipy.linalg.cho_factor(X.T @ X + 2.0 * np.eye(n))

        def apply(R):
            return scipy.linalg.cho_solve(outer, R)

    return apply


def update_z(X, E, J, W, Gamma1, Gamma2, Gamma3, mu, ridge_solve=None) -> np.ndarray:
    """Clipped solution of the Z subproblem: (X^T X + 2I) Z_hat = rhs, Z = max(Z_hat, 0)."""
    rhs = X.T @ X - X.T @ E + (X.T @ Gamma1) / mu + J - Gamma2 / mu + W - Gamma3 / mu
    if ridge_solve is None:
        ridge_solve = make_ridge_solver(X)
    return np.maximum(ridge_solve(rhs), 0.0)


def update_j(X, Z, Gamma2, mu, gamma, G_pinv, eig_a=None, eig_b=None) -> np.ndarray:
    """Solve 2*gamma*X^T X*J + mu*J*G^+ = mu*(Z + Gamma2/mu)*G^+ spectrally.

    With A = Ua diag(la) Ua^T and G^+ = Ub diag(lb) Ub^T the transformed
    unknown is entrywise C'[k,l] / (la[k] + mu*lb[l]); denominators below
    1e-12 * (max la + mu * max lb) take the minimum-norm value 0.
    """
    if eig_a is None:
        eig_a = np.linalg.eigh(2.0 * gamma * (X.T @ X))
    if eig_b is None:
        eig_b = np.linalg.eigh(np.asarray(G_pinv, dtype=np.float64))
    la, Ua = eig_a
    lb, Ub = eig_b
    # Right-multiplication by G^+ reduces to scaling by lb in the Ub basis.
    C = (Ua.T @ (mu * Z + Gamma2) @ Ub) * lb[None, :]
    denom = la[:, None] + mu * lb[None, :]
    tol = SYLVESTER_DENOM_TOL * (np.abs(la).max(initial=0.0) + mu * np.abs(lb).max(initial=0.0))
    # tol == 0 means both spectra vanish, so every denominator is zero too.
    safe = np.abs(denom) >= max(tol, np.finfo(np.float64).tiny)
    Jp = np.where(safe, C / np.where(safe, denom, 1.0), 0.0)
    return Ua @ Jp @ Ub.T


def update_multipliers(state: LraState, X: np.ndarray, rho: float = 1.1,
                       mu_max: float = 1e12) -> LraState:
    """Ascend the three multipliers on the constraint residuals and grow mu."""
    mu = state.mu
    state.Gamma1 = state.Gamma1 + mu * (X - X @ state.Z - state.E)
    state.Gamma2 = state.Gamma2 + mu * (state.Z - state.J)
    state.Gamma3 = state.Gamma3 + mu * (state.Z - state.W)
    state.mu = min(mu_max, rho * mu)
    return state


def solve(block: SuperpixelBlock, prior: LaplacianPrior, cfg: SolverConfig) -> LraSolution:
    """Run the full alternating scheme on one superpixel.

    Non-convergence within cfg.max_iters is not an error; the solution is
    returned with converged=False and the full residual history.
    """
    with single_threaded_blas():
        return _solve(block, prior, cfg)


def _solve(block: SuperpixelBlock, prior: LaplacianPrior, cfg: SolverConfig) -> LraSolution:
    X = block.matrix.astype(np.float64)
    d, n = X.shape
    if prior.G_pinv.shape != (n, n):
        raise ValueError(f"prior shape {prior.G_pinv.shape} does not match block size {n}")

    xtx = X.T @ X
    ridge_solve = make_ridge_solver(X)
    eig_a = np.linalg.eigh(2.0 * cfg.gamma * xtx)
    eig_b = np.linalg.eigh(prior.G_pinv)

    state = LraState(
        W=np.zeros((n, n)), Z=np.zeros((n, n)), J=np.zeros((n, n)),
        E=np.zeros((d, n)),
        Gamma1=np.zeros((d, n)), Gamma2=np.zeros((n, n)), Gamma3=np.zeros((n, n)),
        mu=cfg.mu0,
    )

    history = []
    converged = False
    for it in range(1, cfg.max_iters + 1):
        state.iteration = it
        mu = state.mu
        state.W = svt(state.Z + state.Gamma3 / mu, 1.0 / mu, truncated=cfg.truncated_svd)
        state.Z = update_z(X, state.E, state.J, state.W,
                           state.Gamma1, state.Gamma2, state.Gamma3, mu,
                           ridge_solve=ridge_solve)
        xz = X @ state.Z
        state.E = prox_l21(X - xz + state.Gamma1 / mu, cfg.lam / mu)
        state.J = update_j(X, state.Z, state.Gamma2, mu, cfg.gamma, prior.G_pinv,
                           eig_a=eig_a, eig_b=eig_b)

        res1 = np.abs(X - xz - state.E).max(initial=0.0)
        res2 = np.abs(state.Z - state.J).max(initial=0.0)
        res3 = np.abs(state.Z - state.W).max(initial=0.0)
        history.append((res1, res2, res3, mu))
        update_multipliers(state, X, rho=cfg.rho, mu_max=cfg.mu_max)
        if max(res1, res2, res3) <= cfg.eps:
            converged = True
            break

    Z, E = state.Z, state.E
    denoised = X @ Z
    if not (np.isfinite(Z).all() and np.isfinite(E).all() and np.isfinite(denoised).all()):
        raise NumericalError(f"non-finite solver output for superpixel {block.index}")
    return LraSolution(Z=Z, E=E, denoised=denoised, converged=converged,
                       iterations=state.iteration,
                       history=np.asarray(history, dtype=np.float64))


def dump_residuals(solution: LraSolution, path: str) -> None:
    """Write the per-iteration residuals as CSV: iter,res1,res2,res3,mu."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,res1,res2,res3,mu\n")
        for i, (r1, r2, r3, mu) in enumerate(solution.history, start=1):
            fh.write(f"{i},{r1!r},{r2!r},{r3!r},{mu!r}\n")
