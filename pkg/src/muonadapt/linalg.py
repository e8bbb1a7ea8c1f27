"""Dense matrix primitives: one-sided Jacobi SVD and spectral statistics.

All observation math runs in float64. Matrices are plain 2-D numpy arrays;
`as_matrix` validates shape and finiteness at the library boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when an operation receives an all-zero (or otherwise empty) matrix."""


class NumericalFailureError(RuntimeError):
    """Raised when an iterative routine fails to converge."""

    def __init__(self, message: str, shape: tuple[int, int]):
        super().__init__(f"{message} (shape {shape[0]}x{shape[1]})")
        self.shape = shape


def as_matrix(data) -> np.ndarray:
    """Validate external input as a finite 2-D float64 matrix."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


@dataclass(frozen=True)
class SpectralStats:
    """Singular-value statistics of one matrix under a truncation threshold."""

    sigma_max: float
    sigma_min_trunc: float
    kappa: float
    ell: float
    frobenius: float
    effective_rank: int
    spectral_entropy: float


_MAX_JACOBI_SWEEPS = 60
_JACOBI_TOL = 1e-14


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD: returns (U, S, V) with M = U @ diag(S) @ V.T, S descending.

    Backed by LAPACK; `jacobi_svd` is the independently coded reference used
    to cross-check it in the test suite.
    """
    m = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD failed: {exc}", m.shape) from exc
    return u, s, vt.T


def jacobi_svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi SVD: returns (U, S, V) with M = U @ diag(S) @ V.T.

    Column rotations are applied on the side with min(m, n) columns, so the
    Gram work stays on the smaller dimension. S is sorted descending; U and V
    have orthonormal columns (thin factorization, k = min(m, n)).
    """
    m = as_matrix(m)
    rows, cols = m.shape
    transposed = rows < cols
    w = m.T.copy() if transposed else m.copy()  # tall: R >= C
    n = w.shape[1]
    v = np.eye(n)

    scale = np.max(np.abs(w))
    if scale == 0.0:
        # all-zero matrix: S = 0, factors are canonical identities
        u = np.eye(w.shape[0], n)
        s = np.zeros(n)
        return (v, s, u) if transposed else (u, s, v)

    converged = False
    for _ in range(_MAX_JACOBI_SWEEPS):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                wi = w[:, i]
                wj = w[:, j]
                alpha = wi @ wi
                beta = wj @ wj
                gamma = wi @ wj
                denom = np.sqrt(alpha * beta)
                if denom == 0.0 or abs(gamma) <= _JACOBI_TOL * denom:
                    continue
                off = max(off, abs(gamma) / denom)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s_ = c * t
                gi = c * wi - s_ * wj
                gj = s_ * wi + c * wj
                w[:, i], w[:, j] = gi, gj
                vi = c * v[:, i] - s_ * v[:, j]
                vj = s_ * v[:, i] + c * v[:, j]
                v[:, i], v[:, j] = vi, vj
        if off == 0.0:
            converged = True
            break
    if not converged:
        raise NumericalFailureError("Jacobi SVD did not converge", (rows, cols))

    s = np.linalg.norm(w, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]

    u = np.zeros_like(w)
    nonzero = s > 0
    u[:, nonzero] = w[:, nonzero] / s[nonzero]
    if not np.all(nonzero):
        # complete U to orthonormal columns for zero singular values
        k = int(np.count_nonzero(nonzero))
        basis = u[:, :k]
        for col in np.flatnonzero(~nonzero):
            for seed in range(w.shape[0]):
                cand = np.zeros(w.shape[0])
                cand[seed] = 1.0
                cand -= basis @ (basis.T @ cand)
                norm = np.linalg.norm(cand)
                if norm > 1e-8:
                    u[:, col] = cand / norm
                    basis = np.concatenate([basis, u[:, col : col + 1]], axis=1)
                    break

    return (v, s, u) if transposed else (u, s, v)


def spectral_stats(m, tau: float = 1e-10, energy: float = 0.99) -> SpectralStats:
    """Truncated condition number, lower-bound signal and rank statistics.

    sigma_min_trunc is the smallest singular value strictly above tau (tau
    itself when none exceeds it); effective_rank is the smallest r whose
    leading squared singular values explain `energy` of the total; entropy
    uses natural log over the squared-singular-value distribution.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if not 0.0 < energy <= 1.0:
        raise ValueError("energy must be in (0, 1]")
    m = as_matrix(m)
    if not np.any(m):
        raise DegenerateInputError("spectral statistics of an all-zero matrix")
    _, s, _ = svd(m)
    sigma_max = float(s[0])
    above = s[s > tau]
    sigma_min_trunc = float(above[-1]) if above.size else float(tau)
    kappa = sigma_max / sigma_min_trunc
    frob = float(np.sqrt(np.sum(s * s)))
    ell = sigma_min_trunc / frob
    energies = s * s
    total = float(np.sum(energies))
    cumulative = np.cumsum(energies)
    target = energy * total * (1.0 - 1e-12)
    effective_rank = int(np.searchsorted(cumulative, target) + 1)
    effective_rank = min(effective_rank, len(s))
    p = energies[energies > 0] / total
    entropy = float(-np.sum(p * np.log(p)))
    return SpectralStats(
        sigma_max=sigma_max,
        sigma_min_trunc=sigma_min_trunc,
        kappa=kappa,
        ell=ell,
        frobenius=frob,
        effective_rank=effective_rank,
        spectral_entropy=entropy,
    )


def ns_residual(mp) -> tuple[float, float]:
    """Orthogonality residual of a post-iteration matrix.

    Returns (eps, eps_norm) with eps = ||G - I||_F for the Gram matrix on the
    smaller side and eps_norm = eps / sqrt(min(rows, cols)).
    """
    mp = as_matrix(mp)
    rows, cols = mp.shape
    if rows <= cols:
        g = mp @ mp.T
    else:
        g = mp.T @ mp
    k = min(rows, cols)
    eps = float(np.linalg.norm(g - np.eye(k)))
    return eps, eps / np.sqrt(k)
