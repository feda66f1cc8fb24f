"""Dense symmetric linear-algebra kernels.

Cholesky factorisation and SPD inversion are thin wrappers over LAPACK
(``potrf``/``potri``).  The cyclic Jacobi eigensolver is written out in full:
it is the reference against which everything else is checked, so it must not
share code with the LAPACK path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import lapack

from .errors import NoConvergence, NotPositiveDefinite, ShapeMismatch

SYMMETRY_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenResult:
    """Eigenpairs of a symmetric matrix, eigenvalues sorted descending.

    Column ``i`` of ``eigenvectors`` belongs to ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def as_symmetric(a, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Validate that ``a`` is square and symmetric to ``tol`` (relative to its scale)."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if a.size and np.max(np.abs(a - a.T)) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return a


def _potrf(a: np.ndarray) -> tuple[np.ndarray, int]:
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return c, info


def cholesky_factor(a, jitter: bool = True) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    On a non-positive pivot the factorisation is retried once with
    ``1e-8 * trace(a) / p`` added to the diagonal; a second failure raises
    :class:`NotPositiveDefinite`.
    """
    a = as_symmetric(a)
    c, info = _potrf(a)
    if info == 0:
        return c
    if jitter:
        p = a.shape[0]
        shift = 1e-8 * abs(np.trace(a)) / p
        c, info = _potrf(a + shift * np.eye(p))
        if info == 0:
            return c
    raise NotPositiveDefinite(
        f"leading minor {info} is not positive; increase alpha or check inputs for corruption"
    )


def spd_inverse(a, jitter: bool = True) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via its Cholesky factor."""
    c = cholesky_factor(a, jitter=jitter)
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"dpotri failed with info={info}")
    # potri fills only the lower triangle
    inv = np.tril(inv)
    inv = inv + np.tril(inv, -1).T
    return inv


def power_iteration(
    a,
    max_iters: int = 50,
    tol: float = 1e-7,
    seed: int = 0,
    return_vector: bool = False,
):
    """Dominant eigenvalue of an SPD matrix by normalised power iteration.

    The estimate is the Rayleigh quotient ``v.T @ a @ v`` of the current unit
    iterate.  Iteration stops when the estimate changes by less than ``tol``
    (relative) or when the iterate is already an eigenvector to within
    ``tol``.  The start vector is drawn from ``default_rng(seed)``.

    With ``return_vector=True`` returns ``(lam, v, n_iters)``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    a = np.asarray(a, dtype=np.float64)
    p = a.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(p)
    v /= np.linalg.norm(v)
    lam_prev = None
    lam = 0.0
    it = 0
    for it in range(1, max_iters + 1):
        w = a @ v
        lam = float(v @ w)
        resid = np.linalg.norm(w - lam * v)
        if resid <= tol * abs(lam):
            break
        if lam_prev is not None and abs(lam - lam_prev) <= tol * abs(lam):
            break
        if it == max_iters:
            break
        lam_prev = lam
        v = w / np.linalg.norm(w)
    if return_vector:
        return lam, v, it
    return lam


@njit(cache=True)
def _jacobi_sweeps(A, Vt, tol, max_sweeps):
    # A is updated through its rows only and mirrored into columns; Vt holds
    # eigenvectors as rows so every inner loop is contiguous.
    n = A.shape[0]
    norm = np.sqrt(np.sum(A * A))
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += A[i, j] * A[i, j]
        if np.sqrt(off) <= tol * norm:
            return sweep
        if sweep == max_sweeps:
            return -1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                app = A[p, p]
                aqq = A[q, q]
                g = 100.0 * abs(apq)
                if sweep > 3 and abs(app) + g == abs(app) and abs(aqq) + g == abs(aqq):
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    continue
                if apq == 0.0:
                    continue
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                for k in range(n):
                    A[k, p] = A[p, k]
                    A[k, q] = A[q, k]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    vpk = Vt[p, k]
                    vqk = Vt[q, k]
                    Vt[p, k] = c * vpk - s * vqk
                    Vt[q, k] = s * vpk + c * vqk
    return -1


def jacobi_eigen(a, tol: float = 1e-15, max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigenResult:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Raises :class:`NoConvergence` if the off-diagonal mass has not dropped
    below ``tol * ||a||_F`` after ``max_sweeps`` sweeps.
    """
    A = as_symmetric(a)
    A = np.ascontiguousarray(0.5 * (A + A.T))
    n = A.shape[0]
    Vt = np.eye(n)
    sweeps = _jacobi_sweeps(A, Vt, tol, max_sweeps)
    if sweeps < 0:
        raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return EigenResult(w[order], np.ascontiguousarray(Vt.T[:, order]), sweeps)


def truncated_spectrum(g, energy_threshold: float = 0.999):
    """Eigenpairs of a PSD Gram matrix, largest first, with the kept count ``k``.

    ``k`` is the smallest number of leading eigenvalues whose sum reaches
    ``energy_threshold * trace``.  Eigenvalues at round-off level are never
    kept.  Returns ``(eigenvalues, eigenvectors, k)`` over the full spectrum.
    """
    if not 0.0 < energy_threshold <= 1.0:
        raise ValueError("energy_threshold must lie in (0, 1]")
    g = as_symmetric(g)
    w, V = np.linalg.eigh(g)
    w = w[::-1].copy()
    V = V[:, ::-1].copy()
    w = np.maximum(w, 0.0)
    total = float(np.sum(w))
    p = g.shape[0]
    if total <= 0.0:
        return w, V, 0
    floor = p * np.finfo(float).eps * w[0]
    cum = np.cumsum(w)
    k = int(np.searchsorted(cum, energy_threshold * total * (1.0 - 1e-12)) + 1)
    k = min(k, int(np.sum(w > floor)))
    return w, V, max(k, 1)


def pseudo_inverse_gram(g, energy_threshold: float = 0.999) -> np.ndarray:
    """Energy-truncated Moore-Penrose pseudo-inverse of a symmetric PSD matrix."""
    w, V, k = truncated_spectrum(g, energy_threshold)
    if k == 0:
        return np.zeros_like(V)
    Vk = V[:, :k]
    return (Vk / w[:k]) @ Vk.T


def random_spd(p: int, rng: np.random.Generator, cond: float | None = None) -> np.ndarray:
    """Random SPD test matrix; with ``cond`` set, the spectrum spans exactly that ratio."""
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    if cond is None:
        w = rng.uniform(0.5, 2.0, size=p) * p
    else:
        w = np.geomspace(1.0, cond, p) if p > 1 else np.ones(1)
    a = (q * w) @ q.T
    return 0.5 * (a + a.T)
