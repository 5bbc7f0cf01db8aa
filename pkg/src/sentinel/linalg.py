"""Small dense linear algebra: products, symmetric eigenproblems, Cholesky.

Matrices are plain 2-d float ``numpy.ndarray`` objects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LinAlgError(ArithmeticError):
    pass


class NotPositiveDefiniteError(LinAlgError):
    pass


class ConvergenceError(LinAlgError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.sqrt(np.sum(a * a)))


@dataclass(frozen=True)
class SymmetricEigen:
    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # columns


def sym_eigen(s, tol: float = 1e-12, max_sweeps: int = 100) -> SymmetricEigen:
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Sweeps over every off-diagonal pair until the off-diagonal Frobenius
    mass drops below ``tol * ||S||_F``.
    """
    a = as_matrix(s).copy()
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"matrix must be square, got {a.shape}")
    scale = frobenius_norm(a)
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    target = tol * scale

    def off_mass():
        return frobenius_norm(a - np.diag(np.diag(a)))

    for _ in range(max_sweeps):
        if off_mass() <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app, aqq = a[p, p], a[q, q]
                if abs(apq) <= 1e-18 * (abs(app) + abs(aqq)):
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                a[p, :] = a[:, p]
                a[q, :] = a[:, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                v[:, p] = c * vp - sn * v[:, q]
                v[:, q] = sn * vp + c * v[:, q]
    else:
        if off_mass() > target:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return SymmetricEigen(w[order], v[:, order])


def cholesky(s) -> np.ndarray:
    """Lower-triangular L with L @ L.T == S."""
    a = as_matrix(s)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"matrix must be square, got {a.shape}")
    low = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - low[j, :j] @ low[j, :j]
        if not pivot > 0.0:
            raise NotPositiveDefiniteError(
                f"non-positive pivot {pivot:.3g} at column {j}")
        low[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def solve_lower(low: np.ndarray, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    x = np.array(b, dtype=float, copy=True)
    for i in range(low.shape[0]):
        x[i] = (b[i] - low[i, :i] @ x[:i]) / low[i, i]
    return x


def solve_upper(up: np.ndarray, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    x = np.array(b, dtype=float, copy=True)
    n = up.shape[0]
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - up[i, i + 1:] @ x[i + 1:]) / up[i, i]
    return x


def cho_solve(low: np.ndarray, b) -> np.ndarray:
    return solve_upper(low.T, solve_lower(low, b))


def solve_spd(s, b) -> np.ndarray:
    """Solve S x = b for symmetric positive definite S (b may be a matrix)."""
    return cho_solve(cholesky(s), b)


def regularized_cholesky(s, eps: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Cholesky factor, retrying once on S + eps*trace(S)/d * I.

    Returns the factor and whether the ridge was needed.
    """
    s = as_matrix(s)
    try:
        return cholesky(s), False
    except NotPositiveDefiniteError:
        d = s.shape[0]
        ridge = eps * np.trace(s) / d
        if not ridge > 0:
            ridge = eps
        return cholesky(s + ridge * np.eye(d)), True


def log_det_spd(low: np.ndarray) -> float:
    return float(2.0 * np.sum(np.log(np.diag(low))))
