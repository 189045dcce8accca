"""Dense linear-algebra kernels.

Everything here works on small matrices (p <= 16 in practice), so the
routines favour accuracy and determinism over speed:

* ``matrix_exp`` -- scaling and squaring around a fixed-order Taylor core,
  meant for skew-symmetric generators of rotations.
* ``sym_eig`` -- cyclic Jacobi eigensolver for symmetric matrices.
* ``inv_sqrt`` -- SPD inverse square root built on ``sym_eig``.
* ``commutation_matrix`` / ``selection_matrix_q`` -- the vec-operator
  bookkeeping matrices used to reduce Hessian-type matrices to the
  skew-symmetric coordinates.

Vectorisation is column-major throughout: ``vec(M) = M.ravel(order="F")``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceFailure, NotPositiveDefinite

__all__ = [
    "matrix_exp",
    "sym_eig",
    "inv_sqrt",
    "spd_power",
    "commutation_matrix",
    "selection_matrix_q",
    "lower_pairs",
    "vec",
    "unvec",
    "vecp",
    "is_skew",
    "skew",
]

_TAYLOR_ORDER = 18
_SCALED_NORM = 0.5
PD_RELATIVE_FLOOR = 1e-12


def vec(M: np.ndarray) -> np.ndarray:
    """Stack the columns of ``M`` into one vector."""
    return np.asarray(M).ravel(order="F")


def unvec(v: np.ndarray, p: int) -> np.ndarray:
    return np.asarray(v).reshape((p, p), order="F")


def skew(M: np.ndarray) -> np.ndarray:
    """Skew-symmetric part ``(M - M^T) / 2``; exactly skew in floating point."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M - M.T)


def is_skew(V: np.ndarray, atol: float = 0.0) -> bool:
    V = np.asarray(V)
    return V.ndim == 2 and V.shape[0] == V.shape[1] and np.all(np.abs(V + V.T) <= atol)


def _check_square(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def matrix_exp(V: np.ndarray) -> np.ndarray:
    """Matrix exponential of a skew-symmetric matrix.

    The input is scaled by ``2**-s`` so that its 1-norm is at most 0.5, the
    exponential of the scaled matrix is evaluated with an order-18 Taylor
    polynomial (Horner form, truncation error below 1e-24), and the result
    is squared ``s`` times.

    Parameters
    ----------
    V : ndarray, shape (p, p)
        Skew-symmetric generator.

    Returns
    -------
    R : ndarray, shape (p, p)
        ``exp(V)``, a rotation matrix (``R^T R = I``, ``det R = 1``).
    """
    V = _check_square(V, "V")
    scale = max(1.0, float(np.max(np.abs(V))))
    if not is_skew(V, atol=1e-12 * scale):
        raise ValueError("matrix_exp expects a skew-symmetric matrix")
    p = V.shape[0]
    norm1 = float(np.max(np.sum(np.abs(V), axis=0)))
    s = 0
    if norm1 > _SCALED_NORM:
        s = int(math.ceil(math.log2(norm1 / _SCALED_NORM)))
    Vs = V / (2.0**s)
    eye = np.eye(p)
    R = eye.copy()
    for k in range(_TAYLOR_ORDER, 0, -1):
        R = eye + (Vs @ R) / k
    for _ in range(s):
        R = R @ R
    return R


def sym_eig(S: np.ndarray, max_sweeps: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    S : ndarray, shape (p, p)
        Symmetric matrix. Only the symmetric part is used.
    max_sweeps : int, optional
        Cap on full sweeps; defaults to ``10 * p**2``.

    Returns
    -------
    eigenvalues : ndarray, shape (p,)
        In descending order.
    eigenvectors : ndarray, shape (p, p)
        Orthonormal columns, ``S @ v_i = lambda_i * v_i``.

    Raises
    ------
    ConvergenceFailure
        If the off-diagonal mass does not vanish within ``max_sweeps``.
    """
    S = _check_square(S, "S")
    A = 0.5 * (S + S.T)
    p = A.shape[0]
    V = np.eye(p)
    if max_sweeps is None:
        max_sweeps = 10 * p * p
    total = float(np.sqrt(np.sum(A * A)))
    if p == 1 or total == 0.0:
        return np.diag(A).copy(), V
    thresh = np.finfo(float).eps * total
    offdiag = ~np.eye(p, dtype=bool)

    def off_norm(M):
        return float(np.sqrt(np.sum(M[offdiag] ** 2)))

    for _ in range(max_sweeps):
        if off_norm(A) <= thresh:
            break
        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = A[i, j]
                if aij == 0.0:
                    continue
                # Rutishauser's stable rotation angle
                theta = (A[j, j] - A[i, i]) / (2.0 * aij)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                ai = A[:, i].copy()
                aj = A[:, j].copy()
                A[:, i] = c * ai - sn * aj
                A[:, j] = sn * ai + c * aj
                ri = A[i, :].copy()
                rj = A[j, :].copy()
                A[i, :] = c * ri - sn * rj
                A[j, :] = sn * ri + c * rj
                A[i, j] = A[j, i] = 0.0
                vi = V[:, i].copy()
                vj = V[:, j].copy()
                V[:, i] = c * vi - sn * vj
                V[:, j] = sn * vi + c * vj
    else:
        if off_norm(A) > thresh:
            raise ConvergenceFailure(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def spd_power(S: np.ndarray, power: float) -> np.ndarray:
    """``S**power`` for a symmetric positive definite ``S``.

    Raises
    ------
    NotPositiveDefinite
        If an eigenvalue is at or below ``1e-12`` times the largest one.
    """
    w, V = sym_eig(S)
    if w[0] <= 0.0 or w[-1] <= PD_RELATIVE_FLOOR * w[0]:
        raise NotPositiveDefinite(
            f"matrix is not positive definite (eigenvalues in [{w[-1]:.3g}, {w[0]:.3g}])"
        )
    R = (V * w**power) @ V.T
    return 0.5 * (R + R.T)


def inv_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root ``S^{-1/2}`` of an SPD matrix."""
    return spd_power(S, -0.5)


def commutation_matrix(p: int) -> np.ndarray:
    """The ``p^2 x p^2`` permutation ``K_p`` with ``K_p vec(M) = vec(M^T)``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    K = np.zeros((p * p, p * p))
    for a in range(p):
        for b in range(p):
            # vec(M)[b*p + a] = M[a, b]; vec(M^T) holds M[b, a] there.
            K[b * p + a, a * p + b] = 1.0
    return K


def lower_pairs(p: int) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)``, ``i < j`` (0-based), in column-lexicographic order.

    Pair ``(i, j)`` addresses the strictly lower-triangular entry ``M[j, i]``,
    so the order matches scanning the columns of a lower-triangular matrix.
    """
    return [(i, j) for i in range(p) for j in range(i + 1, p)]


def selection_matrix_q(p: int) -> np.ndarray:
    """``p^2 x p(p-1)/2`` matrix whose columns are ``e_i kron e_j``, ``i < j``.

    ``vec(M) = Q vecp(M)`` for strictly lower-triangular ``M`` and
    ``vecp(M) = Q^T vec(M)``.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    pairs = lower_pairs(p)
    Q = np.zeros((p * p, len(pairs)))
    for col, (i, j) in enumerate(pairs):
        Q[i * p + j, col] = 1.0
    return Q


def vecp(M: np.ndarray) -> np.ndarray:
    """Strictly lower-triangular entries of ``M`` stacked column by column."""
    M = np.asarray(M)
    return np.array([M[j, i] for i, j in lower_pairs(M.shape[0])])
