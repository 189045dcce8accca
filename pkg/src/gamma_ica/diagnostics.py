"""Recovery-consistency diagnostics and the separation performance index.

``estimate_psi`` forms the sample version of the reduced Hessian-type
matrix

    Psi_gamma = Q^T (I - K_p) {gamma Psi_1 + gamma^2 Psi_2} (I - K_p) Q

from (estimated) sources. Its largest eigenvalue must be negative for
gamma-ICA to recover every component, so scanning ``lambda_max`` over a
grid of ``gamma`` values shows which robustness levels are usable.

The reduction never materialises the ``p^2 x p^2`` matrices. Column
``(i, j)`` of ``(I - K_p) Q`` is ``e_i kron e_j - e_j kron e_i``, so the
``Psi_1`` part is diagonal with entries ``(u_ij - d_i) + (u_ji - d_j)`` and
the ``Psi_2`` part is the weighted Gram matrix of
``g_ij = phi_i(s_i) s_j - phi_j(s_j) s_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateRow
from .linalg import lower_pairs, sym_eig
from .source_models import ProductModel

__all__ = [
    "PsiEstimate",
    "ScanRow",
    "ConsistencyReport",
    "estimate_psi",
    "consistency_scan",
    "condition_a",
    "condition_b",
    "performance_index",
    "performance_index_matrix",
    "match_sources",
]


@dataclass(frozen=True)
class PsiEstimate:
    gamma: float
    psi: np.ndarray
    lambda_max: float
    u: np.ndarray
    d: np.ndarray
    psi1_diag: np.ndarray
    psi2_reduced: np.ndarray


@dataclass(frozen=True)
class ScanRow:
    gamma: float
    lambda_max: float
    cond_a_mean: np.ndarray
    cond_a_se: np.ndarray
    cond_b_mean: np.ndarray
    cond_b_se: np.ndarray

    @property
    def cond_a_max_abs_z(self) -> float:
        return float(np.max(np.abs(_zscore(self.cond_a_mean, self.cond_a_se))))

    @property
    def cond_b_min_z(self) -> float:
        return float(np.min(_zscore(self.cond_b_mean, self.cond_b_se)))


@dataclass
class ConsistencyReport:
    rows: list = field(default_factory=list)

    @property
    def grid(self) -> list[tuple[float, float]]:
        return [(r.gamma, r.lambda_max) for r in self.rows]

    @property
    def condition_a(self):
        return [(r.cond_a_mean, r.cond_a_se) for r in self.rows]

    @property
    def condition_b(self):
        return [(r.cond_b_mean, r.cond_b_se) for r in self.rows]

    def admissible(self) -> list[float]:
        """Grid values with ``lambda_max < 0``."""
        return [r.gamma for r in self.rows if r.lambda_max < 0]


def _zscore(mean, se):
    mean = np.asarray(mean, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean / np.where(se > 0, se, 1.0), np.sign(mean) * np.inf)
    return np.nan_to_num(z, nan=0.0)


def _mean_se(values: np.ndarray):
    """Row-wise sample mean and standard error of the mean."""
    n = values.shape[-1]
    return values.mean(axis=-1), values.std(axis=-1, ddof=1) / np.sqrt(n)


def estimate_psi(S_hat, pm: ProductModel, gamma: float) -> PsiEstimate:
    """Empirical ``Psi_gamma`` from sources ``S_hat`` of shape ``(p, n)``.

    Parameters
    ----------
    S_hat : ndarray, shape (p, n)
        Recovered sources ``W^T z_i`` (or true sources in simulations).
    pm : ProductModel
    gamma : float
        Must be positive.

    Returns
    -------
    PsiEstimate
        ``psi`` is the symmetrised ``p(p-1)/2`` square matrix, indexed by the
        pairs of :func:`gamma_ica.linalg.lower_pairs`.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    S = np.asarray(S_hat, dtype=float)
    p, n = S.shape
    if p < 2:
        raise ValueError("need at least two sources")
    w = pm.density_pow(S, gamma)
    phi = pm.score(S)
    dphi = pm.score_deriv(S)
    u = (dphi * w) @ (S * S).T / n
    d = np.sum(w * phi * S, axis=1) / n
    pairs = lower_pairs(p)
    ii = np.array([i for i, _ in pairs])
    jj = np.array([j for _, j in pairs])
    psi1_diag = (u[ii, jj] - d[ii]) + (u[jj, ii] - d[jj])
    g = phi[ii] * S[jj] - phi[jj] * S[ii]
    psi2 = (g * w) @ g.T / n
    psi = gamma * np.diag(psi1_diag) + gamma**2 * psi2
    psi = 0.5 * (psi + psi.T)
    eigvals, _ = sym_eig(psi)
    return PsiEstimate(float(gamma), psi, float(eigvals[0]), u, d, psi1_diag, psi2)


def condition_a(S_hat, pm: ProductModel, gamma: float):
    """Per-coordinate mean and standard error of ``f_j^gamma(s_j) s_j``."""
    S = np.asarray(S_hat, dtype=float)
    wj = np.exp(gamma * pm.log_density_terms(S))
    return _mean_se(wj * S)


def condition_b(S_hat, pm: ProductModel, gamma: float):
    """Per-pair mean and standard error of the pairwise consistency quantity.

    For each pair ``(j, k)`` the per-sample value is
    ``f^gamma(s) {phi_j s_j - phi'_j s_k^2 + phi_k s_k - phi'_k s_j^2}``;
    a positive mean indicates the pair is recoverable.
    """
    S = np.asarray(S_hat, dtype=float)
    w = pm.density_pow(S, gamma)
    phi = pm.score(S)
    dphi = pm.score_deriv(S)
    pairs = lower_pairs(S.shape[0])
    vals = np.array(
        [w * (phi[j] * S[j] - dphi[j] * S[k] ** 2 + phi[k] * S[k] - dphi[k] * S[j] ** 2) for j, k in pairs]
    )
    return _mean_se(vals)


def consistency_scan(S_hat, pm: ProductModel, grid) -> ConsistencyReport:
    """``lambda_max`` and conditions (A)/(B) at every ``gamma`` of ``grid``."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("empty gamma grid")
    if any(g <= 0 for g in grid):
        raise ValueError("grid values must be positive")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    report = ConsistencyReport()
    for g in grid:
        est = estimate_psi(S_hat, pm, g)
        a_mean, a_se = condition_a(S_hat, pm, g)
        b_mean, b_se = condition_b(S_hat, pm, g)
        report.rows.append(ScanRow(g, est.lambda_max, a_mean, a_se, b_mean, b_se))
    return report


def performance_index_matrix(P) -> float:
    """Distance of ``P`` from a scaled permutation matrix, in ``[0, 1]``.

    ``(1/(2p(p-1))) sum_i [(sum_k |P_ik| / max_k |P_ik| - 1)
    + (sum_k |P_ki| / max_k |P_ki| - 1)]``.

    Raises
    ------
    DegenerateRow
        If a row or column of ``P`` is entirely zero.
    """
    P = np.abs(np.asarray(P, dtype=float))
    p = P.shape[0]
    if P.ndim != 2 or P.shape[1] != p or p < 2:
        raise ValueError("performance index needs a square matrix with p >= 2")
    row_max = P.max(axis=1)
    col_max = P.max(axis=0)
    if np.any(row_max == 0) or np.any(col_max == 0):
        raise DegenerateRow("separating matrix has an all-zero row or column")
    rows = P.sum(axis=1) / row_max - 1.0
    cols = P.sum(axis=0) / col_max - 1.0
    return float((rows.sum() + cols.sum()) / (2 * p * (p - 1)))


def performance_index(A_tilde, W_hat) -> float:
    """Performance index of a recovered rotation against the true mixing.

    The global system taking sources to recovered sources is
    ``W_hat^T A_tilde`` (``Y = W^T Z`` and ``Z = A_tilde S``); it is a
    scaled permutation exactly when separation is perfect. The index is
    therefore unchanged by ``W_hat -> W_hat P D`` for a permutation ``P``
    and a signed diagonal ``D``.
    """
    A_tilde = np.asarray(A_tilde, dtype=float)
    W_hat = np.asarray(W_hat, dtype=float)
    if A_tilde.shape != W_hat.shape:
        raise ValueError("A_tilde and W_hat must have the same shape")
    return performance_index_matrix(W_hat.T @ A_tilde)


def match_sources(S_hat, S_true):
    """Best one-to-one matching of recovered to true sources by |correlation|.

    Returns
    -------
    order : ndarray of int
        ``order[k]`` is the recovered channel matched to true source ``k``.
    signs : ndarray
        Sign of the matched correlation.
    corr : ndarray
        Absolute correlation of each matched pair.
    """
    S_hat = np.asarray(S_hat, dtype=float)
    S_true = np.asarray(S_true, dtype=float)
    p = S_true.shape[0]
    C = np.corrcoef(np.vstack([S_true, S_hat]))[:p, p:]
    true_idx, hat_idx = linear_sum_assignment(-np.abs(C))
    order = hat_idx[np.argsort(true_idx)]
    matched = C[np.arange(p), order]
    return order, np.sign(matched), np.abs(matched)
