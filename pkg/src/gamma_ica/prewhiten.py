"""Robust location/scatter estimation by minimum gamma-divergence.

The fitted Gaussian ``(mu, Sigma)`` solves the weighted moment equations

    mu    = sum_i w_i x_i / sum_i w_i
    Sigma = (1 + gamma) * sum_i w_i (x_i - mu)(x_i - mu)^T / sum_i w_i

with ``w_i = d_i^gamma = exp(-gamma/2 * (x_i - mu)^T Sigma^{-1} (x_i - mu))``.
Points far from the bulk receive exponentially small weight, which is
what makes the estimate resistant to gross contamination. ``gamma = 0``
gives the sample mean and the 1/n sample covariance.

Data matrices are ``(p, n)``: one observation per column.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DegenerateScatter, NotPositiveDefinite
from .linalg import inv_sqrt

__all__ = [
    "WhiteningModel",
    "as_data_matrix",
    "gaussian_weight",
    "mahalanobis_sq",
    "moment_estimates",
    "fixed_point_update",
    "prewhiten_fixed_point",
    "whiten",
]

logger = logging.getLogger(__name__)

# exp(-700) is still a normal double; anything smaller is flushed to zero
_LOG_WEIGHT_FLOOR = -700.0


@dataclass(frozen=True)
class WhiteningModel:
    mu: np.ndarray
    sigma: np.ndarray
    sigma_inv_sqrt: np.ndarray
    gamma: float
    iterations: int = 0
    converged: bool = True

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def from_moments(cls, mu, sigma, gamma: float = 0.0, iterations: int = 0, converged: bool = True):
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        return cls(mu, sigma, inv_sqrt(sigma), float(gamma), iterations, converged)

    def to_dict(self) -> dict:
        p = self.p
        return {
            "p": p,
            "gamma": self.gamma,
            "iterations": self.iterations,
            "converged": self.converged,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.ravel().tolist(),
            "sigma_inv_sqrt": self.sigma_inv_sqrt.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WhiteningModel":
        p = int(d["p"])
        return cls(
            np.asarray(d["mu"], dtype=float).reshape(p),
            np.asarray(d["sigma"], dtype=float).reshape(p, p),
            np.asarray(d["sigma_inv_sqrt"], dtype=float).reshape(p, p),
            float(d["gamma"]),
            int(d.get("iterations", 0)),
            bool(d.get("converged", True)),
        )


def as_data_matrix(X, min_samples: int | None = None) -> np.ndarray:
    """Validate a ``(p, n)`` data matrix and return it as float."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"data must be a 2-D (p, n) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite entries")
    p, n = X.shape
    need = p + 1 if min_samples is None else min_samples
    if n < need:
        raise ValueError(f"need at least {need} samples for p={p}, got n={n}")
    return X


def mahalanobis_sq(X, mu, sigma) -> np.ndarray:
    """Squared Mahalanobis distances of the columns of ``X``.

    Raises
    ------
    NotPositiveDefinite
        If ``sigma`` has no Cholesky factor.
    """
    X = np.asarray(X, dtype=float)
    mu = np.asarray(mu, dtype=float)
    try:
        L = np.linalg.cholesky(np.asarray(sigma, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("scatter matrix is not positive definite") from exc
    D = X - mu.reshape(-1, *([1] * (X.ndim - 1)))
    R = sla.solve_triangular(L, D, lower=True)
    return np.sum(R * R, axis=0)


def gaussian_weight(x, mu, sigma) -> float:
    """``exp(-1/2 (x - mu)^T sigma^{-1} (x - mu))`` for a single point."""
    return float(np.exp(-0.5 * mahalanobis_sq(x, mu, sigma)))


def moment_estimates(X) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and the maximum-likelihood (1/n) sample covariance."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=1)
    D = X - mu[:, None]
    return mu, (D @ D.T) / X.shape[1]


def _weights(X, mu, sigma, gamma):
    logw = -0.5 * gamma * mahalanobis_sq(X, mu, sigma)
    w = np.exp(logw)
    w[logw < _LOG_WEIGHT_FLOOR] = 0.0
    return w


def fixed_point_update(X, mu, sigma, gamma: float, simultaneous: bool = False):
    """One pass of the weighted moment equations.

    Weights are evaluated at the incoming ``(mu, sigma)``. The scatter is
    centred at the new location unless ``simultaneous`` is set, in which
    case the old location is used.
    """
    p = X.shape[0]
    w = _weights(X, mu, sigma, gamma)
    total = w.sum()
    if not total > 0 or np.count_nonzero(w) < p + 1:
        raise DegenerateScatter(
            f"only {np.count_nonzero(w)} samples carry weight; need at least {p + 1}"
        )
    mu_new = (X @ w) / total
    centre = mu if simultaneous else mu_new
    D = X - centre[:, None]
    sigma_new = (1.0 + gamma) * ((D * w) @ D.T) / total
    sigma_new = 0.5 * (sigma_new + sigma_new.T)
    try:
        np.linalg.cholesky(sigma_new)
    except np.linalg.LinAlgError as exc:
        raise DegenerateScatter("weighted scatter lost positive definiteness") from exc
    return mu_new, sigma_new


def relative_change(mu_old, sigma_old, mu_new, sigma_new) -> float:
    """Largest of the relative location and scatter changes.

    The location change is measured against ``max(|mu|, sqrt(tr(Sigma)/p))``
    so that a centre near the origin does not inflate it.
    """
    p = mu_new.shape[0]
    loc_scale = max(np.linalg.norm(mu_new), np.sqrt(np.trace(sigma_new) / p))
    d_mu = np.linalg.norm(mu_new - mu_old) / loc_scale
    d_sigma = np.linalg.norm(sigma_new - sigma_old) / np.linalg.norm(sigma_new)
    return float(max(d_mu, d_sigma))


def prewhiten_fixed_point(
    X,
    gamma: float,
    tol: float = 1e-8,
    max_iter: int = 500,
    init: tuple | None = None,
    simultaneous: bool = False,
) -> WhiteningModel:
    """Fit ``(mu, Sigma)`` by iterating the gamma-weighted moment equations.

    Parameters
    ----------
    X : ndarray, shape (p, n)
        Raw observations, one per column; ``n > p``.
    gamma : float
        Robustness index, ``>= 0``. ``0`` returns the moment estimates.
    tol : float
        Stop once :func:`relative_change` falls below ``tol``.
    max_iter : int
        Iteration cap; ``converged`` is ``False`` if it is reached.
    init : (mu, sigma), optional
        Starting point; the moment estimates by default.
    simultaneous : bool
        Centre the scatter update at the previous location.

    Returns
    -------
    WhiteningModel

    Raises
    ------
    DegenerateScatter
        If the weight collapses onto fewer than ``p + 1`` points.
    """
    X = as_data_matrix(X)
    gamma = float(gamma)
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    mu0, sigma0 = moment_estimates(X)
    if gamma == 0.0:
        return WhiteningModel.from_moments(mu0, sigma0, 0.0, iterations=1, converged=True)
    if init is not None:
        mu0 = np.asarray(init[0], dtype=float)
        sigma0 = np.asarray(init[1], dtype=float)
    mu, sigma = mu0, sigma0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu_new, sigma_new = fixed_point_update(X, mu, sigma, gamma, simultaneous)
        change = relative_change(mu, sigma, mu_new, sigma_new)
        mu, sigma = mu_new, sigma_new
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("gamma-prewhitening did not converge in %d iterations (gamma=%g)", max_iter, gamma)
    try:
        return WhiteningModel.from_moments(mu, sigma, gamma, iterations=it, converged=converged)
    except NotPositiveDefinite as exc:
        raise DegenerateScatter(str(exc)) from exc


def whiten(X, model: WhiteningModel) -> np.ndarray:
    """``z_i = Sigma^{-1/2} (x_i - mu)`` for every column."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] != model.p:
        raise ValueError(f"data has {X.shape[0]} rows, model expects {model.p}")
    return model.sigma_inv_sqrt @ (X - model.mu[:, None])
