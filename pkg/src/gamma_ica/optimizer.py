"""Geodesic gradient ascent of the gamma-ICA objective over SO(p).

Column convention: the recovered sources are ``Y = W^T Z`` with ``w_j`` the
j-th column of ``W``. For ``gamma > 0`` the objective is

    L(W) = (1/n) sum_i prod_j f_j(w_j^T z_i)^gamma

and ``gamma == 0`` switches to the MLE-ICA log-likelihood
``(1/n) sum_i sum_j log f_j(w_j^T z_i)``.

Each iteration pulls the gradient back to the identity, takes its
skew-symmetric part ``V`` and moves along the geodesic
``W <- W exp(t V)``; ``t = alpha * rho**l`` comes from a backtracking
search (first improvement, or Armijo).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import NonWhitenedInputWarning
from .linalg import matrix_exp, skew
from .source_models import ProductModel

__all__ = [
    "FIRST_IMPROVED",
    "ARMIJO",
    "OptimizerConfig",
    "RotationEstimate",
    "objective",
    "projected_gradient",
    "geodesic_step",
    "line_search",
    "fit_ica",
    "random_rotation",
    "recover_rotation",
]

logger = logging.getLogger(__name__)

FIRST_IMPROVED = "first-improved"
ARMIJO = "armijo"
WHITENESS_TOL = 0.1


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`fit_ica`.

    ``grad_tol=None`` resolves to ``1e-6 * gamma`` (``1e-6`` in MLE mode),
    since the projected gradient carries a factor ``gamma``.
    """

    gamma: float = 0.0
    step_rule: str = FIRST_IMPROVED
    alpha: float = 1.0
    rho: float = 0.5
    eta: float = 1e-4
    max_line_search: int = 60
    max_iter: int = 2000
    grad_tol: float | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.step_rule not in (FIRST_IMPROVED, ARMIJO):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if not (self.alpha > 0 and 0 < self.rho < 1 and 0 < self.eta < 1):
            raise ValueError("need alpha > 0, 0 < rho < 1 and 0 < eta < 1")

    @property
    def tolerance(self) -> float:
        if self.grad_tol is not None:
            return self.grad_tol
        return 1e-6 * self.gamma if self.gamma > 0 else 1e-6

    def with_gamma(self, gamma: float) -> "OptimizerConfig":
        return replace(self, gamma=float(gamma))


@dataclass
class RotationEstimate:
    w: np.ndarray
    objective_trace: list = field(default_factory=list)
    step_trace: list = field(default_factory=list)
    grad_norm_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""
    gamma: float = 0.0

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


# -- objective and gradient on already-rotated data ------------------------


def _objective_y(Y, pm: ProductModel, gamma: float) -> float:
    if gamma == 0:
        return float(np.mean(pm.log_density(Y)))
    return float(np.mean(pm.density_pow(Y, gamma)))


def _gradient_y(Y, pm: ProductModel, gamma: float) -> np.ndarray:
    n = Y.shape[1]
    phi = pm.score(Y)
    if gamma == 0:
        G = Y @ phi.T / n
    else:
        w = pm.density_pow(Y, gamma) * (gamma / n)
        G = (Y * w) @ phi.T
    # G = sum_i w_i y_i phi_i^T; the projected gradient is its skew part
    return skew(G)


def objective(Z, W, pm: ProductModel, gamma: float) -> float:
    """gamma-ICA objective (or MLE log-likelihood when ``gamma == 0``)."""
    return _objective_y(np.asarray(W).T @ np.asarray(Z, dtype=float), pm, gamma)


def projected_gradient(Z, W, pm: ProductModel, gamma: float) -> np.ndarray:
    """Skew-symmetric steepest-ascent direction at the identity.

    ``(gamma/2n) sum_i f^gamma(y_i) (y_i phi(y_i)^T - phi(y_i) y_i^T)`` with
    ``y_i = W^T z_i``; the weight ``gamma f^gamma / n`` becomes ``1/n`` in MLE
    mode. For any skew ``V``, ``d/dt L(W exp(tV)) at t=0 = tr(grad^T V)``.
    """
    return _gradient_y(np.asarray(W).T @ np.asarray(Z, dtype=float), pm, gamma)


def geodesic_step(W, V, t: float) -> np.ndarray:
    """``W exp(t V)``."""
    return np.asarray(W, dtype=float) @ matrix_exp(t * np.asarray(V, dtype=float))


def _search(Y, f0, V, grad, pm, config):
    """Backtracking along ``exp(t V)`` from rotated data ``Y``.

    Returns ``(t, improved, f_new, R)`` with ``R = exp(t V)``.
    """
    gamma = config.gamma
    slope = float(np.sum(grad * V)) if config.step_rule == ARMIJO else 0.0
    t = config.alpha
    for _ in range(config.max_line_search + 1):
        R = matrix_exp(t * V)
        f_new = _objective_y(R.T @ Y, pm, gamma)
        if config.step_rule == ARMIJO:
            ok = f_new - f0 >= config.eta * t * slope and f_new > f0
        else:
            ok = f_new > f0
        if ok:
            return t, True, f_new, R
        t *= config.rho
    return 0.0, False, f0, None


def line_search(Z, W, V, pm: ProductModel, config: OptimizerConfig) -> tuple[float, bool]:
    """Step size along the geodesic ``W exp(t V)``.

    Tries ``t = alpha * rho**l`` for ``l = 0, 1, ..., max_line_search``.
    ``first-improved`` accepts the first strict increase of the objective;
    ``armijo`` additionally requires a gain of at least
    ``eta * t * tr(grad^T V)``.

    Returns
    -------
    t : float
        Accepted step, or 0 when no trial step was accepted.
    improved : bool
    """
    Y = np.asarray(W).T @ np.asarray(Z, dtype=float)
    f0 = _objective_y(Y, pm, config.gamma)
    grad = _gradient_y(Y, pm, config.gamma)
    t, improved, _, _ = _search(Y, f0, np.asarray(V, dtype=float), grad, pm, config)
    return t, improved


def random_rotation(rng: np.random.Generator, p: int, scale: float = 1.0) -> np.ndarray:
    """``exp`` of a random skew matrix with N(0, scale^2) entries."""
    return matrix_exp(skew(rng.normal(scale=scale, size=(p, p))))


def recover_rotation(Z1, Zk) -> np.ndarray:
    """Right-division ``(Z1 Z1^T)^{-1} Z1 Zk^T`` of rotated data by the original."""
    Z1 = np.asarray(Z1, dtype=float)
    return np.linalg.solve(Z1 @ Z1.T, Z1 @ np.asarray(Zk, dtype=float).T)


def check_whitened(Z, tol: float = WHITENESS_TOL) -> float:
    """Warn if the sample covariance of ``Z`` is far from the identity."""
    Z = np.asarray(Z, dtype=float)
    D = Z - Z.mean(axis=1, keepdims=True)
    dev = float(np.linalg.norm(D @ D.T / Z.shape[1] - np.eye(Z.shape[0])))
    if dev > tol:
        warnings.warn(
            f"input does not look whitened: ||cov(Z) - I||_F = {dev:.3g}",
            NonWhitenedInputWarning,
            stacklevel=3,
        )
    return dev


def fit_ica(
    Z,
    pm: ProductModel,
    config: OptimizerConfig | None = None,
    w0=None,
    scheme: str = "accumulate",
    callback: Callable | None = None,
) -> RotationEstimate:
    """Maximise the gamma-ICA objective over SO(p) by geodesic ascent.

    Parameters
    ----------
    Z : ndarray, shape (p, n)
        Whitened data, one sample per column.
    pm : ProductModel
        Working source densities.
    config : OptimizerConfig, optional
    w0 : ndarray, shape (p, p), optional
        Starting rotation (identity by default); must lie in SO(p).
    scheme : {"accumulate", "rotate"}
        The iteration always rotates the data, ``Z_{k+1} = exp(t V)^T Z_k``,
        and keeps the product of the step rotations. ``"accumulate"``
        returns that product; ``"rotate"`` recovers ``W`` at the end by
        right-dividing the final rotated data by the initial data.
    callback : callable, optional
        Called as ``callback(k, W, f)`` after every accepted step.

    Returns
    -------
    RotationEstimate
        The final iterate. ``converged`` is set only when the projected
        gradient norm fell below the tolerance; exhausting the line search
        stops the run with ``stop_reason="line_search"``.
    """
    config = config or OptimizerConfig()
    Z = np.asarray(Z, dtype=float)
    p = Z.shape[0]
    if pm.p != p:
        raise ValueError(f"model has {pm.p} components but data has {p} rows")
    if scheme not in ("accumulate", "rotate"):
        raise ValueError(f"unknown scheme {scheme!r}")
    check_whitened(Z)
    W = np.eye(p) if w0 is None else np.array(w0, dtype=float)
    if W.shape != (p, p) or np.linalg.norm(W.T @ W - np.eye(p)) > 1e-6 or np.linalg.det(W) < 0:
        raise ValueError("w0 must be a p x p rotation matrix")
    gamma = config.gamma
    tol = config.tolerance

    Z1 = W.T @ Z
    Y = Z1
    f = _objective_y(Y, pm, gamma)
    est = RotationEstimate(w=W, objective_trace=[f], gamma=gamma)
    stop = "max_iter"
    k = 0
    for k in range(config.max_iter):
        V = _gradient_y(Y, pm, gamma)
        gnorm = float(np.linalg.norm(V))
        est.grad_norm_trace.append(gnorm)
        if gnorm < tol:
            stop = "gradient"
            break
        t, improved, f_new, R = _search(Y, f, V, V, pm, config)
        if not improved:
            stop = "line_search"
            break
        Y = R.T @ Y
        W = W @ R
        f = f_new
        est.objective_trace.append(f)
        est.step_trace.append(t)
        if callback is not None:
            callback(k + 1, W, f)
    else:
        k = config.max_iter

    if scheme == "rotate":
        # Y = R_k^T ... R_1^T Z1 with Z1 = W0^T Z
        W = np.asarray(w0 if w0 is not None else np.eye(p), dtype=float) @ recover_rotation(Z1, Y)
    est.w = W
    est.iterations = len(est.step_trace)
    est.converged = stop == "gradient"
    est.stop_reason = stop
    if not est.converged:
        logger.debug("fit_ica stopped by %s after %d steps (gamma=%g)", stop, est.iterations, gamma)
    return est
