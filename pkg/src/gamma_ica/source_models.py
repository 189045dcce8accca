"""Working densities for the latent sources.

Two symmetric families are supported, both parametrised by a shape ``c``:

* sub-Gaussian   ``f(s) = c1 * exp(-c s^4)``   (default ``c = 0.1``)
* super-Gaussian ``f(s) = c1 / cosh(c s)``     (default ``c = 1.5``)

``c1`` is fixed by numerical integration so that ``f`` is a density. All
evaluations are done in log space; the product density raised to a power
``gamma`` is formed as ``exp(gamma * sum_j log f_j)`` and is allowed to
underflow to zero for extreme arguments.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import QuadratureFailure

__all__ = [
    "SUB_GAUSSIAN",
    "SUPER_GAUSSIAN",
    "DEFAULT_SHAPE",
    "SourceModel",
    "ProductModel",
    "make_model",
]

SUB_GAUSSIAN = "subgauss"
SUPER_GAUSSIAN = "supergauss"
DEFAULT_SHAPE = {SUB_GAUSSIAN: 0.1, SUPER_GAUSSIAN: 1.5}
_KIND_ALIASES = {
    "subgauss": SUB_GAUSSIAN,
    "sub": SUB_GAUSSIAN,
    "subgaussian": SUB_GAUSSIAN,
    "supergauss": SUPER_GAUSSIAN,
    "super": SUPER_GAUSSIAN,
    "supergaussian": SUPER_GAUSSIAN,
}
_TAIL_BOUND = 1e-12
_QUAD_RTOL = 1e-10
_QUAD_ACCEPT = 1e-8


def _log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def _sech(x):
    e = np.exp(-2.0 * np.abs(x))
    return 2.0 * np.sqrt(e) / (1.0 + e)


def _truncation_point(kind: str, c: float) -> float:
    # Smallest T (on a 0.25 grid) whose two-sided tail bound of the
    # unnormalised kernel is below 1e-12.
    T = 1.0
    while True:
        if kind == SUB_GAUSSIAN:
            bound = 2.0 * math.exp(-c * T**4) / (4.0 * c * T**3)
        else:
            bound = 4.0 * math.exp(-c * T) / c
        if bound < _TAIL_BOUND:
            return T
        T += 0.25


def _quad(func, T: float, what: str) -> float:
    # split at 0 where the sub-Gaussian kernel is flattest
    total = 0.0
    for a, b in ((-T, 0.0), (0.0, T)):
        val, err, *rest = integrate.quad(func, a, b, epsabs=0.0, epsrel=_QUAD_RTOL, limit=200, full_output=1)
        if len(rest) > 1 or not np.isfinite(val) or err > _QUAD_ACCEPT * max(abs(val), 1e-300):
            raise QuadratureFailure(f"quadrature for {what} did not meet tolerance (estimate {val}, error {err})")
        total += val
    return total


@dataclass(frozen=True)
class SourceModel:
    """One coordinate's working density ``f``.

    Parameters
    ----------
    kind : {"subgauss", "supergauss"}
    c : float, optional
        Positive shape parameter; the family default when omitted.
    """

    kind: str
    c: float = None  # type: ignore[assignment]
    normalizer: float = field(init=False, compare=False)
    log_normalizer: float = field(init=False, compare=False, repr=False)
    support: float = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        kind = _KIND_ALIASES.get(str(self.kind).lower().replace("-", "").replace("_", ""))
        if kind is None:
            raise ValueError(f"unknown source model kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        c = DEFAULT_SHAPE[kind] if self.c is None else float(self.c)
        if not (c > 0 and math.isfinite(c)):
            raise ValueError("shape parameter c must be positive and finite")
        object.__setattr__(self, "c", c)
        T = _truncation_point(kind, c)
        object.__setattr__(self, "support", T)
        mass = _quad(lambda s: math.exp(self._log_kernel(s)), T, "normalizer")
        object.__setattr__(self, "normalizer", 1.0 / mass)
        object.__setattr__(self, "log_normalizer", -math.log(mass))

    def _log_kernel(self, s):
        if self.kind == SUB_GAUSSIAN:
            return -self.c * np.power(s, 4)
        return -_log_cosh(self.c * np.asarray(s, dtype=float))

    def log_density(self, s):
        return self.log_normalizer + self._log_kernel(s)

    def density(self, s):
        """``c1 * exp(-c s^4)`` or ``c1 * sech(c s)``."""
        return np.exp(self.log_density(s))

    def score(self, s):
        """``d/ds log f(s)``."""
        s = np.asarray(s, dtype=float)
        if self.kind == SUB_GAUSSIAN:
            return -4.0 * self.c * s**3
        return -self.c * np.tanh(self.c * s)

    def score_deriv(self, s):
        """Derivative of the score, ``d^2/ds^2 log f(s)``."""
        s = np.asarray(s, dtype=float)
        if self.kind == SUB_GAUSSIAN:
            return -12.0 * self.c * s**2
        return -self.c**2 * _sech(self.c * s) ** 2

    def gamma_norm(self, gamma: float) -> float:
        """``integral f(s)^(gamma+1) ds`` by adaptive quadrature.

        Raises
        ------
        QuadratureFailure
        """
        return _gamma_norm(self, float(gamma))


@functools.lru_cache(maxsize=512)
def _gamma_norm(model: SourceModel, gamma: float) -> float:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    g1 = gamma + 1.0
    log_c1 = model.log_normalizer
    return _quad(lambda s: math.exp(g1 * (log_c1 + float(model._log_kernel(s)))), model.support, "gamma norm")


class ProductModel:
    """Independent product ``f(y) = prod_j f_j(y_j)`` over ``p`` coordinates.

    All array methods take ``Y`` of shape ``(p, n)`` (one column per sample).
    """

    def __init__(self, components: Sequence[SourceModel]):
        components = tuple(components)
        if len(components) < 1:
            raise ValueError("a product model needs at least one component")
        self.components = components
        first = components[0]
        self._shared = first if all(m == first for m in components) else None

    @classmethod
    def identical(cls, model: SourceModel, p: int) -> "ProductModel":
        return cls([model] * p)

    @property
    def p(self) -> int:
        return len(self.components)

    def __len__(self):
        return len(self.components)

    def __repr__(self):
        if self._shared is not None:
            return f"ProductModel({self._shared!r} x {self.p})"
        return f"ProductModel({list(self.components)!r})"

    def _apply(self, name: str, Y: np.ndarray) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != self.p:
            raise ValueError(f"expected {self.p} rows, got array of shape {Y.shape}")
        if self._shared is not None:
            return getattr(self._shared, name)(Y)
        return np.stack([getattr(m, name)(y) for m, y in zip(self.components, Y)])

    def log_density_terms(self, Y):
        """Per-coordinate ``log f_j(y_j)``, shape ``(p, n)``."""
        return self._apply("log_density", Y)

    def log_density(self, Y):
        """``sum_j log f_j(y_j)`` per column."""
        return np.sum(self.log_density_terms(Y), axis=0)

    def score(self, Y):
        return self._apply("score", Y)

    def score_deriv(self, Y):
        return self._apply("score_deriv", Y)

    def density_pow(self, Y, gamma: float):
        """``prod_j f_j(y_j)^gamma`` per column; exactly 1 when ``gamma == 0``."""
        if gamma == 0:
            Y = np.asarray(Y, dtype=float)
            return np.ones(Y.shape[1:]) if Y.ndim > 1 else np.float64(1.0)
        return np.exp(gamma * self.log_density(Y))

    def log_gamma_norm(self, gamma: float) -> float:
        """``log prod_j integral f_j^(gamma+1)``."""
        return float(sum(math.log(m.gamma_norm(gamma)) for m in self.components))


def make_model(kind: str, p: int, c: float | None = None) -> ProductModel:
    """Product of ``p`` identical components of the given family."""
    return ProductModel.identical(SourceModel(kind, c), p)
