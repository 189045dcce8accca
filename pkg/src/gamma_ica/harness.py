"""Experiment drivers: contaminated two-source simulations and image unmixing.

Every random draw comes from :func:`gamma_ica._rng.derive_rng` keyed by the
run seed, a purpose tag and the replication number, so identical
configurations reproduce identical tables.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from ._rng import derive_rng
from .diagnostics import match_sources, performance_index
from .errors import MixingNotInvertible, NonWhitenedInputWarning, NumericalError
from .io import read_pgm
from .linalg import inv_sqrt
from .optimizer import OptimizerConfig, fit_ica
from .prewhiten import WhiteningModel, prewhiten_fixed_point, whiten
from .selection import CvConfig, select_gamma_prewhiten
from .source_models import SUB_GAUSSIAN, SUPER_GAUSSIAN, make_model

__all__ = [
    "UNIFORM",
    "STUDENT_T",
    "GAMMA_ICA",
    "MLE_ICA",
    "SimulationSpec",
    "SimulationData",
    "SweepResult",
    "generate_simulation",
    "run_replication_sweep",
    "ImageSpec",
    "ImageResult",
    "MethodResult",
    "median_filter",
    "rescale_to_uint8",
    "random_mixing",
    "run_image_pipeline",
    "sample_image_paths",
]

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
STUDENT_T = "t3"
GAMMA_ICA = "gamma_ica"
MLE_ICA = "mle_ica"
METHODS = (GAMMA_ICA, MLE_ICA)
DEFAULT_MODEL = {UNIFORM: SUB_GAUSSIAN, STUDENT_T: SUPER_GAUSSIAN}


@dataclass(frozen=True)
class SimulationSpec:
    """Two-source contaminated mixture ``X = A S`` (+ noise on the last columns)."""

    source_kind: str = UNIFORM
    n_clean: int = 150
    n_outliers: int = 0
    outlier_mean: tuple = (5.0, 5.0)
    outlier_sd: float = 5.0
    mixing: tuple = ((1.0, 2.0), (1.0, 0.5))
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.source_kind not in (UNIFORM, STUDENT_T):
            raise ValueError(f"source_kind must be {UNIFORM!r} or {STUDENT_T!r}")
        if self.n_clean <= 0 or self.n_outliers < 0:
            raise ValueError("need n_clean > 0 and n_outliers >= 0")
        A = np.asarray(self.mixing, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("mixing must be a square matrix")
        if len(self.outlier_mean) != A.shape[0]:
            raise ValueError("outlier_mean length must match the mixing dimension")
        if not self.outlier_sd > 0:
            raise ValueError("outlier_sd must be positive")
        object.__setattr__(self, "mixing", tuple(tuple(float(v) for v in row) for row in A))
        object.__setattr__(self, "outlier_mean", tuple(float(v) for v in self.outlier_mean))

    @property
    def p(self) -> int:
        return len(self.mixing)


@dataclass
class SimulationData:
    X: np.ndarray
    S: np.ndarray
    A: np.ndarray
    contaminated: np.ndarray


def generate_simulation(spec: SimulationSpec, rep: int) -> SimulationData:
    """Draw replication ``rep``: sources, mixtures and contamination mask.

    Sources are Uniform(-3, 3) or Student t with 3 degrees of freedom and
    are not rescaled. The last ``n_outliers`` columns of ``X`` receive
    additive ``N(outlier_mean, outlier_sd^2 I)`` noise after mixing.
    """
    rng = derive_rng(spec.seed, "simulation", rep)
    A = np.array(spec.mixing)
    p = spec.p
    n = spec.n_clean + spec.n_outliers
    if spec.source_kind == UNIFORM:
        S = rng.uniform(-3.0, 3.0, size=(p, n))
    else:
        S = rng.standard_t(3, size=(p, n))
    X = A @ S
    mask = np.zeros(n, dtype=bool)
    if spec.n_outliers:
        mask[spec.n_clean :] = True
        noise = rng.normal(size=(p, spec.n_outliers)) * spec.outlier_sd
        X[:, spec.n_clean :] += noise + np.asarray(spec.outlier_mean)[:, None]
    return SimulationData(X, S, A, mask)


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)

    ROW_FIELDS = ("method", "gamma", "replication", "prewhiten_gamma", "pi", "converged", "iterations", "error")
    SUMMARY_FIELDS = ("method", "gamma", "mean_pi", "sd_pi", "n_ok", "n_failed")

    def mean_pi(self, method: str, gamma: float) -> float:
        for s in self.summary:
            if s["method"] == method and s["gamma"] == gamma:
                return s["mean_pi"]
        raise KeyError((method, gamma))


def _one_replication(spec, rep, grid, methods, pm, prewhiten_gamma, opt, true_sigma, cv_seed):
    data = generate_simulation(spec, rep)
    rows = []
    chosen_pre = None
    if prewhiten_gamma == "cv":
        chosen_pre = select_gamma_prewhiten(data.X, CvConfig(seed=cv_seed + rep)).chosen_gamma
    for g in grid:
        g_pre = g if prewhiten_gamma is None else (chosen_pre if chosen_pre is not None else float(prewhiten_gamma))
        try:
            model = prewhiten_fixed_point(data.X, g_pre)
        except NumericalError as exc:
            for m in methods:
                rows.append(dict(method=m, gamma=g, replication=rep, prewhiten_gamma=g_pre, pi=math.nan,
                                 converged=False, iterations=0, error=str(exc)))
            continue
        Z = whiten(data.X, model)
        if true_sigma:
            A_tilde = inv_sqrt(data.A @ data.A.T) @ data.A
        else:
            A_tilde = model.sigma_inv_sqrt @ data.A
        for m in methods:
            g_fit = g if m == GAMMA_ICA else 0.0
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NonWhitenedInputWarning)
                    est = fit_ica(Z, pm, opt.with_gamma(g_fit))
                pi = performance_index(A_tilde, est.w)
                rows.append(dict(method=m, gamma=g, replication=rep, prewhiten_gamma=g_pre, pi=pi,
                                 converged=est.converged, iterations=est.iterations, error=""))
            except NumericalError as exc:
                rows.append(dict(method=m, gamma=g, replication=rep, prewhiten_gamma=g_pre, pi=math.nan,
                                 converged=False, iterations=0, error=str(exc)))
    return rows


def run_replication_sweep(
    spec: SimulationSpec,
    gamma_grid: Sequence[float],
    methods: Sequence[str] = METHODS,
    model: str | None = None,
    shape_c: float | None = None,
    prewhiten_gamma=None,
    optimizer: OptimizerConfig | None = None,
    true_sigma: bool = False,
    threads: int = 1,
) -> SweepResult:
    """Performance index of each method over replications and a gamma grid.

    Parameters
    ----------
    spec : SimulationSpec
    gamma_grid : sequence of float
        Robustness levels; each defines one cell per method.
    methods : sequence of {"gamma_ica", "mle_ica"}
        ``mle_ica`` is fitted with ``gamma = 0`` on the same whitened data
        as the ``gamma_ica`` fit of the cell.
    model, shape_c :
        Working density; defaults to sub-Gaussian for uniform sources and
        super-Gaussian for t sources.
    prewhiten_gamma : None, float or "cv"
        ``None`` prewhitens with the cell's gamma; a float fixes it; ``"cv"``
        selects it per replication by cross-validation.
    true_sigma : bool
        Measure against ``(A A^T)^{-1/2} A`` instead of the estimated
        ``Sigma_hat^{-1/2} A``.
    threads : int
        Replications evaluated concurrently; results do not depend on it.
    """
    methods = tuple(methods)
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValueError(f"unknown methods {sorted(bad)}")
    grid = [float(g) for g in gamma_grid]
    pm = make_model(model or DEFAULT_MODEL[spec.source_kind], spec.p, shape_c)
    opt = optimizer or OptimizerConfig()

    def job(rep):
        return _one_replication(spec, rep, grid, methods, pm, prewhiten_gamma, opt, true_sigma, spec.seed)

    reps = range(spec.replications)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_rep = list(pool.map(job, reps))
    else:
        per_rep = [job(r) for r in reps]
    result = SweepResult(rows=[row for rows in per_rep for row in rows])
    for m in methods:
        for g in grid:
            vals = np.array([r["pi"] for r in result.rows if r["method"] == m and r["gamma"] == g])
            ok = vals[~np.isnan(vals)]
            result.summary.append(dict(
                method=m, gamma=g,
                mean_pi=float(ok.mean()) if ok.size else math.nan,
                sd_pi=float(ok.std(ddof=1)) if ok.size > 1 else math.nan,
                n_ok=int(ok.size), n_failed=int(vals.size - ok.size),
            ))
    return result


# -- images -----------------------------------------------------------------


def sample_image_paths() -> list[Path]:
    """Four bundled 128x128 grayscale sources (histogram-equalised scikit-image samples)."""
    base = resources.files("gamma_ica") / "data"
    return [Path(str(base / f"source{k}.pgm")) for k in range(1, 5)]


def median_filter(img, window: int = 3) -> np.ndarray:
    """Replace each pixel by the median of its ``window x window`` neighbourhood.

    Borders use replicated edge pixels.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    return ndimage.median_filter(np.asarray(img), size=window, mode="nearest")


def rescale_to_uint8(x, clip_percent: float = 1.0) -> np.ndarray:
    """Affine map of ``x`` onto ``[0, 255]`` after percentile clipping.

    ``clip_percent=0`` maps the exact minimum and maximum.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = np.percentile(x, [clip_percent, 100.0 - clip_percent])
    if hi <= lo:
        return np.zeros(x.shape, dtype=np.uint8)
    y = (x - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def random_mixing(seed: int, p: int = 4, spread: float = 0.3, max_tries: int = 100) -> np.ndarray:
    """``1 1^T + C`` with ``C`` i.i.d. Uniform(-spread, spread).

    Draws are retried (and logged) while ``|det| < 1e-6``.
    """
    for attempt in range(max_tries):
        C = derive_rng(seed, "image-mixing", attempt).uniform(-spread, spread, size=(p, p))
        A = np.ones((p, p)) + C
        if abs(np.linalg.det(A)) >= 1e-6:
            return A
        logger.warning("mixing draw %d is numerically singular; redrawing", attempt)
    raise MixingNotInvertible(f"no invertible mixing matrix in {max_tries} draws")


@dataclass(frozen=True)
class ImageSpec:
    source_paths: tuple
    mixing_seed: int = 0
    contamination_fraction: float = 0.3
    noise_mean: float = 20.0
    noise_sd: float = 50.0
    subsample: int = 1000
    filter: bool = False
    shared_noise: bool = False
    model: str = SUB_GAUSSIAN
    shape_c: float | None = None
    clip_percent: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "source_paths", tuple(str(p) for p in self.source_paths))
        if not 0.0 <= self.contamination_fraction <= 1.0:
            raise ValueError("contamination_fraction must lie in [0, 1]")
        if self.subsample < 2:
            raise ValueError("subsample must be at least 2")


@dataclass
class MethodResult:
    method: str
    recovered: np.ndarray
    images: np.ndarray
    order: np.ndarray
    signs: np.ndarray
    correlation: np.ndarray
    w: np.ndarray | None = None
    whitening: WhiteningModel | None = None
    converged: bool = True

    @property
    def mean_correlation(self) -> float:
        return float(np.mean(self.correlation))


@dataclass
class ImageResult:
    shape: tuple
    sources: np.ndarray
    mixed: np.ndarray
    A: np.ndarray
    contaminated: np.ndarray
    methods: dict = field(default_factory=dict)


def load_sources(paths) -> tuple[np.ndarray, tuple]:
    imgs = [read_pgm(p) for p in paths]
    shape = imgs[0].shape
    if any(im.shape != shape for im in imgs):
        raise ValueError("all source images must have the same dimensions")
    return np.stack([im.reshape(-1).astype(float) for im in imgs]), shape


def _finish(method, recovered, S, shape, clip_percent, **extra) -> MethodResult:
    order, signs, corr = match_sources(recovered, S)
    aligned = recovered[order] * signs[:, None]
    images = np.stack([rescale_to_uint8(ch, clip_percent).reshape(shape) for ch in aligned])
    return MethodResult(method, recovered, images, order, signs, corr, **extra)


def run_image_pipeline(
    spec: ImageSpec,
    gammas: tuple = (0.2, 0.15),
    methods: Sequence[str] = METHODS,
    mixing=None,
    demixing=None,
    optimizer: OptimizerConfig | None = None,
) -> ImageResult:
    """Mix, contaminate and unmix a set of grayscale images.

    Steps: vectorise the ``p`` images to ``p x N``; mix with ``A``
    (``1 1^T + C`` unless ``mixing`` is given); add ``N(noise_mean,
    noise_sd^2)`` to every channel at a random ``contamination_fraction`` of
    pixel positions; optionally median-filter the mixed images for
    estimation; gamma-prewhiten and fit each method on ``subsample`` random
    pixels; apply ``W^T Sigma^{-1/2} (x - mu)`` to all original mixed pixels.

    Parameters
    ----------
    spec : ImageSpec
    gammas : (float, float)
        Prewhitening and gamma-ICA robustness levels.
    methods : sequence of {"gamma_ica", "mle_ica"}
    mixing : ndarray, optional
        Use this mixing matrix instead of a random draw.
    demixing : ndarray, optional
        Skip estimation and recover with ``demixing @ X``; reported as
        method ``"known"``.

    Returns
    -------
    ImageResult
        Per-method recovered channels, sign/permutation-aligned uint8
        images and best-match absolute correlations with the sources.
    """
    S, shape = load_sources(spec.source_paths)
    p, N = S.shape
    A = np.asarray(mixing, dtype=float) if mixing is not None else random_mixing(spec.mixing_seed, p)
    if A.shape != (p, p):
        raise ValueError(f"mixing must be {p} x {p}")
    X = A @ S
    mask = np.zeros(N, dtype=bool)
    n_bad = int(round(spec.contamination_fraction * N))
    if n_bad:
        rng = derive_rng(spec.mixing_seed, "image-contamination")
        pos = rng.choice(N, size=n_bad, replace=False)
        mask[pos] = True
        size = (1, n_bad) if spec.shared_noise else (p, n_bad)
        X[:, pos] += rng.normal(spec.noise_mean, spec.noise_sd, size=size)
    result = ImageResult(shape, S, X, A, mask)

    if demixing is not None:
        B = np.asarray(demixing, dtype=float)
        result.methods["known"] = _finish("known", B @ X, S, shape, spec.clip_percent)
        return result

    est_input = X
    if spec.filter:
        est_input = np.stack([median_filter(ch.reshape(shape)).reshape(-1) for ch in X])
    m = min(spec.subsample, N)
    idx = np.sort(derive_rng(spec.mixing_seed, "image-subsample").choice(N, size=m, replace=False))
    sub = est_input[:, idx]
    g_pre, g_ica = gammas
    white = prewhiten_fixed_point(sub, g_pre)
    Z = whiten(sub, white)
    pm = make_model(spec.model, p, spec.shape_c)
    opt = optimizer or OptimizerConfig()
    for method in methods:
        g = g_ica if method == GAMMA_ICA else 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonWhitenedInputWarning)
            est = fit_ica(Z, pm, opt.with_gamma(g))
        recovered = est.w.T @ whiten(X, white)
        result.methods[method] = _finish(method, recovered, S, shape, spec.clip_percent,
                                         w=est.w, whitening=white, converged=est.converged)
    return result
