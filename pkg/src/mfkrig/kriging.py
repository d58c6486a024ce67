"""Single-level Gaussian-process regression (universal kriging).

Trend coefficients and process variance come from generalized least
squares; lengthscales from multi-start Nelder-Mead minimization of the
concentrated negative log-likelihood

    (n - p) * log(sigma2_hat(theta)) + log det R(theta)

over log-lengthscales. The posterior at a new point x is

    mean     = f(x)' beta_hat + r(x)' R^{-1} (y - F beta_hat)
    variance = sigma2_hat * (1 - r(x)' R^{-1} r(x))

with the plug-in trend (no trend-estimation inflation term).
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular, lstsq, LinAlgError

from .exceptions import (
    FitFailedError,
    IllConditionedError,
    InternalConsistencyError,
    SingularTrendError,
)
from .kernels import (
    BasisSpec,
    KernelSpec,
    add_matched_nugget,
    add_nugget,
    basis_matrix,
    correlation_matrix,
    cross_correlation,
    _as_points,
)

# sigma2_hat below (this * data scale)^2 is treated as an exactly-zero
# residual: it is floored so the fitted variance stays positive and the
# concentrated NLL finite on degenerate (exact-relation) datasets.
_SIGMA2_FLOOR_REL = 1e-12

# Variance factors in [-1e-9, 0) are round-off and clamp to 0; anything
# more negative indicates a bug, not noise.
_VARIANCE_SLACK = 1e-9

_DEFAULT_RESTARTS = 5


@dataclass
class KrigingProblem:
    """Design points, responses, and the trend/kernel structure to fit.

    Requires n >= p + 1 residual degrees of freedom and pairwise
    distinct design points.
    """

    design: np.ndarray
    y: np.ndarray
    trend: BasisSpec
    kernel: KernelSpec

    def __post_init__(self):
        self.design = _as_points(self.design)
        self.y = np.asarray(self.y, dtype=float).ravel()
        n, d = self.design.shape
        if self.y.size != n:
            raise ValueError(f"{self.y.size} responses for {n} design points")
        if self.trend.dimension != d:
            raise ValueError("trend basis dimension does not match design")
        if n < self.trend.size + 1:
            raise ValueError(
                f"need at least {self.trend.size + 1} points for a "
                f"{self.trend.kind} trend in dimension {d}, got {n}"
            )
        seen = set()
        for i, row in enumerate(self.design):
            key = row.tobytes()
            if key in seen:
                raise ValueError(f"design point {i} duplicates an earlier point")
            seen.add(key)


@dataclass
class FittedKriging:
    """Immutable result of a single-level fit; ``predict`` is thread-safe.

    ``chol`` is the lower Cholesky factor of the nugget-regularized
    correlation matrix and ``alpha`` the stored solve
    R^{-1}(y - F beta).
    """

    design: np.ndarray
    y: np.ndarray
    trend: BasisSpec
    kernel: KernelSpec
    beta: np.ndarray
    sigma2: float
    chol: np.ndarray
    alpha: np.ndarray
    nll: float

    @property
    def lengthscales(self) -> np.ndarray:
        return self.kernel.lengthscales

    def predict(self, x):
        """Posterior mean and variance at one point (d,) or a batch (m, d).

        Returns a pair of floats for a single point, a pair of (m,)
        arrays for a batch. Variance is clamped at zero against
        round-off.
        """
        xa = np.asarray(x, dtype=float)
        single = xa.ndim == 1
        X = _as_points(xa, self.design.shape[1])
        F = basis_matrix(self.trend, X)
        C = cross_correlation(self.kernel, self.design, X)
        # probes that are stored design points carry the nugget term too,
        # otherwise they would miss the observed value by nugget * alpha
        C = add_matched_nugget(C, self.design, X)
        mean = F @ self.beta + C.T @ self.alpha
        var = self.sigma2 * variance_factor(self.chol, C)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var


def chol_nugget(r: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``r`` + nugget, or IllConditionedError."""
    try:
        return cholesky(add_nugget(r), lower=True)
    except LinAlgError as exc:
        raise IllConditionedError(
            f"correlation matrix of size {r.shape[0]} is not positive definite "
            "even after the nugget"
        ) from exc


def variance_factor(chol_lower: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Clamped 1 - r' R^{-1} r for each column of the cross-correlation ``c``."""
    v = solve_triangular(chol_lower, c, lower=True)
    factor = 1.0 - np.einsum("ij,ij->j", v, v)
    bad = factor < -_VARIANCE_SLACK
    if np.any(bad):
        raise InternalConsistencyError(
            f"predicted variance factor {factor[bad].min():.3e} is below "
            f"-{_VARIANCE_SLACK:g}; round-off alone cannot explain this"
        )
    return np.maximum(factor, 0.0)


def _gls(chol_lower, f, y):
    """GLS on a pre-factored correlation matrix.

    Whitens both sides by the Cholesky factor and solves the resulting
    ordinary least-squares problem. Returns (beta, sigma2, whitened
    residual sum of squares is folded into sigma2 with the n - p divisor).
    """
    n, p = f.shape
    fw = solve_triangular(chol_lower, f, lower=True)
    yw = solve_triangular(chol_lower, y, lower=True)
    beta, _, rank, _ = lstsq(fw, yw)
    if rank < p:
        raise SingularTrendError(
            f"trend matrix has rank {rank} < {p}; columns are collinear"
        )
    resid = yw - fw @ beta
    sigma2 = float(resid @ resid) / (n - p)
    return beta, sigma2

def gls_fit(r: np.ndarray, f: np.ndarray, y: np.ndarray):
    """Generalized least squares under correlation matrix ``r``.

    beta_hat = (F' R^{-1} F)^{-1} F' R^{-1} y and
    sigma2_hat = (y - F beta)' R^{-1} (y - F beta) / (n - p), computed
    through the nugget-regularized Cholesky factor of ``r``.

    Parameters
    ----------
    r : (n, n) correlation matrix (without nugget).
    f : (n, p) trend matrix, full column rank.
    y : (n,) responses.

    Returns
    -------
    (beta, sigma2) : ((p,) ndarray, float). sigma2 is exactly as
    estimated and may be 0 for exact-fit data.

    Raises
    ------
    SingularTrendError, IllConditionedError
    """
    r = np.asarray(r, dtype=float)
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if f.ndim != 2 or f.shape[0] != r.shape[0] or y.size != r.shape[0]:
        raise ValueError("shapes of R, F, y are inconsistent")
    if r.shape[0] <= f.shape[1]:
        raise ValueError("need n > p residual degrees of freedom")
    return _gls(chol_nugget(r), f, y)


def _sigma2_floor(y):
    scale = max(1.0, float(np.max(np.abs(y))) if y.size else 1.0)
    return (_SIGMA2_FLOOR_REL * scale) ** 2


def _nll_terms(design, trend_matrix, y, kernel):
    """(nll, beta, sigma2_floored, chol, logdet) for fixed lengthscales."""
    lo = chol_nugget(correlation_matrix(kernel, design))
    beta, sigma2 = _gls(lo, trend_matrix, y)
    sigma2 = max(sigma2, _sigma2_floor(y))
    logdet = 2.0 * float(np.sum(np.log(np.diag(lo))))
    n, p = trend_matrix.shape
    nll = (n - p) * np.log(sigma2) + logdet
    return nll, beta, sigma2, lo


def concentrated_nll(problem: KrigingProblem, theta) -> float:
    """Concentrated (profile) negative log-likelihood at lengthscales theta.

    beta and sigma2 are concentrated out in closed form; the returned
    value is (n - p) log sigma2_hat(theta) + log det R(theta).

    Raises IllConditionedError when R(theta) cannot be factored or the
    result is not finite.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not np.all(theta > 0):
        raise ValueError("lengthscales must be strictly positive")
    f = basis_matrix(problem.trend, problem.design)
    kernel = KernelSpec(problem.kernel.family, theta)
    nll, _, _, _ = _nll_terms(problem.design, f, problem.y, kernel)
    if not np.isfinite(nll):
        raise IllConditionedError(f"non-finite likelihood at theta={theta}")
    return float(nll)


def default_theta_bounds(design) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension lengthscale box [1e-2, 10] * (design side length)."""
    pts = _as_points(design)
    side = pts.max(axis=0) - pts.min(axis=0)
    side[side <= 0] = 1.0
    return 1e-2 * side, 10.0 * side


def _normalize_bounds(bounds, design, d):
    if bounds is None:
        lo, hi = default_theta_bounds(design)
    else:
        lo = np.broadcast_to(np.asarray(bounds[0], dtype=float), (d,)).copy()
        hi = np.broadcast_to(np.asarray(bounds[1], dtype=float), (d,)).copy()
    if not np.all(lo > 0) or np.any(lo > hi):
        raise ValueError("bounds must satisfy 0 < lower <= upper")
    return lo, hi


def _ml_fit(design, trend_matrix, y, family, bounds, restarts, rng):
    """Multi-start concentrated-ML engine shared with the multi-level fit.

    Minimizes the concentrated NLL over log-lengthscales with
    Nelder-Mead, one run per start (start 0 is the log-box midpoint,
    the rest are drawn uniformly from the box with ``rng``). Returns
    (kernel, beta, sigma2, chol, alpha, nll).
    """
    from scipy.optimize import minimize

    design = _as_points(design)
    y = np.asarray(y, dtype=float).ravel()
    n, d = design.shape
    lo, hi = _normalize_bounds(bounds, design, d)
    log_lo, log_hi = np.log(lo), np.log(hi)

    def objective(z):
        theta = np.exp(np.clip(z, log_lo, log_hi))
        try:
            nll, _, _, _ = _nll_terms(design, trend_matrix, y, KernelSpec(family, theta))
        except (IllConditionedError, SingularTrendError):
            return np.inf
        return nll if np.isfinite(nll) else np.inf

    starts = [0.5 * (log_lo + log_hi)]
    for _ in range(max(0, restarts - 1)):
        starts.append(rng.uniform(log_lo, log_hi))

    best = None
    for idx, z0 in enumerate(starts):
        f0 = objective(z0)
        if not np.isfinite(f0):
            continue
        res = minimize(objective, z0, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": 400 * d})
        fun, z = (res.fun, res.x) if res.fun <= f0 else (f0, z0)
        if best is None or fun < best[0]:
            best = (fun, np.clip(z, log_lo, log_hi))
    if best is None:
        raise FitFailedError(
            f"all {len(starts)} likelihood starts were ill-conditioned"
        )

    kernel = KernelSpec(family, np.exp(best[1]))
    nll, beta, sigma2, lo_chol = _nll_terms(design, trend_matrix, y, kernel)
    resid = y - trend_matrix @ beta
    alpha = solve_triangular(
        lo_chol.T, solve_triangular(lo_chol, resid, lower=True), lower=False
    )
    return kernel, beta, sigma2, lo_chol, alpha, float(nll)


def fit(problem: KrigingProblem, bounds=None, restarts=_DEFAULT_RESTARTS,
        seed=0) -> FittedKriging:
    """Fit trend, variance, and lengthscales by concentrated ML.

    Parameters
    ----------
    problem : KrigingProblem
    bounds : optional (lower, upper) lengthscale bounds, scalars or
        per-dimension arrays. Defaults to [1e-2, 10] times the design
        side length per dimension.
    restarts : number of Nelder-Mead starts (the first is the log-box
        midpoint, the rest random).
    seed : int or numpy Generator; fixes the restart sampling.

    Raises
    ------
    FitFailedError if every start is ill-conditioned.
    """
    rng = np.random.default_rng(seed)
    f = basis_matrix(problem.trend, problem.design)
    kernel, beta, sigma2, lo, alpha, nll = _ml_fit(
        problem.design, f, problem.y, problem.kernel.family,
        bounds, restarts, rng,
    )
    return FittedKriging(
        design=problem.design, y=problem.y, trend=problem.trend,
        kernel=kernel, beta=beta, sigma2=sigma2, chol=lo, alpha=alpha, nll=nll,
    )
