"""Recursive multi-fidelity co-kriging over nested designs.

Levels 1..s model codes of increasing accuracy through the
autoregressive link

    Z_t(x) = rho_{t-1}(x) Z_{t-1}(x) + delta_t(x),
    rho_{t-1}(x) = g_{t-1}(x)' beta_rho,

with delta_t a Gaussian process independent of the levels below. When
every design is a subset of the one below it, the model splits into s
independent single-level kriging fits: level t >= 2 regresses z^t on
the extended trend matrix [G . z_{t-1}(D_t) | F_t] (scaling-basis
columns multiplied elementwise by the lower-level responses), whose
leading coefficient block is beta_rho. Prediction recurses bottom-up:

    mean_t(x) = rho_{t-1}(x) mean_{t-1}(x) + f_t(x)' beta_t + r_t(x)' R_t^{-1} resid_t
    var_t(x)  = rho_{t-1}(x)^2 var_{t-1}(x) + sigma_t^2 (1 - r_t(x)' R_t^{-1} r_t(x))

Per-level variance contributions come from telescoping the variance
recursion; they power the level-choice rules in the sequential module.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import SingularTrendError
from .kernels import (
    BasisSpec,
    KernelSpec,
    add_matched_nugget,
    basis_matrix,
    correlation_matrix,
    cross_correlation,
    _as_points,
)
from .kriging import (
    _DEFAULT_RESTARTS,
    _gls,
    _ml_fit,
    chol_nugget,
    variance_factor,
)


@dataclass
class LevelConfig:
    """Structure of one level: trend basis, kernel, and (above level 1)
    the scaling basis parameterizing rho."""

    trend: BasisSpec
    kernel: KernelSpec
    scaling: BasisSpec | None = None

    def __post_init__(self):
        if self.scaling is not None and self.scaling.dimension != self.trend.dimension:
            raise ValueError("scaling and trend bases disagree on dimension")


class MultiFidelityData:
    """Nested designs D_s subset ... subset D_1 with aligned responses.

    Nesting is exact point identity (bitwise equality of stored
    coordinates), never tolerance matching. Responses at a shared point
    may differ across levels; the codes are different.

    Parameters
    ----------
    designs : sequence of (n_t, d) arrays, cheapest level first.
    observations : sequence of (n_t,) arrays aligned with each design.
    """

    def __init__(self, designs, observations):
        if len(designs) < 1:
            raise ValueError("need at least one level")
        if len(designs) != len(observations):
            raise ValueError(
                f"{len(designs)} designs but {len(observations)} response sets"
            )
        self.designs = [_as_points(dd) for dd in designs]
        d = self.designs[0].shape[1]
        for t, dd in enumerate(self.designs):
            if dd.shape[1] != d:
                raise ValueError(f"design for level {t + 1} has dimension "
                                 f"{dd.shape[1]}, expected {d}")
        self.observations = [np.asarray(z, dtype=float).ravel()
                             for z in observations]
        for t, (dd, z) in enumerate(zip(self.designs, self.observations)):
            if len(z) != len(dd):
                raise ValueError(
                    f"level {t + 1}: {len(z)} responses for {len(dd)} points"
                )
            seen = set()
            for i, row in enumerate(dd):
                key = row.tobytes()
                if key in seen:
                    raise ValueError(
                        f"level {t + 1}: design point {i} duplicates an earlier one"
                    )
                seen.add(key)
        for t in range(1, len(self.designs)):
            lower = {row.tobytes() for row in self.designs[t - 1]}
            for i, row in enumerate(self.designs[t]):
                if row.tobytes() not in lower:
                    raise ValueError(
                        f"nesting violated: level {t + 1} point {i} is not a "
                        f"point of level {t}"
                    )

    @property
    def levels(self) -> int:
        return len(self.designs)

    @property
    def dimension(self) -> int:
        return self.designs[0].shape[1]

    def lower_level_values(self, level: int) -> np.ndarray:
        """Responses of level-1 code ``level - 1`` at the points of D_level.

        Well-defined because of nesting. ``level`` is 1-based and must
        be >= 2.
        """
        if not 2 <= level <= self.levels:
            raise ValueError(f"level must be in [2, {self.levels}]")
        below = self.designs[level - 2]
        index = {row.tobytes(): i for i, row in enumerate(below)}
        rows = [index[row.tobytes()] for row in self.designs[level - 1]]
        return self.observations[level - 2][rows]

    def with_point(self, x, values) -> "MultiFidelityData":
        """New data with ``x`` appended to levels 1..len(values).

        ``values`` holds the observed responses, cheapest level first.
        The point must be new to D_1 (hence to every level).
        """
        from .exceptions import DuplicateDesignPointError

        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dimension:
            raise ValueError(f"point has dimension {x.size}, expected "
                             f"{self.dimension}")
        values = np.asarray(values, dtype=float).ravel()
        if not 1 <= values.size <= self.levels:
            raise ValueError("need values for levels 1..l with l <= level count")
        if x.tobytes() in {row.tobytes() for row in self.designs[0]}:
            raise DuplicateDesignPointError(
                f"point {x} is already a level-1 design point"
            )
        designs = []
        observations = []
        for t in range(self.levels):
            if t < values.size:
                designs.append(np.vstack([self.designs[t], x[None, :]]))
                observations.append(np.append(self.observations[t], values[t]))
            else:
                designs.append(self.designs[t])
                observations.append(self.observations[t])
        return MultiFidelityData(designs, observations)


@dataclass
class FittedLevel:
    """One fitted stage of the recursion.

    ``rho_beta`` is None at level 1. ``alpha`` stores the solve
    R_t^{-1}(z^t - rho(D_t) . z_{t-1}(D_t) - F_t beta); ``lower_values``
    keeps z_{t-1}(D_t) so the residual can be rebuilt after enrichment.
    """

    design: np.ndarray
    y: np.ndarray
    trend: BasisSpec
    scaling: BasisSpec | None
    kernel: KernelSpec
    beta: np.ndarray
    rho_beta: np.ndarray | None
    sigma2: float
    chol: np.ndarray
    alpha: np.ndarray
    nll: float
    lower_values: np.ndarray | None = None

    @property
    def lengthscales(self) -> np.ndarray:
        return self.kernel.lengthscales

    def rho(self, x):
        """Scaling function g(x)' beta_rho; float for a single point."""
        if self.scaling is None:
            raise ValueError("level 1 has no scaling function")
        xa = np.asarray(x, dtype=float)
        out = basis_matrix(self.scaling, _as_points(xa)) @ self.rho_beta
        return float(out[0]) if xa.ndim == 1 else out


@dataclass
class LevelParameters:
    """Externally supplied parameters for one level (no estimation)."""

    lengthscales: np.ndarray
    sigma2: float
    beta: np.ndarray
    rho_beta: np.ndarray | None = None

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if self.rho_beta is not None:
            self.rho_beta = np.atleast_1d(np.asarray(self.rho_beta, dtype=float))
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass
class PredictionBreakdown:
    """Per-level posterior state at one point or a batch.

    Arrays have shape (s,) for a single point, (s, m) for a batch.
    ``contributions[t]`` is the share of the top-level variance
    attributable to level t+1; the shares sum to ``variances[-1]``.
    """

    means: np.ndarray
    variances: np.ndarray
    contributions: np.ndarray

    @property
    def mean(self):
        return self.means[-1]

    @property
    def variance(self):
        return self.variances[-1]


def extended_trend_matrix(config: LevelConfig, design, lower_values) -> np.ndarray:
    """[G . z_lower | F] on the given points; first block drives rho."""
    pts = _as_points(design)
    z = np.asarray(lower_values, dtype=float).ravel()
    g = basis_matrix(config.scaling, pts) * z[:, None]
    f = basis_matrix(config.trend, pts)
    return np.hstack([g, f])


def _check_extended_rank(h, q, level):
    """Raise SingularTrendError naming the rank-deficient block."""
    p_total = h.shape[1]
    if np.linalg.matrix_rank(h) >= p_total:
        return
    if np.linalg.matrix_rank(h[:, :q]) < q:
        block = ("scaling block (scaling basis times lower-level responses "
                 "is rank-deficient, e.g. responses identically zero)")
    elif np.linalg.matrix_rank(h[:, q:]) < p_total - q:
        block = "trend block"
    else:
        block = "combined scaling + trend blocks"
    raise SingularTrendError(
        f"level {level} extended trend matrix is singular: {block}"
    )


def fit_level(level: int, data: MultiFidelityData, config: LevelConfig,
              lower_values=None, bounds=None, restarts=_DEFAULT_RESTARTS,
              seed=0) -> FittedLevel:
    """Fit one level by concentrated maximum likelihood.

    Level 1 is a plain kriging fit. Level t >= 2 regresses z^t on the
    extended trend matrix; the leading coefficients become rho_beta.

    Parameters
    ----------
    level : 1-based level index.
    lower_values : optional z_{t-1}(D_t) override; defaults to the
        restriction supplied by ``data`` (levels >= 2 only).
    seed : int or numpy Generator; fit_multifidelity threads a single
        generator through all levels so level fits stay sequential and
        reproducible.
    """
    if not 1 <= level <= data.levels:
        raise ValueError(f"level must be in [1, {data.levels}]")
    design = data.designs[level - 1]
    y = data.observations[level - 1]
    rng = np.random.default_rng(seed)

    if level == 1:
        if config.scaling is not None:
            raise ValueError("level 1 takes no scaling basis")
        f = basis_matrix(config.trend, design)
        if len(design) < f.shape[1] + 1:
            raise ValueError(
                f"level 1 needs at least {f.shape[1] + 1} points, has {len(design)}"
            )
        kernel, beta, sigma2, lo, alpha, nll = _ml_fit(
            design, f, y, config.kernel.family, bounds, restarts, rng)
        return FittedLevel(design=design, y=y, trend=config.trend, scaling=None,
                           kernel=kernel, beta=beta, rho_beta=None,
                           sigma2=sigma2, chol=lo, alpha=alpha, nll=nll)

    if config.scaling is None:
        raise ValueError(f"level {level} needs a scaling basis")
    if lower_values is None:
        lower_values = data.lower_level_values(level)
    lower_values = np.asarray(lower_values, dtype=float).ravel()
    if lower_values.size != len(design):
        raise ValueError("lower-level responses do not align with the design")
    h = extended_trend_matrix(config, design, lower_values)
    q = config.scaling.size
    if len(design) < h.shape[1] + 1:
        raise ValueError(
            f"level {level} needs at least {h.shape[1] + 1} points, "
            f"has {len(design)}"
        )
    _check_extended_rank(h, q, level)
    kernel, coef, sigma2, lo, alpha, nll = _ml_fit(
        design, h, y, config.kernel.family, bounds, restarts, rng)
    return FittedLevel(design=design, y=y, trend=config.trend,
                       scaling=config.scaling, kernel=kernel,
                       beta=coef[q:], rho_beta=coef[:q], sigma2=sigma2,
                       chol=lo, alpha=alpha, nll=nll,
                       lower_values=lower_values)


def _rebuild_level(level: FittedLevel, design, y, lower_values):
    """Same kernel and sigma2 on possibly extended data; GLS refresh of
    the coefficients and the stored solve."""
    lo = chol_nugget(correlation_matrix(level.kernel, design))
    if level.scaling is None:
        f = basis_matrix(level.trend, design)
        beta, _ = _gls(lo, f, y)
        rho_beta = None
        resid = y - f @ beta
    else:
        cfg = LevelConfig(level.trend, level.kernel, level.scaling)
        h = extended_trend_matrix(cfg, design, lower_values)
        q = level.scaling.size
        coef, _ = _gls(lo, h, y)
        rho_beta, beta = coef[:q], coef[q:]
        resid = y - h @ coef
    alpha = solve_triangular(lo.T, solve_triangular(lo, resid, lower=True),
                             lower=False)
    return FittedLevel(design=design, y=y, trend=level.trend,
                       scaling=level.scaling, kernel=level.kernel,
                       beta=beta, rho_beta=rho_beta, sigma2=level.sigma2,
                       chol=lo, alpha=alpha, nll=float("nan"),
                       lower_values=lower_values if level.scaling is not None
                       else None)


class MultiFidelityModel:
    """Fitted s-level recursive co-kriging model.

    Immutable after construction; ``predict`` and
    ``hypothetical_variance_after`` are read-only.
    """

    def __init__(self, levels, data: MultiFidelityData, configs):
        if len(levels) != data.levels or len(configs) != data.levels:
            raise ValueError("levels, data, and configs disagree on level count")
        self.levels = list(levels)
        self.data = data
        self.configs = list(configs)

    @property
    def level_count(self) -> int:
        return len(self.levels)

    @property
    def dimension(self) -> int:
        return self.data.dimension

    @classmethod
    def from_parameters(cls, data: MultiFidelityData, configs,
                        parameters) -> "MultiFidelityModel":
        """Assemble a model from given parameters; nothing is estimated.

        Each level gets its correlation matrix factored and its
        residual solve stored, exactly as a fit would leave them.
        """
        if len(configs) != data.levels or len(parameters) != data.levels:
            raise ValueError("need one config and one parameter set per level")
        levels = []
        for t, (config, par) in enumerate(zip(configs, parameters), start=1):
            design = data.designs[t - 1]
            y = data.observations[t - 1]
            kernel = config.kernel.with_lengthscales(par.lengthscales)
            lo = chol_nugget(correlation_matrix(kernel, design))
            if t == 1:
                if config.scaling is not None or par.rho_beta is not None:
                    raise ValueError("level 1 takes no scaling")
                resid = y - basis_matrix(config.trend, design) @ par.beta
                lower_values = None
                rho_beta = None
            else:
                if config.scaling is None or par.rho_beta is None:
                    raise ValueError(f"level {t} needs scaling basis and rho_beta")
                lower_values = data.lower_level_values(t)
                h = extended_trend_matrix(config, design, lower_values)
                resid = y - h @ np.concatenate([par.rho_beta, par.beta])
                rho_beta = par.rho_beta
            alpha = solve_triangular(
                lo.T, solve_triangular(lo, resid, lower=True), lower=False)
            levels.append(FittedLevel(
                design=design, y=y, trend=config.trend, scaling=config.scaling,
                kernel=kernel, beta=par.beta, rho_beta=rho_beta,
                sigma2=float(par.sigma2), chol=lo, alpha=alpha,
                nll=float("nan"), lower_values=lower_values))
        return cls(levels, data, configs)

    def _level_terms(self, X):
        """Per-level posterior pieces at the probe batch X (m, d)."""
        means = []
        bases = []
        rhos = []
        mean_prev = None
        for k, lev in enumerate(self.levels):
            f = basis_matrix(lev.trend, X)
            c = add_matched_nugget(
                cross_correlation(lev.kernel, lev.design, X), lev.design, X)
            base = lev.sigma2 * variance_factor(lev.chol, c)
            m = f @ lev.beta + c.T @ lev.alpha
            if k > 0:
                rho = basis_matrix(lev.scaling, X) @ lev.rho_beta
                rhos.append(rho)
                m = rho * mean_prev + m
            means.append(m)
            bases.append(base)
            mean_prev = m
        return means, bases, rhos

    def predict(self, x) -> PredictionBreakdown:
        """Posterior means, variances, and variance contributions, all levels.

        ``x`` is one point (d,) or a batch (m, d); outputs have shape
        (s,) or (s, m) accordingly.
        """
        xa = np.asarray(x, dtype=float)
        single = xa.ndim == 1
        X = _as_points(xa, self.dimension)
        means, bases, rhos = self._level_terms(X)
        s = len(self.levels)
        variances = [bases[0]]
        for k in range(1, s):
            variances.append(rhos[k - 1] ** 2 * variances[k - 1] + bases[k])
        contributions = [None] * s
        prod = np.ones(X.shape[0])
        for k in range(s - 1, -1, -1):
            contributions[k] = bases[k] * prod
            if k > 0:
                prod = prod * rhos[k - 1] ** 2
        out = (np.vstack(means), np.vstack(variances), np.vstack(contributions))
        if single:
            out = tuple(a[:, 0] for a in out)
        return PredictionBreakdown(*out)

    def hypothetical_variance_after(self, x, level: int):
        """Per-level variances at x if codes 1..level were run at x.

        Levels up to ``level`` would interpolate x, so their variance is
        zero; higher levels keep only the terms the extra run cannot
        remove. Shape (s,) for one point, (s, m) for a batch. Nothing is
        refitted; only the variance recursion is re-telescoped at x.
        """
        s = len(self.levels)
        if not 1 <= level <= s:
            raise ValueError(f"level must be in [1, {s}]")
        xa = np.asarray(x, dtype=float)
        single = xa.ndim == 1
        X = _as_points(xa, self.dimension)
        m = X.shape[0]
        out = [np.zeros(m) for _ in range(level)]
        prev = np.zeros(m)
        for k in range(level, s):
            lev = self.levels[k]
            c = add_matched_nugget(
                cross_correlation(lev.kernel, lev.design, X), lev.design, X)
            base = lev.sigma2 * variance_factor(lev.chol, c)
            rho = basis_matrix(lev.scaling, X) @ lev.rho_beta
            prev = rho ** 2 * prev + base
            out.append(prev)
        stacked = np.vstack(out)
        return stacked[:, 0] if single else stacked

    def refit(self, data: MultiFidelityData) -> "MultiFidelityModel":
        """New model on ``data`` with hyperparameters frozen.

        Kernel lengthscales and process variances carry over unchanged;
        trend and scaling coefficients are re-estimated by GLS and the
        stored solves rebuilt. Used by enrichment in frozen mode.
        """
        if data.levels != self.level_count or data.dimension != self.dimension:
            raise ValueError("replacement data has a different shape")
        levels = []
        for t, lev in enumerate(self.levels, start=1):
            lower = data.lower_level_values(t) if t > 1 else None
            levels.append(_rebuild_level(lev, data.designs[t - 1],
                                         data.observations[t - 1], lower))
        return MultiFidelityModel(levels, data, self.configs)


def fit_multifidelity(data: MultiFidelityData, configs, bounds=None,
                      restarts=_DEFAULT_RESTARTS, seed=0) -> MultiFidelityModel:
    """Fit all levels bottom-up with one shared restart generator.

    Parameters
    ----------
    bounds : None for per-level defaults, one (lo, hi) pair for every
        level, or a list with one entry (pair or None) per level.
    seed : seeds a single generator consumed sequentially by the level
        fits, so a 1-level fit consumes randomness exactly like a plain
        kriging fit with the same seed.
    """
    if len(configs) != data.levels:
        raise ValueError(f"{len(configs)} configs for {data.levels} levels")
    if configs[0].scaling is not None:
        raise ValueError("level 1 takes no scaling basis")
    for t, config in enumerate(configs[1:], start=2):
        if config.scaling is None:
            raise ValueError(f"level {t} needs a scaling basis")
    if bounds is None or isinstance(bounds, tuple):
        per_level = [bounds] * data.levels
    else:
        per_level = list(bounds)
        if len(per_level) != data.levels:
            raise ValueError("need one bounds entry per level")
    rng = np.random.default_rng(seed)
    levels = [
        fit_level(t, data, configs[t - 1], bounds=per_level[t - 1],
                  restarts=restarts, seed=rng)
        for t in range(1, data.levels + 1)
    ]
    return MultiFidelityModel(levels, data, configs)
