"""Stationary correlation kernels and regression basis functions.

Two kernel families are supported, both positive-valued with r(x, x) = 1:

* ``squared-exponential``:  r(x, y) = exp(-sum_i ((x_i - y_i) / theta_i)^2)
* ``matern-5/2``:           r(x, y) = (1 + sqrt(5) h + 5 h^2 / 3) exp(-sqrt(5) h),
  with h the Euclidean norm of the lengthscale-scaled difference.

Lengthscales are anisotropic (one per input dimension). Correlation
matrices are exactly symmetric with unit diagonal; ``NUGGET`` is the
additive diagonal term used everywhere a matrix gets factorized.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

# Additive jitter applied to correlation-matrix diagonals before Cholesky.
# Deterministic codes are noise-free: this is numerical regularization only.
NUGGET = 1e-10

SQUARED_EXPONENTIAL = "squared-exponential"
MATERN52 = "matern-5/2"
KERNEL_FAMILIES = (SQUARED_EXPONENTIAL, MATERN52)

CONSTANT = "constant"
LINEAR = "linear"
BASIS_KINDS = (CONSTANT, LINEAR)


@dataclass
class KernelSpec:
    """Stationary correlation kernel: family name plus per-dimension lengthscales.

    ``lengthscales`` may be None for a not-yet-fitted kernel; every
    evaluation routine requires it to be set and strictly positive.
    Instances are treated as immutable.
    """

    family: str
    lengthscales: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.lengthscales is not None:
            ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
            if ls.ndim != 1:
                raise ValueError("lengthscales must be a 1-d array")
            if not np.all(ls > 0):
                raise ValueError("lengthscales must be strictly positive")
            self.lengthscales = ls

    def with_lengthscales(self, theta) -> "KernelSpec":
        return KernelSpec(self.family, np.asarray(theta, dtype=float))


@dataclass
class BasisSpec:
    """Regression basis: ``constant`` is (1,), ``linear`` is (1, x_1, ..., x_d)."""

    kind: str
    dimension: int

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def size(self) -> int:
        return 1 if self.kind == CONSTANT else self.dimension + 1


def _as_points(x, d=None) -> np.ndarray:
    """Coerce to an (n, d) float array; a bare (d,) vector becomes one row."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2:
        raise ValueError("points must form a 2-d array")
    if d is not None and pts.shape[1] != d:
        raise ValueError(f"points have dimension {pts.shape[1]}, expected {d}")
    return pts


def cross_correlation(spec: KernelSpec, xa, xb) -> np.ndarray:
    """Correlation matrix between two point sets, shape (na, nb).

    Parameters
    ----------
    spec : KernelSpec
        Kernel with lengthscales set.
    xa, xb : array_like
        Point sets of shape (na, d) and (nb, d); a single point may be
        passed as a (d,) vector.
    """
    if spec.lengthscales is None:
        raise ValueError("kernel lengthscales are not set")
    theta = spec.lengthscales
    a = _as_points(xa, theta.size)
    b = _as_points(xb, theta.size)
    if spec.family == SQUARED_EXPONENTIAL:
        d2 = cdist(a / theta, b / theta, "sqeuclidean")
        return np.exp(-d2)
    h = cdist(a / theta, b / theta, "euclidean")
    u = np.sqrt(5.0) * h
    return (1.0 + u + (5.0 / 3.0) * h * h) * np.exp(-u)


def correlation(spec: KernelSpec, x, y) -> float:
    """Correlation between two points; symmetric, equals 1 at x = y."""
    return float(cross_correlation(spec, x, y)[0, 0])


def correlation_matrix(spec: KernelSpec, points) -> np.ndarray:
    """Symmetric correlation matrix of a point set, unit diagonal, no nugget."""
    pts = _as_points(points)
    if pts.shape[0] < 1:
        raise ValueError("need at least one point")
    r = cross_correlation(spec, pts, pts)
    np.fill_diagonal(r, 1.0)
    return r


def add_nugget(r: np.ndarray) -> np.ndarray:
    """Return a copy of ``r`` with NUGGET added to the diagonal."""
    out = np.array(r, dtype=float, copy=True)
    out[np.diag_indices_from(out)] += NUGGET
    return out


def add_matched_nugget(c: np.ndarray, xa, xb) -> np.ndarray:
    """Return a copy of ``c`` with NUGGET added where xa[i] equals xb[j] exactly.

    The nugget acts as a white-noise component of the process: it is
    carried by a point, not a location, so only bitwise-identical rows
    (the same stored point appearing in both sets) pick up the term.
    Keeps predictors evaluated at design points consistent with the
    nugget-regularized training matrix, so they interpolate exactly.
    """
    a = _as_points(xa)
    b = _as_points(xb, a.shape[1])
    out = np.array(c, dtype=float, copy=True)
    if out.shape != (a.shape[0], b.shape[0]):
        raise ValueError("matrix shape does not match the point sets")
    index = {}
    for j, row in enumerate(b):
        index.setdefault(row.tobytes(), []).append(j)
    for i, row in enumerate(a):
        for j in index.get(row.tobytes(), ()):
            out[i, j] += NUGGET
    return out


def basis_matrix(spec: BasisSpec, points) -> np.ndarray:
    """Evaluate the basis at each point: (n, p) matrix, row i = basis(points_i)."""
    pts = _as_points(points, spec.dimension)
    n = pts.shape[0]
    if spec.kind == CONSTANT:
        return np.ones((n, 1))
    return np.hstack([np.ones((n, 1)), pts])
