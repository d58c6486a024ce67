"""Shared test utilities: prior sampling and dense-inverse reference formulas."""

import numpy as np

from mfkrig.kernels import KernelSpec, add_nugget, correlation_matrix


def sample_gp(rng, points, kernel: KernelSpec, sigma2=1.0, mean=0.0):
    """Draw one realization of a zero/constant-mean GP at ``points``."""
    r = add_nugget(correlation_matrix(kernel, points))
    lo = np.linalg.cholesky(r)
    return mean + np.sqrt(sigma2) * (lo @ rng.standard_normal(len(points)))


def dense_gls(r, f, y):
    """GLS through explicit inverses: the independent oracle for gls_fit."""
    rn = add_nugget(np.asarray(r, dtype=float))
    ri = np.linalg.inv(rn)
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.linalg.solve(f.T @ ri @ f, f.T @ ri @ y)
    resid = y - f @ beta
    sigma2 = float(resid @ ri @ resid) / (len(y) - f.shape[1])
    return beta, sigma2


def dense_predict(design, y, trend_matrix, beta, kernel, sigma2, x_matrix,
                  trend_at_x):
    """Posterior mean/variance via explicit matrix inversion."""
    rn = add_nugget(correlation_matrix(kernel, design))
    ri = np.linalg.inv(rn)
    from mfkrig.kernels import cross_correlation

    c = cross_correlation(kernel, design, x_matrix)
    mean = trend_at_x @ beta + c.T @ (ri @ (y - trend_matrix @ beta))
    var = sigma2 * (1.0 - np.einsum("ij,ij->j", c, ri @ c))
    return mean, var


def draw_nested_designs(rng, sizes, d):
    """Random designs on [0,1]^d nested by subsetting rows, largest first."""
    designs = [rng.uniform(0.0, 1.0, size=(sizes[0], d))]
    for n in sizes[1:]:
        idx = rng.choice(len(designs[-1]), size=n, replace=False)
        designs.append(designs[-1][idx])
    return designs


def draw_ar1_data(rng, designs, rho_values, kernels, sigma2s):
    """Sample responses from the autoregressive chain on nested designs.

    ``rho_values[t]`` scales level t+1's contribution of level t and may
    be a scalar or a per-point array aligned with designs[t + 1].
    Returns the list of response vectors, cheapest level first.
    """
    observations = [sample_gp(rng, designs[0], kernels[0], sigma2=sigma2s[0])]
    for t in range(1, len(designs)):
        index = {row.tobytes(): i for i, row in enumerate(designs[t - 1])}
        rows = [index[row.tobytes()] for row in designs[t]]
        lower = observations[t - 1][rows]
        delta = sample_gp(rng, designs[t], kernels[t], sigma2=sigma2s[t])
        observations.append(rho_values[t - 1] * lower + delta)
    return observations
