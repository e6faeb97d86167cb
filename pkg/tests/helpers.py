"""Shared test utilities: random SPD factories and independent oracles.

The oracles here (finite differences, closed-form Gaussian moments) are
deliberately written from first principles so they stay independent of
the library code they check.
"""

import itertools

import numpy as np

from wgfvi import GaussianParam


def rand_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def rand_spd(rng, d, log_eig_range=(-2.0, 2.0)):
    """Random SPD matrix with eigenvalues loguniform in 10^range (cond <= 1e4)."""
    eigs = 10.0 ** rng.uniform(*log_eig_range, size=d)
    q = rand_orthogonal(rng, d)
    return (q * eigs) @ q.T


def rand_gaussian(rng, d, log_eig_range=(-1.0, 1.0), mean_scale=2.0):
    return GaussianParam(
        mean_scale * rng.standard_normal(d), rand_spd(rng, d, log_eig_range)
    )


def finite_diff_grad(f, x, h=None):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * (1.0 + np.linalg.norm(x))
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def finite_diff_jac(f, x, h=None):
    """Central-difference Jacobian of a vector function (rows: outputs)."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * (1.0 + np.linalg.norm(x))
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def gaussian_monomial_moment(mean, cov, idx):
    """E[prod_j x_{idx_j}] under N(mean, cov) for len(idx) <= 3 (Isserlis)."""
    m, s = np.asarray(mean), np.asarray(cov)
    if len(idx) == 0:
        return 1.0
    if len(idx) == 1:
        return m[idx[0]]
    if len(idx) == 2:
        i, j = idx
        return s[i, j] + m[i] * m[j]
    i, j, k = idx
    return m[i] * m[j] * m[k] + m[i] * s[j, k] + m[j] * s[i, k] + m[k] * s[i, j]


def monomial_indices(d, max_degree=3):
    """All monomials of total degree 1..max_degree as index tuples."""
    out = []
    for deg in range(1, max_degree + 1):
        out.extend(itertools.combinations_with_replacement(range(d), deg))
    return out
