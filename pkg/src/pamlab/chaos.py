"""Truncated iterated-integral expansion of the normalized field.

For a delta-to-point window (s, y) -> (t, x) the normalized field has the
formal expansion

    1 + sum_{k >= 1} beta^k I_k,

where I_k is the k-fold iterated noise integral of the chain of heat
kernels joining (s, y) to (t, x) through k intermediate cells at strictly
increasing times, divided by rho(t - s, x - y).  Truncations in k are an
independent small-beta oracle for the splitting solver: they use the exact
Gaussian kernels, not the solver's discrete heat step.

Evaluation is a k-pass dynamic program: one sweep over time steps carries k
running fields, each pushed forward by the sampled one-step kernel and fed
one noise factor per order, costing k * nt * nx^2 instead of the raw
(nt * nx)^k.  Strictly increasing time indices (no repeated cells) keep
every term mean zero.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

from . import noise as noise_mod
from . import solver as solver_mod
from .errors import BudgetError, QuadratureFailureError, RangeError
from .kernel import rho

MAX_ORDER = 3
MAX_MOMENT_ORDER = 8


def _window(grid, s, y, t, x):
    s_idx = solver_mod.t_index(grid, s)
    t_idx = solver_mod.t_index(grid, t)
    y_idx = solver_mod.x_index(grid, y)
    x_idx = solver_mod.x_index(grid, x)
    if t_idx <= s_idx:
        raise RangeError("chaos terms need s < t on the grid")
    return s_idx, t_idx, y_idx, x_idx


def _terms_sweep(xi_rows, K, n_batch, *, dt, dx, xs, s_idx, t_idx, y_idx, x_idx, t_min):
    """All iterated-integral terms 1..K in one time sweep.

    xi_rows(j) -> (B, nx) noise rows for absolute step j.  Returns (B, K).
    Accumulator A_i holds the order-i field propagated to the current row;
    feeding it one more noise factor yields order i+1.
    """
    steps = t_idx - s_idx
    nx = xs.size
    y = xs[y_idx]
    x = xs[x_idx]
    s_time = t_min + s_idx * dt
    t_time = t_min + t_idx * dt
    centers = s_time + (np.arange(steps) + 0.5) * dt
    norm = rho(t_time - s_time, x - y)
    scale = math.sqrt(dt * dx)

    # one-step kernel between adjacent cell-center rows, row-normalized by dx
    R = (rho(dt, xs[:, None] - xs[None, :]) * dx) if K >= 2 else None

    acc = [np.zeros((n_batch, nx)) for _ in range(K)]  # acc[i-1] feeds order i+1
    terms = np.zeros((n_batch, K))
    for j in range(steps):
        xi = xi_rows(s_idx + j)
        w_src = rho(centers[j] - s_time, xs - y)
        w_snk = rho(t_time - centers[j], x - xs)
        u = [xi * ((scale) * w_src)[None, :]]
        for i in range(1, K):
            # acc carries exactly one dx from the row-normalized kernel R
            u.append(xi * acc[i - 1] * (scale / dx))
        for i in range(K):
            terms[:, i] += u[i] @ w_snk
        if K >= 2 and j < steps - 1:
            for i in range(K - 1):
                acc[i] = (acc[i] + u[i]) @ R.T
    return terms / norm


def chaos_term(grid, k, s, y, t, x):
    """k-th iterated-integral term for one grid; k = 0 is exactly 1."""
    if k < 0:
        raise BudgetError("order must be >= 0")
    if k > MAX_ORDER:
        raise BudgetError(f"order {k} exceeds the cap {MAX_ORDER} (cost grows as (nt*nx)^k)")
    if k == 0:
        return 1.0
    s_idx, t_idx, y_idx, x_idx = _window(grid, s, y, t, x)
    terms = _terms_sweep(lambda j: grid.xi[j][None, :], k, 1,
                         dt=grid.dt, dx=grid.dx, xs=grid.xs(),
                         s_idx=s_idx, t_idx=t_idx, y_idx=y_idx, x_idx=x_idx,
                         t_min=grid.t_min)
    return float(terms[0, k - 1])


def chaos_terms(grid, K, s, y, t, x):
    """Terms 1..K in one sweep (list of floats)."""
    if K > MAX_ORDER:
        raise BudgetError(f"order {K} exceeds the cap {MAX_ORDER}")
    if K == 0:
        return []
    s_idx, t_idx, y_idx, x_idx = _window(grid, s, y, t, x)
    terms = _terms_sweep(lambda j: grid.xi[j][None, :], K, 1,
                         dt=grid.dt, dx=grid.dx, xs=grid.xs(),
                         s_idx=s_idx, t_idx=t_idx, y_idx=y_idx, x_idx=x_idx,
                         t_min=grid.t_min)
    return [float(v) for v in terms[0]]


def chaos_partial_sum(grid, K, beta, s, y, t, x):
    """sum_{k=0}^K beta^k * term_k."""
    total = 1.0
    for k, val in enumerate(chaos_terms(grid, K, s, y, t, x), start=1):
        total += beta**k * val
    return total


def partial_sums_ensemble(seeds, K, beta, *, dt, dx, nt, nx, s_idx, t_idx,
                          y_idx, x_idx, x_min=0.0, t_min=0.0):
    """Terms and partial sums for a batch of seeds: returns (terms, sums).

    terms has shape (B, K) (orders 1..K), sums has shape (B, K+1) with
    sums[:, K] the order-K truncation.  Noise rows come from the same
    per-cell lattice hash as `noise.generate`, so entry b matches
    chaos_term on generate(seeds[b], ...) exactly.
    """
    if K > MAX_ORDER:
        raise BudgetError(f"order {K} exceeds the cap {MAX_ORDER}")
    seeds = np.asarray(seeds, dtype=np.int64)
    xs = x_min + np.arange(nx) * dx
    kk = np.arange(nx, dtype=np.int64)

    def xi_rows(j):
        return noise_mod.lattice_normals_rows(seeds, j, kk)

    terms = _terms_sweep(xi_rows, K, seeds.size, dt=dt, dx=dx, xs=xs,
                         s_idx=s_idx, t_idx=t_idx, y_idx=y_idx, x_idx=x_idx,
                         t_min=t_min)
    sums = np.ones((seeds.size, K + 1))
    for k in range(1, K + 1):
        sums[:, k] = sums[:, k - 1] + beta**k * terms[:, k - 1]
    return terms, sums


def k1_weight_norm(grid, s, y, t, x):
    """Exact variance of the first-order term on this grid: sum of squared weights * dt dx."""
    s_idx, t_idx, y_idx, x_idx = _window(grid, s, y, t, x)
    xs = grid.xs()
    y_, x_ = xs[y_idx], xs[x_idx]
    s_time = grid.t_min + s_idx * grid.dt
    t_time = grid.t_min + t_idx * grid.dt
    centers = s_time + (np.arange(t_idx - s_idx) + 0.5) * grid.dt
    norm = rho(t_time - s_time, x_ - y_)
    total = 0.0
    for c in centers:
        w = rho(c - s_time, xs - y_) * rho(t_time - c, x_ - xs) / norm
        total += float(np.sum(w * w))
    return total * grid.dt * grid.dx


# ---------------------------------------------------------------------------
# second-moment coefficient series


def _chain_constants(k_max, tol=1e-10):
    """Constants for iterated convolutions of r^(-1/2), by recursive quadrature.

    c_1 = 1; c_{m+1} = c_m * int_0^1 u^((m-2)/2) (1-u)^(-1/2) du, evaluated
    with u = sin^2(theta) so the integrand 2 sin^(m-1) is smooth.  By
    homogeneity the m-fold convolution at argument t is c_m t^((m-2)/2).
    """
    cs = [1.0]
    for m in range(1, k_max + 1):
        def g(theta, m=m):
            return 2.0 * math.sin(theta) ** (m - 1)

        val, err = quad(g, 0.0, math.pi / 2.0, epsabs=1e-12, epsrel=1e-12)
        if err > tol:
            raise QuadratureFailureError(
                f"chain constant m={m} error {err:.2e} above {tol:.2e}", achieved_error=err)
        cs.append(cs[-1] * val)
    return cs


def second_moment_coefficients(t, K):
    """Coefficients a_k(t) of the squared-field series, a_0 = 1.

    a_k(t) = sqrt(t) (2 sqrt(pi))^(-k) * (conv of k+1 copies of r^(-1/2))(t):
    the squared-kernel slice identity iterates across the time simplex,
    leaving a pure power-law chain integral per order.
    """
    if K > MAX_MOMENT_ORDER:
        raise BudgetError(f"order {K} exceeds the cap {MAX_MOMENT_ORDER}")
    if t <= 0:
        raise RangeError("second-moment coefficients need t > 0")
    cs = _chain_constants(K)
    out = [1.0]
    for k in range(1, K + 1):
        ck1 = cs[k] * t ** ((k - 1) / 2.0)
        out.append(math.sqrt(t) * (2.0 * math.sqrt(math.pi)) ** (-k) * ck1)
    return out


def second_moment_series(beta, t, K):
    """sum_{k=0}^K beta^(2k) a_k(t), the truncated second moment of the normalized field."""
    a = second_moment_coefficients(t, K)
    return float(sum(beta ** (2 * k) * a[k] for k in range(K + 1)))
