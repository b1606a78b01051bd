"""Quenched path measures reweighted by the discrete Green kernels.

For a fixed noise realization and inverse temperature, the path law between
endpoint data (a point or a positive measure at each end) has
finite-dimensional tables given by normalized products of window kernels.
Everything here works off those exact tables: joint tables, sequential
conditioned sampling (endpoint constraints hold exactly for point data),
ordered-tuple determinants of the kernel matrix, the non-intersection
determinant formula with a Monte Carlo cross-check, stochastic ordering of
one-point laws, and the four-term total-variation bound.

The kernel matrix built from the splitting scheme is a product of
nonnegative tridiagonal steps with positive diagonals, so its order-2
minors are nonnegative; one-point conditionals are therefore
likelihood-ratio ordered in the start point, which is what the dominance
check exercises.  Determinants of order n are structurally zero once a pair
(x_j, y_i) leaves the discrete propagation band |k - l| <= steps; such
calls are rejected rather than reported as counterexamples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import noise as noise_mod
from . import solver as solver_mod
from .errors import (
    BandConnectivityError,
    BudgetError,
    ConfigurationError,
    DomainError,
    PositivityViolationError,
    RangeError,
)
from .kernel import rho

MAX_DET_ORDER = 6
MAX_TABLE_TIMES = 3


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class PolymerSpec:
    """Endpoint data for one path measure on a noise grid window."""

    grid: noise_mod.NoiseGrid
    beta: float
    s_index: int
    t_index: int
    start: object  # ("point", k) or ("measure", MeasureIC)
    end: object

    @property
    def steps(self):
        return self.t_index - self.s_index


def make_spec(grid, beta, s, t, start, end):
    """Build a spec; float endpoints become points, MeasureIC stays a measure."""
    s_idx = solver_mod.t_index(grid, s)
    t_idx = solver_mod.t_index(grid, t)
    if t_idx <= s_idx:
        raise RangeError("polymer spec needs s < t")

    def norm(val):
        if isinstance(val, solver_mod.MeasureIC):
            return ("measure", val)
        return ("point", solver_mod.x_index(grid, float(val)))

    return PolymerSpec(grid=grid, beta=float(beta), s_index=s_idx,
                       t_index=t_idx, start=norm(start), end=norm(end))


def _start_masses(spec):
    kind, val = spec.start
    m = np.zeros(spec.grid.nx)
    if kind == "point":
        m[val] = 1.0
        return m
    return val.cell_masses(spec.grid)


def _end_masses(spec):
    kind, val = spec.end
    m = np.zeros(spec.grid.nx)
    if kind == "point":
        m[val] = 1.0
        return m
    return val.cell_masses(spec.grid)


def _forward_values(spec, to_index):
    """Z(to, z | start-data) as values on the grid."""
    w = _start_masses(spec) / spec.grid.dx
    return solver_mod.evolve_vector(spec.grid, spec.beta, spec.s_index, to_index, w)


def _backward_values(spec, from_index):
    """Z(end-data | from, z) as values on the grid."""
    m = _end_masses(spec)
    return solver_mod.evolve_vector_backward(
        spec.grid, spec.beta, from_index, spec.t_index, m) / spec.grid.dx


def partition_value(spec):
    """Total mass Z(end | start); must be strictly positive."""
    f = _forward_values(spec, spec.t_index)
    z = float(_end_masses(spec) @ f)
    if not (z > 0 and math.isfinite(z)):
        raise PositivityViolationError(f"partition value {z} is not strictly positive")
    return z


# ---------------------------------------------------------------------------
# finite-dimensional tables


@dataclass(frozen=True)
class FddTable:
    """Joint probability table of the path at interior times (cells on each axis)."""

    times: tuple
    indices: tuple
    xs: np.ndarray
    table: np.ndarray

    def marginal(self, axis=0):
        axes = tuple(i for i in range(self.table.ndim) if i != axis)
        return self.table.sum(axis=axes) if axes else self.table.copy()


def fdd(spec, times):
    """Exact joint table at strictly increasing interior times.

    Tables are normalized probability masses over grid cells; the number of
    times is capped (memory grows as nx^k).
    """
    idx = [solver_mod.t_index(spec.grid, u) for u in np.atleast_1d(times)]
    if any(i2 <= i1 for i1, i2 in zip(idx, idx[1:])):
        raise RangeError("times must be strictly increasing")
    if idx and (idx[0] <= spec.s_index or idx[-1] >= spec.t_index):
        raise RangeError("times must lie strictly inside the window")
    k = len(idx)
    if k == 0:
        raise RangeError("need at least one time")
    if k > MAX_TABLE_TIMES:
        raise BudgetError(f"{k} times exceeds the table cap {MAX_TABLE_TIMES}")
    dx = spec.grid.dx
    f = _forward_values(spec, idx[0])
    b = _backward_values(spec, idx[-1])
    if k == 1:
        mass = f * b * dx
    else:
        kernels = [solver_mod.green_field(spec.grid, spec.beta, i1, i2).P
                   for i1, i2 in zip(idx, idx[1:])]
        mass = f * dx
        for K in kernels:
            mass = mass[..., None] * K.T  # attach next axis: mass[z_i, z_{i+1}]
        mass = mass * b
    tot = mass.sum()
    if not tot > 0:
        raise PositivityViolationError("joint table has zero mass")
    xs = spec.grid.xs()
    tvals = tuple(spec.grid.t_min + i * spec.grid.dt for i in idx)
    return FddTable(times=tvals, indices=tuple(idx), xs=xs, table=mass / tot)


# ---------------------------------------------------------------------------
# path sampling


@dataclass(frozen=True)
class PolymerPath:
    times: np.ndarray
    positions: np.ndarray
    holder_stats: dict


@dataclass(frozen=True)
class PathEnsemble:
    times: np.ndarray
    positions: np.ndarray  # (n_paths, n_times)
    index_times: tuple


def _stride_indices(spec, stride):
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    ids = list(range(spec.s_index, spec.t_index, int(stride)))
    if ids[-1] != spec.t_index:
        ids.append(spec.t_index)
    return ids


def sample_paths(spec, n_paths, stride=1, seed=0, at_indices=None):
    """Draw paths by sequential conditioning on the stride times.

    Transition out of (tau_i, z): mass proportional to P_i[z', z] * b_{i+1}(z').
    Point endpoints are hit exactly.  Uniform variates come from a counter
    hash of (seed, step, path), so path p is the same whatever the batch.
    """
    ids = list(at_indices) if at_indices is not None else _stride_indices(spec, stride)
    if ids[0] != spec.s_index or ids[-1] != spec.t_index or \
            any(b <= a for a, b in zip(ids, ids[1:])):
        raise ConfigurationError("sample times must increase from s_index to t_index")
    grid, beta, dx = spec.grid, spec.beta, spec.grid.dx
    nx = grid.nx
    m = len(ids)
    kernels = [solver_mod.green_field(grid, beta, a, b).P for a, b in zip(ids, ids[1:])]
    # backward partition values at each stride time
    bvals = [None] * m
    bvals[-1] = _end_masses(spec)  # masses at the terminal time
    for i in range(m - 2, -1, -1):
        bvals[i] = kernels[i].T @ bvals[i + 1]
    partition_value(spec)  # validates positivity

    cells = np.empty((n_paths, m), dtype=np.int64)
    paths_idx = np.arange(n_paths, dtype=np.int64)
    kind, val = spec.start
    if kind == "point":
        cells[:, 0] = val
    else:
        q0 = _start_masses(spec) * bvals[0]
        cdf = np.cumsum(q0 / q0.sum())
        u = noise_mod.lattice_uniforms(seed, np.zeros(n_paths, dtype=np.int64), paths_idx)
        cells[:, 0] = np.searchsorted(cdf, u, side="left")
    for i in range(m - 1):
        Q = kernels[i] * bvals[i + 1][:, None]  # Q[z', z]
        colsum = Q.sum(axis=0)
        cur = cells[:, i]
        probs = Q[:, cur] / colsum[cur][None, :]
        cdfs = np.cumsum(probs, axis=0)
        u = noise_mod.lattice_uniforms(seed, np.full(n_paths, i + 1, dtype=np.int64), paths_idx)
        cells[:, i + 1] = (cdfs < u[None, :]).sum(axis=0)
    kind, val = spec.end
    if kind == "point":
        cells[:, -1] = val  # forced by b, restated to be exact
    xs = grid.xs()
    times = grid.t_min + np.asarray(ids) * grid.dt
    return PathEnsemble(times=times, positions=xs[cells], index_times=tuple(ids))


def sample_path(spec, seed=0, stride=1, holder_etas=(0.5,)):
    """One path plus its empirical Holder seminorms."""
    ens = sample_paths(spec, 1, stride=stride, seed=seed)
    pos = ens.positions[0]
    stats = {eta: holder_seminorm(ens.times, pos, eta) for eta in holder_etas}
    return PolymerPath(times=ens.times, positions=pos, holder_stats=stats)


def holder_seminorm(times, positions, eta):
    """max over sampled pairs of |X_u - X_v| / |u - v|^eta."""
    if not 0 < eta < 1:
        raise DomainError("eta must be in (0, 1)")
    t = np.asarray(times, dtype=np.float64)
    x = np.asarray(positions, dtype=np.float64)
    du = np.abs(t[:, None] - t[None, :])
    dx_ = np.abs(x[:, None] - x[None, :])
    off = du > 0
    return float(np.max(dx_[off] / du[off] ** eta)) if off.any() else 0.0


# ---------------------------------------------------------------------------
# determinants and non-intersection


def _full_pivot_det(A):
    """Determinant by LU with full pivoting; stable for small ill-conditioned blocks."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    sign = 1.0
    det = 1.0
    for p in range(n):
        sub = np.abs(A[p:, p:])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        i += p
        j += p
        if A[i, j] == 0.0:
            return 0.0
        if i != p:
            A[[p, i]] = A[[i, p]]
            sign = -sign
        if j != p:
            A[:, [p, j]] = A[:, [j, p]]
            sign = -sign
        piv = A[p, p]
        det *= piv
        if p + 1 < n:
            A[p + 1:, p:] -= np.outer(A[p + 1:, p] / piv, A[p, p:])
    return sign * det


def km_determinant(prop, ys, xs_pts):
    """det[ Z(t, x_j | s, y_i) ] over ordered tuples; positive inside the band."""
    ys = list(ys)
    xs_pts = list(xs_pts)
    n = len(ys)
    if n != len(xs_pts):
        raise DomainError("need equally many start and end points")
    if n > MAX_DET_ORDER:
        raise BudgetError(f"determinant order {n} exceeds the cap {MAX_DET_ORDER}")
    if any(b <= a for a, b in zip(ys, ys[1:])) or any(b <= a for a, b in zip(xs_pts, xs_pts[1:])):
        raise DomainError("points must be strictly increasing")
    ky = [solver_mod.x_index(prop.grid, y) for y in ys]
    kx = [solver_mod.x_index(prop.grid, x) for x in xs_pts]
    steps = prop.steps
    for i in ky:
        for j in kx:
            if abs(i - j) > steps:
                raise BandConnectivityError(
                    f"|k - l| = {abs(i - j)} exceeds {steps} steps; kernel entry is structurally zero")
    M = prop.P[np.ix_(kx, ky)] / prop.grid.dx
    return _full_pivot_det(M)


def km_determinant_grid(grid, beta, s, t, ys, xs_pts):
    prop = solver_mod.green_field(grid, beta,
                                  solver_mod.t_index(grid, s), solver_mod.t_index(grid, t))
    return km_determinant(prop, ys, xs_pts)


@dataclass(frozen=True)
class NonIntersectionReport:
    determinant_prob: float
    mc_prob: float
    mc_stderr: float
    n_samples: int
    expected_mismatch: bool

    def agree(self, allowance=0.03):
        return abs(self.determinant_prob - self.mc_prob) <= 3 * self.mc_stderr + allowance


def non_intersection_check(grid, beta, s, r, t, ys, zeta, boxes,
                           n_samples=20000, seed=0, sub_steps=8):
    """Determinant formula vs direct simulation for ordered non-crossing paths.

    Left side: the n x n determinant of normalized one-time kernels,
    integrated over B_1 x ... x B_n.  Right side: n independent
    point-to-measure paths, counting {each lands in its box at r, no two
    meet before r}; meetings between sample times are detected by linear
    interpolation (sign changes of ordered gaps).  Boxes given in reversed
    order flag the crossing-forced regime instead of erroring.
    """
    n = len(ys)
    if n > 3:
        raise BudgetError("non-intersection check is capped at 3 paths")
    if any(b <= a for a, b in zip(ys, ys[1:])):
        raise DomainError("start points must be strictly increasing")
    lohi = [tuple(b) for b in boxes]
    for lo, hi in lohi:
        if hi <= lo:
            raise DomainError("each box needs lo < hi")
    ascending = all(b2[0] >= b1[1] for b1, b2 in zip(lohi, lohi[1:]))
    descending = all(b2[1] <= b1[0] for b1, b2 in zip(lohi, lohi[1:]))
    if not (ascending or descending):
        raise DomainError("boxes must be disjoint and ordered")
    expected_mismatch = bool(descending and n > 1)

    s_idx = solver_mod.t_index(grid, s)
    r_idx = solver_mod.t_index(grid, r)
    t_idx = solver_mod.t_index(grid, t)
    if not (s_idx < r_idx < t_idx):
        raise RangeError("need s < r < t on the grid")
    xs = grid.xs()
    dx = grid.dx

    # determinant side
    bvals = solver_mod.evolve_vector_backward(
        grid, beta, r_idx, t_idx, zeta.cell_masses(grid)) / dx
    e = np.zeros((grid.nx, n))
    kys = [solver_mod.x_index(grid, y) for y in ys]
    for i, k in enumerate(kys):
        e[k, i] = 1.0 / dx
    cols = solver_mod.evolve_vector(grid, beta, s_idx, r_idx, e)  # (nx, n)
    zpart = (bvals[:, None] * cols).sum(axis=0) * dx  # Z_i
    if np.any(zpart <= 0):
        raise PositivityViolationError("a point-to-measure partition value is not positive")
    prof = bvals[:, None] * cols / zpart[None, :]  # prof[z, i]
    box_cells = [np.where((xs >= lo) & (xs <= hi))[0] for lo, hi in lohi]
    if any(c.size == 0 for c in box_cells):
        raise DomainError("a box contains no grid cells")
    mesh = np.meshgrid(*box_cells, indexing="ij")
    flat = [m_.ravel() for m_ in mesh]
    N = flat[0].size
    mats = np.empty((N, n, n))
    for j, cellj in enumerate(flat):
        mats[:, :, j] = prof[cellj, :].reshape(N, n)
    det_prob = float(np.linalg.det(mats).sum() * dx**n)

    # Monte Carlo side
    kappa = max(1, (r_idx - s_idx) // sub_steps)
    ids = list(range(s_idx, r_idx, kappa))
    if ids[-1] != r_idx:
        ids.append(r_idx)
    ids_full = ids + [t_idx]
    pos = []
    for i, y in enumerate(ys):
        spec = make_spec(grid, beta,
                         grid.t_min + s_idx * grid.dt, grid.t_min + t_idx * grid.dt,
                         y, zeta)
        ens = sample_paths(spec, n_samples, seed=seed * 7919 + i + 1, at_indices=ids_full)
        pos.append(ens.positions[:, :len(ids)])  # up to time r
    pos = np.stack(pos, axis=1)  # (n_samples, n, m_r)
    in_boxes = np.ones(n_samples, dtype=bool)
    for i, (lo, hi) in enumerate(lohi):
        at_r = pos[:, i, -1]
        in_boxes &= (at_r >= lo) & (at_r <= hi)
    no_meet = np.ones(n_samples, dtype=bool)
    for i in range(n - 1):
        gaps = pos[:, i + 1, :] - pos[:, i, :]
        no_meet &= np.all(gaps > 0, axis=1) | np.all(gaps < 0, axis=1)
    hits = in_boxes & no_meet
    mc = float(hits.mean())
    stderr = float(math.sqrt(max(mc * (1 - mc), 1e-12) / n_samples))
    return NonIntersectionReport(determinant_prob=det_prob, mc_prob=mc,
                                 mc_stderr=stderr, n_samples=n_samples,
                                 expected_mismatch=expected_mismatch)


# ---------------------------------------------------------------------------
# stochastic ordering and total-variation bound


@dataclass(frozen=True)
class DominanceReport:
    xs: np.ndarray
    cdf_low: np.ndarray
    cdf_high: np.ndarray
    dominated: bool
    max_violation: float


def stochastic_dominance_check(grid, beta, s, t, y1, y2, zeta, r, slack=1e-12):
    """Exact one-point CDFs from two start points sharing terminal data.

    dominated is true when the start-at-y2 law lies to the right:
    cdf_high <= cdf_low pointwise within the floating-point slack.
    """
    if not y1 <= y2:
        raise DomainError("need y1 <= y2")
    s_idx = solver_mod.t_index(grid, s)
    r_idx = solver_mod.t_index(grid, r)
    t_idx = solver_mod.t_index(grid, t)
    if not (s_idx < r_idx < t_idx):
        raise RangeError("need s < r < t on the grid")
    dx = grid.dx
    b = solver_mod.evolve_vector_backward(grid, beta, r_idx, t_idx,
                                          zeta.cell_masses(grid)) / dx
    e = np.zeros((grid.nx, 2))
    e[solver_mod.x_index(grid, y1), 0] = 1.0 / dx
    e[solver_mod.x_index(grid, y2), 1] = 1.0 / dx
    cols = solver_mod.evolve_vector(grid, beta, s_idx, r_idx, e)
    q = cols * b[:, None]
    tot = q.sum(axis=0)
    if np.any(tot <= 0):
        raise PositivityViolationError("one-point law has zero mass")
    q = q / tot[None, :]
    cdf1 = np.cumsum(q[:, 0])
    cdf2 = np.cumsum(q[:, 1])
    viol = float(np.max(cdf2 - cdf1))
    return DominanceReport(xs=grid.xs(), cdf_low=cdf1, cdf_high=cdf2,
                           dominated=bool(viol <= slack), max_violation=viol)


@dataclass(frozen=True)
class TVReport:
    tv_lhs: float
    bound_rhs: float
    terms: tuple
    satisfied: bool


def _pair_value(grid, beta, s_idx, t_idx, mu_masses, zeta_masses):
    f = solver_mod.evolve_vector(grid, beta, s_idx, t_idx, mu_masses / grid.dx)
    return float(zeta_masses @ f)


def tv_bound_check(grid, beta, s, t, pair1, pair2, times):
    """Table distance at the given times against the four-term endpoint bound.

    The left side is half the L1 distance between the exact joint tables, a
    lower bound for the path-measure distance.  With both measures read on
    the same noise the interior kernels coincide, so the joint-table
    distance reduces exactly to the two outer times; the reduction is used
    to keep any number of times tractable.
    """
    mu1, zeta1 = pair1
    mu2, zeta2 = pair2
    s_idx = solver_mod.t_index(grid, s)
    t_idx = solver_mod.t_index(grid, t)
    idx = sorted(solver_mod.t_index(grid, u) for u in np.atleast_1d(times))
    if not idx or idx[0] <= s_idx or idx[-1] >= t_idx:
        raise RangeError("times must lie strictly inside the window")
    m_mu1 = mu1.cell_masses(grid)
    m_mu2 = mu2.cell_masses(grid)
    m_z1 = zeta1.cell_masses(grid)
    m_z2 = zeta2.cell_masses(grid)
    dx = grid.dx

    def joint(mu_m, z_m):
        f = solver_mod.evolve_vector(grid, beta, s_idx, idx[0], mu_m / dx)
        b = solver_mod.evolve_vector_backward(grid, beta, idx[-1], t_idx, z_m) / dx
        if len(idx) == 1:
            mass = f * b * dx
        else:
            K = solver_mod.green_field(grid, beta, idx[0], idx[-1]).P
            mass = (f[None, :] * K / dx) * b[:, None] * dx * dx
        tot = mass.sum()
        if not tot > 0:
            raise PositivityViolationError("joint table has zero mass")
        return mass / tot

    lhs = 0.5 * float(np.abs(joint(m_mu1, m_z1) - joint(m_mu2, m_z2)).sum())

    z11 = _pair_value(grid, beta, s_idx, t_idx, m_mu1, m_z1)
    z12 = _pair_value(grid, beta, s_idx, t_idx, m_mu1, m_z2)
    z22 = _pair_value(grid, beta, s_idx, t_idx, m_mu2, m_z2)
    dz = _pair_value(grid, beta, s_idx, t_idx, m_mu1, np.abs(m_z2 - m_z1))
    dm = _pair_value(grid, beta, s_idx, t_idx, np.abs(m_mu2 - m_mu1), m_z2)
    terms = (dz / z11,
             z12 * abs(1.0 / z11 - 1.0 / z12),
             dm / z12,
             z22 * abs(1.0 / z12 - 1.0 / z22))
    rhs = float(sum(terms))
    ok = lhs <= rhs + 1e-12 * max(1.0, rhs)
    return TVReport(tv_lhs=lhs, bound_rhs=rhs, terms=terms, satisfied=bool(ok))
