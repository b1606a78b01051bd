"""Discrete space-time white noise on a rectangular grid.

One `NoiseGrid` holds a single realization of i.i.d. standard normal cell
variables xi[j, k] on an nt x nx mesh with widths (dt, dx).  The white-noise
increment over cell (j, k) is

    dW[j, k] = xi[j, k] * sqrt(dt * dx),

so that integrating a function sampled at cell centers against dW reproduces
the L^2 isometry  Var(sum f dW) = sum f^2 dt dx  exactly at grid level.

Values come from a counter-based hash of (seed, J, K) over an infinite
integer lattice, of which the grid is a window.  This makes generation
deterministic per cell: transforms that slide the window (shift, shear)
re-draw exposed cells from the extended lattice instead of wrapping, which
would break independence across the seam.  All transforms compose through a
small affine view of the lattice, so e.g. a shift of a reflected grid is
still exact.

The hash layer (splitmix64 chain over seed, J, K) is integer-exact and
portable.  The uniform-to-normal map is Box-Muller; a fused numba kernel is
used when numba imports, with a pure numpy fallback.  Within one
installation regeneration is bit-identical; across libm builds the usual
last-ulp caveats for log/cos apply.

A grid is immutable after construction (the array is marked read-only) and
may be read concurrently.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidGeometryError, UnsupportedTransformError

_MAGIC = b"PAMN"
_VERSION = 1

# splitmix64 constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SALT = np.uint64(0xD6E8FEB86659FD93)
_U53 = 2.0**-53


def _mix(h):
    """splitmix64 finalizer; works on uint64 scalars and arrays."""
    with np.errstate(over="ignore"):
        h = np.bitwise_xor(h, np.right_shift(h, np.uint64(30)))
        h = h * _M1
        h = np.bitwise_xor(h, np.right_shift(h, np.uint64(27)))
        h = h * _M2
        return np.bitwise_xor(h, np.right_shift(h, np.uint64(31)))


def _seed_mixed(seed):
    with np.errstate(over="ignore"):
        return _mix(np.uint64(int(seed) % 2**64) + _GAMMA)


def _normals_np(seed_mixed, jj_u, kk_u):
    with np.errstate(over="ignore"):
        h = _mix(np.bitwise_xor(seed_mixed, jj_u + _GAMMA))
        h = _mix(np.bitwise_xor(h, kk_u + _GAMMA))
        h2 = _mix(np.bitwise_xor(h, _SALT))
    u1 = (np.right_shift(h, np.uint64(11)).astype(np.float64) + 0.5) * _U53
    u2 = (np.right_shift(h2, np.uint64(11)).astype(np.float64) + 0.5) * _U53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


_USALT = np.uint64(0xC2B2AE3D27D4EB4F)


def _uniforms_np(seed_mixed, jj_u, kk_u):
    # extra salt keeps these streams independent of the normals' source bits
    with np.errstate(over="ignore"):
        h = _mix(np.bitwise_xor(seed_mixed, jj_u + _GAMMA))
        h = _mix(np.bitwise_xor(h, kk_u + _GAMMA))
        h = _mix(np.bitwise_xor(h, _USALT))
    return (np.right_shift(h, np.uint64(11)).astype(np.float64) + 0.5) * _U53


try:  # fused kernels; the hash chain mirrors _normals_np exactly
    from numba import njit

    @njit(cache=True, fastmath=False)
    def _normals_nb(seed_mixed, jj_u, kk_u, out):
        G = _GAMMA
        A = _M1
        B = _M2
        for i in range(jj_u.size):
            h = seed_mixed ^ (jj_u[i] + G)
            h ^= h >> np.uint64(30); h *= A; h ^= h >> np.uint64(27); h *= B; h ^= h >> np.uint64(31)
            h ^= kk_u[i] + G
            h ^= h >> np.uint64(30); h *= A; h ^= h >> np.uint64(27); h *= B; h ^= h >> np.uint64(31)
            h2 = h ^ _SALT
            h2 ^= h2 >> np.uint64(30); h2 *= A; h2 ^= h2 >> np.uint64(27); h2 *= B; h2 ^= h2 >> np.uint64(31)
            u1 = (np.float64(h >> np.uint64(11)) + 0.5) * _U53
            u2 = (np.float64(h2 >> np.uint64(11)) + 0.5) * _U53
            out[i] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    @njit(cache=True, fastmath=False)
    def _normals_rows_nb(row_mixed, kk_u, out):
        # out[b, k] for per-seed row states (one time step across a seed batch)
        G = _GAMMA
        A = _M1
        B = _M2
        for b in range(row_mixed.size):
            hb = row_mixed[b]
            for k in range(kk_u.size):
                h = hb ^ (kk_u[k] + G)
                h ^= h >> np.uint64(30); h *= A; h ^= h >> np.uint64(27); h *= B; h ^= h >> np.uint64(31)
                h2 = h ^ _SALT
                h2 ^= h2 >> np.uint64(30); h2 *= A; h2 ^= h2 >> np.uint64(27); h2 *= B; h2 ^= h2 >> np.uint64(31)
                u1 = (np.float64(h >> np.uint64(11)) + 0.5) * _U53
                u2 = (np.float64(h2 >> np.uint64(11)) + 0.5) * _U53
                out[b, k] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


def _as_u64(idx):
    return np.ascontiguousarray(np.asarray(idx, dtype=np.int64)).view(np.uint64)


def lattice_normals(seed, jj, kk):
    """Standard normal variate for each absolute lattice index (J, K).

    Pure function of (seed, J, K): the same triple always yields the same
    value regardless of evaluation order or batching.
    """
    jj = np.asarray(jj, dtype=np.int64)
    kk = np.asarray(kk, dtype=np.int64)
    jj, kk = np.broadcast_arrays(jj, kk)
    shape = jj.shape
    ju, ku = _as_u64(jj).ravel(), _as_u64(kk).ravel()
    sm = _seed_mixed(seed)
    if _HAVE_NUMBA:
        out = np.empty(ju.size)
        _normals_nb(sm, ju, ku, out)
        return out.reshape(shape) if shape else float(out[0])
    out = _normals_np(sm, ju, ku).reshape(shape)
    return out if shape else float(out)


def lattice_normals_rows(seeds, j, kk):
    """Normals for one time row j across a batch of seeds: shape (len(seeds), len(kk)).

    Bitwise identical to lattice_normals(seed, j, kk) row by row; used by
    Monte Carlo evolution to draw one step for a whole seed ensemble.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    kk_u = _as_u64(np.asarray(kk, dtype=np.int64))
    ju = _as_u64(np.array([j]))[0]
    with np.errstate(over="ignore"):
        sm = _mix(seeds.view(np.uint64) + _GAMMA)
        row = _mix(np.bitwise_xor(sm, ju + _GAMMA))
    if _HAVE_NUMBA:
        out = np.empty((seeds.size, kk_u.size))
        _normals_rows_nb(np.ascontiguousarray(row), kk_u, out)
        return out
    # fallback: resume the chain per (seed-row, k)
    with np.errstate(over="ignore"):
        h = _mix(np.bitwise_xor(row[:, None], kk_u[None, :] + _GAMMA))
        h2 = _mix(np.bitwise_xor(h, _SALT))
    u1 = (np.right_shift(h, np.uint64(11)).astype(np.float64) + 0.5) * _U53
    u2 = (np.right_shift(h2, np.uint64(11)).astype(np.float64) + 0.5) * _U53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def lattice_uniforms(seed, jj, kk):
    """Uniform(0,1) variate per lattice index; used for per-path sampling streams."""
    jj = np.asarray(jj, dtype=np.int64)
    kk = np.asarray(kk, dtype=np.int64)
    jj, kk = np.broadcast_arrays(jj, kk)
    return _uniforms_np(_seed_mixed(seed), _as_u64(jj), _as_u64(kk))


@dataclass(frozen=True)
class _LatticeView:
    """Affine window into the infinite lattice.

    Grid cell (j, k) reads lattice cell

        J = aj * ((j + oj) // block_t) + bj
        K = ak * ((k + ok + qk * j) // block_x) + bk

    and the stored value is sign * scale * normal(seed, J, K).  Shift,
    reflections, negation, integer shear and block dilation all stay inside
    this family, so transforms compose exactly.
    """

    aj: int = 1
    bj: int = 0
    oj: int = 0
    ak: int = 1
    bk: int = 0
    ok: int = 0
    qk: int = 0
    block_t: int = 1
    block_x: int = 1
    sign: float = 1.0
    scale: float = 1.0

    @property
    def is_identity(self):
        return self == _LatticeView()

    def indices(self, jj, kk):
        J = np.floor_divide(jj + self.oj, self.block_t)
        K = np.floor_divide(kk + self.ok + self.qk * jj, self.block_x)
        return self.aj * J + self.bj, self.ak * K + self.bk

    def evaluate(self, seed, nt, nx):
        jj, kk = np.meshgrid(np.arange(nt, dtype=np.int64),
                             np.arange(nx, dtype=np.int64), indexing="ij")
        J, K = self.indices(jj, kk)
        return self.sign * self.scale * lattice_normals(seed, J, K)

    def shifted(self, j0, k0):
        return replace(self, oj=self.oj + j0, ok=self.ok + k0 + self.qk * j0)

    def time_reflected(self, nt):
        return replace(self, aj=-self.aj,
                       oj=self.block_t - 1 - (nt - 1) - self.oj,
                       ok=self.ok + self.qk * (nt - 1), qk=-self.qk)

    def space_reflected(self, nx):
        return replace(self, ak=-self.ak,
                       ok=self.block_x - 1 - (nx - 1) - self.ok, qk=-self.qk)

    def negated(self):
        return replace(self, sign=-self.sign)

    def sheared(self, q):
        if self.block_t != 1 or self.block_x != 1:
            raise UnsupportedTransformError("shear of a dilated grid is not representable")
        return replace(self, qk=self.qk + q)

    def dilated(self, m):
        if self.qk != 0:
            raise UnsupportedTransformError("dilation of a sheared grid is not representable")
        return replace(self, oj=self.oj * m * m, ok=self.ok * m,
                       block_t=self.block_t * m * m, block_x=self.block_x * m,
                       scale=self.scale * m**1.5)


@dataclass(frozen=True)
class NoiseGrid:
    """One realization of discrete space-time white noise.

    Cell (j, k) covers the time interval [t_min + j dt, t_min + (j+1) dt)
    and the space interval centered at x_min + k dx.  Cell centers, where
    functions are sampled by `integrate`, sit at
    (t_min + (j + 1/2) dt, x_min + k dx).
    """

    seed: int
    t_min: float
    x_min: float
    dt: float
    dx: float
    nt: int
    nx: int
    xi: np.ndarray
    view: _LatticeView = field(default_factory=_LatticeView, repr=False)

    def __post_init__(self):
        self.xi.setflags(write=False)

    @property
    def cell_std(self):
        """sqrt(dt * dx), the std of one white-noise increment."""
        return float(np.sqrt(self.dt * self.dx))

    def delta_w(self):
        """White-noise increments dW[j, k] = xi[j, k] * sqrt(dt dx)."""
        return self.xi * self.cell_std

    def times(self, centered=True):
        off = 0.5 if centered else 0.0
        return self.t_min + (np.arange(self.nt) + off) * self.dt

    def xs(self):
        return self.x_min + np.arange(self.nx) * self.dx


def _check_geometry(dt, dx, nt, nx):
    if not (dt > 0 and dx > 0):
        raise InvalidGeometryError(f"mesh widths must be positive, got dt={dt}, dx={dx}")
    if not (int(nt) >= 1 and int(nx) >= 1):
        raise InvalidGeometryError(f"cell counts must be >= 1, got nt={nt}, nx={nx}")


def generate(seed, *, dt, dx, nt, nx, t_min=0.0, x_min=0.0):
    """Draw a NoiseGrid. Same (seed, geometry) always yields a bit-identical array."""
    _check_geometry(dt, dx, nt, nx)
    nt, nx = int(nt), int(nx)
    view = _LatticeView()
    xi = view.evaluate(seed, nt, nx)
    return NoiseGrid(seed=int(seed), t_min=float(t_min), x_min=float(x_min),
                     dt=float(dt), dx=float(dx), nt=nt, nx=nx, xi=xi, view=view)


def _rebuild(grid, view, **geom):
    nt = geom.get("nt", grid.nt)
    nx = geom.get("nx", grid.nx)
    xi = view.evaluate(grid.seed, nt, nx)
    return replace(grid, xi=xi, view=view, **geom)


def transform(grid, op, **params):
    """Return a new grid whose cell array is the exact transform of the input.

    Supported ops: shift(j0, k0), reflect_time, reflect_space, negate,
    dilate(m), shear(q).  Each is a measure-preserving map of the i.i.d.
    lattice (dilate rescales mesh and values; see `dilate`).  Cells exposed
    by shift/shear are re-drawn deterministically from the extended lattice.
    """
    if op == "shift":
        j0, k0 = int(params.get("j0", 0)), int(params.get("k0", 0))
        return _rebuild(grid, grid.view.shifted(j0, k0),
                        t_min=grid.t_min + j0 * grid.dt,
                        x_min=grid.x_min + k0 * grid.dx)
    if op == "reflect_time":
        return _rebuild(grid, grid.view.time_reflected(grid.nt))
    if op == "reflect_space":
        return _rebuild(grid, grid.view.space_reflected(grid.nx))
    if op == "negate":
        return _rebuild(grid, grid.view.negated())
    if op == "dilate":
        return dilate(grid, params["m"])
    if op == "shear":
        return shear(grid, params["q"])
    raise UnsupportedTransformError(f"unknown transform {op!r}")


def dilate(grid, m):
    """Refine one coarse cell into m^2 x m fine cells, scaling values by m^(3/2).

    The fine mesh is (dt/m^2, dx/m).  A fine cell inherits the coarse cell's
    variate times m^(3/2), so any block sum of fine increments reproduces the
    coarse increment exactly; this is the grid form of the parabolic
    rescaling (time factor m^2, space factor m).  Fine cells within one
    coarse block are not independent - no refinement of a fixed realization
    can be - so only block-aggregated functionals carry the white-noise law.
    """
    if not (isinstance(m, (int, np.integer)) and m >= 1):
        raise UnsupportedTransformError(f"dilation factor must be a positive integer, got {m!r}")
    m = int(m)
    return _rebuild(grid, grid.view.dilated(m), dt=grid.dt / m**2, dx=grid.dx / m,
                    nt=grid.nt * m * m, nx=grid.nx * m)


def shear(grid, q):
    """Slide row j by q*j cells: the grid form of a shear with velocity q*dx/dt.

    Only integer cells-per-step slopes are representable exactly; anything
    else has no measure-preserving counterpart on the lattice.
    """
    if not isinstance(q, (int, np.integer)):
        raise UnsupportedTransformError(f"shear slope must be an integer cell count per step, got {q!r}")
    return _rebuild(grid, grid.view.sheared(int(q)))


def integrate(grid, f):
    """Pair a function with the noise: sum over cells of f(center) * dW.

    `f(t, x)` must accept array arguments and be finite on all cells.  The
    pairing is exactly linear in f.
    """
    tt = grid.times()[:, None]
    xx = grid.xs()[None, :]
    vals = np.asarray(f(tt, xx), dtype=np.float64)
    vals = np.broadcast_to(vals, (grid.nt, grid.nx))
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand is not finite on all cells")
    return float(np.sum(vals * grid.xi) * grid.cell_std)


_HEADER = struct.Struct("<4sIQ4dQQ")


def dump(grid, path):
    """Write the grid in the little-endian binary layout (header + row-major xi)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, grid.seed % 2**64,
                              grid.t_min, grid.x_min, grid.dt, grid.dx,
                              grid.nt, grid.nx))
        fh.write(np.ascontiguousarray(grid.xi, dtype="<f8").tobytes())


def load(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, seed, t_min, x_min, dt, dx, nt, nx = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError(f"not a noise grid file (magic {magic!r})")
        if version != _VERSION:
            raise ValueError(f"unsupported version {version}")
        body = fh.read(8 * nt * nx)
    xi = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(nt, nx)
    return NoiseGrid(seed=int(seed), t_min=t_min, x_min=x_min, dt=dt, dx=dx,
                     nt=int(nt), nx=int(nx), xi=xi)
