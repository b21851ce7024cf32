"""Discrete fields on the periodic-lateral box M = (0, L)^2 x (-h, 0).

Horizontal directions use a real Fourier basis on a uniform periodic grid;
the vertical direction uses Nz uniformly spaced nodes including both the
bottom (z = -h) and the surface (z = 0), with trapezoid quadrature weights.

Array layout
------------
Scalar fields are arrays of shape ``(..., Nx, Ny, Nz)`` and horizontal
vector fields ``(..., 2, Nx, Ny, Nz)``.  Any leading axes are batch axes and
are carried through every routine, so an ensemble of paths is just a State
with a batch dimension.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Domain",
    "Field",
    "State",
    "FieldError",
    "to_spectral",
    "to_physical",
    "norm",
    "vertical_average",
    "extend_vertical",
    "remainder",
    "random_state",
    "random_field",
    "write_snapshot",
    "read_snapshot",
    "TOLERANCES",
]

# Named numerical tolerances used by the tests and checks.
TOLERANCES = {
    "projection_residual": 1e-10,
    "transform_roundtrip": 1e-12,
}


class FieldError(ValueError):
    """Raised for malformed or non-finite field data."""


@dataclass(frozen=True)
class Domain:
    """Box geometry and grid resolution."""

    L: float = 1.0
    h_depth: float = 1.0
    Nx: int = 16
    Ny: int = 16
    Nz: int = 9

    def __post_init__(self):
        if not (self.L > 0 and self.h_depth > 0):
            raise ValueError("L and h_depth must be positive")
        for name in ("Nx", "Ny"):
            n = getattr(self, name)
            if n < 4 or n % 2:
                raise ValueError(f"{name} must be even and >= 4, got {n}")
        if self.Nz < 3:
            raise ValueError(f"Nz must be >= 3, got {self.Nz}")

    # -- coordinates -------------------------------------------------------
    @property
    def shape(self):
        return (self.Nx, self.Ny, self.Nz)

    @property
    def dz(self):
        return self.h_depth / (self.Nz - 1)

    @property
    def dA(self):
        return self.L * self.L / (self.Nx * self.Ny)

    @property
    def volume(self):
        return self.L * self.L * self.h_depth

    def coords(self):
        """Return broadcastable coordinate arrays ``x, y, z``."""
        x = np.arange(self.Nx) * self.L / self.Nx
        y = np.arange(self.Ny) * self.L / self.Ny
        z = -self.h_depth + np.arange(self.Nz) * self.dz
        return x[:, None, None], y[None, :, None], z[None, None, :]

    @property
    def ops(self) -> "_GridOps":
        return _grid_ops(self)

    def zeros(self, batch=()):
        return State(self, np.zeros((*batch, 2, *self.shape)), np.zeros((*batch, *self.shape)))


class _GridOps:
    """Precomputed spectral symbols and vertical matrices for a Domain."""

    def __init__(self, d: Domain):
        Nx, Ny, Nz = d.Nx, d.Ny, d.Nz
        two_pi_L = 2.0 * np.pi / d.L
        ix = np.fft.fftfreq(Nx, 1.0 / Nx)
        iy = np.fft.rfftfreq(Ny, 1.0 / Ny)
        self.kx = (two_pi_L * ix)[:, None, None]
        self.ky = (two_pi_L * iy)[None, :, None]
        # derivative symbols: Nyquist rows are zeroed so that d/dx is real and skew
        kxd = two_pi_L * ix
        kxd[Nx // 2] = 0.0
        kyd = two_pi_L * iy
        kyd[Ny // 2] = 0.0
        self.kxd = kxd[:, None, None]
        self.kyd = kyd[None, :, None]
        self.k2 = self.kx**2 + self.ky**2
        self.k2d = self.kxd**2 + self.kyd**2
        # Parseval multiplicity of the half spectrum
        w = np.full(iy.shape, 2.0)
        w[0] = 1.0
        w[-1] = 1.0  # Ny even: last rfft column is the Nyquist column
        self.parseval = w[None, :, None]
        # 2/3 rule: keep |k| <= (N - 1) // 3 so that triple products are alias-free
        self.kmax_x = (Nx - 1) // 3
        self.kmax_y = (Ny - 1) // 3
        self.keep = ((np.abs(ix) <= self.kmax_x)[:, None, None]
                     & (np.abs(iy) <= self.kmax_y)[None, :, None])

        dz = d.dz
        H = np.full(Nz, dz)
        H[0] = H[-1] = 0.5 * dz
        self.H = H
        # second difference with ghost-point Neumann closure at both ends
        D = np.zeros((Nz, Nz))
        for k in range(1, Nz - 1):
            D[k, k - 1:k + 2] = (1.0, -2.0, 1.0)
        D[0, 0:2] = (-2.0, 2.0)
        D[-1, -2:] = (2.0, -2.0)
        self.dzz_neumann = D / dz**2
        # cumulative trapezoid from the bottom to node k, and from node k to the surface
        up = np.zeros((Nz, Nz))
        for k in range(1, Nz):
            up[k, :k + 1] = dz
            up[k, 0] = up[k, k] = 0.5 * dz
        self.cum_up = up
        self.cum_down = np.ones((Nz, 1)) * H[None, :] - up
        # cell-face accumulation: face f (between nodes f, f+1) collects H_0..H_f
        face = np.zeros((Nz - 1, Nz))
        for f in range(Nz - 1):
            face[f, :f + 1] = H[:f + 1]
        self.face_acc = face

    def dzz_robin(self, alpha):
        """Second difference with Neumann at the bottom and dT/dz + alpha*T = 0 at the top."""
        D = self.dzz_neumann.copy()
        D[-1, -1] -= 2.0 * alpha / (self.H[1])
        return D


@functools.lru_cache(maxsize=32)
def _grid_ops(d: Domain) -> _GridOps:
    return _GridOps(d)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def to_spectral(a):
    """Horizontal real FFT of an array of shape (..., Nx, Ny, Nz)."""
    return np.fft.rfft2(a, axes=(-3, -2))


def to_physical(a_hat, domain: Domain):
    return np.fft.irfft2(a_hat, s=(domain.Nx, domain.Ny), axes=(-3, -2))


def ddx(d: Domain, a):
    o = d.ops
    return to_physical(1j * o.kxd * to_spectral(a), d)


def ddy(d: Domain, a):
    o = d.ops
    return to_physical(1j * o.kyd * to_spectral(a), d)


def grad_h(d: Domain, a):
    """Horizontal gradient: (..., X, Y, Z) -> (..., 2, X, Y, Z)."""
    o = d.ops
    ah = to_spectral(a)
    return to_physical(np.stack([1j * o.kxd * ah, 1j * o.kyd * ah], axis=-4), d)


def div_h(d: Domain, v):
    o = d.ops
    vh = to_spectral(v)
    return to_physical(1j * (o.kxd * vh[..., 0, :, :, :] + o.kyd * vh[..., 1, :, :, :]), d)


def laplacian_h(d: Domain, a):
    o = d.ops
    return to_physical(-o.k2 * to_spectral(a), d)


def dealias(d: Domain, a):
    """Zero the top third of the horizontal spectrum."""
    return to_physical(d.ops.keep * to_spectral(a), d)


def ddz_nodes(d: Domain, a):
    """Second-order nodal vertical derivative (one-sided at the ends)."""
    return np.gradient(a, d.dz, axis=-1, edge_order=2)


def dzz_nodes(d: Domain, a):
    """BC-agnostic nodal second derivative (first-order one-sided at the ends)."""
    out = np.empty_like(a)
    dz2 = d.dz**2
    out[..., 1:-1] = (a[..., 2:] - 2 * a[..., 1:-1] + a[..., :-2]) / dz2
    out[..., 0] = out[..., 1]
    out[..., -1] = out[..., -2]
    return out


def apply_vertical(M, a):
    """Apply an (Nz, Nz) matrix along the last axis."""
    return np.einsum("kj,...j->...k", M, a)


# ---------------------------------------------------------------------------
# vertical averaging
# ---------------------------------------------------------------------------

def vertical_average(d: Domain, a):
    """Trapezoid vertical average: (..., X, Y, Z) -> (..., X, Y)."""
    return np.tensordot(a, d.ops.H, axes=([-1], [0])) / d.h_depth


def extend_vertical(d: Domain, a2):
    """Extend a 2D field as a z-constant 3D field."""
    return np.repeat(a2[..., None], d.Nz, axis=-1)


def remainder(d: Domain, a):
    """Baroclinic remainder a - A3 A2 a."""
    return a - vertical_average(d, a)[..., None]


# ---------------------------------------------------------------------------
# quadrature primitives (all return arrays over the leading axes)
# ---------------------------------------------------------------------------

def integrate(d: Domain, a):
    """Quadrature of a scalar over M, reducing the last three axes."""
    return d.dA * np.tensordot(a.sum(axis=(-3, -2)), d.ops.H, axes=([-1], [0]))


def inner_arrays(d: Domain, a, b):
    return integrate(d, a * b)


def _sq_grad_h(d: Domain, a):
    o = d.ops
    ah = to_spectral(a)
    s = (o.parseval * o.k2 * (ah.real**2 + ah.imag**2)).sum(axis=(-3, -2))
    return d.dA / (d.Nx * d.Ny) * np.tensordot(s, o.H, axes=([-1], [0]))


def _sq_hess_h(d: Domain, a):
    o = d.ops
    ah = to_spectral(a)
    s = (o.parseval * o.k2**2 * (ah.real**2 + ah.imag**2)).sum(axis=(-3, -2))
    return d.dA / (d.Nx * d.Ny) * np.tensordot(s, o.H, axes=([-1], [0]))


def _sq_dz(d: Domain, a):
    """sum over cells of (a_{k+1} - a_k)^2 / dz, integrated horizontally."""
    df = np.diff(a, axis=-1)
    return d.dA * (df**2).sum(axis=(-3, -2, -1)) / d.dz


def _sq_dz_grad_h(d: Domain, a):
    df = np.diff(a, axis=-1)
    o = d.ops
    fh = to_spectral(df)
    s = (o.parseval * o.k2 * (fh.real**2 + fh.imag**2)).sum(axis=(-3, -2, -1))
    return d.dA / (d.Nx * d.Ny) * s / d.dz


def sq_l2(d, a):
    return integrate(d, a * a)


def sq_h1(d, a):
    return sq_l2(d, a) + _sq_grad_h(d, a) + _sq_dz(d, a)


def sq_h2(d, a):
    dzz = dzz_nodes(d, a)
    return sq_h1(d, a) + _sq_hess_h(d, a) + 2.0 * _sq_dz_grad_h(d, a) + sq_l2(d, dzz)


def lp_norm(d: Domain, a, p):
    """L^p norm with the component convention |v|^p = sum_c |v_c|^p.

    ``a`` has shape (..., C, X, Y, Z); the result has shape (...,).
    """
    if np.isinf(p):
        return np.abs(a).max(axis=(-4, -3, -2, -1))
    s = integrate(d, np.abs(a) ** p).sum(axis=-1)
    return s ** (1.0 / p)


def aniso_norm(d: Domain, a, q, p):
    """|a|_{L^q_x L^p_z}: inner vertical L^p, outer horizontal L^q.

    ``a`` has shape (..., C, X, Y, Z).
    """
    ap = np.abs(a)
    if np.isinf(p):
        inner = ap.max(axis=(-4, -1))
    else:
        inner = np.tensordot((ap**p).sum(axis=-4), d.ops.H, axes=([-1], [0])) ** (1.0 / p)
    if np.isinf(q):
        return inner.max(axis=(-2, -1))
    return (d.dA * (inner**q).sum(axis=(-2, -1))) ** (1.0 / q)


# ---------------------------------------------------------------------------
# Field / State
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    """A scalar (ncomp=1) or horizontal vector (ncomp=2) field.

    ``values`` has shape ``(ncomp, Nx, Ny, Nz)`` in the physical
    representation and ``(ncomp, Nx, Ny//2 + 1, Nz)`` (complex) in the
    spectral-horizontal one.
    """

    domain: Domain
    values: np.ndarray
    rep: str = "physical"

    def __post_init__(self):
        if self.rep not in ("physical", "spectral"):
            raise FieldError(f"unknown representation {self.rep!r}")
        if self.values.ndim != 4:
            raise FieldError("Field values must have shape (ncomp, Nx, Ny, Nz)")

    @property
    def ncomp(self):
        return self.values.shape[0]

    def to_physical(self) -> "Field":
        if self.rep == "physical":
            return self
        return Field(self.domain, to_physical(self.values, self.domain), "physical")

    def to_spectral(self) -> "Field":
        if self.rep == "spectral":
            return self
        return Field(self.domain, to_spectral(self.values), "spectral")

    @classmethod
    def scalar(cls, domain, values):
        return cls(domain, np.asarray(values, dtype=float)[None])

    @classmethod
    def vector(cls, domain, values):
        return cls(domain, np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class State:
    """U = (v, T): horizontal velocity and temperature on the grid.

    Instances are treated as immutable; arithmetic returns new States.
    """

    domain: Domain
    v: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        if self.v.shape[-4:] != (2, *self.domain.shape) or self.T.shape[-3:] != self.domain.shape:
            raise FieldError(
                f"State arrays {self.v.shape}, {self.T.shape} do not match grid {self.domain.shape}")
        if self.v.shape[:-4] != self.T.shape[:-3]:
            raise FieldError("velocity and temperature batch shapes differ")

    @property
    def batch_shape(self):
        return self.T.shape[:-3]

    def stacked(self):
        """(…, 3, X, Y, Z) array with components (v1, v2, T)."""
        return np.concatenate([self.v, self.T[..., None, :, :, :]], axis=-4)

    @classmethod
    def from_stacked(cls, domain, a):
        return cls(domain, a[..., :2, :, :, :], a[..., 2, :, :, :])

    def as_vector(self):
        if self.batch_shape:
            raise FieldError("as_vector needs an unbatched State")
        return self.stacked().ravel()

    @classmethod
    def from_vector(cls, domain, x):
        return cls.from_stacked(domain, np.asarray(x, dtype=float).reshape(3, *domain.shape))

    def _bcast(self, s, extra):
        s = np.asarray(s)
        if s.ndim == 0:
            return s
        return s.reshape(s.shape + (1,) * extra)

    def __add__(self, other):
        return State(self.domain, self.v + other.v, self.T + other.T)

    def __sub__(self, other):
        return State(self.domain, self.v - other.v, self.T - other.T)

    def __neg__(self):
        return State(self.domain, -self.v, -self.T)

    def __mul__(self, s):
        return State(self.domain, self.v * self._bcast(s, 4), self.T * self._bcast(s, 3))

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / np.asarray(s, dtype=float))

    def inner(self, other):
        d = self.domain
        return inner_arrays(d, self.v, other.v).sum(axis=-1) + inner_arrays(d, self.T, other.T)

    def is_finite(self):
        return bool(np.isfinite(self.v).all() and np.isfinite(self.T).all())

    def take(self, i):
        """Select batch member ``i`` (first batch axis)."""
        return State(self.domain, self.v[i], self.T[i])

    def zeros_like(self):
        return State(self.domain, np.zeros_like(self.v), np.zeros_like(self.T))

    def velocity_field(self):
        return Field(self.domain, self.v)

    def temperature_field(self):
        return Field(self.domain, self.T[None])


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

_KINDS = ("L2", "H1", "H2", "Lp", "aniso")


def _components(f):
    """Return (domain, array of shape (..., C, X, Y, Z))."""
    if isinstance(f, State):
        return f.domain, f.stacked()
    if isinstance(f, Field):
        return f.domain, f.to_physical().values
    raise TypeError(f"cannot take the norm of {type(f).__name__}")


def norm(f, kind="L2", p=2.0, q=2.0):
    """Quadrature approximation of a norm of a Field or State.

    kind is one of ``"L2"``, ``"H1"``, ``"H2"``, ``"Lp"`` (uses ``p``) or
    ``"aniso"`` (the mixed norm L^q_x L^p_z).  ``p`` and ``q`` may be
    ``np.inf``; the max-norm is the grid maximum.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown norm kind {kind!r}")
    d, a = _components(f)
    if not np.isfinite(a).all():
        raise FieldError("non-finite values in field")
    if kind == "Lp":
        return lp_norm(d, a, p)
    if kind == "aniso":
        return aniso_norm(d, a, q, p)
    sq = {"L2": sq_l2, "H1": sq_h1, "H2": sq_h2}[kind](d, a)
    return np.sqrt(sq.sum(axis=-1))


def sq_norm(f, kind="L2"):
    """Squared L2/H1/H2 norm (avoids the square root in hot loops)."""
    d, a = _components(f)
    return {"L2": sq_l2, "H1": sq_h1, "H2": sq_h2}[kind](d, a).sum(axis=-1)


# ---------------------------------------------------------------------------
# random band-limited fields
# ---------------------------------------------------------------------------

_GLOBAL_KMAX = 10
_GLOBAL_JMAX = 3


def random_field(domain: Domain, rng, ncomp=1, decay=3.0, amplitude=1.0, neumann=True,
                 band=None):
    """Smooth random field with a resolution-independent spectrum.

    Coefficients are drawn on a fixed mode box (|kx|, |ky| <= 10, vertical
    cosines j <= 3) in a fixed order, then only modes surviving the grid's
    dealiasing cutoff are kept.  The same ``rng`` state therefore yields the
    same continuum function on every grid, truncated to what the grid can
    represent alias-free.  Amplitudes decay like (1 + |k|^2 + j^2)^(-decay).
    ``band`` further limits the horizontal wavenumbers, e.g. to compare the
    same function on two grids.
    """
    K, J = _GLOBAL_KMAX, _GLOBAL_JMAX
    kk = np.arange(-K, K + 1)
    shape = (ncomp, 2 * K + 1, K + 1, J + 1)
    coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    kx = kk[:, None, None]
    ky = np.arange(K + 1)[None, :, None]
    jz = np.arange(J + 1)[None, None, :]
    coef *= amplitude * (1.0 + kx**2 + ky**2 + jz**2) ** (-decay)
    o = domain.ops
    out_hat = np.zeros((ncomp, domain.Nx, domain.Ny // 2 + 1, J + 1), dtype=complex)
    kx_lim = o.kmax_x if band is None else min(o.kmax_x, band)
    ky_lim = o.kmax_y if band is None else min(o.kmax_y, band)
    for a, kxv in enumerate(kk):
        if abs(kxv) > kx_lim:
            continue
        for kyv in range(min(K, ky_lim) + 1):
            out_hat[:, kxv % domain.Nx, kyv, :] = coef[:, a, kyv, :]
    out_hat *= domain.Nx * domain.Ny
    profiles = _vertical_profiles(domain, J, neumann)
    spec = np.einsum("cxyj,jz->cxyz", out_hat, profiles)
    return to_physical(spec, domain)


def _vertical_profiles(domain, J, neumann):
    _, _, z = domain.coords()
    z = z.ravel()
    s = (z + domain.h_depth) / domain.h_depth
    if neumann:
        return np.stack([np.cos(j * np.pi * s) for j in range(J + 1)])
    return np.stack([s**j for j in range(J + 1)])


def random_state(domain: Domain, rng, decay=3.0, amplitude=1.0, project=True, band=None):
    """Random smooth State; projected onto H unless ``project=False``."""
    a = random_field(domain, rng, ncomp=3, decay=decay, amplitude=amplitude, band=band)
    U = State.from_stacked(domain, a)
    if project:
        from .operators import project_H
        U = project_H(U)
    return U


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

SNAPSHOT_MAGIC = b"HDFLD1"
_HEADER = struct.Struct("<6s2xIIIII dd 20x")  # 64 bytes
assert _HEADER.size == 64
_REP_TAGS = {"physical": 0, "spectral": 1}


def write_snapshot(path, f):
    """Write a Field or State to the binary snapshot format (see docs/FORMATS.md)."""
    if isinstance(f, State):
        if f.batch_shape:
            raise FieldError("snapshots hold a single State")
        f = Field(f.domain, f.stacked())
    d = f.domain
    vals = f.values
    if f.rep == "spectral":
        vals = np.stack([vals.real, vals.imag], axis=-1)
    header = _HEADER.pack(SNAPSHOT_MAGIC, d.Nx, d.Ny, d.Nz, f.ncomp, _REP_TAGS[f.rep],
                          float(d.L), float(d.h_depth))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())


def read_snapshot(path) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < 64:
        raise FieldError("snapshot shorter than its header")
    magic, Nx, Ny, Nz, ncomp, tag, L, h = _HEADER.unpack(raw[:64])
    if magic != SNAPSHOT_MAGIC:
        raise FieldError(f"bad snapshot magic {magic!r}")
    rep = {v: k for k, v in _REP_TAGS.items()}.get(tag)
    if rep is None:
        raise FieldError(f"unknown representation tag {tag}")
    d = Domain(L=L, h_depth=h, Nx=Nx, Ny=Ny, Nz=Nz)
    data = np.frombuffer(raw[64:], dtype="<f8")
    if rep == "physical":
        vals = data.reshape(ncomp, Nx, Ny, Nz).astype(float)
    else:
        pair = data.reshape(ncomp, Nx, Ny // 2 + 1, Nz, 2)
        vals = pair[..., 0] + 1j * pair[..., 1]
    return Field(d, vals, rep)
