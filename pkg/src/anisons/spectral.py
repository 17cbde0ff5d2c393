"""Fourier representation of periodic, divergence-free velocity fields.

Coefficients follow the convention ``u(x) = sum_k u_hat(k) exp(i k.x)`` and are
stored in ``rfft2`` layout: physical arrays have shape ``(n_h, n_v)`` with axis
0 the horizontal coordinate ``x1`` and axis 1 the vertical coordinate ``x2``;
spectral arrays have shape ``(n_h, n_v // 2 + 1)``.  Vector fields carry a
component axis just before the two mode axes, and any number of leading batch
axes is allowed everywhere.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatchError, UnsupportedNormError


@dataclass(frozen=True)
class Grid:
    """Square periodic box ``[0, L)^2`` with ``n_h x n_v`` collocation points.

    Modes with ``|m1| > dealias_fraction * n_h / 2`` or
    ``|m2| > dealias_fraction * n_v / 2`` are zeroed by :attr:`mask`.
    """

    n_h: int = 64
    n_v: int = 64
    box_length: float = 2 * np.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        for name in ("n_h", "n_v"):
            n = getattr(self, name)
            if int(n) != n or n < 8 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {n}")
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError(f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}")

    @property
    def shape(self):
        return (self.n_h, self.n_v)

    @property
    def spectral_shape(self):
        return (self.n_h, self.n_v // 2 + 1)

    @property
    def size(self):
        return self.n_h * self.n_v

    @property
    def area(self):
        return self.box_length**2

    @cached_property
    def m1(self):
        return np.fft.fftfreq(self.n_h, d=1.0 / self.n_h).astype(np.int64)

    @cached_property
    def m2(self):
        return np.arange(self.n_v // 2 + 1, dtype=np.int64)

    @cached_property
    def k1(self):
        """Horizontal wavenumbers, shape ``(n_h, 1)``."""
        return (2 * np.pi / self.box_length * self.m1)[:, None]

    @cached_property
    def k2(self):
        """Vertical wavenumbers, shape ``(1, n_v // 2 + 1)``."""
        return (2 * np.pi / self.box_length * self.m2)[None, :]

    @cached_property
    def ksq(self):
        return self.k1**2 + self.k2**2

    @cached_property
    def inv_ksq(self):
        out = np.zeros(self.spectral_shape)
        nz = self.ksq > 0
        out[nz] = 1.0 / self.ksq[nz]
        return out

    @cached_property
    def mask(self):
        # strict inequality: with |m| = n/3 kept, quadratic products alias onto kept modes
        keep_h = np.abs(self.m1) < self.dealias_fraction * self.n_h / 2
        keep_v = self.m2 < self.dealias_fraction * self.n_v / 2
        return keep_h[:, None] & keep_v[None, :]

    @cached_property
    def weights(self):
        """Multiplicity of each stored mode once the conjugate half is restored."""
        w = np.full(self.spectral_shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        return w

    @cached_property
    def x1(self):
        return (np.arange(self.n_h) * self.box_length / self.n_h)[:, None]

    @cached_property
    def x2(self):
        return (np.arange(self.n_v) * self.box_length / self.n_v)[None, :]

    def kmax(self, axis):
        """Largest retained |k| along ``axis`` (1 or 2)."""
        if axis == 1:
            m = np.abs(self.m1)[self.mask[:, 0]].max()
        else:
            m = self.m2[self.mask[0]].max()
        return 2 * np.pi / self.box_length * m


@dataclass(frozen=True, eq=False)
class ScalarField:
    coeffs: np.ndarray
    grid: Grid

    def to_physical(self):
        return to_physical(self.coeffs, self.grid)

    @classmethod
    def from_physical(cls, values, grid):
        return cls(from_physical(values, grid), grid)

    def __add__(self, other):
        _check(self, other)
        return ScalarField(self.coeffs + other.coeffs, self.grid)

    def __sub__(self, other):
        _check(self, other)
        return ScalarField(self.coeffs - other.coeffs, self.grid)

    def __mul__(self, c):
        return ScalarField(self.coeffs * c, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(-self.coeffs, self.grid)


@dataclass(frozen=True, eq=False)
class SpectralVector:
    """Vector field in spectral space; ``coeffs`` has shape ``(..., 2, nh, nr)``."""

    coeffs: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.coeffs.shape[-3:] != (2,) + self.grid.spectral_shape:
            raise GridMismatchError(
                f"coefficient shape {self.coeffs.shape} does not fit grid {self.grid.spectral_shape}"
            )

    @property
    def batch_shape(self):
        return self.coeffs.shape[:-3]

    def component(self, i):
        """Component ``i`` (1 or 2) as a :class:`ScalarField`."""
        return ScalarField(self.coeffs[..., i - 1, :, :], self.grid)

    def to_physical(self):
        return to_physical(self.coeffs, self.grid)

    @classmethod
    def from_physical(cls, values, grid):
        return cls(from_physical(values, grid), grid)

    @classmethod
    def zeros(cls, grid, batch_shape=()):
        return cls(np.zeros(tuple(batch_shape) + (2,) + grid.spectral_shape, complex), grid)

    def divergence(self):
        g = self.grid
        return ScalarField(1j * g.k1 * self.coeffs[..., 0, :, :] + 1j * g.k2 * self.coeffs[..., 1, :, :], g)

    def _wrap(self, other, coeffs):
        cls = type(self) if type(other) is type(self) else SpectralVector
        return cls(coeffs, self.grid)

    def __add__(self, other):
        _check(self, other)
        return self._wrap(other, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check(self, other)
        return self._wrap(other, self.coeffs - other.coeffs)

    def __mul__(self, c):
        return type(self)(self.coeffs * c, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(-self.coeffs, self.grid)

    def __getitem__(self, idx):
        """Index the batch axes."""
        return type(self)(self.coeffs[idx], self.grid)


class SpectralVelocity(SpectralVector):
    """Divergence-free, real, dealiased velocity field.

    The constructor does not enforce the invariants; :func:`leray_project`
    produces conforming fields and :meth:`check` verifies them.
    """

    def check(self, rtol=1e-12):
        g = self.grid
        c = self.coeffs
        div = np.abs(g.k1 * c[..., 0, :, :] + g.k2 * c[..., 1, :, :])
        scale = np.sqrt(g.ksq) * np.sqrt(np.abs(c[..., 0, :, :]) ** 2 + np.abs(c[..., 1, :, :]) ** 2)
        if np.any(div > rtol * np.maximum(scale.max(initial=0.0), 1e-300)):
            raise ValueError("field is not divergence-free")
        if np.any(c[..., ~g.mask] != 0):
            raise ValueError("field carries modes outside the dealias mask")
        return self


def _check(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def to_physical(coeffs, grid):
    return sfft.irfft2(coeffs, s=grid.shape, axes=(-2, -1), norm="forward")


def from_physical(values, grid):
    return sfft.rfft2(values, axes=(-2, -1), norm="forward")


def dealias(f):
    """Zero every mode outside the retained band."""
    return type(f)(f.coeffs * f.grid.mask, f.grid)


def leray_project(f):
    """Orthogonal projection onto divergence-free fields.

    Removes ``k (k . f_hat) / |k|^2`` from every mode; the mean mode passes
    through untouched.
    """
    g = f.grid
    c = f.coeffs
    kf = (g.k1 * c[..., 0, :, :] + g.k2 * c[..., 1, :, :]) * g.inv_ksq
    out = np.empty_like(c)
    out[..., 0, :, :] = c[..., 0, :, :] - g.k1 * kf
    out[..., 1, :, :] = c[..., 1, :, :] - g.k2 * kf
    return SpectralVelocity(out, g)


def _symbol(grid, axis):
    if axis == 1:
        return 1j * grid.k1
    if axis == 2:
        return 1j * grid.k2
    raise ValueError(f"axis must be 1 or 2, got {axis}")


def partial_derivative(f, axis, order=1):
    """``d^order f / dx_axis^order`` for scalar or vector fields."""
    if order < 1 or int(order) != order:
        raise ValueError(f"order must be a positive integer, got {order}")
    return type(f)(f.coeffs * _symbol(f.grid, axis) ** order, f.grid)


def grad(f):
    """Gradient of a scalar field."""
    g = f.grid
    c = np.stack([1j * g.k1 * f.coeffs, 1j * g.k2 * f.coeffs], axis=-3)
    return SpectralVector(c, g)


def perp_grad(f):
    """``(-d2 f, d1 f)`` for a scalar ``f``."""
    g = f.grid
    c = np.stack([-1j * g.k2 * f.coeffs, 1j * g.k1 * f.coeffs], axis=-3)
    return SpectralVelocity(c, g)


def laplacian(f):
    return type(f)(-f.grid.ksq * f.coeffs, f.grid)


def curl(u):
    """Scalar vorticity ``d1 u2 - d2 u1``."""
    g = u.grid
    return ScalarField(1j * g.k1 * u.coeffs[..., 1, :, :] - 1j * g.k2 * u.coeffs[..., 0, :, :], g)


def l2_inner(f, g):
    """``(f, g) = int f . g dx`` evaluated by Parseval.

    Works for pairs of scalar fields or pairs of vector fields; returns an
    array over the batch axes (a float for unbatched input).
    """
    _check(f, g)
    if isinstance(f, ScalarField) != isinstance(g, ScalarField):
        raise TypeError("l2_inner needs two scalar fields or two vector fields")
    axes = (-2, -1) if isinstance(f, ScalarField) else (-3, -2, -1)
    w = f.grid.weights
    prod = f.coeffs.real * g.coeffs.real + f.coeffs.imag * g.coeffs.imag
    val = f.grid.area * np.sum(w * prod, axis=axes)
    return val if np.ndim(val) else float(val)


def _weighted_energy(f, symbol):
    g = f.grid
    e = f.coeffs.real**2 + f.coeffs.imag**2
    if isinstance(f, SpectralVector):
        e = e.sum(axis=-3)
    val = g.area * np.sum(g.weights * symbol * e, axis=(-2, -1))
    return val if np.ndim(val) else float(val)


def l2_norm_sq(f):
    return _weighted_energy(f, 1.0)


def grad_norm_sq(f):
    return _weighted_energy(f, f.grid.ksq)


def h1_norm_sq(f):
    """``||f||_{L2}^2 + ||grad f||_{L2}^2``."""
    return _weighted_energy(f, 1.0 + f.grid.ksq)


def h2_norm_sq(f):
    return _weighted_energy(f, (1.0 + f.grid.ksq) ** 2)


def anisotropic_mixed_norm(f, outer, p_outer, q_inner):
    """Mixed norm ``||f||_{L_outer^p (L_inner^q)}`` on the collocation grid.

    ``outer='h'`` takes the inner norm along ``x2`` for every fixed ``x1`` and
    then the outer norm across ``x1``; ``outer='v'`` swaps the roles.  Only
    exponents 2 and ``inf`` are supported; essential suprema become grid maxima.
    """
    p_outer = _exponent(p_outer)
    q_inner = _exponent(q_inner)
    if outer not in ("h", "v"):
        raise UnsupportedNormError(f"outer must be 'h' or 'v', got {outer!r}")
    g = f.grid
    vals = np.abs(f.to_physical())
    inner_axis, step_in, step_out = (-1, g.box_length / g.n_v, g.box_length / g.n_h)
    if outer == "v":
        inner_axis, step_in, step_out = (-2, g.box_length / g.n_h, g.box_length / g.n_v)
    if q_inner == 2:
        inner = np.sqrt(np.sum(vals**2, axis=inner_axis) * step_in)
    else:
        inner = np.max(vals, axis=inner_axis)
    if p_outer == 2:
        return np.sqrt(np.sum(inner**2, axis=-1) * step_out)
    return np.max(inner, axis=-1)


def _exponent(p):
    if p == 2:
        return 2
    if p in (np.inf, "inf", "infinity"):
        return np.inf
    raise UnsupportedNormError(f"mixed norms support exponents 2 and inf only, got {p!r}")


def nonlinear_term(u, v):
    """Dealiased ``(v . grad) u`` computed pseudospectrally.

    The result is not Leray-projected.  With ``v = u`` this is the advection
    term; ``(delta . grad) u`` enters the difference equation.
    """
    _check(u, v)
    g = u.grid
    vp = to_physical(v.coeffs, g)
    d1u = to_physical(1j * g.k1 * u.coeffs, g)
    d2u = to_physical(1j * g.k2 * u.coeffs, g)
    adv = vp[..., 0:1, :, :] * d1u + vp[..., 1:2, :, :] * d2u
    return SpectralVector(from_physical(adv, g) * g.mask, g)


def cancellation_residual(u):
    """``int (u . grad u) . Laplacian(u) dx``; zero in the continuum."""
    return l2_inner(nonlinear_term(u, u), laplacian(u))


def _mode_order(grid):
    """Permutation listing full-FFT modes shell by shell (``max(|m1|, |m2|)``).

    The ordering depends only on the integer wavevectors, so two grids agree
    on the prefix covering their common modes; this is what makes random
    fields comparable under refinement.
    """
    m1 = np.fft.fftfreq(grid.n_h, d=1.0 / grid.n_h).astype(np.int64)
    m2 = np.fft.fftfreq(grid.n_v, d=1.0 / grid.n_v).astype(np.int64)
    M1, M2 = np.meshgrid(m1, m2, indexing="ij")
    shell = np.maximum(np.abs(M1), np.abs(M2))
    return np.lexsort((M2.ravel(), M1.ravel(), shell.ravel()))


def random_divfree_field(grid, seed=0, spectrum_exponent=2.0, amplitude=1.0):
    """Random real, divergence-free, dealiased field.

    Coefficients are complex Gaussians with standard deviation
    ``amplitude * (1 + |k|^2)^(-spectrum_exponent / 2)``, made Hermitian,
    projected and dealiased.  ``seed`` may be an int, a ``SeedSequence`` or a
    ``Generator``.
    """
    if spectrum_exponent <= 0:
        raise ValueError("spectrum_exponent must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nh, nv = grid.shape
    order = _mode_order(grid)
    z = rng.standard_normal((nh * nv, 2, 2))
    full = np.empty((2, nh * nv), complex)
    full[:, order] = (z[:, :, 0] + 1j * z[:, :, 1]).T / np.sqrt(2.0)
    full = full.reshape(2, nh, nv)
    neg_h = (-np.arange(nh)) % nh
    neg_v = (-np.arange(nv)) % nv
    full = (full + np.conj(full[:, neg_h][:, :, neg_v])) / np.sqrt(2.0)

    m1 = np.fft.fftfreq(nh, d=1.0 / nh)[:, None]
    m2 = np.fft.fftfreq(nv, d=1.0 / nv)[None, :]
    ksq = (2 * np.pi / grid.box_length) ** 2 * (m1**2 + m2**2)
    full *= amplitude * (1.0 + ksq) ** (-spectrum_exponent / 2)

    half = full[:, :, : nv // 2 + 1].copy()
    u = leray_project(SpectralVector(half, grid))
    return SpectralVelocity(u.coeffs * grid.mask, grid)


def scaled_to_h1(u, target):
    """Rescale ``u`` so that ``||u||_{H1} = target`` (zero stays zero)."""
    n = np.sqrt(h1_norm_sq(u))
    if n == 0:
        return u
    return type(u)(u.coeffs * (target / n), u.grid)
