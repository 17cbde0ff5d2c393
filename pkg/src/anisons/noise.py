"""Finite-mode additive noise and seeded Wiener increments.

A noise mode ``(m1, m2, q)`` contributes one real divergence-free basis field
``phi = c * t(k.x) * k_perp / |k|`` with ``k = 2 pi m / L`` and
``k_perp = (-k2, k1)``.  The profile ``t`` is ``cos`` when ``m`` lies in the
upper half plane (``m2 > 0``, or ``m2 == 0`` and ``m1 > 0``) and ``sin`` of
the mirrored wavevector otherwise, so ``m`` and ``-m`` give the cosine/sine
pair of one wave.  ``c`` normalizes ``||phi||_{H1} = 1``, hence
``K = ||sigma||^2_{L2(l2, H1)} = sum q^2``.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralVelocity, l2_inner


@dataclass(frozen=True)
class NoiseMode:
    m1: int
    m2: int
    q: float


def decay_modes(count, exponent, amplitude=None, target_K=None):
    """First ``count`` wavevectors with amplitudes ``q_j = a * j**(-exponent)``.

    Wavevectors are taken in order of ``(|m|^2, m1, m2)``.  Passing
    ``target_K`` picks ``a`` so that ``sum q_j^2`` equals it.
    """
    count = int(count)
    if count < 0:
        raise ValueError("count must be non-negative")
    r = int(np.ceil(np.sqrt(count))) + 1
    cand = [(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1) if (a, b) != (0, 0)]
    cand.sort(key=lambda m: (m[0] ** 2 + m[1] ** 2, m[0], m[1]))
    j = np.arange(1, count + 1, dtype=float)
    base = j ** (-float(exponent))
    if target_K is not None:
        if amplitude is not None:
            raise ValueError("give either amplitude or target_K, not both")
        amplitude = np.sqrt(target_K / np.sum(base**2)) if count else 0.0
    if amplitude is None:
        raise ValueError("decay spec needs an amplitude or a target_K")
    return [NoiseMode(a, b, float(amplitude * w)) for (a, b), w in zip(cand[:count], base)]


class NoiseOperator:
    """Additive noise ``sigma`` on a fixed grid.

    Basis images are kept densely as ``basis`` with shape ``(J, 2, nh, nr)``.
    """

    def __init__(self, modes, grid):
        modes = [m if isinstance(m, NoiseMode) else NoiseMode(*m) for m in modes]
        seen = set()
        for m in modes:
            key = (int(m.m1), int(m.m2))
            if key == (0, 0):
                raise ValueError("noise mode (0, 0) has no divergence-free direction")
            if key in seen:
                raise ValueError(f"duplicate noise mode {key}")
            if m.q < 0 or not np.isfinite(m.q):
                raise ValueError(f"noise amplitude must be finite and >= 0, got {m.q}")
            seen.add(key)
        self.modes = tuple(modes)
        self.grid = grid
        self.q = np.array([m.q for m in modes], dtype=float)
        self.wavevectors = np.array([(m.m1, m.m2) for m in modes], dtype=np.int64).reshape(-1, 2)
        kk = (2 * np.pi / grid.box_length) ** 2 * np.sum(self.wavevectors**2, axis=1).astype(float)
        self.k_sq = kk
        self.basis = self._build_basis()
        # Wavenumber-space constants used by the ledger.
        self.q_sq = self.q**2

    def __len__(self):
        return len(self.modes)

    def _build_basis(self):
        g = self.grid
        nh, nr = g.spectral_shape
        basis = np.zeros((len(self.modes), 2, nh, nr), complex)
        for j, (m1, m2) in enumerate(self.wavevectors):
            upper = m2 > 0 or (m2 == 0 and m1 > 0)
            r1, r2 = (m1, m2) if upper else (-m1, -m2)
            i1 = r1 % g.n_h
            if not (abs(r1) < g.n_h // 2 and abs(r2) < g.n_v // 2 and g.mask[i1, r2]):
                raise ValueError(f"noise mode {(int(m1), int(m2))} falls outside the retained band of {g}")
            k = 2 * np.pi / g.box_length * np.array([r1, r2], float)
            kn = np.hypot(*k)
            direction = np.array([-k[1], k[0]]) / kn
            c = np.sqrt(2.0 / (g.area * (1.0 + kn**2)))
            # cos(k.x) = (e^{ikx} + e^{-ikx})/2, sin(k.x) = (e^{ikx} - e^{-ikx})/(2i)
            a = 0.5 * c if upper else -0.5j * c
            basis[j, :, i1, r2] += a * direction
            if r2 == 0:
                basis[j, :, (-r1) % g.n_h, 0] += np.conj(a) * direction
        return basis

    def sparse(self):
        """``(pos_i, pos_j, npos, coef)``: stored entries of each basis field."""
        J = len(self.modes)
        pos_i = np.zeros((J, 2), np.int64)
        pos_j = np.zeros((J, 2), np.int64)
        npos = np.zeros(J, np.int64)
        coef = np.zeros((J, 2, 2), complex)
        for j in range(J):
            nz = np.argwhere(np.any(self.basis[j] != 0, axis=0))
            npos[j] = len(nz)
            for p, (a, b) in enumerate(nz):
                pos_i[j, p], pos_j[j, p] = a, b
                coef[j, p] = self.basis[j, :, a, b]
        return pos_i, pos_j, npos, coef

    def hs_norm_sq(self, space="H1"):
        """Squared Hilbert-Schmidt norm of ``sigma`` into ``space``.

        ``'H1'`` gives ``K = sum q^2``; ``'L2'`` and ``'H1dot'`` (gradient
        seminorm) weight each mode by its share of the unit H1 norm.
        """
        if space == "H1":
            return float(np.sum(self.q_sq))
        if space == "L2":
            return float(np.sum(self.q_sq / (1.0 + self.k_sq)))
        if space == "H1dot":
            return float(np.sum(self.q_sq * self.k_sq / (1.0 + self.k_sq)))
        raise ValueError(f"unknown space {space!r}; expected 'L2', 'H1' or 'H1dot'")

    @property
    def K(self):
        return self.hs_norm_sq("H1")

    def basis_fields(self):
        return SpectralVelocity(self.basis, self.grid)

    def apply(self, xi):
        """``sigma xi = sum_j q_j xi_j phi_j``; ``xi`` may carry batch axes."""
        xi = np.asarray(xi, float)
        if xi.shape[-1] != len(self.modes):
            raise ValueError(f"increment has {xi.shape[-1]} entries, noise has {len(self.modes)} modes")
        coeffs = np.einsum("...j,jcab->...cab", xi * self.q, self.basis)
        return SpectralVelocity(coeffs, self.grid)

    def projections(self, u):
        """``(phi_j, u)_{L2}`` for every basis field, shape ``batch + (J,)``."""
        phi = SpectralVelocity(self.basis, self.grid)
        c = u.coeffs[..., None, :, :, :]
        return l2_inner(phi, SpectralVelocity(c, self.grid))


def rng_stream(master_seed, purpose, replica=0):
    """Independent generator for ``(master_seed, purpose, replica)``.

    Streams never share state, so the order in which replicas advance cannot
    change any of them.
    """
    code = zlib.crc32(str(purpose).encode())
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(code, int(replica)))
    return np.random.Generator(np.random.PCG64(ss))


def sample_increment(noise, rng, dt):
    """One Wiener increment: independent ``N(0, dt)`` per mode."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return rng.standard_normal(len(noise)) * np.sqrt(dt)


def sample_increments(noise, rng, dt, nsteps):
    """``nsteps`` consecutive increments, shape ``(nsteps, J)``.

    Equivalent to ``nsteps`` calls of :func:`sample_increment` on ``rng``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return rng.standard_normal((nsteps, len(noise))) * np.sqrt(dt)
