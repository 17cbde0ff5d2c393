"""Per-step spectral kernels.

The work of a time step outside the FFTs:

``advance_modes``
    assembles ``div(u (x) u)`` from the product spectra, Leray-projects it,
    adds the noise image and applies the exponential propagator, in one pass
    over the retained modes.
``spectral_moments``
    weighted sums of ``|u_hat|^2`` against a stack of real symbols; this is
    every quadratic norm the energy ledger records.
``noise_projections``
    ``(phi_j, u)`` for every noise basis field.
``pointwise_products``
    ``u1*u1, u1*u2, u2*u2`` on the collocation grid.

Noise basis fields are single Fourier modes, so they are passed in sparse
form: ``pos_i, pos_j`` (``(J, 2)``) index at most ``npos[j]`` stored entries
of field ``j`` and ``coef`` (``(J, 2, 2)``, entry x component) holds the
values there.

Each kernel has a numba implementation and a numpy implementation with the
same signature.  Module-level names point at the active backend (see
:mod:`anisons._accel`); the ``*_numpy`` / ``*_numba`` variants stay importable
for the benchmark and the cross-backend tests.

All arrays are 4-d with a leading batch axis: ``u`` is ``(B, 2, nh, nr)``,
``prod`` is ``(B, 3, nh, nr)`` holding the spectra of ``u1*u1, u1*u2, u2*u2``.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit


def _dense(pos_i, pos_j, npos, coef, shape):
    J = len(npos)
    out = np.zeros((J, 2) + shape, complex)
    for j in range(J):
        for p in range(npos[j]):
            out[j, :, pos_i[j, p], pos_j[j, p]] += coef[j, p]
    return out.reshape(J, 2 * shape[0] * shape[1])


def advance_modes_numpy(u, prod, xiq, k1, k2, inv_ksq, prop, mask, dt, pos_i, pos_j, npos, coef):
    noise = (xiq @ _dense(pos_i, pos_j, npos, coef, prop.shape)).reshape(u.shape)
    k1 = k1[:, None]
    k2 = k2[None, :]
    p11 = prod[:, 0]
    p12 = prod[:, 1]
    p22 = prod[:, 2]
    n1 = 1j * (k1 * p11 + k2 * p12)
    n2 = 1j * (k1 * p12 + k2 * p22)
    kn = (k1 * n1 + k2 * n2) * inv_ksq
    n1 = n1 - k1 * kn
    n2 = n2 - k2 * kn
    out = np.empty_like(u)
    out[:, 0] = prop * (u[:, 0] - dt * n1 + noise[:, 0])
    out[:, 1] = prop * (u[:, 1] - dt * n2 + noise[:, 1])
    out *= mask
    return out


def pointwise_products_numpy(up):
    u1 = up[:, 0]
    u2 = up[:, 1]
    return np.stack([u1 * u1, u1 * u2, u2 * u2], axis=1)


def spectral_moments_numpy(u, sym):
    e = (u.real**2 + u.imag**2).sum(axis=1)
    return np.einsum("bij,sij->bs", e, sym)


def noise_projections_numpy(u, pos_i, pos_j, npos, wcoef):
    dense = _dense(pos_i, pos_j, npos, wcoef, u.shape[2:])
    return (u.reshape(u.shape[0], -1) @ np.conj(dense).T).real


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def advance_modes_numba(u, prod, xiq, k1, k2, inv_ksq, prop, mask, dt, pos_i, pos_j, npos, coef):
        nb, _, nh, nr = u.shape
        out = np.zeros_like(u)
        for b in range(nb):
            for i in range(nh):
                a = k1[i]
                for j in range(nr):
                    if not mask[i, j]:
                        continue
                    c = k2[j]
                    p11 = prod[b, 0, i, j]
                    p12 = prod[b, 1, i, j]
                    p22 = prod[b, 2, i, j]
                    n1 = 1j * (a * p11 + c * p12)
                    n2 = 1j * (a * p12 + c * p22)
                    kn = (a * n1 + c * n2) * inv_ksq[i, j]
                    n1 = n1 - a * kn
                    n2 = n2 - c * kn
                    e = prop[i, j]
                    out[b, 0, i, j] = e * (u[b, 0, i, j] - dt * n1)
                    out[b, 1, i, j] = e * (u[b, 1, i, j] - dt * n2)
            for m in range(npos.shape[0]):
                a = xiq[b, m]
                for p in range(npos[m]):
                    i = pos_i[m, p]
                    j = pos_j[m, p]
                    e = prop[i, j]
                    out[b, 0, i, j] += e * (a * coef[m, p, 0])
                    out[b, 1, i, j] += e * (a * coef[m, p, 1])
        return out

    @njit(cache=True, nogil=True)
    def pointwise_products_numba(up):
        nb, _, nx, ny = up.shape
        out = np.empty((nb, 3, nx, ny))
        for b in range(nb):
            for i in range(nx):
                for j in range(ny):
                    a = up[b, 0, i, j]
                    c = up[b, 1, i, j]
                    out[b, 0, i, j] = a * a
                    out[b, 1, i, j] = a * c
                    out[b, 2, i, j] = c * c
        return out

    @njit(cache=True, nogil=True)
    def spectral_moments_numba(u, sym):
        nb, _, nh, nr = u.shape
        ns = sym.shape[0]
        out = np.zeros((nb, ns))
        for b in range(nb):
            for i in range(nh):
                for j in range(nr):
                    z0 = u[b, 0, i, j]
                    z1 = u[b, 1, i, j]
                    e = z0.real * z0.real + z0.imag * z0.imag + z1.real * z1.real + z1.imag * z1.imag
                    if e == 0.0:
                        continue
                    for s in range(ns):
                        out[b, s] += sym[s, i, j] * e
        return out

    @njit(cache=True, nogil=True)
    def noise_projections_numba(u, pos_i, pos_j, npos, wcoef):
        nb = u.shape[0]
        J = npos.shape[0]
        out = np.zeros((nb, J))
        for b in range(nb):
            for m in range(J):
                acc = 0.0
                for p in range(npos[m]):
                    i = pos_i[m, p]
                    j = pos_j[m, p]
                    for c in range(2):
                        w = wcoef[m, p, c]
                        z = u[b, c, i, j]
                        acc += w.real * z.real + w.imag * z.imag
                out[b, m] = acc
        return out

    advance_modes = advance_modes_numba
    pointwise_products = pointwise_products_numba
    spectral_moments = spectral_moments_numba
    noise_projections = noise_projections_numba
else:
    advance_modes_numba = None
    pointwise_products_numba = None
    spectral_moments_numba = None
    noise_projections_numba = None
    advance_modes = advance_modes_numpy
    pointwise_products = pointwise_products_numpy
    spectral_moments = spectral_moments_numpy
    noise_projections = noise_projections_numpy
