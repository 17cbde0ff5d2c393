"""Energy functionals, Ito-balance residuals and the Gagliardo-Nirenberg pairing.

Every ledger array has time along axis 0 and, for ensembles, replicas along
axis 1; the functionals broadcast over both.
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import ImpossibleBoundError
from .noise import rng_stream
from .spectral import l2_inner, l2_norm_sq, nonlinear_term, partial_derivative, random_divfree_field

# Order of the quadratic moments produced by the stepper.
MOMENTS = ("l2_sq", "d1_sq", "grad_sq", "d1grad_sq", "d2_sq", "d1d2_sq")


def gn_integrand(d1_sq, d2_sq, d1d2_sq):
    """``||d1 u||^{2/3} ||d1 d2 u||^{2/3} + ||d2 u||^{2/3} ||d1 d2 u||^{2/3}``."""
    return np.cbrt(d1_sq * d1d2_sq) + np.cbrt(d2_sq * d1d2_sq)


@dataclass
class EnergyLedger:
    """Norms, running integrals, martingales and brackets at sample times.

    Running integrals use the trapezoid rule at the step resolution, so they
    are exact summaries of every step even when samples are thinned.  ``M0``
    and ``M1`` are left-point (Ito) sums of ``(sigma dW, z)`` and
    ``(grad sigma dW, grad z)``; ``QV0``/``QV1`` their predictable brackets.
    ``QB0``/``QB1`` hold the realized ``sum ||sigma dW||^2`` in L2 and in the
    gradient seminorm.
    """

    t: np.ndarray
    l2_sq: np.ndarray
    d1_sq: np.ndarray
    grad_sq: np.ndarray
    d1grad_sq: np.ndarray
    d2_sq: np.ndarray
    d1d2_sq: np.ndarray
    int_l2_sq: np.ndarray
    int_d1_sq: np.ndarray
    int_grad_sq: np.ndarray
    int_d1grad_sq: np.ndarray
    int_d2_sq: np.ndarray
    int_d1d2_sq: np.ndarray
    int_gn: np.ndarray
    M0: np.ndarray
    QV0: np.ndarray
    M1: np.ndarray
    QV1: np.ndarray
    QB0: np.ndarray
    QB1: np.ndarray
    lam: float
    K: float
    K_l2: float
    K_h1dot: float
    dt: float

    _series = (
        "l2_sq d1_sq grad_sq d1grad_sq d2_sq d1d2_sq int_l2_sq int_d1_sq int_grad_sq "
        "int_d1grad_sq int_d2_sq int_d1d2_sq int_gn M0 QV0 M1 QV1 QB0 QB1"
    ).split()

    @property
    def n_samples(self):
        return len(self.t)

    def replica(self, i):
        """Ledger of one replica of an ensemble ledger."""
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in self._series:
            kw[name] = kw[name][:, i]
        return EnergyLedger(**kw)

    def index_of(self, t):
        idx = np.flatnonzero(np.isclose(self.t, t, rtol=0, atol=1e-9 * max(1.0, abs(t))))
        if idx.size == 0:
            raise ValueError(f"t = {t} is not a sample time (range [{self.t[0]}, {self.t[-1]}])")
        return int(idx[0])

    def _at(self, values, t):
        return values if t is None else values[self.index_of(t)]

    def gn_integrand(self):
        return gn_integrand(self.d1_sq, self.d2_sq, self.d1d2_sq)

    def _tcol(self):
        return self.t.reshape((-1,) + (1,) * (self.l2_sq.ndim - 1))


def compute_E0(ledger, t=None):
    """``||z(t)||^2 - ||z0||^2 + 2 int ||d1 z||^2 + (2 lam - 1) int ||z||^2 - K t``.

    Returns the whole series when ``t`` is None.
    """
    L = ledger
    e = L.l2_sq - L.l2_sq[0] + 2 * L.int_d1_sq + (2 * L.lam - 1) * L.int_l2_sq - L.K * L._tcol()
    return L._at(e, t)


def compute_E1(ledger, t=None):
    """As :func:`compute_E0` with ``(grad z, d1 grad z)`` in place of ``(z, d1 z)``."""
    L = ledger
    e = L.grad_sq - L.grad_sq[0] + 2 * L.int_d1grad_sq + (2 * L.lam - 1) * L.int_grad_sq - L.K * L._tcol()
    return L._at(e, t)


def ito_l2_residual(ledger, t=None):
    """Signed defect of the L2 Ito balance; zero in the continuum."""
    L = ledger
    r = (
        L.l2_sq
        + 2 * L.int_d1_sq
        + 2 * L.lam * L.int_l2_sq
        - L.l2_sq[0]
        - 2 * L.M0
        - L.K_l2 * L._tcol()
    )
    return L._at(r, t)


def ito_h1_residual(ledger, t=None):
    """LHS minus RHS of the gradient balance, with ``K t`` on the right.

    Since the gradient Ito correction ``K_h1dot`` is below ``K``, the
    continuum value is ``(K_h1dot - K) t <= 0``.
    """
    L = ledger
    r = (
        L.grad_sq
        + 2 * L.int_d1grad_sq
        + 2 * L.lam * L.int_grad_sq
        - L.grad_sq[0]
        - 2 * L.M1
        - L.K * L._tcol()
    )
    return L._at(r, t)


def e0_decomposition_defect(ledger):
    """``E0 - [2 M0 - int ||z||^2 + (K_l2 - K) t]``, which is O(dt) pathwise."""
    L = ledger
    return compute_E0(L) - (2 * L.M0 - L.int_l2_sq + (L.K_l2 - L.K) * L._tcol())


def diagnostics_table(ledger):
    """Columns ``t, E0, E1, ito_l2_res, ito_h1_res`` as a dict of arrays."""
    return {
        "t": ledger.t,
        "E0": compute_E0(ledger),
        "E1": compute_E1(ledger),
        "ito_l2_res": ito_l2_residual(ledger),
        "ito_h1_res": ito_h1_residual(ledger),
    }


def gn_pairing_check(u, delta):
    """``|(delta . grad u, delta)|`` and the anisotropic interpolation product.

    ``rhs_unit = ||d||^{3/2} ||d1 d||^{1/2} (||d1 u||^{1/2} + ||d2 u||^{1/2})
    ||d1 d2 u||^{1/2}`` in L2 norms; ``lhs / rhs_unit`` is the implied constant.
    """
    lhs = abs(l2_inner(nonlinear_term(u, delta), delta))
    d = l2_norm_sq(delta)
    d1d = l2_norm_sq(partial_derivative(delta, 1))
    d1u = l2_norm_sq(partial_derivative(u, 1))
    d2u = l2_norm_sq(partial_derivative(u, 2))
    d12u = l2_norm_sq(partial_derivative(partial_derivative(u, 1), 2))
    # sqrt(d) sqrt(sqrt(d d1d)) = ||d||^{3/2} ||d1 d||^{1/2}; written with square roots so
    # that delta -> 2^k delta rescales both sides by exactly 4^k and the ratio is unchanged
    rhs = np.sqrt(d) * np.sqrt(np.sqrt(d * d1d)) * (d1u**0.25 + d2u**0.25) * d12u**0.25
    if rhs == 0 and lhs > 1e-13 * max(1.0, d):
        raise ImpossibleBoundError(f"pairing {lhs:.3e} is nonzero while the interpolation bound vanishes")
    return lhs, rhs


def gn_sweep(grid, pairs, seed=0, spectrum_exponent=2.0):
    """``(lhs, rhs_unit)`` for ``pairs`` independent random ``(u, delta)`` pairs.

    Pair ``i`` is drawn from stream ``(seed, 'gn', i)``, so a sweep is
    reproducible and its prefix does not depend on ``pairs``.
    """
    lhs = np.empty(pairs)
    rhs = np.empty(pairs)
    for i in range(pairs):
        rng = rng_stream(seed, "gn", i)
        u = random_divfree_field(grid, rng, spectrum_exponent)
        d = random_divfree_field(grid, rng, spectrum_exponent)
        lhs[i], rhs[i] = gn_pairing_check(u, d)
    return lhs, rhs
