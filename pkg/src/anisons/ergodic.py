"""Long-run averages of bounded-Lipschitz observables and the coupling limit.

Every canonical observable satisfies ``|phi| <= 1`` and
``|phi(u) - phi(v)| <= ||u - v||_{L2}`` on the grid it was built for.
"""

from dataclasses import dataclass, field

import numpy as np

from .noise import rng_stream
from .spectral import (
    ScalarField,
    SpectralVelocity,
    grad_norm_sq,
    l2_norm_sq,
    perp_grad,
    random_divfree_field,
)
from .stepper import _StreamIncrements, integrate

GAP_TOL = 0.05
GAP_FLOOR = 1e-8
N_BATCHES = 10


def _sqnorm_lipschitz():
    """``max_x d/dx tanh(x^2)``, the slope that ``tanh(||.||^2)`` must be divided by."""
    x = np.linspace(0.0, 3.0, 300001)
    return float(np.max(2 * x / np.cosh(x * x) ** 2))


@dataclass
class Observable:
    """A bounded function of the state with a declared Lipschitz constant.

    ``fn`` maps coefficient arrays ``(..., 2, nh, nr)`` to values ``(...)``.
    """

    name: str
    fn: object
    grid: object
    lipschitz: float = 1.0
    sup: float = 1.0
    note: str = ""

    def __call__(self, u):
        coeffs = u.coeffs if isinstance(u, SpectralVelocity) else np.asarray(u)
        val = self.fn(coeffs)
        return val if np.ndim(val) else float(val)


def _inner(grid, a, b):
    """``(a, b)_{L2}`` for coefficient arrays with trailing ``(2, nh, nr)``."""
    prod = a.real * b.real + a.imag * b.imag
    return grid.area * np.sum(grid.weights * prod, axis=(-3, -2, -1))


def _bump(grid, width):
    """Periodized Gaussian centred at the origin, as a physical array."""
    L = grid.box_length
    d1 = np.minimum(grid.x1, L - grid.x1)
    d2 = np.minimum(grid.x2, L - grid.x2)
    return np.exp(-(d1**2 + d2**2) / (2 * width**2))


def canonical_observables(grid, witness_seed=20240601, bump_width=0.5):
    """The five-member observable family used in every ergodic report."""
    c1 = _sqnorm_lipschitz()

    w = random_divfree_field(grid, witness_seed)
    w = SpectralVelocity(w.coeffs / np.sqrt(l2_norm_sq(w)), grid)
    wc = w.coeffs

    # rho: smooth bump with ||rho||_{L2} = 1, paired with u1 only
    rho = ScalarField.from_physical(_bump(grid, bump_width), grid)
    rho = ScalarField(rho.coeffs * grid.mask, grid)
    rho_n = np.sqrt(grid.area * np.sum(grid.weights * np.abs(rho.coeffs) ** 2))
    rho_vec = np.stack([rho.coeffs / rho_n, np.zeros_like(rho.coeffs)])

    # (curl u, b) = (u, -perp_grad b) = (u, (d2 b, -d1 b)); ||grad b|| = 1
    b = ScalarField.from_physical(_bump(grid, 2 * bump_width), grid)
    b = ScalarField(b.coeffs * grid.mask, grid)
    b = ScalarField(b.coeffs / np.sqrt(grad_norm_sq(b)), grid)
    curl_dual = -perp_grad(b).coeffs

    k1max = grid.kmax(1)
    k1 = grid.k1

    def phi1(c):
        return np.tanh(_inner(grid, c, c)) / c1

    def phi2(c):
        return np.clip(_inner(grid, c, wc), -1.0, 1.0)

    def phi3(c):
        d = c * (k1 / k1max)
        return np.tanh(_inner(grid, d, d)) / c1

    def phi4(c):
        return np.clip(_inner(grid, c, rho_vec), -1.0, 1.0)

    def phi5(c):
        return np.clip(_inner(grid, c, curl_dual), -1.0, 1.0)

    return [
        Observable("phi1", phi1, grid, note="tanh(||u||^2) over its maximal slope"),
        Observable("phi2", phi2, grid, note="clamped (u, w) for a unit divergence-free witness w"),
        Observable("phi3", phi3, grid, note="tanh((||d1 u|| / k1max)^2) over its maximal slope"),
        Observable("phi4", phi4, grid, note="clamped (u1, rho) for a unit bump rho at the origin"),
        Observable("phi5", phi5, grid, note="clamped (curl u, b) for a bump b with ||grad b|| = 1"),
    ]


def sample_indices(t, burn_in, stride):
    """Indices of sample times ``t_k >= burn_in`` lying on multiples of ``stride``."""
    t = np.asarray(t)
    tol = 1e-9 * max(1.0, stride)
    on_grid = np.abs(t / stride - np.round(t / stride)) * stride <= tol
    return np.flatnonzero(on_grid & (t >= burn_in - tol))


def time_average(trajectory, phi, burn_in, stride=1.0):
    """Mean of ``phi(u(t_k))`` over the post-burn-in sample times."""
    idx = sample_indices(trajectory.t, burn_in, stride)
    if idx.size == 0:
        raise ValueError(f"no sample times at or after burn-in {burn_in} (trajectory ends at {trajectory.t[-1]})")
    return float(np.mean(phi(trajectory.fields[idx])))


def batch_means_se(values, n_batches=N_BATCHES):
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    values = np.asarray(values, float)
    n = len(values) // n_batches
    if n == 0:
        raise ValueError(f"need at least {n_batches} samples for batch means, got {len(values)}")
    means = values[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(n_batches))


@dataclass
class GapRow:
    observable: str
    avg_u: float
    avg_v: float
    se_u: float
    se_v: float
    tol: float = GAP_TOL
    floor: float = GAP_FLOOR

    @property
    def gap(self):
        return abs(self.avg_u - self.avg_v)

    @property
    def budget(self):
        return 3.0 * float(np.hypot(self.se_u, self.se_v)) + self.floor

    @property
    def passed(self):
        return self.gap <= self.tol and self.gap <= self.budget


@dataclass
class ErgodicReport:
    """Gaps between long-run averages from two initial conditions.

    A gap passes when it is below ``tol`` and below ``3 sqrt(se_u^2 + se_v^2)
    + floor``.  The observable family is finite, so agreement is evidence for
    a unique invariant measure, not a proof of it.
    """

    rows: list
    burn_in: float
    stride: float
    n: int
    horizon: float
    series: dict = field(default_factory=dict)

    columns = ("observable", "avg_u", "avg_v", "gap", "se_u", "se_v", "pass")

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def table(self):
        return [(r.observable, r.avg_u, r.avg_v, r.gap, r.se_u, r.se_v, int(r.passed)) for r in self.rows]


def _run_pair(cfg, u0, v0, horizon, stride, streams, purpose):
    steps = int(round(horizon / cfg.dt))
    every = int(round(stride / cfg.dt))
    if every < 1 or abs(every * cfg.dt - stride) > 1e-9 * stride:
        raise ValueError(f"stride {stride} is not a multiple of dt {cfg.dt}")
    pair = np.stack([u0.coeffs, v0.coeffs])
    inc = _StreamIncrements([rng_stream(cfg.seed, purpose, s) for s in streams], len(cfg.sigma), cfg.dt)
    t, fields_, _, _, _ = integrate(cfg.stepper, pair, steps, inc, every, keep_fields=True)
    return t, fields_


def uniqueness_gap(
    cfg,
    u0,
    v0,
    observables,
    horizon,
    burn_in=None,
    stride=1.0,
    *,
    streams=(0, 1),
    tol=GAP_TOL,
    floor=GAP_FLOOR,
    purpose="ergodic",
):
    """Compare post-burn-in averages along two runs driven by independent noise.

    ``u`` draws from stream ``streams[0]`` and ``v`` from ``streams[1]``;
    swapping both the initial data and the streams relabels the report.
    """
    burn_in = 0.25 * horizon if burn_in is None else burn_in
    t, fields_ = _run_pair(cfg, u0, v0, horizon, stride, streams, purpose)
    idx = sample_indices(t, burn_in, stride)
    if idx.size < N_BATCHES:
        raise ValueError(f"only {idx.size} samples after burn-in; need at least {N_BATCHES}")
    rows = []
    series = {}
    for phi in observables:
        a = phi(fields_[idx, 0])
        b = phi(fields_[idx, 1])
        series[phi.name] = (a, b)
        rows.append(
            GapRow(phi.name, float(a.mean()), float(b.mean()), batch_means_se(a), batch_means_se(b), tol, floor)
        )
    return ErgodicReport(rows, float(burn_in), float(stride), int(idx.size), float(horizon), series)


@dataclass
class CouplingSeries:
    """``||delta(t_n)||`` and the running Cesaro differences per observable."""

    n: np.ndarray
    t: np.ndarray
    delta_l2: np.ndarray
    cesaro: dict
    cesaro_bound: np.ndarray

    @property
    def bound_holds(self):
        """``|cesaro_n| <= (1/n) sum ||delta_k||`` for every observable and ``n``."""
        slack = 1e-12 * (1.0 + self.cesaro_bound)
        return all(bool(np.all(np.abs(c) <= self.cesaro_bound + slack)) for c in self.cesaro.values())

    def table(self):
        names = list(self.cesaro)
        cols = ["n", "t_n", "delta_l2"] + [f"cesaro_{k}" for k in names]
        rows = [
            (int(self.n[i]), self.t[i], self.delta_l2[i], *(self.cesaro[k][i] for k in names))
            for i in range(len(self.n))
        ]
        return cols, rows


def coupling_limit_series(t, fields_u, fields_v, observables, stride=None):
    """Cesaro differences ``(1/n) sum_{k=1}^n (phi(u_k) - phi(v_k))`` for a same-noise pair.

    ``fields_u`` and ``fields_v`` hold the states at times ``t``; with
    ``stride`` only multiples of it are used.  ``k = 0`` is the initial time
    and is left out of the sums.
    """
    t = np.asarray(t)
    idx = np.arange(len(t)) if stride is None else sample_indices(t, 0.0, stride)
    tk = t[idx]
    u = fields_u[idx]
    v = fields_v[idx]
    grid = observables[0].grid
    d = u - v
    delta = np.sqrt(np.maximum(_inner(grid, d, d), 0.0))
    n = np.arange(len(idx))
    count = np.maximum(n, 1)
    bound = np.concatenate([[0.0], np.cumsum(delta[1:])]) / count
    ces = {}
    for phi in observables:
        diff = phi(u) - phi(v)
        ces[phi.name] = np.concatenate([[0.0], np.cumsum(diff[1:])]) / count
    return CouplingSeries(n, tk, delta, ces, bound)

