"""Monte Carlo tail checks, the event E_R and same-noise contraction.

All tail assertions are one-sided: an empirical frequency passes when the
lower end of its 99% Wilson interval does not exceed the theoretical bound.
Suprema over ``t >= 0`` are taken over the simulated window ``[0, T]`` at
every time step.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from statistics import NormalDist

import numpy as np

from .energy import compute_E0, compute_E1
from .errors import CalibrationError, PreconditionError
from .noise import NoiseMode, NoiseOperator, rng_stream
from .spectral import random_divfree_field, scaled_to_h1
from .stepper import run_ensemble, simulate_coupled

CONFIDENCE = 0.99


def wilson_interval(k, n, confidence=CONFIDENCE):
    """Wilson score interval ``(lo, hi)`` for ``k`` successes in ``n`` trials."""
    if n <= 0:
        raise ValueError("Wilson interval needs at least one trial")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the exact endpoints at k = 0 and k = n are 0 and 1; do not lose them to rounding
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@dataclass
class TailRow:
    """One cell of a tail report.

    ``side`` is ``'upper'`` for ``P(event) <= bound`` claims and ``'lower'``
    for ``P(event) >= bound``.
    """

    kind: str
    gamma: float
    R: float
    bound: float
    count: int
    n: int
    excluded: int
    T: float
    side: str = "upper"
    lo: float = field(init=False)
    hi: float = field(init=False)

    def __post_init__(self):
        if self.n > 0:
            self.lo, self.hi = wilson_interval(self.count, self.n)
        else:
            self.lo, self.hi = 0.0, 1.0

    @property
    def freq(self):
        return self.count / self.n if self.n else float("nan")

    @property
    def halfwidth(self):
        return 0.5 * (self.hi - self.lo)

    @property
    def passed(self):
        if self.side == "upper":
            return self.lo <= self.bound
        return self.hi >= self.bound


@dataclass
class TailReport:
    rows: list

    columns = ("kind", "gamma", "R", "freq", "halfwidth", "lo", "hi", "bound", "count", "n", "excluded", "T", "pass")

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def table(self):
        return [
            (r.kind, r.gamma, r.R, r.freq, r.halfwidth, r.lo, r.hi, r.bound, r.count, r.n, r.excluded, r.T, int(r.passed))
            for r in self.rows
        ]

    def __add__(self, other):
        return TailReport(self.rows + other.rows)


@dataclass
class TailSample:
    """Per-replica suprema from one ensemble on ``[0, T]``.

    ``sup_mg[g]`` is ``sup_t (M0 - g QV0)``; blown-up replicas are kept in
    the arrays but flagged and excluded from every frequency.
    """

    T: float
    K: float
    sup_mg: dict
    sup_E0: np.ndarray
    sup_E1: np.ndarray
    blown: np.ndarray

    @property
    def n(self):
        return int(np.sum(~self.blown))

    @property
    def excluded(self):
        return int(np.sum(self.blown))

    def head(self, replicas):
        """The first ``replicas`` replicas, as if only those had been run."""
        s = slice(0, replicas)
        return TailSample(self.T, self.K, {g: v[s] for g, v in self.sup_mg.items()}, self.sup_E0[s], self.sup_E1[s], self.blown[s])

    def _count(self, values, threshold):
        ok = ~self.blown
        return int(np.sum(values[ok] >= threshold))


def tail_ensemble(cfg, replicas, T, gammas=(), *, threads=1, u0=None):
    """Run ``replicas`` trajectories to ``T`` and keep the suprema tail checks need."""
    run = replace(cfg, t_final=T, output_every=1)
    gammas = tuple(float(g) for g in gammas)

    def reducer(ledger, blown):
        out = {("mg", g): np.max(ledger.M0 - g * ledger.QV0, axis=0) for g in gammas}
        out["E0"] = np.max(compute_E0(ledger), axis=0)
        out["E1"] = np.max(compute_E1(ledger), axis=0)
        return out

    res = run_ensemble(run, replicas, reducer, u0=u0, threads=threads, purpose="tails")
    return TailSample(
        T=float(T),
        K=cfg.sigma.K,
        sup_mg={g: res[("mg", g)] for g in gammas},
        sup_E0=res["E0"],
        sup_E1=res["E1"],
        blown=res["blown"],
    )


def exp_martingale_tail(cfg, cells, replicas, T, *, sample=None, threads=1):
    """``P(sup (M_t - g <M>_t) >= R) <= exp(-g R)`` on a list of ``(g, R)`` cells.

    Every cell is evaluated on the same replica set.  Pass ``sample`` to reuse
    an ensemble that already carries the needed ``g`` values.
    """
    if replicas < 100:
        raise PreconditionError(f"tail estimates need at least 100 replicas, got {replicas}")
    cells = [(float(g), float(R)) for g, R in cells]
    for g, R in cells:
        if not (g > 0 and R > 0):
            raise ValueError(f"cell (gamma={g}, R={R}) must have both entries positive")
    if sample is None:
        sample = tail_ensemble(cfg, replicas, T, sorted({g for g, _ in cells}), threads=threads)
    else:
        sample = sample.head(replicas)
    rows = []
    for g, R in cells:
        count = sample._count(sample.sup_mg[g], R)
        rows.append(TailRow("martingale", g, R, float(np.exp(-g * R)), count, sample.n, sample.excluded, sample.T))
    return TailReport(rows)


def tail_probability_E(cfg, functional, R, replicas, T, *, sample=None, threads=1, eps_num=0.0):
    """``P(sup E >= 2R) <= exp(-R / 2K)`` for ``functional`` in ``{'E0', 'E1'}``.

    With ``K = 0`` the bound is zero and an exceedance means
    ``sup E > eps_num``, the time-discretization allowance.
    """
    if functional not in ("E0", "E1"):
        raise ValueError(f"functional must be 'E0' or 'E1', got {functional!r}")
    if sample is None:
        if replicas < 100 and cfg.sigma.K > 0:
            raise PreconditionError(f"tail estimates need at least 100 replicas, got {replicas}")
        sample = tail_ensemble(cfg, replicas, T, threads=threads)
    else:
        sample = sample.head(replicas)
    sup = sample.sup_E0 if functional == "E0" else sample.sup_E1
    K = sample.K
    if K > 0:
        count = sample._count(sup, 2 * R)
        bound = float(np.exp(-R / (2 * K)))
    else:
        count = int(np.sum(sup[~sample.blown] > eps_num))
        bound = 0.0
    row = TailRow(functional, float("nan"), float(R), bound, count, sample.n, sample.excluded, sample.T)
    return TailReport([row])


def event_ER(ledger, R):
    """Whether ``sup E0 <= 2R`` and ``sup E1 <= 2R`` over the ledger's sample times.

    An ensemble ledger gives one flag per replica.
    """
    e0 = np.max(compute_E0(ledger), axis=0)
    e1 = np.max(compute_E1(ledger), axis=0)
    ok = (e0 <= 2 * R) & (e1 <= 2 * R)
    return bool(ok) if np.ndim(ok) == 0 else ok


def probability_ER(sample, R):
    """``P(E_R) >= 1 - 2 exp(-R / 2K)``: passes when the Wilson upper end reaches it."""
    ok = ~sample.blown
    inside = (sample.sup_E0 <= 2 * R) & (sample.sup_E1 <= 2 * R)
    count = int(np.sum(inside[ok]))
    bound = 1.0 - 2.0 * np.exp(-R / (2 * sample.K)) if sample.K > 0 else 1.0
    row = TailRow("E_R", float("nan"), float(R), float(bound), count, sample.n, sample.excluded, sample.T, side="lower")
    return TailReport([row])


def delta_bound_curve(delta0_sq, lam, ledger_u, C0):
    """``||delta0||^2 exp(-2 lam t + C0 int_0^t gn(u))`` at the ledger's sample times."""
    return delta0_sq * np.exp(-2 * lam * ledger_u.t + C0 * ledger_u.int_gn)


def coupled_bound_curve(delta0_sq, lam, K, R, u0_h1_sq, t, C2):
    """``||delta0||^2 exp((-2 lam + 1 + C2 K) t + C2 (R + ||u0||_{H1}^2))``."""
    return delta0_sq * np.exp((-2 * lam + 1 + C2 * K) * np.asarray(t) + C2 * (R + u0_h1_sq))


@dataclass
class CoupledRun:
    """A same-noise pair reduced to what calibration needs."""

    run_id: str
    record: object
    ledger_u: object


def scaled_noise(sigma, K):
    """The same modes with amplitudes rescaled so that ``sum q^2 = K``."""
    if sigma.K == 0:
        raise ValueError("cannot rescale a zero noise operator")
    f = np.sqrt(K / sigma.K)
    return NoiseOperator([NoiseMode(m.m1, m.m2, m.q * f) for m in sigma.modes], sigma.grid)


def shear_part(u):
    """The ``k1 = 0`` column of ``u``: a horizontal shear flow, untouched by dissipation."""
    c = u.coeffs.copy()
    c[..., 1:, :] = 0
    return type(u)(c, u.grid)


PERTURBATIONS = ("broadband", "shear")


def coupled_ensemble(cfg, lambdas, Ks, h1_norms, runs_per_cell, T, *, kinds=PERTURBATIONS, delta_h1=0.1, threads=1):
    """Same-noise pairs over ``lambdas x Ks x h1_norms x kinds``.

    ``u0`` is a random field scaled to the cell's H1 norm and ``v0 = u0 + d``
    with ``||d||_{H1} = delta_h1``; ``d`` is a random field (``broadband``) or
    its ``k1 = 0`` part (``shear``).  Run ``i`` draws its fields and noise
    from streams keyed by ``(cfg.seed, ..., i)``.
    """
    for k in kinds:
        if k not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation kind {k!r}")
    cells = [c for c in product(lambdas, Ks, h1_norms, kinds) for _ in range(runs_per_cell)]

    def work(i):
        lam, K, h1, kind = cells[i]
        sigma = scaled_noise(cfg.sigma, K) if K > 0 else NoiseOperator([], cfg.grid)
        run = replace(cfg, lam=lam, sigma=sigma, t_final=T)
        rng = rng_stream(cfg.seed, "calibrate-init", i)
        u0 = scaled_to_h1(random_divfree_field(cfg.grid, rng), h1)
        d = random_divfree_field(cfg.grid, rng)
        if kind == "shear":
            d = shear_part(d)
        v0 = u0 + scaled_to_h1(d, delta_h1)
        _, _, rec, lu, _ = simulate_coupled(run, u0, v0, purpose="calibrate", replica=i)
        return CoupledRun(f"{i}:lam={lam:g},K={K:g},h1={h1:g},{kind}", rec, lu)

    idx = range(len(cells))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, idx))
    return [work(i) for i in idx]


@dataclass
class Calibration:
    """Calibrated constants, the runs attaining them and per-run implied values.

    ``rows`` holds ``(run_id, implied_C0, implied_C2, in_ER)``; implied values
    are ``nan`` where a run carries no information.
    """

    C0: float
    C0_run: str
    C2: float
    C2_run: str
    R: float
    runs: int
    runs_in_ER: int
    rows: list = field(default_factory=list, repr=False)

    columns = ("run_id", "implied_C0", "implied_C2", "in_ER")


def _implied(log_ratio, denom):
    """Max over times of ``log_ratio / denom`` where ``denom > 0``; nan if none."""
    use = denom > 0
    if not np.any(use):
        return float("nan")
    return float(np.max(log_ratio[use] / denom[use]))


def calibrate_constants(runs, R):
    """Smallest ``C0`` and ``C2`` for which both delta bounds hold on every run.

    ``C0`` comes from ``log(|d|^2/|d0|^2) + 2 lam t <= C0 int gn``, over all runs.
    ``C2`` comes from ``log(...) + (2 lam - 1) t <= C2 (K t + R + |u0|_{H1}^2)``,
    over runs inside ``E_R``.  Both are floored at zero; the reported run is
    the first one attaining the maximum.
    """
    rows = []
    for run in runs:
        rec, L = run.record, run.ledger_u
        if rec.delta0_sq == 0 or not np.all(rec.delta_sq > 0):
            continue
        lr = np.log(rec.delta_sq / rec.delta0_sq)
        t = rec.t
        # at t = 0 both sides vanish; later times carry the information
        c0 = _implied(lr[1:] + 2 * rec.lam * t[1:], L.int_gn[1:])
        inside = bool(event_ER(L, R))
        c2 = _implied(lr + (2 * rec.lam - 1) * t, rec.K * t + R + rec.u0_h1_sq) if inside else float("nan")
        rows.append((run.run_id, c0, c2, inside))
    if not rows:
        raise CalibrationError("no coupled run has a nonzero difference; constants are undefined")

    def best(col, keep):
        vals = [(r[col], r[0]) for r in rows if keep(r) and not np.isnan(r[col])]
        if not vals:
            return 0.0, None
        top = max(v for v, _ in vals)
        return max(0.0, top), next(i for v, i in vals if v == top)

    C0, id0 = best(1, lambda r: True)
    C2, id2 = best(2, lambda r: r[3])
    return Calibration(C0, id0, C2, id2, float(R), len(rows), sum(r[3] for r in rows), rows)


@dataclass
class ContractionVerdict:
    status: str  # 'pass', 'fail' or 'no-claim'
    reason: str = ""
    first_violation_t: float = None
    final_ratio: float = None

    @property
    def passed(self):
        return self.status != "fail"


def contraction_check(record, ledger_u, C2, R, floor=1e-6):
    """Check the E_R contraction bound on one coupled run.

    Returns ``no-claim`` when ``lam <= (1 + C2 K)/2`` or the run leaves E_R,
    since the estimate says nothing there.  Otherwise the bound must hold at
    every sample time and the final ``||delta||^2 / ||delta0||^2`` must be
    below ``floor``.
    """
    if record.delta0_sq == 0:
        return ContractionVerdict("pass", "identical initial data", final_ratio=0.0)
    threshold = (1 + C2 * record.K) / 2
    if not record.lam > threshold:
        return ContractionVerdict("no-claim", f"lambda={record.lam} is not above (1 + C2 K)/2 = {threshold}")
    if not event_ER(ledger_u, R):
        return ContractionVerdict("no-claim", "run is outside E_R")
    bound = coupled_bound_curve(record.delta0_sq, record.lam, record.K, R, record.u0_h1_sq, record.t, C2)
    record.bound, record.R, record.C2, record.event_ER = bound, R, C2, True
    ratio = float(record.delta_sq[-1] / record.delta0_sq)
    bad = np.flatnonzero(record.delta_sq > bound)
    if bad.size:
        return ContractionVerdict("fail", "bound violated", float(record.t[bad[0]]), ratio)
    if not ratio <= floor:
        return ContractionVerdict("fail", f"final squared ratio {ratio:.3e} above floor {floor:.1e}", final_ratio=ratio)
    return ContractionVerdict("pass", final_ratio=ratio)


def require_threshold(lam, K, C2):
    """Raise :class:`PreconditionError` unless ``lam > (1 + C2 K)/2``."""
    threshold = (1 + C2 * K) / 2
    if not lam > threshold:
        raise PreconditionError(f"lambda={lam} must exceed (1 + C2 K)/2 = {threshold:.6g}")
    return threshold
