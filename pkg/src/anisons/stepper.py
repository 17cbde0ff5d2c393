"""Exponential Euler-Maruyama integration of the damped anisotropic system.

One step maps ``u`` to ``E [u - dt P div(u (x) u)] + E sigma xi`` where
``E = exp(-(k1^2 + lam) dt)`` acts modewise and ``P`` is the Leray projector.
Only the horizontal wavenumber is dissipated.

Everything runs on batches ``(B, 2, nh, nr)``; a coupled pair is a batch of
two driven by one increment sequence, an ensemble is a sequence of fixed-size
chunks with one RNG stream per replica.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from . import kernels
from .energy import MOMENTS, EnergyLedger, gn_integrand
from .errors import BlowUpError, ConfigError
from .noise import NoiseOperator, rng_stream
from .spectral import (
    Grid,
    SpectralVelocity,
    l2_norm_sq,
    random_divfree_field,
    scaled_to_h1,
)

BLOWUP_FACTOR = 1e6
ENSEMBLE_CHUNK = 64


def linear_propagator(grid, lam, dt):
    """Modewise multiplier ``exp(-(k1^2 + lam) dt)``; ``k2`` does not enter."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return np.exp(-(grid.k1**2 + lam) * dt) * np.ones(grid.spectral_shape)


@dataclass
class InitSpec:
    """Initial condition: ``zero``, ``random`` (generator parameters) or ``file``."""

    kind: str = "zero"
    params: dict = field(default_factory=dict)

    def build(self, grid, master_seed=0, purpose="init"):
        if self.kind == "zero":
            return SpectralVelocity.zeros(grid)
        if self.kind == "random":
            p = dict(self.params)
            seed = p.get("seed")
            rng = rng_stream(master_seed, purpose) if seed is None else np.random.default_rng(seed)
            u = random_divfree_field(
                grid, rng, p.get("spectrum_exponent", 2.0), p.get("amplitude", 1.0)
            )
            if "h1_norm" in p:
                u = scaled_to_h1(u, float(p["h1_norm"]))
            return u
        if self.kind == "file":
            from .io import load_field

            u = load_field(self.params["path"])
            if u.grid.shape != grid.shape or u.grid.box_length != grid.box_length:
                raise ConfigError(f"field file {self.params['path']} does not match the run grid", "init.params.path")
            return SpectralVelocity(u.coeffs * grid.mask, grid)
        raise ConfigError(f"unknown init kind {self.kind!r}", "init.kind")


@dataclass
class SolverConfig:
    lam: float
    dt: float
    t_final: float
    output_every: int = 1
    grid: Grid = field(default_factory=Grid)
    sigma: NoiseOperator = None
    seed: int = 0
    initial_condition: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive (damping is required), got {self.lam}", "lambda")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}", "dt")
        if not self.t_final >= self.dt:
            raise ConfigError(f"t_final must be >= dt, got {self.t_final}", "t_final")
        if int(self.output_every) != self.output_every or self.output_every < 1:
            raise ConfigError(f"output_every must be a positive integer, got {self.output_every}", "output_every")
        self.output_every = int(self.output_every)
        if self.sigma is None:
            self.sigma = NoiseOperator([], self.grid)
        if self.sigma.grid != self.grid:
            raise ConfigError("noise operator lives on a different grid", "noise")

    @property
    def nsteps(self):
        return int(round(self.t_final / self.dt))

    @cached_property
    def stepper(self):
        return ExponentialStepper(self.grid, self.lam, self.dt, self.sigma)

    def initial_field(self):
        return self.initial_condition.build(self.grid, self.seed)


@dataclass
class Trajectory:
    """Sample times and, when kept, the fields at those times."""

    t: np.ndarray
    fields: np.ndarray
    grid: Grid
    final: np.ndarray = None

    def field(self, n):
        return SpectralVelocity(self.fields[n], self.grid)

    def final_field(self):
        return SpectralVelocity(self.final, self.grid)

    def __len__(self):
        return len(self.t)


class ExponentialStepper:
    """Precomputed tables for one ``(grid, lam, dt, sigma)`` combination."""

    def __init__(self, grid, lam, dt, sigma=None):
        self.grid = grid
        self.lam = float(lam)
        self.dt = float(dt)
        self.sigma = sigma if sigma is not None else NoiseOperator([], grid)
        g = grid
        self.prop = np.ascontiguousarray(linear_propagator(g, lam, dt))
        self.k1 = np.ascontiguousarray(g.k1[:, 0])
        self.k2 = np.ascontiguousarray(g.k2[0])
        self.inv_ksq = np.ascontiguousarray(g.inv_ksq)
        self.mask = np.ascontiguousarray(g.mask)
        aw = g.area * g.weights
        k1s, k2s = g.k1**2, g.k2**2
        symbols = [np.ones_like(g.ksq), k1s + 0 * k2s, g.ksq, k1s * g.ksq, k2s + 0 * k1s, k1s * k2s]
        self.sym = np.ascontiguousarray(np.stack([aw * s for s in symbols]))
        s = self.sigma
        self.q = s.q
        self.q_sq = s.q_sq
        self.k_sq = s.k_sq
        self.pos_i, self.pos_j, self.npos, self.coef = s.sparse()
        # (phi_j, u) = Re sum conj(area * w * phi_j) u over stored entries
        w = g.weights[self.pos_i, self.pos_j][..., None]
        self.wcoef = np.ascontiguousarray(g.area * w * self.coef)
        self._l2_share = 1.0 / (1.0 + s.k_sq)
        self._h1dot_share = s.k_sq / (1.0 + s.k_sq)

    def products(self, u):
        up = sfft.irfft2(u, s=self.grid.shape, axes=(-2, -1), norm="forward")
        return sfft.rfft2(kernels.pointwise_products(up), axes=(-2, -1), norm="forward")

    def advance(self, u, xi):
        """One step for a batch ``u`` with increments ``xi`` of shape ``(B, J)``."""
        return kernels.advance_modes(
            u,
            self.products(u),
            xi * self.q,
            self.k1,
            self.k2,
            self.inv_ksq,
            self.prop,
            self.mask,
            self.dt,
            self.pos_i,
            self.pos_j,
            self.npos,
            self.coef,
        )

    def moments(self, u):
        return kernels.spectral_moments(u, self.sym)

    def projections(self, u):
        return kernels.noise_projections(u, self.pos_i, self.pos_j, self.npos, self.wcoef)


def step(u, xi, cfg):
    """Advance a single field by one step with increment ``xi`` (shape ``(J,)``)."""
    c = u.coeffs[None]
    out = cfg.stepper.advance(c, np.asarray(xi, float).reshape(1, -1))
    if not np.all(np.isfinite(out)):
        raise BlowUpError(0, context="non-finite state after one step")
    return SpectralVelocity(out[0], u.grid)


class _StreamIncrements:
    """Per-replica Wiener increments drawn in blocks."""

    def __init__(self, rngs, nmodes, dt, block=4096):
        self.rngs = rngs
        self.nmodes = nmodes
        self.sqdt = np.sqrt(dt)
        self.block = block

    def blocks(self, nsteps):
        done = 0
        while done < nsteps:
            n = min(self.block, nsteps - done)
            yield np.stack([r.standard_normal((n, self.nmodes)) for r in self.rngs], axis=1) * self.sqdt
            done += n


class _FixedIncrements:
    def __init__(self, xi):
        self.xi = np.asarray(xi, float)

    def blocks(self, nsteps):
        if self.xi.shape[0] < nsteps:
            raise ValueError(f"need {nsteps} increments, got {self.xi.shape[0]}")
        yield self.xi[:nsteps]


def integrate(stepper, u0, nsteps, increments, output_every=1, keep_fields=False, on_blowup="raise"):
    """Run a batch for ``nsteps`` steps and collect the energy ledger.

    ``increments`` is either an array ``(nsteps, B, J)`` or an object with a
    ``blocks(nsteps)`` generator.  With ``on_blowup='flag'`` a runaway replica
    is zeroed and reported in the returned ``blown`` mask instead of raising.
    Returns ``(times, fields or None, ledger, blown, final_state)``.
    """
    if not hasattr(increments, "blocks"):
        increments = _FixedIncrements(increments)
    dt = stepper.dt
    u = np.array(u0, dtype=complex)
    B = u.shape[0]
    q, q_sq, k_sq = stepper.q, stepper.q_sq, stepper.k_sq
    l2_share, h1_share = stepper._l2_share, stepper._h1dot_share

    mom = stepper.moments(u)
    gn = gn_integrand(mom[:, 1], mom[:, 4], mom[:, 5])
    cur = np.concatenate([mom, gn[:, None]], axis=1)
    proj = stepper.projections(u)
    limit = BLOWUP_FACTOR * np.maximum(1.0, np.sqrt(mom[:, 0]))
    ints = np.zeros((B, 7))
    mart = np.zeros((B, 6))  # M0, QV0, M1, QV1, QB0, QB1
    blown = np.zeros(B, bool)

    n_out = nsteps // output_every + 1 + (nsteps % output_every != 0)
    rec_t = np.empty(n_out)
    rec_cur = np.empty((n_out, B, 7))
    rec_int = np.empty((n_out, B, 7))
    rec_mart = np.empty((n_out, B, 6))
    rec_u = np.empty((n_out,) + u.shape, complex) if keep_fields else None

    def record(slot, n):
        rec_t[slot] = n * dt
        rec_cur[slot] = cur
        rec_int[slot] = ints
        rec_mart[slot] = mart
        if keep_fields:
            rec_u[slot] = u

    record(0, 0)
    slot = 1
    n = 0
    for block in increments.blocks(nsteps):
        for xi in block:
            qxi = xi * q
            mart[:, 0] += (qxi * proj).sum(axis=-1)
            mart[:, 1] += dt * (q_sq * proj * proj).sum(axis=-1)
            mart[:, 2] += (qxi * k_sq * proj).sum(axis=-1)
            mart[:, 3] += dt * (q_sq * k_sq * k_sq * proj * proj).sum(axis=-1)
            mart[:, 4] += (qxi * qxi * l2_share).sum(axis=-1)
            mart[:, 5] += (qxi * qxi * h1_share).sum(axis=-1)
            u = stepper.advance(u, xi)
            mom = stepper.moments(u)
            bad = ~np.isfinite(mom[:, 0]) | (np.sqrt(np.abs(mom[:, 0])) > limit)
            if bad.any():
                new = bad & ~blown
                if on_blowup == "raise":
                    b = int(np.flatnonzero(new)[0])
                    raise BlowUpError(n + 1, replica=b if B > 1 else None, norm=float(np.sqrt(abs(mom[b, 0]))))
                blown |= bad
                u[bad] = 0
                mom[bad] = 0
            gn = gn_integrand(mom[:, 1], mom[:, 4], mom[:, 5])
            new_cur = np.concatenate([mom, gn[:, None]], axis=1)
            ints += 0.5 * dt * (cur + new_cur)
            cur = new_cur
            proj = stepper.projections(u)
            n += 1
            if n % output_every == 0 or n == nsteps:
                record(slot, n)
                slot += 1

    s = stepper.sigma
    kw = {name: rec_cur[:, :, i] for i, name in enumerate(MOMENTS)}
    for i, name in enumerate(MOMENTS):
        kw["int_" + name] = rec_int[:, :, i]
    kw["int_gn"] = rec_int[:, :, 6]
    for i, name in enumerate(("M0", "QV0", "M1", "QV1", "QB0", "QB1")):
        kw[name] = rec_mart[:, :, i]
    ledger = EnergyLedger(
        t=rec_t,
        lam=stepper.lam,
        K=s.hs_norm_sq("H1"),
        K_l2=s.hs_norm_sq("L2"),
        K_h1dot=s.hs_norm_sq("H1dot"),
        dt=dt,
        **kw,
    )
    return rec_t, rec_u, ledger, blown, u


def simulate(cfg, *, u0=None, increments=None, keep_fields=False, replica=0):
    """Single trajectory of ``cfg``; returns ``(Trajectory, EnergyLedger)``.

    ``increments`` (shape ``(nsteps, J)``) overrides the seeded noise stream,
    which is how frozen-path refinement studies feed the same Brownian path
    at several step sizes.
    """
    u0 = cfg.initial_field() if u0 is None else u0
    if increments is None:
        inc = _StreamIncrements([rng_stream(cfg.seed, "noise", replica)], len(cfg.sigma), cfg.dt)
    else:
        inc = np.asarray(increments, float)[:, None, :]
    t, fields_, ledger, _, final = integrate(
        cfg.stepper, u0.coeffs[None], cfg.nsteps, inc, cfg.output_every, keep_fields
    )
    ledger = ledger.replica(0)
    traj = Trajectory(t, None if fields_ is None else fields_[:, 0], cfg.grid, final[0])
    return traj, ledger


@dataclass
class CouplingRecord:
    """Same-noise pair: ``||delta(t_n)||^2`` and what the bounds need."""

    t: np.ndarray
    delta_sq: np.ndarray
    lam: float
    K: float
    u0_h1_sq: float
    delta0_sq: float
    bound: np.ndarray = None
    R: float = None
    event_ER: bool = None
    C0: float = None
    C2: float = None


def simulate_coupled(cfg, u0, v0, *, increments=None, keep_fields=False, replica=0, purpose="noise"):
    """Evolve ``u`` and ``v`` with one shared increment sequence.

    Returns ``(traj_u, traj_v, record, ledger_u, ledger_v)``; the record holds
    ``||u - v||^2`` at every sample time.
    """
    from .spectral import h1_norm_sq

    pair = np.stack([u0.coeffs, v0.coeffs])
    if increments is None:
        rng = rng_stream(cfg.seed, purpose, replica)
        inc = _SharedIncrements(rng, len(cfg.sigma), cfg.dt, 2)
    else:
        xi = np.asarray(increments, float)
        inc = np.repeat(xi[:, None, :], 2, axis=1)
    t, fields_, ledger, _, _ = integrate(cfg.stepper, pair, cfg.nsteps, inc, cfg.output_every, True)
    d = SpectralVelocity(fields_[:, 0] - fields_[:, 1], cfg.grid)
    rec = CouplingRecord(
        t=t,
        delta_sq=np.asarray(l2_norm_sq(d)),
        lam=cfg.lam,
        K=cfg.sigma.K,
        u0_h1_sq=float(h1_norm_sq(u0)),
        delta0_sq=float(l2_norm_sq(u0 - v0)),
    )
    keep = fields_ if keep_fields else None
    tu = Trajectory(t, None if keep is None else keep[:, 0], cfg.grid)
    tv = Trajectory(t, None if keep is None else keep[:, 1], cfg.grid)
    return tu, tv, rec, ledger.replica(0), ledger.replica(1)


class _SharedIncrements(_StreamIncrements):
    """One stream broadcast to every member of the batch."""

    def __init__(self, rng, nmodes, dt, copies, block=4096):
        super().__init__([rng], nmodes, dt, block)
        self.copies = copies

    def blocks(self, nsteps):
        for b in super().blocks(nsteps):
            yield np.repeat(b, self.copies, axis=1)


def run_ensemble(cfg, replicas, reducer, *, u0=None, threads=1, purpose="noise", chunk=ENSEMBLE_CHUNK):
    """Run ``replicas`` independent trajectories and reduce each chunk.

    Replica ``r`` always draws from stream ``(cfg.seed, purpose, r)`` and
    chunks have a fixed composition, so results do not depend on ``threads``.
    ``reducer(ledger, blown)`` receives an ensemble ledger for one chunk and
    returns a dict of per-replica arrays; the dicts are concatenated.
    """
    u0 = cfg.initial_field() if u0 is None else u0
    starts = list(range(0, replicas, chunk))

    def work(start):
        ids = range(start, min(start + chunk, replicas))
        rngs = [rng_stream(cfg.seed, purpose, r) for r in ids]
        batch = np.repeat(u0.coeffs[None], len(rngs), axis=0)
        inc = _StreamIncrements(rngs, len(cfg.sigma), cfg.dt)
        _, _, ledger, blown, _ = integrate(cfg.stepper, batch, cfg.nsteps, inc, cfg.output_every, on_blowup="flag")
        out = reducer(ledger, blown)
        out["blown"] = blown
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
