"""Numba vs numpy timings for the hot spectral kernels and a full ensemble step.

    python benchmarks/bench_kernels.py [--n 32] [--batch 1 64] [--repeat 20]

Kernel timings run both variants in one process.  The end-to-end step timing
runs once per backend in a subprocess, toggled by ``ANISONS_DISABLE_NUMBA``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from anisons import kernels
from anisons.noise import NoiseOperator, decay_modes
from anisons.spectral import Grid
from anisons.stepper import ExponentialStepper

STEP_SNIPPET = """
import time, numpy as np
from anisons.spectral import Grid
from anisons.noise import NoiseOperator, decay_modes
from anisons.stepper import ExponentialStepper
from anisons._accel import backend_name
g = Grid({n}, {n})
st = ExponentialStepper(g, 1.0, 1e-3, NoiseOperator(decay_modes(12, 1.0, target_K=0.04), g))
rng = np.random.default_rng(0)
u = np.zeros(({b}, 2) + g.spectral_shape, complex)
xi = rng.standard_normal(({b}, 12)) * np.sqrt(1e-3)
for _ in range(5):
    u = st.advance(u, xi)
t0 = time.perf_counter()
for _ in range({reps}):
    u = st.advance(u, xi)
print(backend_name(), (time.perf_counter() - t0) / {reps})
"""


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(n, batch, repeat):
    g = Grid(n, n)
    sigma = NoiseOperator(decay_modes(12, 1.0, target_K=0.04), g)
    st = ExponentialStepper(g, 1.0, 1e-3, sigma)
    rng = np.random.default_rng(0)
    shape = (batch, 2) + g.spectral_shape
    u = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * g.mask
    prod = st.products(u)
    up = rng.standard_normal((batch, 2) + g.shape)
    xiq = rng.standard_normal((batch, len(sigma))) * st.q
    sym = st.sym
    args = {
        "advance_modes": (
            u, prod, xiq, st.k1, st.k2, st.inv_ksq, st.prop, st.mask, st.dt, st.pos_i, st.pos_j, st.npos, st.coef
        ),
        "pointwise_products": (up,),
        "spectral_moments": (u, sym),
        "noise_projections": (u, st.pos_i, st.pos_j, st.npos, st.wcoef),
    }
    rows = []
    for name, a in args.items():
        f_np = getattr(kernels, name + "_numpy")
        f_nb = getattr(kernels, name + "_numba")
        t_np = _best(lambda: f_np(*a), repeat)
        if f_nb is None:
            rows.append((name, t_np, float("nan")))
            continue
        f_nb(*a)  # compile outside the timed region
        t_nb = _best(lambda: f_nb(*a), repeat)
        rows.append((name, t_np, t_nb))
    return rows


def step_time(n, batch, reps, disable):
    env = dict(os.environ, ANISONS_DISABLE_NUMBA="1" if disable else "0")
    code = STEP_SNIPPET.format(n=n, b=batch, reps=reps)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    name, t = out.stdout.split()
    return name, float(t)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--batch", type=int, nargs="+", default=[1, 64])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)

    for b in args.batch:
        print(f"\n{args.n}x{args.n}, batch {b}")
        print(f"{'kernel':<20}{'numpy [us]':>12}{'numba [us]':>12}{'speedup':>10}")
        for name, t_np, t_nb in kernel_table(args.n, b, args.repeat):
            print(f"{name:<20}{t_np * 1e6:12.1f}{t_nb * 1e6:12.1f}{t_np / t_nb:10.2f}")
        reps = max(20, 2000 // b)
        steps = [step_time(args.n, b, reps, disable) for disable in (True, False)]
        for name, t in steps:
            print(f"full step ({name}): {t * 1e6:.1f} us, {t * 1e6 / b:.1f} us per replica")


if __name__ == "__main__":
    main()
