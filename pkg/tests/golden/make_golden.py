"""Regenerate the golden CSVs for every demo config.

    python tests/golden/make_golden.py [--backend numba|numpy|both] [--only NAME ...]

Goldens are kept per kernel backend: the two backends agree to round-off but
not bitwise.  Each demo runs through the installed CLI with ``--threads 1``;
only the CSV outputs are kept.
"""

import argparse
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

HERE = Path(__file__).resolve().parent
CONFIGS = HERE.parents[1] / "configs"

# demo name -> subcommand; the config is configs/<name>.toml
DEMOS = {
    "simulate": "simulate",
    "simulate_zero": "simulate",
    "couple": "couple",
    "tails": "tails",
    "tails_deterministic": "tails",
    "ergodic": "ergodic",
    "gn": "gn-check",
    "calibrate": "calibrate",
}


def backend_env(backend):
    return dict(os.environ, ANISONS_DISABLE_NUMBA="1" if backend == "numpy" else "0")


def run_demo(name, out, threads=1, env=None):
    cmd = [sys.executable, "-m", "anisons.cli", DEMOS[name], "--config", str(CONFIGS / f"{name}.toml")]
    cmd += ["--out", str(out), "--threads", str(threads)]
    return subprocess.run(cmd, env=env, capture_output=True, text=True)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--backend", choices=["numba", "numpy", "both"], default="both")
    p.add_argument("--only", nargs="+", choices=sorted(DEMOS), default=sorted(DEMOS))
    args = p.parse_args(argv)
    backends = ["numba", "numpy"] if args.backend == "both" else [args.backend]
    for backend in backends:
        for name in args.only:
            with tempfile.TemporaryDirectory() as tmp:
                res = run_demo(name, tmp, env=backend_env(backend))
                if res.returncode != 0:
                    sys.exit(f"{backend}/{name}: exit {res.returncode}\n{res.stderr}")
                dest = HERE / backend / name
                shutil.rmtree(dest, ignore_errors=True)
                dest.mkdir(parents=True)
                for f in sorted(Path(tmp).glob("*.csv")):
                    shutil.copy(f, dest / f.name)
            print(f"{backend}/{name}: {len(list(dest.glob('*.csv')))} files")


if __name__ == "__main__":
    main()
