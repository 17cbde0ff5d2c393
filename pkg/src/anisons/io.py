"""Field files, CSV output, run configs and the run manifest.

Binary field layout (little endian): ``int64 n_h, int64 n_v, float64 L``,
then for every mode ``(m1, m2)`` with ``m1`` and ``m2`` running from
``-n/2`` to ``n/2 - 1`` (``m1`` slowest) the four float64 values
``Re u1, Im u1, Re u2, Im u2``.
"""

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .errors import ConfigError
from .noise import NoiseOperator, decay_modes
from .spectral import Grid, SpectralVelocity
from .stepper import InitSpec, SolverConfig

_HEADER = np.dtype([("n_h", "<i8"), ("n_v", "<i8"), ("L", "<f8")])


def _full_spectrum(u):
    """Coefficients on the whole ``(n_h, n_v)`` mode lattice, ordered from ``-n/2``."""
    g = u.grid
    nh, nv = g.shape
    half = u.coeffs
    full = np.empty((2, nh, nv), complex)
    full[:, :, : nv // 2 + 1] = half
    neg_h = (-np.arange(nh)) % nh
    for j in range(nv // 2 + 1, nv):
        full[:, :, j] = np.conj(half[:, neg_h, nv - j])
    return np.fft.fftshift(full, axes=(-2, -1))


def _mode_lists(grid):
    m1 = np.arange(-grid.n_h // 2, grid.n_h // 2)
    m2 = np.arange(-grid.n_v // 2, grid.n_v // 2)
    return np.meshgrid(m1, m2, indexing="ij")


def save_field(u, path):
    g = u.grid
    full = _full_spectrum(u)
    body = np.stack([full[0].real, full[0].imag, full[1].real, full[1].imag], axis=-1)
    head = np.array([(g.n_h, g.n_v, g.box_length)], dtype=_HEADER)
    with open(path, "wb") as fh:
        fh.write(head.tobytes())
        fh.write(body.astype("<f8").tobytes())


def load_field(path, dealias_fraction=2.0 / 3.0):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.itemsize:
        raise ValueError(f"{path}: truncated header")
    head = np.frombuffer(raw[: _HEADER.itemsize], dtype=_HEADER)[0]
    nh, nv, L = int(head["n_h"]), int(head["n_v"]), float(head["L"])
    expected = _HEADER.itemsize + nh * nv * 4 * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for a {nh}x{nv} field, found {len(raw)}")
    body = np.frombuffer(raw[_HEADER.itemsize :], dtype="<f8").reshape(nh, nv, 4)
    full = np.stack([body[..., 0] + 1j * body[..., 1], body[..., 2] + 1j * body[..., 3]])
    full = np.fft.ifftshift(full, axes=(-2, -1))
    g = Grid(nh, nv, L, dealias_fraction)
    return SpectralVelocity(np.ascontiguousarray(full[:, :, : nv // 2 + 1]), g)


def dump_spectrum(u, path):
    """Text dump, one line per mode: ``m1 m2 Re u1 Im u1 Re u2 Im u2``."""
    full = _full_spectrum(u)
    m1, m2 = _mode_lists(u.grid)
    with open(path, "w") as fh:
        for a, b, c1, c2 in zip(m1.ravel(), m2.ravel(), full[0].ravel(), full[1].ravel()):
            fh.write(f"{a} {b} {c1.real:.17g} {c1.imag:.17g} {c2.real:.17g} {c2.imag:.17g}\n")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, columns, rows):
    """CSV with every float written to 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_columns(path, data):
    """CSV from a dict of equal-length 1-d arrays, keys as the header."""
    cols = list(data)
    rows = zip(*(np.asarray(data[c]) for c in cols))
    write_csv(path, cols, rows)


LEDGER_COLUMNS = ("t", "l2_sq", "d1_sq", "grad_sq", "d1grad_sq", "M0", "QV0", "M1", "QV1")


def write_ledger(path, ledger):
    write_columns(path, {c: getattr(ledger, c) for c in LEDGER_COLUMNS})


# ---------------------------------------------------------------- configs

_TOP_KEYS = {
    "lambda", "dt", "t_final", "output_every", "seed", "grid", "noise", "init", "output",
    "couple", "tails", "ergodic", "gn", "calibrate",
}


def _get(table, key, prefix, kind=float, default=None, required=False):
    name = f"{prefix}{key}"
    if key not in table:
        if required:
            raise ConfigError(f"missing required key '{name}'", name)
        return default
    val = table[key]
    try:
        if kind is int:
            if isinstance(val, bool) or int(val) != val:
                raise ValueError
            return int(val)
        if kind is float:
            if isinstance(val, bool):
                raise ValueError
            return float(val)
        if kind is str:
            if not isinstance(val, str):
                raise ValueError
            return val
    except (TypeError, ValueError):
        raise ConfigError(f"key '{name}' must be {kind.__name__}, got {val!r}", name) from None
    return val


def _table(doc, key, prefix=""):
    val = doc.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"'{prefix}{key}' must be a table", prefix + key)
    return val


def _check_keys(table, allowed, prefix):
    for k in table:
        if k not in allowed:
            raise ConfigError(f"unknown key '{prefix}{k}'", prefix + k)


def parse_grid(doc):
    t = _table(doc, "grid")
    _check_keys(t, {"n_h", "n_v", "L", "dealias"}, "grid.")
    try:
        return Grid(
            _get(t, "n_h", "grid.", int, 64),
            _get(t, "n_v", "grid.", int, 64),
            _get(t, "L", "grid.", float, 2 * np.pi),
            _get(t, "dealias", "grid.", float, 2.0 / 3.0),
        )
    except ValueError as e:
        raise ConfigError(str(e), "grid") from None


def parse_noise(doc, grid):
    t = _table(doc, "noise")
    _check_keys(t, {"modes", "decay"}, "noise.")
    if "modes" in t and "decay" in t:
        raise ConfigError("give either 'noise.modes' or 'noise.decay', not both", "noise")
    try:
        if "decay" in t:
            d = t["decay"]
            if not isinstance(d, dict):
                raise ConfigError("'noise.decay' must be a table", "noise.decay")
            _check_keys(d, {"count", "exponent", "amplitude", "K"}, "noise.decay.")
            modes = decay_modes(
                _get(d, "count", "noise.decay.", int, required=True),
                _get(d, "exponent", "noise.decay.", float, required=True),
                amplitude=_get(d, "amplitude", "noise.decay."),
                target_K=_get(d, "K", "noise.decay."),
            )
        else:
            modes = []
            for i, m in enumerate(t.get("modes", [])):
                p = f"noise.modes[{i}]."
                if not isinstance(m, dict):
                    raise ConfigError(f"'noise.modes[{i}]' must be a table", f"noise.modes[{i}]")
                _check_keys(m, {"m1", "m2", "q"}, p)
                modes.append(
                    (
                        _get(m, "m1", p, int, required=True),
                        _get(m, "m2", p, int, required=True),
                        _get(m, "q", p, float, required=True),
                    )
                )
        return NoiseOperator(modes, grid)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e), "noise") from None


def parse_init(t, prefix="init."):
    if not isinstance(t, dict):
        raise ConfigError(f"'{prefix[:-1]}' must be a table", prefix[:-1])
    _check_keys(t, {"kind", "params"}, prefix)
    kind = _get(t, "kind", prefix, str, "zero")
    if kind not in ("zero", "random", "file"):
        raise ConfigError(f"'{prefix}kind' must be zero, random or file, got {kind!r}", prefix + "kind")
    params = t.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"'{prefix}params' must be a table", prefix + "params")
    allowed = {"random": {"seed", "spectrum_exponent", "amplitude", "h1_norm"}, "file": {"path"}, "zero": set()}[kind]
    _check_keys(params, allowed, prefix + "params.")
    if kind == "file" and "path" not in params:
        raise ConfigError(f"missing required key '{prefix}params.path'", prefix + "params.path")
    return InitSpec(kind, dict(params))


SECTION_KEYS = {
    "couple": {"v0", "R", "C2", "floor"},
    "tails": {"replicas", "e_replicas", "T", "cells", "R_over_K", "R", "eps_num"},
    "ergodic": {"v0", "horizon", "burn_in", "stride", "tol", "witness_seed", "swap", "coupling_series"},
    "gn": {"pairs", "spectrum_exponent"},
    "calibrate": {"lambdas", "Ks", "h1_norms", "kinds", "runs_per_cell", "T", "R", "delta_h1"},
}


class Section(dict):
    """A subcommand table that knows its own name for error messages."""

    def __init__(self, name, data):
        super().__init__(data)
        self.name = name


@dataclass
class RunConfig:
    """A parsed config file: the solver settings plus per-subcommand tables."""

    solver: SolverConfig
    raw: dict
    source: str = None
    sections: dict = field(default_factory=dict)

    def section(self, name):
        return self.sections.get(name, Section(name, {}))

    @property
    def output_dir(self):
        return self.raw.get("output", {}).get("dir")


def config_from_dict(doc, source=None):
    _check_keys(doc, _TOP_KEYS, "")
    for k in ("lambda", "dt", "t_final"):
        _get(doc, k, "", float, required=True)
    grid = parse_grid(doc)
    sigma = parse_noise(doc, grid)
    init = parse_init(doc.get("init", {}))
    seed = _get(doc, "seed", "", int, 0)
    if seed < 0 or seed >= 2**64:
        raise ConfigError(f"'seed' must be an unsigned 64-bit integer, got {seed}", "seed")
    out = _table(doc, "output")
    _check_keys(out, {"dir"}, "output.")
    if init.kind == "file" and source is not None and not os.path.isabs(init.params["path"]):
        init.params["path"] = os.path.join(os.path.dirname(os.path.abspath(source)), init.params["path"])
    solver = SolverConfig(
        lam=_get(doc, "lambda", ""),
        dt=_get(doc, "dt", ""),
        t_final=_get(doc, "t_final", ""),
        output_every=_get(doc, "output_every", "", int, 1),
        grid=grid,
        sigma=sigma,
        seed=seed,
        initial_condition=init,
    )
    sections = {}
    for name, allowed in SECTION_KEYS.items():
        t = _table(doc, name)
        _check_keys(t, allowed, name + ".")
        sections[name] = Section(name, t)
    return RunConfig(solver, doc, source, sections)


def load_config(path):
    """Parse a TOML run config; every problem is a :class:`ConfigError`."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}", "config") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}", "config") from None
    return config_from_dict(doc, str(path))


# ---------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = __version__
    backend: str = ""
    started: float = field(default_factory=time.time)
    finished: float = None
    verdicts: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    exit_code: int = None

    def write(self, out_dir):
        self.finished = time.time()
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        return path


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")
