"""Experiment configuration: TOML schema, defaults and validation.

Schema (every table optional unless noted; unknown keys are errors)::

    name = "run"                      # label used in output file names
    scenario = "mathieu-1d"           # start from a built-in scenario

    [lattice]
    dim = 1                           # required when no scenario is given
    period = 6.283185307179586        # cubic lattice period ...
    generators = [[...], ...]         # ... or explicit direct generators (rows)

    [potential]                       # periodic V
    coefficients = [[[1], 1.0, 0.0]]  # (m-index, re, im); -m partners filled in
    cutoff = 10.0                     # plane-wave cutoff |G| <= cutoff

    [external]                        # W
    kind = "cosine_sum"               # zero | quadratic | cosine_sum | gaussian_well
    # kind-specific keys, see ExternalPotential

    [band]
    index = 1
    gap_threshold = 0.0
    gauge_twist = [0.0]               # optional constant twist of the Bloch gauge

    [initial]
    q0 = [2.5]
    p0 = [0.3]
    N = 0.7511255444649425
    A0_re = [[2.0]]   A0_im = [[0.0]]
    B0_re = [[0.0]]   B0_im = [[0.5]]

    [run]
    epsilons = [0.0625, 0.03125, 0.015625]
    horizon = 1.0
    checkpoints = [0.25, 0.5, 0.75, 1.0]
    dt_particle = 1e-3
    dt_envelope = 1e-3
    dt_field = 0.01                   # direct-solver step as a multiple of eps
    box_length = [6.283185307179586]
    box_origin = [0.0]
    points_per_period = 16            # x-grid points per fast period eps * period ...
    n_points = [4096]                 # ... or a fixed x-grid size per axis
    mode = "gaussian"                 # particle-field stepping: gaussian | grid
    system = "physical"               # physical | canonical
    direct = true                     # co-run the direct solver
    ehrenfest_c = 1.0
    seed = 0
    workers = 0                       # 0 means the CPU count

    [checks]                          # acceptance checks evaluated on exit
    corrected_slope = [0.8, 1.2]
    leading_slope = [0.35, 0.65]
    corrector_max = 1e-6
    symplectic_max = 1e-9
    hamiltonian_drift_max = 1e-8
    gaussian_grid_gap_max = 1e-6
    observable_slope_min = 1.2
    position_slope_min = 0.8

    [bands]
    n_points = 64
    n_bands = 4

    [geometry]
    grid = 32
    curvature_rtol = 1e-5

    [output]
    directory = "out"
"""
from __future__ import annotations

import copy
import math
import os
import sys

import numpy as np

from ..errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TWO_PI = 2 * math.pi

SCHEMA = {
    "name": str,
    "scenario": str,
    "lattice": {"dim": int, "period": float, "generators": list},
    "potential": {"coefficients": list, "cutoff": float},
    "external": {"kind": str, "hessian": list, "gradient": list, "center": list, "offset": float,
                 "amplitudes": list, "wavevectors": list, "phases": list, "depth": float,
                 "width": float},
    "band": {"index": int, "gap_threshold": float, "gauge_twist": list},
    "initial": {"q0": list, "p0": list, "N": float, "A0_re": list, "A0_im": list, "B0_re": list,
                "B0_im": list},
    "run": {"epsilons": list, "horizon": float, "checkpoints": list, "dt_particle": float,
            "dt_envelope": float, "dt_field": float, "box_length": list, "box_origin": list,
            "points_per_period": int, "n_points": list, "mode": str, "system": str, "direct": bool,
            "ehrenfest_c": float, "seed": int, "workers": int},
    "checks": {"corrected_slope": list, "leading_slope": list, "corrector_max": float,
               "symplectic_max": float, "hamiltonian_drift_max": float,
               "gaussian_grid_gap_max": float, "observable_slope_min": float,
               "position_slope_min": float},
    "bands": {"n_points": int, "n_bands": int},
    "geometry": {"grid": int, "curvature_rtol": float, "symmetric_coefficients": list},
    "output": {"directory": str},
}

DEFAULTS = {
    "name": "run",
    "band": {"index": 1, "gap_threshold": 0.0},
    "initial": {"N": math.pi ** -0.25},
    "run": {"horizon": 1.0, "dt_particle": 1e-3, "dt_envelope": 1e-3, "dt_field": 0.01,
            "points_per_period": 16, "mode": "gaussian", "system": "physical", "direct": True,
            "ehrenfest_c": 1.0, "seed": 0, "workers": 0},
    "checks": {},
    "bands": {"n_points": 64, "n_bands": 4},
    "geometry": {"grid": 32, "curvature_rtol": 1e-5},
    "output": {"directory": "out"},
}


def _check_keys(data, schema, where=""):
    for key, value in data.items():
        if key not in schema:
            raise ConfigError(f"unknown key {where + key!r}")
        kind = schema[key]
        if isinstance(kind, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where + key!r} must be a table")
            _check_keys(value, kind, where + key + ".")
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where + key!r} must be a number")
        elif not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise ConfigError(f"{where + key!r} must be of type {kind.__name__}")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(data: dict) -> dict:
    """Fill defaults (scenario first, then global) and validate."""
    from .scenarios import SCENARIOS

    _check_keys(data, SCHEMA)
    base = copy.deepcopy(DEFAULTS)
    name = data.get("scenario")
    if name is not None:
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        base = _merge(base, SCENARIOS[name])
    cfg = _merge(base, data)
    _check_keys(cfg, SCHEMA)
    validate(cfg)
    return cfg


def validate(cfg: dict):
    lat = cfg.get("lattice", {})
    if "dim" not in lat:
        raise ConfigError("lattice.dim is required")
    d = lat["dim"]
    if d not in (1, 2, 3):
        raise ConfigError("lattice.dim must be 1, 2 or 3")
    run = cfg["run"]
    eps = run.get("epsilons", [])
    if any(not (0 < e <= 0.25) for e in eps):
        raise ConfigError("epsilon values must lie in (0, 1/4]")
    if eps:
        guard = run["ehrenfest_c"] * math.log(1 / min(eps))
        if run["horizon"] > guard:
            raise ConfigError(f"horizon {run['horizon']} exceeds the Ehrenfest guard "
                              f"{run['ehrenfest_c']} ln(1/eps_min) = {guard:.4g}")
    if run["mode"] not in ("gaussian", "grid"):
        raise ConfigError("run.mode must be 'gaussian' or 'grid'")
    if run["system"] not in ("physical", "canonical"):
        raise ConfigError("run.system must be 'physical' or 'canonical'")
    for key in ("dt_particle", "dt_envelope", "dt_field", "horizon"):
        if run[key] <= 0:
            raise ConfigError(f"run.{key} must be positive")
    for t in run.get("checkpoints", []):
        if not 0 < t <= run["horizon"]:
            raise ConfigError("checkpoints must lie in (0, horizon]")
    ini = cfg.get("initial", {})
    for key in ("q0", "p0"):
        if key in ini and len(ini[key]) != d:
            raise ConfigError(f"initial.{key} must have {d} entries")
    for key in ("A0_re", "A0_im", "B0_re", "B0_im"):
        if key in ini and np.shape(ini[key]) != (d, d):
            raise ConfigError(f"initial.{key} must be {d} x {d}")


def load_config(path) -> dict:
    """Read and resolve a TOML configuration file."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return resolve(data)


def apply_overrides(cfg: dict, out=None, workers=None, dt=None, eps=None) -> dict:
    """CLI overrides; ``dt`` replaces every fixed step, ``eps`` the epsilon list."""
    cfg = copy.deepcopy(cfg)
    if out is not None:
        cfg["output"]["directory"] = str(out)
    if workers is not None:
        cfg["run"]["workers"] = int(workers)
    if dt is not None:
        cfg["run"]["dt_particle"] = cfg["run"]["dt_envelope"] = float(dt)
    if eps is not None:
        cfg["run"]["epsilons"] = [float(e) for e in eps]
    validate(cfg)
    return cfg


def worker_count(cfg) -> int:
    w = cfg["run"]["workers"]
    return w if w > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# builders


def build_lattice(cfg):
    from ..lattice import build_dual_lattice, cubic_lattice

    lat = cfg["lattice"]
    if "generators" in lat:
        return build_dual_lattice(np.array(lat["generators"], dtype=float).T)
    return cubic_lattice(lat["dim"], lat.get("period", TWO_PI))


def build_potential(cfg, lattice=None):
    from ..lattice import PeriodicPotential

    lattice = build_lattice(cfg) if lattice is None else lattice
    coeffs = cfg.get("potential", {}).get("coefficients", [])
    if not coeffs:
        return PeriodicPotential.zero(lattice)
    return PeriodicPotential.from_triples(lattice, [(tuple(m), re, im) for m, re, im in coeffs])


def build_external(cfg):
    from ..lattice import ExternalPotential

    d = cfg["lattice"]["dim"]
    ext = dict(cfg.get("external", {"kind": "zero"}))
    kind = ext.pop("kind", "zero")
    try:
        return ExternalPotential(kind, d, ext)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"external potential: {exc}") from None


def build_model(cfg, V=None):
    from ..bands import BandModel

    V = build_potential(cfg) if V is None else V
    b = cfg["band"]
    model = BandModel(V, cfg.get("potential", {}).get("cutoff", 10.0), band=b["index"],
                      gap_threshold=b["gap_threshold"], gauge_twist=b.get("gauge_twist"))
    if "p0" in cfg.get("initial", {}):
        model.fix_anchor(cfg["initial"]["p0"])
    return model


def build_gaussian(cfg):
    from ..envelope import make_gaussian

    d = cfg["lattice"]["dim"]
    ini = cfg["initial"]
    A = np.array(ini.get("A0_re", np.eye(d)), dtype=float) + 1j * np.array(ini.get("A0_im", np.zeros((d, d))))
    B = np.array(ini.get("B0_re", np.zeros((d, d))), dtype=float) + 1j * np.array(ini.get("B0_im", np.eye(d)))
    return make_gaussian(ini["N"], A, B)
