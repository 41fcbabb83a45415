"""Command-line entry point: ``blochpacket {simulate,validate,geometry,bands}``."""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from ..bands import band_table
from ..errors import BlochPacketError
from .config import apply_overrides, build_lattice, build_model, load_config, resolve, worker_count
from .outputs import emit_bands, emit_geometry, emit_outputs
from .scenarios import SCENARIOS
from .validation import bz_grid, run_geometry_suite, run_simulation, run_validation


def _load(target):
    """A built-in scenario name or a path to a TOML file."""
    if target in SCENARIOS:
        return resolve({"scenario": target})
    if not os.path.exists(target):
        raise BlochPacketError(f"{target!r} is neither a scenario ({', '.join(SCENARIOS)}) nor a file")
    return load_config(target)


def _eps_list(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if "/" in tok:
            num, den = tok.split("/")
            out.append(float(num) / float(den))
        elif tok:
            out.append(float(tok))
    return out


def _print_checks(checks):
    for name, c in checks.items():
        if c.get("skipped"):
            status = "SKIP"
        else:
            status = "PASS" if c["passed"] else "FAIL"
        print(f"  [{status}] {name}: value={c['value']!r} limit={c['limit']!r}")


def _report(res, manifest):
    for r in res.records:
        keys = [k for k in ("corrector", "corrector_leading", "hamiltonian_drift", "symplectic_residual") if k in r]
        print(f"eps={r['epsilon']:.6g} " + " ".join(f"{k}={r[k]:.3e}" for k in keys))
    for name, fit in res.slopes.items():
        print(f"slope[{name}] = {fit.slope:.4f}  (95% CI {fit.ci_low:.3f} .. {fit.ci_high:.3f})")
    if res.growth:
        print(f"growth rate c = {res.growth['rate']:.4f} at eps={res.growth['epsilon']:.6g} (reported only)")
    for e in res.errors:
        print(f"error: {e}")
    _print_checks(res.checks)
    print(f"manifest: {manifest}")


def cmd_simulate(cfg, args):
    res = run_simulation(cfg, worker_count(cfg))
    _report(res, emit_outputs(res, cfg["output"]["directory"]))
    return res.passed


def cmd_validate(cfg, args):
    res = run_validation(cfg, worker_count(cfg))
    _report(res, emit_outputs(res, cfg["output"]["directory"]))
    return res.passed


def cmd_geometry(cfg, args):
    rep = run_geometry_suite(cfg, worker_count(cfg))
    manifest = emit_geometry(rep, cfg, cfg["output"]["directory"])
    if "curvature_max" in rep:
        print(f"max |F| = {rep['curvature_max']:.4e}, Chern estimate = {rep['chern_estimate']:.4f}, "
              f"min gap = {rep['min_gap']:.4f}")
    if "anomalous_drift" in rep:
        ad = rep["anomalous_drift"]
        print(f"anomalous drift {ad['drift']} vs quadrature {ad['quadrature']}")
    _print_checks(rep["checks"])
    print(f"manifest: {manifest}")
    return all(c["passed"] for c in rep["checks"].values())


def cmd_bands(cfg, args):
    model = build_model(cfg)
    lat = build_lattice(cfg)
    n = cfg["bands"]["n_points"]
    if lat.dim == 2:
        points = bz_grid(lat, n)
    else:
        f = (np.arange(n) + 0.5) / n - 0.5
        points = f[:, None] * lat.dual_generators[0][None, :]
    header, table = band_table(model, points, cfg["bands"]["n_bands"], worker_count(cfg))
    print(f"manifest: {emit_bands(header, table, cfg, cfg['output']['directory'])}")
    return True


COMMANDS = {"simulate": cmd_simulate, "validate": cmd_validate, "geometry": cmd_geometry, "bands": cmd_bands}


def build_parser():
    ap = argparse.ArgumentParser(prog="blochpacket", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run the asymptotic pipeline for every epsilon of a config",
        "validate": "co-run direct solver and asymptotics; fit scaling exponents",
        "geometry": "Berry curvature, gauge invariance and anomalous-drift checks",
        "bands": "dump the band structure to CSV",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("target", help="TOML config file or built-in scenario name")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="worker pool size")
        p.add_argument("--dt", type=float, help="fixed time step for particle and envelope stepping")
        p.add_argument("--eps", type=_eps_list, help="comma-separated epsilon list, e.g. 1/16,1/32")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(_load(args.target), out=args.out, workers=args.workers, dt=args.dt, eps=args.eps)
        ok = COMMANDS[args.command](cfg, args)
    except BlochPacketError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
