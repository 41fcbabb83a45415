"""CSV tables, static SVG plots and the JSON manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np
from matplotlib.figure import Figure

from ..dynamics import trajectory_header
from ..envelope import GaussianEnvelope

SVG_RC = {"svg.hashsalt": "blochpacket", "svg.fonttype": "none"}

RECORD_COLUMNS = ["corrector", "corrector_leading", "corrector_leading_data", "expansion_residual",
                  "field_residual", "symplectic_residual", "hamiltonian_drift", "gaussian_grid_gap",
                  "ba_drift"]


def _fmt(x):
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def _tag(eps):
    return f"eps{1 / eps:g}" if abs(1 / eps - round(1 / eps)) < 1e-9 else f"eps{eps:.6g}"


def _savefig(fig, path):
    import matplotlib

    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


# ---------------------------------------------------------------------------
# tables


def error_table(res):
    cols = [c for c in RECORD_COLUMNS if res.records and all(c in r for r in res.records)]
    return ["epsilon"] + cols, [[r["epsilon"]] + [r[c] for c in cols] for r in res.records]


def observables_table(res, d):
    keys = [("Q_ansatz", "Q_ansatz"), ("P_ansatz", "P_ansatz"), ("Q_quadrature", "Q_quad"),
            ("P_quadrature", "P_quad"), ("Q_field", "Q_field"), ("Q_corrected", "Q_corr"),
            ("P_corrected", "P_corr")]
    keys = [(k, lab) for k, lab in keys if res.records and all(k in r for r in res.records)]
    header = ["epsilon", "t"]
    for _, lab in keys:
        header += [f"{lab}{i + 1}" for i in range(d)]
    scalars = [k for k in ("N", "expansion_residual", "field_residual")
               if res.records and all(k in r for r in res.records)]
    header += scalars
    T = res.config["run"]["horizon"]
    rows = []
    for r in res.records:
        row = [r["epsilon"], T]
        for k, _ in keys:
            row += list(np.atleast_1d(r[k]))
        rows.append(row + [r[k] for k in scalars])
    return header, rows


def envelope_table(env):
    """Rows ``(y..., Re a, Im a, Re b, Im b)`` on the envelope grid."""
    if isinstance(env, GaussianEnvelope):
        raise TypeError("envelope snapshots are written for grid envelopes")
    pts = env.grid.points()
    d = env.grid.dim
    a, b = env.a.ravel(), env.b.ravel()
    header = [f"y{i + 1}" for i in range(d)] + ["re_a", "im_a", "re_b", "im_b"]
    return header, np.column_stack([pts.reshape(-1, d), a.real, a.imag, b.real, b.imag])


# ---------------------------------------------------------------------------
# plots


def plot_error_vs_epsilon(res, path):
    fig = Figure(figsize=(5.5, 4.0))
    ax = fig.add_subplot()
    eps = np.array([r["epsilon"] for r in res.records])
    labels = {"corrector": "corrected ansatz", "corrector_leading": "leading-order ansatz"}
    for key, lab in labels.items():
        if key not in res.slopes:
            continue
        y = np.array([r[key] for r in res.records])
        fit = res.slopes[key]
        ax.loglog(eps, y, "o", label=f"{lab}: slope {fit.slope!r}")
        ax.loglog(eps, np.exp(fit.intercept) * eps ** fit.slope, "-", lw=0.8, color="0.4")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("L2 error at t = horizon")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _savefig(fig, path)


def plot_trajectories(res, path):
    fig = Figure(figsize=(5.5, 4.0))
    ax = fig.add_subplot()
    for eps in sorted(res.trajectories, reverse=True):
        rows = np.array(res.trajectories[eps])
        d = (rows.shape[1] - 6) // 5
        ax.plot(rows[:, 0], rows[:, 1 + 2 * d], label=f"Q1, eps = {eps:g}")
    if res.trajectories:
        rows = np.array(res.trajectories[min(res.trajectories)])
        ax.plot(rows[:, 0], rows[:, 1], "k--", lw=0.8, label="q1 (leading order)")
    ax.set_xlabel("t")
    ax.set_ylabel("position")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _savefig(fig, path)


def plot_invariants(res, path):
    fig = Figure(figsize=(5.5, 4.0))
    ax = fig.add_subplot()
    for eps in sorted(res.trajectories, reverse=True):
        rows = np.array(res.trajectories[eps])
        drift = np.abs(rows[:, -3] - rows[0, -3])
        ax.semilogy(rows[1:, 0], np.maximum(drift[1:], 1e-17), label=f"|H(t) - H(0)|, eps = {eps:g}")
        if np.all(np.isfinite(rows[:, -1])):
            ax.semilogy(rows[1:, 0], np.maximum(rows[1:, -1], 1e-17), ":", label=f"symplectic residual, eps = {eps:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("drift")
    ax.legend(fontsize=6)
    fig.tight_layout()
    return _savefig(fig, path)


def plot_curvature(grid, n, path):
    fig = Figure(figsize=(5.0, 4.2))
    ax = fig.add_subplot()
    F = np.asarray(grid["resolvent"]).reshape(n, n)
    im = ax.imshow(F.T, origin="lower", extent=(-0.5, 0.5, -0.5, 0.5), cmap="RdBu_r")
    fig.colorbar(im, ax=ax, label="F12")
    ax.set_xlabel("dual coordinate 1")
    ax.set_ylabel("dual coordinate 2")
    fig.tight_layout()
    return _savefig(fig, path)


def plot_bands(header, table, path):
    fig = Figure(figsize=(5.5, 4.0))
    ax = fig.add_subplot()
    cols = [i for i, h in enumerate(header) if h.startswith("E_")]
    x = np.arange(len(table))
    for i in cols:
        ax.plot(x, table[:, i], label=header[i])
    ax.set_xlabel("sample")
    ax.set_ylabel("energy")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _savefig(fig, path)


# ---------------------------------------------------------------------------
# manifest


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_manifest(directory, files, config, extra=None):
    entries = [{"path": os.path.relpath(f, directory), "sha256": sha256(f), "bytes": os.path.getsize(f)}
               for f in sorted(files)]
    manifest = {"config": _jsonable(config), "files": entries}
    if extra:
        manifest.update(_jsonable(extra))
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def emit_outputs(res, directory) -> str:
    """Write tables and plots for a sweep; returns the manifest path.

    Slope plots need at least three epsilon values; an empty sweep yields a
    manifest with the config echo and no data files.
    """
    os.makedirs(directory, exist_ok=True)
    files = []
    d = res.config["lattice"]["dim"]
    if res.records:
        header, rows = error_table(res)
        files.append(write_csv(os.path.join(directory, "error_vs_epsilon.csv"), header, rows))
        header, rows = observables_table(res, d)
        files.append(write_csv(os.path.join(directory, "observables.csv"), header, rows))
    if res.checkpoints:
        cols = ["epsilon", "t", "corrector", "corrector_leading", "corrector_leading_data"]
        files.append(write_csv(os.path.join(directory, "checkpoints.csv"), cols,
                               [[c[k] for k in cols] for c in res.checkpoints]))
    if res.slopes:
        rows = [[f.slope, f.intercept, f.ci_low, f.ci_high, f.n] for f in res.slopes.values()]
        path = os.path.join(directory, "slopes.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", "slope", "intercept", "ci_low", "ci_high", "n"])
            for name, r in zip(res.slopes, rows):
                w.writerow([name] + [_fmt(x) for x in r[:4]] + [r[4]])
        files.append(path)
    for eps in sorted(res.trajectories, reverse=True):
        files.append(write_csv(os.path.join(directory, f"trajectory_{_tag(eps)}.csv"), trajectory_header(d),
                               res.trajectories[eps]))
    for eps in sorted(res.envelopes, reverse=True):
        env = res.envelopes[eps]
        if not isinstance(env, GaussianEnvelope):
            header, rows = envelope_table(env)
            files.append(write_csv(os.path.join(directory, f"envelope_{_tag(eps)}.csv"), header, rows))
    if "corrector" in res.slopes or "corrector_leading" in res.slopes:
        files.append(plot_error_vs_epsilon(res, os.path.join(directory, "error_vs_epsilon.svg")))
    if res.trajectories:
        files.append(plot_trajectories(res, os.path.join(directory, "trajectories.svg")))
        files.append(plot_invariants(res, os.path.join(directory, "invariants.svg")))
    extra = {
        "checks": res.checks, "passed": res.passed, "errors": res.errors, "growth": res.growth,
        "slopes": {k: vars(v) for k, v in res.slopes.items()},
        "runtimes": {repr(float(k)): v for k, v in sorted(res.runtimes.items())},
    }
    return write_manifest(directory, files, res.config, extra)


def emit_geometry(report, config, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    files = []
    grid = report.get("curvature_grid")
    if grid is not None:
        pts = np.asarray(grid["points"])
        rows = np.column_stack([pts, grid["resolvent"], grid["plaquette"], grid["energy"], grid["gap"]])
        header = [f"p{i + 1}" for i in range(pts.shape[1])] + ["F_resolvent", "F_plaquette", "E", "gap"]
        files.append(write_csv(os.path.join(directory, "curvature.csv"), header, rows))
        files.append(plot_curvature(grid, config["geometry"]["grid"], os.path.join(directory, "curvature.svg")))
    extra = {k: v for k, v in report.items() if k != "curvature_grid"}
    extra["passed"] = all(c["passed"] for c in report["checks"].values())
    return write_manifest(directory, files, config, extra)


def emit_bands(header, table, config, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    files = [write_csv(os.path.join(directory, "bands.csv"), header, table)]
    files.append(plot_bands(header, table, os.path.join(directory, "bands.svg")))
    return write_manifest(directory, files, config, {"passed": True})

