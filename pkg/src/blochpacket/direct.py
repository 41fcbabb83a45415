"""Direct split-step solver for the two-scale equation and wavepacket synthesis.

Solves ``i eps psi_t = -eps^2/2 Lap psi + V(x/eps) psi + W(x) psi`` on a
periodic box, builds Bloch-wavepacket initial data, and reconstructs the
asymptotic solution from envelope, trajectory and Bloch data.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bands import BandModel, synthesize
from .envelope import EnvelopeGrid, YGrid, spectral_gradient
from .errors import CommensurabilityError, DomainTooSmall, GaugeMismatch, GridMismatch, ResolutionTooLow
from .lattice import ExternalPotential, PeriodicPotential, eval_W_derivatives


@dataclass(frozen=True)
class XGrid:
    """Periodic box ``origin + [0, L)`` per axis with ``n`` points per axis."""

    box_length: tuple
    n_points: tuple
    origin: tuple = None

    def __post_init__(self):
        L = tuple(float(x) for x in np.atleast_1d(self.box_length))
        n = tuple(int(x) for x in np.atleast_1d(self.n_points))
        if len(n) == 1 and len(L) > 1:
            n = n * len(L)
        if len(L) == 1 and len(n) > 1:
            L = L * len(n)
        o = (0.0,) * len(L) if self.origin is None else tuple(float(x) for x in np.atleast_1d(self.origin))
        object.__setattr__(self, "box_length", L)
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "origin", o)

    @property
    def dim(self):
        return len(self.box_length)

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.box_length, self.n_points))

    @property
    def cell(self):
        return float(np.prod(self.spacing))

    def axes(self):
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.n_points)]

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self):
        return np.stack(self.mesh(), axis=-1)

    def freqs(self):
        return [2 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.n_points, self.spacing)]


@dataclass(frozen=True)
class WaveField:
    grid: XGrid
    psi: np.ndarray
    t: float
    epsilon: float

    @property
    def box_length(self):
        return self.grid.box_length

    @property
    def n_points(self):
        return self.grid.n_points

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.grid.cell))

    def shadow(self, frac=0.05) -> float:
        """Max ``|psi|`` within ``frac`` of any box edge."""
        a = np.abs(self.psi)
        out = 0.0
        for ax, n in enumerate(self.grid.n_points):
            k = max(1, int(np.ceil(frac * n)))
            idx = np.r_[0:k, n - k:n]
            out = max(out, float(np.take(a, idx, axis=ax).max()))
        return out

    def check_shadow(self, tol=1e-8, frac=0.05):
        s = self.shadow(frac)
        if s >= tol:
            raise DomainTooSmall(f"|psi| = {s:.3e} within {frac:.0%} of the box edge")
        return s


# ---------------------------------------------------------------------------
# envelope evaluation on the x-grid


def _trig_matrix(grid: YGrid, y):
    """Rows evaluate the trigonometric interpolant of y-grid samples at ``y``."""
    xi = grid.freq
    E = np.exp(1j * np.outer(y + 0.5 * grid.length, xi)) / grid.n
    inside = (y >= -0.5 * grid.length) & (y < 0.5 * grid.length)
    E[~inside] = 0.0
    return E


def interpolate_envelope(samples, grid: YGrid, xgrid: XGrid, q, epsilon):
    """Evaluate y-grid samples at ``y = (x - q)/sqrt(eps)`` for every x-grid point.

    Separable trigonometric interpolation; points outside the y-box get 0.
    """
    q = np.atleast_1d(q)
    fh = np.fft.fftn(samples)
    mats = [_trig_matrix(grid, (ax - qi) / np.sqrt(epsilon)) for ax, qi in zip(xgrid.axes(), q)]
    out = fh
    for k, M in enumerate(mats):
        out = np.moveaxis(np.tensordot(M, out, axes=([1], [k])), 0, k)
    return out


def check_resolution(xgrid: XGrid, model: BandModel, epsilon, y_extent=None):
    """Both scale checks: 8 points per fast period and a box of 12 envelope widths."""
    period = np.min(np.linalg.norm(model.lattice.direct_generators, axis=0)) * epsilon
    ppp = min(period / h for h in xgrid.spacing)
    box = min(xgrid.box_length)
    need = 12 * np.sqrt(epsilon) * (1.0 if y_extent is None else y_extent)
    problems = []
    if ppp < 8:
        problems.append(f"{ppp:.1f} points per fast period (< 8)")
    if box < need:
        problems.append(f"box {box:.3g} shorter than 12 envelope widths ({need:.3g})")
    if problems:
        raise ResolutionTooLow("; ".join(problems))


def _bloch_on_grid(model: BandModel, coeffs, xgrid: XGrid, epsilon, chunk=4096):
    """Evaluate ``sum_G c_G exp(i G . x / eps)`` on the x-grid (coeffs may have a trailing axis)."""
    pts = xgrid.points().reshape(-1, xgrid.dim) / epsilon
    out = np.empty((len(pts),) + coeffs.shape[1:], dtype=complex)
    for s in range(0, len(pts), chunk):
        out[s:s + chunk] = synthesize(model.trunc, coeffs, pts[s:s + chunk])
    return out.reshape(tuple(xgrid.n_points) + coeffs.shape[1:])


def assemble_wavepacket(model: BandModel, env: EnvelopeGrid, q, p, S, phi_B, epsilon, xgrid: XGrid,
                        leading_only=False, t=0.0) -> WaveField:
    """Two-scale wavepacket on the x-grid.

    ``eps^{-d/4} e^{iS/eps} e^{ip.(x-q)/eps} e^{i phi_B} [a chi + sqrt(eps)((-i grad a) . grad_p chi + b chi)]``
    with ``y = (x - q)/sqrt(eps)`` and ``z = x/eps``.
    """
    d = xgrid.dim
    q, p = np.atleast_1d(q).astype(float), np.atleast_1d(p).astype(float)
    c, dc = model.bloch_data(p)
    chi = _bloch_on_grid(model, c, xgrid, epsilon)
    a = interpolate_envelope(env.a, env.grid, xgrid, q, epsilon)
    u = a * chi
    if not leading_only:
        dchi = _bloch_on_grid(model, dc, xgrid, epsilon)
        da = spectral_gradient(env.a, env.grid)
        b = interpolate_envelope(env.b, env.grid, xgrid, q, epsilon)
        corr = b * chi
        for k in range(d):
            corr = corr + interpolate_envelope(da[k], env.grid, xgrid, q, epsilon) * dchi[..., k]
        u = u + np.sqrt(epsilon) * corr
    X = xgrid.mesh()
    phase = S / epsilon + sum(p[k] * (X[k] - q[k]) for k in range(d)) / epsilon + phi_B
    psi = epsilon ** (-d / 4) * np.exp(1j * phase) * u
    return WaveField(xgrid, psi, float(t), float(epsilon))


def assemble_initial_data(model: BandModel, env: EnvelopeGrid, q0, p0, epsilon, xgrid: XGrid,
                          leading_only=False, check=True) -> WaveField:
    """Bloch-wavepacket initial data (``S = phi_B = 0``)."""
    if check:
        check_resolution(xgrid, model, epsilon)
    return assemble_wavepacket(model, env, q0, p0, 0.0, 0.0, epsilon, xgrid, leading_only, 0.0)


def assemble_asymptotic(traj_state, env: EnvelopeGrid, model: BandModel, xgrid: XGrid, epsilon,
                        leading_only=False, t=None, gauge=None, check=True) -> WaveField:
    """Asymptotic solution at the trajectory state ``(q, p, S, phi_B)``.

    ``gauge`` (if given) must match ``model.gauge_tag``; it guards against
    pairing envelope data prepared in one Bloch gauge with another.
    """
    if gauge is not None and gauge != model.gauge_tag:
        raise GaugeMismatch(f"data prepared in gauge {gauge!r}, model uses {model.gauge_tag!r}")
    if check:
        check_resolution(xgrid, model, epsilon)
    q, p, S, phi = traj_state
    return assemble_wavepacket(model, env, q, p, S, phi, epsilon, xgrid, leading_only,
                               env.t if t is None else t)


# ---------------------------------------------------------------------------
# propagation


def check_commensurable(V: PeriodicPotential, xgrid: XGrid, epsilon, tol=1e-9):
    """Each box edge ``L_i e_i`` must be a lattice vector of ``eps * Lambda``."""
    if V.is_zero():
        return
    Vd = V.lattice.direct_generators * epsilon
    for i, L in enumerate(xgrid.box_length):
        e = np.zeros(xgrid.dim)
        e[i] = L
        m = np.linalg.solve(Vd, e)
        if np.max(np.abs(m - np.round(m))) > tol * max(1.0, np.max(np.abs(m))):
            raise CommensurabilityError(f"box edge {i} (L={L}) is not a multiple of the scaled lattice")


def w_is_periodic(W: ExternalPotential, xgrid: XGrid, tol=1e-9) -> bool:
    """True if ``W`` is periodic on the box (zero or cosine sums with matching wavevectors)."""
    if W.kind == "zero":
        return True
    if W.kind == "sum":
        return all(w_is_periodic(t, xgrid, tol) for t in W.parameters["terms"])
    if W.kind == "cosine_sum":
        k = W.parameters["wavevectors"] * np.array(xgrid.box_length)[None, :] / (2 * np.pi)
        return bool(np.all(np.abs(k - np.round(k)) < tol))
    return False


_PHASE_CACHE: dict = {}


def _phases(V: PeriodicPotential, W: ExternalPotential, xgrid: XGrid, epsilon, dt):
    key = (id(V), id(W), xgrid, float(epsilon), float(dt))
    hit = _PHASE_CACHE.get(key)
    if hit is not None and hit[0] is V and hit[1] is W:
        return hit[2]
    X = xgrid.points()
    pot = V.evaluate(X / epsilon) + eval_W_derivatives(W, X if xgrid.dim > 1 else X[..., 0], 0)
    half = np.exp(-0.5j * dt * pot / epsilon)
    K = np.meshgrid(*xgrid.freqs(), indexing="ij")
    k2 = sum(k * k for k in K)
    kin = np.exp(-0.5j * epsilon * dt * k2)
    if len(_PHASE_CACHE) > 8:
        _PHASE_CACHE.clear()
    _PHASE_CACHE[key] = (V, W, (half, kin))
    return half, kin


def propagate(field: WaveField, V: PeriodicPotential, W: ExternalPotential, t0, t1, dt,
              shadow_tol=1e-8, shadow_every=None) -> WaveField:
    """Strang split-step: half potential, full kinetic, half potential.

    The potential phases are cached for repeated calls with the same grid and
    step.  When ``W`` is not box-periodic the boundary shadow is checked
    every ``shadow_every`` steps (default: start and end only).
    """
    eps = field.epsilon
    check_commensurable(V, field.grid, eps)
    n = max(1, int(round((t1 - t0) / dt)))
    h = (t1 - t0) / n
    half, kin = _phases(V, W, field.grid, eps, h)
    periodic = w_is_periodic(W, field.grid)
    if not periodic:
        field.check_shadow(shadow_tol)
    psi = field.psi
    for j in range(n):
        psi = half * psi
        psi = np.fft.ifftn(kin * np.fft.fftn(psi))
        psi = half * psi
        if shadow_every and not periodic and (j + 1) % shadow_every == 0:
            WaveField(field.grid, psi, t0, eps).check_shadow(shadow_tol)
    out = WaveField(field.grid, psi, float(t1), eps)
    if not periodic:
        out.check_shadow(shadow_tol)
    return out


def corrector_norm(psi: WaveField, psi_tilde: WaveField, t_tol=1e-12) -> float:
    """``||psi - psi_tilde||_{L^2}`` by the trapezoid rule."""
    if psi.grid != psi_tilde.grid:
        raise GridMismatch("fields live on different grids")
    if abs(psi.t - psi_tilde.t) > t_tol:
        raise GridMismatch(f"fields at different times ({psi.t} vs {psi_tilde.t})")
    return float(np.sqrt(np.sum(np.abs(psi.psi - psi_tilde.psi) ** 2) * psi.grid.cell))


# ---------------------------------------------------------------------------
# binary snapshots

def dump_field(field: WaveField, path):
    """Little-endian dump: ``d``, ``n_points[d]``, ``box_length[d]``, ``t``, ``eps``, then re/im pairs."""
    d = field.grid.dim
    with open(path, "wb") as fh:
        fh.write(struct.pack("<i", d))
        fh.write(struct.pack(f"<{d}i", *field.grid.n_points))
        fh.write(struct.pack(f"<{d}d", *field.grid.box_length))
        fh.write(struct.pack("<2d", field.t, field.epsilon))
        inter = np.empty(field.psi.size * 2, dtype="<f8")
        flat = field.psi.ravel()
        inter[0::2], inter[1::2] = flat.real, flat.imag
        fh.write(inter.tobytes())


def load_field(path, origin=None) -> WaveField:
    with open(path, "rb") as fh:
        data = fh.read()
    (d,) = struct.unpack_from("<i", data, 0)
    off = 4
    n = struct.unpack_from(f"<{d}i", data, off)
    off += 4 * d
    L = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    t, eps = struct.unpack_from("<2d", data, off)
    off += 16
    vals = np.frombuffer(data, dtype="<f8", offset=off)
    psi = (vals[0::2] + 1j * vals[1::2]).reshape(n)
    return WaveField(XGrid(L, n, origin), psi, t, eps)
