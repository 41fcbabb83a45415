"""Particle-field dynamics: leading-order flow, corrected observables, Hamiltonians.

The leading-order system moves ``(q, p)`` by the band Hamiltonian
``E_n(p) + W(q)`` and accumulates the action ``S`` and the Berry phase
``phi_B``.  The corrected system moves the observables ``(Q, P)`` together
with the envelope ``a^eps``; it is available in two equivalent forms:

* ``system="physical"``: ``(Q, P)`` with the anomalous velocity,
* ``system="canonical"``: ``(Qs, P)`` with ``Qs = Q - eps A_n(P)``, a
  Hamiltonian system whose energy is conserved exactly by the flow.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .bands import BandModel
from .envelope import (
    EnvelopeCoefficients,
    EnvelopeGrid,
    GaussianEnvelope,
    envelope_moments,
    split_step,
    symplectic_residuals,
    track_sqrt_det,
)
from .errors import EnvelopeUnavailable, GapBelowThreshold
from .lattice import ExternalPotential, eval_W_derivatives

SYSTEMS = ("physical", "canonical")


# ---------------------------------------------------------------------------
# leading order


def _vec(x, d):
    return np.atleast_1d(np.asarray(x, dtype=float)).reshape(d)


def rhs_leading(model: BandModel, W: ExternalPotential, q, p):
    """``(qdot, pdot, Sdot, phidot)`` of the band Hamiltonian flow."""
    bd = model.derivatives(p)
    gW = eval_W_derivatives(W, q, 1)
    qdot = bd.grad_E
    pdot = -gW
    Sdot = float(p @ bd.grad_E - bd.energy - eval_W_derivatives(W, q, 0))
    phidot = float(pdot @ bd.berry_connection)
    return qdot, pdot, Sdot, phidot


def _pack(q, p, S, phi):
    return np.concatenate([q, p, [S, phi]])


class Trajectory:
    """Leading-order trajectory with cubic Hermite dense output.

    Calling ``traj(t)`` returns ``(q, p, S, phi_B)`` at any ``t`` in range.
    """

    def __init__(self, model: BandModel, W: ExternalPotential, q0, p0, t1, dt, t0=0.0, S0=0.0, phi0=0.0):
        d = model.dim
        self.model, self.W, self.dim = model, W, d
        n = max(1, int(round((t1 - t0) / dt)))
        self.dt = (t1 - t0) / n
        self.t = t0 + self.dt * np.arange(n + 1)
        y = np.empty((n + 1, 2 * d + 2))
        f = np.empty_like(y)
        y[0] = _pack(_vec(q0, d), _vec(p0, d), S0, phi0)
        f[0] = self._f(y[0])
        h = self.dt
        for k in range(n):
            k1 = f[k]
            k2 = self._f(y[k] + h / 2 * k1)
            k3 = self._f(y[k] + h / 2 * k2)
            k4 = self._f(y[k] + h * k3)
            y[k + 1] = y[k] + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            f[k + 1] = self._f(y[k + 1])
        self.y, self.f = y, f

    def _f(self, y):
        d = self.dim
        qd, pd, Sd, phd = rhs_leading(self.model, self.W, y[:d], y[d:2 * d])
        return _pack(qd, pd, Sd, phd)

    def state(self, t):
        t = float(t)
        if not self.t[0] - 1e-12 <= t <= self.t[-1] + 1e-12:
            raise ValueError(f"t={t} outside trajectory range")
        k = min(int((t - self.t[0]) / self.dt), len(self.t) - 2)
        h = self.dt
        s = (t - self.t[k]) / h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return (h00 * self.y[k] + h10 * h * self.f[k] + h01 * self.y[k + 1] + h11 * h * self.f[k + 1])

    def __call__(self, t):
        y = self.state(t)
        d = self.dim
        return y[:d], y[d:2 * d], float(y[2 * d]), float(y[2 * d + 1])

    def energy(self, t):
        q, p, _, _ = self(t)
        return self.model.energy(p) + float(eval_W_derivatives(self.W, q, 0))

    # coefficient paths for the envelope equations -----------------------
    def hessE_path(self, t):
        return self.model.derivatives(self(t)[1]).hess_E

    def hessW_path(self, t):
        return np.atleast_2d(eval_W_derivatives(self.W, self(t)[0], 2))

    def source_path(self, t):
        q, p, _, _ = self(t)
        return source_coefficients(self.model, self.W, q, p)

    def coefficients(self, t, with_source=True) -> EnvelopeCoefficients:
        q, p, _, _ = self(t)
        return envelope_coefficients(self.model, self.W, q, p, with_source)


def source_coefficients(model: BandModel, W: ExternalPotential, q, p) -> EnvelopeCoefficients:
    """Coefficients of the source operator of the corrector equation at ``(q, p)``."""
    return envelope_coefficients(model, W, q, p, True)


def envelope_coefficients(model: BandModel, W: ExternalPotential, q, p, with_source=True):
    bd = model.derivatives(p)
    hW = np.atleast_2d(eval_W_derivatives(W, q, 2))
    if not with_source:
        return EnvelopeCoefficients(bd.hess_E, hW)
    gW = np.atleast_1d(eval_W_derivatives(W, q, 1))
    J = np.zeros((model.dim,) * 2) if model.connection_is_constant else model.connection_gradient(p)
    return EnvelopeCoefficients(
        hess_E=bd.hess_E,
        hess_W=hW,
        third_E=bd.third_E,
        third_W=eval_W_derivatives(W, q, 3).reshape((model.dim,) * 3),
        src_p=J.T @ gW,
        src_q=hW @ bd.berry_connection,
    )


# ---------------------------------------------------------------------------
# corrected system


@dataclass
class ParticleFieldState:
    """Leading-order and corrected variables plus the envelope ``a^eps``.

    ``X`` is the integrated position: ``Q`` for the physical system and
    ``Qs`` for the canonical one.  ``Q`` and ``Qs`` are both kept current.
    """

    t: float
    q: np.ndarray
    p: np.ndarray
    S: float
    phi_B: float
    Q: np.ndarray
    P: np.ndarray
    Qs: np.ndarray
    env: Union[GaussianEnvelope, EnvelopeGrid]
    epsilon: float
    system: str = "physical"
    gap: float = np.inf

    @property
    def dim(self):
        return len(self.q)

    @property
    def X(self):
        return self.Q if self.system == "physical" else self.Qs


def envelope_second_moments(env):
    """``(<y a, y a>, <(-i d) a, (-i d) a>)`` as ``d x d`` real matrices."""
    if env is None:
        raise EnvelopeUnavailable("corrected dynamics needs an envelope")
    if isinstance(env, GaussianEnvelope):
        yy, kk = env.moments()
        return yy * abs(env.N) ** 2 * np.pi ** (env.dim / 2), kk * abs(env.N) ** 2 * np.pi ** (env.dim / 2)
    m = envelope_moments(env)
    return m["yy"], m["kk"]


def rhs_corrected(model: BandModel, W: ExternalPotential, X, P, yy, kk, epsilon, system="physical"):
    """Velocities of the corrected observables for frozen envelope moments.

    For ``system="physical"``, ``X = Q`` and the anomalous velocity uses the
    leading-order force ``-grad W(Q)`` in place of ``Pdot``.  For
    ``system="canonical"``, ``X = Qs`` and the right-hand side is
    ``(dH/dP, -dH/dQs)`` of the extended Hamiltonian.
    """
    if system not in SYSTEMS:
        raise ValueError(f"system must be one of {SYSTEMS}")
    bd = model.derivatives(P)
    gW = np.atleast_1d(eval_W_derivatives(W, X, 1))
    d3W = eval_W_derivatives(W, X, 3).reshape((model.dim,) * 3)
    envE = 0.5 * np.einsum("abc,bc->a", bd.third_E, kk)
    envW = 0.5 * np.einsum("abc,bc->a", d3W, yy)
    if system == "physical":
        Xdot = bd.grad_E + epsilon * (anomalous_velocity(P, -gW, bd.berry_curvature) + envE)
        Pdot = -gW - epsilon * envW
    else:
        hW = np.atleast_2d(eval_W_derivatives(W, X, 2))
        J = np.zeros((model.dim,) * 2) if model.connection_is_constant else model.connection_gradient(P)
        Xdot = bd.grad_E + epsilon * (J.T @ gW + envE)
        Pdot = -gW - epsilon * (hW @ bd.berry_connection + envW)
    return Xdot, Pdot


def anomalous_velocity(P, Pdot, curvature, curl=None, atol=1e-12):
    """``v_a = -Pdot_b F_ab``; in three dimensions also checks ``-Pdot x curl A``.

    ``curl`` defaults to the axial vector of ``curvature``
    (``F_ab = eps_abc curl_c``).
    """
    Pdot = np.atleast_1d(np.asarray(Pdot, dtype=float))
    F = np.atleast_2d(curvature)
    v = -F @ Pdot
    if len(Pdot) == 3:
        if curl is None:
            curl = np.array([F[1, 2], F[2, 0], F[0, 1]])
        v_cross = -np.cross(Pdot, curl)
        scale = max(1.0, float(np.max(np.abs(v))))
        if np.max(np.abs(v - v_cross)) > atol * scale:
            raise AssertionError("index and cross-product forms of the anomalous velocity disagree")
    return v


def canonical_change(model: BandModel, Q, P, epsilon):
    """``(Qs, Ps) = (Q - eps A_n(P), P)``."""
    A = model.connection(P) if epsilon else 0.0
    return np.asarray(Q, dtype=float) - epsilon * A, np.asarray(P, dtype=float).copy()


def inverse_canonical_change(model: BandModel, Qs, P, epsilon):
    A = model.connection(P) if epsilon else 0.0
    return np.asarray(Qs, dtype=float) + epsilon * A, np.asarray(P, dtype=float).copy()


# ---------------------------------------------------------------------------
# initial state and stepping


def initial_state(model: BandModel, W, q0, p0, env, epsilon, system="physical", b0_moments=None):
    """Corrected observables at ``t = 0`` for well-prepared data.

    ``b0_moments`` optionally supplies ``(mixed_y, mixed_k)`` of the initial
    corrector; for ``b0 = 0`` both vanish and ``Q = q0 + eps A_n(p0)``,
    ``P = p0``.
    """
    d = model.dim
    q0, p0 = _vec(q0, d), _vec(p0, d)
    my, mk = (np.zeros(d), np.zeros(d)) if b0_moments is None else b0_moments
    Q = q0 + epsilon * (np.asarray(my) + model.connection(p0))
    P = p0 + epsilon * np.asarray(mk)
    Qs, _ = canonical_change(model, Q, P, epsilon)
    st = ParticleFieldState(0.0, q0, p0, 0.0, 0.0, Q, P, Qs, env, float(epsilon), system)
    st.gap = model.derivatives(P).gap
    return st


def _finish(state: ParticleFieldState, model, X, P, **kw):
    if state.system == "physical":
        Q = X
        Qs, _ = canonical_change(model, Q, P, state.epsilon)
    else:
        Qs = X
        Q, _ = inverse_canonical_change(model, Qs, P, state.epsilon)
    gap = model.derivatives(P).gap
    if gap < model.gap_threshold:
        raise GapBelowThreshold(model.band, gap, model.gap_threshold)
    return replace(state, Q=Q, Qs=Qs, P=P, gap=gap, **kw)


def _gaussian_rhs(model, W, y, d, epsilon, system, norm2=1.0):
    q, p = y[:d].real, y[d:2 * d].real
    X, P = y[2 * d + 2:3 * d + 2].real, y[3 * d + 2:4 * d + 2].real
    A = y[4 * d + 2:4 * d + 2 + d * d].reshape(d, d)
    B = y[4 * d + 2 + d * d:].reshape(d, d)
    qd, pd, Sd, phd = rhs_leading(model, W, q, p)
    yy, kk = 0.5 * np.real(A @ A.conj().T) * norm2, 0.5 * np.real(B @ B.conj().T) * norm2
    Xd, Pd = rhs_corrected(model, W, X, P, yy, kk, epsilon, system)
    hE = model.derivatives(P).hess_E
    hW = np.atleast_2d(eval_W_derivatives(W, X, 2))
    return np.concatenate([qd, pd, [Sd, phd], Xd, Pd, (hE @ B).ravel(), (-hW @ A).ravel()])


def step_coupled(state: ParticleFieldState, model: BandModel, W: ExternalPotential, dt,
                 mode="gaussian") -> ParticleFieldState:
    """Advance leading-order and corrected variables together by one step.

    ``mode="gaussian"``: one RK4 step of the joint system for
    ``(q, p, S, phi_B, X, P, A, B)``.
    ``mode="grid"``: Strang composition of a half RK4 step of the particle
    variables with frozen envelope moments, a full split-step of the grid
    envelope with coefficients at the midpoint particle state, and another
    half RK4 step.
    """
    d = state.dim
    eps = state.epsilon
    if mode == "gaussian":
        env = state.env
        if not isinstance(env, GaussianEnvelope):
            raise EnvelopeUnavailable("gaussian mode needs a GaussianEnvelope")
        y = np.concatenate([state.q, state.p, [state.S, state.phi_B], state.X, state.P,
                            env.A.ravel(), env.B.ravel()]).astype(complex)
        norm2 = abs(env.N) ** 2 * np.pi ** (d / 2)
        f = lambda z: _gaussian_rhs(model, W, z, d, eps, state.system, norm2)
        k1 = f(y)
        k2 = f(y + dt / 2 * k1)
        k3 = f(y + dt / 2 * k2)
        k4 = f(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        A = y[4 * d + 2:4 * d + 2 + d * d].reshape(d, d)
        B = y[4 * d + 2 + d * d:].reshape(d, d)
        new_env = GaussianEnvelope(env.N, A, B, track_sqrt_det(env.sqrt_det, A))
        return _finish(state, model, y[2 * d + 2:3 * d + 2].real, y[3 * d + 2:4 * d + 2].real,
                       t=state.t + dt, q=y[:d].real, p=y[d:2 * d].real, S=float(y[2 * d].real),
                       phi_B=float(y[2 * d + 1].real), env=new_env)
    if mode != "grid":
        raise ValueError("mode must be 'gaussian' or 'grid'")
    env = state.env
    if not isinstance(env, EnvelopeGrid):
        raise EnvelopeUnavailable("grid mode needs an EnvelopeGrid")
    yy, kk = envelope_second_moments(env)
    y = _particle_rk4(model, W, state, yy, kk, dt / 2)
    X, P = y[2 * d + 2:3 * d + 2], y[3 * d + 2:]
    c = EnvelopeCoefficients(model.derivatives(P).hess_E, np.atleast_2d(eval_W_derivatives(W, X, 2)))
    a, _ = split_step(env.a, None, c, env.grid, dt)
    env = replace(env, a=a, t=env.t + dt)
    yy, kk = envelope_second_moments(env)
    half = _unpack_particle(state, y, d)
    y = _particle_rk4(model, W, half, yy, kk, dt / 2)
    out = _unpack_particle(half, y, d)
    return _finish(out, model, out.X, out.P, t=state.t + dt, env=env)


def _particle_rk4(model, W, state, yy, kk, h):
    d = state.dim
    eps, system = state.epsilon, state.system

    def f(y):
        q, p, X, P = y[:d], y[d:2 * d], y[2 * d + 2:3 * d + 2], y[3 * d + 2:]
        qd, pd, Sd, phd = rhs_leading(model, W, q, p)
        Xd, Pd = rhs_corrected(model, W, X, P, yy, kk, eps, system)
        return np.concatenate([qd, pd, [Sd, phd], Xd, Pd])

    y = np.concatenate([state.q, state.p, [state.S, state.phi_B], state.X, state.P])
    k1 = f(y)
    k2 = f(y + h / 2 * k1)
    k3 = f(y + h / 2 * k2)
    k4 = f(y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _unpack_particle(state, y, d):
    X, P = y[2 * d + 2:3 * d + 2], y[3 * d + 2:]
    kw = dict(q=y[:d], p=y[d:2 * d], S=float(y[2 * d]), phi_B=float(y[2 * d + 1]), P=P)
    if state.system == "physical":
        kw["Q"] = X
    else:
        kw["Qs"] = X
    return replace(state, **kw)


def integrate(state, model, W, t1, dt, mode="gaussian", record=None):
    """Repeated :func:`step_coupled` up to ``t1``; ``record(state)`` is called after each step."""
    n = max(1, int(round((t1 - state.t) / dt)))
    h = (t1 - state.t) / n
    for _ in range(n):
        state = step_coupled(state, model, W, h, mode)
        if record is not None:
            record(state)
    return state


# ---------------------------------------------------------------------------
# Hamiltonians


@dataclass(frozen=True)
class HamiltonianReport:
    value: float
    parts: dict

    @classmethod
    def from_parts(cls, parts):
        return cls(float(sum(parts.values())), dict(parts))


def hamiltonian_value(state: ParticleFieldState, model: BandModel, W: ExternalPotential,
                      mode=None) -> HamiltonianReport:
    """Extended Hamiltonian at the canonical variables ``(Qs, P)``.

    Gaussian mode uses the trace form of the envelope energies,
    ``eps/4 Tr[B^* D^2E B] + eps/4 Tr[A^* D^2W A]``; grid mode uses the
    quadrature moments.
    """
    eps = state.epsilon
    Qs, P = state.Qs, state.P
    bd = model.derivatives(P)
    gW = np.atleast_1d(eval_W_derivatives(W, Qs, 1))
    hW = np.atleast_2d(eval_W_derivatives(W, Qs, 2))
    env = state.env
    if mode is None:
        mode = "gaussian" if isinstance(env, GaussianEnvelope) else "grid"
    if mode == "gaussian":
        A, B = env.A, env.B
        scale = abs(env.N) ** 2 * np.pi ** (env.dim / 2)
        kin = 0.25 * eps * scale * float(np.real(np.trace(B.conj().T @ bd.hess_E @ B)))
        pot = 0.25 * eps * scale * float(np.real(np.trace(A.conj().T @ hW @ A)))
    else:
        yy, kk = envelope_second_moments(env)
        kin = 0.5 * eps * float(np.sum(bd.hess_E * kk))
        pot = 0.5 * eps * float(np.sum(hW * yy))
    parts = {
        "band": bd.energy,
        "external": float(eval_W_derivatives(W, Qs, 0)),
        "berry_coupling": eps * float(gW @ bd.berry_connection),
        "kinetic_envelope": kin,
        "potential_envelope": pot,
    }
    return HamiltonianReport.from_parts(parts)


def leading_energy(model, W, q, p):
    return model.energy(p) + float(eval_W_derivatives(W, q, 0))


# ---------------------------------------------------------------------------
# output

def trajectory_header(d):
    cols = ["t"]
    for name in ("q", "p", "Q", "P", "Qs"):
        cols += [f"{name}{i + 1}" for i in range(d)]
    return cols + ["S", "phi_B", "H_eps", "gap", "symplectic_residual"]


def trajectory_row(state: ParticleFieldState, model, W):
    H = hamiltonian_value(state, model, W).value
    if isinstance(state.env, GaussianEnvelope):
        res = max(symplectic_residuals(state.env.A, state.env.B))
    else:
        res = float("nan")
    return ([state.t, *state.q, *state.p, *state.Q, *state.P, *state.Qs, state.S, state.phi_B, H,
             state.gap, res])


def write_trajectory_csv(path, rows, d):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_header(d))
        for r in rows:
            w.writerow([repr(float(x)) for x in r])
