"""Wavepacket observables and the two-scale averaging quadrature."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bands import BandModel
from .direct import WaveField, XGrid, _bloch_on_grid, interpolate_envelope
from .envelope import EnvelopeGrid, envelope_moments, spectral_gradient
from .errors import ResolutionTooLow


def two_scale_average(f, x, g, delta, s=0.0, period=2 * np.pi):
    """``integral f(x) g(x/delta + s/delta^2) dx`` and the homogenized value.

    Parameters
    ----------
    f : array
        Samples of a smooth decaying function on the uniform 1-D grid ``x``.
    g : callable
        ``period``-periodic function of the fast variable.
    delta : float
        Scale separation.
    s : float
        Shift of the fast variable.

    Returns
    -------
    (value, product)
        The trapezoid quadrature and ``(integral f) * mean(g)`` where the
        mean of ``g`` is its average over one period.
    """
    x = np.asarray(x, dtype=float)
    h = x[1] - x[0]
    if h > delta * period / 8:
        raise ResolutionTooLow(f"spacing {h:.3e} exceeds delta-period/8 = {delta * period / 8:.3e}")
    vals = f * g(x / delta + s / delta**2)
    value = float(np.real(np.sum(vals)) * h) if np.isrealobj(vals) else complex(np.sum(vals) * h)
    zc = np.linspace(0.0, period, 256, endpoint=False)
    mean_g = np.mean(g(zc))
    product = np.sum(f) * h * mean_g
    return value, (float(np.real(product)) if np.isrealobj(vals) else complex(product))


@dataclass(frozen=True)
class Observables:
    Q: np.ndarray
    P: np.ndarray
    N: float


def observables_from_ansatz(q, p, env: EnvelopeGrid, model: BandModel, epsilon) -> Observables:
    """Expanded observables from envelope moments.

    ``Q = q + (sqrt(eps) <a, y a> + eps [<b, y a> + <a, y b>]) / N + eps A_n(p)``
    and likewise for ``P`` without the connection term;
    ``N = ||a||^2 + sqrt(eps) [<b, a> + <a, b>]``.
    """
    m = envelope_moments(env)
    se = np.sqrt(epsilon)
    N = m["norm2"] + se * m["ba"]
    Q = np.atleast_1d(q) + (se * m["y"] + epsilon * m["mixed_y"]) / N + epsilon * model.connection(p)
    P = np.atleast_1d(p) + (se * m["k"] + epsilon * m["mixed_k"]) / N
    return Observables(Q, P, float(N))


def observables_from_quadrature(q, p, S, phi_B, env: EnvelopeGrid, model: BandModel, epsilon,
                                xgrid: XGrid) -> Observables:
    """Observables computed from the two-scale ansatz sampled on the x-grid.

    ``Q`` is the first moment of ``|psi_tilde|^2``; ``P`` applies
    ``-i sqrt(eps) grad_y`` to the slow slot of ``psi_tilde(y, z)`` before
    setting ``y = (x - q)/sqrt(eps)``, ``z = x/eps``.
    """
    d = xgrid.dim
    q, p = np.atleast_1d(q).astype(float), np.atleast_1d(p).astype(float)
    se = np.sqrt(epsilon)
    c, dc = model.bloch_data(p)
    chi = _bloch_on_grid(model, c, xgrid, epsilon)
    dchi = _bloch_on_grid(model, dc, xgrid, epsilon)
    g = env.grid

    def on_x(samples):
        return interpolate_envelope(samples, g, xgrid, q, epsilon)

    da = spectral_gradient(env.a, g)          # (-i d_k) a
    db = spectral_gradient(env.b, g)
    dda = [spectral_gradient(da[k], g) for k in range(d)]  # (-i d_j)(-i d_k) a
    a_x, b_x = on_x(env.a), on_x(env.b)
    da_x = [on_x(da[k]) for k in range(d)]
    # slow-slot profile u(y, z) without the plane-wave factor
    u = a_x * chi + se * (b_x * chi + sum(da_x[k] * dchi[..., k] for k in range(d)))
    w = xgrid.cell
    N = float(np.sum(np.abs(u) ** 2) * w)
    X = xgrid.mesh()
    Q = np.array([np.sum(X[j] * np.abs(u) ** 2) * w for j in range(d)]) / N
    P = np.zeros(d)
    for j in range(d):
        # (-i d_yj) u, then add p_j/sqrt(eps) from the plane wave
        du = da_x[j] * chi + se * (on_x(db[j]) * chi
                                   + sum(on_x(dda[j][k]) * dchi[..., k] for k in range(d)))
        P[j] = p[j] + se * float(np.real(np.vdot(u, du)) * w) / N
    # psi_tilde = eps^{-d/4} e^{i(...)} u, so its squared norm carries eps^{-d/2}
    return Observables(Q, P, N * epsilon ** (-d / 2))


def position_from_field(field: WaveField, shadow_tol=1e-8, center=None) -> np.ndarray:
    """``integral x |psi|^2 / integral |psi|^2``.

    With ``center`` given, coordinates are taken as the periodic image
    closest to ``center`` (for packets on a torus whose far tails wrap
    around); the boundary-shadow check is then skipped.
    """
    X = field.grid.mesh()
    if center is None:
        field.check_shadow(shadow_tol)
    else:
        c = np.atleast_1d(center)
        X = [c[k] + (Xk - c[k] + 0.5 * L) % L - 0.5 * L
             for k, (Xk, L) in enumerate(zip(X, field.grid.box_length))]
    dens = np.abs(field.psi) ** 2
    return np.array([np.sum(Xk * dens) for Xk in X]) / np.sum(dens)


def momentum_from_field(field: WaveField) -> np.ndarray:
    """``integral conj(psi) (-i eps grad) psi / ||psi||^2`` (meaningful as a momentum when ``V = 0``)."""
    K = np.meshgrid(*field.grid.freqs(), indexing="ij")
    ph = np.fft.fftn(field.psi)
    dens = np.abs(ph) ** 2
    return field.epsilon * np.array([np.sum(Kk * dens) for Kk in K]) / np.sum(dens)
