"""Envelope dynamics in the slow variable ``y``.

Two representations are supported: Gaussian envelopes parametrized by a
symplectic pair ``(A, B)``, and samples on a periodic tensor grid evolved by
split-step Fourier.  The grid stepper carries the first-order corrector ``b``
together with ``a``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import BranchDiscontinuity, DomainTooSmall, StepTooLarge, SymplecticDrift, SymplecticViolation

GRID_DEFAULTS = {1: (40.0, 512), 2: (24.0, 128), 3: (16.0, 48)}


# ---------------------------------------------------------------------------
# Gaussian envelopes


def symplectic_residuals(A, B) -> tuple[float, float]:
    """Max-norm residuals of ``A^T B - B^T A = 0`` and ``conj(A)^T B - conj(B)^T A = 2i I``."""
    A, B = np.asarray(A), np.asarray(B)
    r1 = np.max(np.abs(A.T @ B - B.T @ A))
    r2 = np.max(np.abs(A.conj().T @ B - B.conj().T @ A - 2j * np.eye(len(A))))
    return float(r1), float(r2)


@dataclass(frozen=True)
class GaussianEnvelope:
    """``a(y) = N [det A]^{-1/2} exp(i/2 y . B A^{-1} y)``.

    ``sqrt_det`` is the continuously tracked branch of ``[det A]^{1/2}``.
    """

    N: complex
    A: np.ndarray
    B: np.ndarray
    sqrt_det: complex

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def width_matrix(self) -> np.ndarray:
        """``B A^{-1}`` (complex symmetric)."""
        return np.linalg.solve(self.A.T, self.B.T).T

    def residuals(self):
        return symplectic_residuals(self.A, self.B)

    def moments(self):
        """Analytic second moments for unit-normalized data.

        Returns ``(<y y^T>, <(-i grad) (-i grad)^T>)`` which are
        ``1/2 Re(A A^*)`` and ``1/2 Re(B B^*)``.
        """
        return 0.5 * np.real(self.A @ self.A.conj().T), 0.5 * np.real(self.B @ self.B.conj().T)

    @property
    def norm(self) -> float:
        """``||a||_{L^2} = |N| pi^{d/4}``."""
        return abs(self.N) * np.pi ** (self.dim / 4)


def make_gaussian(N, A0, B0, tol=1e-8) -> GaussianEnvelope:
    """Validate the pair ``(A0, B0)`` and start the ``[det A]^{1/2}`` branch at the principal root."""
    A0 = np.array(A0, dtype=complex, ndmin=2)
    B0 = np.array(B0, dtype=complex, ndmin=2)
    if A0.shape != B0.shape or A0.shape[0] != A0.shape[1]:
        raise ValueError("A0 and B0 must be square and of equal shape")
    r1, r2 = symplectic_residuals(A0, B0)
    if r1 > tol or r2 > tol:
        raise SymplecticViolation(r1, r2)
    return GaussianEnvelope(complex(N), A0, B0, complex(np.sqrt(complex(np.linalg.det(A0)))))


def standard_gaussian(dim) -> GaussianEnvelope:
    """Unit-norm well-prepared Gaussian ``A = I, B = iI, N = pi^{-d/4}``."""
    return make_gaussian(np.pi ** (-dim / 4), np.eye(dim), 1j * np.eye(dim))


def gaussian_sample(env: GaussianEnvelope, y) -> np.ndarray:
    """Evaluate ``a`` at points ``y`` of shape ``(..., d)`` (or a :class:`YGrid`)."""
    if isinstance(y, YGrid):
        y = y.points()
    y = np.asarray(y, dtype=float)
    if env.dim == 1 and (y.ndim == 0 or y.shape[-1] != 1):
        y = y[..., None]
    M = env.width_matrix
    quad = np.einsum("...i,ij,...j->...", y, M, y)
    return env.N / env.sqrt_det * np.exp(0.5j * quad)


def _continue_sqrt(prev_sqrt, det_new):
    s = np.sqrt(complex(det_new))
    return s if abs(s - prev_sqrt) <= abs(s + prev_sqrt) else -s


def _ab_rhs(hE, hW, A, B):
    return hE @ B, -hW @ A


def evolve_gaussian(env: GaussianEnvelope, hessE_path, hessW_path, t0, t1, dt,
                    drift_tol=1e-6, max_halvings=8) -> GaussianEnvelope:
    """RK4 for ``A' = D^2E(t) B``, ``B' = -D^2W(t) A`` with branch tracking.

    A step whose ``det A`` phase increment exceeds ``pi/2`` is retried with
    half the step; :class:`BranchDiscontinuity` is raised if that does not
    help after ``max_halvings`` attempts.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    A, B, s = env.A.copy(), env.B.copy(), env.sqrt_det
    n = max(1, int(round((t1 - t0) / dt)))
    h = (t1 - t0) / n
    for k in range(n):
        A, B, s = _gauss_substep(A, B, s, hessE_path, hessW_path, t0 + k * h, h, max_halvings)
    r1, r2 = symplectic_residuals(A, B)
    if max(r1, r2) > drift_tol:
        raise SymplecticDrift(r1, r2)
    return GaussianEnvelope(env.N, A, B, s)


def _rk4_ab(A, B, hessE_path, hessW_path, t, h):
    hE0, hW0 = hessE_path(t), hessW_path(t)
    hEm, hWm = hessE_path(t + h / 2), hessW_path(t + h / 2)
    hE1, hW1 = hessE_path(t + h), hessW_path(t + h)
    k1 = _ab_rhs(hE0, hW0, A, B)
    k2 = _ab_rhs(hEm, hWm, A + h / 2 * k1[0], B + h / 2 * k1[1])
    k3 = _ab_rhs(hEm, hWm, A + h / 2 * k2[0], B + h / 2 * k2[1])
    k4 = _ab_rhs(hE1, hW1, A + h * k3[0], B + h * k3[1])
    return (A + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            B + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def _gauss_substep(A, B, s, hessE_path, hessW_path, t, h, halvings):
    detA = np.linalg.det(A)
    A1, B1 = _rk4_ab(A, B, hessE_path, hessW_path, t, h)
    det1 = np.linalg.det(A1)
    if abs(np.angle(det1 / detA)) > np.pi / 2:
        if halvings <= 0:
            raise BranchDiscontinuity(f"det A phase jump at t={t:.6g}")
        A, B, s = _gauss_substep(A, B, s, hessE_path, hessW_path, t, h / 2, halvings - 1)
        return _gauss_substep(A, B, s, hessE_path, hessW_path, t + h / 2, h / 2, halvings - 1)
    return A1, B1, _continue_sqrt(s, det1)


def track_sqrt_det(prev_sqrt, A_new) -> complex:
    """Continue the ``[det A]^{1/2}`` branch from ``prev_sqrt`` to ``A_new``."""
    return _continue_sqrt(prev_sqrt, np.linalg.det(A_new))


# ---------------------------------------------------------------------------
# periodic y-grid


@dataclass(frozen=True)
class YGrid:
    """Uniform periodic tensor grid ``[-L/2, L/2)^d`` with ``n`` points per axis."""

    dim: int
    length: float
    n: int

    @classmethod
    def default(cls, dim):
        L, n = GRID_DEFAULTS[dim]
        return cls(dim, L, n)

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def cell(self) -> float:
        return self.spacing**self.dim

    @property
    def axis(self) -> np.ndarray:
        return -0.5 * self.length + self.spacing * np.arange(self.n)

    @property
    def freq(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)

    def mesh(self):
        return np.meshgrid(*([self.axis] * self.dim), indexing="ij")

    def fmesh(self):
        return np.meshgrid(*([self.freq] * self.dim), indexing="ij")

    def points(self) -> np.ndarray:
        return np.stack(self.mesh(), axis=-1)

    @property
    def shape(self):
        return (self.n,) * self.dim


@lru_cache(maxsize=32)
def _grid_cache(dim, length, n):
    g = YGrid(dim, length, n)
    Y = np.stack(g.mesh(), axis=0)
    K = np.stack(g.fmesh(), axis=0)
    for arr in (Y, K):
        arr.setflags(write=False)
    return Y, K


def grid_arrays(grid: YGrid):
    """Cached ``(Y, K)``: stacked position and frequency meshes, shape ``(d, n, ..., n)``."""
    return _grid_cache(grid.dim, grid.length, grid.n)


def inner(f, g, grid: YGrid) -> complex:
    """``<f, g> = integral conj(f) g dy`` by the periodic trapezoid rule."""
    return complex(np.vdot(f, g) * grid.cell)


def l2norm(f, grid: YGrid) -> float:
    return float(np.sqrt(np.sum(np.abs(f) ** 2) * grid.cell))


def spectral_gradient(f, grid: YGrid) -> np.ndarray:
    """``(-i d/dy_alpha) f`` for each axis, stacked on a leading axis."""
    _, K = grid_arrays(grid)
    fh = np.fft.fftn(f)
    return np.stack([np.fft.ifftn(K[a] * fh) for a in range(grid.dim)])


def boundary_max(f, grid: YGrid) -> float:
    """Max ``|f|`` on the outermost grid shell."""
    f = np.abs(f)
    out = 0.0
    for ax in range(grid.dim):
        out = max(out, float(np.take(f, 0, axis=ax).max()), float(np.take(f, -1, axis=ax).max()))
    return out


@dataclass(frozen=True)
class EnvelopeGrid:
    grid: YGrid
    a: np.ndarray
    b: np.ndarray
    t: float = 0.0

    @classmethod
    def from_gaussian(cls, env: GaussianEnvelope, grid: YGrid = None, b=None, t=0.0):
        grid = YGrid.default(env.dim) if grid is None else grid
        a = gaussian_sample(env, grid)
        return cls(grid, a, np.zeros_like(a) if b is None else np.asarray(b, dtype=complex), t)

    def check_boundary(self, tol=1e-10):
        m = max(boundary_max(self.a, self.grid), boundary_max(self.b, self.grid))
        if m >= tol:
            raise DomainTooSmall(f"envelope reaches {m:.3e} on the y-box boundary (L_y={self.grid.length})")
        return m


class EnvelopeCoefficients(NamedTuple):
    """Coefficients of the envelope equations at one instant.

    ``src_p`` multiplies ``(-i grad_y)`` and ``src_q`` multiplies ``y`` in the
    source operator; they are ``grad_p[grad W . A_n]`` and
    ``grad_q[grad W . A_n]``.
    """

    hess_E: np.ndarray
    hess_W: np.ndarray
    third_E: np.ndarray = None
    third_W: np.ndarray = None
    src_p: np.ndarray = None
    src_q: np.ndarray = None


def _cubic(T, X):
    """``sum T_abc X_a X_b X_c`` over a stacked mesh ``X`` (shape ``(d, ...)``)."""
    return np.einsum("abc,a...,b...,c...->...", T, X, X, X)


def _quad(M, X):
    return np.einsum("ab,a...,b...->...", M, X, X)


def _lin(v, X):
    return np.einsum("a,a...->...", v, X)


def source_symbols(c: EnvelopeCoefficients, grid: YGrid):
    """Multiplier of the source operator in position space and in frequency space."""
    Y, K = grid_arrays(grid)
    sU = np.zeros(grid.shape)
    sT = np.zeros(grid.shape)
    if c.third_W is not None:
        sU = sU + _cubic(c.third_W, Y) / 6.0
    if c.src_q is not None:
        sU = sU + _lin(c.src_q, Y)
    if c.third_E is not None:
        sT = sT + _cubic(c.third_E, K) / 6.0
    if c.src_p is not None:
        sT = sT + _lin(c.src_p, K)
    return sU, sT


def apply_source(a, c: EnvelopeCoefficients, grid: YGrid) -> np.ndarray:
    """``I(t) a`` for the frozen coefficients ``c``."""
    sU, sT = source_symbols(c, grid)
    return sU * a + np.fft.ifftn(sT * np.fft.fftn(a))


def apply_hamiltonian(a, c: EnvelopeCoefficients, grid: YGrid) -> np.ndarray:
    """``H(t) a = 1/2 (-i grad) . D^2E (-i grad) a + 1/2 y . D^2W y a``."""
    Y, K = grid_arrays(grid)
    return (0.5 * _quad(c.hess_W, Y) * a
            + np.fft.ifftn(0.5 * _quad(c.hess_E, K) * np.fft.fftn(a)))


def split_step(a, b, c: EnvelopeCoefficients, grid: YGrid, dt, with_source=True):
    """One Strang step of the block-triangular system for ``(a, b)``.

    The generator ``[[H, 0], [I, H]]`` splits into a position-space part and a
    frequency-space part; each part is a commuting family, so its flow is
    exact: ``a -> e^{-i h u} a`` and ``b -> e^{-i h u} (b - i h s a)``.
    """
    Y, K = grid_arrays(grid)
    u = 0.5 * _quad(c.hess_W, Y)
    k = 0.5 * _quad(c.hess_E, K)
    if with_source and b is not None:
        sU, sT = source_symbols(c, grid)
    else:
        sU = sT = None
    half = np.exp(-0.5j * dt * u)
    full = np.exp(-1j * dt * k)
    if b is None:
        a = half * a
        a = np.fft.ifftn(full * np.fft.fftn(a))
        return half * a, None
    # half potential
    b = half * (b - 0.5j * dt * sU * a) if sU is not None else half * b
    a = half * a
    # full kinetic
    ah, bh = np.fft.fftn(a), np.fft.fftn(b)
    if sT is not None:
        bh = bh - 1j * dt * sT * ah
    a = np.fft.ifftn(full * ah)
    b = np.fft.ifftn(full * bh)
    # half potential
    b = half * (b - 0.5j * dt * sU * a) if sU is not None else half * b
    a = half * a
    return a, b


def _coeff_at(hessE_path, hessW_path, source_path, t):
    base = EnvelopeCoefficients(np.atleast_2d(hessE_path(t)), np.atleast_2d(hessW_path(t)))
    if source_path is None:
        return base
    s = source_path(t)
    return base._replace(third_E=s.third_E, third_W=s.third_W, src_p=s.src_p, src_q=s.src_q)


def _evolve(env_grid: EnvelopeGrid, hessE_path, hessW_path, source_path, t0, t1, dt, carry_b,
            check_step, step_rtol, boundary_tol):
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = env_grid.grid
    env_grid.check_boundary(boundary_tol)
    n = max(1, int(round((t1 - t0) / dt)))
    h = (t1 - t0) / n
    a, b = env_grid.a, (env_grid.b if carry_b else None)
    if check_step:
        _richardson_probe(a, b, hessE_path, hessW_path, source_path, t0, h, grid, step_rtol)
    for j in range(n):
        c = _coeff_at(hessE_path, hessW_path, source_path, t0 + (j + 0.5) * h)
        a, b = split_step(a, b, c, grid, h)
    out = EnvelopeGrid(grid, a, env_grid.b if b is None else b, t1)
    out.check_boundary(boundary_tol)
    return out


def _richardson_probe(a, b, hessE_path, hessW_path, source_path, t0, h, grid, rtol):
    """Compare one midpoint-frozen step with two half steps; flag large splitting error."""
    c = _coeff_at(hessE_path, hessW_path, source_path, t0 + h / 2)
    a1, _ = split_step(a, b, c, grid, h)
    c1 = _coeff_at(hessE_path, hessW_path, source_path, t0 + h / 4)
    c2 = _coeff_at(hessE_path, hessW_path, source_path, t0 + 3 * h / 4)
    a2, b2 = split_step(a, b, c1, grid, h / 2)
    a2, _ = split_step(a2, b2, c2, grid, h / 2)
    err = l2norm(a1 - a2, grid) / max(l2norm(a, grid), 1e-300)
    if err > rtol:
        raise StepTooLarge(f"step {h:.3e} splitting discrepancy {err:.3e} > {rtol:.1e}")


def evolve_a_grid(env_grid: EnvelopeGrid, hessE_path, hessW_path, t0, t1, dt, check_step=True,
                  step_rtol=1e-4, boundary_tol=1e-10) -> EnvelopeGrid:
    """Strang split-step for ``i a_t = H(t) a`` with midpoint-frozen coefficients."""
    return _evolve(env_grid, hessE_path, hessW_path, None, t0, t1, dt, False, check_step,
                   step_rtol, boundary_tol)


def evolve_b_grid(env_grid: EnvelopeGrid, hessE_path, hessW_path, source_path, t0, t1, dt,
                  check_step=True, step_rtol=1e-4, boundary_tol=1e-10) -> EnvelopeGrid:
    """Advance ``a`` and ``b`` together; ``i b_t = H b + I(t) a``.

    ``source_path(t)`` returns an object with fields ``third_E``, ``third_W``,
    ``src_p``, ``src_q`` (any may be ``None``).
    """
    return _evolve(env_grid, hessE_path, hessW_path, source_path, t0, t1, dt, True, check_step,
                   step_rtol, boundary_tol)


# ---------------------------------------------------------------------------
# diagnostics


def sigma_norm(f, grid: YGrid, l: int, method="spectral") -> float:
    """``sum_{|alpha|+|beta|<=l} ||y^alpha (-i d)^beta f||``.

    ``method="fd"`` uses 4th-order periodic central differences instead of
    spectral derivatives (a cross-check).
    """
    if l < 0:
        raise ValueError("l must be nonnegative")
    d = grid.dim
    Y, K = grid_arrays(grid)
    multi = [m for m in itertools.product(range(l + 1), repeat=d)]
    total = 0.0
    for beta in multi:
        if sum(beta) > l:
            continue
        g = _derivative(f, grid, beta, method)
        for alpha in multi:
            if sum(alpha) + sum(beta) > l:
                continue
            w = np.ones(grid.shape)
            for ax, k in enumerate(alpha):
                w = w * Y[ax] ** k
            total += l2norm(w * g, grid)
    return total


def _derivative(f, grid, beta, method):
    if not any(beta):
        return f
    if method == "spectral":
        _, K = grid_arrays(grid)
        sym = np.ones(grid.shape)
        for ax, k in enumerate(beta):
            sym = sym * K[ax] ** k
        return np.fft.ifftn(sym * np.fft.fftn(f))
    h = grid.spacing
    g = f
    for ax, k in enumerate(beta):
        for _ in range(k):
            g = (-1j) * (8 * (np.roll(g, -1, ax) - np.roll(g, 1, ax))
                         - (np.roll(g, -2, ax) - np.roll(g, 2, ax))) / (12 * h)
    return g


def envelope_moments(env_grid: EnvelopeGrid) -> dict:
    """Quadrature moments of ``a`` and the ``a``-``b`` pairings.

    Keys: ``norm2``, ``y`` (``<a, y a>``), ``k`` (``<a, -i grad a>``), ``yy``,
    ``kk`` (``<(-i d_a) a, (-i d_b) a>``), ``mixed_y``
    (``<b, y a> + <a, y b>``), ``mixed_k``, ``ba`` (``<b, a> + <a, b>``).
    """
    grid = env_grid.grid
    a, b = env_grid.a, env_grid.b
    Y, _ = grid_arrays(grid)
    da = spectral_gradient(a, grid)
    db = spectral_gradient(b, grid)
    w = grid.cell
    d = grid.dim
    out = {
        "norm2": float(np.sum(np.abs(a) ** 2) * w),
        "y": np.array([np.real(np.vdot(a, Y[i] * a)) * w for i in range(d)]),
        "k": np.array([np.vdot(a, da[i]) * w for i in range(d)]),
        "yy": np.array([[np.real(np.vdot(Y[i] * a, Y[j] * a)) * w for j in range(d)] for i in range(d)]),
        "kk": np.array([[np.real(np.vdot(da[i], da[j])) * w for j in range(d)] for i in range(d)]),
        "mixed_y": np.array([2 * np.real(np.vdot(b, Y[i] * a)) * w for i in range(d)]),
        "mixed_k": np.array([np.real(np.vdot(b, da[i]) + np.vdot(a, db[i])) * w for i in range(d)]),
        "ba": float(2 * np.real(np.vdot(b, a)) * w),
    }
    imag = float(np.max(np.abs(out["k"].imag))) if d else 0.0
    out["k_imag_residue"] = imag
    out["k"] = out["k"].real
    return out
