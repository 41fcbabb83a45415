"""Plane-wave Bloch bands, band derivatives and Berry geometry.

Bloch functions are stored by their Fourier coefficients over a fixed
truncation ``{G_m}``: ``chi(z) = sum_m c_m exp(i G_m . z)`` with
``sum |c_m|^2 = 1``.  Inner products on the period cell are therefore cell
averages, and the plane-wave basis is orthonormal.

Band indices are 1-based throughout (band 1 is the lowest band).
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CurvatureMethodMismatch,
    DegenerateBand,
    EigensolverFailure,
    GapBelowThreshold,
    OverlapTooSmall,
    TruncationMismatch,
)
from .lattice import LatticeSpec, PeriodicPotential, enumerate_reciprocal

DEGENERACY_TOL = 1e-8


@dataclass(frozen=True)
class BlochTruncation:
    """Plane-wave truncation ``|G| <= cutoff`` on a lattice."""

    lattice: LatticeSpec
    indices: tuple
    cutoff: float
    G: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        idx = tuple(tuple(int(k) for k in m) for m in self.indices)
        if tuple([0] * self.lattice.dim) not in idx:
            raise ValueError("truncation must contain m = 0")
        object.__setattr__(self, "indices", idx)
        G = self.lattice.dual_vectors(np.array(idx)).reshape(len(idx), self.lattice.dim)
        G.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "_lookup", {m: i for i, m in enumerate(idx)})

    @classmethod
    def build(cls, lattice, cutoff):
        return cls(lattice, tuple(enumerate_reciprocal(lattice, cutoff)), float(cutoff))

    @property
    def size(self) -> int:
        return len(self.indices)

    def position(self, m):
        """Row of index ``m`` in the truncation, or ``None``."""
        return self._lookup.get(tuple(m))


def _same_lattice(a: LatticeSpec, b: LatticeSpec) -> bool:
    return a is b or (a.dim == b.dim and np.allclose(a.direct_generators, b.direct_generators,
                                                     rtol=1e-14, atol=0))


def potential_matrix(V: PeriodicPotential, trunc: BlochTruncation) -> np.ndarray:
    """Matrix ``Vhat_{m - m'}`` over the truncation."""
    if not _same_lattice(V.lattice, trunc.lattice):
        raise TruncationMismatch("truncation and potential live on different lattices")
    idx = np.array(trunc.indices)
    out = np.zeros((trunc.size, trunc.size), dtype=complex)
    for m, c in V.coefficients.items():
        # rows i, columns j with idx_i - idx_j = m
        diff = idx[:, None, :] - idx[None, :, :]
        mask = np.all(diff == np.array(m), axis=-1)
        out[mask] += c
    return out


def assemble_bloch_matrix(V: PeriodicPotential, trunc: BlochTruncation, p, vmat=None) -> np.ndarray:
    """``H(p)`` with entries ``1/2 |p+G|^2 delta_{GG'} + Vhat_{G-G'}``."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if vmat is None:
        vmat = potential_matrix(V, trunc)
    k = p[None, :] + trunc.G
    H = vmat.copy()
    H[np.diag_indices_from(H)] += 0.5 * np.sum(k * k, axis=1)
    return H


def _reference_phase(col, anchor=None, tol=1e-9):
    """Unit phase making the anchor coefficient real positive.

    Without an anchor, the anchor is the largest-magnitude coefficient with a
    lexicographic tie-break (first in truncation order within ``tol``).
    """
    mag = np.abs(col)
    if anchor is None:
        anchor = int(np.flatnonzero(mag >= mag.max() * (1.0 - tol))[0])
    c = col[anchor]
    if abs(c) == 0:
        raise DegenerateBand("anchor coefficient vanishes; pick another anchor")
    return np.conj(c) / abs(c), anchor


@dataclass(frozen=True)
class BlochSlice:
    """Eigen-decomposition of the truncated ``H(p)``.

    ``energies``/``vectors`` hold the lowest ``n_max`` bands; ``all_energies``
    and ``all_vectors`` keep the full truncated spectrum for the resolvent.
    Column ``n - 1`` is band ``n``.
    """

    p: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    band: int
    gap: float
    gauge: str
    trunc: BlochTruncation = field(repr=False)
    all_energies: np.ndarray = field(repr=False)
    all_vectors: np.ndarray = field(repr=False)
    anchor: int = 0

    def chi(self, n=None) -> np.ndarray:
        return self.all_vectors[:, (self.band if n is None else n) - 1]

    def energy(self, n=None) -> float:
        return float(self.all_energies[(self.band if n is None else n) - 1])

    def gap_of(self, n) -> float:
        E = self.all_energies
        others = np.delete(E, n - 1)
        return float(np.min(np.abs(others - E[n - 1]))) if len(others) else np.inf

    def momentum_matrix(self) -> np.ndarray:
        """``k_alpha = p_alpha + G_alpha`` per basis row, shape ``(N, d)``."""
        return self.p[None, :] + self.trunc.G


def solve_bands(V: PeriodicPotential, trunc: BlochTruncation, p, n_max=None, band=1,
                gap_threshold=0.0, anchor=None, vmat=None) -> BlochSlice:
    """Dense eigensolve of ``H(p)`` with reference-gauge eigenvectors.

    Parameters
    ----------
    band : int
        Tracked band (1-based); its gap is reported and checked.
    gap_threshold : float
        Raise :class:`GapBelowThreshold` if the tracked band's gap is below it.
    anchor : int, optional
        Basis row used for the tracked band's phase convention; by default the
        largest coefficient.  Passing a fixed anchor keeps finite-difference
        stencils in one smooth gauge.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (trunc.lattice.dim,):
        raise ValueError(f"p has shape {p.shape}, expected ({trunc.lattice.dim},)")
    N = trunc.size
    n_max = N if n_max is None else int(n_max)
    if not 1 <= band <= n_max <= N:
        raise ValueError(f"need 1 <= band <= n_max <= {N}")
    H = assemble_bloch_matrix(V, trunc, p, vmat)
    try:
        E, U = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise EigensolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(E)):
        raise EigensolverFailure("non-finite eigenvalues")
    # reference gauge for every column at once: first coefficient within
    # tol of the column maximum is made real positive
    mag = np.abs(U)
    rows = np.argmax(mag >= mag.max(axis=0) * (1.0 - 1e-9), axis=0)
    c = U[rows, np.arange(N)]
    U = U * (np.conj(c) / np.abs(c))[None, :]
    U[rows, np.arange(N)] = np.abs(c)
    ph, tracked_anchor = _reference_phase(U[:, band - 1], anchor)
    U[:, band - 1] *= ph
    U[tracked_anchor, band - 1] = abs(U[tracked_anchor, band - 1])
    others = np.delete(E, band - 1)
    gap = float(np.min(np.abs(others - E[band - 1]))) if N > 1 else np.inf
    if gap < gap_threshold:
        raise GapBelowThreshold(band, gap, gap_threshold)
    return BlochSlice(p=p, energies=E[:n_max].copy(), vectors=U[:, :n_max].copy(), band=band,
                      gap=gap, gauge="reference", trunc=trunc, all_energies=E, all_vectors=U,
                      anchor=tracked_anchor)


def _check_isolated(slc: BlochSlice, n):
    if slc.gap_of(n) < DEGENERACY_TOL:
        raise DegenerateBand(f"band {n} is degenerate at p={slc.p}")


def grad_E_hellmann_feynman(slc: BlochSlice, n=None) -> np.ndarray:
    """``grad E_n = <chi_n, (p - i grad_z) chi_n>``."""
    n = slc.band if n is None else n
    _check_isolated(slc, n)
    c = slc.chi(n)
    return (np.abs(c) ** 2) @ slc.momentum_matrix()


def _perp_derivative(slc: BlochSlice, n):
    """Component of ``grad_p chi_n`` orthogonal to ``chi_n`` (shape ``(N, d)``)."""
    E, U = slc.all_energies, slc.all_vectors
    c = U[:, n - 1]
    k = slc.momentum_matrix()
    # <chi_m, k_alpha chi_n> for every m, alpha
    M = U.conj().T @ (k * c[:, None])
    denom = E - E[n - 1]
    denom[n - 1] = np.inf
    coef = -M / denom[:, None]
    return U @ coef, M, denom


def reference_connection(slc: BlochSlice, n=None, v=None) -> np.ndarray:
    """Berry connection of band ``n`` in the reference gauge of ``slc``.

    Keeping the anchor coefficient real along ``p`` forces
    ``A = Im(v_anchor) / c_anchor`` where ``v`` is the orthogonal part of
    ``grad_p chi``.
    """
    n = slc.band if n is None else n
    if v is None:
        v = _perp_derivative(slc, n)[0]
    c = slc.chi(n)
    a = slc.anchor if n == slc.band else _reference_phase(c)[1]
    return v[a].imag / c[a].real


def grad_p_chi(slc: BlochSlice, n=None) -> np.ndarray:
    """``grad_p chi_n`` in the slice's gauge, columns indexed by direction.

    The orthogonal part comes from the resolvent on the complement of band
    ``n``; the parallel part is ``-i A_n chi_n`` so that
    ``<chi_n, grad_p chi_n> = -i A_n`` with ``A_n`` the reference-gauge
    connection.
    """
    n = slc.band if n is None else n
    _check_isolated(slc, n)
    v = _perp_derivative(slc, n)[0]
    A = reference_connection(slc, n, v)
    return v - 1j * slc.chi(n)[:, None] * A[None, :]


def hessian_sum_over_states(slc: BlochSlice, n=None) -> np.ndarray:
    """``D^2 E_n = I + 2 Re sum_{m != n} k_nm k_mn / (E_n - E_m)``."""
    n = slc.band if n is None else n
    _check_isolated(slc, n)
    _, M, denom = _perp_derivative(slc, n)
    w = -1.0 / denom  # 1/(E_n - E_m), zero on the diagonal
    d = slc.trunc.lattice.dim
    H = np.eye(d) + 2.0 * np.real(np.einsum("ma,mb,m->ab", M.conj(), M, w))
    return 0.5 * (H + H.T)


def curvature_resolvent(slc: BlochSlice, n=None) -> np.ndarray:
    """``F_ab = -2 Im <d_a chi, d_b chi>`` from the orthogonal derivative."""
    n = slc.band if n is None else n
    _check_isolated(slc, n)
    v = _perp_derivative(slc, n)[0]
    F = -2.0 * np.imag(v.conj().T @ v)
    return 0.5 * (F - F.T)


def curvature_plaquette(V, trunc, p, n=1, delta=1e-2, vmat=None) -> np.ndarray:
    """Curvature from the Berry phase of small square loops around ``p``.

    The phase of ``<c1,c2><c2,c3><c3,c4><c4,c1>`` around a counter-clockwise
    loop of side ``delta`` equals ``-F delta^2`` up to ``O(delta^4)``; one
    Richardson step between ``delta`` and ``delta/2`` removes the leading
    error.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    d = len(p)
    if vmat is None:
        vmat = potential_matrix(V, trunc)
    F = np.zeros((d, d))

    def chi(q):
        return solve_bands(V, trunc, q, band=n, vmat=vmat).chi()

    def loop(a, b, h):
        ea, eb = np.eye(d)[a] * h / 2, np.eye(d)[b] * h / 2
        corners = [p - ea - eb, p + ea - eb, p + ea + eb, p - ea + eb]
        cs = [chi(q) for q in corners]
        prod = 1.0 + 0j
        for i in range(4):
            prod *= np.vdot(cs[i], cs[(i + 1) % 4])
        return -np.angle(prod) / h**2

    for a in range(d):
        for b in range(a + 1, d):
            f1, f2 = loop(a, b, delta), loop(a, b, delta / 2)
            F[a, b] = (4.0 * f2 - f1) / 3.0
            F[b, a] = -F[a, b]
    return F


def transport_gauge(prev: BlochSlice, nxt: BlochSlice, n=None) -> BlochSlice:
    """Rephase band ``n`` of ``nxt`` so its overlap with ``prev`` is real positive."""
    n = prev.band if n is None else n
    if prev.trunc.indices != nxt.trunc.indices:
        raise TruncationMismatch("slices use different truncations")
    o = np.vdot(prev.chi(n), nxt.chi(n))
    if abs(o) <= 0.5:
        raise OverlapTooSmall(f"|overlap| = {abs(o):.3f}")
    ph = np.conj(o) / abs(o)
    U = nxt.all_vectors.copy()
    U[:, n - 1] *= ph
    return BlochSlice(p=nxt.p, energies=nxt.energies, vectors=U[:, :len(nxt.energies)].copy(),
                      band=nxt.band, gap=nxt.gap, gauge="parallel", trunc=nxt.trunc,
                      all_energies=nxt.all_energies, all_vectors=U, anchor=nxt.anchor)


def shift_coefficients(trunc: BlochTruncation, c, shift_index) -> np.ndarray:
    """Coefficients of ``exp(-i b . z) chi`` where ``b`` has index ``shift_index``.

    This maps ``chi(.; p)`` to the periodic representative at ``p + b``.
    Components shifted out of the truncation are dropped.
    """
    out = np.zeros_like(c)
    s = np.array(shift_index)
    for i, m in enumerate(trunc.indices):
        j = trunc.position(tuple(np.array(m) + s))
        if j is not None:
            out[i] = c[j]
    return out


def wilson_loop_phase(V, trunc, p_start, shift_index, n_steps, band=1) -> float:
    """Berry (Zak) phase along the straight path ``p -> p + b`` closed by periodicity.

    Returns ``gamma`` with ``prod <chi_k, chi_{k+1}> = |.| exp(-i gamma)``,
    so ``gamma = integral of A . dp`` in any smooth periodic gauge.
    """
    p_start = np.atleast_1d(np.asarray(p_start, dtype=float))
    b = trunc.lattice.dual_vectors(shift_index)[0]
    vmat = potential_matrix(V, trunc)
    cs = [solve_bands(V, trunc, p_start + b * k / n_steps, band=band, vmat=vmat).chi()
          for k in range(n_steps)]
    cs.append(shift_coefficients(trunc, cs[0], shift_index))
    prod = 1.0 + 0j
    for k in range(n_steps):
        prod *= np.vdot(cs[k], cs[k + 1])
    return float(-np.angle(prod))


# ---------------------------------------------------------------------------
# band derivatives


@dataclass(frozen=True)
class BandDerivatives:
    """Band data at one quasi-momentum.

    ``third`` is either the array ``D^3 E`` or a zero-argument callable that
    produces it; :attr:`third_E` evaluates the callable once on first access,
    so flows that never need the third derivative do not pay for it.
    """

    energy: float
    grad_E: np.ndarray
    hess_E: np.ndarray
    third: object
    berry_connection: np.ndarray
    berry_curvature: np.ndarray
    gap: float
    curvature_mismatch: float = 0.0

    @property
    def third_E(self) -> np.ndarray:
        if callable(self.third):
            object.__setattr__(self, "third", self.third())
        return self.third


def _symmetrize3(T):
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    return sum(np.transpose(T, q) for q in perms) / 6.0


def third_derivative_fd(V, trunc, p, n=1, h=1e-3, vmat=None) -> np.ndarray:
    """``D^3 E_n`` by 5-point central differences of the analytic Hessian."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    d = len(p)
    if vmat is None:
        vmat = potential_matrix(V, trunc)
    T = np.zeros((d, d, d))
    for g in range(d):
        e = np.eye(d)[g] * h
        Hs = [hessian_sum_over_states(solve_bands(V, trunc, p + k * e, band=n, vmat=vmat))
              for k in (-2, -1, 1, 2)]
        T[:, :, g] = (Hs[0] - 8 * Hs[1] + 8 * Hs[2] - Hs[3]) / (12 * h)
    return _symmetrize3(T)


def hessian_fd(V, trunc, p, n=1, h=1e-4, vmat=None) -> np.ndarray:
    """Hessian from central differences of the Hellmann-Feynman gradient.

    One Richardson step between ``h`` and ``h/2``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    d = len(p)
    if vmat is None:
        vmat = potential_matrix(V, trunc)

    def grad(q):
        return grad_E_hellmann_feynman(solve_bands(V, trunc, q, band=n, vmat=vmat))

    def central(step):
        out = np.zeros((d, d))
        for b in range(d):
            e = np.eye(d)[b] * step
            out[:, b] = (grad(p + e) - grad(p - e)) / (2 * step)
        return out

    Hh, Hh2 = central(h), central(h / 2)
    out = (4 * Hh2 - Hh) / 3
    return 0.5 * (out + out.T)


def band_derivatives(V, trunc, p, n=1, fd_step=None, check_curvature=True, curvature_rtol=1e-5,
                     curvature_scale=0.0, gap_threshold=0.0, vmat=None, anchor=None) -> BandDerivatives:
    """All band data needed by the dynamics at one quasi-momentum.

    ``curvature_scale`` sets the floor of the relative curvature comparison
    (``|F_res - F_plaq| <= rtol * max(|F_res|, scale)``).
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if vmat is None:
        vmat = potential_matrix(V, trunc)
    if fd_step is None:
        fd_step = 1e-3 * np.linalg.norm(trunc.lattice.dual_generators[:, 0])
    slc = solve_bands(V, trunc, p, band=n, gap_threshold=gap_threshold, anchor=anchor, vmat=vmat)
    _check_isolated(slc, n)
    v, _, _ = _perp_derivative(slc, n)
    F = curvature_resolvent(slc, n)
    mismatch = 0.0
    if check_curvature and len(p) > 1:
        Fp = curvature_plaquette(V, trunc, p, n, vmat=vmat)
        mismatch = float(np.max(np.abs(Fp - F)))
        scale = max(float(np.max(np.abs(F))), curvature_scale)
        if mismatch > curvature_rtol * scale and mismatch > 1e-12:
            raise CurvatureMethodMismatch(f"resolvent vs plaquette differ by {mismatch:.3e} "
                                          f"(scale {scale:.3e})")
    return BandDerivatives(
        energy=slc.energy(),
        grad_E=grad_E_hellmann_feynman(slc, n),
        hess_E=hessian_sum_over_states(slc, n),
        third=lambda: third_derivative_fd(V, trunc, p, n, fd_step, vmat),
        berry_connection=reference_connection(slc, n, v),
        berry_curvature=F,
        gap=slc.gap,
        curvature_mismatch=mismatch,
    )


# ---------------------------------------------------------------------------
# cached band model


class BandModel:
    """One isolated band of a periodic potential with memoized derivatives.

    Parameters
    ----------
    V : PeriodicPotential
    cutoff : float
        Plane-wave cutoff ``|G| <= cutoff``.
    band : int
        1-based band index.
    gap_threshold : float
        Assumption-level gap bound ``M``; every evaluation checks it.
    gauge_twist : array_like, optional
        Constant vector ``g`` defining the alternative gauge
        ``chi' = exp(i g . p) chi``, whose connection is ``A - g``.
    anchor : int, optional
        Basis row whose coefficient is kept real positive.  Fixing it (see
        :meth:`fix_anchor`) keeps the gauge smooth along a whole trajectory;
        otherwise the largest coefficient at each ``p`` is used.
    """

    def __init__(self, V, cutoff=10.0, band=1, gap_threshold=0.0, gauge_twist=None, fd_step=None,
                 anchor=None):
        self.V = V
        self.lattice = V.lattice
        self.dim = V.lattice.dim
        self.trunc = BlochTruncation.build(V.lattice, cutoff)
        self.band = int(band)
        self.gap_threshold = float(gap_threshold)
        self.twist = np.zeros(self.dim) if gauge_twist is None else np.atleast_1d(
            np.asarray(gauge_twist, dtype=float))
        self.fd_step = fd_step
        self.anchor = anchor
        self._vmat = potential_matrix(V, self.trunc)
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def connection_is_constant(self) -> bool:
        """True when ``H(p)`` is real, so the reference-gauge connection vanishes."""
        return all(abs(c.imag) == 0 for c in self.V.coefficients.values())

    @property
    def gauge_tag(self) -> str:
        return "reference" if not np.any(self.twist) else f"reference-twist{tuple(self.twist)}"

    def _key(self, p):
        return tuple(np.round(np.atleast_1d(p), 12))

    def fix_anchor(self, p0):
        """Pin the gauge anchor to the largest coefficient of the band at ``p0``."""
        self.anchor = None
        self.anchor = solve_bands(self.V, self.trunc, p0, band=self.band, vmat=self._vmat).anchor
        with self._lock:
            self._cache.clear()
        return self.anchor

    def slice(self, p, anchor=None) -> BlochSlice:
        return solve_bands(self.V, self.trunc, p, band=self.band, gap_threshold=self.gap_threshold,
                           anchor=self.anchor if anchor is None else anchor, vmat=self._vmat)

    def derivatives(self, p) -> BandDerivatives:
        key = self._key(p)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        bd = band_derivatives(self.V, self.trunc, np.asarray(key), self.band, self.fd_step,
                              check_curvature=False, gap_threshold=self.gap_threshold,
                              vmat=self._vmat, anchor=self.anchor)
        if np.any(self.twist):
            bd = BandDerivatives(bd.energy, bd.grad_E, bd.hess_E, bd.third,
                                 bd.berry_connection - self.twist, bd.berry_curvature, bd.gap)
        with self._lock:
            if len(self._cache) > 200_000:
                self._cache.clear()
            self._cache[key] = bd
        return bd

    def energy(self, p) -> float:
        return self.derivatives(p).energy

    def connection(self, p) -> np.ndarray:
        return self.derivatives(p).berry_connection

    def connection_gradient(self, p, h=1e-5) -> np.ndarray:
        """``J[a, b] = d A_a / d p_b`` by central differences with a fixed anchor."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        anchor = self.slice(p).anchor
        J = np.zeros((self.dim, self.dim))
        for b in range(self.dim):
            e = np.eye(self.dim)[b] * h
            Ap = reference_connection(solve_bands(self.V, self.trunc, p + e, band=self.band,
                                                  anchor=anchor, vmat=self._vmat))
            Am = reference_connection(solve_bands(self.V, self.trunc, p - e, band=self.band,
                                                  anchor=anchor, vmat=self._vmat))
            J[:, b] = (Ap - Am) / (2 * h)
        return J

    def bloch_data(self, p):
        """``(chi, grad_p chi)`` coefficients in this model's gauge."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        slc = self.slice(p)
        c = slc.chi()
        dc = grad_p_chi(slc)
        if np.any(self.twist):
            ph = np.exp(1j * self.twist @ p)
            dc = ph * (dc + 1j * c[:, None] * self.twist[None, :])
            c = ph * c
        return c, dc

    def map(self, fn, points, workers=1):
        """Apply ``fn(self, p)`` over ``points`` keeping the input order."""
        points = list(points)
        if workers <= 1:
            return [fn(self, p) for p in points]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(lambda q: fn(self, q), points))


def synthesize(trunc: BlochTruncation, coeffs, z) -> np.ndarray:
    """Evaluate ``sum_m c_m exp(i G_m . z)`` at points ``z`` (shape ``(..., d)``).

    ``coeffs`` may carry extra trailing axes (e.g. ``(N, d)`` for gradients).
    """
    z = np.asarray(z, dtype=float)
    if trunc.lattice.dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    phase = np.exp(1j * (z @ trunc.G.T))
    return np.tensordot(phase, coeffs, axes=([-1], [0]))


def band_table(model: BandModel, points, n_bands=4, workers=1):
    """Rows ``(p..., E_1..E_n, gap, A..., F upper triangle...)`` for a CSV dump."""
    d = model.dim
    iu = np.triu_indices(d, 1)

    def row(m, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        slc = m.slice(p)
        A = reference_connection(slc) - m.twist
        F = curvature_resolvent(slc)
        return np.concatenate([p, slc.all_energies[:n_bands], [slc.gap], A, F[iu]])

    header = ([f"p{i + 1}" for i in range(d)] + [f"E_{k + 1}" for k in range(n_bands)] + ["gap"]
              + [f"A{i + 1}" for i in range(d)] + [f"F{i + 1}{j + 1}" for i, j in zip(*iu)])
    return header, np.array(model.map(row, points, workers))
