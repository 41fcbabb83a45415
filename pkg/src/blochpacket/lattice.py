"""Lattice geometry and the two potentials of the two-scale problem.

The periodic potential ``V`` lives on the fast variable ``z`` and is stored by
its Fourier coefficients on the dual lattice.  The external potential ``W``
lives on the slow variable ``x`` and comes from a small closed-form family so
that derivative tensors up to order four are exact.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import SingularLattice, UnsupportedOrder

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LatticeSpec:
    """Direct lattice, its dual, and the two cell volumes.

    Generators are stored as columns: ``direct_generators[:, j]`` is ``v_j``
    and ``dual_generators[:, j]`` is ``b_j`` with ``b_i . v_j = 2 pi delta_ij``.
    """

    dim: int
    direct_generators: np.ndarray
    dual_generators: np.ndarray
    cell_volume_direct: float
    cell_volume_dual: float
    condition_number: float = 1.0

    def __post_init__(self):
        for arr in (self.direct_generators, self.dual_generators):
            arr.setflags(write=False)

    def dual_vectors(self, indices) -> np.ndarray:
        """Map integer index rows ``m`` to dual-lattice vectors ``sum_j m_j b_j``."""
        m = np.atleast_2d(np.asarray(indices, dtype=float))
        return m @ self.dual_generators.T

    def dual_coordinates(self, p) -> np.ndarray:
        """Coordinates of ``p`` in the basis ``b_j``."""
        return np.linalg.solve(self.dual_generators, np.asarray(p, dtype=float))


def build_dual_lattice(direct_generators) -> LatticeSpec:
    """Build a :class:`LatticeSpec` from the direct generators (columns)."""
    v = np.array(direct_generators, dtype=float, ndmin=2)
    if v.shape[0] != v.shape[1]:
        raise ValueError(f"direct generators must be square, got {v.shape}")
    d = v.shape[0]
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    scale = max(np.linalg.norm(v, axis=0).max(), np.finfo(float).tiny)
    det = abs(np.linalg.det(v))
    if det < 1e-12 * scale**d:
        raise SingularLattice(f"|det| = {det:.3e} for generator scale {scale:.3e}")
    b = TWO_PI * np.linalg.inv(v).T
    return LatticeSpec(
        dim=d,
        direct_generators=v,
        dual_generators=b,
        cell_volume_direct=det,
        cell_volume_dual=abs(np.linalg.det(b)),
        condition_number=float(np.linalg.cond(v)),
    )


def cubic_lattice(dim: int, period: float = TWO_PI) -> LatticeSpec:
    """Square / cubic lattice with the given period (default 2 pi, so b_j = e_j)."""
    return build_dual_lattice(period * np.eye(dim))


def enumerate_reciprocal(lattice: LatticeSpec, cutoff: float) -> list[tuple[int, ...]]:
    """Integer indices ``m`` with ``|m_1 b_1 + ... + m_d b_d| <= cutoff``.

    Returned in lexicographic order; ``m = 0`` is always present.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    binv = np.linalg.inv(lattice.dual_generators)
    bounds = [int(math.floor(cutoff * np.linalg.norm(row))) + 1 for row in binv]
    ranges = [range(-n, n + 1) for n in bounds]
    cand = np.array(list(itertools.product(*ranges)), dtype=int)
    g = cand @ lattice.dual_generators.T
    keep = np.linalg.norm(g, axis=1) <= cutoff * (1.0 + 1e-12)
    # itertools.product over ascending ranges is already lexicographic
    return [tuple(int(k) for k in row) for row in cand[keep]]


def fold_to_bz(lattice: LatticeSpec, p) -> tuple[np.ndarray, np.ndarray]:
    """Fold ``p`` into the centered half-open cell ``(-1/2, 1/2]`` of the dual lattice.

    Returns ``(p_folded, shift)`` with ``p = p_folded + shift`` and ``shift``
    a dual-lattice vector.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    f = lattice.dual_coordinates(p)
    n = np.ceil(f - 0.5)
    shift = lattice.dual_generators @ n
    return p - shift, shift


# ---------------------------------------------------------------------------
# periodic potential


@dataclass(frozen=True)
class PeriodicPotential:
    """Real periodic potential ``V(z) = sum_m Vhat_m exp(i G_m . z)``."""

    lattice: LatticeSpec
    coefficients: Mapping[tuple, complex] = field(default_factory=dict)

    def __post_init__(self):
        coeffs = {}
        for m, c in self.coefficients.items():
            m = tuple(int(k) for k in np.atleast_1d(m))
            if len(m) != self.lattice.dim:
                raise ValueError(f"index {m} does not match lattice dimension")
            coeffs[m] = complex(c)
        for m, c in coeffs.items():
            partner = coeffs.get(tuple(-k for k in m), 0.0)
            if abs(partner - np.conj(c)) > 1e-12 * max(1.0, abs(c)):
                raise ValueError(f"coefficients violate Hermitian symmetry at {m}")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_triples(cls, lattice, triples):
        """Build from ``(m, re, im)`` triples; the partner ``-m`` is filled in if absent."""
        coeffs = {}
        for m, re, im in triples:
            m = tuple(int(k) for k in np.atleast_1d(m))
            coeffs[m] = complex(re, im)
        for m, c in list(coeffs.items()):
            coeffs.setdefault(tuple(-k for k in m), np.conj(c))
        return cls(lattice, coeffs)

    @classmethod
    def zero(cls, lattice):
        return cls(lattice, {})

    def coefficient(self, m) -> complex:
        return self.coefficients.get(tuple(m), 0.0)

    @property
    def cutoff_box(self) -> int:
        """Largest ``|m_j|`` over the support (0 for the zero potential)."""
        return max((max(abs(k) for k in m) for m in self.coefficients), default=0)

    def is_zero(self) -> bool:
        return all(abs(c) == 0 for c in self.coefficients.values())

    def evaluate(self, z) -> np.ndarray:
        """Sample ``V`` at points ``z`` of shape ``(..., d)``."""
        z = np.asarray(z, dtype=float)
        if self.lattice.dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
            z = z[..., None]
        out = np.zeros(z.shape[:-1])
        for m, c in self.coefficients.items():
            g = self.lattice.dual_vectors(m)[0]
            out = out + (c * np.exp(1j * (z @ g))).real
        return out


# ---------------------------------------------------------------------------
# external potential

EXTERNAL_KINDS = ("quadratic", "cosine_sum", "gaussian_well", "zero", "sum")


@dataclass(frozen=True)
class ExternalPotential:
    """Smooth external potential ``W`` from a closed-form family.

    ``parameters`` by kind:

    * ``quadratic``: ``hessian`` (d x d), ``gradient`` (d), ``center`` (d),
      ``offset``; ``W = offset + gradient . x + 1/2 (x-c) . H (x-c)``.
    * ``cosine_sum``: ``amplitudes`` (k), ``wavevectors`` (k x d),
      ``phases`` (k); ``W = sum_j a_j cos(k_j . x + phi_j)``.
    * ``gaussian_well``: ``depth``, ``center`` (d), ``width``;
      ``W = -depth exp(-|x-c|^2 / (2 width^2))``.
    * ``zero``: no parameters.
    * ``sum``: ``terms``, a tuple of ExternalPotential.
    """

    kind: str
    dim: int
    parameters: Mapping = field(default_factory=dict)
    derivative_order_supported: int = 4

    def __post_init__(self):
        if self.kind not in EXTERNAL_KINDS:
            raise ValueError(f"unknown external potential kind {self.kind!r}")
        d = self.dim
        p = dict(self.parameters)
        if self.kind == "quadratic":
            p["hessian"] = np.array(p.get("hessian", np.zeros((d, d))), dtype=float).reshape(d, d)
            p["gradient"] = np.array(p.get("gradient", np.zeros(d)), dtype=float).reshape(d)
            p["center"] = np.array(p.get("center", np.zeros(d)), dtype=float).reshape(d)
            p["offset"] = float(p.get("offset", 0.0))
            if not np.allclose(p["hessian"], p["hessian"].T):
                raise ValueError("quadratic hessian must be symmetric")
        elif self.kind == "cosine_sum":
            amp = np.atleast_1d(np.array(p["amplitudes"], dtype=float))
            p["amplitudes"] = amp
            p["wavevectors"] = np.array(p["wavevectors"], dtype=float).reshape(len(amp), d)
            p["phases"] = np.array(p.get("phases", np.zeros(len(amp))), dtype=float).reshape(len(amp))
        elif self.kind == "gaussian_well":
            p["depth"] = float(p.get("depth", 1.0))
            p["center"] = np.array(p.get("center", np.zeros(d)), dtype=float).reshape(d)
            p["width"] = float(p.get("width", 1.0))
            if p["width"] <= 0:
                raise ValueError("gaussian_well width must be positive")
        elif self.kind == "sum":
            p["terms"] = tuple(p["terms"])
            if any(t.dim != d for t in p["terms"]):
                raise ValueError("all terms of a sum must share the dimension")
        object.__setattr__(self, "parameters", p)

    # convenience constructors -------------------------------------------
    @classmethod
    def zero(cls, dim):
        return cls("zero", dim)

    @classmethod
    def harmonic(cls, dim, omega=1.0, center=None):
        return cls("quadratic", dim, {"hessian": omega**2 * np.eye(dim),
                                      "center": np.zeros(dim) if center is None else center})

    @classmethod
    def linear(cls, gradient):
        g = np.atleast_1d(np.asarray(gradient, dtype=float))
        return cls("quadratic", len(g), {"gradient": g})

    @classmethod
    def cosine(cls, amplitude, wavevector=1.0, phase=0.0):
        k = np.atleast_1d(np.asarray(wavevector, dtype=float))
        return cls("cosine_sum", len(k), {"amplitudes": [amplitude], "wavevectors": [k],
                                          "phases": [phase]})

    def __add__(self, other):
        if not isinstance(other, ExternalPotential):
            return NotImplemented
        terms = []
        for w in (self, other):
            terms.extend(w.parameters["terms"] if w.kind == "sum" else [w])
        return ExternalPotential("sum", self.dim, {"terms": tuple(terms)})

    def __call__(self, x):
        return eval_W_derivatives(self, x, 0)

    def is_quadratic_or_less(self) -> bool:
        """True when all third and higher derivatives vanish identically."""
        if self.kind in ("zero", "quadratic"):
            return True
        if self.kind == "sum":
            return all(t.is_quadratic_or_less() for t in self.parameters["terms"])
        return False


def _gaussian_tensor(u, a, order):
    """Derivative tensor of ``g = exp(-a |x-c|^2 / 2)`` divided by ``g``.

    ``u = a (x - c)``; batched over leading axes.
    """
    d = u.shape[-1]
    eye = np.eye(d)
    if order == 0:
        return np.ones(u.shape[:-1])
    if order == 1:
        return -u
    if order == 2:
        return np.einsum("...i,...j->...ij", u, u) - a * eye
    if order == 3:
        uuu = np.einsum("...i,...j,...k->...ijk", u, u, u)
        du = (np.einsum("ij,...k->...ijk", eye, u) + np.einsum("ik,...j->...ijk", eye, u)
              + np.einsum("jk,...i->...ijk", eye, u))
        return -(uuu - a * du)
    if order == 4:
        uuuu = np.einsum("...i,...j,...k,...l->...ijkl", u, u, u, u)
        duu = sum(np.einsum(f"{s[:2]},...{s[2]}{s[3]}->...ijkl", eye, u[..., :, None] * u[..., None, :])
                  for s in ("ijkl", "ikjl", "iljk", "jkil", "jlik", "klij"))
        dd = (np.einsum("ij,kl->ijkl", eye, eye) + np.einsum("ik,jl->ijkl", eye, eye)
              + np.einsum("il,jk->ijkl", eye, eye))
        return uuuu - a * duu + a**2 * dd
    raise UnsupportedOrder(order)


def eval_W_derivatives(W: ExternalPotential, x, order: int):
    """Exact derivative tensor of ``W`` of the given order at ``x``.

    ``x`` has shape ``(d,)`` or ``(..., d)``; the result has shape
    ``(...,) + (d,) * order``.  In one dimension a bare scalar or 1-D array
    of positions is accepted.
    """
    if not 0 <= order <= W.derivative_order_supported:
        raise UnsupportedOrder(f"order {order} not in 0..{W.derivative_order_supported}")
    d = W.dim
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise ValueError(f"expected trailing dimension {d}, got {x.shape}")
    batch = x.shape[:-1]
    p = W.parameters
    if W.kind == "zero":
        return np.zeros(batch + (d,) * order)
    if W.kind == "sum":
        return sum(eval_W_derivatives(t, x, order) for t in p["terms"])
    if W.kind == "quadratic":
        dx = x - p["center"]
        if order == 0:
            return p["offset"] + x @ p["gradient"] + 0.5 * np.einsum("...i,ij,...j->...", dx, p["hessian"], dx)
        if order == 1:
            return p["gradient"] + dx @ p["hessian"].T
        if order == 2:
            return np.broadcast_to(p["hessian"], batch + (d, d)).copy()
        return np.zeros(batch + (d,) * order)
    if W.kind == "cosine_sum":
        out = np.zeros(batch + (d,) * order)
        for amp, k, phi in zip(p["amplitudes"], p["wavevectors"], p["phases"]):
            theta = x @ k + phi
            val = amp * np.cos(theta + order * np.pi / 2)
            kk = np.ones(())
            for _ in range(order):
                kk = np.multiply.outer(kk, k)
            out = out + np.multiply.outer(val, kk)
        return out
    if W.kind == "gaussian_well":
        a = 1.0 / p["width"] ** 2
        dx = x - p["center"]
        g = -p["depth"] * np.exp(-0.5 * a * np.einsum("...i,...i->...", dx, dx))
        poly = _gaussian_tensor(a * dx, a, order)
        return g.reshape(batch + (1,) * order) * poly
    raise AssertionError(W.kind)
