import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochpacket.errors import SingularLattice, UnsupportedOrder
from blochpacket.lattice import (
    ExternalPotential,
    PeriodicPotential,
    build_dual_lattice,
    cubic_lattice,
    enumerate_reciprocal,
    eval_W_derivatives,
    fold_to_bz,
)

coord = st.floats(-3.0, 3.0, allow_nan=False)


def test_cubic_dual_is_identity():
    lat = cubic_lattice(2)
    np.testing.assert_allclose(lat.dual_generators, np.eye(2), atol=1e-15)
    assert lat.cell_volume_direct == pytest.approx(4 * np.pi**2)
    assert lat.cell_volume_dual == pytest.approx(1.0)


def test_duality_relation_oblique():
    v = np.array([[1.0, 0.5], [0.0, np.sqrt(3) / 2]])
    lat = build_dual_lattice(v)
    np.testing.assert_allclose(lat.dual_generators.T @ lat.direct_generators, 2 * np.pi * np.eye(2), atol=1e-12)
    assert lat.cell_volume_direct * lat.cell_volume_dual == pytest.approx((2 * np.pi) ** 2)


def test_singular_generators_rejected():
    with pytest.raises(SingularLattice):
        build_dual_lattice([[1.0, 2.0], [2.0, 4.0]])


def test_enumerate_1d_lexicographic():
    assert enumerate_reciprocal(cubic_lattice(1), 3.0) == [(k,) for k in range(-3, 4)]


def test_enumerate_2d_count():
    # integer points in a disc of radius 2: 13
    m = enumerate_reciprocal(cubic_lattice(2), 2.0)
    assert len(m) == 13
    assert m == sorted(m)
    assert (0, 0) in m


@given(coord, coord)
def test_fold_lands_in_cell_and_shift_is_lattice(a, b):
    lat = build_dual_lattice(np.array([[1.0, 0.3], [0.0, 1.2]]))
    p = np.array([a, b])
    pf, shift = fold_to_bz(lat, p)
    f = lat.dual_coordinates(pf)
    assert np.all(f > -0.5 - 1e-12) and np.all(f <= 0.5 + 1e-12)
    n = lat.dual_coordinates(shift)
    np.testing.assert_allclose(n, np.round(n), atol=1e-9)
    np.testing.assert_allclose(pf + shift, p, atol=1e-12)


def test_potential_hermitian_symmetry_enforced():
    lat = cubic_lattice(1)
    with pytest.raises(ValueError):
        PeriodicPotential(lat, {(1,): 1.0, (-1,): 2.0})
    V = PeriodicPotential.from_triples(lat, [((1,), 1.0, 0.5)])
    assert V.coefficient((-1,)) == pytest.approx(1.0 - 0.5j)


def test_potential_evaluate_mathieu():
    V = PeriodicPotential.from_triples(cubic_lattice(1), [((1,), 1.0, 0.0)])
    z = np.linspace(0, 2 * np.pi, 9)
    np.testing.assert_allclose(V.evaluate(z), 2 * np.cos(z), atol=1e-14)


def _fd(W, x, order, h=1e-4):
    """Central difference of the order-1 tensor below ``order``."""
    d = W.dim
    out = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        out.append((eval_W_derivatives(W, x + e, order - 1) - eval_W_derivatives(W, x - e, order - 1)) / (2 * h))
    return np.moveaxis(np.array(out), 0, -1)


W_FAMILIES = [
    ExternalPotential("cosine_sum", 2, {"amplitudes": [0.3, 0.2], "wavevectors": [[1.0, 0.5], [0.0, 2.0]],
                                        "phases": [0.1, -0.4]}),
    ExternalPotential("gaussian_well", 2, {"depth": 1.5, "center": [0.2, -0.1], "width": 0.8}),
    ExternalPotential("quadratic", 2, {"hessian": [[2.0, 0.3], [0.3, 1.0]], "gradient": [0.1, 0.2],
                                       "center": [1.0, 0.0], "offset": 0.5}),
]


@pytest.mark.parametrize("W", W_FAMILIES, ids=["cosine", "gaussian", "quadratic"])
@given(coord, coord)
@settings(max_examples=25, deadline=None)
def test_W_derivatives_match_finite_differences(W, a, b):
    x = np.array([a, b]) * 0.5
    for order in range(1, 5):
        exact = eval_W_derivatives(W, x, order)
        np.testing.assert_allclose(exact, _fd(W, x, order), atol=2e-6 * max(1.0, np.abs(exact).max()))


def test_W_tensors_symmetric():
    x = np.array([0.3, -0.2])
    for W in W_FAMILIES:
        T = eval_W_derivatives(W, x, 3)
        for perm in [(1, 0, 2), (0, 2, 1), (2, 1, 0)]:
            np.testing.assert_allclose(T, np.transpose(T, perm), atol=1e-14)


def test_W_sum_and_batch():
    W = ExternalPotential.cosine(0.1) + ExternalPotential.harmonic(1)
    x = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(W(x), 0.1 * np.cos(x) + 0.5 * x**2, atol=1e-14)
    assert eval_W_derivatives(W, x, 2).shape == (5, 1, 1)
    assert not W.is_quadratic_or_less()
    assert ExternalPotential.harmonic(2).is_quadratic_or_less()


def test_unsupported_order():
    with pytest.raises(UnsupportedOrder):
        eval_W_derivatives(ExternalPotential.zero(1), 0.0, 5)
