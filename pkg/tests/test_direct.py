from dataclasses import replace

import numpy as np
import pytest

from blochpacket.bands import BandModel
from blochpacket.direct import (
    WaveField,
    XGrid,
    assemble_asymptotic,
    assemble_initial_data,
    check_commensurable,
    check_resolution,
    corrector_norm,
    dump_field,
    interpolate_envelope,
    load_field,
    propagate,
    w_is_periodic,
)
from blochpacket.envelope import EnvelopeGrid, gaussian_sample, make_gaussian, spectral_gradient
from blochpacket.errors import (
    CommensurabilityError,
    DomainTooSmall,
    GaugeMismatch,
    GridMismatch,
    ResolutionTooLow,
)
from blochpacket.lattice import ExternalPotential, PeriodicPotential, cubic_lattice
from blochpacket.observables import momentum_from_field, position_from_field

L1 = cubic_lattice(1)
V = PeriodicPotential.from_triples(L1, [((1,), 1.0, 0.0)])
ZERO = PeriodicPotential.zero(L1)
W = ExternalPotential.cosine(0.1, 1.0)
EPS = 1 / 16
ENV = make_gaussian(np.pi**-0.25, [[2.0]], [[0.5j]])


def test_free_gaussian_spreading_closed_form():
    # i eps psi_t = -eps^2/2 psi_xx: the width parameter s^2 becomes s^2 + i eps t
    g = XGrid(40.0, 1024, -20.0)
    x = g.axes()[0]
    s2 = 1.0
    psi0 = WaveField(g, np.exp(-x**2 / (2 * s2)), 0.0, EPS)
    out = propagate(psi0, ZERO, ExternalPotential.zero(1), 0.0, 3.0, 0.5, shadow_tol=1e-6)
    w = s2 + 1j * EPS * 3.0
    exact = np.sqrt(s2 / w) * np.exp(-x**2 / (2 * w))
    assert np.max(np.abs(out.psi - exact)) < 1e-12


def _bloch_packet(n=1024):
    g = XGrid(2 * np.pi, n)
    model = BandModel(V, 10.0)
    model.fix_anchor([0.3])
    return model, assemble_initial_data(model, EnvelopeGrid.from_gaussian(ENV), 2.5, 0.3, EPS, g)


def test_norm_conserved():
    _, f0 = _bloch_packet()
    f1 = propagate(f0, V, W, 0.0, 0.5, EPS / 10)
    assert f1.norm() == pytest.approx(f0.norm(), rel=1e-12)


def test_split_step_second_order():
    _, f0 = _bloch_packet()
    T = 0.25
    ref = propagate(f0, V, W, 0.0, T, EPS / 320).psi
    h = f0.grid.cell
    errs = [np.sqrt(np.sum(np.abs(propagate(f0, V, W, 0.0, T, EPS * s).psi - ref) ** 2) * h)
            for s in (1 / 10, 1 / 20, 1 / 40)]
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 3.5 < r1 < 4.5 and 3.5 < r2 < 4.5


def test_initial_data_is_normalized_to_first_order():
    _, f0 = _bloch_packet()
    # ||a chi|| = ||a|| with the unit-cell normalization of chi; the corrector adds O(sqrt eps)
    assert f0.norm() == pytest.approx(1.0, abs=0.1)


def test_interpolation_of_envelope_is_spectral():
    env = EnvelopeGrid.from_gaussian(ENV)
    g = XGrid(2 * np.pi, 512)
    vals = interpolate_envelope(env.a, env.grid, g, 2.5, EPS)
    y = (g.axes()[0] - 2.5) / np.sqrt(EPS)
    exact = gaussian_sample(ENV, y[:, None])
    assert np.max(np.abs(vals - exact)) < 1e-10


def test_gauge_twist_changes_data_by_a_global_phase():
    # chi' = exp(i g p) chi and b' = b - g . grad a reproduce psi up to exp(i g p0)
    g_tw = np.array([0.37])
    grid = XGrid(2 * np.pi, 1024)
    env = EnvelopeGrid.from_gaussian(ENV)
    m0 = BandModel(V, 10.0)
    m1 = BandModel(V, 10.0, gauge_twist=g_tw)
    for m in (m0, m1):
        m.fix_anchor([0.3])
    da = spectral_gradient(env.a, env.grid)
    env_tw = replace(env, b=env.b - 1j * np.tensordot(g_tw, da, axes=1))
    psi0 = assemble_initial_data(m0, env, 2.5, 0.3, EPS, grid).psi
    psi1 = assemble_initial_data(m1, env_tw, 2.5, 0.3, EPS, grid).psi
    assert np.max(np.abs(psi1 - np.exp(1j * g_tw @ [0.3]) * psi0)) < 1e-12
    with pytest.raises(GaugeMismatch):
        assemble_asymptotic((2.5, 0.3, 0.0, 0.0), env, m1, grid, EPS, gauge=m0.gauge_tag)


def test_dump_load_round_trip(tmp_path):
    _, f0 = _bloch_packet(256)
    f0 = replace(f0, t=0.125)
    path = tmp_path / "psi.bin"
    dump_field(f0, path)
    f1 = load_field(path)
    assert f1.grid == f0.grid and f1.t == 0.125 and f1.epsilon == EPS
    np.testing.assert_array_equal(f1.psi, f0.psi)
    d, = np.frombuffer(path.read_bytes()[:4], "<i4")
    assert d == 1 and path.stat().st_size == 4 + 4 + 8 + 16 + 16 * 256


def test_grid_checks():
    with pytest.raises(CommensurabilityError):
        check_commensurable(V, XGrid(2 * np.pi + 0.1, 1024), EPS)
    check_commensurable(V, XGrid(2 * np.pi, 1024), EPS)
    model = BandModel(V, 10.0)
    with pytest.raises(ResolutionTooLow):
        check_resolution(XGrid(2 * np.pi, 100), model, EPS)
    with pytest.raises(ResolutionTooLow):
        check_resolution(XGrid(1.0, 1024), model, EPS)
    assert w_is_periodic(W, XGrid(2 * np.pi, 64))
    assert not w_is_periodic(ExternalPotential.harmonic(1), XGrid(2 * np.pi, 64))


def test_shadow_guard_for_nonperiodic_W():
    g = XGrid(2 * np.pi, 256)
    x = g.axes()[0]
    f = WaveField(g, np.exp(-(x - 0.2) ** 2), 0.0, EPS)
    with pytest.raises(DomainTooSmall):
        propagate(f, ZERO, ExternalPotential.harmonic(1), 0.0, 0.1, 0.01)


def test_corrector_norm_requires_matching_fields():
    a = WaveField(XGrid(1.0, 8), np.ones(8, complex), 0.0, EPS)
    assert corrector_norm(a, a) == 0.0
    with pytest.raises(GridMismatch):
        corrector_norm(a, WaveField(XGrid(1.0, 16), np.ones(16, complex), 0.0, EPS))
    with pytest.raises(GridMismatch):
        corrector_norm(a, replace(a, t=0.1))
    b = replace(a, psi=np.zeros(8, complex))
    assert corrector_norm(a, b) == pytest.approx(1.0)


def test_plane_wave_phase_exact():
    g = XGrid(2 * np.pi, 64)
    x = g.axes()[0]
    k = 5
    f = WaveField(g, np.exp(1j * k * x), 0.0, EPS)
    out = propagate(f, ZERO, ExternalPotential.zero(1), 0.0, 0.7, 0.01)
    np.testing.assert_allclose(out.psi, np.exp(-0.5j * EPS * k**2 * 0.7) * f.psi, atol=1e-13)


def test_harmonic_coherent_state_center():
    # for W = x^2/2 the first moment follows the classical flow exactly
    eps = 1 / 16
    g = XGrid(16.0, 2048, -8.0)
    x = g.axes()[0]
    q0, p0 = 1.0, 0.5
    psi = eps**-0.25 * np.pi**-0.25 * np.exp(1j * p0 * (x - q0) / eps - (x - q0) ** 2 / (2 * eps))
    out = propagate(WaveField(g, psi, 0.0, eps), ZERO, ExternalPotential.harmonic(1), 0.0, 1.0, eps / 100)
    assert position_from_field(out)[0] == pytest.approx(q0 * np.cos(1) + p0 * np.sin(1), abs=1e-6)
    assert momentum_from_field(out)[0] == pytest.approx(-q0 * np.sin(1) + p0 * np.cos(1), abs=1e-6)


def test_free_initial_data_is_scaled_envelope():
    model = BandModel(PeriodicPotential.zero(cubic_lattice(1, 2 * np.pi / 8)), 40.0)
    env = EnvelopeGrid.from_gaussian(ENV)
    g = XGrid(2 * np.pi, 2048)
    f = assemble_initial_data(model, env, np.pi, 1.0, EPS, g)
    x = g.axes()[0]
    y = (x - np.pi) / np.sqrt(EPS)
    expect = EPS**-0.25 * np.exp(1j * (x - np.pi) / EPS) * gaussian_sample(ENV, y[:, None])
    assert np.max(np.abs(f.psi - expect)) < 1e-10
    assert f.norm() == pytest.approx(1.0, abs=1e-10)


def test_asymptotic_at_zero_time_is_the_initial_data():
    model, f0 = _bloch_packet()
    env = EnvelopeGrid.from_gaussian(ENV)
    f1 = assemble_asymptotic((2.5, 0.3, 0.0, 0.0), env, model, f0.grid, EPS)
    np.testing.assert_array_equal(f1.psi, f0.psi)


def test_mathieu_norm_deviation_within_sqrt_eps():
    eps = 1 / 32
    model = BandModel(V, 10.0)
    model.fix_anchor([0.3])
    f = assemble_initial_data(model, EnvelopeGrid.from_gaussian(ENV), 2.5, 0.3, eps, XGrid(2 * np.pi, 4096))
    assert abs(f.norm() ** 2 - 1.0) <= 0.5 * np.sqrt(eps)


def test_corrector_norm_of_known_bump():
    g = XGrid(20.0, 2048, -10.0)
    x = g.axes()[0]
    bump = np.exp(-x**2)
    bump *= 0.01 / np.sqrt(np.sum(bump**2) * g.cell)
    a = WaveField(g, np.exp(1j * x), 0.0, EPS)
    assert corrector_norm(a, replace(a, psi=a.psi + bump)) == pytest.approx(0.01, abs=1e-12)


def test_gauge_change_leaves_corrector_norm_invariant():
    g_tw = np.array([-0.8])
    grid = XGrid(2 * np.pi, 1024)
    env = EnvelopeGrid.from_gaussian(ENV)
    da = spectral_gradient(env.a, env.grid)
    norms = []
    for tw, e in ((None, env), (g_tw, replace(env, b=env.b - 1j * np.tensordot(g_tw, da, axes=1)))):
        m = BandModel(V, 10.0, gauge_twist=tw)
        m.fix_anchor([0.3])
        full = assemble_initial_data(m, e, 2.5, 0.3, EPS, grid)
        lead = assemble_initial_data(m, e, 2.5, 0.3, EPS, grid, leading_only=True)
        norms.append(corrector_norm(full, lead))
    assert norms[0] > 1e-2
    assert abs(norms[0] - norms[1]) <= 1e-10
