"""Tests for the analytic sampling-variance estimates, the useful-time
rules of thumb, and the method-choice report."""

import cmath
import math

import numpy as np
import pytest

from gaugep import analytics, gauges, model, phasespace
from gaugep.errors import ConfigurationError


def bh_model():
    lat = model.LatticeSpec(extents=(6,), lengths=(4.0,))
    pot = model.InteractionPotential(c6=-32.0, eps=1.0)
    return model.ModelSpec.from_potential(lat, pot)


def rydberg_model():
    lat = model.LatticeSpec(extents=(64,), lengths=(100.0,))
    pot = model.InteractionPotential(c6=-5.96e7, eps=12.5)
    return model.ModelSpec.from_potential(lat, pot)


def small_model():
    pot = model.InteractionPotential(c6=-11.0, eps=0.8)
    return model.ModelSpec.from_potential(
        model.LatticeSpec(extents=(4,), lengths=(4.0,)), pot)


# ----------------------------------------------------------------------------
# initial moments
# ----------------------------------------------------------------------------

def test_initial_moments_deterministic():
    n0 = np.array([1.0 + 0.5j, 2.0 - 0.25j])
    m = analytics.InitialMoments.deterministic(n0)
    assert np.allclose(m.n_mean, n0)
    assert np.allclose(m.nn_star, np.outer(n0, n0.conj()))
    assert np.allclose(m.nini, np.outer(n0.imag, n0.imag))
    assert np.allclose(m.C0, 0.0) and np.allclose(m.c_alpha, 0.0)
    assert m.V0 == 0.0


def test_initial_moments_constant_samples_match_deterministic():
    phi = np.array([0.8 + 0.1j, -0.3 + 0.6j, 1.1 + 0.0j])
    alpha0 = np.tile(phi, (50, 1))
    beta0 = np.tile(phi.conj(), (50, 1))
    m = analytics.InitialMoments.from_samples(alpha0, beta0)
    d = analytics.InitialMoments.deterministic(np.abs(phi) ** 2)
    assert np.allclose(m.n_mean, d.n_mean, atol=1e-14)
    assert np.allclose(m.nn_star, d.nn_star, atol=1e-13)
    assert np.allclose(m.C0, 0.0, atol=1e-13)
    assert m.V0 == pytest.approx(0.0, abs=1e-14)


def test_initial_moments_v0_from_lognormal_magnitudes():
    rng = np.random.default_rng(21)
    sigma = 0.3
    g = rng.normal(0.0, sigma, size=(40000, 3))
    h = rng.normal(0.0, sigma, size=(40000, 3))
    m = analytics.InitialMoments.from_samples(np.exp(g) + 0j, np.exp(h) + 0j)
    assert m.V0 == pytest.approx(sigma ** 2, rel=0.05)
    assert np.allclose(m.nini, 0.0, atol=1e-20)


# ----------------------------------------------------------------------------
# agreement between the variance forms
# ----------------------------------------------------------------------------

def test_block_form_equals_plain_form_at_identity():
    ms = small_model()
    rng = np.random.default_rng(7)
    a0 = rng.normal(size=(2000, 4)) + 1j * rng.normal(size=(2000, 4)) + 1.0
    b0 = rng.normal(size=(2000, 4)) + 1j * rng.normal(size=(2000, 4)) + 0.7
    mom = analytics.InitialMoments.from_samples(a0, b0)
    eye = np.eye(8, dtype=complex)
    for t in [0.0, 1e-3, 0.01, 0.05, 0.2]:
        v_block = analytics.v_no_drift_gauged(t, ms, eye, mom)
        v_plain = analytics.v_positive_p(t, ms, mom)
        assert v_block == pytest.approx(v_plain, rel=1e-10, abs=1e-12)


def test_gauge_p_full_matches_expansion_at_small_t():
    ms = small_model()
    n0 = np.full(4, 0.9, dtype=complex)
    mom = analytics.InitialMoments.deterministic(n0)
    ints = gauges.gauge_integrals(ms, n0)
    for a in [0.0, 0.4, 1.1]:
        O = gauges.global_O(a, 4)
        v_full = analytics.v_gauge_p(1e-4, ms, O, mom)
        v_exp = float(analytics.v_gauge_p_expanded(1e-4, ints, a))
        assert v_full == pytest.approx(v_exp, rel=1e-4)


def test_diffusion_only_full_matches_expansion_at_small_t():
    ms = small_model()
    n0 = np.full(4, 0.9, dtype=complex)
    mom = analytics.InitialMoments.deterministic(n0)
    ints = gauges.gauge_integrals(ms, n0)
    for a in [0.0, 0.4, 1.1]:
        O = gauges.global_O(a, 4)
        v_full = analytics.v_no_drift_gauged(1e-3, ms, O, mom)
        v_exp = float(analytics.v_diffusion_only_expanded(1e-3, ints, a))
        assert v_full == pytest.approx(v_exp, rel=1e-4)


def test_gauge_p_expansion_with_complex_occupations():
    ms = small_model()
    n0 = np.full(4, 0.9, dtype=complex) * np.exp(0.3j)
    mom = analytics.InitialMoments.deterministic(n0)
    ints = gauges.gauge_integrals(ms, n0)
    assert ints.I1 > 0.0
    v_full = analytics.v_gauge_p(1e-4, ms, gauges.global_O(0.5, 4), mom)
    v_exp = float(analytics.v_gauge_p_expanded(1e-4, ints, 0.5))
    assert v_full == pytest.approx(v_exp, rel=1e-4)


def test_v0_offsets_pass_through():
    ms = small_model()
    n0 = np.full(4, 0.9, dtype=complex)
    mom = analytics.InitialMoments.deterministic(n0)
    eye = np.eye(8, dtype=complex)
    base_g = analytics.v_gauge_p(0.01, ms, eye, mom)
    base_p = analytics.v_positive_p(0.01, ms, mom)
    assert analytics.v_gauge_p(0.01, ms, eye, mom, v0=2.5) == pytest.approx(base_g + 2.5)
    assert analytics.v_positive_p(0.01, ms, mom, v0=2.5) == pytest.approx(base_p + 2.5)
    assert analytics.v_gauge_p(0.0, ms, eye, mom) == 0.0


# ----------------------------------------------------------------------------
# single-mode closed forms (independent scalar implementations)
# ----------------------------------------------------------------------------

def scalar_plain_v(t, w, n0):
    """Unweighted O=1 spread for a single mode, scalars only."""
    h = (math.exp(2 * w * t) - 1.0 - 2 * w * t - 2 * (w * t) ** 2) / w ** 2
    return 0.5 * (t * w - t * t * w * w * n0.real + 0.5 * w * w * abs(n0) ** 2 * h)


def scalar_weighted_v(t, w, n0, a):
    """Drift-gauged spread for a single mode with a global mix, scalars only."""
    p = 2.0 * math.exp(-2 * a) * w
    phi1 = (math.exp(t * p) - 1.0 - t * p) / p
    q = 0.5 * abs(n0) ** 2 * phi1 + t * n0.imag ** 2
    return 0.5 * (t * math.cosh(2 * a) * w + 2.0 * math.exp(-2 * a) * w * q)


def scalar_diffusion_only_v(t, w, n0, a):
    """Unweighted spread for a single mode with a global mix, scalars only."""
    p = 2.0 * math.exp(-2 * a) * w
    phi2 = (math.exp(t * p) - 1.0 - t * p - 0.5 * (t * p) ** 2) / p ** 2
    qt = abs(n0) ** 2 * phi2
    return 0.5 * (t * math.cosh(2 * a) * w + 2.0 * w * w * qt - t * t * w * w * n0.real)


def test_single_mode_scalar_cross_checks():
    rng = np.random.default_rng(42)
    lat = model.LatticeSpec(extents=(1,), lengths=(1.0,))
    for _ in range(4):
        w = float(rng.uniform(0.5, 3.0))
        n0 = complex(rng.uniform(0.2, 2.0), rng.uniform(-0.5, 0.5))
        a = float(rng.uniform(0.0, 1.0))
        t = float(rng.uniform(0.01, 0.2))
        ms = model.ModelSpec.contact(lat, g=w)
        mom = analytics.InitialMoments.deterministic(np.array([n0]))
        O = gauges.global_O(a, 1)
        assert analytics.v_positive_p(t, ms, mom) == pytest.approx(
            scalar_plain_v(t, w, n0), rel=1e-12)
        assert analytics.v_gauge_p(t, ms, O, mom) == pytest.approx(
            scalar_weighted_v(t, w, n0, a), rel=1e-12)
        assert analytics.v_no_drift_gauged(t, ms, O, mom) == pytest.approx(
            scalar_diffusion_only_v(t, w, n0, a), rel=1e-12)


def test_series_branch_continuity():
    # the entrywise exp remainders must be continuous across the series cut
    ms = model.ModelSpec.contact(model.LatticeSpec(extents=(1,), lengths=(1.0,)), g=1.0)
    mom = analytics.InitialMoments.deterministic(np.array([1.0 + 0.0j]))
    ts = [4.9e-5, 5.1e-5]  # straddles |2 t U| = 1e-4
    vs = [analytics.v_positive_p(t, ms, mom) for t in ts]
    assert vs[1] > vs[0]
    assert vs[1] - vs[0] < 2.0 * (ts[1] - ts[0])  # no jump, slope ~ U/2


# ----------------------------------------------------------------------------
# useful-time estimates
# ----------------------------------------------------------------------------

def test_tsim_six_site_ring_frozen():
    ms = bh_model()
    ints = gauges.gauge_integrals(ms, np.full(6, 1.2, dtype=complex))
    tg = analytics.tsim(ints, "gauge_p")
    tp = analytics.tsim(ints, "positive_p")
    assert tg.times["weight_spread"] == pytest.approx(0.138615, abs=2e-6)
    assert tg.times["direct_noise"] == pytest.approx(0.625, rel=1e-12)
    assert tg.governing == "weight_spread"
    assert tp.times["noise_amplification"] == pytest.approx(0.069475, abs=2e-6)
    assert tp.governing == "noise_amplification"


def test_tsim_long_range_ring_frozen():
    ms = rydberg_model()
    ints = gauges.gauge_integrals(ms, np.full(64, 0.125, dtype=complex))
    tg = analytics.tsim(ints, "gauge_p")
    tp = analytics.tsim(ints, "positive_p")
    td = analytics.tsim(ints, "diffusion_only")
    assert tg.times["weight_spread"] == pytest.approx(0.324689, abs=2e-6)
    assert tp.times["noise_amplification"] == pytest.approx(0.214206, abs=2e-6)
    assert tp.times["direct_noise"] == pytest.approx(1.280094, abs=2e-6)
    assert td.times["noise_amplification"] == pytest.approx(
        4.0 / (ints.U0 * ints.I2P) ** 0.25, rel=1e-12)


def test_tsim_weak_interaction_governed_by_direct_noise():
    # I2 below U0^2/40 puts the weight-spread window past the direct-noise cap
    ints = gauges.GaugeIntegrals(I1=0.0, I2=10.24, I1P=0.0, I2P=0.0, U0=32.0, W0=32.0)
    tg = analytics.tsim(ints, "gauge_p")
    assert tg.governing == "direct_noise"
    assert tg.times["weight_spread"] > tg.times["direct_noise"]


def test_tsim_zero_integrals_give_infinite_windows():
    ints = gauges.GaugeIntegrals(I1=0.0, I2=0.0, I1P=0.0, I2P=0.0, U0=2.0, W0=2.0)
    tg = analytics.tsim(ints, "gauge_p")
    tp = analytics.tsim(ints, "positive_p")
    assert tg.times["weight_spread"] == np.inf
    assert tp.times["noise_amplification"] == np.inf
    assert tg.governing == "direct_noise"
    with pytest.raises(ConfigurationError):
        analytics.tsim(ints, "negative_p")


def test_useful_limit_shared_with_estimators():
    assert analytics.V_USEFUL_LIMIT == phasespace.V_HALT_THRESHOLD == 10.0


# ----------------------------------------------------------------------------
# strategy report
# ----------------------------------------------------------------------------

def test_strategy_contact_sixteen_site_rule():
    # for contact kernels, unweighted diffusion-gauged runs win iff M >= 16
    for M, expected in [(8, False), (16, True), (32, True)]:
        lat = model.LatticeSpec(extents=(M,), lengths=(float(M),))
        ms = model.ModelSpec.contact(lat, g=2.0)
        rep = analytics.gauge_strategy(ms, np.full(M, 1.0, dtype=complex))
        assert rep.diffusion_only_preferred is bool(expected)


def test_strategy_long_range_ring():
    ms = rydberg_model()
    rep = analytics.gauge_strategy(ms, np.full(64, 0.125, dtype=complex))
    assert rep.diffusion_only_preferred is False
    assert rep.diffusion_gauge_useful is True
    assert rep.recommended == "gauge_p"
    assert rep.notes == []


def test_strategy_kinetic_caveat_flag():
    lat = model.LatticeSpec(extents=(6,), lengths=(4.0,))
    pot = model.InteractionPotential(c6=-32.0, eps=1.0)
    W, row0 = model.build_potential_matrix(lat, pot)
    omega = model.tunneling_omega(lat, J=1.0)
    ms = model.ModelSpec.from_interaction_matrix(lat, W, omega=omega)
    rep = analytics.gauge_strategy(ms, np.full(6, 1.2, dtype=complex))
    assert rep.tsim_gauge_p.kinetic_caveat is True
    assert any("quadratic" in note for note in rep.notes)


# ----------------------------------------------------------------------------
# assembled report
# ----------------------------------------------------------------------------

def test_variance_report_weighted_six_site_ring():
    ms = bh_model()
    n0 = np.full(6, 1.2, dtype=complex)
    t_grid = np.linspace(0.0, 0.2, 101)
    rep = analytics.variance_report(ms, n0, "gauge_p", t_grid, t_opt=0.05)
    assert rep.a_used == pytest.approx(0.7049986, abs=1e-6)
    assert rep.v_analytic[0] == 0.0
    assert np.all(np.diff(rep.v_analytic) > 0.0)
    assert rep.t_sim_analytic is not None and 0.0 < rep.t_sim_analytic < 0.2
    assert rep.kinetic_caveat is False


def test_variance_report_plain_and_diffusion_only():
    ms = bh_model()
    n0 = np.full(6, 1.2, dtype=complex)
    t_grid = np.linspace(0.0, 0.1, 51)
    rep_p = analytics.variance_report(ms, n0, "positive_p", t_grid)
    rep_d = analytics.variance_report(ms, n0, "diffusion_only", t_grid)
    assert rep_p.a_used is None
    assert rep_d.a_used is not None and rep_d.a_used > 0.0
    # the optimized diffusion gauge must not be worse at its target time
    k = len(t_grid) - 1
    assert rep_d.v_analytic[k] <= rep_p.v_analytic[k]
    with pytest.raises(ConfigurationError):
        analytics.variance_report(ms, n0, "imaginary_p", t_grid)
