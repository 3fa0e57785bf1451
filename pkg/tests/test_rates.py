import math

import numpy as np
import pytest

from mlsamp import estimators, mesh_fem as mf, random_field as rf, rates


def example1_setup():
    return mf.ProblemSetup(
        dim=1, h0=0.125, s=4, degree=1, field=rf.FieldConfig(dimension=5)
    )


# ----------------------------------------------------------------- fit_rate


def test_fit_rate_exact_power():
    xs = [0.5, 1.0, 2.0, 4.0]
    rate, c = rates.fit_rate([(x, 3.0 * x**2) for x in xs])
    assert rate == pytest.approx(2.0, abs=1e-10)
    assert c == pytest.approx(3.0, abs=1e-10)


def test_fit_rate_two_points_exact_slope():
    rate, c = rates.fit_rate([(1.0, 2.0), (4.0, 8.0)])
    assert rate == pytest.approx(math.log(4.0) / math.log(4.0), abs=1e-12)
    assert c == pytest.approx(2.0, abs=1e-12)


def test_fit_rate_with_noise():
    rng = np.random.default_rng(17)
    xs = np.geomspace(0.01, 1.0, 6)
    vs = 2.0 * xs**1.7 * np.exp(rng.normal(0, 0.05, 6))
    rate, _ = rates.fit_rate(list(zip(xs, vs)))
    assert rate == pytest.approx(1.7, abs=0.15)


def test_fit_rate_validation():
    with pytest.raises(ValueError):
        rates.fit_rate([(1.0, 2.0)])
    with pytest.raises(ValueError):
        rates.fit_rate([(1.0, 2.0), (2.0, -1.0)])


def test_mixed_regularity_mu1():
    assert rates.mixed_regularity_mu1(2, 5) == 17


# ---------------------------------------------------------------- sc pilots


def test_sc_pilot_example1_field():
    setup = example1_setup()
    cache = mf.SolveCache(setup)
    params = rates.pilot_diagnostics(setup, cache, "sc", max_level=0)
    assert not params.degenerate
    assert params.mu2 > 0.5  # collocation beats the MC rate on this field
    assert params.phi[0] > 0
    assert params.gamma == pytest.approx(1.0, abs=0.3)  # dof-count metric, 1D


def test_sc_pilot_with_corrections():
    setup = example1_setup()
    cache = mf.SolveCache(setup)
    params = rates.pilot_diagnostics(setup, cache, "sc", max_level=2)
    # correction constants decay with level
    assert params.phi[0] > params.phi[1] > params.phi[2] > 0
    assert params.alpha_fitted
    assert 1.6 <= params.alpha <= 2.4  # degree-1 elements: alpha ~ 2
    assert params.beta > 0
    # extrapolation continues the decay
    h3 = setup.h0 * setup.s**-3
    assert params.phi_at(3, h3) < params.phi[2]


def test_pilot_deterministic():
    setup = example1_setup()
    a = rates.pilot_diagnostics(setup, mf.SolveCache(setup), "sc", max_level=1)
    b = rates.pilot_diagnostics(setup, mf.SolveCache(setup), "sc", max_level=1)
    assert a.mu2 == b.mu2
    assert a.phi == b.phi


def test_sc_pilot_degenerate_guard(monkeypatch):
    # a parameter-independent integrand produces zero successive
    # differences; the mu2 fit must be skipped and flagged
    setup = example1_setup()
    cache = mf.SolveCache(setup)
    monkeypatch.setattr(
        estimators, "sampling_error_estimate", lambda *a, **k: 0.0
    )
    params = rates.pilot_diagnostics(setup, cache, "sc", max_level=0)
    assert params.degenerate


# ---------------------------------------------------------------- mc pilots


def test_mc_pilot_basic():
    setup = example1_setup()
    cache = mf.SolveCache(setup)
    params = rates.pilot_diagnostics(
        setup, cache, "mc", max_level=1, mc_pilot=64, mc_pilot_corr=32, seed=3
    )
    assert params.mu2 == 0.5
    assert params.phi[0] > params.phi[1] > 0


def test_mc_pilot_memo_avoids_resolves():
    setup = example1_setup()
    cache = mf.SolveCache(setup)
    memo = {}
    rates.pilot_diagnostics(
        setup, cache, "mc", max_level=0, seed=3, memo=memo
    )
    solves = cache.total_solves()
    rates.pilot_diagnostics(
        setup, cache, "mc", max_level=0, seed=3, memo=memo
    )
    assert cache.total_solves() == solves


def test_mc_pilot_minimum_size():
    setup = example1_setup()
    with pytest.raises(ValueError):
        rates.pilot_diagnostics(setup, mf.SolveCache(setup), "mc", mc_pilot=8)
