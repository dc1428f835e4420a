import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jdimpulse import DiscountMarginError, lipschitz_bound, validate_assumptions
from jdimpulse.model import CostB
from jdimpulse.presets import benchmark_1d, isotropic_2d, state_modulated_1d


def test_benchmark_validates_clean():
    model, _ = benchmark_1d()
    rep = validate_assumptions(model, sample_count=2000, seed=0)
    assert rep.passed
    assert rep["discount_margin"].worst_ratio == pytest.approx(1.0)  # margin r - 0


def test_validation_fails_on_small_discount():
    model, _ = benchmark_1d()
    bad = dataclasses.replace(model, discount=0.3, c_sigma=np.sqrt(2.0))
    rep = validate_assumptions(bad, sample_count=500, seed=0)
    assert not rep["discount_margin"].passed
    # the volatility is constant, so the declared (wrong) C_sigma still passes
    assert rep["lipschitz_volatility"].passed


def test_validation_finds_sine_drift_witness():
    model, _ = benchmark_1d()
    bad = dataclasses.replace(model, drift=lambda x: np.sin(np.atleast_2d(x)), c_mu=0.5)
    rep = validate_assumptions(bad, sample_count=1000, seed=0)
    chk = rep["lipschitz_drift"]
    assert not chk.passed
    assert chk.worst_ratio > 1.05
    assert chk.witness is not None
    x, y = np.asarray(chk.witness[0]), np.asarray(chk.witness[1])
    quot = abs(np.sin(x[0]) - np.sin(y[0])) / abs(x[0] - y[0])
    assert quot > 0.5 * 1.05


def test_validation_flags_nonfinite_coefficient():
    model, _ = benchmark_1d()
    def bad_f(x):
        x = np.atleast_2d(x)
        out = np.linalg.norm(x, axis=-1)
        out[np.abs(x[:, 0]) > 4.0] = np.nan
        return out
    bad = dataclasses.replace(model, running_cost=bad_f)
    rep = validate_assumptions(bad, sample_count=500, seed=1)
    assert not rep.passed
    assert any("non-finite" in c.detail for c in rep.checks if not c.passed)


def test_validation_catches_subadditivity_break():
    model, _ = benchmark_1d()
    # B = K + |xi|^2 violates B(a) + B(b) >= B(a+b) + K for same-sign a, b
    bad_cost = CostB(1.0, lambda xi: 1.0 + np.linalg.norm(np.atleast_2d(xi), axis=-1) ** 2, 16.0)
    bad = dataclasses.replace(model, transaction_cost=bad_cost)
    rep = validate_assumptions(bad, sample_count=2000, seed=0)
    assert not rep["transaction_subadditive"].passed


def test_validation_2d_model():
    model, grid = isotropic_2d()
    rep = validate_assumptions(model, sample_count=1500, seed=0, box=(grid.lo, grid.hi))
    assert rep.passed


def test_state_modulated_jump_constant_is_tight():
    model, _ = state_modulated_1d()
    rep = validate_assumptions(model, sample_count=1500, seed=0)
    assert rep.passed
    chk = rep["lipschitz_jump"]
    # tanh' attains 1 near 0, so the declared 0.3|z| is nearly achieved
    assert 0.5 < chk.worst_ratio <= 1.05


# -- lipschitz_bound -------------------------------------------------------


def test_lipschitz_bound_closed_form_arithmetic():
    # C_f / (r - [2 C_mu + C_sigma^2 + integral C_j^2]) with the bracket 0.34
    model, _ = benchmark_1d()
    m = dataclasses.replace(model, c_mu=0.05, c_sigma=np.sqrt(0.24))
    # bracket: 2*0.05 + 0.24 + 0 = 0.34
    assert lipschitz_bound(m) == pytest.approx(1.0 / 0.66, rel=1e-12)


def test_lipschitz_bound_zero_cost():
    model, _ = benchmark_1d()
    m = dataclasses.replace(model, c_f=0.0)
    assert lipschitz_bound(m) == 0.0


def test_lipschitz_bound_plain_discount():
    model, _ = benchmark_1d()
    assert lipschitz_bound(model) == pytest.approx(1.0)


def test_lipschitz_bound_raises_on_violated_margin():
    model, _ = benchmark_1d()
    m = dataclasses.replace(model, discount=0.3, c_sigma=np.sqrt(2.0))
    with pytest.raises(DiscountMarginError):
        lipschitz_bound(m)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(0.5, 4.0), st.floats(0.5, 4.0))
def test_lipschitz_bound_monotone(cf1, cf2, r1, r2):
    model, _ = benchmark_1d()
    cf_lo, cf_hi = sorted((cf1, cf2))
    r_lo, r_hi = sorted((r1, r2))
    lo = lipschitz_bound(dataclasses.replace(model, c_f=cf_lo, discount=r_lo))
    assert lipschitz_bound(dataclasses.replace(model, c_f=cf_hi, discount=r_lo)) >= lo - 1e-12
    assert lipschitz_bound(dataclasses.replace(model, c_f=cf_hi, discount=r_hi)) <= \
        lipschitz_bound(dataclasses.replace(model, c_f=cf_hi, discount=r_lo)) + 1e-12


def test_effective_drift_subtracts_compensator():
    model, _ = benchmark_1d()
    # mu = 0, one atom at +1 with rate 1: mu_bar = -1
    mb = model.effective_drift(np.array([[0.0], [2.0]]))
    assert np.allclose(mb, -1.0)


def test_cost_b_rejects_nonpositive_floor():
    with pytest.raises(ValueError):
        CostB(0.0, lambda xi: np.ones(len(np.atleast_2d(xi))), 1.0)
