import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfcx

from fracorder.errors import DomainError, NonConvergence, StepSizeError
from fracorder.mlf import (
    FractionalModel,
    MLParams,
    TruncationPolicy,
    eval_mode,
    eval_mode_detail,
    eval_multinomial_ml,
    frac_ode_oracle,
    frac_ode_solve,
    mode_responses,
)


def brute_force_ml(theta0, thetas, z, degree=60, digits=40):
    """Double-loop multinomial sum to a fixed total degree in extended precision."""
    with mpmath.workdps(digits):
        total = mpmath.mpf(0)
        for k1 in range(degree + 1):
            for k2 in range(degree + 1 - k1):
                total += (
                    mpmath.binomial(k1 + k2, k1)
                    * mpmath.mpf(z[0]) ** k1
                    * mpmath.mpf(z[1]) ** k2
                    * mpmath.rgamma(mpmath.mpf(theta0) + mpmath.mpf(thetas[0]) * k1 + mpmath.mpf(thetas[1]) * k2)
                )
        return float(total)


# ---------------------------------------------------------------------------
# parameter types


def test_params_validate():
    with pytest.raises(ValueError):
        MLParams(0.0, (0.5,))
    with pytest.raises(ValueError):
        MLParams(1.0, (1.5,))
    with pytest.raises(ValueError):
        MLParams(1.0, ())


def test_model_validates_and_sorts():
    with pytest.raises(ValueError):
        FractionalModel((0.5, 0.3), (1.0, 1.0))
    with pytest.raises(ValueError):
        FractionalModel((0.3,), (-1.0,))
    with pytest.raises(ValueError):
        FractionalModel((0.3, 0.5), (1.0,))
    m = FractionalModel.from_pairs((0.8, 0.3), (2.0, 1.0))
    assert m.orders == (0.3, 0.8) and m.weights == (1.0, 2.0)


def test_policy_validates():
    with pytest.raises(ValueError):
        TruncationPolicy(abs_tol=0.0)
    with pytest.raises(ValueError):
        TruncationPolicy(max_total_degree=0)


def test_ml_arguments_carry_weight_ratios():
    m = FractionalModel((0.3, 0.8), (2.0, 4.0))
    params = m.ml_params()
    assert params.theta0 == pytest.approx(1.8)
    assert params.thetas == pytest.approx((0.8, 0.5))
    z = m.ml_arguments(3.0, 2.0)
    assert z == pytest.approx([-(3.0 / 4.0) * 2.0**0.8, -(2.0 / 4.0) * 2.0**0.5])


# ---------------------------------------------------------------------------
# series


def test_series_zero_argument():
    value, err = eval_multinomial_ml(MLParams(1.0, (0.5,)), [0.0])
    assert value == 1.0
    assert err < 1e-14


def test_series_exponential():
    value, _ = eval_multinomial_ml(MLParams(1.0, (1.0,)), [1.0])
    assert value == pytest.approx(math.e, rel=1e-14)


def test_series_two_term_against_brute_force():
    value, err = eval_multinomial_ml(MLParams(1.8, (0.8, 0.5)), [-0.5, -0.3])
    ref = brute_force_ml(1.8, (0.8, 0.5), (-0.5, -0.3))
    assert abs(value - ref) <= 1e-13
    assert err < 1e-12


def test_series_half_order_is_erfcx():
    for z in (0.1, 0.7, 1.5, 3.0):
        value, _ = eval_multinomial_ml(MLParams(1.0, (0.5,)), [-z])
        assert value == pytest.approx(erfcx(z), rel=1e-12)


def test_series_complex_arguments():
    z = 0.5 + 0.5j
    value, _ = eval_multinomial_ml(MLParams(1.0, (1.0,)), [z])
    assert abs(value - np.exp(z)) < 1e-14


def test_series_domain_and_budget_errors():
    with pytest.raises(DomainError):
        eval_multinomial_ml(MLParams(1.0, (0.5,)), [-6.0])
    with pytest.raises(NonConvergence):
        eval_multinomial_ml(MLParams(1.0, (0.5,)), [-2.0], TruncationPolicy(max_total_degree=5))
    with pytest.raises(ValueError):
        eval_multinomial_ml(MLParams(1.0, (0.5,)), [0.1, 0.2])


def test_series_extended_precision_matches_double():
    params = MLParams(1.5, (0.5, 0.3))
    z = [-1.0, -0.4]
    d, _ = eval_multinomial_ml(params, z, TruncationPolicy(precision="double"))
    e, err = eval_multinomial_ml(params, z, TruncationPolicy(precision="extended"))
    assert abs(d - e) < 1e-13
    assert err < 1e-15


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(0.2, 1.0), x=st.floats(0.0, 1.5))
def test_single_term_reduction(alpha, x):
    e1, _ = eval_multinomial_ml(MLParams(1.0, (alpha,)), [-x])
    e2, _ = eval_multinomial_ml(MLParams(1.0 + alpha, (alpha,)), [-x])
    assert abs(1.0 - x * e2 - e1) <= 1e-10


# ---------------------------------------------------------------------------
# mode response


def test_mode_trivial_cases():
    m = FractionalModel((0.3, 0.7), (1.0, 2.0))
    assert eval_mode(5.0, m, 0.0) == 1.0
    assert eval_mode(0.0, m, 3.0) == 1.0
    with pytest.raises(ValueError):
        eval_mode(-1.0, m, 1.0)


def test_mode_classical_relaxation():
    m = FractionalModel((1.0,), (1.0,))
    assert eval_mode(2.0, m, 1.0) == pytest.approx(math.exp(-2.0), rel=1e-12)


def test_mode_weight_factor_matches_ode():
    # the last weight rescales the rate; series and ODE must agree for q_n != 1
    m = FractionalModel((0.4, 0.7), (1.0, 3.0))
    series = eval_mode_detail(2.0, m, 0.5, route="series")
    ode = eval_mode_detail(2.0, m, 0.5, route="ode")
    assert abs(series.value - ode.value) <= series.error + ode.error
    assert 0.0 < series.value <= 1.0


def test_mode_routes():
    m = FractionalModel((0.5,), (1.0,))
    assert eval_mode_detail(1.0, m, 1.0).route == "series"
    assert eval_mode_detail(1e4, m, 10.0).route == "ode"
    assert eval_mode_detail(0.0, m, 1.0).route == "exact"


@settings(max_examples=25, deadline=None)
@given(
    orders=st.lists(st.floats(0.05, 1.0), min_size=1, max_size=3, unique=True),
    lam=st.floats(0.01, 200.0),
)
def test_mode_bounded_and_nonincreasing(orders, lam):
    orders = sorted(orders)
    if len(orders) > 1 and min(np.diff(orders)) < 1e-3:
        return
    m = FractionalModel(tuple(orders), (1.0,) * len(orders))
    values, errors = mode_responses([lam], m, np.geomspace(1e-3, 10.0, 30), estimate_error=True)
    v, e = values[0], errors[0]
    # the discrete march is exact up to its own error estimate
    assert np.all(v > -e) and np.all(v <= 1.0 + e)
    assert np.all(np.diff(v) <= e[1:] + e[:-1] + 1e-12)


def test_decay_bound_constant_is_bounded():
    m = FractionalModel((0.3, 0.6, 0.9), (1.0, 0.5, 2.0))
    times = np.geomspace(0.1, 10.0, 15)
    constants = []
    for lam in (1.0, 10.0, 100.0, 1000.0):
        values, _ = mode_responses([lam], m, times)
        an = m.top
        envelope = sum(times ** (an - a) for a in m.orders[:-1]) / (1 + lam * times**an) + 1 / (1 + lam * times**an)
        constants.append(float(np.max(np.abs(values[0]) / envelope)))
    assert max(constants) < 5.0
    assert constants[-1] <= 2.0 * constants[0]


# ---------------------------------------------------------------------------
# ODE route


def test_ode_zero_rate_is_one():
    m = FractionalModel((0.5,), (1.0,))
    values = frac_ode_oracle(0.0, m, [0.1, 1.0, 2.0])
    assert np.all(values == 1.0)


def test_ode_half_order():
    m = FractionalModel((0.5,), (1.0,))
    value = frac_ode_oracle(1.0, m, [1.0], initial_steps=256, substeps=8, levels=3)
    assert value[0] == pytest.approx(erfcx(1.0), abs=1e-6)
    assert erfcx(1.0) == pytest.approx(0.427584, abs=1e-6)


def test_ode_exponential():
    m = FractionalModel((1.0,), (1.0,))
    value = frac_ode_oracle(2.0, m, [1.0], initial_steps=512, levels=3)
    assert value[0] == pytest.approx(math.exp(-2.0), abs=1e-6)


def test_ode_step_size_error():
    m = FractionalModel((0.5,), (1.0,))
    with pytest.raises(StepSizeError):
        frac_ode_oracle(50.0, m, [1.0], tol=1e-12, initial_steps=8, substeps=1)
    with pytest.raises(ValueError):
        frac_ode_oracle(1.0, m, [1.0], levels=1)


def test_ode_grid_validation():
    m = FractionalModel((0.5,), (1.0,))
    with pytest.raises(ValueError):
        frac_ode_solve([1.0], m, [1.0, 0.5])
    with pytest.raises(ValueError):
        frac_ode_solve([-1.0], m, [1.0])


@pytest.mark.parametrize("alpha", [0.3, 0.6, 0.9])
def test_ode_convergence_order(alpha):
    m = FractionalModel((alpha,), (1.0,))
    t = [0.5, 1.0]
    ref = erfcx(1.0) if alpha == 0.5 else eval_mode_detail(1.0, m, 1.0, route="series").value
    errs = []
    for steps in (32, 64, 128):
        v, _ = frac_ode_solve([1.0], m, t, initial_steps=steps, substeps=steps // 8, levels=1)
        errs.append(abs(v[0, -1] - ref))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 0.8 * (2 - alpha) - 0.3)


def test_ode_batch_matches_single():
    models = [FractionalModel((0.3,), (1.0,)), FractionalModel((0.2, 0.7), (1.0, 2.0))]
    lams, t = [1.0, 5.0], [0.1, 1.0, 3.0]
    batch, _ = frac_ode_solve(lams, models, t, grid_order=0.7)
    for k, m in enumerate(models):
        single, _ = frac_ode_solve(lams, m, t, grid_order=0.7)
        assert np.allclose(batch[k], single, rtol=0, atol=1e-14)


def test_series_and_ode_agree_on_samples():
    rng = np.random.default_rng(3)
    done = 0
    while done < 15:
        n = int(rng.integers(1, 4))
        orders = np.sort(rng.uniform(0.1, 0.95, n))
        if n > 1 and np.min(np.diff(orders)) < 1e-3:
            continue
        m = FractionalModel(tuple(orders), tuple(np.exp(rng.uniform(-1, 1, n))))
        lam, t = float(rng.uniform(0.5, 10.0)), float(rng.uniform(0.05, 1.0))
        try:
            a = eval_mode_detail(lam, m, t, TruncationPolicy(precision="double"), route="series")
        except (DomainError, NonConvergence):
            continue
        if a.error > 1e-8:
            continue
        b = eval_mode_detail(lam, m, t, route="ode")
        assert abs(a.value - b.value) <= a.error + b.error
        done += 1


def test_series_matches_frozen_oracle():
    import json
    from pathlib import Path

    doc = json.loads((Path(__file__).parent / "data" / "mlf_oracle.json").read_text())
    assert len(doc["records"]) == 100
    for rec in doc["records"]:
        value, _ = eval_multinomial_ml(MLParams(rec["theta0"], tuple(rec["thetas"])), rec["z"])
        assert abs(value - float(rec["value"])) <= 1e-10
