import math

import pytest
from hypothesis import given, strategies as st

from twofold import (Method, PerturbationScale, RhoResult, Side, TwoFoldParams, dual_params,
                     rho_hysteresis_closed_form, vector_field)

positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("A,B", [(0, 1), (1, 0), (-1, 2), (math.nan, 1), (1, math.inf), ("1", 1)])
def test_params_reject_invalid(A, B):
    with pytest.raises(ValueError):
        TwoFoldParams(A, B)


def test_params_coerce_to_float():
    p = TwoFoldParams(2, 4)
    assert isinstance(p.A, float) and p.B == 4.0


def test_vector_field_normal_form():
    p = TwoFoldParams(2.0, 3.0)
    assert vector_field(p, Side.LEFT, 0.1, -0.5) == (1.0, 3.0)
    assert vector_field(p, Side.RIGHT, 0.1, -0.5) == (-0.5, 1.0)
    bumped = vector_field(p, Side.RIGHT, 0.1, -0.5, lambda s, x, y: (x, y * y))
    assert bumped == pytest.approx((-0.4, 1.25))


def test_closed_form_known_values():
    assert rho_hysteresis_closed_form(TwoFoldParams(2, 4)).value == pytest.approx(1 / 3, abs=1e-15)
    assert rho_hysteresis_closed_form(TwoFoldParams(1, 1)).value == 0.5
    assert rho_hysteresis_closed_form(TwoFoldParams(4, 1)).method is Method.HYSTERESIS


@given(positive, positive)
def test_dual_is_an_involution(A, B):
    p = TwoFoldParams(A, B)
    back = dual_params(dual_params(p))
    assert back.A == pytest.approx(A, rel=1e-12) and back.B == pytest.approx(B, rel=1e-12)


@given(positive, positive)
def test_closed_form_duality(A, B):
    p = TwoFoldParams(A, B)
    total = rho_hysteresis_closed_form(p).value + rho_hysteresis_closed_form(dual_params(p)).value
    assert total == pytest.approx(1.0, abs=1e-12)


@given(positive, positive, positive)
def test_closed_form_is_scale_free(A, B, c):
    # rho only depends on A/B
    a = rho_hysteresis_closed_form(TwoFoldParams(A, B)).value
    b = rho_hysteresis_closed_form(TwoFoldParams(A * c, B * c)).value
    assert a == pytest.approx(b, abs=1e-12)


def test_rho_result_validation():
    with pytest.raises(ValueError):
        RhoResult(1.5, Method.HYSTERESIS)
    with pytest.raises(ValueError):
        RhoResult(0.5, Method.NOISE_MC)  # sampled needs a stderr
    with pytest.raises(ValueError):
        RhoResult(0.5, Method.NOISE_PDE, standard_error=0.01)
    with pytest.raises(ValueError):
        RhoResult(0.5, Method.TIME_DELAY, eps_used=0.0)
    r = RhoResult(0.5, Method.TIME_DELAY, standard_error=0.01, empirical=True)
    assert r.is_sampled


def test_perturbation_scale_validation():
    with pytest.raises(ValueError):
        PerturbationScale(0.0)
    with pytest.raises(ValueError):
        PerturbationScale(0.6)
    with pytest.raises(ValueError):
        PerturbationScale(1e-3, y_star=-1)
    assert PerturbationScale(1e-3).x_star == 0.5
