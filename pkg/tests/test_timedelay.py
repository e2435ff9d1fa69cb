import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twofold import Outcome, PerturbationScale, Side, TwoFoldParams, dual_params
from twofold.timedelay import (BracketError, SwitchDomainError, backward_sequence,
                               classify_start, critical_values, default_k, find_y1,
                               find_y1_bracket, find_y1_tilde, forward_switch_sequence,
                               rho_timedelay, rho_timedelay_empirical, simulate_delayed_orbit)

P11 = TwoFoldParams(1, 1)

# Frozen regression value of y1/eps at (1, 1), depth 12.
Y1_OVER_EPS_11 = -0.3026347206911038

# Frozen values of the recursion at eps = 1e-4 and the default k.
RHO_TD = {(1, 1): 0.49999975, (1, 2): 0.41821869, (2, 1): 0.80144375,
          (2, 4): 0.65462155, (3, 0.5): 0.92777805}


def test_forward_first_step_by_hand():
    eps = 1e-3
    seq = forward_switch_sequence(P11, -eps / 4, eps, 5)
    assert seq.x[0] == pytest.approx(2.5e-7, rel=1e-12)
    assert seq.z[0] == pytest.approx(7.5e-4, rel=1e-12)
    assert seq.T[0] == pytest.approx(5e-4, rel=1e-12)
    assert seq.S[0] == pytest.approx(5e-4, rel=1e-12)
    # second step on the left: T_2 from the even-k root, then S_2 = eps - S_1 + T_2
    x1, z1, s1 = seq.x[0], seq.z[0], seq.S[0]
    t2 = math.sqrt(z1 * z1 + 2 * x1) - z1
    assert seq.T[1] == pytest.approx(t2, rel=1e-12)
    assert seq.S[1] == pytest.approx(eps - s1 + t2, rel=1e-12)
    assert seq.x[1] == pytest.approx(x1 - z1 * s1 - 0.5 * s1 * s1, rel=1e-12)


def test_forward_domain_error():
    with pytest.raises(SwitchDomainError):
        forward_switch_sequence(P11, -1e-3, 1e-3, 5)


@pytest.mark.parametrize("z0,K", [(1e-4, 5), (-1e-1, 5), (-1e-4, 1)])
def test_forward_rejects_bad_input(z0, K):
    with pytest.raises(ValueError):
        forward_switch_sequence(P11, z0, 1e-3, K)


def test_y1_regression_constant():
    for eps in (1e-3, 1e-4, 1e-5):
        assert find_y1(P11, eps) / eps == pytest.approx(Y1_OVER_EPS_11, abs=1e-9)


@pytest.mark.parametrize("A,B", [(1, 2), (2, 1), (2, 4), (0.5, 3)])
def test_scaling_collapse(A, B):
    p = TwoFoldParams(A, B)
    vals = [find_y1(p, eps) / eps for eps in (1e-3, 1e-4, 1e-5)]
    assert max(vals) - min(vals) <= 1e-2 * abs(vals[0])


def test_depth_doubling_is_stable():
    p = TwoFoldParams(1, 2)
    eps = 1e-5
    a = find_y1(p, eps, depth=8) / eps
    b = find_y1(p, eps, depth=16) / eps
    assert abs(a - b) < 1e-3


@settings(max_examples=15, deadline=None)
@given(st.floats(0.25, 4), st.floats(0.25, 4))
def test_y1_small_and_negative(A, B):
    y1 = find_y1(TwoFoldParams(A, B), 1e-4)
    assert -10 * 1e-4 < y1 < 0


def test_alternation_at_y1_and_failure_nearby():
    p, eps, depth = TwoFoldParams(1, 2), 1e-4, 12
    crit = find_y1_bracket(p, eps, depth)
    assert crit.lower <= crit.value <= crit.upper
    assert classify_start(p, crit.value, eps, depth) == (0, depth)
    off = 1e3 * crit.width
    below, _ = classify_start(p, crit.value - off, eps, depth)
    above, _ = classify_start(p, crit.value + off, eps, depth)
    assert (below, above) == (-1, 1)


def test_brackets_nest_and_shrink():
    p, eps = TwoFoldParams(2, 1), 1e-4
    prev = None
    for depth in (6, 8, 10, 12):
        c = find_y1_bracket(p, eps, depth)
        if prev is not None:
            assert prev.lower <= c.lower and c.upper <= prev.upper
            assert c.width < prev.width
        prev = c


def test_bracket_errors():
    with pytest.raises(ValueError):
        find_y1_bracket(P11, 1e-4, depth=3)
    with pytest.raises(BracketError):
        find_y1_bracket(P11, 1e-4, bracket=1e-9, retries=0)


def test_delayed_orbit_outcome_flips_at_y1():
    # independent oracle: direct simulation changes outcome across y1
    scale = PerturbationScale(1e-4)
    for A, B in ((1, 1), (1, 2), (2, 1)):
        p = TwoFoldParams(A, B)
        y1 = find_y1(p, scale.eps)
        below = simulate_delayed_orbit(p, scale, y1 * 1.01).outcome
        above = simulate_delayed_orbit(p, scale, y1 * 0.99).outcome
        assert (below, above) == (Outcome.HEADS_LEFT, Outcome.HEADS_RIGHT)


def test_y1_tilde_self_dual_and_dual_rescaling():
    eps = 1e-4
    assert find_y1_tilde(P11, eps) == find_y1(P11, eps)
    p = TwoFoldParams(2, 4)
    assert find_y1_tilde(p, eps) == pytest.approx(4 * find_y1(TwoFoldParams(0.5, 0.25), eps),
                                                  rel=1e-12)
    # applying the map to the dual system undoes the rescaling
    assert find_y1_tilde(dual_params(p), eps) == pytest.approx(find_y1(p, eps) / 4, rel=1e-12)


def test_y1_tilde_is_the_mirror_critical_start():
    # the mirror critical orbit starts on the left half-system; its rescaled dual start
    # divides left and right outcomes of the dual, delayed system at delay B * eps
    p, eps = TwoFoldParams(2, 4), 1e-4
    d = dual_params(p)
    y1d = find_y1(d, p.B * eps)
    assert find_y1_tilde(p, eps) == pytest.approx(y1d, rel=1e-6)


def test_backward_y2_formula():
    eps = 1e-4
    crit = critical_values(P11, eps)
    seq = backward_sequence(P11, eps, crit, 3)
    want = -(2 + math.sqrt(crit.y1_tilde ** 2 / eps ** 2 + 2)) * eps
    assert seq[2] == pytest.approx(want, rel=1e-12)
    assert seq[1] == crit.y1


@pytest.mark.parametrize("A,B", [(1, 1), (2, 4), (0.5, 3), (4, 0.25)])
def test_backward_strictly_decreasing_with_linear_spacing(A, B):
    p, eps = TwoFoldParams(A, B), 1e-4
    seq = backward_sequence(p, eps, critical_values(p, eps), 4001)
    assert np.all(np.diff(seq.ys[:200]) < 0)
    assert np.all(np.diff(seq.ys) < 0)
    # far out, two steps lower y by a fixed multiple of eps
    step = (A + B) * (1 + A) / A * eps
    assert (seq[3999] - seq[4001]) == pytest.approx(step, rel=1e-3)


def test_backward_requires_matching_eps():
    crit = critical_values(P11, 1e-4)
    with pytest.raises(ValueError):
        backward_sequence(P11, 1e-5, crit, 5)


def test_default_k_reaches_level():
    p, eps = TwoFoldParams(2, 4), 1e-4
    k = default_k(p, eps)
    assert k % 2 == 1
    seq = backward_sequence(p, eps, critical_values(p, eps), k)
    assert seq[k] <= -0.1 + 5 * eps


@pytest.mark.parametrize("ab", sorted(RHO_TD))
def test_rho_timedelay_frozen(ab):
    assert rho_timedelay(TwoFoldParams(*ab)).value == pytest.approx(RHO_TD[ab], abs=1e-7)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.25, 4), st.floats(0.25, 4))
def test_rho_timedelay_duality(A, B):
    p = TwoFoldParams(A, B)
    assert rho_timedelay(p).value + rho_timedelay(dual_params(p)).value == pytest.approx(1, abs=0.01)


def test_rho_timedelay_rejects_even_k():
    with pytest.raises(ValueError):
        rho_timedelay(P11, k=10)


def test_delayed_orbit_trace_switches_after_delay():
    scale = PerturbationScale(1e-3)
    trace = []
    res = simulate_delayed_orbit(P11, scale, -0.3, trace=trace)
    assert trace[0][4] == "start" and trace[-1][4] == "exit"
    crossings = [row[0] for row in trace if row[4] == "cross"]
    switches = [row[0] for row in trace if row[4] == "switch"]
    # first switch is the pending one at t = eps, then each follows a crossing by eps
    assert switches[0] == pytest.approx(1e-3)
    np.testing.assert_allclose(switches[1:], np.array(crossings[:len(switches) - 1]) + 1e-3,
                               rtol=0, atol=1e-15)
    assert res.n_switches == len(switches)
    assert abs(res.x) == 0.5
    for row in trace:
        if row[4] == "cross":
            assert row[1] == 0.0


def test_delayed_orbit_rejects_positive_start():
    with pytest.raises(ValueError):
        simulate_delayed_orbit(P11, PerturbationScale(1e-3), 0.2)


def test_delayed_ensemble_symmetric_case():
    r = rho_timedelay_empirical(P11, PerturbationScale(1e-3), 2000)
    assert abs(r.value - 0.5) <= 0.02
    assert r.empirical and r.standard_error > 0


@pytest.mark.slow
def test_recursion_matches_delayed_ensemble_at_2_4():
    p = TwoFoldParams(2, 4)
    emp = rho_timedelay_empirical(p, PerturbationScale(1e-3), 2000).value
    assert abs(emp - rho_timedelay(p).value) <= 0.03
