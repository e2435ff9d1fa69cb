import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twofold import Method, Outcome, PerturbationScale, TwoFoldParams, dual_params
from twofold._ensemble import GroupNoise, block_rng, group_blocks
from twofold.noise import (BLOWUP, BlowupExponents, McConfig, PdeGrid, PwcDrift, blowup_inverse,
                           blowup_transform, check_time_symmetry_lemma, pwc_limit_weights,
                           rho_noise_pde, simulate_pwc_sde, simulate_reduced_sde,
                           simulate_unreduced_sde, solve_Q_pde, tail_flatness)

COARSE = PdeGrid(du=0.04, dr=0.02)

# Frozen default-grid PDE values.
RHO_PDE = {(1, 2): 0.4156, (10, 2): 0.44611, (0.05, 0.5): 0.53921}


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(finite, finite, finite, st.floats(1e-8, 0.5))
def test_blowup_roundtrip(x, y, t, eps):
    back = blowup_inverse(*blowup_transform(x, y, t, eps), eps)
    np.testing.assert_allclose(back, (x, y, t), rtol=1e-12, atol=1e-300)


def test_blowup_exponents_fixed():
    assert (BLOWUP.lambda1, BLOWUP.lambda2, BLOWUP.lambda3) == (4 / 3, 2 / 3, 2 / 3)
    with pytest.raises(ValueError):
        BlowupExponents(1.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        blowup_transform(1, 1, 1, 0.0)


def test_grid_resolution_and_validation():
    g = PdeGrid(u_max=3, r_min=-2, r_max=1, du=0.07, dr=0.04)
    assert g.du_eff <= 0.07 and g.u_max / g.du_eff == pytest.approx(g.half_cells)
    assert g.u()[g.interface] == 0.0 and g.u()[-1] == pytest.approx(3)
    assert g.r()[0] == -2 and g.r()[-1] == pytest.approx(1)
    for bad in (dict(u_max=-1), dict(du=0), dict(r_min=1), dict(r_max=-1), dict(u_max=1, du=0.6)):
        with pytest.raises(ValueError):
            PdeGrid(**bad)
    with pytest.raises(ValueError):
        PdeGrid().n_u


def test_auto_bounds_stretch_for_small_a():
    base = PdeGrid().resolved(TwoFoldParams(1, 1))
    assert (base.u_max, base.r_min, base.r_max) == (12, -8, 12)
    wide = PdeGrid().resolved(TwoFoldParams(0.05, 2))
    assert wide.r_min < -8 and wide.u_max >= 12 and wide.r_max > 12


@pytest.mark.parametrize("A", [0.5, 1, 2, 3])
def test_identity_for_b_equal_a_squared(A):
    field_ = solve_Q_pde(TwoFoldParams(A, A * A))
    assert np.max(np.abs(field_.q0 - 1 / (1 + A))) <= 1e-2


def test_identity_error_shrinks_with_refinement():
    p = TwoFoldParams(2, 4)
    errs = [np.max(np.abs(solve_Q_pde(p, PdeGrid(du=d, dr=d / 2)).q0 - 1 / 3))
            for d in (0.04, 0.02)]
    assert errs[1] < errs[0]


def test_q_field_is_a_probability_and_monotone_in_u():
    f = solve_Q_pde(TwoFoldParams(1, 2), COARSE)
    assert f.values.min() >= 0 and f.values.max() <= 1
    assert np.all(np.diff(f.final) >= -1e-10)
    assert f.final[0] < 0.01 and f.final[-1] > 0.99
    assert f.at_interface(f.r_all[-1]) == f.q0[-1]
    assert tail_flatness(f) < 1e-3


def test_pde_duality():
    for A, B in ((2, 4), (1, 2), (3, 1)):
        p = TwoFoldParams(A, B)
        a = rho_noise_pde(p, COARSE).value
        b = rho_noise_pde(dual_params(p), COARSE).value
        assert a + b == pytest.approx(1, abs=0.01)


@pytest.mark.parametrize("ab", sorted(RHO_PDE))
def test_pde_frozen_values(ab):
    r = rho_noise_pde(TwoFoldParams(*ab))
    assert r.method is Method.NOISE_PDE and r.converged
    assert r.value == pytest.approx(RHO_PDE[ab], abs=2e-4)


def test_pde_special_value_a_one():
    for A in (0.25, 4):
        assert rho_noise_pde(TwoFoldParams(A, 1), COARSE).value == pytest.approx(0.5, abs=0.01)


def test_pde_reports_unconverged_tail():
    r = rho_noise_pde(TwoFoldParams(0.05, 2), PdeGrid(u_max=6, r_min=-4, r_max=0.5,
                                                     du=0.05, dr=0.05))
    assert not r.converged


def test_mc_config_validation():
    for bad in (dict(n_paths=0), dict(dt=0), dict(s_min=1), dict(seed=-1),
                dict(classify="x"), dict(substeps=3)):
        with pytest.raises(ValueError):
            McConfig(**bad)


def test_mc_matches_pde_at_light_n():
    p = TwoFoldParams(2, 4)
    mc = simulate_reduced_sde(p, McConfig(n_paths=20_000, dt=2e-3, seed=3))
    assert mc.standard_error == pytest.approx(math.sqrt(mc.value * (1 - mc.value) / 20_000))
    assert abs(mc.value - 1 / 3) <= max(0.01, 3 * mc.standard_error) + 0.01


def test_mc_worker_count_does_not_change_result():
    p, cfg = TwoFoldParams(1, 2), McConfig(n_paths=12_000, dt=4e-3, seed=11)
    a = simulate_reduced_sde(p, cfg, workers=1)
    b = simulate_reduced_sde(p, cfg, workers=3)
    assert a.value == b.value


def test_mc_exit_classification_agrees_with_final():
    p = TwoFoldParams(1, 1)
    a = simulate_reduced_sde(p, McConfig(n_paths=8000, dt=4e-3, seed=2))
    b = simulate_reduced_sde(p, McConfig(n_paths=8000, dt=4e-3, seed=2, classify="exit",
                                         u_bound=20))
    assert abs(a.value - b.value) <= 0.02


def test_substeps_refine_the_same_paths():
    p = TwoFoldParams(1, 2)
    vals = [simulate_reduced_sde(p, McConfig(n_paths=8000, dt=0.02, seed=4, substeps=s)).value
            for s in (1, 4)]
    # same Brownian paths: the change is a discretization effect, far below sampling noise
    assert abs(vals[0] - vals[1]) < 0.02


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 40), st.integers(1, 8))
def test_group_blocks_partition(n_blocks, workers):
    groups = group_blocks(n_blocks, workers)
    assert len(groups) <= workers
    assert [b for g in groups for b in g] == list(range(n_blocks))


def test_group_noise_matches_block_streams():
    noise = GroupNoise(9, [0, 1], [3, 2], chunk=4)
    z = noise.next_chunk()
    assert z.shape == (4, 5)
    np.testing.assert_array_equal(z[:, :3], block_rng(9, 0).standard_normal((4, 3)))
    np.testing.assert_array_equal(z[:, 3:], block_rng(9, 1).standard_normal((4, 2)))


def test_pwc_limit_weights_exact():
    assert pwc_limit_weights(PwcDrift(-1, 2)) == (1 / 3, 2 / 3)
    for bad in ((1, 2), (-1, -0.5), (-math.inf, 1)):
        with pytest.raises(ValueError):
            PwcDrift(*bad)


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, -0.01), st.floats(0.01, 50))
def test_pwc_weights_properties(a, b):
    wl, wr = pwc_limit_weights(PwcDrift(a, b))
    assert wl + wr == pytest.approx(1)
    mirrored = pwc_limit_weights(PwcDrift(-b, -a))
    assert mirrored[0] == pytest.approx(wr) and mirrored[1] == pytest.approx(wl)


def test_pwc_sde_light():
    frac, se = simulate_pwc_sde(PwcDrift(-1, 2), 0.02, 1.0, 10_000)
    assert abs(frac - 2 / 3) <= 0.02 + 3 * se


def test_time_symmetry_light():
    prob, se = check_time_symmetry_lemma(2.0, 2.0, 10_000, seed=1, dt=4e-3)
    assert abs(prob - 0.5) <= 3 * se
    prob, se = check_time_symmetry_lemma(2.0, 2.0, 10_000, seed=1, dt=4e-3,
                                         bump=lambda s: 1 + math.exp(-s * s))
    assert abs(prob - 0.5) <= 3 * se


def test_unreduced_path_escapes():
    scale = PerturbationScale(1e-3)
    trace = []
    res = simulate_unreduced_sde(TwoFoldParams(2, 4), scale, -0.05, dt=1e-4, seed=1, trace=trace)
    assert res.outcome in (Outcome.HEADS_LEFT, Outcome.HEADS_RIGHT)
    assert abs(trace[-1][1]) >= 0.5 and len(trace) > 10
    with pytest.raises(ValueError):
        simulate_unreduced_sde(TwoFoldParams(2, 4), scale, -0.05, ((0, 0), (0, 1)))


def test_r_min_doubling_is_harmless():
    p = TwoFoldParams(1, 2)
    a = rho_noise_pde(p).value
    b = rho_noise_pde(p, PdeGrid(r_min=-16)).value
    assert abs(a - b) < 1e-6
