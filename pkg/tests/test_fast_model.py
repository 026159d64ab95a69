"""Discrete loop model: coefficients, fixed points, kernels, stability."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcmz import ConfigError, SystemParams, TraceError, validate
from dcmz.fast_model import (forward, forward_batch, gamma, rho_coeffs,
                             run_recurrence, run_recurrence_reference, step,
                             trace_to_csv)
from dcmz.masking import DriveSequence


def test_rho_identity_and_positivity_on_log_grid():
    # rho1 + rho2 = 1 - rho0 exactly; both responses stay positive
    for ratio in np.logspace(-3, 1, 200):
        rho = rho_coeffs(ratio, 1.0)
        assert rho.rho1 + rho.rho2 == pytest.approx(1.0 - rho.rho0, abs=1e-12)
        assert rho.rho1 > 0 and rho.rho2 > 0
        assert rho.kappa == pytest.approx(1.0 - rho.rho0, rel=0, abs=0)


def test_rho_paper_geometry_frozen_values(paper_params):
    # derived once from the closed forms at P_m = 20.82/400, T = 0.241
    rho = rho_coeffs(paper_params.P_m, paper_params.T)
    assert rho.rho0 == pytest.approx(0.8057553619232354, rel=0, abs=1e-15)
    assert rho.rho1 == pytest.approx(0.09362903339857571, rel=0, abs=1e-15)
    assert rho.rho2 == pytest.approx(0.10061560467818886, rel=0, abs=1e-15)


def test_rho_rejects_nonpositive_arguments():
    with pytest.raises(ConfigError):
        rho_coeffs(0.0, 1.0)
    with pytest.raises(ConfigError):
        rho_coeffs(1.0, -0.2)


def test_gamma_zero_at_quarter_wave_and_bounded(paper_params):
    # sin^2(pi/4) = 1/2: quiescent drive is neutral up to one rounding
    # of sin, |residue| <= beta * eps / 2
    assert abs(gamma(0.0, 0.0, paper_params)) < 1e-15
    vals = gamma(np.linspace(-2, 2, 101), 0.3, paper_params)
    assert np.max(np.abs(vals)) <= paper_params.beta / 2 + 1e-15


@given(st.floats(-0.4, 0.4))
@settings(max_examples=50, deadline=None)
def test_constant_gamma_fixed_point(gamma_value):
    # a* = rho0 a* + (rho1 + rho2) gamma has solution a* = gamma
    rho = rho_coeffs(0.05205, 0.241)
    assert step(gamma_value, gamma_value, gamma_value, rho) == pytest.approx(
        gamma_value, abs=1e-14)


def test_forward_batch_zero_drive_zero_history_stays_zero(small_params):
    # the quiescent fixed point sits within one gamma rounding of zero:
    # a* = (rho1 + rho2) gamma / (1 - rho0) = gamma, |gamma| <= beta * eps / 2
    a = forward_batch(np.zeros((2, 40)), small_params)
    assert np.max(np.abs(a)) < 1e-15


def test_forward_batch_matches_reference_loop_bitwise(small_params):
    rng = np.random.default_rng(4)
    z = rng.uniform(-np.pi / 2, np.pi / 2, (3, 64))
    zphi = z + small_params.phi
    history = rng.uniform(-0.2, 0.2, (small_params.N_m, 3))
    rho = rho_coeffs(small_params.P_m, small_params.T)
    beta = np.full(3, small_params.beta)
    fast = run_recurrence(zphi.T.copy(), history, rho, beta)
    ref = run_recurrence_reference(zphi.T.copy(), history, rho, beta)
    np.testing.assert_array_equal(fast, ref)


def test_forward_batch_per_member_beta_and_phi(small_params):
    rng = np.random.default_rng(9)
    z = rng.uniform(-1, 1, (2, 24))
    a = forward_batch(z, small_params, beta=np.array([0.8, 0.5]),
                      phi=np.array([np.pi / 4, np.pi / 3]))
    solo0 = forward_batch(z[:1], small_params, beta=0.8, phi=np.pi / 4)
    import dataclasses
    p2 = validate(dataclasses.replace(small_params, beta=0.5, phi=np.pi / 3))
    solo1 = forward_batch(z[1:], p2)
    np.testing.assert_array_equal(a[0], solo0[0])
    np.testing.assert_array_equal(a[1], solo1[0])


def test_forward_batch_rejects_non_finite_drive(small_params):
    z = np.zeros((1, 16))
    z[0, 3] = np.nan
    with pytest.raises(TraceError):
        forward_batch(z, small_params)


def test_forward_wraps_drive_consistency(small_params):
    # trace container mirrors the drive it was built from
    rng = np.random.default_rng(2)
    drive = DriveSequence(z=rng.uniform(-1, 1, 32),
                          period_index=np.repeat(np.arange(4), 8), N_m=8)
    trace = forward(drive, small_params)
    assert trace.a_bar.shape == (32,)
    row = forward_batch(drive.z[None, :], small_params)[0]
    np.testing.assert_array_equal(trace.a_bar, row)


def test_state_decays_from_random_history(small_params):
    # beta < 1 at phi = pi/4: free loop always falls back to zero. The
    # slow mode decays at (1 - beta) / (T + beta * D) per unit time, so
    # this short-loop geometry (D = 0.4164) needs ~100 periods for 1e-6;
    # the 50-period contract at full scale lives in the acceptance suite.
    rng = np.random.default_rng(7)
    history = rng.uniform(-0.1, 0.1, (small_params.N_m, 1))
    S = 120 * small_params.N_m
    a = forward_batch(np.zeros((1, S)), small_params, history=history.T)
    assert np.max(np.abs(a[0, -small_params.N_m:])) < 1e-6
    period_max = np.abs(a[0].reshape(120, small_params.N_m)).max(axis=1)
    assert np.all(np.diff(period_max[1:]) < 0)


def test_float32_path_runs_and_matches_loosely(small_params):
    rng = np.random.default_rng(13)
    z = rng.uniform(-1, 1, (1, 64))
    a64 = forward_batch(z, small_params)
    a32 = forward_batch(z, small_params, dtype=np.float32)
    assert a32.dtype == np.float32
    assert np.max(np.abs(a64 - a32)) < 1e-4


def test_trace_csv_layout(tmp_path, small_params):
    drive = DriveSequence(z=np.zeros(16), period_index=np.repeat(np.arange(2), 8), N_m=8)
    path = tmp_path / "trace.csv"
    trace_to_csv(path, forward(drive, small_params))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,period,mask_step,a_bar"
    assert len(lines) == 17
    assert lines[9].startswith("8,1,0,")
