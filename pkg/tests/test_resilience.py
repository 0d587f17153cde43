import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resiltrack.dynamics import CwParams, cw_matrix, default_layout, split_layout
from resiltrack.input_geometry import ConvexPolygon2, disc_polygon
from resiltrack.resilience import (
    GAIN_SIGNS,
    InfeasibleGainsError,
    constrained_controllability_check,
    certificate,
    design_gains,
    log_norm,
    lyapunov_solve,
    reach_radius_bound,
    resilience_verdict,
    spectral_data,
)

P_PUBLISHED = np.array(
    [[2.77, 0, 1.77, 0.01], [0, 2.77, -0.01, 1.77], [1.77, -0.01, 8, 0], [0.01, 1.77, 0, 8]]
)


def test_log_norm_of_cw(params):
    # the symmetric part has top eigenvalue 1/2 + 3/2 Omega^2
    assert log_norm(cw_matrix(params)) == pytest.approx(0.5 + 1.5 * params.omega**2, rel=1e-12)


def test_spectral_data_of_cw(params):
    sd = spectral_data(cw_matrix(params))
    assert np.allclose(np.sort(np.abs(sd.eigenvalues.imag)), [0, 0, params.omega, params.omega])
    assert sd.real_eigs == (0.0,)
    v = sd.real_eigenvectors[0]
    expect = np.array([2 * params.omega, 0, 0, 1.0])
    assert np.allclose(v, expect / np.linalg.norm(expect))


def test_thruster_4_resilient(params):
    rep = resilience_verdict(params, default_layout(), 4, 0.0)
    assert rep.resilient
    assert rep.rho_max == pytest.approx(np.sqrt(2) - 1, abs=1e-12)
    assert [c["name"] for c in rep.conditions] == ["spectrum", "rank", "eigenvector"]


@pytest.mark.parametrize("i", [1, 2, 3, 5])
def test_other_thrusters_not_resilient(params, i):
    rep = resilience_verdict(params, default_layout(), i, 0.0)
    assert not rep.resilient
    assert rep.rho_max <= 1e-12
    assert not rep.tracking_feasible


def test_stabilizable_mode_relaxes_spectrum(params):
    A = cw_matrix(params) - 0.1 * np.eye(4)
    assert not constrained_controllability_check(A, disc_polygon(0.4), "controllable").passed
    assert constrained_controllability_check(A, disc_polygon(0.4), "stabilizable").passed


def test_rank_fails_without_position_coupling():
    v = constrained_controllability_check(-np.eye(4), disc_polygon(1.0), "stabilizable")
    assert not [c for c in v.conditions if c["name"] == "rank"][0]["passed"]


def test_constrained_controllability_fails_for_one_sided_input(params):
    half = ConvexPolygon2.from_points(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    v = constrained_controllability_check(cw_matrix(params), half)
    assert not v.passed
    assert not [c for c in v.conditions if c["name"] == "eigenvector"][0]["passed"]


def test_constrained_controllability_double_integrator():
    v = constrained_controllability_check(cw_matrix(CwParams(omega=0.0)), disc_polygon(0.4))
    assert v.passed


def test_constrained_controllability_requires_origin(params):
    off = ConvexPolygon2.from_points(np.array([[1.0, 1.0], [2.0, 1.0], [1.0, 2.0]]))
    with pytest.raises(ValueError):
        constrained_controllability_check(cw_matrix(params), off)


def test_reach_radius_bound_limits():
    assert reach_radius_bound(1.0, -1.0, np.log(2)) == pytest.approx(0.5)
    assert reach_radius_bound(2.0, 0.0, 3.0) == pytest.approx(6.0)
    assert reach_radius_bound(2.0, 1e-12, 3.0) == pytest.approx(6.0, rel=1e-9)
    with pytest.raises(ValueError):
        reach_radius_bound(1.0, 1.0, -1.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-1.0, 1.0)), st.floats(0.5, 3.0))
def test_lyapunov_round_trip(M, shift):
    # shift the spectrum into the open left half plane
    At = M - (np.max(np.linalg.eigvals(M).real) + shift) * np.eye(4)
    Q = np.eye(4) + 0.1 * np.ones((4, 4))
    P = lyapunov_solve(At, Q)
    assert np.allclose(P, P.T)
    assert np.all(np.linalg.eigvalsh(P) > 0)
    assert np.max(np.abs(At.T @ P + P @ At + Q)) <= 1e-8


def test_lyapunov_rejects_unstable():
    with pytest.raises(ValueError, match="Hurwitz"):
        lyapunov_solve(np.eye(4), np.eye(4))


def test_certificate_published_values(params, layout4):
    g = certificate(params, layout4, 472.0, 0.1, 0.2)
    assert np.max(np.abs(g.P - P_PUBLISHED)) <= 0.01
    assert g.epsilon == pytest.approx(0.4133, abs=1e-3)
    assert g.tolerance == pytest.approx(1.5e-4, abs=0.1e-4)
    assert np.array_equal(g.K, 472.0 * GAIN_SIGNS)
    assert np.all(g.closed_loop_eigs.real < 0)


def test_certificate_grows_with_delay(params, layout4):
    e = [certificate(params, layout4, 472.0, 0.1, tau).epsilon for tau in (0.2, 1.0, 5.0)]
    assert e[0] < e[1] < e[2]


def test_design_gains_recovers_published_gain(params, layout4):
    g = design_gains(params, layout4, 4.85e-4, 0.1, 0.2)
    assert g.k == pytest.approx(472.0, rel=0.01)
    assert g.epsilon + 4.85e-4 <= np.sqrt(2) - 1 + 1e-12


def test_design_gains_explicit_k(params, layout4):
    g = design_gains(params, layout4, 0.3, 0.1, 0.2, k=100.0)
    assert g.k == 100.0


def test_design_gains_infeasible(params, layout4):
    with pytest.raises(InfeasibleGainsError):
        design_gains(params, layout4, 0.3, 0.1, 0.2)
    with pytest.raises(InfeasibleGainsError):
        design_gains(params, split_layout(default_layout(), 1), 0.0, 0.1, 0.2)
