import numpy as np
import pytest
from scipy.linalg import expm

from resiltrack.dynamics import CwParams, cw_matrix
from resiltrack.reference import (
    REF_COLUMNS,
    KosViolation,
    Mission,
    ReferenceTrajectory,
    build_reference,
    gramian,
    hold_thrust,
    input_matrix,
    kos_check,
    min_energy_transfer,
    resample,
    waypoint_states,
)


@pytest.fixture(scope="module")
def ref(params):
    return build_reference(params, Mission(), dt=1.0)


def augmented_step(params, dt):
    """ZOH step matrices from a generic matrix exponential."""
    M = np.zeros((6, 6))
    M[:4, :4] = cw_matrix(params)
    M[:4, 4:] = input_matrix(params)
    E = expm(M * dt)
    return E[:4, :4], E[:4, 4:]


def test_reference_layout(ref):
    m = Mission()
    assert ref.t[-1] == pytest.approx(m.duration)
    assert ref.t[-1] == pytest.approx(27000.0)
    assert ref.X.shape == (len(ref.t), 4)
    assert ref.p.shape == (len(ref.t), 2)


def test_reference_repropagates_within_a_micrometre(params, ref):
    Phi, G = augmented_step(params, ref.dt)
    X = np.empty_like(ref.X)
    X[0] = ref.X[0]
    for k in range(len(ref.t) - 1):
        X[k + 1] = Phi @ X[k] + G @ ref.p[k]
    assert np.max(np.linalg.norm(X[:, :2] - ref.X[:, :2], axis=1)) <= 1e-6


def test_reference_hits_waypoints(params, ref):
    m = Mission()
    S = waypoint_states(params, m)
    idx = np.rint(m.waypoint_times() / ref.dt).astype(int)
    assert np.max(np.abs(ref.X[idx] - S)) <= 1e-6


def test_reference_clears_keep_out_zone(ref):
    d, violated = kos_check(ref, 50.0)
    assert not violated
    assert d >= 55.0 - 1e-6


def test_reference_starts_and_ends_at_rest(ref):
    assert np.allclose(ref.X[0], [0, 80, 0, 0])
    assert np.allclose(ref.X[-1], [0, 80, 0, 0], atol=1e-6)


def test_rest_interior_waypoints_need_large_input(params):
    r = build_reference(params, Mission(rest_at_waypoints=True), dt=10.0)
    assert r.rho_ref > 1.0


def test_csv_round_trip(tmp_path, ref):
    path = tmp_path / "ref.csv"
    ref.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(REF_COLUMNS)
    back = ReferenceTrajectory.from_csv(path)
    assert np.array_equal(back.X, ref.X)
    assert np.array_equal(back.p, ref.p)
    assert back.rho_ref == ref.rho_ref


def test_rho_ref_accel(params, ref):
    assert ref.rho_ref_accel(params) == pytest.approx(params.thrust_ratio_r * ref.rho_ref)


def test_min_energy_transfer_reaches_goal(params):
    x0 = np.array([0.0, 80.0, 0.0, 0.0])
    xg = np.array([10.0, 90.0, 0.0, 0.0])
    leg = min_energy_transfer(params, x0, xg, 2000.0, 10.0)
    assert np.allclose(leg.X[-1], xg, atol=1e-6)
    assert np.allclose(leg.input_at(leg.t), leg.p)


def test_gramian_is_symmetric_positive(params):
    W = gramian(params, 1000.0)
    assert np.allclose(W, W.T)
    assert np.all(np.linalg.eigvalsh(W) > 0)


def test_hold_thrust_is_equilibrium(params):
    X = np.array([30.0, 70.0, 0.0, 0.0])
    p = hold_thrust(params, X)
    assert np.allclose(cw_matrix(params) @ X + input_matrix(params) @ p, 0.0, atol=1e-18)
    assert np.allclose(hold_thrust(params, np.array([0.0, 80.0, 0, 0])), 0.0)


def test_resample_keeps_endpoints(params, ref):
    r2 = resample(ref, params, 2.0)
    assert r2.t[-1] == ref.t[-1]
    assert np.allclose(r2.X[0], ref.X[0])


def test_kos_violation_raised(params):
    m = Mission(waypoints=((0.0, 80.0), (-80.0, 0.0)), transfer_time=1500.0, initial_hold=0.0)
    with pytest.raises(KosViolation):
        build_reference(params, m, dt=10.0)


def test_dt_must_divide_times(params):
    with pytest.raises(ValueError):
        build_reference(params, Mission(), dt=7.0)


def test_explicit_waypoint_velocities_respected(params):
    v = ((0.0, 0.1), (0.0, 0.0), (0.0, -0.1))
    S = waypoint_states(params, Mission(waypoint_velocities=v))
    assert np.allclose(S[1:4, 2:], np.array(v))


def test_double_integrator_reference():
    r = build_reference(CwParams(omega=0.0), Mission(), dt=10.0)
    assert np.isfinite(r.rho_ref)
