import numpy as np
import pytest
from scipy.integrate import solve_ivp

from resiltrack.controller import (
    BufferUnderrun,
    ControllerBuffers,
    DelayBuffer,
    LinearReference,
    StabilizerSignal,
    allocate,
    allocation_data,
    demo_system,
    feedback_law,
    finite_time_stabilizer,
    linear_demo,
    open_loop_delayed,
    predict_state,
    simulate_linear,
)
from resiltrack.disturbance import DisturbanceSpec, sample_signal
from resiltrack.dynamics import CwParams, StateVec, cw_matrix, step_exact
from resiltrack.reference import BHAT, SteeringError
from resiltrack.resilience import certificate, log_norm, reach_radius_bound
from resiltrack.sim import Scenario, run_scenario, scenario_reference


def test_delay_buffer_lookup_and_underrun():
    b = DelayBuffer(0.1, 4, 1)
    for k in range(6):
        b.push(0.1 * k, [k])
    assert b.at(0.5)[0] == 5
    assert b.at(0.2)[0] == 2
    with pytest.raises(BufferUnderrun, match="buffer underrun"):
        b.at(0.1)
    with pytest.raises(BufferUnderrun):
        b.at(0.6)
    with pytest.raises(ValueError):
        b.push(0.75, [0])


def test_delay_buffer_empty():
    with pytest.raises(BufferUnderrun):
        DelayBuffer(1.0, 3, 2).at(0.0)


def test_predict_state_zero_delay(params, layout4):
    buf = ControllerBuffers(0.1, 0.0)
    x = np.array([1.0, 80.0, 0.1, 0.0])
    buf.X.push(0.0, x)
    assert np.array_equal(predict_state(params, buf, 0.0, 0.0, layout4.c_fail), x)


def test_predict_state_underrun(params, layout4):
    buf = ControllerBuffers(0.1, 0.5)
    buf.X.push(0.0, np.zeros(4))
    with pytest.raises(BufferUnderrun):
        predict_state(params, buf, 0.0, 0.5, layout4.c_fail)


def test_feedback_rows_zero(params, layout4, rng):
    g = certificate(params, layout4, 472.0, 0.1, 0.2)
    for _ in range(1000):
        out = feedback_law(
            0.0, rng.normal(size=4), rng.normal(size=4), rng.normal(size=2), rng.uniform(), g, rng.uniform(-4, 4), layout4
        )
        assert out[0] == 0.0 and out[1] == 0.0


def test_feedback_trivial(params, layout4):
    g = certificate(params, layout4, 472.0, 0.1, 0.2)
    X = np.array([3.0, 70.0, 0.01, 0.0])
    th = 1.1
    out = feedback_law(0.0, X, X, [0.2, -0.1], 0.0, g, th, layout4)
    c, s = np.cos(th), np.sin(th)
    assert np.allclose(out[2:], [c * 0.2 + s * -0.1, -s * 0.2 + c * -0.1])


def test_allocate_examples(layout4):
    w = 0.3
    u, sat = allocate([np.sqrt(2) * w, 0.0], layout4.b_ctrl)
    assert not sat
    assert np.allclose(u, [w / np.sqrt(2), w / np.sqrt(2), 0, 0])
    u, sat = allocate([0.0, 0.0], layout4.b_ctrl)
    assert not sat and np.all(u == 0)


def test_allocate_saturated_is_closest_point(layout4):
    B2, poly = allocation_data(layout4.b_ctrl)
    u, sat = allocate([3.0, 0.0], layout4.b_ctrl)
    assert sat
    assert np.all((u >= 0) & (u <= 1))
    # dense oracle over the box
    g = np.linspace(0, 1, 21)
    U = np.stack(np.meshgrid(g, g, g, g, indexing="ij"), -1).reshape(-1, 4)
    d = np.linalg.norm(U @ B2.T - [3.0, 0.0], axis=1)
    assert np.linalg.norm(B2 @ u - [3.0, 0.0]) <= d.min() + 1e-9
    assert np.allclose(B2 @ u, [2.0, 0.0])


def grid_oracle_cost(target, B2):
    """Min sum of levels over a two-stage grid on (u3, u5); u1, u2 then follow."""
    tx, ty = target

    def best(g3, g5):
        u3, u5 = np.meshgrid(g3, g5, indexing="ij")
        # rows: x = u1 + u2 - u3 - u5, y = u1 - u2 - u3 + u5
        u1 = 0.5 * (tx + ty) + u3
        u2 = 0.5 * (tx - ty) + u5
        ok = (u1 >= -1e-12) & (u1 <= 1 + 1e-12) & (u2 >= -1e-12) & (u2 <= 1 + 1e-12)
        cost = np.where(ok, u1 + u2 + u3 + u5, np.inf)
        i = np.unravel_index(np.argmin(cost), cost.shape)
        return cost[i], u3[i], u5[i]

    g = np.linspace(0, 1, 101)
    c, a, b = best(g, g)
    f3 = np.clip(np.arange(a - 0.02, a + 0.02, 1e-4), 0, 1)
    f5 = np.clip(np.arange(b - 0.02, b + 0.02, 1e-4), 0, 1)
    return min(c, best(f3, f5)[0])


def test_allocation_matches_grid_oracle(layout4, rng):
    B2, _ = allocation_data(layout4.b_ctrl)
    assert np.allclose(B2, [[1, 1, -1, -1], [1, -1, -1, 1]])
    for _ in range(1000):
        tgt = B2 @ rng.uniform(0, 1, 4)
        u, sat = allocate(tgt, layout4.b_ctrl)
        assert not sat
        assert np.allclose(B2 @ u, tgt, atol=1e-9)
        assert abs(u.sum() - grid_oracle_cost(tgt, B2)) <= 1e-3


def python_loop(params, layout, gains, Xref, pref, w, tau, dt, X0, n_steps, quad, c_fail):
    """Step-by-step controller built from the public functions."""
    N = int(round(tau / dt))
    buf = ControllerBuffers(dt, tau)
    X = X0.copy()
    out = [X]
    c2 = c_fail[2:]
    for n in range(n_steps + 1):
        t = n * dt
        th = np.arctan2(X[1], X[0])
        buf.X.push(t, X)
        buf.theta.push(t, [th])
        buf.w.push(t, [w[n]])
        win = min(n, N) * dt
        Xp = predict_state(params, buf, t, win, c_fail, quad)
        wd = w[n - N] if n >= N else 0.0
        tgt = feedback_law(t, Xp, Xref[n], pref[n], wd, gains, th, layout)
        u, _ = allocate(tgt, layout.b_ctrl)
        bu = layout.b_ctrl[2:] @ u
        buf.bu.push(t, bu)
        if n == n_steps:
            break
        X = step_exact(params, X, th, np.r_[0.0, 0.0, bu + c2 * w[n]], dt).as_array()
        out.append(X)
    return np.array(out)


@pytest.mark.parametrize("quad,tau", [("zoh", 0.2), ("zoh", 0.5), ("trapezoid", 0.3)])
def test_compiled_loop_matches_python_loop(params, layout4, short_mission, quad, tau):
    scn = Scenario(
        tau=tau,
        mission=short_mission,
        predictor=quad,
        disturbance=DisturbanceSpec("lipschitz", 0.1, 1.0, 7),
        x0_offset=(0.02, -0.01, 1e-4, -2e-4),
    )
    trace, _ = run_scenario(scn)
    ref = scenario_reference(scn)
    g = certificate(params, layout4, 472.0, 0.1, tau)
    n = 300
    X = python_loop(
        params, layout4, g, ref.X, ref.p, trace.w, tau, scn.dt, trace.X[0], n, quad, layout4.c_fail
    )
    assert np.max(np.abs(X - trace.X[: n + 1])) <= 1e-9


def test_predictor_exact_under_constant_disturbance(short_mission):
    scn = Scenario(tau=0.5, mission=short_mission, disturbance=DisturbanceSpec("constant", w_max=0.5))
    trace, _ = run_scenario(scn)
    N = scn.n_delay
    # after two delays the delayed and current disturbance coincide
    assert np.max(trace.pred_err[2 * N :]) <= 1e-9


def test_predictor_error_within_lipschitz_bound(params, layout4, short_mission):
    L, tau = 0.1, 1.0
    scn = Scenario(tau=tau, mission=short_mission, disturbance=DisturbanceSpec("lipschitz", L, 1.0, 11))
    trace, _ = run_scenario(scn)
    mu = log_norm(cw_matrix(params))
    bound = params.thrust_ratio_r * np.linalg.norm(layout4.c_fail) * L * tau * np.expm1(mu * tau) / mu
    N = scn.n_delay
    assert np.max(trace.pred_err[2 * N :]) <= bound * (1 + 1e-6) + 1e-12


def test_stabilizer_zero_state(params):
    sig, tf = finite_time_stabilizer(params, np.zeros(4), 0.1)
    assert tf == 0.0
    assert np.all(sig(np.linspace(0, 10, 11)) == 0)


def test_stabilizer_reaches_origin(params):
    y0 = np.array([0.5, -0.3, 1e-3, 0.0])
    sig, tf = finite_time_stabilizer(params, y0, 0.2)
    assert np.max(np.linalg.norm(sig(np.linspace(0, tf, 2001)), axis=1)) <= 0.2 * (1 + 1e-3)
    A = cw_matrix(params)
    Bin = params.thrust_ratio_r * BHAT

    def rhs(t, y):
        return A @ y + Bin @ sig(t)[0]

    sol = solve_ivp(rhs, (0, tf), y0, rtol=1e-11, atol=1e-13, method="DOP853")
    assert np.linalg.norm(sol.y[:, -1]) <= 1e-6
    assert np.all(sig(np.array([tf + 1.0, tf + 100.0])) == 0)


def test_stabilizer_horizon_monotone_in_budget(params):
    y0 = np.array([0.2, 0.1, 0.0, 0.0])
    tfs = [finite_time_stabilizer(params, y0, e)[1] for e in (0.4, 0.2, 0.1, 0.05)]
    assert all(b >= a for a, b in zip(tfs, tfs[1:]))


def test_stabilizer_cap(params):
    with pytest.raises(SteeringError):
        finite_time_stabilizer(params, np.array([1e6, 0, 0, 0]), 1e-3, t_cap=100.0)
    with pytest.raises(ValueError):
        finite_time_stabilizer(params, np.ones(4), 0.0)


def test_open_loop_exact_without_disturbance():
    A, lay = demo_system()
    ref = LinearReference(A, np.zeros(4), np.array([0.5, 0.0]))
    zero = StabilizerSignal(A, BHAT, 0.0, np.zeros(4), 0.0)
    ctl = open_loop_delayed(ref, zero, lambda s: np.zeros(np.shape(s)), np.log(2.0), A, lay, 1.0)
    t, X = simulate_linear(A, lay, ctl, lambda tt: np.zeros(len(tt)), ref.x0, 5.0, 0.01)
    assert np.max(np.abs(X - ref.x_at(t))) <= 1e-12


def test_open_loop_first_window_is_reference():
    A, lay = demo_system()
    ref = LinearReference(A, np.zeros(4), np.array([0.5, 0.0]))
    zero = StabilizerSignal(A, BHAT, 0.0, np.zeros(4), 0.0)
    ctl = open_loop_delayed(ref, zero, lambda s: np.ones(np.shape(s)), np.log(2.0), A, lay, 1.0)
    t = np.linspace(0, np.log(2.0) - 1e-9, 5)
    assert np.allclose(ctl(t), [[0.5, 0.0]] * 5)


def test_open_loop_rejects_oversized_budget():
    A, lay = demo_system()
    ref = LinearReference(A, np.zeros(4), np.array([0.3, 0.0]))
    zero = StabilizerSignal(A, BHAT, 0.0, np.zeros(4), 0.0)
    with pytest.raises(ValueError, match="budget exceeds"):
        open_loop_delayed(ref, zero, lambda s: s, np.log(2.0), A, lay, 1.0)


def test_linear_demo_bound():
    d = linear_demo(n_seeds=20)
    assert d["rho"] == pytest.approx(0.5)
    assert np.all(d["final_err"] <= d["rho"] + 1e-9)


def test_open_loop_recovers_from_offset():
    # a longer correction horizon leaves room for a stabilizing budget
    A, lay = demo_system()
    T_c = np.log(4.0)
    ref = LinearReference(A, np.zeros(4), np.array([0.375, 0.0]))
    y0 = np.array([0.0, 0.0, 0.2, 0.0])
    # only the first planar input direction is actuated
    sig, tf = finite_time_stabilizer(None, y0, 0.12, A=A, input_mat=BHAT * [1.0, 0.0])
    ctl = open_loop_delayed(ref, sig, None, T_c, A, lay, 1.0)
    dt = T_c / 200
    t_end = dt * np.ceil((tf + T_c + 6.0) / dt)
    tt = np.arange(0.0, t_end + dt / 2, dt)
    w = sample_signal(DisturbanceSpec("lipschitz", 0.1, 1.0, 5), tt)
    ctl.w = lambda s: np.interp(s, tt, w)
    t, X = simulate_linear(A, lay, ctl, lambda _: w, ref.x0 + y0, t_end, dt)
    err = np.linalg.norm(X - ref.x_at(t), axis=1)
    rho = reach_radius_bound(1.0, -1.0, T_c)
    assert np.all(err[t >= tf + T_c] <= rho + 1e-9)
