"""Command-line front end.

Exit codes: 0 ok, 1 scenario failure or failed check, 2 configuration
error, 3 infeasible gains, 4 internal consistency failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, load_config, mission_of, params_of, scenario_of
from .dynamics import cw_expm, cw_matrix, default_layout, split_layout
from .input_geometry import input_polygon, inscribed_radius_at_origin, rotation_residual
from .reference import KosViolation, SteeringError, build_reference, kos_check
from .resilience import InfeasibleGainsError, certificate, design_gains, eroded_input_set, resilience_verdict
from .sim import pareto_sweep, run_scenario

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_GAINS, EXIT_INTERNAL = 0, 1, 2, 3, 4

# published constants checked by `verify`
_P_PUBLISHED = np.array(
    [
        [2.77, 0.0, 1.77, 0.01],
        [0.0, 2.77, -0.01, 1.77],
        [1.77, -0.01, 8.0, 0.0],
        [0.01, 1.77, 0.0, 8.0],
    ]
)
_VERTS_T4 = np.array([[-2.0, 0.0], [-0.707, -1.29289], [0.5857, 0.0], [-0.707, 1.29289]])
_BU_T1 = np.array([[-3.414, 0.0], [-1.414, -2.0], [0.0, -2.0], [1.0, -1.0], [-1.0, 1.0], [-2.414, 1.0]])
_VERTS_T1 = np.array([[-2.414, 1.0], [-0.414, -1.0], [1.0, -1.0], [-1.0, 1.0]])
EXPM_TIMES = (0.1, 1.0, 10.0, 1e2, 1e3, 1e4)


def _out_path(out_dir, name):
    if out_dir is None or os.path.isabs(name):
        return name
    return os.path.join(out_dir, name)


def vertex_mismatch(poly_vertices, expected):
    """Largest distance from an expected vertex to its nearest computed one (and back)."""
    V = np.asarray(poly_vertices)
    E = np.asarray(expected)
    if len(V) != len(E):
        return np.inf
    D = np.linalg.norm(V[:, None, :] - E[None, :, :], axis=2)
    return float(max(D.min(axis=0).max(), D.min(axis=1).max()))


def expm_oracle(A, t, dps=50):
    """exp(A t) in extended precision, rounded to float."""
    import mpmath

    with mpmath.workdps(dps):
        M = mpmath.matrix([[mpmath.mpf(float(a)) * mpmath.mpf(t) for a in row] for row in A])
        E = mpmath.expm(M)
        return np.array([[float(E[i, j]) for j in range(A.shape[1])] for i in range(A.shape[0])])


def analytic_checks(params):
    """Published analytic values recomputed with the given constants.

    Returns
    -------
    list of dict
        Each with ``name``, ``expected``, ``actual``, ``tolerance`` and
        ``passed``.
    """
    out = []

    def add(name, expected, actual, tol):
        out.append(
            {
                "name": name,
                "expected": expected,
                "actual": actual,
                "tolerance": tol,
                "passed": bool(abs(actual - expected) <= tol),
            }
        )

    full = default_layout()
    for i in range(1, 6):
        P = eroded_input_set(split_layout(full, i))
        rho = 0.0 if P is None else inscribed_radius_at_origin(P)
        add(f"rho_max_thruster_{i}", float(np.sqrt(2) - 1) if i == 4 else 0.0, rho, 1e-12)
    l4, l1 = split_layout(full, 4), split_layout(full, 1)
    out.append(_vertex_check("bu_vertices_thruster_4", input_polygon(l4).vertices, [[-2, 0], [0, -2], [2, 0], [0, 2]]))
    out.append(_vertex_check("p_vertices_thruster_4", eroded_input_set(l4).vertices, _VERTS_T4))
    out.append(_vertex_check("bu_vertices_thruster_1", input_polygon(l1).vertices, _BU_T1))
    out.append(_vertex_check("p_vertices_thruster_1", eroded_input_set(l1).vertices, _VERTS_T1))
    try:
        g = certificate(params, l4, 472.0, 0.1, 0.2)
        add("lyapunov_P_max_entry_diff", 0.0, float(np.max(np.abs(g.P - _P_PUBLISHED))), 0.01)
        add("epsilon", 0.4133, g.epsilon, 1e-3)
        add("tracking_tolerance", 1.5e-4, g.tolerance, 0.1e-4)
    except ValueError as e:
        for name in ("lyapunov_P_max_entry_diff", "epsilon", "tracking_tolerance"):
            out.append({"name": name, "expected": None, "actual": str(e), "tolerance": None, "passed": False})
    A = cw_matrix(params)
    err = max(float(np.max(np.abs(cw_expm(params, t) - expm_oracle(A, t)))) for t in EXPM_TIMES)
    add("expm_closed_form_max_err", 0.0, err, 1e-10)
    if params.omega > 0:
        r1, r2 = rotation_residual(params, params.period)
        add("residual_1_at_period", 0.0, r1, 1e-9)
        add("residual_2_at_period", 6 * np.pi, r2, 1e-6)
    return out


def _vertex_check(name, V, E):
    d = vertex_mismatch(V, E)
    return {"name": name, "expected": 0.0, "actual": d, "tolerance": 1e-3, "passed": bool(d <= 1e-3)}


def _emit(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def cmd_analyze(cfg, out_dir=None):
    params = params_of(cfg)
    mission = mission_of(cfg)
    ref_info = {}
    try:
        ref = build_reference(params, mission, cfg["reference"]["dt_s"])
        rho_ref = ref.rho_ref
        ref_info = {"rho_ref": rho_ref, "rho_ref_accel_mps2": ref.rho_ref_accel(params)}
    except (KosViolation, SteeringError, ValueError, np.linalg.LinAlgError) as e:
        rho_ref = None
        ref_info = {"rho_ref": None, "reference_error": str(e)}
    reports = []
    for i in range(1, 6):
        rep = resilience_verdict(params, default_layout(), i, 0.0 if rho_ref is None else rho_ref).to_dict()
        if rho_ref is None:
            rep.update(rho_ref=None, eps_budget=None, tracking_feasible=False)
        reports.append(rep)
    fi = cfg["scenario"]["failed_index"]
    gains = None
    layout = split_layout(default_layout(), fi)
    dist = cfg["disturbance"]
    lip = dist["lip_L_per_s"] if dist["kind"] != "none" else 0.0
    k = cfg["gains"]["k"] if cfg["gains"]["mode"] == "explicit" else None
    try:
        g = design_gains(params, layout, rho_ref or 0.0, lip, cfg["scenario"]["tau_s"], k=k)
        gains = g.to_dict()
        gains["budget_met"] = bool(rho_ref is not None and g.epsilon + rho_ref <= reports[fi - 1]["rho_max"])
    except (InfeasibleGainsError, ValueError) as e:
        gains = {"error": str(e)}
    report = {
        "params": cfg["params"],
        "reference": ref_info,
        "thrusters": reports,
        "failed_index": fi,
        "gains": gains,
    }
    text = _emit(report, _out_path(out_dir, cfg["outputs"]["report_json"]) if out_dir else None)
    print(text)
    return EXIT_OK


def cmd_reference(cfg, out_dir=None):
    params = params_of(cfg)
    mission = mission_of(cfg)
    try:
        ref = build_reference(params, mission, cfg["reference"]["dt_s"])
    except (KosViolation, SteeringError) as e:
        print(f"reference failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    path = _out_path(out_dir, cfg["outputs"]["reference_csv"])
    _ensure_dir(path)
    ref.to_csv(path)
    kos, _ = kos_check(ref, mission.kos_radius)
    print(
        json.dumps(
            {"reference_csv": path, "rho_ref": ref.rho_ref, "rho_ref_accel_mps2": ref.rho_ref_accel(params),
             "min_kos_dist_m": kos, "samples": len(ref)},
            indent=2, sort_keys=True,
        )
    )
    return EXIT_OK


def _ensure_dir(path):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)


def cmd_simulate(cfg, out_dir=None):
    scn = scenario_of(cfg)
    try:
        trace, metrics = run_scenario(scn)
    except InfeasibleGainsError as e:
        print(f"gain design infeasible: {e}", file=sys.stderr)
        return EXIT_GAINS
    tpath = _out_path(out_dir, cfg["outputs"]["trace_csv"])
    mpath = _out_path(out_dir, cfg["outputs"]["metrics_json"])
    _ensure_dir(tpath)
    trace.to_csv(tpath)
    _emit(metrics.to_dict(), mpath)
    m = metrics
    print(
        f"avg_pos_err_m={m.avg_pos_err_m:.6g} max_pos_err_m={m.max_pos_err_m:.6g} "
        f"m_u_kg={m.m_u_kg:.6g} r_fuel={m.r_fuel if m.r_fuel is None else round(m.r_fuel, 6)} "
        f"min_kos_dist_m={m.min_kos_dist_m:.6g} saturation_fraction={m.saturation_fraction:.6g} "
        f"success={m.success}"
    )
    return EXIT_OK if m.success else EXIT_FAIL


def front_is_monotone(front):
    vals = [v for _, v in sorted(front)]
    return all(b <= a for a, b in zip(vals, vals[1:]))


def cmd_pareto(cfg, out_dir=None):
    scn = scenario_of(cfg)
    p = cfg["pareto"]
    if not p["tau_grid_s"] or not p["wmax_grid"]:
        raise ConfigError("pareto grid is empty")
    for tau in p["tau_grid_s"]:
        n = round(tau / scn.dt)
        if abs(n * scn.dt - tau) > 1e-9 * max(1.0, tau):
            raise ConfigError(f"tau = {tau} s is not an integer multiple of dt = {scn.dt} s")
    try:
        res = pareto_sweep(p["tau_grid_s"], p["wmax_grid"], scn, p["seeds_per_cell"])
    except InfeasibleGainsError as e:
        print(f"gain design infeasible: {e}", file=sys.stderr)
        return EXIT_GAINS
    _emit(res, _out_path(out_dir, cfg["outputs"]["sweep_json"]))
    if not front_is_monotone(res["front"]):
        print("internal consistency failure: front is not nonincreasing in tau", file=sys.stderr)
        return EXIT_INTERNAL
    path = _out_path(out_dir, cfg["outputs"]["front_csv"])
    _ensure_dir(path)
    with open(path, "w") as fh:
        fh.write("tau,max_feasible_wmax\n")
        for tau, wm in res["front"]:
            fh.write(f"{tau!r},{wm!r}\n")
    for tau, wm in res["front"]:
        print(f"tau_s={tau:g} max_feasible_wmax={wm:g}")
    return EXIT_OK


def cmd_verify(cfg, out_dir=None):
    checks = analytic_checks(params_of(cfg))
    width = max(len(c["name"]) for c in checks)
    for c in checks:
        tag = "PASS" if c["passed"] else "FAIL"
        print(f"{tag} {c['name']:<{width}} expected={c['expected']!s} actual={c['actual']!s} tolerance={c['tolerance']!s}")
    n_fail = sum(not c["passed"] for c in checks)
    print(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    if out_dir:
        _emit(checks, os.path.join(out_dir, "verify.json"))
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


COMMANDS = {
    "analyze": cmd_analyze,
    "reference": cmd_reference,
    "simulate": cmd_simulate,
    "pareto": cmd_pareto,
    "verify": cmd_verify,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="resiltrack", description="Resilient delayed tracking toolkit.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="JSON run configuration")
    ap.add_argument("--seed", type=int, metavar="N", help="override the disturbance seed")
    ap.add_argument("--out", metavar="DIR", help="directory for output files")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
