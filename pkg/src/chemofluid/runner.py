"""Run orchestration: the time loop with diagnostics, CSV artifacts, summaries.

A run lands exactly on the configured output cadence; at every output time a
full diagnostics row is recorded and a rolling three-snapshot window feeds
the entropy-identity residual of the middle row. Artifacts under the output
directory:

    diagnostics.csv    one row per output time (column order in csv_schema.md)
    inequalities.csv   one row per inequality evaluation
    summary.json       RunSummary, written atomically at the end
    config.txt         the fully resolved configuration
    snap_XXXX.txt      optional checkpoints (output.snapshot_every)

Randomized inequality scans share the CSV conventions; with a fixed seed all
artifacts are byte-identical across repeated invocations.
"""

from __future__ import annotations

import collections
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from chemofluid.config import RunConfig
from chemofluid.diagnostics import (
    DiagnosticsRecord,
    InequalityReport,
    check_energy_inequality,
    check_inequality_33,
    check_ms_lemma,
    check_velocity_energy,
    convergence_monitor,
    entropy_identity_residual,
    hessian_pointwise_violation,
    random_neumann_field,
    boundary_term,
)
from chemofluid.fields import ScalarField, normal_derivative_of_gradsq
from chemofluid.geometry import volume_integral
from chemofluid.model import build_derived, default_c_floor, validate_assumptions
from chemofluid.solver import LinearSystems, SolverAbort, cfl_dt, quantize_dt, step
from chemofluid.diagnostics import _c_at_segments

INEQ_HEADER = "id,time,lhs,rhs,violation,tolerance,passed"


class ValidationFailure(RuntimeError):
    """The kinetics model violates the structural assumptions."""


@dataclass
class RunSummary:
    exit_status: str
    steps: int
    final_row: dict
    inequality_verdicts: dict
    convergence: dict
    wall_time: float
    timings: dict
    outputs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True, default=float)


def _write_atomic(path: Path, text: str):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _ineq_csv(reports: list[InequalityReport]) -> str:
    lines = [INEQ_HEADER]
    for r in reports:
        lines.append("%s,%.17e,%.17e,%.17e,%.17e,%.17e,%d" % r.row())
    return "\n".join(lines) + "\n"


def run_simulation(rc: RunConfig, out_dir) -> RunSummary:
    """Execute the full time loop described by the configuration.

    Raises ValidationFailure before the loop when the model is inadmissible
    and lets SolverAbort propagate with step context attached.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_wall = time.perf_counter()
    timings = collections.defaultdict(float)

    t0 = time.perf_counter()
    geom = rc.build_geometry()
    model = rc.build_model()
    init = rc.build_initial(geom)
    init.validate()
    c0_max = init.c0.max_active()
    report = validate_assumptions(model, c0_max)
    if not report.passed:
        names = ", ".join(c.name for c in report.failures)
        raise ValidationFailure(f"model assumptions violated: {names}")
    derived = build_derived(model, default_c_floor(c0_max), c0_max)
    cfg = rc.solver_config()
    cfg.c_floor = derived.c_floor
    lin = LinearSystems(geom, cfg)
    timings["setup"] += time.perf_counter() - t0

    state = init.make_state()
    mass0 = volume_integral(state.n, geom)
    area = volume_integral(np.ones((geom.nx, geom.ny)), geom)
    n_inf = mass0 / area
    amplitudes = (float(np.abs(init.n0.data[geom.active] - n_inf).max()),
                  c0_max, max(init.u0.max_speed(), 1e-300))

    record = DiagnosticsRecord(geom, n_inf=n_inf, c0_max=c0_max)
    ineq_rows: list[InequalityReport] = []
    window = collections.deque(maxlen=3)
    dt_out = rc["output.every_time"]
    snap_every = rc["output.snapshot_every"]

    def emit(st, index):
        t_diag = time.perf_counter()
        record.append_state(st, derived)
        ineq_rows.append(check_ms_lemma(st.c, geom, c_check=rc["check.ms_c"], time=st.t))
        ineq_rows.append(check_inequality_33(st, derived, time=st.t))
        window.append(st.copy())
        if len(window) == 3:
            _, nres, _ = entropy_identity_residual(tuple(window), derived, geom)
            record.set_identity_residual(index - 1, nres)
        if snap_every and index % snap_every == 0:
            from chemofluid.gridio import save_state
            save_state(out / f"snap_{index:04d}.txt", st)
        timings["diagnostics"] += time.perf_counter() - t_diag

    emit(state, 0)
    steps = 0
    out_index = 1
    next_out = dt_out
    end_time = cfg.end_time
    try:
        while state.t < end_time - 1e-12:
            t0 = time.perf_counter()
            dt = quantize_dt(cfl_dt(state, cfg, model), cfg.dt_max)
            dt = min(dt, next_out - state.t)
            state = step(state, cfg, model, lin, dt=dt)
            steps += 1
            timings["stepping"] += time.perf_counter() - t0
            if abs(state.t - next_out) < 1e-10:
                emit(state, out_index)
                out_index += 1
                next_out = min(end_time, next_out + dt_out)
    except SolverAbort as exc:
        exc.step_index = steps
        _write_atomic(out / "diagnostics.csv", record.csv_text())
        _write_atomic(out / "inequalities.csv", _ineq_csv(ineq_rows))
        raise

    energy = check_energy_inequality(record)
    grad_phi = model.potential_gradient(*geom.cell_centers())
    grad_phi_inf = float(np.sqrt(grad_phi[0] ** 2 + grad_phi[1] ** 2)[geom.active].max())
    velocity = check_velocity_energy(record, grad_phi_inf)
    ineq_rows.extend([energy, velocity])
    conv = convergence_monitor(record, amplitudes, rc["conv.threshold_rel"])

    _write_atomic(out / "diagnostics.csv", record.csv_text())
    _write_atomic(out / "inequalities.csv", _ineq_csv(ineq_rows))
    _write_atomic(out / "config.txt", "\n".join(rc.config_lines()) + "\n")

    summary = RunSummary(
        exit_status="ok",
        steps=steps,
        final_row=record.rows[-1],
        inequality_verdicts={
            "ms_lemma_all_passed": all(r.passed for r in ineq_rows if r.id == "ms_lemma"),
            "gradient_quartic_all_passed": all(r.passed for r in ineq_rows
                                               if r.id == "gradient_quartic"),
            "entropy_energy": {"passed": energy.passed, "C": energy.extra["C"],
                               "slack": energy.violation},
            "velocity_energy": {"passed": velocity.passed, "C": velocity.extra["C"],
                                "grad_u_time_integral": velocity.extra["grad_u_time_integral"]},
        },
        convergence={"passed": conv.passed, "conv_n_end": conv.conv_n_end,
                     "c_max_end": conv.c_max_end, "u_sup_end": conv.u_sup_end,
                     "thresholds": list(conv.thresholds),
                     "c_max_monotone": conv.c_max_monotone,
                     "tail_monotone": conv.tail_monotone,
                     "amplitudes": list(amplitudes)},
        wall_time=time.perf_counter() - t_wall,
        timings=dict(timings),
        outputs=[str(out / "diagnostics.csv"), str(out / "inequalities.csv")],
    )
    _write_atomic(out / "summary.json", summary.to_json())
    return summary


# ---------------------------------------------------------------------------
# randomized inequality scans
# ---------------------------------------------------------------------------

SCAN_HEADER = ("trial,ms_violation,ms_tolerance,bt_integral,bt_integrand_max,"
               "i33_lhs,i33_rhs,hess_pointwise_max")


def run_inequality_scan(rc: RunConfig, out_dir) -> dict:
    """Evaluate every inequality on seed-fixed random boundary-compatible fields.

    Returns a summary dict; writes scan.csv (byte-reproducible for a fixed
    seed) under out_dir.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geom = rc.build_geometry()
    model = rc.build_model()
    cfg = rc.solver_config()
    lin = LinearSystems(geom, cfg)
    c_base = rc["init.c0_base"]
    derived = build_derived(model, default_c_floor(c_base + rc["scan.amplitude"]),
                            c_base + rc["scan.amplitude"])
    rng = np.random.default_rng(rc["run.seed"])
    rows = []
    worst_ms = -np.inf
    bt_int_max = -np.inf
    bt_pointwise_max = -np.inf
    i33_violations = 0
    hess_max = -np.inf
    for trial in range(rc["scan.trials"]):
        z = random_neumann_field(geom, lin, rng, amplitude=rc["scan.amplitude"],
                                 smooth_len=rc["scan.smooth_len"],
                                 n_smooth=rc["scan.n_smooth"])
        c = ScalarField(geom, np.where(geom.active, c_base + z.data, 0.0))
        ms = check_ms_lemma(c, geom, c_check=rc["check.ms_c"])
        bt = boundary_term(c, derived, geom)
        dq, _, ok = normal_derivative_of_gradsq(c, geom)
        integrand = 0.5 * dq / derived.g(_c_at_segments(c, geom))
        bt_ptw = float(np.where(ok, integrand, -np.inf).max())
        i33 = check_inequality_33(c, derived)
        hv = hessian_pointwise_violation(c)
        rows.append((trial, ms.violation, ms.tolerance, bt, bt_ptw, i33.lhs, i33.rhs, hv))
        worst_ms = max(worst_ms, ms.violation)
        bt_int_max = max(bt_int_max, bt)
        bt_pointwise_max = max(bt_pointwise_max, bt_ptw)
        if i33.lhs > i33.rhs + i33.tolerance:
            i33_violations += 1
        hess_max = max(hess_max, hv)
    lines = [SCAN_HEADER]
    for r in rows:
        lines.append("%d," % r[0] + ",".join("%.17e" % v for v in r[1:]))
    _write_atomic(out / "scan.csv", "\n".join(lines) + "\n")
    result = {
        "trials": rc["scan.trials"],
        "h": geom.h,
        "convex": geom.is_convex,
        "kappa_max": geom.kappa_max,
        "ms_worst": worst_ms,
        "ms_tolerance": rc["check.ms_c"] * float(np.sqrt(geom.h)),
        "ms_passed": worst_ms <= rc["check.ms_c"] * float(np.sqrt(geom.h)),
        "bt_integral_max": bt_int_max,
        "bt_integrand_max": bt_pointwise_max,
        "i33_violations": i33_violations,
        "hess_pointwise_max": hess_max,
    }
    _write_atomic(out / "scan_summary.json", json.dumps(result, indent=2, sort_keys=True))
    return result
