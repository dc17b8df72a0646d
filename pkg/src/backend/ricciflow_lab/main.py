import logging
import math
import os
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Iterable, Optional, Tuple

import numpy as np

from . import checks, constants, io_formats
from .conformal_balance import balance, hersch_check_for_jet
from .debug_helpers import StepLogger
from .extinction import certificate_for, certificate_soundness, flow_covered, monotone_monitor
from .flow_engine import FlowEngine, FlowState, FlowTrajectory, scalar_bound_monitor
from .models import (
    BalanceRecord,
    CertificateRecord,
    CheckSummary,
    MonitorVerdict,
    ProfileSpec,
    RunConfig,
    RunReport,
    TrajectorySummary,
    WidthPoint,
)
from .profile_geometry import ProfileGrid, build_profile, min_scalar
from .tolerances import Tolerances
from .width_minmax import critical_spheres, neck_area_tracker, width_rate_monitor

logger = logging.getLogger("RicciFlowLab")

# monitors that need the flow to reach extinction or t_max
COVERAGE_MONITORS = ("scalar_bound", "width_rate", "monotone")


def package_version() -> str:
    try:
        return version(constants.package_name)
    except PackageNotFoundError:  # pragma: no cover - only in source checkouts
        return "0.0.0"


def _as_bool(value: Optional[str], default: bool = False) -> bool:
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "on"}


def _get_env(name: str, default: Optional[str] = None) -> Optional[str]:
    value = os.getenv(name)
    if value is not None:
        return value
    return default


def _configure_logging(debug: bool, quiet: bool = False) -> None:
    """Log to stderr; RFLAB_DEBUG switches on per-step detail."""
    if debug:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = logging.INFO
    root_logger = logging.getLogger()
    if not root_logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(
            logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        )
        root_logger.addHandler(handler)
    root_logger.setLevel(level)
    for handler in root_logger.handlers:
        handler.setLevel(level)


def load_profile(spec: ProfileSpec, base_dir: Optional[Path] = None) -> ProfileGrid:
    if spec.kind == "samples":
        path = Path(spec.file)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        return io_formats.read_profile_snapshot(path, spec.n_cells)
    return build_profile(spec.to_kind(), spec.n_cells)


def _summarize(name: str, outcomes: Iterable[Tuple[bool, Optional[float]]], detail: str = ""):
    checked = 0
    violations = 0
    worst = None
    for ok, margin in outcomes:
        checked += 1
        if not ok:
            violations += 1
        if margin is not None and math.isfinite(margin):
            worst = margin if worst is None else min(worst, margin)
    return MonitorVerdict(
        name=name,
        passed=violations == 0,
        checked=checked,
        violations=violations,
        worst_margin=worst,
        detail=detail,
    )


def hersch_outcomes(trajectory: FlowTrajectory, tolerances: Tolerances):
    """Index-one implication on every minimal level sphere of every snapshot."""
    for state in trajectory.states:
        for critical in critical_spheres(state.profile, 0, tolerances):
            verdict = hersch_check_for_jet(critical.sphere.jet, tolerances, tol_minimal=math.inf)
            margin = None if verdict.vacuous else 8.0 * math.pi - verdict.integral_one_L_one
            yield verdict.integral_holds and verdict.rate_holds, margin


def evolve_profile(
    profile: ProfileGrid,
    config: RunConfig,
    tolerances: Tolerances,
    stride: Optional[int] = None,
    trace_steps: bool = False,
) -> FlowTrajectory:
    flow = config.flow
    tracer = StepLogger(logging.getLogger("RicciFlowLab.steps")) if trace_steps else None
    engine = FlowEngine(tolerances, tracer)
    output_times = flow.output_times
    output_stride = stride or flow.output_stride
    if output_times is None and output_stride is None:
        output_times = np.linspace(profile.time, flow.t_max, flow.output_count)
    return engine.evolve(
        FlowState.initial(profile, tolerances),
        flow.t_max,
        output_times=output_times,
        output_stride=output_stride,
        max_steps=flow.max_steps,
    )


def run_simulate(
    config: RunConfig,
    out_dir: Path,
    *,
    stride: Optional[int] = None,
    base_dir: Optional[Path] = None,
    trace_steps: bool = False,
) -> RunReport:
    tolerances = config.resolved_tolerances()
    run_dir = Path(out_dir) / config.run.name
    run_logger = logging.getLogger(f"RicciFlowLab-{config.run.name}")
    run_logger.info("starting run in %s", run_dir)
    profile = load_profile(config.profile, base_dir)
    certificate = certificate_for(profile, tolerances)
    trajectory = evolve_profile(profile, config, tolerances, stride, trace_steps)
    C = certificate.C

    monitors: dict[str, MonitorVerdict] = {}
    neck = neck_area_tracker(trajectory, tolerances)
    series = width_rate_monitor(trajectory, C, tolerances, neck)

    if "scalar_bound" in config.monitors:
        verdicts = scalar_bound_monitor(trajectory, C, tolerances)
        unresolved = sum(1 for v in verdicts if not v.resolved)
        monitors["scalar_bound"] = _summarize(
            "scalar_bound",
            ((v.ok, v.margin) for v in verdicts),
            f"{unresolved} snapshots with an unresolved neck" if unresolved else "",
        )
    if "width_rate" in config.monitors:
        monitors["width_rate"] = _summarize(
            "width_rate", ((s.ok, s.margin) for s in series.samples if s.dq is not None)
        )
    if "monotone" in config.monitors:
        if C is None:
            monitors["monotone"] = MonitorVerdict(
                name="monotone",
                passed=True,
                checked=0,
                violations=0,
                detail="not applicable: initial min R is non-negative",
            )
        else:
            monitors["monotone"] = _summarize(
                "monotone", ((v.ok, v.margin) for v in monotone_monitor(series, C, tolerances))
            )
    if "neck" in config.monitors:
        if neck.present:
            detail = (
                f"pinch at t={neck.pinch_time:.9g}" if neck.pinch_time is not None else "no pinch"
            )
        else:
            detail = "no stable neck"
        monitors["neck"] = _summarize(
            "neck", ((s.ok, s.margin) for s in neck.samples if s.dq is not None), detail
        )
    if "hersch" in config.monitors:
        monitors["hersch"] = _summarize("hersch", hersch_outcomes(trajectory, tolerances))
    if not flow_covered(trajectory):
        note = f"flow degenerated at t={trajectory.termination.time:.9g}"
        for name in COVERAGE_MONITORS:
            if name in monitors:
                monitors[name] = monitors[name].model_copy(update={"passed": False, "detail": note})

    soundness = certificate_soundness(trajectory, certificate, tolerances)
    if not soundness.comparable:
        run_logger.info("certificate %s", soundness.note)
    margins = {name: verdict.worst_margin for name, verdict in monitors.items()}
    margins["extinction_time"] = soundness.margin

    final = trajectory.final
    summary = TrajectorySummary(
        termination=trajectory.termination.kind,
        termination_time=trajectory.termination.time,
        termination_x=trajectory.termination.x,
        snapshots=len(trajectory.states),
        steps=final.step_count,
        dt_last=final.dt_last,
        initial_min_R=min_scalar(profile),
        final_max_psi=final.profile.max_psi,
    )
    files = {
        "trajectory": str(io_formats.write_trajectory_csv(run_dir / "trajectory.csv", trajectory)),
        "width": str(io_formats.write_width_csv(run_dir / "width.csv", series)),
        "initial_profile": str(
            io_formats.write_profile_snapshot(run_dir / "profile_initial.csv", profile)
        ),
        "final_profile": str(
            io_formats.write_profile_snapshot(run_dir / "profile_final.csv", final.profile)
        ),
    }
    record = CertificateRecord(
        C=C,
        W0=certificate.W0,
        T_star=certificate.T_star,
        policy=certificate.policy,
        simulated_extinction=soundness.simulated_extinction,
        sound=soundness.sound,
        margins_summary=margins,
    )
    files["certificate"] = str(io_formats.write_json(run_dir / "certificate.json", record))
    files["report"] = str(run_dir / "report.json")
    report = RunReport(
        name=config.run.name,
        version=package_version(),
        config=config,
        trajectory=summary,
        certificate=record,
        monitors=monitors,
        width=[
            WidthPoint(
                t=sample.t,
                W=sample.W,
                x_argmax=sample.x_argmax,
                min_R=sample.min_R,
                dq=sample.dq,
                bound_rhs=sample.bound_rhs,
                margin=sample.margin,
            )
            for sample in series.samples
        ],
        files=files,
    )
    io_formats.write_json(run_dir / "report.json", report)
    run_logger.info(
        "%s at t=%.9g, %d monitor violations",
        summary.termination,
        summary.termination_time,
        report.violations,
    )
    return report


def run_failed(report: RunReport) -> bool:
    return (
        not report.passed
        or report.certificate.sound is False
        or report.trajectory.termination == "degenerate"
    )


def run_balance(measure_path: Path, tol: float, out_dir: Optional[Path] = None):
    measure = io_formats.read_measure_csv(measure_path)
    result = balance(measure, tol)
    record = BalanceRecord(
        center=list(result.dilation.center),
        t=result.dilation.t,
        residual=result.residual,
        iterations=result.iterations,
        nodes=int(measure.nodes.shape[0]),
    )
    if out_dir is not None:
        io_formats.write_json(Path(out_dir) / "balance.json", record)
    return record


def load_report(run_dir: Path) -> RunReport:
    return io_formats.read_json(Path(run_dir) / "report.json", RunReport)


def run_checks(
    config: RunConfig, workers: Optional[int] = None, out_dir: Optional[Path] = None
) -> CheckSummary:
    try:
        summary = checks.run_checks(config, workers)
    except Exception:
        logger.exception("property suites aborted")
        raise
    if out_dir is not None:
        io_formats.write_json(Path(out_dir) / "checks.json", summary)
    return summary
