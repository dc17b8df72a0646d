import configparser
import logging
import os
import re
import sys
from pathlib import Path
from typing import Any, Optional

import rich_click as click
from appdirs import user_data_dir
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import constants, main
from .conformal_balance import BalanceConvergenceError, DegenerateMeasureError
from .io_formats import FileFormatError
from .models import RunConfig, RunReport
from .profile_geometry import DegenerateProfileError, ProfileValidationError

_KEY_PATTERN = re.compile(r"^\s*([^#;\[\s][^=:]*?)\s*[=:]")
_SECTION_PATTERN = re.compile(r"^\s*\[([^\]]+)\]")

LIST_KEYS = {("flow", "output_times"), ("monitors", "enabled")}


class ConfigError(ValueError):
    def __init__(self, path: str, line: Optional[int], message: str):
        location = f"{path}:{line}" if line else path
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line


class Config:
    """INI run configuration validated into a RunConfig.

    Sections: [profile], [flow], [monitors], [tolerances], [run]. Keys are
    tracked to their line so that validation errors point into the file.
    """

    def __init__(self, config_file):
        self.config_file = os.path.abspath(config_file)
        self.base_dir = Path(self.config_file).parent
        self.lines: dict[tuple[str, str], int] = {}
        self.sections: dict[str, dict[str, Any]] = {}
        self.run_config: Optional[RunConfig] = None
        self.__load()

    def __load(self):
        try:
            with open(self.config_file, "r", encoding="utf-8") as f:
                text = f.read()
        except FileNotFoundError as exc:
            raise ConfigError(self.config_file, None, "config file not found") from exc
        self._index_lines(text)
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=self.config_file)
        except configparser.Error as exc:
            raise ConfigError(self.config_file, getattr(exc, "lineno", None), str(exc)) from exc
        for section in parser.sections():
            name = section.strip().lower()
            if name not in constants.config_sections:
                raise ConfigError(
                    self.config_file, self.lines.get((name, "")), f"unknown section [{section}]"
                )
            self.sections[name] = {
                key: self._parse_value(name, key, value) for key, value in parser[section].items()
            }
        self.run_config = self._validate()

    def _index_lines(self, text: str) -> None:
        section = ""
        for number, line in enumerate(text.splitlines(), start=1):
            match = _SECTION_PATTERN.match(line)
            if match:
                section = match.group(1).strip().lower()
                self.lines[(section, "")] = number
                continue
            match = _KEY_PATTERN.match(line)
            if match and section:
                self.lines[(section, match.group(1).strip().lower())] = number

    def _parse_value(self, section: str, key: str, value: str) -> Any:
        value = value.strip()
        if (section, key) in LIST_KEYS:
            return [item.strip() for item in re.split(r"[,\s]+", value) if item.strip()]
        return value

    def _line_for(self, loc: tuple) -> Optional[int]:
        if not loc:
            return None
        section = str(loc[0])
        key = str(loc[1]) if len(loc) > 1 else ""
        if section == "monitors":
            key = "enabled"
        return self.lines.get((section, key)) or self.lines.get((section, ""))

    def _validate(self) -> RunConfig:
        if "profile" not in self.sections or "flow" not in self.sections:
            raise ConfigError(self.config_file, None, "[profile] and [flow] sections are required")
        payload: dict[str, Any] = {
            "profile": self.sections["profile"],
            "flow": self.sections["flow"],
            "tolerances": self.sections.get("tolerances", {}),
            "run": self.sections.get("run", {}),
        }
        monitors = self.sections.get("monitors")
        if monitors is not None:
            payload["monitors"] = monitors.get("enabled", [])
        try:
            return RunConfig.model_validate(payload)
        except ValidationError as exc:
            error = exc.errors()[0]
            loc = tuple(error.get("loc", ()))
            where = ".".join(str(part) for part in loc)
            raise ConfigError(
                self.config_file, self._line_for(loc), f"{where}: {error.get('msg')}"
            ) from exc


def _env_bool(name: str, default: bool) -> bool:
    return main._as_bool(main._get_env(name), default)


def _default_out_dir() -> str:
    return main._get_env("RFLAB_OUT_DIR") or user_data_dir(constants.app_name, constants.app_author)


def _load_config(path: str) -> Config:
    try:
        return Config(path)
    except ConfigError as exc:
        _fail(str(exc))


def _fail(message: str, code: int = constants.EXIT_ERROR):
    Console(stderr=True).print(f"[bold red]error:[/] {message}")
    sys.exit(code)


def _monitor_table(report: RunReport) -> Table:
    table = Table(title=f"run {report.name}")
    table.add_column("monitor")
    table.add_column("status")
    table.add_column("checked", justify="right")
    table.add_column("violations", justify="right")
    table.add_column("worst margin", justify="right")
    table.add_column("detail")
    for name, verdict in report.monitors.items():
        table.add_row(
            name,
            "[green]ok[/]" if verdict.passed else "[red]violated[/]",
            str(verdict.checked),
            str(verdict.violations),
            "" if verdict.worst_margin is None else f"{verdict.worst_margin:.3e}",
            verdict.detail,
        )
    return table


def _print_report(report: RunReport) -> None:
    console = Console()
    console.print(_monitor_table(report))
    certificate = report.certificate
    trajectory = report.trajectory
    console.print(f"termination: {trajectory.termination} at t={trajectory.termination_time:.9g}")
    sound = {True: "sound", False: "[red]unsound[/]", None: "not comparable"}[certificate.sound]
    console.print(f"certificate: policy={certificate.policy} T*={certificate.T_star:.9g} ({sound})")


@click.group(invoke_without_command=True)
@click.option(
    "--out",
    "-o",
    default=_default_out_dir(),
    help="Directory for run outputs (RFLAB_OUT_DIR)",
)
@click.option(
    "--debug/--no-debug",
    default=_env_bool("RFLAB_DEBUG", False),
    show_default=True,
    help="Debug logging (RFLAB_DEBUG).",
)
@click.option(
    "--trace-steps/--no-trace-steps",
    default=_env_bool("RFLAB_TRACE_STEPS", False),
    show_default=True,
    help="Log every accepted and rejected time step (RFLAB_TRACE_STEPS).",
)
@click.option("--quiet", "-q", is_flag=True, help="Only log warnings and errors.")
@click.pass_context
def cli(ctx, out, debug, trace_steps, quiet):
    """Ricci flow lab for rotationally symmetric three-spheres"""
    ctx.ensure_object(dict)
    ctx.obj["out_dir"] = Path(out)
    ctx.obj["debug"] = debug
    ctx.obj["trace_steps"] = trace_steps
    main._configure_logging(debug, quiet)
    ctx.obj["logger"] = logging.getLogger("RicciFlowLab")

    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


@cli.command()
@click.argument("config_file", type=click.Path(dir_okay=False))
@click.option("--stride", type=click.IntRange(min=1), default=None, help="Snapshot every N steps")
@click.pass_context
def simulate(ctx, config_file, stride):
    """Evolve a profile and judge every enabled monitor"""
    config = _load_config(config_file)
    try:
        report = main.run_simulate(
            config.run_config,
            ctx.obj["out_dir"],
            stride=stride,
            base_dir=config.base_dir,
            trace_steps=ctx.obj["trace_steps"],
        )
    except (ProfileValidationError, DegenerateProfileError, FileFormatError) as exc:
        _fail(str(exc))
    _print_report(report)
    sys.exit(constants.EXIT_VIOLATION if main.run_failed(report) else constants.EXIT_OK)


@cli.command()
@click.argument("measure_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--tol", type=float, default=1e-8, show_default=True, help="Residual tolerance")
@click.pass_context
def balance(ctx, measure_file, tol):
    """Find the dilation that balances a weighted measure on the sphere"""
    try:
        record = main.run_balance(Path(measure_file), tol, ctx.obj["out_dir"])
    except (DegenerateMeasureError, FileFormatError) as exc:
        _fail(str(exc))
    except BalanceConvergenceError as exc:
        _fail(f"{exc} (best t={exc.best.dilation.t:.6g})", constants.EXIT_VIOLATION)
    center = ", ".join(f"{c:.9f}" for c in record.center)
    Console().print(
        f"center=({center}) t={record.t:.9g} residual={record.residual:.3e} "
        f"iterations={record.iterations}"
    )


@cli.command()
@click.argument("config_file", type=click.Path(dir_okay=False))
@click.option(
    "--workers",
    type=click.IntRange(min=1),
    default=int(main._get_env("RFLAB_WORKERS", "0") or 0) or None,
    help="Worker processes for the fleet (RFLAB_WORKERS)",
)
@click.pass_context
def check(ctx, config_file, workers):
    """Run the property suites over the seeded fleet"""
    config = _load_config(config_file)
    try:
        summary = main.run_checks(config.run_config, workers, ctx.obj["out_dir"])
    except (ProfileValidationError, DegenerateProfileError, DegenerateMeasureError) as exc:
        _fail(str(exc))
    table = Table(title=f"property suites (seed {summary.seed})")
    table.add_column("suite")
    table.add_column("status")
    table.add_column("checked", justify="right")
    table.add_column("worst margin", justify="right")
    table.add_column("detail")
    for suite in summary.suites:
        table.add_row(
            suite.name,
            "[green]ok[/]" if suite.passed else "[red]failed[/]",
            str(suite.checked),
            "" if suite.worst_margin is None else f"{suite.worst_margin:.3e}",
            suite.detail,
        )
    Console().print(table)
    sys.exit(constants.EXIT_OK if summary.passed else constants.EXIT_VIOLATION)


@cli.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def report(run_dir):
    """Print the monitor table of a finished run"""
    try:
        loaded = main.load_report(Path(run_dir))
    except (OSError, ValidationError) as exc:
        _fail(f"cannot read report in {run_dir}: {exc}")
    _print_report(loaded)
    sys.exit(constants.EXIT_VIOLATION if main.run_failed(loaded) else constants.EXIT_OK)


def app_start():
    cli(obj={})
