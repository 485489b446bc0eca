"""Command line entry point: ``geoflow {run,sweep,probe,norms} --config FILE``.

Every invocation resolves the JSON config (all defaults filled in), hashes
it, and writes its outputs under ``<out>/<command>-<hash>``.  Exit codes: 0
success, 2 configuration error, 3 numerical divergence, 4 I/O error, 1
anything else.  Failures also leave ``error.json`` in the run directory
and print the same record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError, DivergenceError, GeoflowError
from .experiments import (
    DataSpec,
    epsilon_sweep,
    make_osc_data,
    make_probe_datum,
    make_qg_data,
    make_ubar_data,
    strichartz_probe,
)
from .littlewood_paley import NormRequest, evaluate_request, sobolev_norm
from .operators import PhysParams
from .spectral import GridSpec, load_snapshot, make_grid
from .systems import lift_2d
from .timestepper import DtPolicy, FlowState, integrate

__all__ = ["Config", "parse_config", "dispatch", "main", "run_dir_for"]

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridBlock(_Block):
    n: list[int]
    lengths: float | list[float] = 2 * math.pi
    dealias_fraction: float = 2.0 / 3.0

    def build(self) -> GridSpec:
        return make_grid(self.n, self.lengths, self.dealias_fraction)


class PhysicsBlock(_Block):
    nu: float = Field(0.05, ge=0)
    nu_prime: float | None = Field(None, ge=0)
    F: float = Field(2.0, gt=0)
    eps: float = Field(0.1, gt=0)


class DataBlock(_Block):
    delta: float = 1.0 / 6.0
    gamma: float = 1.0 / 24.0
    alpha0: float = 1.0
    C0: float = 1.0
    c_lowfreq: float = 0.9
    seed: int = 0
    profile: Literal["single_shell", "power_law"] = "single_shell"
    shell_base: float = 1.0
    spectral_slope: float = 2.0
    hypothesis: Literal["H2", "H3", "H4"] = "H3"
    m_exponent: float | None = None
    eta: float | None = None
    eta_prime: float | None = None
    k: float = 0.99
    qg_k0: float = 1.0
    ubar_norm: float | None = None

    @model_validator(mode="after")
    def _gamma_range(self):
        if not self.gamma < self.delta / 2:
            raise ValueError(f"gamma must be < delta/2 (gamma={self.gamma}, delta={self.delta})")
        return self


class DtBlock(_Block):
    kind: Literal["fixed", "cfl"] = "cfl"
    dt: float | None = Field(None, gt=0)
    c: float = Field(0.5, gt=0)
    max_dt: float | None = Field(None, gt=0)
    phase_cap: float | None = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _fixed_needs_dt(self):
        if self.kind == "fixed" and self.dt is None:
            raise ValueError("dt.kind = 'fixed' requires dt.dt")
        return self

    def build(self) -> DtPolicy:
        return DtPolicy(**self.model_dump())


class ScheduleBlock(_Block):
    T: float = Field(0.5, ge=0)
    dt: DtBlock = Field(default_factory=DtBlock)
    observe_every: float | None = Field(None, gt=0)
    snapshot_every: int | None = Field(None, ge=1)


class ProbeBlock(_Block):
    j: int = 0
    targets: list[str] = Field(default_factory=lambda: ["L2_Linf", "L4_L6", "Linf_L2"])
    n_times: int = Field(65, ge=2)
    T: float | None = Field(None, gt=0)
    control: bool = True


class NormBlock(_Block):
    kind: Literal["sobolev", "besov", "lebesgue", "aniso", "chemin_lerner", "energy"]
    s: float = 0.0
    p: float | Literal["inf"] = 2.0
    q: float | Literal["inf"] = 2.0
    a: float | Literal["inf"] = 2.0
    nu0: float = 1.0

    def build(self) -> NormRequest:
        return NormRequest.from_dict(self.model_dump())


class Config(_Block):
    command: Literal["run", "sweep", "probe", "norms"]
    system: Literal["PE", "RF", "NS2D"] = "PE"
    grid: GridBlock | None = None
    physics: PhysicsBlock = Field(default_factory=PhysicsBlock)
    data: DataBlock = Field(default_factory=DataBlock)
    schedule: ScheduleBlock = Field(default_factory=ScheduleBlock)
    eps_list: list[float] | None = None
    s_list: list[float] = Field(default_factory=lambda: [0.5])
    check_consistency: bool = False
    probe: ProbeBlock = Field(default_factory=ProbeBlock)
    snapshots: list[str] = Field(default_factory=list)
    norms: list[NormBlock] = Field(default_factory=list)
    output: str | None = None

    @model_validator(mode="after")
    def _command_fields(self):
        if self.command in ("run", "sweep", "probe") and self.grid is None:
            raise ValueError(f"grid is required for the {self.command} command")
        if self.command == "sweep":
            if self.system == "NS2D":
                raise ValueError("sweep supports system PE or RF")
            if not self.eps_list or len(self.eps_list) < 3:
                raise ValueError("eps_list needs at least 3 values for a sweep")
        if self.command == "probe":
            if self.system == "NS2D":
                raise ValueError("probe supports system PE or RF")
            if not self.eps_list or len(self.eps_list) < 2:
                raise ValueError("eps_list needs at least 2 values for a probe")
        if self.command == "norms":
            if not self.snapshots:
                raise ValueError("snapshots must list at least one snapshot file for norms")
            if not self.norms:
                raise ValueError("norms must list at least one norm request")
        return self

    def data_spec(self) -> DataSpec:
        system = "RF" if self.system == "RF" else "PE"
        try:
            return DataSpec(system=system, **self.data.model_dump())
        except ValueError as exc:
            raise ConfigError(f"data: {exc}") from exc

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError(f"duplicate key {key!r} in config")
        out[key] = value
    return out


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "config"
        msg = err["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def parse_config(source, overrides: dict | None = None) -> Config:
    """Parse and validate a config given as a path, a JSON string or a dict.

    A ``manifest.json`` written by a previous run is accepted as well; its
    ``config`` entry is used.

    Raises:
        ConfigError: naming the offending key and the violated constraint.
    """
    if isinstance(source, dict):
        data = json.loads(json.dumps(source), object_pairs_hook=_reject_duplicates)
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            try:
                text = Path(text).read_text()
            except OSError:
                raise
        try:
            data = json.loads(text, object_pairs_hook=_reject_duplicates)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "config" in data and "command" not in data:
        data = data["config"]
    for key, value in (overrides or {}).items():
        node = data
        *path, last = key.split(".")
        for part in path:
            node = node.setdefault(part, {})
        node[last] = value
    try:
        cfg = Config.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc
    if cfg.command in ("run", "sweep") or cfg.command == "probe":
        cfg.data_spec()
    return cfg


def config_hash(cfg: Config) -> str:
    canonical = json.dumps(cfg.resolved(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def run_dir_for(cfg: Config, out_root=None) -> Path:
    root = out_root or cfg.output or os.environ.get("GEOFLOW_OUT") or "runs"
    return Path(root) / f"{cfg.command}-{config_hash(cfg)}"


def _write_config(cfg: Config, run_dir: Path):
    (run_dir / "config.json").write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True))


# -- commands ------------------------------------------------------------------


def _params(cfg: Config, eps: float | None = None) -> PhysParams:
    p = cfg.physics
    return PhysParams(nu=p.nu, F=p.F, eps=p.eps if eps is None else eps, nu_prime=p.nu_prime)


def _cmd_run(cfg: Config, run_dir: Path, workers: int) -> dict:
    grid = cfg.grid.build()
    params = _params(cfg)
    spec = cfg.data_spec()
    sched = cfg.schedule
    if cfg.system == "PE":
        qg_eps, _ = make_qg_data(grid, spec, params.eps, params.F)
        U0 = qg_eps + make_osc_data(grid, spec, params.eps, params.F)
        fields, kinds, role = {"U": U0}, ["PE"], "U"
    elif cfg.system == "RF":
        ubar = make_ubar_data(grid.horizontal(), spec)
        w0 = make_osc_data(grid, spec, params.eps)
        fields, kinds, role = {"U": lift_2d(ubar, grid) + w0}, ["RF"], "U"
    else:
        g2 = grid if grid.ndim == 2 else grid.horizontal()
        fields, kinds, role = {"UBAR": make_ubar_data(g2, spec)}, ["NS2D"], "UBAR"
    observers = {
        "energy": lambda st: sobolev_norm(st[role], 0.0) ** 2,
        "H0.5": lambda st: sobolev_norm(st[role], 0.5),
        "H1.5_sq": lambda st: sobolev_norm(st[role], 1.5) ** 2,
    }
    manifest = {"config": cfg.resolved(), "run_id": run_dir.name}
    record = integrate(
        FlowState(0.0, fields, params),
        sched.T,
        sched.dt.build(),
        observers,
        kinds,
        observe_every=sched.observe_every,
        snapshot_every=sched.snapshot_every,
        out_dir=run_dir,
        manifest=manifest,
    )
    times = np.asarray(record.times)
    h32 = record.series("H1.5_sq")
    blow = np.zeros_like(times)
    if len(times) > 1:
        blow[1:] = np.cumsum(0.5 * (h32[1:] + h32[:-1]) * np.diff(times))
    record.samples["blowup"] = blow.tolist()
    record.write(run_dir)
    return {"status": record.status, "steps": record.steps, "samples": len(times)}


def _cmd_sweep(cfg: Config, run_dir: Path, workers: int) -> dict:
    grid = cfg.grid.build()
    p = cfg.physics
    sched = cfg.schedule
    report = epsilon_sweep(
        grid,
        cfg.data_spec(),
        cfg.eps_list,
        sched.T,
        cfg.s_list,
        nu=p.nu,
        F=p.F,
        nu_prime=p.nu_prime,
        dt_policy=sched.dt.build(),
        observe_every=sched.observe_every,
        workers=workers,
        check_consistency=cfg.check_consistency,
    )
    report.manifest["config"] = cfg.resolved()
    report.write(run_dir)
    (run_dir / "manifest.json").write_text(
        json.dumps({"config": cfg.resolved(), "run_id": run_dir.name, "status": "ok"}, indent=2, sort_keys=True)
    )
    if report.flagged:
        raise DivergenceError(f"sweep points diverged: {report.flagged}", last_valid_time=None)
    return {"rows": len(report.rows)}


def _cmd_probe(cfg: Config, run_dir: Path, workers: int) -> dict:
    grid = cfg.grid.build()
    p = cfg.physics
    pb = cfg.probe
    F = p.F if cfg.system == "PE" else 1.0
    datum = make_probe_datum(grid, pb.j, cfg.system, F)
    report = strichartz_probe(
        grid, datum, cfg.eps_list, pb.targets, cfg.system, F, nu=p.nu, T=pb.T,
        n_times=pb.n_times, control=pb.control,
    )
    report.write(run_dir)
    (run_dir / "manifest.json").write_text(
        json.dumps({"config": cfg.resolved(), "run_id": run_dir.name, "status": "ok"}, indent=2, sort_keys=True)
    )
    return {"targets": len(pb.targets)}


def _cmd_norms(cfg: Config, run_dir: Path, workers: int) -> dict:
    snaps = [load_snapshot(path) for path in cfg.snapshots]
    fields = [f for f, _ in snaps]
    times = [h.get("time", 0.0) for _, h in snaps]
    rows = []
    for block in cfg.norms:
        req = block.build()
        if req.needs_series and len(fields) > 1:
            value, trunc = evaluate_request(req, fields, times)
        else:
            value, trunc = evaluate_request(req, [fields[-1]], [times[-1]])
        rows.append([req.kind, req.s, req.p, req.q, repr(value), repr(trunc)])
    with open(run_dir / "norms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "s", "p", "q", "value", "truncation-estimate"])
        writer.writerows(rows)
    (run_dir / "manifest.json").write_text(
        json.dumps({"config": cfg.resolved(), "run_id": run_dir.name, "status": "ok"}, indent=2, sort_keys=True)
    )
    return {"rows": len(rows)}


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "probe": _cmd_probe, "norms": _cmd_norms}


def _error_record(kind: str, exc: BaseException, code: int, run_dir: Path | None) -> dict:
    record = {"status": "error", "error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, DivergenceError):
        record["last_valid_time"] = exc.last_valid_time
    if run_dir is not None:
        record["run_dir"] = str(run_dir)
        try:
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True))
        except OSError:
            pass
    return record


def dispatch(cfg: Config, out_root=None, workers: int = 1) -> tuple[int, dict]:
    """Run the command described by ``cfg``; returns ``(exit_code, record)``."""
    run_dir = None
    try:
        run_dir = run_dir_for(cfg, out_root)
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_config(cfg, run_dir)
        info = _COMMANDS[cfg.command](cfg, run_dir, workers)
    except (ConfigError, ValidationError) as exc:
        return EXIT_CONFIG, _error_record("config", exc, EXIT_CONFIG, run_dir)
    except DivergenceError as exc:
        return EXIT_DIVERGED, _error_record("divergence", exc, EXIT_DIVERGED, run_dir)
    except OSError as exc:
        return EXIT_IO, _error_record("io", exc, EXIT_IO, run_dir)
    except (GeoflowError, ValueError) as exc:
        return EXIT_CONFIG, _error_record("invalid", exc, EXIT_CONFIG, run_dir)
    record = {"status": "ok", "run_dir": str(run_dir), **info}
    return EXIT_OK, record


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoflow", description=__doc__.splitlines()[0])
    parser.add_argument("command", nargs="?", choices=sorted(_COMMANDS), help="overrides the config's command")
    parser.add_argument("--config", required=True, help="JSON config or manifest.json of an earlier run")
    parser.add_argument("--out", default=None, help="output root (default: $GEOFLOW_OUT or ./runs)")
    parser.add_argument("--workers", type=int, default=1, help="parallel sweep points")
    parser.add_argument("--seed", type=int, default=None, help="overrides data.seed")
    parser.add_argument("--snapshot-every", type=int, default=None, help="snapshot every K observations")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.command:
        overrides["command"] = args.command
    if args.seed is not None:
        overrides["data.seed"] = args.seed
    if args.snapshot_every is not None:
        overrides["schedule.snapshot_every"] = args.snapshot_every
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        record = _error_record("config", exc, EXIT_CONFIG, None)
        print(json.dumps(record), file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        record = _error_record("io", exc, EXIT_IO, None)
        print(json.dumps(record), file=sys.stderr)
        return EXIT_IO
    code, record = dispatch(cfg, args.out, args.workers)
    stream = sys.stdout if code == EXIT_OK else sys.stderr
    print(json.dumps(record), file=stream)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
