"""Command-line interface.

Subcommands
-----------
convergence
    Tolerance sweep of the unit-square benchmark; writes per-run series
    and a summary table with observed rates.
offset
    Offset-cylinder flow, adaptive penalties versus a fixed penalty equal
    to the step size; writes both series.
sharp
    Sharply-modulated double-vortex forcing, adaptive versus constant time
    steps; writes both series (step size, error estimate, divergence, and
    velocity-change histories).
run
    Single run of any named problem with explicit settings.

Settings come from per-problem defaults, overridden by an optional flat
``key = value`` config file (``--config``), overridden by command-line
flags.  The effective configuration is echoed to ``<out>/config.echo`` in
the same format.  Exit codes: 0 on success, 2 for configuration errors,
3 for solver failures.

Meshes resolve in this order: an explicit ``--mesh`` path, a file of the
default name in ``$PENFLOW_MESH_DIR``, then the packaged mesh files.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration file, flag value, or combination."""


@dataclass(frozen=True)
class RunConfig:
    """Flat, echoable description of one run."""

    problem: str = "green_taylor"
    mesh: str = ""  # empty = problem default
    out: str = "out"
    mode: str = "constant"  # constant | adaptive
    convection: str = ""  # empty = problem default; lagged | extrapolated
    use_filter: int = -1  # -1 problem default, else 0/1
    adapt_eps: int = 1
    eps_fixed: float = 0.0  # used when adapt_eps = 0; 0 means "equal to dt"
    tol: float = 0.0  # 0 means problem default
    eps_min: float = 0.0
    eps_max: float = 0.0
    dt: float = 0.0
    t_end: float = 0.0
    nu: float = 0.0
    t_tol: float = 0.0
    t_tol_min: float = 0.0
    dt_min: float = 0.0
    dt_max: float = 0.0
    max_retry: int = 0
    deterministic: int = 1
    threads: int = 1


_INT_FIELDS = {"use_filter", "adapt_eps", "max_retry", "deterministic", "threads"}
_STR_FIELDS = {"problem", "mesh", "out", "mode", "convection"}


def parse_config(path) -> dict:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                if key in _STR_FIELDS:
                    out[key] = value
                elif key in _INT_FIELDS:
                    out[key] = int(value)
                else:
                    out[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    return out


def echo_config(cfg: RunConfig, path) -> None:
    """Write the effective configuration in re-parseable form."""
    with open(path, "w", encoding="ascii") as fh:
        for f in fields(cfg):
            value = getattr(cfg, f.name)
            if isinstance(value, float):
                value = repr(value)
            fh.write(f"{f.name} = {value}\n")


def build_config(args) -> RunConfig:
    """Merge defaults, config file, and flags (later wins)."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            cfg = replace(cfg, **parse_config(args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
    overrides = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    cfg = replace(cfg, **overrides)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.mode not in ("constant", "adaptive"):
        raise ConfigError(f"mode must be constant or adaptive, got {cfg.mode!r}")
    if cfg.convection not in ("", "lagged", "extrapolated"):
        raise ConfigError(f"unknown convection mode {cfg.convection!r}")
    for name in ("tol", "eps_min", "eps_max", "dt", "t_end", "nu",
                 "t_tol", "t_tol_min", "dt_min", "dt_max", "eps_fixed"):
        if getattr(cfg, name) < 0.0:
            raise ConfigError(f"{name} must be nonnegative (0 = use default)")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    if cfg.mode == "adaptive" and cfg.use_filter == 0:
        raise ConfigError("adaptive mode requires the time filter")


def _mesh_dir_candidates():
    env = os.environ.get("PENFLOW_MESH_DIR")
    if env:
        yield Path(env)
    yield Path(__file__).parent / "meshes"


_DEFAULT_MESH = {
    "offset_cylinders": "offset_cylinders_lc0.05.msh",
    "sharp_transition": "square2_n24.msh",
    "double_vortex": "square2_n24.msh",
}


def resolve_mesh(cfg: RunConfig):
    """Return a TriMesh for the configured problem."""
    from . import mesh as meshmod

    if cfg.mesh:
        path = Path(cfg.mesh)
        if not path.exists():
            for base in _mesh_dir_candidates():
                if (base / cfg.mesh).exists():
                    path = base / cfg.mesh
                    break
        if not path.exists():
            raise ConfigError(f"mesh file not found: {cfg.mesh}")
        return meshmod.load_msh(path)
    if cfg.problem == "green_taylor":
        return meshmod.unit_square_mesh(27)
    name = _DEFAULT_MESH.get(cfg.problem)
    if name is None:
        raise ConfigError(f"no default mesh for problem {cfg.problem!r}; pass --mesh")
    for base in _mesh_dir_candidates():
        if (base / name).exists():
            return meshmod.load_msh(base / name)
    raise ConfigError(f"default mesh {name} not found; set PENFLOW_MESH_DIR or pass --mesh")


def make_problem(cfg: RunConfig):
    from . import problems

    if cfg.problem not in problems.PROBLEMS:
        raise ConfigError(f"unknown problem {cfg.problem!r}; choose from "
                          + ", ".join(sorted(problems.PROBLEMS)))
    prob = problems.PROBLEMS[cfg.problem]()
    over = {}
    if cfg.nu > 0.0:
        over["nu"] = cfg.nu
    if cfg.dt > 0.0:
        over["dt"] = cfg.dt
    if cfg.t_end > 0.0:
        over["t_end"] = cfg.t_end
    if cfg.convection:
        over["convection"] = cfg.convection
    if cfg.use_filter in (0, 1):
        over["use_filter"] = bool(cfg.use_filter)
    pen_over = {}
    if cfg.tol > 0.0:
        pen_over["tol"] = cfg.tol
    if cfg.eps_min > 0.0:
        pen_over["eps_min"] = cfg.eps_min
    if cfg.eps_max > 0.0:
        pen_over["eps_max"] = cfg.eps_max
    if pen_over:
        from dataclasses import replace as dc_replace

        over["penalty"] = dc_replace(prob.penalty, **pen_over)
    if prob.time_control is not None or any(
        getattr(cfg, n) > 0.0 for n in ("t_tol", "t_tol_min", "dt_min", "dt_max")
    ) or cfg.max_retry > 0:
        from .stepper import TimeControlConfig

        base = prob.time_control
        tc = TimeControlConfig(
            t_tol=cfg.t_tol or (base.t_tol if base else 1e-4),
            t_tol_min=cfg.t_tol_min or (base.t_tol_min if base else 1e-5),
            max_retry=cfg.max_retry or (base.max_retry if base else 10),
            dt_min=cfg.dt_min or (base.dt_min if base else 1e-3),
            dt_max=cfg.dt_max or (base.dt_max if base else 1e-1),
            dt_init=cfg.dt or (base.dt_init if base else prob.dt),
            t_end=cfg.t_end or (base.t_end if base else prob.t_end),
        )
        over["time_control"] = tc
    if over:
        prob = prob.with_overrides(**over)
    return prob


def _series_columns(series) -> dict:
    names = ("step", "t", "k", "t_est", "retries", "accepted", "forced",
             "div_norm", "eps_min", "eps_max", "eps_avg", "violations",
             "u_l2", "ut_l2", "l2_err", "h1_err", "solve_res")
    return {n: series.rows[n] for n in names}


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out / "config.echo")
    return out


def cmd_run(cfg: RunConfig) -> int:
    from . import report, stepper

    prob = make_problem(cfg)
    mesh = resolve_mesh(cfg)
    out = _prepare_out(cfg)
    kwargs = dict(adapt_eps=bool(cfg.adapt_eps))
    if not cfg.adapt_eps:
        kwargs["eps_fixed"] = cfg.eps_fixed if cfg.eps_fixed > 0.0 else prob.dt
    if cfg.mode == "adaptive":
        series = stepper.run_adaptive_step(prob, mesh, **kwargs)
    else:
        series = stepper.run_constant_step(prob, mesh, **kwargs)
    report.emit_csv(out / "series.csv", _series_columns(series))
    rec = report.summarize_run(series, prob.penalty.tol)
    report.emit_csv(out / "summary.csv", report.sweep_table([rec]))
    print(f"{prob.name}: {rec.n_steps} steps, final divergence norm "
          f"{rec.div_norm_final:.3e}, mean penalty {rec.eps_avg_final:.3e}")
    print(f"wrote {out / 'series.csv'} and {out / 'summary.csv'}")
    return 0


def cmd_convergence(cfg: RunConfig) -> int:
    from . import report, stepper

    prob_base = make_problem(cfg)
    mesh = resolve_mesh(cfg)
    out = _prepare_out(cfg)
    from .assembly import build_cache

    cache = build_cache(mesh)
    tols = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    records = []
    for tol in tols:
        series = stepper.run_constant_step(prob_base, mesh, tol=tol, cache=cache)
        report.emit_csv(out / f"series_tol{tol:.0e}.csv", _series_columns(series))
        records.append(report.summarize_run(series, tol))
        print(f"tol {tol:.0e}: div {records[-1].div_norm_final:.3e}, "
              f"eps_avg {records[-1].eps_avg_final:.3e}, "
              f"max L2 err {records[-1].max_l2_err:.3e}")
    table = report.sweep_table(records)
    report.emit_csv(out / "summary.csv", table)
    eps_min = prob_base.penalty.eps_min
    if abs(records[-1].eps_avg_final - eps_min) <= 1e-12 * eps_min:
        print(f"tightest tolerance pinned every penalty at the lower bound {eps_min:.1e}")
    print(f"wrote {out / 'summary.csv'}")
    return 0


def cmd_offset(cfg: RunConfig) -> int:
    from . import report, stepper
    from .assembly import build_cache

    if not cfg.problem or cfg.problem == "green_taylor":
        cfg = replace(cfg, problem="offset_cylinders")
    prob = make_problem(cfg)
    mesh = resolve_mesh(cfg)
    out = _prepare_out(cfg)
    cache = build_cache(mesh)
    adaptive = stepper.run_constant_step(prob, mesh, cache=cache)
    report.emit_csv(out / "series_adaptive_eps.csv", _series_columns(adaptive))
    fixed = stepper.run_constant_step(prob, mesh, cache=cache, adapt_eps=False,
                                      eps_fixed=prob.dt)
    report.emit_csv(out / "series_fixed_eps.csv", _series_columns(fixed))
    max_a = float(adaptive.accepted("div_norm").max())
    max_f = float(fixed.accepted("div_norm").max())
    print(f"max divergence norm: adaptive penalties {max_a:.3e}, "
          f"fixed penalty {max_f:.3e} (ratio {max_f / max_a:.1f}x)")
    print(f"wrote {out / 'series_adaptive_eps.csv'} and {out / 'series_fixed_eps.csv'}")
    return 0


def cmd_sharp(cfg: RunConfig) -> int:
    import numpy as np

    from . import report, stepper
    from .assembly import build_cache

    if not cfg.problem or cfg.problem == "green_taylor":
        cfg = replace(cfg, problem="sharp_transition")
    prob = make_problem(cfg)
    mesh = resolve_mesh(cfg)
    out = _prepare_out(cfg)
    cache = build_cache(mesh)
    adaptive = stepper.run_adaptive_step(prob, mesh, cache=cache)
    report.emit_csv(out / "series_adaptive_dt.csv", _series_columns(adaptive))
    constant = stepper.run_constant_step(prob, mesh, cache=cache)
    report.emit_csv(out / "series_constant_dt.csv", _series_columns(constant))
    ks = adaptive.accepted("k")
    print(f"adaptive: {int(adaptive.rows['accepted'].sum())} accepted steps, "
          f"{adaptive.n_rejections} rejections, k in [{ks.min():.4f}, {ks.max():.4f}]")
    print(f"constant: {int(constant.rows['accepted'].sum())} steps of {prob.dt}")
    print(f"max error estimate: adaptive "
          f"{float(np.nanmax(adaptive.rows['t_est'])):.3e}, constant "
          f"{float(np.nanmax(constant.rows['t_est'])):.3e}")
    print(f"wrote {out / 'series_adaptive_dt.csv'} and {out / 'series_constant_dt.csv'}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="penflow",
        description="incompressible flow with element-adaptive divergence penalties",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--mesh", help="mesh file (.msh); overrides the problem default")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--tol", type=float, help="divergence tolerance")
    common.add_argument("--dt", type=float, help="time step (initial step in adaptive mode)")
    common.add_argument("--ttol", dest="t_tol", type=float, help="truncation-error tolerance")
    common.add_argument("--mode", choices=("constant", "adaptive"), help="time-stepping mode")
    common.add_argument("--deterministic", dest="deterministic", action="store_const",
                        const=1, help="force single-threaded, bitwise-reproducible runs")
    common.add_argument("--threads", type=int, help="BLAS/OpenMP thread count")
    common.add_argument("--t-end", dest="t_end", type=float, help="final time")
    common.add_argument("--nu", type=float, help="viscosity")
    common.add_argument("--eps-min", dest="eps_min", type=float, help="penalty lower bound")
    common.add_argument("--eps-max", dest="eps_max", type=float, help="penalty upper bound")

    p_run = sub.add_parser("run", parents=[common], help="single run of a named problem")
    p_run.add_argument("--problem", choices=("green_taylor", "offset_cylinders",
                                             "sharp_transition", "double_vortex"))
    p_run.add_argument("--no-adapt-eps", dest="adapt_eps", action="store_const", const=0,
                       help="freeze the penalty parameters")
    p_run.add_argument("--eps-fixed", dest="eps_fixed", type=float,
                       help="fixed penalty value (default: the step size)")
    sub.add_parser("convergence", parents=[common],
                   help="tolerance sweep on the unit-square benchmark")
    sub.add_parser("offset", parents=[common],
                   help="offset cylinders: adaptive vs fixed penalty")
    sub.add_parser("sharp", parents=[common],
                   help="sharp transitions: adaptive vs constant step")
    return parser


_COMMANDS = {
    "run": cmd_run,
    "convergence": cmd_convergence,
    "offset": cmd_offset,
    "sharp": cmd_sharp,
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    threads = getattr(args, "threads", None)
    if getattr(args, "deterministic", None) == 1:
        threads = 1
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    try:
        cfg = build_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver and I/O failures
        from .stepper import SolverError

        if isinstance(exc, SolverError):
            print(f"solver error: {exc}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
