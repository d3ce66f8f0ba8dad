"""Command-line front end: convergence studies, constants table, mesh dumps.

Subcommands
-----------
``study uniform``   solve on a sequence of uniformly refined meshes and write
                    a convergence table (one CSV row per level).
``study adaptive``  run the solve-estimate-mark-refine loop and write the run
                    log, per-step mesh dumps, and plot-ready curve files.
``constants``       print the penalty-constant table (k, C_ie, C_dt, alpha).
``dump-mesh``       print a uniform mesh in the plain-text element format.

All knobs live in a flat ``key = value`` config file and can be overridden by
flags of the same name.  Reruns with the same config produce byte-identical
output files.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .assembly import assemble, error_report, export_coo
from .basis import PenaltyConstants, TensorShape, compute_C_ie
from .estimators import EstimatorKind, adapt_loop
from .mesh import build_uniform, dump_mesh
from .problem import CASES, make_case
from .solver import SolveReport, source_iteration


def study_alpha(k_z: int) -> float:
    """Default penalty of the uniform convergence studies, 3/2 + sqrt(C_ie(k_z)).

    Below the provable coercivity threshold for k_z >= 1 (assembly warns),
    but positive definiteness is verified at factorization time.
    """
    return 1.5 + math.sqrt(compute_C_ie(k_z))


@dataclass(frozen=True)
class StudyConfig:
    """Flat configuration of a study run; defaults reproduce the shipped cases."""

    case: str = "smooth"
    k_z: int = 1
    k_mu: int = 1
    lam: float = 1.0
    levels: int = 2
    refinements: int = 5
    max_dofs: int = 20000
    estimator: str = "p_hier"
    theta: float = 0.75
    tol: float = 1e-10
    alpha: float | None = None
    max_seconds: float | None = None
    out_dir: str = "out"

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}, expected one of {CASES}")
        if not -1.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [-1, 1], got {self.lam}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.levels < 1:
            raise ValueError("levels must be at least 1")
        EstimatorKind(self.estimator)


# config file key -> dataclass field (lambda is a Python keyword)
_CONFIG_KEYS = [
    ("case", "case"), ("k_z", "k_z"), ("k_mu", "k_mu"), ("lambda", "lam"),
    ("levels", "levels"), ("refinements", "refinements"),
    ("max_dofs", "max_dofs"), ("estimator", "estimator"), ("theta", "theta"),
    ("tol", "tol"), ("alpha", "alpha"), ("max_seconds", "max_seconds"),
    ("out_dir", "out_dir"),
]
_FIELD_TYPES = {f.name: f.type for f in fields(StudyConfig)}


def parse_config(text: str) -> StudyConfig:
    """Parse the flat key = value format ('#' starts a comment)."""
    values = {}
    key_map = dict(_CONFIG_KEYS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in key_map:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        field = key_map[key]
        values[field] = _parse_value(field, val)
    return StudyConfig(**values)


def _parse_value(field: str, val: str):
    if val == "none":
        return None
    if field in ("k_z", "k_mu", "levels", "refinements", "max_dofs"):
        return int(val)
    if field in ("lam", "theta", "tol", "alpha", "max_seconds"):
        return float(val)
    return val


def format_config(config: StudyConfig) -> str:
    """Serialize a config; parse(format(c)) == c."""
    lines = []
    for key, field in _CONFIG_KEYS:
        val = getattr(config, field)
        if val is None:
            val = "none"
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


@dataclass
class UniformStudyResult:
    config: StudyConfig
    rows: list
    truncated: bool = False

    CSV_HEADER = "N,dofs,error_Vh,error_L2,rate_Vh,rate_L2,iterations"

    def csv_lines(self):
        yield self.CSV_HEADER
        prev = None
        for row in self.rows:
            rate_vh = rate_l2 = ""
            if prev is not None:
                rate_vh = f"{math.log2(prev['error_vh'] / row['error_vh']):.3f}"
                rate_l2 = f"{math.log2(prev['error_l2'] / row['error_l2']):.3f}"
            yield (f"{row['N']},{row['dofs']},{row['error_vh']:.6e},"
                   f"{row['error_l2']:.6e},{rate_vh},{rate_l2},{row['iterations']}")
            prev = row
        if self.truncated:
            yield "# truncated: time budget exceeded"


def run_uniform_study(config: StudyConfig, dump_matrix: str | None = None) -> UniformStudyResult:
    """Solve on levels ``levels .. levels + refinements`` of uniform refinement.

    Rows carry the error in the printed energy norm (error_Vh), the L2 error,
    and the broken-H1 error (key 'error_t', not part of the CSV schema);
    rates are log2 of consecutive ratios.
    """
    problem = make_case(config.case)
    shape = TensorShape(config.k_z, config.k_mu)
    alpha = config.alpha if config.alpha is not None else study_alpha(config.k_z)
    result = UniformStudyResult(config=config, rows=[])
    t0 = time.perf_counter()
    for step in range(config.refinements + 1):
        levels = config.levels + step
        mesh = build_uniform(problem.length, levels, problem.coefficients.as_dict())
        system = assemble(mesh, shape, lam=config.lam, alpha_F=alpha)
        if dump_matrix and step == 0:
            Path(dump_matrix).write_text(export_coo(system))
        u_h, report = source_iteration(system, problem, tol=config.tol)
        errors = error_report(u_h, problem)
        result.rows.append(dict(
            N=mesh.n_leaves, dofs=system.ndof, error_vh=errors["vh"],
            error_l2=errors["l2"], error_t=errors["broken_h1"],
            iterations=report.iterations, contraction=report.contraction))
        if config.max_seconds is not None and time.perf_counter() - t0 > config.max_seconds:
            result.truncated = step < config.refinements
            break
    return result


def _write(path: Path, lines) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def cmd_study_uniform(config: StudyConfig, dump_matrix: str | None = None) -> Path:
    result = run_uniform_study(config, dump_matrix=dump_matrix)
    out = Path(config.out_dir)
    tag = f"{config.case}_kz{config.k_z}_kmu{config.k_mu}_lam{config.lam:g}"
    _write(out / f"uniform_{tag}.csv", result.csv_lines())
    solve_lines = [SolveReport.csv_header()]
    for row in result.rows:
        solve_lines.append(
            f"{config.case},{config.k_z},{config.k_mu},{row['N']},{row['dofs']},"
            f"{row['iterations']},{row['contraction']:.6e},"
            f"{row['error_vh']:.6e},{row['error_l2']:.6e}")
    _write(out / f"solves_{tag}.csv", solve_lines)
    return out / f"uniform_{tag}.csv"


def cmd_study_adaptive(config: StudyConfig) -> Path:
    if config.k_z != config.k_mu:
        raise ValueError("adaptive studies use k = k_z = k_mu")
    problem = make_case(config.case)
    kind = EstimatorKind(config.estimator)
    run = adapt_loop(problem, config.k_z, kind, theta=config.theta,
                     max_dofs=config.max_dofs, initial_levels=config.levels,
                     tol=config.tol)
    out = Path(config.out_dir)
    tag = f"{config.case}_k{config.k_z}_{kind.value}"
    _write(out / f"adaptive_{tag}.csv", run.csv_lines())
    for i, mesh in enumerate(run.meshes):
        _write(out / f"mesh_{tag}_step{i:03d}.txt", dump_mesh(mesh).splitlines())

    # plot-ready curves: error, estimator, and a reference slope anchored at
    # the first error point (optimal rate -(k+1)/2 versus dofs)
    err_key = "error_l2" if kind is EstimatorKind.AVERAGING else "error_broken_h1"
    err_steps = [s for s in run.steps if getattr(s, err_key) is not None]
    if err_steps:
        _write(out / f"curve_{tag}_error.dat",
               [f"{s.dofs} {getattr(s, err_key):.6e}" for s in err_steps])
        rate = 0.5 * (config.k_z + 1)
        s0 = err_steps[0]
        anchor = getattr(s0, err_key) * s0.dofs ** rate
        _write(out / f"curve_{tag}_reference.dat",
               [f"{s.dofs} {anchor * s.dofs ** -rate:.6e}" for s in err_steps])
    _write(out / f"curve_{tag}_estimator.dat",
           [f"{s.dofs} {s.estimate:.6e}" for s in run.steps])
    return out / f"adaptive_{tag}.csv"


def cmd_constants(kmax: int) -> str:
    table = PenaltyConstants(kmax)
    lines = ["k,C_ie,C_dt,alpha"]
    for k, c_ie, c_dt, alpha in table.rows():
        lines.append(f"{k},{c_ie:.12g},{c_dt:.12g},{alpha:.12g}")
    return "\n".join(lines) + "\n"


def cmd_dump_mesh(length: float, levels: int) -> str:
    return dump_mesh(build_uniform(length, levels))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--case", choices=CASES)
    parser.add_argument("--k-z", type=int, dest="k_z")
    parser.add_argument("--k-mu", type=int, dest="k_mu")
    parser.add_argument("--lambda", type=float, dest="lam")
    parser.add_argument("--levels", type=int)
    parser.add_argument("--refinements", type=int)
    parser.add_argument("--max-dofs", type=int, dest="max_dofs")
    parser.add_argument("--estimator", choices=[k.value for k in EstimatorKind])
    parser.add_argument("--theta", type=float)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--max-seconds", type=float, dest="max_seconds")
    parser.add_argument("--out-dir", dest="out_dir")


def _config_from_args(args) -> StudyConfig:
    if args.config:
        config = parse_config(Path(args.config).read_text())
    else:
        config = StudyConfig()
    overrides = {}
    for f in fields(StudyConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    return replace(config, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slabdg",
        description="phase-space DG solver for slab-geometry radiative transfer")
    sub = parser.add_subparsers(dest="command", required=True)

    study = sub.add_parser("study", help="run a convergence study")
    study_sub = study.add_subparsers(dest="mode", required=True)
    uni = study_sub.add_parser("uniform", help="uniform refinement table")
    _add_config_flags(uni)
    uni.add_argument("--dump-matrix", help="write the first operator as 'row col value' triplets")
    ada = study_sub.add_parser("adaptive", help="adaptive refinement run")
    _add_config_flags(ada)

    con = sub.add_parser("constants", help="print penalty constants as CSV")
    con.add_argument("--kmax", type=int, default=6)

    dm = sub.add_parser("dump-mesh", help="print a uniform mesh as text")
    dm.add_argument("--levels", type=int, default=2)
    dm.add_argument("--length", type=float, default=1.0)
    dm.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "study":
            config = _config_from_args(args)
            if args.mode == "uniform":
                path = cmd_study_uniform(config, dump_matrix=args.dump_matrix)
            else:
                path = cmd_study_adaptive(config)
            print(path)
        elif args.command == "constants":
            sys.stdout.write(cmd_constants(args.kmax))
        elif args.command == "dump-mesh":
            text = cmd_dump_mesh(args.length, args.levels)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
        return 0
    except Exception as exc:  # CLI contract: diagnostic line + nonzero exit
        print(f"slabdg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
