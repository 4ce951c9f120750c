"""Command-line driver: reproducible solve / verify-game / convergence / identities runs.

Exit codes: 0 success, 1 usage or configuration error, 2 completed with
findings (audit violations, failed saddle margins, non-monotone convergence).
Every command writes the data artifacts as CSV plus a manifest listing the
resolved configuration and a SHA-256 digest of each artifact; identical
config and seed reproduce byte-identical data artifacts for any thread
count.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_run_config
from .game import (
    FixedTimeRule,
    FirstExitRule,
    NeverRule,
    ThresholdRule,
    dynkin_oracle,
    game_from_spec,
    saddle_check,
)
from .grid import MonotonicityViolation, write_grid_csv
from .identities import clamp_identity_suite, median_identity_suite, ordering_suite
from .problem import (
    ObstacleOrderError,
    ProblemValidationError,
    validate_problem,
)
from .solver import (
    MANUFACTURED_PROFILES,
    NonConvergenceError,
    convergence_study,
    solve_vi,
    write_audit_csv,
    write_solution_csv,
)

USAGE_ERROR, FINDINGS = 1, 2


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _flatten(prefix: str, obj, out: list):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    else:
        out.append((prefix, obj))


def write_manifest(out_dir: Path, command: str, resolved: dict, artifacts: list, seed=None) -> Path:
    lines = [
        f"command = {command}",
        f"version = {__version__}",
        f"timestamp = {datetime.datetime.now(datetime.timezone.utc).isoformat()}",
    ]
    if seed is not None:
        lines.append(f"seed = {seed}")
    lines.append("config:")
    flat: list = []
    _flatten("", resolved, flat)
    for key, value in flat:
        if isinstance(value, float):
            value = f"{value:.17g}"
        lines.append(f"  {key} = {value}")
    lines.append("artifacts:")
    for name in artifacts:
        lines.append(f"  {name} sha256={_sha256(out_dir / name)}")
    path = out_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _resolved_config(run, extra: dict) -> dict:
    inst = run.instance
    return {
        "instance": inst.name,
        "lattice_nodes": list(inst.lattice.counts),
        "solver": {
            "tolerance": inst.solve.tolerance,
            "max_iterations": inst.solve.max_iterations,
            "sign": inst.solve.sign,
            "relaxation": inst.solve.relaxation,
            "residual_form": inst.solve.residual_form,
            "dirichlet": "default" if inst.solve.dirichlet == "default" else (
                "custom" if inst.solve.dirichlet is not None else "none"
            ),
            "contact_eps": inst.solve.contact_eps or 0.0,
        },
        **extra,
    }


def _load(args) -> "RunConfig":
    if not args.config:
        raise ConfigError("--config is required")
    run = load_run_config(args.config)
    solve_overrides = {}
    if getattr(args, "tolerance", None) is not None:
        solve_overrides["tolerance"] = args.tolerance
    if getattr(args, "max_iterations", None) is not None:
        solve_overrides["max_iterations"] = args.max_iterations
    if getattr(args, "sign", None) is not None:
        solve_overrides["sign"] = args.sign
    if solve_overrides:
        run.instance.solve = replace(run.instance.solve, **solve_overrides)
    if getattr(args, "nodes", None) is not None:
        from .presets import load_instance

        nodes = tuple(int(n) for n in args.nodes.split(","))
        preset = run.raw.get("instance", {}).get("preset")
        if preset:
            solve = run.instance.solve
            run.instance = load_instance(preset, nodes=nodes)
            run.instance.solve = solve
        else:
            from .grid import Lattice

            run.instance.lattice = Lattice(
                run.instance.spec.box.lower, run.instance.spec.box.upper, nodes
            )
    for key in ("paths", "dt", "horizon", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(run.game, key if key != "paths" else "paths", val)
    if getattr(args, "contact_eps", None) is not None:
        run.game.contact_eps = args.contact_eps
    if getattr(args, "x0", None) is not None:
        run.game.x0 = np.atleast_1d(np.asarray([float(v) for v in args.x0.split(",")]))
    return run


def cmd_solve(args) -> int:
    run = _load(args)
    inst = run.instance
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    validate_problem(inst.spec)
    report = solve_vi(inst.spec, inst.lattice, inst.solve)
    write_solution_csv(report, out_dir / "solution.csv")
    write_audit_csv(report, out_dir / "audit.csv")
    (out_dir / "run.txt").write_text(report.manifest_text())
    write_manifest(
        out_dir,
        "solve",
        _resolved_config(run, {}),
        ["solution.csv", "audit.csv", "run.txt"],
    )
    print(report.manifest_text())
    if not report.vi_audit.passed:
        print("audit violations found", file=sys.stderr)
        return FINDINGS
    return 0


def _parse_alternatives(text: str, box):
    rules = []
    for item in text.split(","):
        parts = item.strip().split(":")
        kind = parts[0]
        if kind == "never":
            rules.append(NeverRule())
        elif kind == "fixed":
            rules.append(FixedTimeRule(float(parts[1])))
        elif kind == "threshold":
            rules.append(ThresholdRule(int(parts[1]), float(parts[2]), parts[3]))
        elif kind == "exit":
            rules.append(FirstExitRule(box))
        else:
            raise ConfigError(f"unknown alternative rule '{item}'")
    return rules


def cmd_verify_game(args) -> int:
    run = _load(args)
    inst = run.instance
    if not inst.spec.is_uncontrolled:
        print(
            "error: verify-game requires singleton control sets "
            "(the stopping-game setting)",
            file=sys.stderr,
        )
        return USAGE_ERROR
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    validate_problem(inst.spec)
    solve_report = solve_vi(inst.spec, inst.lattice, inst.solve)

    from .game import MCConfig

    mc = MCConfig(
        path_count=run.game.paths,
        dt=run.game.dt,
        horizon=run.game.horizon,
        seed=run.game.seed,
        antithetic=run.game.antithetic,
    )
    sigma = inst.game.sigma if inst.game is not None else None
    model, _ = game_from_spec(inst.spec, sigma=sigma)
    eps = run.game.contact_eps
    if eps is None:
        eps = solve_report.contact_eps
    alternatives = None
    if args.alternatives:
        alternatives = _parse_alternatives(args.alternatives, inst.spec.box)
    saddle = saddle_check(
        model,
        inst.spec,
        solve_report.solution,
        run.game.x0,
        mc,
        contact_eps=eps,
        alternatives_theta=alternatives,
        alternatives_tau=alternatives,
        workers=args.threads,
    )

    with open(out_dir / "saddle.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["kind", "side", "rule", "mean", "std_error", "diff", "se_combined",
             "margin", "ok", "expected_slack", "stop_frac_theta", "stop_frac_tau"]
        )
        base = saddle.baseline
        writer.writerow(
            ["baseline", "", "hitting", f"{base.mean:.17g}", f"{base.std_error:.17g}",
             f"{saddle.value_diff:.17g}", "", f"{saddle.value_margin:.17g}",
             saddle.value_ok, "", f"{base.stop_stats.theta_fraction:.17g}",
             f"{base.stop_stats.tau_fraction:.17g}"]
        )
        for r in saddle.rows:
            writer.writerow(
                ["alternative", r.side, r.description, f"{r.mean:.17g}",
                 f"{r.std_error:.17g}", f"{r.diff:.17g}", f"{r.se_combined:.17g}",
                 f"{r.margin:.17g}", r.ok,
                 "" if r.expected_slack is None else f"{r.expected_slack:.17g}",
                 "", ""]
            )
    write_manifest(
        out_dir,
        "verify-game",
        _resolved_config(
            run,
            {
                "game": {
                    "x0": [float(v) for v in run.game.x0],
                    "paths": mc.path_count,
                    "dt": mc.dt,
                    "horizon": mc.horizon,
                    "seed": mc.seed,
                    "antithetic": mc.antithetic,
                    "contact_eps": eps,
                    "threads": args.threads,
                }
            },
        ),
        ["saddle.csv"],
        seed=mc.seed,
    )
    print(saddle.summary())
    return 0 if saddle.passed else FINDINGS


def cmd_convergence(args) -> int:
    if args.levels < 2:
        print("error: --levels must be at least 2", file=sys.stderr)
        return USAGE_ERROR
    profile = args.profile
    if args.config:
        run = load_run_config(args.config)
        profile = run.raw.get("convergence", {}).get("profile", profile)
    if profile not in MANUFACTURED_PROFILES:
        print(
            f"error: unknown profile '{profile}'; available: "
            + ", ".join(sorted(MANUFACTURED_PROFILES)),
            file=sys.stderr,
        )
        return USAGE_ERROR
    min_order = args.min_order
    if min_order is None:
        min_order = 0.5 if "contact" in profile else 0.8
    rows = convergence_study(profile, args.levels)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "convergence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nodes", "h", "interior_error", "observed_order"])
        for row in rows:
            writer.writerow(
                ["x".join(str(n) for n in row["nodes"]), f"{row['h']:.17g}",
                 f"{row['error']:.17g}",
                 "" if row["order"] is None else f"{row['order']:.17g}"]
            )
    write_manifest(
        out_dir,
        "convergence",
        {"profile": profile, "levels": args.levels, "min_order": min_order},
        ["convergence.csv"],
    )
    print(f"profile {profile}:")
    for row in rows:
        order = "-" if row["order"] is None else f"{row['order']:.3f}"
        print(f"  nodes={row['nodes']} h={row['h']:.4g} error={row['error']:.4e} order={order}")
    errors = [row["error"] for row in rows]
    decreasing = all(e2 < e1 for e1, e2 in zip(errors, errors[1:]))
    terminal_order = rows[-1]["order"]
    if decreasing and terminal_order >= min_order:
        return 0
    print(
        f"convergence findings: decreasing={decreasing}, "
        f"terminal order {terminal_order:.3f} (required {min_order})",
        file=sys.stderr,
    )
    return FINDINGS


def cmd_identities(args) -> int:
    suites = {
        "median_identity": median_identity_suite(args.trials, args.seed),
        "clamp_identity": clamp_identity_suite(args.trials, args.seed + 1),
        "hamiltonian_ordering": ordering_suite(args.trials, args.seed + 2),
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "identities.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["suite", "cases", "max_deviation", "passed"])
        for name, res in suites.items():
            writer.writerow([name, res.cases, f"{res.max_deviation:.17g}", res.passed])
    write_manifest(
        out_dir,
        "identities",
        {"trials": args.trials, "seed": args.seed},
        ["identities.csv"],
        seed=args.seed,
    )
    ok = True
    for name, res in suites.items():
        print(f"{name}: cases={res.cases} max deviation={res.max_deviation:.3e}")
        ok = ok and res.passed
    return 0 if ok else FINDINGS


def cmd_export_grid(args) -> int:
    run = _load(args)
    inst = run.instance
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nodes = inst.lattice.nodes()
    from .grid import GridFunction

    if args.field == "psi_upper":
        values = inst.spec.obstacles.psi_upper(nodes)
    elif args.field == "psi_lower":
        values = inst.spec.obstacles.psi_lower(nodes)
    elif args.field == "cost":
        u1 = inst.spec.controls[0].points[0]
        u2 = inst.spec.controls[1].points[0]
        values = inst.spec.coefficients.running_cost(nodes, u1, u2)
    elif args.field == "exact":
        if inst.exact is None:
            print("error: this instance has no exact solution", file=sys.stderr)
            return USAGE_ERROR
        values = inst.exact.values
    else:  # oracle
        values = dynkin_oracle(
            inst.spec, inst.lattice, dirichlet=inst.solve.dirichlet
        ).values
    name = f"{args.field}.csv"
    write_grid_csv(GridFunction(inst.lattice, np.asarray(values, dtype=float)), out_dir / name)
    write_manifest(out_dir, "export-grid", _resolved_config(run, {"field": args.field}), [name])
    print(f"wrote {out_dir / name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obstaclegames",
        description="double-obstacle Isaacs solver and stopping-game verifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, game=False):
        p.add_argument("--config", help="instance definition file (TOML)")
        p.add_argument("--out-dir", default="out", help="artifact directory")
        p.add_argument("--tolerance", type=float, default=None)
        p.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
        p.add_argument("--sign", choices=["plus", "minus"], default=None)
        p.add_argument("--nodes", default=None, help="lattice node counts, e.g. 241 or 41,41")
        p.add_argument("--threads", type=int, default=1)
        if game:
            p.add_argument("--paths", type=int, default=None)
            p.add_argument("--dt", type=float, default=None)
            p.add_argument("--horizon", type=float, default=None)
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--contact-eps", dest="contact_eps", type=float, default=None)
            p.add_argument("--x0", default=None, help="start point, comma separated")
            p.add_argument(
                "--alternatives",
                default=None,
                help="comma list: never | fixed:T | threshold:AXIS:LEVEL:ge|le | exit",
            )

    p_solve = sub.add_parser("solve", help="solve the double-obstacle equation")
    common(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_game = sub.add_parser("verify-game", help="Monte Carlo value and saddle checks")
    common(p_game, game=True)
    p_game.set_defaults(func=cmd_verify_game)

    p_conv = sub.add_parser("convergence", help="manufactured-solution refinement study")
    p_conv.add_argument("--profile", default="smooth-1d-interior")
    p_conv.add_argument("--config", default=None)
    p_conv.add_argument("--levels", type=int, default=3)
    p_conv.add_argument("--min-order", dest="min_order", type=float, default=None)
    p_conv.add_argument("--out-dir", default="out")
    p_conv.set_defaults(func=cmd_convergence)

    p_ident = sub.add_parser("identities", help="randomised pointwise identity suites")
    p_ident.add_argument("--trials", type=int, default=100_000)
    p_ident.add_argument("--seed", type=int, default=0)
    p_ident.add_argument("--out-dir", default="out")
    p_ident.set_defaults(func=cmd_identities)

    p_exp = sub.add_parser("export-grid", help="evaluate a named field onto the lattice CSV")
    common(p_exp)
    p_exp.add_argument(
        "--field",
        choices=["psi_upper", "psi_lower", "cost", "exact", "oracle"],
        required=True,
    )
    p_exp.set_defaults(func=cmd_export_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ObstacleOrderError as exc:
        print(f"error: obstacle order violated: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ProblemValidationError as exc:
        print(f"error: {exc}\n{exc.report.summary()}", file=sys.stderr)
        return USAGE_ERROR
    except MonotonicityViolation as exc:
        print(f"error: MonotonicityViolation: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
