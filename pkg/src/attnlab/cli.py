"""Command-line entry point: ``attnlab <subcommand> ...``.

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .clustering import detect_times, reference_centers
from .dynamics import MODES, integrate, read_trajectory_csv
from .errors import AttnLabError
from .experiments import (
    ScenarioConfig,
    build_perturbed,
    build_triple,
    canonical_json,
    load_manifest_config,
    run_scenario,
    write_result,
)
from .linalg import eig, numerical_rank, read_matrix, singular_values, spectral_gap
from .perturbation import generate_init
from .transport import wasserstein
from . import verify as verify_mod


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "config": dict(type=Path, help="scenario config (JSON)"),
        "seed": dict(type=int, help="override the initialization seed"),
        "out": dict(type=Path, help="output directory"),
        "step": dict(type=float, help="RK4 step"),
        "delta": dict(type=float, help="tube radius delta"),
        "mode": dict(choices=MODES, help="integration mode"),
        "horizon": dict(type=float, help="final time"),
        "threads": dict(type=int, help="worker threads (default: ATTNLAB_THREADS or 1)"),
    }
    for name in names:
        p.add_argument(f"--{name}", **flags[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one scenario config and write its trajectory")
    _common(p, "config", "seed", "out", "step", "mode", "horizon")
    p.add_argument("--perturbed", action="store_true", help="use the perturbed triple")

    p = sub.add_parser("phase-diagram", help="T_delta and T* across a log-spaced eps grid")
    _common(p, "config", "seed", "out", "step", "delta", "horizon", "threads")

    p = sub.add_parser("clusters", help="cluster centers and characteristic times of a trajectory CSV")
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--reference", type=Path, help="trajectory supplying the centers (default: same)")
    p.add_argument("--t-ref", type=float, default=20.0)
    p.add_argument("--merge-radius", type=float, default=1e-2)
    p.add_argument("--exit-factor", type=float, default=1.0)
    _common(p, "delta", "out")

    p = sub.add_parser("wasserstein", help="W_p between two point-cloud files")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--p", type=float, default=2.0)

    p = sub.add_parser("spectrum", help="eigenvalues, singular values, rank and spectral gap of a matrix file")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--rel-tol", type=float, default=1e-8)

    p = sub.add_parser("bounds", help="stability bound against measured W_2 (bound_comparison config)")
    _common(p, "config", "seed", "out")

    p = sub.add_parser("scenario", help="run a scenario config, write report and manifest")
    _common(p, "config", "seed", "out", "step", "delta", "horizon", "threads")
    p.add_argument("--manifest", type=Path, help="rerun the config echoed in a manifest")

    p = sub.add_parser("verify", help="run the invariant suites")
    p.add_argument("--suite", choices=("all",) + verify_mod.SUITES, default="all")
    p.add_argument("--inject-fault", metavar="INVARIANT", help=argparse.SUPPRESS)
    return parser


def _load_config(args, parser, default: ScenarioConfig | None = None) -> ScenarioConfig:
    if getattr(args, "manifest", None) is not None:
        cfg = load_manifest_config(args.manifest)
    elif args.config is not None:
        cfg = ScenarioConfig.load(args.config)
    elif default is not None:
        cfg = default
    else:
        parser.error("--config is required")
    # flag overrides beat config values
    data = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        data["init"]["seed"] = args.seed
    for key in ("step", "delta", "horizon"):
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    if getattr(args, "threads", None) is not None:
        data["params"] = {**data["params"], "threads": args.threads}
    return ScenarioConfig.from_dict(data)


def _out_dir(args, cfg: ScenarioConfig | None, default: str) -> Path:
    if args.out is not None:
        return args.out
    if cfg is not None and cfg.output.get("dir"):
        return Path(cfg.output["dir"])
    return Path(default)


def _emit(obj, out: Path | None, filename: str) -> None:
    text = canonical_json(obj)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _summary(report: dict) -> None:
    for name, check in sorted(report.get("checks", {}).items()):
        print(f"{'PASS' if check['passes'] else 'FAIL'}  {name}")


def cmd_simulate(args, parser) -> int:
    cfg = _load_config(args, parser)
    triple = build_triple(cfg.triple)
    if args.perturbed:
        triple, _ = build_perturbed(triple, cfg.perturbation)
    mode = args.mode or cfg.params.get("mode", "rescaled")
    traj = integrate(triple, generate_init(cfg.init), mode, cfg.step, cfg.horizon, cfg.record_every)
    out = _out_dir(args, cfg, f"out/{cfg.name}")
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    manifest = {"config": cfg.to_dict(), "seed": cfg.seed, "mode": mode, "perturbed": args.perturbed}
    (out / "manifest.json").write_text(canonical_json(manifest), encoding="utf-8")
    print(out / "trajectory.csv")
    return 0


def _default_phase_diagram_config() -> ScenarioConfig:
    return ScenarioConfig.from_dict({
        "name": "phase_diagram",
        "scenario": "phase_diagram",
        "triple": {"constructor": "identity", "d": 2},
        "init": {"kind": "uniform_hypercube", "n": 20, "d": 2, "seed": 1},
        "horizon": 500.0,
    })


def cmd_phase_diagram(args, parser) -> int:
    cfg = _load_config(args, parser, default=_default_phase_diagram_config())
    if cfg.scenario != "phase_diagram":
        raise AttnLabError(f"config scenario is {cfg.scenario!r}, expected 'phase_diagram'")
    result = run_scenario(cfg)
    out = _out_dir(args, cfg, "out/phase_diagram")
    write_result(result, cfg, out)
    sys.stdout.write(result.tables["phase_diagram.csv"])
    return 0


def cmd_clusters(args, parser) -> int:
    traj = read_trajectory_csv(args.trajectory, mode="rescaled")
    ref = read_trajectory_csv(args.reference, mode="rescaled") if args.reference else traj
    centers, assignment = reference_centers(ref, args.t_ref, args.merge_radius)
    delta = 0.1 if args.delta is None else args.delta
    rep = detect_times(traj, centers, delta, args.exit_factor)
    rep.assignment = assignment
    _emit(rep.to_dict(), args.out, "clusters.json")
    return 0


def cmd_wasserstein(args, parser) -> int:
    value = wasserstein(read_matrix(args.a), read_matrix(args.b), args.p)
    print(canonical_json({"p": args.p, "W": value}), end="")
    return 0


def cmd_spectrum(args, parser) -> int:
    m = read_matrix(args.input)
    spec = eig(m)
    gap = spectral_gap(m)
    out = {
        "eigenvalues": [[float(z.real), float(z.imag)] for z in spec.eigenvalues],
        "singular_values": singular_values(m),
        "numerical_rank": numerical_rank(m, args.rel_tol),
        "spectral_gap": {"lambda1": [gap.lambda1.real, gap.lambda1.imag], "gap": gap.gap, "lambda1_real": gap.lambda1_real},
        "has_dual_basis": spec.has_dual_basis,
    }
    print(canonical_json(out), end="")
    return 0


def cmd_bounds(args, parser) -> int:
    cfg = _load_config(args, parser)
    if cfg.scenario != "bound_comparison":
        raise AttnLabError(f"config scenario is {cfg.scenario!r}, expected 'bound_comparison'")
    result = run_scenario(cfg)
    _emit(result.report["bounds"], args.out, "bounds.json")
    return 0


def cmd_scenario(args, parser) -> int:
    cfg = _load_config(args, parser)
    result = run_scenario(cfg)
    out = _out_dir(args, cfg, f"out/{cfg.name}")
    for path in write_result(result, cfg, out):
        print(path)
    _summary(result.report)
    return 0


def cmd_verify(args, parser) -> int:
    names = {inv.name for inv in verify_mod.INVARIANTS}
    if args.inject_fault is not None and args.inject_fault not in names:
        parser.error(f"unknown invariant {args.inject_fault!r}; choose from {sorted(names)}")
    results = verify_mod.run(args.suite, args.inject_fault)
    width = max(len(inv.name) for inv, _, _ in results)
    print(f"{'suite':<11}{'invariant':<{width + 2}}status  detail")
    for inv, ok, detail in results:
        print(f"{inv.suite:<11}{inv.name:<{width + 2}}{'PASS' if ok else 'FAIL':<8}{detail}")
    failed = [inv.name for inv, ok, _ in results if not ok]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} invariants hold")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "phase-diagram": cmd_phase_diagram,
    "clusters": cmd_clusters,
    "wasserstein": cmd_wasserstein,
    "spectrum": cmd_spectrum,
    "bounds": cmd_bounds,
    "scenario": cmd_scenario,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (AttnLabError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"attnlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
