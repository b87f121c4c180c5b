"""Command-line entry point: ``byzopt <command> ...``.

Commands
    generate-graph   write a robust graph in the edge-list text format
    run              simulate one config file, then certify and check it
    experiment       seeded runs of a named preset
    certify          rebuild the certificate for a saved trajectory

Every command exits with status 0 only when all hard invariant checks pass
(``generate-graph`` always passes once the graph is written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .analysis import (
    CertificateError,
    InfeasibleError,
    certify,
    consensus_diameter,
    proof_constants,
    run_checks,
)
from .graph import generate_robust_graph
from .harness import PRESETS, compute_metrics, load_dataset, parse_config, run_experiment, with_overrides, write_metrics
from .protocol import Trajectory, regular_minimizer, run_rounds

log = logging.getLogger("byzopt")


def _report(cert, checks, traj, config) -> dict:
    report = {
        "certificate": cert.to_dict(),
        "checks": [asdict(c) for c in checks],
        "passed": all(c.passed for c in checks),
        "series": {
            "consensus_y": [consensus_diameter(Y)[1] for Y in traj.y],
            "containment": cert.containment.tolist(),
        },
    }
    try:
        pc = proof_constants(cert, c1=config.c1, c2=config.c2)
        report["constants"] = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(pc).items()
        }
    except InfeasibleError as exc:
        report["constants"] = {"error": str(exc)}
    return report


def _print_checks(checks) -> None:
    for c in checks:
        status = "ok" if c.passed else f"FAILED ({c.violations} violations, worst margin {c.worst_margin:.3g})"
        print(f"  {c.name:<28} {status}")


def cmd_generate_graph(args) -> int:
    topo = generate_robust_graph(args.nodes, args.robustness, seed=args.seed, degree=args.degree)
    topo.save(args.out)
    print(f"wrote {args.out}: {topo.n} nodes, {len(topo.edges)} directed edges")
    return 0


def cmd_run(args) -> int:
    config = parse_config(args.config)
    for note in config.validate():
        log.warning(note)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = run_rounds(config, warn=False)
    traj.to_csv(out / "trajectory.csv")
    x_star = regular_minimizer(config)
    write_metrics(out / "metrics.csv", compute_metrics(traj, config.oracles, x_star))
    cert = certify(traj, config, x_star=x_star)
    checks = run_checks(traj, config, cert)
    (out / "certificate.json").write_text(json.dumps(_report(cert, checks, traj, config), indent=2))
    print(f"{config.horizon} rounds, {len(traj.regular)} regular agents, s* = {cert.s_star_min:.6g}")
    _print_checks(checks)
    return 0 if all(c.passed for c in checks) else 1


def cmd_experiment(args) -> int:
    if args.preset not in PRESETS:
        print(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}", file=sys.stderr)
        return 2
    dataset = load_dataset(args.dataset) if args.dataset else None
    preset = PRESETS[args.preset]
    if args.horizon is not None:
        preset = with_overrides(preset, horizon=args.horizon)
    result = run_experiment(preset, runs=args.runs, seed=args.seed, out_dir=args.out, dataset=dataset)
    s = result.summary
    print(f"{args.preset}: {len(result.runs)} runs written to {args.out}")
    print(f"  final gap of states below gap of auxiliary points in {s['states_beat_auxiliary']}/{len(result.runs)} runs")
    for r in result.runs:
        if not r.passed:
            print(f"  run {r.index}:")
            _print_checks(r.checks)
    print(f"  all checks passed: {result.passed}")
    return 0 if result.passed else 1


def cmd_certify(args) -> int:
    config = parse_config(args.config)
    traj = Trajectory.from_csv(args.trajectory, sorted(config.adversaries.members))
    if tuple(traj.regular) != tuple(config.regular):
        print("trajectory agents do not match the config's regular agents", file=sys.stderr)
        return 2
    cert = certify(traj, config)
    checks = run_checks(traj, config, cert)
    Path(args.out).write_text(json.dumps(_report(cert, checks, traj, config), indent=2))
    print(f"s* = {cert.s_star_min:.6g} at epsilon = {cert.best_epsilon:.4g}")
    _print_checks(checks)
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byzopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-graph", help="write a robust graph")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--robustness", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--degree", type=int, default=None, help="edges per attached node (default 2r-1)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_graph)

    r = sub.add_parser("run", help="simulate one config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir", default="run_output")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="seeded runs of a preset")
    e.add_argument("--preset", required=True, help=", ".join(PRESETS))
    e.add_argument("--runs", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--dataset", default=None, help="CSV of features plus a 0/1 label column")
    e.add_argument("--horizon", type=int, default=None, help="override the preset's number of rounds")
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("certify", help="certificate for a saved trajectory")
    c.add_argument("--trajectory", required=True)
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_certify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CertificateError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
