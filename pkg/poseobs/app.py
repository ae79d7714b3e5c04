"""
Command-line entry point
Pose observer simulator: run scenarios, check reference geometry, self-test
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

from dotenv import load_dotenv

load_dotenv()

from estimators.bias_observer import BiasLaw, BiasState, ConfigurationError, observability_matrices_a2
from estimators.observer import check_observability_a1
from geometry.liealg import Pose, exp_so3
from selftest.suite_router import FAULTS, SuiteRouter
from simulation.scenario_parser import ScenarioError, load_scenario, parse_geometry_file
from simulation.simulator import Scenario, SimulationError, builtin_scenarios, run_scenario
from utils import settings
from utils.csv_log import write_plot_data, write_trajectory_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

# Thresholds for the convergence times printed after a run
CONVERGENCE_THRESHOLDS = {
    "rot_err_rad": 1e-3,
    "pos_err_m": 1e-3,
    "bias_omega_err": 5e-3,
    "bias_v_err": 5e-2,
}


class CliArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ======================
# run
# ======================


def _apply_overrides(scenario: Scenario, args: argparse.Namespace, builtin: bool) -> Scenario:
    changes = {}
    if args.dt is not None:
        changes["dt"] = args.dt
    elif builtin:
        changes["dt"] = settings.DEFAULT_DT
    if args.duration is not None:
        changes["duration"] = args.duration
    elif builtin:
        changes["duration"] = settings.DEFAULT_DURATION
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.noise_omega is not None or args.noise_v is not None:
        changes["noise_std"] = (args.noise_omega or 0.0, args.noise_v or 0.0)
    if args.bias_law is not None:
        changes["bias_law"] = BiasLaw(args.bias_law)
        if changes["bias_law"] is BiasLaw.NONE:
            # no estimator: bias estimate stays at its initial value
            changes["initial_bias_estimate"] = BiasState.zero()

    if args.true_rotation is not None or args.true_position is not None:
        base = scenario.initial_true_pose
        changes["initial_true_pose"] = Pose(
            exp_so3(args.true_rotation) if args.true_rotation is not None else base.rotation,
            args.true_position if args.true_position is not None else base.position,
        )
    if args.estimate_rotation is not None or args.estimate_position is not None:
        base = scenario.initial_estimate
        changes["initial_estimate"] = Pose(
            exp_so3(args.estimate_rotation) if args.estimate_rotation is not None else base.rotation,
            args.estimate_position if args.estimate_position is not None else base.position,
        )
    return scenario.replace(**changes)


def run_job(scenario: Scenario, csv_path: str, plot_dir: Optional[str]) -> dict:
    """
    Run one scenario and write its outputs

    Args:
        scenario: Scenario to simulate
        csv_path: Trajectory CSV destination
        plot_dir: Optional directory for the per-figure data

    Returns:
        Dictionary with success flag, summary and logs (or error)
    """
    logs = [f"Running scenario {scenario.name}..."]
    try:
        log = run_scenario(scenario)
        logs.append(f"✓ Simulated {len(log)} samples")

        write_trajectory_csv(log, csv_path)
        logs.append(f"✓ Trajectory written to {csv_path}")

        if plot_dir:
            for path in write_plot_data(log, plot_dir):
                logs.append(f"✓ Plot data written to {path}")

        return {
            "scenario": scenario.name,
            "success": True,
            "summary": log.final_summary(),
            "convergence": {
                name: log.convergence_time(name, threshold)
                for name, threshold in CONVERGENCE_THRESHOLDS.items()
            },
            "csv": str(csv_path),
            "logs": logs,
        }
    except SimulationError as e:
        logger.error(f"Scenario {scenario.name} failed: {str(e)}")
        logs.append(f"✗ Numerical failure: {str(e)}")
        return {"scenario": scenario.name, "success": False, "exit": EXIT_FAILURE, "error": str(e), "logs": logs}
    except (ConfigurationError, OSError) as e:
        logger.error(f"Scenario {scenario.name} failed: {str(e)}")
        logs.append(f"✗ Error: {str(e)}")
        return {"scenario": scenario.name, "success": False, "exit": EXIT_USAGE, "error": str(e), "logs": logs}


def _print_run_result(result: dict):
    for line in result["logs"]:
        print(line)
    if not result["success"]:
        print(f"Scenario {result['scenario']} failed: {result['error']}")
        return

    summary = result["summary"]
    print(f"Scenario {result['scenario']} (t = {summary['t']:.3f} s)")
    print(f"  final rotation error : {summary['rot_err_rad']:.3e} rad")
    print(f"  final position error : {summary['pos_err_m']:.3e} m")
    print(f"  final |b~_Omega|     : {summary['bias_omega_err']:.3e} rad/s")
    print(f"  final |b~_V|         : {summary['bias_v_err']:.3e} m/s")
    print(f"  final cost           : {summary['cost']:.3e}")
    for name, t_conv in result["convergence"].items():
        reached = f"{t_conv:.3f} s" if t_conv is not None else "not reached"
        print(f"  {name} <= {CONVERGENCE_THRESHOLDS[name]:g}: {reached}")


def cmd_run(args: argparse.Namespace) -> int:
    if args.out and len(args.scenarios) > 1:
        logger.error("--out names a single file; use --out-dir for several scenarios")
        print("--out accepts a single scenario; use --out-dir for batches", file=sys.stderr)
        return EXIT_USAGE

    try:
        out_dir = None if args.out else settings.ensure_output_dir(args.out_dir or settings.OUTPUT_DIR)
        builtins = builtin_scenarios()
        jobs = []
        for source in args.scenarios:
            scenario = _apply_overrides(load_scenario(source), args, source in builtins)
            csv_path = args.out if args.out else str(out_dir / f"{scenario.name}.csv")
            jobs.append((scenario, csv_path, args.plot_data))
    except (ScenarioError, ConfigurationError, settings.ConfigError) as e:
        logger.error(f"Invalid run configuration: {str(e)}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_job, *zip(*jobs)))
    else:
        results = [run_job(*job) for job in jobs]

    for result in results:
        _print_run_result(result)
    failures = [r for r in results if not r["success"]]
    if not failures:
        return EXIT_OK
    return max(r["exit"] for r in failures)


# ======================
# check
# ======================


def check_geometry(features, gains) -> dict:
    """Both observability verdicts for a reference geometry."""
    refs = [feature.to_projective() for feature in features]
    report = check_observability_a1(refs)
    matrices = observability_matrices_a2(refs, gains)
    return {
        "case": report.case.value,
        "margin": report.margin,
        "warning": report.warning,
        "full_rank": matrices.full_rank,
        "cond_G": matrices.cond_G,
        "cond_H": matrices.cond_H,
        "diagnostic": matrices.diagnostic,
        "success": report.satisfied and matrices.full_rank,
    }


def cmd_check(args: argparse.Namespace) -> int:
    try:
        builtins = builtin_scenarios()
        if args.source in builtins:
            scenario = builtins[args.source]
            features, gains = scenario.reference_geometry, scenario.gains
        else:
            features, gains = parse_geometry_file(args.source)
    except ScenarioError as e:
        logger.error(f"Cannot parse geometry: {str(e)}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    result = check_geometry(features, gains)
    verdict = "full rank" if result["full_rank"] else "rank deficient"
    print(f"Assumption 1: {result['case']}; Assumption 2: {verdict}")
    print(f"  margin: {result['margin']:.3e}  cond(G): {result['cond_G']:.3e}  cond(H): {result['cond_H']:.3e}")
    if result["warning"]:
        print(f"  warning: {result['warning']}")
    if result["diagnostic"]:
        print(f"  {result['diagnostic']}")
    return EXIT_OK if result["success"] else EXIT_FAILURE


# ======================
# selftest
# ======================


def cmd_selftest(args: argparse.Namespace) -> int:
    router = SuiteRouter(
        seed=args.seed,
        samples=args.samples,
        fault=args.inject_fault,
        search_samples=args.search_samples,
        run_duration=args.duration,
    )
    results = router.run_all(args.suite)

    for result in results:
        status = "PASS" if result["success"] else "FAIL"
        if "error" in result:
            print(f"{status} {result['property']}: {result['error']}")
        else:
            print(
                f"{status} {result['property']}: max error {result['max_error']:.3e} "
                f"(tolerance {result['tolerance']:.1e}, {result['samples']} samples)"
            )

    failed = [r["property"] for r in results if not r["success"]]
    if failed:
        print(f"Failed properties: {', '.join(failed)}")
        return EXIT_FAILURE
    print("All properties passed")
    return EXIT_OK


# ======================
# parser
# ======================


def _vec3_option(parser: argparse.ArgumentParser, flag: str, help_text: str):
    parser.add_argument(flag, type=float, nargs=3, metavar=("X", "Y", "Z"), help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(
        prog="poseobs",
        description="Gradient-like pose observer on SE(3) with projective measurements",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Simulate scenarios and write trajectory CSVs")
    run.add_argument("scenarios", nargs="+", help="case1|case2|case3 or scenario file paths")
    run.add_argument("--out", help="CSV path (single scenario only)")
    run.add_argument("--out-dir", help="Directory for CSV output (default: POSEOBS_OUTPUT_DIR)")
    run.add_argument("--dt", type=float, help="Integration step in seconds")
    run.add_argument("--duration", type=float, help="Run duration in seconds")
    run.add_argument("--seed", type=int, help="Noise RNG seed")
    run.add_argument("--noise-omega", type=float, help="Angular velocity noise std (rad/s)")
    run.add_argument("--noise-v", type=float, help="Linear velocity noise std (m/s)")
    run.add_argument("--bias-law", choices=[law.value for law in BiasLaw], help="Bias estimator")
    _vec3_option(run, "--true-rotation", "Initial true attitude as a rotation vector (rad)")
    _vec3_option(run, "--true-position", "Initial true position (m)")
    _vec3_option(run, "--estimate-rotation", "Initial estimated attitude as a rotation vector (rad)")
    _vec3_option(run, "--estimate-position", "Initial estimated position (m)")
    run.add_argument("--plot-data", metavar="DIR", help="Also write per-figure data files to DIR")
    run.add_argument("--jobs", type=int, default=1, help="Parallel workers for several scenarios")
    run.set_defaults(handler=cmd_run)

    check = subparsers.add_parser("check", help="Check the observability of a reference geometry")
    check.add_argument("source", help="case1|case2|case3 or a file with a [geometry] section")
    check.set_defaults(handler=cmd_check)

    selftest = subparsers.add_parser("selftest", help="Run the numerical property suites")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.add_argument("--samples", type=int, default=1000, help="Random samples per suite")
    selftest.add_argument("--search-samples", type=int, default=100000, help="Zero-cost search size")
    selftest.add_argument("--duration", type=float, default=10.0, help="Closed-loop suite duration (s)")
    selftest.add_argument("--inject-fault", choices=FAULTS, default="none")
    selftest.add_argument("--suite", action="append", help="Run only this suite (repeatable)")
    selftest.set_defaults(handler=cmd_selftest)

    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace):
    for name in ("dt", "duration"):
        value = getattr(args, name, None)
        if value is not None and not value > 0.0:
            parser.error(f"--{name} must be positive")
    for name in ("noise_omega", "noise_v"):
        value = getattr(args, name, None)
        if value is not None and value < 0.0:
            parser.error(f"--{name.replace('_', '-')} must be >= 0")
    seed = getattr(args, "seed", None)
    if seed is not None and seed < 0:
        parser.error("--seed must be >= 0")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    if args.command == "selftest" and (args.samples < 1 or args.search_samples < 1):
        parser.error("sample counts must be at least 1")
    if args.command == "selftest" and args.suite:
        unknown = set(args.suite) - set(SuiteRouter().names)
        if unknown:
            parser.error(f"unknown suite(s): {', '.join(sorted(unknown))}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
