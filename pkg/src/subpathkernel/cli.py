"""Command-line entry point: ``subpathkernel <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 convergence or
internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .atomic import CHI2, DELTA, GAUSSIAN, KernelConfig
from .checks import oracle_check
from .harness import (
    ALL_METHODS,
    DEFAULT_GRIDS,
    Method,
    Protocol,
    RepetitionError,
    curve_csv,
    featurize,
    robustness_curve,
    run_experiment,
)
from .kernel import KERNEL_KINDS, KernelError, gram_matrix
from .svm import ConvergenceError, SvmParams
from .synthetic import SCENARIOS, ScenarioParams, generate, scenario_suite
from .tree import DataError, Dataset, read_dataset, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("subpathkernel")


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _methods(text: str) -> list[Method]:
    try:
        return [Method.parse(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _value_range(text: str) -> tuple[float, float]:
    values = _floats(text)
    if len(values) != 2 or not values[0] < values[1]:
        raise argparse.ArgumentTypeError(f"expected LO,HI with LO < HI, got {text!r}")
    return (values[0], values[1])


def _load(args) -> Dataset:
    ds = read_dataset(args.data)
    if args.value_range is not None:
        ds = Dataset(ds.items, ds.labels, replace(ds.feature_spec, value_range=args.value_range))
    return ds


def _protocol(args) -> Protocol:
    grids = {
        "gamma": args.gammas or list(DEFAULT_GRIDS["gamma"]),
        "C": args.Cs or list(DEFAULT_GRIDS["C"]),
        "beta": args.betas or list(DEFAULT_GRIDS["beta"]),
    }
    return Protocol(
        repetitions=args.repetitions,
        train_per_class=args.train_per_class,
        seed=args.seed,
        grids=grids,
        normalize=not args.no_normalize,
        bins=args.bins,
        svm=SvmParams(kkt_tolerance=args.kkt_tolerance, max_iterations=args.max_iterations),
        workers=args.workers,
    )


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    params = ScenarioParams(
        scenario=args.scenario,
        trees_per_class=args.trees_per_class,
        distortion_ratio=args.ratio,
        extra_noise_dims=args.noise_dims,
        seed=args.seed,
        n_classes=args.classes,
    )
    ds = generate(params)
    with open(args.out, "w") if args.out != "-" else nullcontext(sys.stdout) as fh:
        write_dataset(ds, fh)
    log.info("wrote %d trees to %s", len(ds), args.out)
    return EXIT_OK


def cmd_gram(args) -> int:
    ds = _load(args)
    featured = featurize(ds, args.atomic, args.bins)
    cfg = KernelConfig(args.atomic, args.gamma, args.beta, args.normalize, featured.feature_spec.bins)
    gram = gram_matrix(featured, cfg, args.kernel, args.workers)
    _write(args.out, gram.to_csv())
    log.info("%dx%d %s Gram in %.2fs", len(ds), len(ds), args.kernel, gram.seconds)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    report = oracle_check(args.max_nodes, args.cases, args.seed, args.tolerance)
    print(
        f"oracle-check: {report.cases} cases, {report.evaluations} evaluations, "
        f"max relative error {report.max_rel_error:.3g}, {len(report.failures)} mismatches"
    )
    for failure in report.failures[:10]:
        print(json.dumps(failure), file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_INTERNAL


def cmd_experiment(args) -> int:
    ds = _load(args)
    report = run_experiment(ds, args.methods, _protocol(args))
    print(report.table())
    for test in report.wilcoxon:
        flag = "*" if test["significant"] else " "
        print(f"{flag} {test['a']} vs {test['b']}: p = {test['p_value']}")
    if args.out:
        _write(args.out, report.to_json())
    if args.csv:
        _write(args.csv, report.summary_csv())
    return EXIT_OK


def cmd_curve(args) -> int:
    base = ScenarioParams(
        scenario=args.scenario,
        trees_per_class=args.trees_per_class,
        extra_noise_dims=args.noise_dims,
        seed=args.data_seed,
    )
    suite = scenario_suite(base, args.ratios)
    points = robustness_curve(suite, args.ratios, args.methods, _protocol(args))
    _write(args.out, curve_csv(points))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_protocol_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--repetitions", type=int, default=20)
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="protocol seed (splits and folds)")
    p.add_argument("--gammas", type=_floats, help="gamma grid, comma-separated")
    p.add_argument("--Cs", type=_floats, help="C grid, comma-separated")
    p.add_argument("--betas", type=_floats, help="beta grid, comma-separated")
    p.add_argument("--bins", type=int, help="histogram bins for chi2 (default: dataset's)")
    p.add_argument("--no-normalize", action="store_true", help="use unnormalized kernels")
    p.add_argument("--kkt-tolerance", type=float, default=1e-3)
    p.add_argument("--max-iterations", type=int, default=100_000)
    p.add_argument("--workers", type=int, help="kernel threads (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="subpathkernel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset as JSON lines")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output file, or - for stdout")
    p.add_argument("--ratio", type=float, default=0.0, help="distortion ratio (c1, c2)")
    p.add_argument("--noise-dims", type=int, default=0)
    p.add_argument("--trees-per-class", type=int, default=120)
    p.add_argument("--classes", type=int, default=2, help="number of classes (scenario c only)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gram", help="compute a Gram matrix as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--kernel", choices=KERNEL_KINDS, default="subpath")
    p.add_argument("--atomic", choices=(GAUSSIAN, CHI2, DELTA), default=GAUSSIAN)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--bins", type=int)
    p.add_argument("--value-range", type=_value_range, help="histogram range LO,HI (default: observed leaf values)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("oracle-check", help="compare the fast kernel with enumeration")
    p.add_argument("--max-nodes", type=int, default=12)
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("experiment", help="repeated-split classification experiment")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", type=_methods, default=list(ALL_METHODS), help="e.g. rooted-gaussian,subpath-chi2")
    p.add_argument("--out", help="full JSON report")
    p.add_argument("--csv", help="summary CSV")
    p.add_argument("--value-range", type=_value_range, help="histogram range LO,HI (default: observed leaf values)")
    _add_protocol_options(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("curve", help="accuracy against distortion ratio (c1, c2)")
    p.add_argument("--scenario", choices=("c1", "c2"), required=True)
    p.add_argument("--ratios", type=_floats, required=True)
    p.add_argument("--methods", type=_methods, default=[Method("subpath", GAUSSIAN), Method("subpath", CHI2)])
    p.add_argument("--data-seed", type=int, default=0, help="base seed of the generated suite")
    p.add_argument("--trees-per-class", type=int, default=120)
    p.add_argument("--noise-dims", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_protocol_options(p)
    p.set_defaults(func=cmd_curve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except RepetitionError as exc:
        cause = exc.cause
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(cause, (DataError, KernelError)) else EXIT_INTERNAL
    except (DataError, KernelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        # Remaining value errors come from validating option values.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
