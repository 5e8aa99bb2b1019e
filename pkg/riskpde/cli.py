# Copyright 2021-2024 Faculty Science Limited
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Command line entry point.

Every subcommand reads an experiment configuration, runs one part of the
library and writes its artifacts to the output directory. The exit code is
0 on success, 1 when a check fails, 2 for invalid configuration or input
and 3 when a numerical failure stops the run.
"""


import argparse
import logging
import os
import sys

import numpy

from riskpde import artifacts
from riskpde.config import (
    EpiConfig,
    build_control,
    build_field,
    build_instance,
    build_meshes,
    load,
    resolve_run_options,
)
from riskpde.context import get_context
from riskpde.epi import BUNDLED_PROBLEMS, bundled_problem, run_gap_demo
from riskpde.fem.convergence import refinement_study
from riskpde.fem.solver import solve_state
from riskpde.field import sample_field
from riskpde.optimize import check_certificate, outer_loop, reference_spec
from riskpde.problem import ObjectiveMode
from riskpde.risk import DiscreteRv, summarize
from riskpde.util import ConfigError, InvalidArgument, NumericalFailure
from riskpde.verify import DEFAULT_GRADIENT_INSTANCES, run_verification


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3

RISK_COLUMNS = [
    "alpha",
    "mean",
    "quantile",
    "superquantile",
    "penalty_regret",
    "buffered_probability",
]


def _load_config(args, required=True):
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        return None
    return load(args.config)


def _options(args, config=None):
    return resolve_run_options(
        config, seed=args.seed, threads=args.threads, output=args.out
    )


def solve_pde(args):
    """Solve the state equation for one field sample and the fixed control."""
    config = _load_config(args)
    options = _options(args, config)
    context = get_context("solve-pde", config, options)
    instance_config = config.instance
    mesh, _ = build_meshes(instance_config)
    sample = sample_field(build_field(instance_config), options.seed)
    control = build_control(instance_config)
    state = solve_state(mesh, sample, instance_config.pde, control)
    artifacts.write_state(
        os.path.join(options.output, "state.csv"), context, state
    )
    if args.study:
        rows, rate = refinement_study(
            sample, instance_config.pde, control, config.verify.fem_levels
        )
        logger.info("observed rate %.4f", rate)
        artifacts.write_convergence(
            os.path.join(options.output, "convergence.csv"), context, rows
        )
    return EXIT_OK


def sample_field_command(args):
    """Dump the coordinates and values of one field sample."""
    config = _load_config(args)
    options = _options(args, config)
    context = get_context("sample-field", config, options)
    field = build_field(config.instance)
    sample = sample_field(field, options.seed, args.index)
    points = numpy.linspace(*field.domain, int(field.grid_cells) + 1)
    artifacts.write_field(options.output, context, sample, points)
    return EXIT_OK


def _read_values(path):
    """Outcomes and optional weights from a CSV with a ``value`` column."""
    try:
        columns, rows = artifacts.read_csv(path)
    except OSError as err:
        raise InvalidArgument("cannot read {}: {}".format(path, err.strerror))
    if "value" not in columns:
        raise InvalidArgument("{} has no 'value' column".format(path))
    try:
        table = numpy.array(rows, dtype=float).reshape(len(rows), -1)
    except ValueError:
        raise InvalidArgument("{} holds non-numeric cells".format(path))
    values = table[:, columns.index("value")]
    weights = None
    if "weight" in columns:
        weights = table[:, columns.index("weight")]
    return DiscreteRv(values, weights)


def risk_eval(args):
    """Risk measures of an empirical distribution read from a CSV file."""
    options = _options(args)
    rv = _read_values(args.values)
    with open(args.values, "rb") as fp:
        contents = fp.read()
    context = get_context("risk-eval", options=options, input_bytes=contents)
    summaries = [summarize(rv, alpha) for alpha in args.alpha]
    artifacts.write_csv(
        os.path.join(options.output, "risk.csv"),
        context,
        RISK_COLUMNS,
        [[getattr(s, name) for name in RISK_COLUMNS] for s in summaries],
    )
    return EXIT_OK


def optimize(args):
    """Run the outer loop and check its certificate on a reference sample."""
    config = _load_config(args)
    if config.schedule is None:
        raise ConfigError("optimize needs a schedule")
    options = _options(args, config)
    if options.seed == config.seeds.reference:
        raise ConfigError(
            "the sample seed {} equals the reference seed".format(options.seed)
        )
    context = get_context("optimize", config, options)
    instance = build_instance(config.instance, options.seed)
    certificate = outer_loop(instance, config.schedule, options.threads)
    artifacts.write_certificate(
        options.output, context, certificate, instance.control_mesh
    )
    if certificate.final_record is None:
        raise NumericalFailure("every stage of the schedule failed")
    reference = reference_spec(
        instance,
        certificate,
        config.reference_samples,
        config.seeds.reference,
        options.threads,
    )
    check = check_certificate(certificate, reference)
    artifacts.write_certificate_check(
        os.path.join(options.output, "certificate_check.csv"),
        context,
        check,
        config.feasibility_tolerance,
    )
    passed = check.passed
    if instance.mode is ObjectiveMode.BUFFERED:
        residual = check.reference_residual
        if abs(residual) > config.feasibility_tolerance:
            logger.warning(
                "residual %.3e on the reference sample exceeds the "
                "tolerance %.3e",
                residual,
                config.feasibility_tolerance,
            )
            passed = False
    if not check.passed:
        logger.warning(
            "reference value %.10g exceeds the bound %.10g",
            check.reference_value,
            check.bound,
        )
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def verify(args):
    """Run the property checks and write the verification report."""
    config = _load_config(args)
    options = _options(args, config)
    context = get_context("verify", config, options)
    results = run_verification(
        config, options.seed, gradient_instances=args.gradient_instances
    )
    artifacts.write_report(
        os.path.join(options.output, "verify.csv"), context, results
    )
    failed = [result.check for result in results if not result.passed]
    if failed:
        logger.warning("failed checks: %s", ", ".join(failed))
        return EXIT_CHECK_FAILED
    return EXIT_OK


def epi_demo(args):
    """Run the optimality gap demonstration on the synthetic problems."""
    config = _load_config(args, required=False)
    options = _options(args, config)
    context = get_context("epi-demo", config, options)
    settings = config.epi if config is not None else EpiConfig()
    problems = args.problem or settings.problems
    seeds = [args.seed] if args.seed is not None else settings.seeds
    reports = [
        run_gap_demo(
            bundled_problem(name), settings.epsilon, settings.stages, seed
        )
        for name in problems
        for seed in seeds
    ]
    artifacts.write_epi_reports(options.output, context, reports)
    if all(report.passed for report in reports):
        return EXIT_OK
    return EXIT_CHECK_FAILED


def _common_arguments():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="experiment configuration file")
    parser.add_argument("--out", help="directory to write artifacts to")
    parser.add_argument(
        "--seed", type=int, help="sample seed, overriding the configuration"
    )
    parser.add_argument(
        "--threads", type=int, help="worker threads for per-sample solves"
    )
    parser.add_argument(
        "--verbose", action="store_true", help="log progress messages"
    )
    return parser


def build_parser():
    common = _common_arguments()
    parser = argparse.ArgumentParser(
        prog="riskpde",
        description="Optimisation under uncertainty of a random-coefficient "
        "heat equation.",
    )
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    command = commands.add_parser(
        "solve-pde", parents=[common], help=solve_pde.__doc__
    )
    command.add_argument(
        "--study",
        action="store_true",
        help="also write a mesh refinement study",
    )
    command.set_defaults(handler=solve_pde)

    command = commands.add_parser(
        "sample-field", parents=[common], help=sample_field_command.__doc__
    )
    command.add_argument(
        "--index", type=int, default=0, help="index of the sample in its run"
    )
    command.set_defaults(handler=sample_field_command)

    risk = commands.add_parser("risk", help="risk measure evaluation")
    risk_commands = risk.add_subparsers(
        dest="risk_command", metavar="command"
    )
    risk_commands.required = True
    command = risk_commands.add_parser(
        "eval", parents=[common], help=risk_eval.__doc__
    )
    command.add_argument(
        "values", help="CSV file with a value and an optional weight column"
    )
    command.add_argument(
        "--alpha", type=float, nargs="+", default=[0.9], help="risk levels"
    )
    command.set_defaults(handler=risk_eval)

    command = commands.add_parser(
        "optimize", parents=[common], help=optimize.__doc__
    )
    command.set_defaults(handler=optimize)

    command = commands.add_parser(
        "verify", parents=[common], help=verify.__doc__
    )
    command.add_argument(
        "--gradient-instances",
        type=int,
        default=DEFAULT_GRADIENT_INSTANCES,
        help="random problems in the adjoint gradient check",
    )
    command.set_defaults(handler=verify)

    command = commands.add_parser(
        "epi-demo", parents=[common], help=epi_demo.__doc__
    )
    command.add_argument(
        "--problem",
        action="append",
        choices=sorted(BUNDLED_PROBLEMS),
        help="synthetic problem to run, repeatable",
    )
    command.set_defaults(handler=epi_demo)
    return parser


def main(argv=None):
    """Run a subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except (ConfigError, InvalidArgument) as err:
        logger.error("%s", err)
        return EXIT_CONFIG_ERROR
    except NumericalFailure as err:
        logger.error("numerical failure: %s", err)
        return EXIT_NUMERICAL_FAILURE


if __name__ == "__main__":
    sys.exit(main())
