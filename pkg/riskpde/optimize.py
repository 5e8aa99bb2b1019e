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
Inner projected-gradient solver and the staged outer approximation loop
with its optimality-gap certificate.
"""


import logging
import time
import warnings
from collections import namedtuple
from enum import Enum

import numpy
from attr import attrs, attrib

from riskpde.problem import (
    AugmentedLagrangian,
    ControlPoint,
    ObjectiveMode,
    evaluate,
    feasibility_residual,
    saa_estimate,
    saa_value,
)
from riskpde.util import InvalidArgument, NumericalFailure


logger = logging.getLogger(__name__)

DEFAULT_Y_MAX = 1e6

BACKTRACK_FACTOR = 0.5
SUFFICIENT_DECREASE = 1e-4
MAX_BACKTRACKS = 30
MIN_STEP = 1e-12
MAX_STEP = 1e12

# Number of standard errors allowed between the reference and recorded
# objective values of a certificate.
CERTIFICATE_STANDARD_ERRORS = 3.0

STATIONARITY_SURROGATE = "projected-gradient-norm <= delta * (1 + |value|)"


class MultiplierRule(Enum):
    """How the multiplier ``y`` evolves between stages."""

    FIXED_ZERO = "fixed-zero"
    AUGMENTED_LAGRANGIAN = "augmented-lagrangian"


class StageStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max-iterations"
    LINE_SEARCH_FAILED = "line-search-failed"
    FAILED = "failed"


@attrs(frozen=True)
class Stage:
    """One stage of an approximation schedule.

    Parameters
    ----------
    nu : int
        Sample size.
    beta : float
        Smoothing scale of smax.
    theta_pen : float
        Penalty parameter of the augmented Lagrangian.
    delta : float
        Inner tolerance.
    max_inner_iters : int
    """

    nu = attrib(converter=int)
    beta = attrib(converter=float)
    theta_pen = attrib(converter=float)
    delta = attrib(converter=float)
    max_inner_iters = attrib(default=200, converter=int)

    @nu.validator
    def _check_nu(self, attribute, nu):
        if nu < 1:
            raise InvalidArgument("stage sample size must be positive")

    def __attrs_post_init__(self):
        if not self.beta > 0 or not self.theta_pen > 0:
            raise InvalidArgument("beta and theta_pen must be positive")
        if self.delta < 0:
            raise InvalidArgument("delta must be nonnegative")
        if self.max_inner_iters < 0:
            raise InvalidArgument("max_inner_iters must be nonnegative")


def _stages(stages):
    return tuple(stages)


@attrs(frozen=True)
class Schedule:
    """Stages of the outer loop, run in order on nested samples.

    Parameters
    ----------
    stages : tuple of Stage
    multiplier_rule : MultiplierRule
    y_max : float, optional
        Bound on the magnitude of the multiplier.
    multiplier_rounds : int, optional
        Inner solves per stage under the augmented Lagrangian rule, with a
        multiplier update from the exact residual between them.
    """

    stages = attrib(converter=_stages)
    multiplier_rule = attrib(
        default=MultiplierRule.FIXED_ZERO, converter=MultiplierRule
    )
    y_max = attrib(default=DEFAULT_Y_MAX, converter=float)
    multiplier_rounds = attrib(default=1, converter=int)

    @multiplier_rounds.validator
    def _check_rounds(self, attribute, rounds):
        if rounds < 1:
            raise InvalidArgument("multiplier_rounds must be positive")

    @stages.validator
    def _check_stages(self, attribute, stages):
        problems = schedule_problems(stages)
        if problems:
            raise InvalidArgument("; ".join(problems))

    @property
    def delta_limit(self):
        return self.stages[-1].delta


def schedule_problems(stages):
    """Violations of the monotonicity rules of a schedule, as messages."""
    if not stages:
        return ["a schedule needs at least one stage"]
    problems = []
    rules = [
        ("nu", "nondecreasing", lambda a, b: b >= a),
        ("beta", "nonincreasing", lambda a, b: b <= a),
        ("theta_pen", "nondecreasing", lambda a, b: b >= a),
        ("delta", "nonincreasing", lambda a, b: b <= a),
    ]
    for name, description, ordered in rules:
        values = [getattr(stage, name) for stage in stages]
        for index, (a, b) in enumerate(zip(values[:-1], values[1:])):
            if not ordered(a, b):
                problems.append(
                    "{} must be {} (stage {}: {} after {})".format(
                        name, description, index + 1, b, a
                    )
                )
                break
    return problems


InnerResult = namedtuple(
    "InnerResult",
    ["point", "value", "iterations", "status", "projected_gradient_norm"],
)

StageRecord = namedtuple(
    "StageRecord",
    [
        "nu",
        "beta",
        "theta_pen",
        "multiplier",
        "value",
        "residual",
        "inner_iters",
        "smoothing_error",
        "status",
    ],
)

StageTiming = namedtuple("StageTiming", ["stage", "nu", "wall_time"])

CertificateCheck = namedtuple(
    "CertificateCheck",
    [
        "recorded_value",
        "reference_value",
        "standard_error",
        "delta",
        "smoothing_budget",
        "bound",
        "reference_residual",
        "passed",
    ],
)


@attrs(frozen=True, eq=False)
class GapCertificate:
    """Bookkeeping of an outer loop run.

    Parameters
    ----------
    stage_records : tuple of StageRecord
        One record per stage, failed stages included.
    final_point : ControlPoint
        The last good iterate.
    delta_limit : float
        The inner tolerance of the last stage.
    mode : ObjectiveMode
    alpha : float
        Reliability level, for the smoothing budget.
    standard_error : float
        Standard error of the final recorded value on its own sample.
    timings : tuple of StageTiming
        Wall-clock times, kept apart from the reproducible records.
    """

    stage_records = attrib(converter=tuple)
    final_point = attrib()
    delta_limit = attrib()
    mode = attrib()
    alpha = attrib()
    standard_error = attrib()
    timings = attrib(default=(), converter=tuple)
    surrogate = attrib(default=STATIONARITY_SURROGATE)

    @property
    def completed(self):
        return [
            record
            for record in self.stage_records
            if record.status is not StageStatus.FAILED
        ]

    @property
    def final_record(self):
        completed = self.completed
        return completed[-1] if completed else None

    @property
    def final_residual(self):
        record = self.final_record
        return None if record is None else record.residual


def project_box(point):
    """Clamp the controls into the box and the slack to be nonnegative."""
    return ControlPoint(
        numpy.clip(point.z_n, point.box.lower, point.box.upper),
        point.gamma,
        max(point.sigma, 0.0),
        point.box,
    )


def projected_gradient(
    value, value_and_grad, x0, lower, upper, tol, max_iters
):
    """Minimise a smooth function over a box.

    Projected gradient descent with Barzilai-Borwein step lengths and
    Armijo backtracking along the projection arc. Every iterate lies in the
    box and function values never increase.

    Parameters
    ----------
    value : callable
        ``x -> f(x)``.
    value_and_grad : callable
        ``x -> (f(x), grad f(x))``.
    x0 : numpy.ndarray
    lower, upper : numpy.ndarray
        Bounds, possibly infinite.
    tol : float
        Stop when ``||x - P(x - grad f(x))|| <= tol * (1 + |f(x)|)``.
    max_iters : int

    Returns
    -------
    x : numpy.ndarray
    fx : float
    iterations : int
    status : StageStatus
    pg_norm : float
    """

    def project(x):
        return numpy.clip(x, lower, upper)

    x = project(numpy.asarray(x0, dtype=float))
    fx, gx = value_and_grad(x)
    step = 1.0 / max(numpy.linalg.norm(gx), 1.0)
    status = StageStatus.MAX_ITERATIONS
    iterations = 0
    while True:
        pg_norm = float(numpy.linalg.norm(x - project(x - gx)))
        if pg_norm <= tol * (1.0 + abs(fx)):
            status = StageStatus.CONVERGED
            break
        if iterations >= max_iters:
            break
        trial_step = step
        for _ in range(MAX_BACKTRACKS):
            candidate = project(x - trial_step * gx)
            f_candidate = value(candidate)
            decrease = numpy.dot(gx, candidate - x)
            if f_candidate <= fx + SUFFICIENT_DECREASE * decrease:
                break
            trial_step *= BACKTRACK_FACTOR
        else:
            status = StageStatus.LINE_SEARCH_FAILED
            warnings.warn(
                "line search failed after {} backtracks at iteration {}; "
                "returning the best iterate".format(MAX_BACKTRACKS, iterations)
            )
            break
        f_new, g_new = value_and_grad(candidate)
        s = candidate - x
        y = g_new - gx
        curvature = float(numpy.dot(s, y))
        if curvature > 0:
            step = float(numpy.dot(s, s)) / curvature
        else:
            step = 2.0 * trial_step
        step = min(max(step, MIN_STEP), MAX_STEP)
        x, fx, gx = candidate, f_new, g_new
        iterations += 1
    return x, float(fx), iterations, status, pg_norm


def _bounds(point, buffered):
    n = point.z_n.size
    lower = numpy.full(n, point.box.lower)
    upper = numpy.full(n, point.box.upper)
    if buffered:
        lower = numpy.append(lower, [-numpy.inf, 0.0])
        upper = numpy.append(upper, [numpy.inf, numpy.inf])
    return lower, upper


def _pack(point, buffered):
    if buffered:
        return numpy.append(point.z_n, [point.gamma, point.sigma])
    return numpy.array(point.z_n, dtype=float)


def _unpack(x, template, buffered):
    n = template.z_n.size
    if buffered:
        return ControlPoint(x[:n], x[n], x[n + 1], template.box)
    return ControlPoint(x, template.gamma, template.sigma, template.box)


def inner_solve(start, spec, delta, max_iters):
    """Approximately minimise the smooth objective of ``spec``.

    Parameters
    ----------
    start : ControlPoint
        Projected onto the feasible set before the first iteration.
    spec : SaaSpec
    delta : float
        Stationarity tolerance.
    max_iters : int

    Returns
    -------
    InnerResult
    """
    buffered = spec.buffered
    start = project_box(start)
    lower, upper = _bounds(start, buffered)

    def value(x):
        return saa_value(_unpack(x, start, buffered), spec, smooth=True)

    def value_and_grad(x):
        evaluation = evaluate(_unpack(x, start, buffered), spec)
        gradient = evaluation.gradient
        if buffered:
            flat = numpy.append(gradient.z, [gradient.gamma, gradient.sigma])
        else:
            flat = gradient.z
        return evaluation.value, flat

    x, fx, iterations, status, pg_norm = projected_gradient(
        value,
        value_and_grad,
        _pack(start, buffered),
        lower,
        upper,
        delta,
        max_iters,
    )
    logger.debug(
        "inner solve: %d iterations, value %.6g, status %s",
        iterations,
        fx,
        status.value,
    )
    return InnerResult(
        _unpack(x, start, buffered), fx, iterations, status, pg_norm
    )


def multiplier_update(y, theta_pen, residual, y_max=DEFAULT_Y_MAX):
    """``y + 2 theta_pen residual``, clamped to ``[-y_max, y_max]``."""
    if not theta_pen > 0:
        raise InvalidArgument("theta_pen must be positive")
    updated = y + 2.0 * theta_pen * residual
    return float(min(max(updated, -y_max), y_max))


def balance_slack(point, spec):
    """Minimise the smooth buffered objective over the slack alone.

    ``w2`` is affine in ``sigma`` with unit slope, so ``y w2 +
    theta_pen w2^2`` is minimised over ``sigma >= 0`` by
    ``max(0, sigma - w2 - y / (2 theta_pen))``.
    """
    al = spec.al
    w2 = feasibility_residual(point, spec, smooth=True)
    sigma = point.sigma - w2 - al.multiplier / (2.0 * al.theta_pen)
    return ControlPoint(point.z_n, point.gamma, max(sigma, 0.0), point.box)


_StageOutcome = namedtuple(
    "_StageOutcome",
    ["result", "multiplier", "residual", "standard_error"],
)


def _run_stage(instance, stage, point, y, rounds, y_max, workers):
    buffered = instance.mode is ObjectiveMode.BUFFERED
    al = None
    if buffered:
        al = AugmentedLagrangian(y, stage.theta_pen, stage.beta)
    spec = instance.saa_spec(stage.nu, al, workers)
    iterations = 0
    residual = 0.0
    for round_index in range(rounds):
        if round_index > 0:
            y = multiplier_update(y, stage.theta_pen, residual, y_max)
            spec = spec.replace(
                al=AugmentedLagrangian(y, stage.theta_pen, stage.beta)
            )
        start = project_box(point)
        if buffered:
            start = balance_slack(start, spec)
        result = inner_solve(start, spec, stage.delta, stage.max_inner_iters)
        iterations += result.iterations
        point = result.point
        if buffered:
            residual = feasibility_residual(point, spec, smooth=False)
            logger.debug(
                "round %d: y=%g exact residual %.3e",
                round_index,
                y,
                residual,
            )
    standard_error = saa_estimate(point, spec, smooth=True).standard_error
    return _StageOutcome(
        result._replace(iterations=iterations),
        y,
        residual,
        standard_error,
    )


def outer_loop(instance, schedule, workers=1):
    """Run the stages of a schedule, warm starting each from the last.

    Stage ``k`` uses samples ``0, ..., nu_k - 1`` of the instance's sample
    stream. Under the augmented Lagrangian rule the multiplier follows the
    exact (unsmoothed) residual, both between the rounds of a stage and
    from one stage to the next. A stage whose solve fails is recorded and
    the loop continues from the last good iterate.

    Parameters
    ----------
    instance : Instance
    schedule : Schedule
    workers : int, optional

    Returns
    -------
    GapCertificate
    """
    point = instance.initial_point()
    y = instance.multiplier
    buffered = instance.mode is ObjectiveMode.BUFFERED
    updating = (
        buffered
        and schedule.multiplier_rule is MultiplierRule.AUGMENTED_LAGRANGIAN
    )
    rounds = schedule.multiplier_rounds if updating else 1
    alpha = instance.qoi.alpha
    records = []
    timings = []
    standard_error = float("nan")
    for index, stage in enumerate(schedule.stages):
        logger.info(
            "stage %d: nu=%d beta=%g theta_pen=%g y=%g",
            index,
            stage.nu,
            stage.beta,
            stage.theta_pen,
            y,
        )
        smoothing_error = 0.0
        if buffered:
            smoothing_error = AugmentedLagrangian(
                y, stage.theta_pen, stage.beta
            ).smoothing_error(alpha)
        started = time.perf_counter()
        try:
            outcome = _run_stage(
                instance, stage, point, y, rounds, schedule.y_max, workers
            )
        except NumericalFailure as err:
            warnings.warn("stage {} failed: {}".format(index, err))
            records.append(
                StageRecord(
                    stage.nu,
                    stage.beta,
                    stage.theta_pen,
                    y,
                    float("nan"),
                    float("nan"),
                    0,
                    smoothing_error,
                    StageStatus.FAILED,
                )
            )
            timings.append(
                StageTiming(index, stage.nu, time.perf_counter() - started)
            )
            continue
        timings.append(
            StageTiming(index, stage.nu, time.perf_counter() - started)
        )
        result = outcome.result
        records.append(
            StageRecord(
                stage.nu,
                stage.beta,
                stage.theta_pen,
                outcome.multiplier,
                result.value,
                outcome.residual,
                result.iterations,
                smoothing_error,
                result.status,
            )
        )
        logger.info(
            "stage %d: value=%.10g residual=%.3e iterations=%d",
            index,
            result.value,
            outcome.residual,
            result.iterations,
        )
        point = result.point
        y = outcome.multiplier
        standard_error = outcome.standard_error
        if updating and index < len(schedule.stages) - 1:
            y = multiplier_update(
                y, stage.theta_pen, outcome.residual, schedule.y_max
            )
    return GapCertificate(
        records,
        point,
        schedule.delta_limit,
        instance.mode,
        alpha,
        standard_error,
        timings,
    )


def check_certificate(certificate, reference_spec):
    """Re-evaluate the final point of a run on an independent sample.

    The exact (unsmoothed) objective on the reference sample must not
    exceed the last recorded value by more than three combined standard
    errors, the inner tolerance and, in buffered mode, the smoothing budget
    ``(|y| + 2 theta_pen |w2| + theta_pen eps) eps`` with
    ``eps = 2 beta / (1 - alpha)``.

    Parameters
    ----------
    certificate : GapCertificate
    reference_spec : SaaSpec
        Carries the reference samples and the last stage's augmented
        Lagrangian parameters.

    Returns
    -------
    CertificateCheck
    """
    record = certificate.final_record
    if record is None:
        raise InvalidArgument("the certificate has no completed stage")
    estimate = saa_estimate(
        certificate.final_point, reference_spec, smooth=False
    )
    standard_error = float(
        numpy.hypot(estimate.standard_error, certificate.standard_error)
    )
    budget = 0.0
    if reference_spec.buffered:
        al = reference_spec.al
        eps = al.smoothing_error(certificate.alpha)
        budget = (
            abs(al.multiplier)
            + 2.0 * al.theta_pen * abs(record.residual)
            + al.theta_pen * eps
        ) * eps
    bound = (
        record.value
        + CERTIFICATE_STANDARD_ERRORS * standard_error
        + certificate.delta_limit
        + budget
    )
    passed = bool(estimate.value <= bound)
    return CertificateCheck(
        record.value,
        estimate.value,
        standard_error,
        certificate.delta_limit,
        budget,
        bound,
        estimate.w2,
        passed,
    )


def reference_spec(instance, certificate, nu, seed, workers=1):
    """The problem on which :func:`check_certificate` re-evaluates a run.

    Draws ``nu`` samples from the independent stream ``seed`` and reuses
    the augmented Lagrangian parameters of the last completed stage.
    """
    record = certificate.final_record
    if record is None:
        raise InvalidArgument("the certificate has no completed stage")
    al = None
    if instance.mode is ObjectiveMode.BUFFERED:
        al = AugmentedLagrangian(
            record.multiplier, record.theta_pen, record.beta
        )
    return instance.saa_spec(nu, al, workers, seed=seed)
