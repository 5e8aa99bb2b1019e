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
Synthetic problems with known infima for demonstrating the epsilon + delta
optimality gap of approximate minimisers.

Each problem minimises ``f(x) = ||x - x*||^2 + f0`` over L2(0, 1), restricted
to piecewise constants ``X^n`` on ``n = 2^k`` equal cells and perturbed by a
vanishing family ``p(nu, ||x||)``. All integrals are evaluated on a
reference grid of ``2^14`` cells.
"""


import logging
from collections import namedtuple
from enum import Enum

import numpy
import scipy.optimize
from attr import attrs, attrib

from riskpde.coefficients import Piecewise, Sine
from riskpde.fem.mesh import build_uniform_mesh
from riskpde.field import generator
from riskpde.optimize import projected_gradient
from riskpde.util import InvalidArgument


logger = logging.getLogger(__name__)

REFERENCE_LEVEL = 14
ORACLE_GRID_POINTS = 20001
INNER_TOLERANCE = 1e-10
INNER_MAX_ITERS = 500
LIMIT_TOLERANCE = 1e-3
# Absolute slack on every comparison, for rounding in the grid sums.
ROUNDING_SLACK = 1e-12


class Perturbation(Enum):
    """Vanishing perturbations ``p(nu, r)`` of the restricted objective."""

    NONE = "none"
    SHIFT = "shift"
    OSCILLATORY = "oscillatory"

    def __call__(self, nu, r):
        if self is Perturbation.SHIFT:
            return numpy.full_like(numpy.asarray(r, dtype=float), 1.0 / nu)
        if self is Perturbation.OSCILLATORY:
            return numpy.sin(nu * numpy.asarray(r, dtype=float)) / nu
        return numpy.zeros_like(numpy.asarray(r, dtype=float))

    def derivative(self, nu, r):
        if self is Perturbation.OSCILLATORY:
            return numpy.cos(nu * r)
        return 0.0

    def amplitude(self, nu):
        """Half the oscillation of ``r -> p(nu, r)``.

        Constant shifts leave minimisers alone and have zero amplitude.
        """
        if self is Perturbation.OSCILLATORY:
            return 1.0 / nu
        return 0.0


Level = namedtuple("Level", ["n", "lengths", "averages", "error"])

_Reference = namedtuple("_Reference", ["moments", "energy", "slack"])

DemoStage = namedtuple("DemoStage", ["nu", "delta_floor"])

EpiRow = namedtuple(
    "EpiRow",
    [
        "n",
        "nu",
        "delta",
        "inf_estimate",
        "achieved",
        "true_value",
        "bound",
        "passed",
    ],
)

EpiReport = namedtuple(
    "EpiReport",
    [
        "problem",
        "seed",
        "epsilon",
        "n",
        "discretisation_error",
        "grid_slack",
        "rows",
        "liminf_gap",
        "limsup_gap",
        "passed",
        "failed_stage",
    ],
)


@attrs(frozen=True, eq=False)
class SyntheticProblem:
    """A distance-squared objective with a vanishing perturbation.

    Parameters
    ----------
    name : str
    target : callable
        The minimiser ``x*`` of the unperturbed objective.
    f0 : float
        The known infimum ``inf f``.
    perturbation : Perturbation
    reference_level : int, optional
        The reference grid has ``2**reference_level`` cells.
    """

    name = attrib()
    target = attrib()
    f0 = attrib(default=0.0, converter=float)
    perturbation = attrib(default=Perturbation.NONE, converter=Perturbation)
    reference_level = attrib(default=REFERENCE_LEVEL)
    _reference = attrib(init=False, default=None, repr=False)

    @property
    def true_inf(self):
        return self.f0

    def reference(self):
        if self._reference is None:
            mesh = build_uniform_mesh(2**self.reference_level)
            points, weights = mesh.quadrature(2)
            values = self.target(points)
            moments = numpy.sum(weights * values, axis=1)
            energy = float(numpy.sum(weights * values**2))
            # Variance of x* inside each reference cell, unresolved by the
            # reference grid
            spread = 0.5 * (values[:, 0] - values[:, 1])
            slack = float(numpy.sum(mesh.lengths * spread**2))
            object.__setattr__(
                self, "_reference", _Reference(moments, energy, slack)
            )
        return self._reference

    @property
    def grid_slack(self):
        return self.reference().slack + ROUNDING_SLACK

    def level(self, n):
        """The restriction to piecewise constants on ``n`` cells.

        ``error`` is ``inf (f + indicator of X^n) - inf f``.
        """
        n_reference = 2**self.reference_level
        if n < 1 or n_reference % n != 0:
            raise InvalidArgument(
                "n must divide the reference grid size {}, got {}".format(
                    n_reference, n
                )
            )
        reference = self.reference()
        lengths = numpy.full(n, 1.0 / n)
        moments = reference.moments.reshape(n, -1).sum(axis=1)
        averages = moments / lengths
        error = reference.energy - float(numpy.dot(lengths, averages**2))
        return Level(n, lengths, averages, max(error, 0.0))

    def objective(self, coefficients):
        """``f(T_n x)`` for piecewise constant coefficients."""
        level = self.level(len(coefficients))
        difference = numpy.asarray(coefficients, dtype=float) - level.averages
        return (
            float(numpy.dot(level.lengths, difference**2))
            + level.error
            + self.f0
        )

    def approximate(self, nu, coefficients):
        """The perturbed restricted objective ``f_n^nu``."""
        coefficients = numpy.asarray(coefficients, dtype=float)
        norm = _norm(coefficients)
        perturbation = float(self.perturbation(nu, norm))
        return self.objective(coefficients) + perturbation

    def infimum(self, n, nu=None):
        """Brute-force infimum of ``f_n^nu``, or of ``f_n`` without nu.

        ``f_n^nu`` depends on the coefficients through their distance to
        the cell averages and their norm, so its infimum is a minimum over
        the norm ``r`` alone of ``(r - ||averages||)^2 + p(nu, r)``.
        """
        level = self.level(n)
        base = level.error + self.f0
        if nu is None:
            return base
        radius = _norm(level.averages, level.lengths)

        def profile(r):
            return (r - radius) ** 2 + self.perturbation(nu, r)

        points = max(ORACLE_GRID_POINTS, int(20 * nu * (radius + 2.0)))
        grid = numpy.linspace(0.0, radius + 2.0, points)
        values = profile(grid)
        best = int(numpy.argmin(values))
        step = grid[1] - grid[0]
        result = scipy.optimize.minimize_scalar(
            lambda r: float(profile(r)),
            bounds=(max(grid[best] - step, 0.0), grid[best] + step),
            method="bounded",
            options={"xatol": 1e-13},
        )
        return base + float(min(values[best], result.fun))

    def minimise(self, n, nu, starts, tol=INNER_TOLERANCE):
        """Best local minimiser of ``f_n^nu`` over several starts."""
        lengths = numpy.full(n, 1.0 / n)
        averages = self.level(n).averages

        def value(c):
            return self.approximate(nu, c)

        def value_and_grad(c):
            r = _norm(c, lengths)
            gradient = 2.0 * lengths * (c - averages)
            if r > 0:
                gradient = gradient + (
                    self.perturbation.derivative(nu, r) * lengths * c / r
                )
            return value(c), gradient

        unbounded = numpy.full(n, numpy.inf)
        best = None
        for start in starts:
            x, fx, _, _, _ = projected_gradient(
                value,
                value_and_grad,
                start,
                -unbounded,
                unbounded,
                tol,
                INNER_MAX_ITERS,
            )
            if best is None or fx < best[1]:
                best = (x, fx)
        return best


def _norm(coefficients, lengths=None):
    coefficients = numpy.asarray(coefficients, dtype=float)
    if lengths is None:
        lengths = numpy.full(coefficients.size, 1.0 / coefficients.size)
    return float(numpy.sqrt(numpy.dot(lengths, coefficients**2)))


def select_level(problem, epsilon):
    """The smallest ``n = 2^k`` with discretisation error at most epsilon.

    Bisects on ``k``; the error is nonincreasing in ``k`` because the
    subspaces are nested.
    """
    if not epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    low, high = 0, problem.reference_level
    if problem.level(2**high).error > epsilon:
        raise InvalidArgument(
            "epsilon {} is below the reference grid resolution".format(
                epsilon
            )
        )
    while low < high:
        middle = (low + high) // 2
        if problem.level(2**middle).error <= epsilon:
            high = middle
        else:
            low = middle + 1
    return 2**low


def run_gap_demo(problem, epsilon, delta_schedule, seed=0):
    """Check the optimality gap bound along a schedule of perturbations.

    For every stage ``(nu, delta_floor)`` the perturbed problem is
    minimised from a random start, the previous stage's point and the
    unperturbed minimiser, keeping the best. With ``delta = delta_floor + 2
    amplitude(nu)`` each stage must satisfy

    - the achieved value is within delta of the brute-force infimum, and
    - ``f(T_n x) <= inf f + epsilon + delta + grid slack``.

    The last stage also probes the liminf and limsup conditions.

    Parameters
    ----------
    problem : SyntheticProblem
    epsilon : float
    delta_schedule : list of DemoStage
    seed : int, optional

    Returns
    -------
    EpiReport
    """
    if not delta_schedule:
        raise InvalidArgument("the demo needs at least one stage")
    n = select_level(problem, epsilon)
    level = problem.level(n)
    slack = problem.grid_slack
    rows = []
    failed_stage = None
    previous = level.averages
    for index, (nu, delta_floor) in enumerate(delta_schedule):
        delta = delta_floor + 2.0 * problem.perturbation.amplitude(nu)
        rng = generator(seed, index)
        random_start = level.averages + rng.standard_normal(n)
        x, achieved = problem.minimise(
            n, nu, [random_start, previous, level.averages]
        )
        inf_estimate = problem.infimum(n, nu)
        true_value = problem.objective(x)
        bound = problem.true_inf + epsilon + delta + slack
        passed = bool(
            achieved <= inf_estimate + delta + slack and true_value <= bound
        )
        if not passed and failed_stage is None:
            failed_stage = index
        rows.append(
            EpiRow(
                n,
                nu,
                delta,
                inf_estimate,
                achieved,
                true_value,
                bound,
                passed,
            )
        )
        logger.info(
            "%s stage %d: nu=%s achieved=%.12g bound=%.12g %s",
            problem.name,
            index,
            nu,
            achieved,
            bound,
            "PASS" if passed else "FAIL",
        )
        previous = x

    last_nu = delta_schedule[-1].nu
    liminf_gap = _liminf_gap(problem, n, last_nu, seed)
    limsup_gap = problem.infimum(n, last_nu) - problem.infimum(n)
    passed = (
        failed_stage is None
        and liminf_gap >= -LIMIT_TOLERANCE
        and limsup_gap <= LIMIT_TOLERANCE
    )
    return EpiReport(
        problem.name,
        seed,
        epsilon,
        n,
        level.error,
        slack,
        rows,
        liminf_gap,
        limsup_gap,
        bool(passed),
        failed_stage,
    )


def _liminf_gap(problem, n, nu, seed):
    """``f_n^nu(x^nu) - f_n(x)`` for ``x^nu = x + d / nu`` at a random x."""
    rng = generator(seed, 2**32)
    x = problem.level(n).averages + rng.standard_normal(n)
    direction = rng.standard_normal(n)
    return problem.approximate(nu, x + direction / nu) - problem.objective(x)


def step_problem():
    """A piecewise constant minimiser, representable from four cells on."""
    target = Piecewise([0.0, 0.25, 0.5, 0.75, 1.0], [1.0, -0.5, 2.0, 0.25])
    return SyntheticProblem("step", target, 0.0, Perturbation.NONE)


def shift_problem():
    return SyntheticProblem("shift", Sine(1.0, 2.0), 0.5, Perturbation.SHIFT)


def oscillatory_problem():
    return SyntheticProblem(
        "oscillatory", lambda x: x**2, 0.0, Perturbation.OSCILLATORY
    )


BUNDLED_PROBLEMS = {
    "step": step_problem,
    "shift": shift_problem,
    "oscillatory": oscillatory_problem,
}

DEFAULT_SCHEDULE = (
    DemoStage(10, 1e-9),
    DemoStage(100, 1e-9),
    DemoStage(1000, 1e-9),
    DemoStage(10000, 1e-9),
)


def bundled_problem(name):
    try:
        return BUNDLED_PROBLEMS[name]()
    except KeyError:
        raise InvalidArgument(
            "unknown synthetic problem {!r}, expected one of {}".format(
                name, sorted(BUNDLED_PROBLEMS)
            )
        )
