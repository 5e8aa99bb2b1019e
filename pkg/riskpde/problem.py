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
Sample average approximations of the control problem.

Two objectives are supported. In expectation mode

    phi(z) = theta_reg ||z||^2 + (1/nu) sum_j g1(s(xi_j, z))

and in buffered mode the buffered failure probability constraint on the
shortfall g2 enters through its slack reformulation and an augmented
Lagrangian,

    phi(z, gamma, sigma) = w1 + y w2 + theta_pen w2^2,
    w2 = (1/nu) sum_j [sigma + gamma + smax(g2_j - gamma; beta) / (1 - alpha)].

Points outside the box, or with negative slack, evaluate to +inf.
"""


import math
import threading
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from enum import Enum

import numpy
from attr import attrs, attrib, evolve

from riskpde.coefficients import as_coefficient
from riskpde.fem.mesh import (
    P0Control,
    P1State,
    embed_control_norm,
    interval_weights,
    mass_matrix_apply,
)
from riskpde.fem.solver import (
    assemble_operator,
    boundary_load,
    control_load_matrix,
    source_load,
)
from riskpde.field import sample_batch
from riskpde.risk import DiscreteRv, smax, smax_grad, superquantile
from riskpde.util import InvalidArgument, NumericalFailure


class ObjectiveMode(Enum):
    """The objective of an approximating problem."""

    EXPECTATION = "expectation"
    BUFFERED = "buffered"


Gradient = namedtuple("Gradient", ["z", "gamma", "sigma"])

Estimate = namedtuple("Estimate", ["value", "standard_error", "w1", "w2"])

Evaluation = namedtuple(
    "Evaluation", ["value", "gradient", "w1", "w2", "g1", "g2"]
)


@attrs(frozen=True)
class QoiSpec:
    """Quantities of interest of the heat equation.

    Parameters
    ----------
    s_d : coefficient function
        Target temperature in the tracking term g1.
    target : tuple of float
        The subinterval D_t whose average temperature enters g2.
    s_t : float
        Threshold in the shortfall ``g2 = s_t - int_{D_t} u``.
    alpha : float
        Reliability level in (0, 1).
    """

    s_d = attrib(default=0.0, converter=as_coefficient)
    target = attrib(
        default=(0.0, 1.0), converter=lambda t: tuple(float(v) for v in t)
    )
    s_t = attrib(default=0.0, converter=float)
    alpha = attrib(default=0.9, converter=float)

    @target.validator
    def _check_target(self, attribute, target):
        if len(target) != 2 or not target[1] > target[0]:
            raise InvalidArgument("empty target interval {}".format(target))

    @alpha.validator
    def _check_alpha(self, attribute, alpha):
        if not 0.0 < alpha < 1.0:
            raise InvalidArgument(
                "alpha must lie in (0, 1), got {}".format(alpha)
            )


@attrs(frozen=True)
class Box:
    """Pointwise bounds ``lower <= z(x) <= upper`` of admissible controls."""

    lower = attrib(converter=float)
    upper = attrib(converter=float)

    @upper.validator
    def _check_bounds(self, attribute, upper):
        if not (numpy.isfinite(self.lower) and numpy.isfinite(upper)):
            raise InvalidArgument("box bounds must be finite")
        if self.lower > upper:
            raise InvalidArgument(
                "empty box [{}, {}]".format(self.lower, upper)
            )


def _as_coefficients(values):
    array = numpy.array(values, dtype=float).reshape(-1)
    array.setflags(write=False)
    return array


@attrs(frozen=True, eq=False)
class ControlPoint:
    """A point of the approximating problem.

    Parameters
    ----------
    z_n : numpy.ndarray
        Control coefficients, one per control element.
    gamma : float
        The superquantile auxiliary variable.
    sigma : float
        The nonnegative slack of the buffered constraint.
    box : Box
        The admissible control values.
    """

    z_n = attrib(converter=_as_coefficients)
    gamma = attrib(default=0.0, converter=float)
    sigma = attrib(default=0.0, converter=float)
    box = attrib(default=None)

    @box.validator
    def _check_box(self, attribute, box):
        if not isinstance(box, Box):
            raise InvalidArgument("a control point needs a box")

    def feasible(self):
        return bool(
            self.sigma >= 0.0
            and numpy.all(self.z_n >= self.box.lower)
            and numpy.all(self.z_n <= self.box.upper)
        )


@attrs(frozen=True)
class AugmentedLagrangian:
    """Parameters of the augmented Lagrangian in buffered mode.

    Parameters
    ----------
    multiplier : float
        The multiplier ``y``.
    theta_pen : float
        The positive penalty parameter.
    beta : float
        The positive smoothing scale of smax.
    """

    multiplier = attrib(default=0.0, converter=float)
    theta_pen = attrib(default=1.0, converter=float)
    beta = attrib(default=0.01, converter=float)

    @theta_pen.validator
    def _check_theta(self, attribute, theta_pen):
        if not theta_pen > 0:
            raise InvalidArgument("theta_pen must be positive")

    @beta.validator
    def _check_beta(self, attribute, beta):
        if not beta > 0:
            raise InvalidArgument("beta must be positive")

    def smoothing_error(self, alpha):
        """The uniform smoothing error ``2 beta / (1 - alpha)`` of w2."""
        return 2.0 * self.beta / (1.0 - alpha)


_System = namedtuple(
    "_System", ["operators", "load", "coupling", "target_state", "weights"]
)


@attrs(eq=False)
class SaaSpec:
    """Everything defining one approximating problem.

    Parameters
    ----------
    samples : list of FieldSample
        The nu field samples.
    mesh : Mesh
        The state mesh.
    control_mesh : Mesh
        The mesh carrying the P0 controls, usually the state mesh.
    pde : PdeData
    qoi : QoiSpec
    theta_reg : float
        Weight of the cost ``theta_reg ||z||^2``.
    mode : ObjectiveMode
    al : AugmentedLagrangian, optional
        Required in buffered mode.
    workers : int, optional
        Number of threads over which per-sample solves fan out.
    """

    samples = attrib(converter=tuple)
    mesh = attrib()
    control_mesh = attrib()
    pde = attrib()
    qoi = attrib()
    theta_reg = attrib(default=0.0, converter=float)
    mode = attrib(default=ObjectiveMode.EXPECTATION)
    al = attrib(default=None)
    workers = attrib(default=1)
    _system = attrib(init=False, default=None, repr=False)
    _states = attrib(init=False, default=None, repr=False)
    _lock = attrib(init=False, factory=threading.Lock, repr=False)

    def __attrs_post_init__(self):
        if len(self.samples) < 1:
            raise InvalidArgument("a sample average needs at least one sample")
        if self.theta_reg < 0:
            raise InvalidArgument("theta_reg must be nonnegative")
        if not isinstance(self.mode, ObjectiveMode):
            self.mode = ObjectiveMode(self.mode)
        if self.mode is ObjectiveMode.BUFFERED and self.al is None:
            raise InvalidArgument(
                "buffered mode needs augmented Lagrangian parameters"
            )
        if int(self.workers) < 1:
            raise InvalidArgument("workers must be positive")

    @property
    def nu(self):
        return len(self.samples)

    @property
    def buffered(self):
        return self.mode is ObjectiveMode.BUFFERED

    def replace(self, **changes):
        """A copy with some parameters changed and caches dropped."""
        return evolve(self, **changes)

    def system(self):
        """Assembled, factorised per-sample operators and fixed loads."""
        with self._lock:
            if self._system is None:
                self._system = self._assemble()
            return self._system

    def _assemble(self):
        chunks = _chunks(self.nu, int(self.workers))
        operators = []
        for start, stop in chunks:
            try:
                operators.append(
                    assemble_operator(
                        self.mesh, self.samples[start:stop], self.pde
                    )
                )
            except NumericalFailure as err:
                index = start + (err.sample_index or 0)
                raise NumericalFailure(err.reason, sample_index=index)
        load = boundary_load(self.mesh, self.pde) + source_load(
            self.mesh, self.pde.source
        )
        coupling = control_load_matrix(
            self.mesh, self.control_mesh, self.pde.c1_on(self.control_mesh)
        )
        target_state = self.qoi.s_d(self.mesh.nodes)
        weights = interval_weights(self.mesh, self.qoi.target)
        return _System(
            list(zip(chunks, operators)),
            load,
            coupling,
            target_state,
            weights,
        )

    def _map(self, function, arrays=None):
        """Apply ``function(operator, rows)`` chunkwise, in sample order."""
        system = self.system()

        def run(item):
            (start, stop), operator = item
            rows = None if arrays is None else arrays[start:stop]
            return function(operator, rows)

        items = system.operators
        if len(items) == 1:
            results = [run(items[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(items)) as executor:
                results = list(executor.map(run, items))
        return numpy.concatenate(results, axis=0)

    def states(self, z_n):
        """Nodal states of all samples at a control, cached per control."""
        key = numpy.asarray(z_n, dtype=float).tobytes()
        with self._lock:
            if self._states is not None and self._states[0] == key:
                return self._states[1]
        system = self.system()
        rhs = system.load + system.coupling @ numpy.asarray(z_n, dtype=float)
        states = self._map(lambda operator, _: operator.solve(rhs))
        with self._lock:
            self._states = (key, states)
        return states

    def adjoints(self, dual_loads):
        return self._map(
            lambda operator, rows: operator.solve(rows), dual_loads
        )

    def control_norm_squared(self, z_n):
        return float(numpy.dot(numpy.square(z_n), self.control_mesh.lengths))

    def state(self, cp, index):
        """The P1 state of one sample."""
        return P1State(self.mesh, self.states(cp.z_n)[index])


def _chunks(count, workers):
    bounds = numpy.linspace(0, count, min(workers, count) + 1).astype(int)
    return [
        (int(start), int(stop)) for start, stop in zip(bounds[:-1], bounds[1:])
    ]


def _mean(values):
    return math.fsum(values) / len(values)


def qoi_g1(u, qoi):
    """Tracking discrepancy ``int (u - s_d)^2`` with s_d interpolated."""
    rows = _g1_rows(u.mesh, u.values[None, :], qoi.s_d(u.mesh.nodes))
    return float(rows[0])


def qoi_g2_raw(u, qoi):
    """Shortfall ``s_t - int_{D_t} u`` of a P1 state."""
    weights = interval_weights(u.mesh, qoi.target)
    return qoi.s_t - float(numpy.dot(weights, u.values))


def _g1_rows(mesh, states, target_state):
    error = states - target_state[None, :]
    left, right = error[:, :-1], error[:, 1:]
    squares = (left**2 + left * right + right**2) / 3.0
    return squares @ mesh.lengths


def g2_buffered(g2raw, cp, alpha):
    """``sigma + gamma + max(0, g2raw - gamma) / (1 - alpha)``."""
    excess = numpy.maximum(numpy.asarray(g2raw, dtype=float) - cp.gamma, 0.0)
    return cp.sigma + cp.gamma + excess / (1.0 - alpha)


def g2_buffered_smooth(g2raw, cp, alpha, beta):
    """``sigma + gamma + smax(g2raw - gamma; beta) / (1 - alpha)``."""
    return cp.sigma + cp.gamma + smax(
        numpy.asarray(g2raw, dtype=float) - cp.gamma, beta
    ) / (1.0 - alpha)


def _sample_terms(cp, spec, smooth):
    states = spec.states(cp.z_n)
    system = spec.system()
    g1 = _g1_rows(spec.mesh, states, system.target_state)
    g2 = spec.qoi.s_t - states @ system.weights
    if spec.buffered:
        if smooth:
            q = g2_buffered_smooth(g2, cp, spec.qoi.alpha, spec.al.beta)
        else:
            q = g2_buffered(g2, cp, spec.qoi.alpha)
    else:
        q = None
    return states, g1, g2, q


def _combine(cp, spec, g1, q):
    w1 = spec.theta_reg * spec.control_norm_squared(cp.z_n) + _mean(g1)
    if not spec.buffered:
        return w1, w1, None
    w2 = _mean(q)
    al = spec.al
    value = w1 + al.multiplier * w2 + al.theta_pen * w2**2
    return value, w1, w2


def saa_value(cp, spec, smooth=True):
    """The approximating objective at a point.

    Parameters
    ----------
    cp : ControlPoint
    spec : SaaSpec
    smooth : bool, optional
        Use smax (the default) or the exact positive part in buffered mode.

    Returns
    -------
    float
        ``inf`` for points outside the box or with negative slack.
    """
    if not cp.feasible():
        return numpy.inf
    _, g1, _, q = _sample_terms(cp, spec, smooth)
    value, _, _ = _combine(cp, spec, g1, q)
    return float(value)


def saa_estimate(cp, spec, smooth=False):
    """The objective with the standard error of its sample average.

    The standard error is that of the per-sample contributions
    ``g1_j + (y + 2 theta_pen w2) q_j``, the linearisation of the objective
    around the sample means.

    Returns
    -------
    Estimate
    """
    if not cp.feasible():
        raise InvalidArgument("cannot estimate at an infeasible point")
    _, g1, _, q = _sample_terms(cp, spec, smooth)
    value, w1, w2 = _combine(cp, spec, g1, q)
    contributions = numpy.array(g1, dtype=float)
    if spec.buffered:
        slope = spec.al.multiplier + 2.0 * spec.al.theta_pen * w2
        contributions = contributions + slope * q
    if spec.nu > 1:
        standard_error = float(
            numpy.std(contributions, ddof=1) / numpy.sqrt(spec.nu)
        )
    else:
        standard_error = float("nan")
    return Estimate(float(value), standard_error, float(w1), w2)


def evaluate(cp, spec):
    """Smooth objective value and adjoint gradient in one pass.

    Returns
    -------
    Evaluation
    """
    if not cp.feasible():
        raise InvalidArgument("the gradient needs a feasible point")
    states, g1, g2, q = _sample_terms(cp, spec, smooth=True)
    value, w1, w2 = _combine(cp, spec, g1, q)
    system = spec.system()
    nu = spec.nu

    error = states - system.target_state[None, :]
    dual = numpy.stack([mass_matrix_apply(spec.mesh, row) for row in error])
    dual *= 2.0 / nu
    gamma_grad = sigma_grad = 0.0
    if spec.buffered:
        al = spec.al
        alpha = spec.qoi.alpha
        slope = al.multiplier + 2.0 * al.theta_pen * w2
        logistic = smax_grad(g2 - cp.gamma, al.beta)
        # d g2 / du is -weights on every sample
        dual -= (slope / (nu * (1.0 - alpha))) * numpy.outer(
            logistic, system.weights
        )
        gamma_grad = slope * (1.0 - _mean(logistic) / (1.0 - alpha))
        sigma_grad = slope
    adjoints = spec.adjoints(dual)
    z_grad = (
        2.0 * spec.theta_reg * spec.control_mesh.lengths * cp.z_n
        + system.coupling.T @ numpy.sum(adjoints, axis=0)
    )
    gradient = Gradient(z_grad, float(gamma_grad), float(sigma_grad))
    return Evaluation(float(value), gradient, w1, w2, g1, g2)


def saa_gradient(cp, spec):
    """Adjoint gradient of the smooth objective over ``(z_n, gamma, sigma)``.

    Returns
    -------
    Gradient
    """
    return evaluate(cp, spec).gradient


def feasibility_residual(cp, spec, smooth=False):
    """The sample average ``w2`` of the buffered constraint.

    Positive values mean the constraint ``w2 = 0`` is violated from above.
    """
    if not spec.buffered:
        raise InvalidArgument("the feasibility residual needs buffered mode")
    _, _, _, q = _sample_terms(cp, spec, smooth)
    return _mean(q)


def strict_feasibility_probe(cp, spec):
    """Smallest residual reachable at ``cp.z_n`` with zero slack.

    Minimising ``gamma + E[max(0, g2 - gamma)] / (1 - alpha)`` over gamma
    gives the alpha-superquantile of the shortfall samples; a negative
    value certifies a strictly feasible point for the sample.
    """
    _, _, g2, _ = _sample_terms(cp, spec, smooth=False)
    return superquantile(DiscreteRv(g2), spec.qoi.alpha)


def embedded_norm(cp, spec):
    """``||T_n(z_n)||_Z`` of a control point."""
    return embed_control_norm(P0Control(spec.control_mesh, cp.z_n))


@attrs(frozen=True, eq=False)
class Instance:
    """A control problem under uncertainty, before sampling.

    Parameters
    ----------
    mesh : Mesh
        The state mesh.
    control_mesh : Mesh
    field : FieldSpec
    pde : PdeData
    qoi : QoiSpec
    box : Box
    theta_reg : float
    mode : ObjectiveMode
    sample_seed : int
        Seed of the nested sample stream shared by all stages.
    multiplier : float, optional
        The initial multiplier ``y`` in buffered mode.
    """

    mesh = attrib()
    control_mesh = attrib()
    field = attrib()
    pde = attrib()
    qoi = attrib()
    box = attrib()
    theta_reg = attrib(default=0.0, converter=float)
    mode = attrib(default=ObjectiveMode.EXPECTATION, converter=ObjectiveMode)
    sample_seed = attrib(default=0)
    multiplier = attrib(default=0.0, converter=float)

    def samples(self, nu, seed=None):
        """Samples ``0, ..., nu - 1`` of a stream, the run's by default."""
        seed = self.sample_seed if seed is None else seed
        return sample_batch(self.field, seed, nu)

    def saa_spec(self, nu, al=None, workers=1, seed=None):
        return SaaSpec(
            samples=self.samples(nu, seed),
            mesh=self.mesh,
            control_mesh=self.control_mesh,
            pde=self.pde,
            qoi=self.qoi,
            theta_reg=self.theta_reg,
            mode=self.mode,
            al=al,
            workers=workers,
        )

    def initial_point(self):
        """The zero control moved into the box, with zero gamma and slack."""
        z_n = numpy.clip(
            numpy.zeros(self.control_mesh.n_elements),
            self.box.lower,
            self.box.upper,
        )
        return ControlPoint(z_n, 0.0, 0.0, self.box)
