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
Sample the log-linear conductivity field

    xi(x) = exp(b0(x) + sum_j b_j(x) y_j),   y_j iid standard normal,

and compute its essential bounds.
"""


from collections import namedtuple

import numpy
from attr import attrs, attrib

from riskpde.coefficients import (
    ZERO,
    as_coefficient,
    partition_midpoints,
)
from riskpde.util import InvalidArgument, NumericalFailure


# Relative inflation of grid-estimated bounds for non piecewise constant
# modes.
GRID_BOUND_INFLATION = 1.01
DEFAULT_GRID_CELLS = 640
PROBE_BATCH = 1024

# Stream index reserved for integrability probes, disjoint from sample
# indices used by batches.
_PROBE_STREAM = 2**63

ProbeResult = namedtuple(
    "ProbeResult", ["mean", "standard_error", "n_samples"]
)


def _modes(modes):
    return tuple(as_coefficient(mode) for mode in modes)


@attrs(frozen=True)
class FieldSpec:
    """A truncated log-linear random field on an interval.

    Parameters
    ----------
    b0 : coefficient function, optional
        Mean of the log-conductivity; zero by default.
    modes : tuple of coefficient functions, optional
        The J mode functions ``b_j``.
    domain : tuple of float, optional
    grid_cells : int, optional
        Resolution of the evaluation grid used to bound fields with
        trigonometric modes, conventionally ten times the state mesh.
    """

    b0 = attrib(default=ZERO, converter=as_coefficient)
    modes = attrib(default=(), converter=_modes)
    domain = attrib(
        default=(0.0, 1.0), converter=lambda d: tuple(float(v) for v in d)
    )
    grid_cells = attrib(default=DEFAULT_GRID_CELLS)

    @domain.validator
    def _check_domain(self, attribute, domain):
        if len(domain) != 2 or not domain[1] > domain[0]:
            raise InvalidArgument("empty field domain {}".format(domain))

    @grid_cells.validator
    def _check_grid_cells(self, attribute, grid_cells):
        if int(grid_cells) < 1:
            raise InvalidArgument("grid_cells must be positive")

    @property
    def J(self):
        return len(self.modes)

    @property
    def piecewise_constant(self):
        return all(
            coefficient.piecewise_constant
            for coefficient in (self.b0,) + self.modes
        )

    def bound_points(self):
        """Points on which the extreme values of the field are attained."""
        coefficients = (self.b0,) + self.modes
        midpoints = partition_midpoints(coefficients, self.domain)
        if self.piecewise_constant:
            return midpoints
        grid = numpy.linspace(*self.domain, int(self.grid_cells) + 1)
        return numpy.union1d(grid, midpoints)

    def log_field(self, y, x):
        """``b0(x) + sum_j b_j(x) y_j`` for a stack of y vectors.

        Parameters
        ----------
        y : numpy.ndarray
            Shape ``(m, J)``.
        x : numpy.ndarray
            Evaluation points, any shape.

        Returns
        -------
        numpy.ndarray
            Shape ``(m,) + x.shape``.
        """
        y = numpy.atleast_2d(y)
        x = numpy.asarray(x, dtype=float)
        value = numpy.broadcast_to(self.b0(x), (y.shape[0],) + x.shape)
        value = numpy.array(value)
        for j, mode in enumerate(self.modes):
            value += y[:, j].reshape((-1,) + (1,) * x.ndim) * mode(x)
        return value

    def bounds(self, y):
        """Essential lower and upper bounds for a stack of y vectors."""
        log_values = self.log_field(y, self.bound_points())
        lower = numpy.exp(numpy.min(log_values, axis=1))
        upper = numpy.exp(numpy.max(log_values, axis=1))
        if not self.piecewise_constant:
            lower = lower / GRID_BOUND_INFLATION
            upper = upper * GRID_BOUND_INFLATION
        return lower, upper


@attrs(frozen=True, eq=False)
class _LogLinearField:
    spec = attrib()
    y = attrib()

    def __call__(self, x):
        return numpy.exp(self.spec.log_field(self.y[None, :], x)[0])


@attrs(frozen=True, eq=False)
class FieldSample:
    """One realisation of the conductivity field.

    Parameters
    ----------
    y : numpy.ndarray
        The J standard normal coordinates.
    evaluator : callable
        Vectorised ``x -> xi(x)``.
    c_lower : float
        Essential infimum of the field over the closed domain.
    c_upper : float
        Essential supremum of the field over the closed domain.
    """

    y = attrib()
    evaluator = attrib(repr=False)
    c_lower = attrib()
    c_upper = attrib()

    def __call__(self, x):
        return self.evaluator(x)


def realize(spec, y):
    """Build the field sample with given coordinates ``y``."""
    y = numpy.array(y, dtype=float).reshape(-1)
    if y.shape != (spec.J,):
        raise InvalidArgument(
            "expected {} field coordinates, got {}".format(spec.J, y.size)
        )
    y.setflags(write=False)
    lower, upper = spec.bounds(y[None, :])
    if not (numpy.isfinite(lower[0]) and numpy.isfinite(upper[0])):
        raise NumericalFailure("field bounds are not finite")
    if not lower[0] > 0:
        raise NumericalFailure("field lower bound underflows to zero")
    return FieldSample(
        y, _LogLinearField(spec, y), float(lower[0]), float(upper[0])
    )


def generator(seed, index=0):
    """The counter-based generator for stream ``index`` of a run.

    Every ``(seed, index)`` pair keys an independent Philox stream, so a
    sample does not depend on which other samples were drawn before it.
    """
    if int(seed) < 0 or int(index) < 0:
        raise InvalidArgument("seeds and stream indices must be nonnegative")
    sequence = numpy.random.SeedSequence([int(seed), int(index)])
    return numpy.random.Generator(numpy.random.Philox(sequence))


def sample_field(spec, seed, index=0):
    """Draw one field sample.

    Parameters
    ----------
    spec : FieldSpec
    seed : int
    index : int, optional
        Position of the sample in its run.

    Returns
    -------
    FieldSample
    """
    y = generator(seed, index).standard_normal(spec.J)
    return realize(spec, y)


def sample_batch(spec, seed, count, start=0):
    """Draw samples ``start, ..., start + count - 1`` of a run."""
    return [
        sample_field(spec, seed, index)
        for index in range(start, start + count)
    ]


def integrability_probe(spec, p, q, n_mc, seed=0):
    """Monte Carlo estimate of ``E[c_upper**p / c_lower**q]``.

    Parameters
    ----------
    spec : FieldSpec
    p : float
        Exponent in [0, 1].
    q : float
        Exponent in [0, 3].
    n_mc : int
        Number of Monte Carlo samples.
    seed : int, optional

    Returns
    -------
    ProbeResult
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument("p must lie in [0, 1], got {}".format(p))
    if not 0.0 <= q <= 3.0:
        raise InvalidArgument("q must lie in [0, 3], got {}".format(q))
    if int(n_mc) < 1:
        raise InvalidArgument("n_mc must be positive, got {}".format(n_mc))
    n_mc = int(n_mc)
    y = generator(seed, _PROBE_STREAM).standard_normal((n_mc, spec.J))
    values = numpy.empty(n_mc)
    for start in range(0, n_mc, PROBE_BATCH):
        lower, upper = spec.bounds(y[start : start + PROBE_BATCH])
        values[start : start + PROBE_BATCH] = upper**p / lower**q
    if not numpy.all(numpy.isfinite(values)):
        raise NumericalFailure(
            "nonfinite integrand in integrability probe",
            sample_index=int(numpy.flatnonzero(~numpy.isfinite(values))[0]),
        )
    mean = float(numpy.mean(values))
    if n_mc > 1:
        standard_error = float(numpy.std(values, ddof=1) / numpy.sqrt(n_mc))
    else:
        standard_error = float("nan")
    return ProbeResult(mean, standard_error, n_mc)
