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
Coefficient functions on an interval.

Random field modes, the mean log-conductivity, target states and source
terms are all drawn from this small whitelist so that essential bounds can
be computed exactly (piecewise constants) or by safe grid refinement
(trigonometric modes).
"""


import numpy
from attr import attrs, attrib

from riskpde.util import InvalidArgument


@attrs(frozen=True)
class Constant:
    """A constant function.

    Parameters
    ----------
    value : float
    """

    value = attrib(converter=float)

    piecewise_constant = True

    def __call__(self, x):
        return numpy.full(numpy.shape(x), self.value, dtype=float)

    def breakpoints(self):
        return ()


@attrs(frozen=True)
class Piecewise:
    """A piecewise constant function.

    The function takes ``values[i]`` on ``[edges[i], edges[i + 1])`` and zero
    outside ``[edges[0], edges[-1]]``. The last piece is closed on the
    right.

    Parameters
    ----------
    edges : tuple of float
        Strictly increasing piece boundaries.
    values : tuple of float
        One value per piece.
    """

    edges = attrib(converter=lambda e: tuple(float(v) for v in e))
    values = attrib(converter=lambda v: tuple(float(c) for c in v))

    piecewise_constant = True

    @edges.validator
    def _check_edges(self, attribute, edges):
        if len(edges) < 2 or numpy.any(numpy.diff(edges) <= 0):
            raise InvalidArgument(
                "piecewise edges must be strictly increasing, got {}".format(
                    edges
                )
            )

    @values.validator
    def _check_values(self, attribute, values):
        if len(values) != len(self.edges) - 1:
            raise InvalidArgument(
                "expected {} piece values, got {}".format(
                    len(self.edges) - 1, len(values)
                )
            )

    def __call__(self, x):
        x = numpy.asarray(x, dtype=float)
        edges = numpy.asarray(self.edges)
        index = numpy.searchsorted(edges, x, side="right") - 1
        # Right end of the last piece belongs to it
        index = numpy.where(x == edges[-1], len(self.values) - 1, index)
        inside = (index >= 0) & (index < len(self.values))
        values = numpy.asarray(self.values)
        return numpy.where(
            inside, values[numpy.clip(index, 0, len(self.values) - 1)], 0.0
        )

    def breakpoints(self):
        return self.edges


@attrs(frozen=True)
class Sine:
    """The mode ``amplitude * sin(wavenumber * pi * x + phase)``."""

    amplitude = attrib(converter=float)
    wavenumber = attrib(converter=float)
    phase = attrib(converter=float, default=0.0)

    piecewise_constant = False

    def __call__(self, x):
        x = numpy.asarray(x, dtype=float)
        return self.amplitude * numpy.sin(
            self.wavenumber * numpy.pi * x + self.phase
        )

    def breakpoints(self):
        return ()


@attrs(frozen=True)
class Cosine:
    """The mode ``amplitude * cos(wavenumber * pi * x + phase)``."""

    amplitude = attrib(converter=float)
    wavenumber = attrib(converter=float)
    phase = attrib(converter=float, default=0.0)

    piecewise_constant = False

    def __call__(self, x):
        x = numpy.asarray(x, dtype=float)
        return self.amplitude * numpy.cos(
            self.wavenumber * numpy.pi * x + self.phase
        )

    def breakpoints(self):
        return ()


ZERO = Constant(0.0)


def as_coefficient(value):
    """Wrap plain numbers as :class:`Constant` coefficient functions."""
    if isinstance(value, (int, float)):
        return Constant(value)
    if not callable(value):
        raise InvalidArgument(
            "cannot use {!r} as a coefficient function".format(value)
        )
    return value


def partition_midpoints(coefficients, domain):
    """Midpoints of the coarsest partition on which all pieces are constant.

    Parameters
    ----------
    coefficients : iterable of coefficient functions
    domain : tuple of float

    Returns
    -------
    numpy.ndarray
    """
    a, b = domain
    points = {a, b}
    for coefficient in coefficients:
        points.update(p for p in coefficient.breakpoints() if a < p < b)
    points = numpy.array(sorted(points))
    return 0.5 * (points[:-1] + points[1:])
