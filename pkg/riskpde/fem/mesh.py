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
Interval meshes with piecewise constant (P0) and piecewise linear (P1)
function spaces.
"""


import numpy
from attr import attrs, attrib
from numpy.polynomial.legendre import leggauss

from riskpde.util import InvalidArgument


def _as_float_array(values):
    array = numpy.array(values, dtype=float)
    array.setflags(write=False)
    return array


@attrs(frozen=True, eq=False)
class Mesh:
    """A partition of an interval into elements.

    Parameters
    ----------
    nodes : numpy.ndarray
        Strictly increasing node coordinates, including both endpoints.
    h : float
        The largest element length.
    """

    nodes = attrib(converter=_as_float_array)
    h = attrib(default=None)

    @nodes.validator
    def _check_nodes(self, attribute, nodes):
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidArgument("a mesh needs at least two nodes")
        if not numpy.all(numpy.isfinite(nodes)):
            raise InvalidArgument("mesh nodes must be finite")
        if numpy.any(numpy.diff(nodes) <= 0):
            raise InvalidArgument("mesh nodes must be strictly increasing")

    def __attrs_post_init__(self):
        if self.h is None:
            object.__setattr__(self, "h", float(numpy.max(self.lengths)))

    @property
    def n_elements(self):
        return self.nodes.size - 1

    @property
    def n_nodes(self):
        return self.nodes.size

    @property
    def domain(self):
        return (float(self.nodes[0]), float(self.nodes[-1]))

    @property
    def lengths(self):
        """Element lengths |K_i|."""
        return numpy.diff(self.nodes)

    @property
    def midpoints(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def locate(self, x):
        """Index of the element containing each point of ``x``."""
        index = numpy.searchsorted(self.nodes, x, side="right") - 1
        return numpy.clip(index, 0, self.n_elements - 1)

    def quadrature(self, order):
        """Gauss-Legendre points and weights on every element.

        Returns
        -------
        points, weights : numpy.ndarray
            Arrays of shape ``(n_elements, order)``.
        """
        reference_points, reference_weights = leggauss(order)
        half = 0.5 * self.lengths[:, None]
        points = self.midpoints[:, None] + half * reference_points[None, :]
        weights = half * reference_weights[None, :]
        return points, weights


def build_uniform_mesh(n_elements, domain=(0.0, 1.0)):
    """Build a uniform partition of an interval.

    Parameters
    ----------
    n_elements : int
        The number of elements, at least one.
    domain : tuple of float, optional
        The interval ``(a, b)``, default ``(0, 1)``.

    Returns
    -------
    Mesh
        A mesh with ``h == (b - a) / n_elements``.
    """
    if isinstance(n_elements, bool) or int(n_elements) != n_elements:
        raise InvalidArgument(
            "n_elements must be an integer, got {!r}".format(n_elements)
        )
    n_elements = int(n_elements)
    if n_elements < 1:
        raise InvalidArgument(
            "n_elements must be positive, got {}".format(n_elements)
        )
    a, b = (float(v) for v in domain)
    if not (numpy.isfinite(a) and numpy.isfinite(b)) or not b > a:
        raise InvalidArgument("empty interval ({}, {})".format(a, b))
    nodes = numpy.linspace(a, b, n_elements + 1)
    return Mesh(nodes, h=(b - a) / n_elements)


@attrs(frozen=True, eq=False)
class P0Control:
    """A piecewise constant control, the image of ``T_n``.

    Parameters
    ----------
    mesh : Mesh
        The control mesh.
    coeffs : numpy.ndarray
        One value per element.
    """

    mesh = attrib()
    coeffs = attrib(converter=_as_float_array)

    @coeffs.validator
    def _check_coeffs(self, attribute, coeffs):
        if coeffs.shape != (self.mesh.n_elements,):
            raise InvalidArgument(
                "expected {} control coefficients, got shape {}".format(
                    self.mesh.n_elements, coeffs.shape
                )
            )

    def __call__(self, x):
        return self.coeffs[self.mesh.locate(x)]


def embed_control_norm(z):
    """The norm of the embedded control, ``||T_n(z_n)||_Z``.

    Parameters
    ----------
    z : P0Control

    Returns
    -------
    float
        ``sqrt(sum_i z_i**2 |K_i|)``.
    """
    return float(numpy.sqrt(numpy.dot(z.coeffs**2, z.mesh.lengths)))


@attrs(frozen=True, eq=False)
class P1State:
    """A continuous piecewise linear function given by its nodal values.

    Parameters
    ----------
    mesh : Mesh
    values : numpy.ndarray
        One value per node.
    """

    mesh = attrib()
    values = attrib(converter=_as_float_array)

    @values.validator
    def _check_values(self, attribute, values):
        if values.shape != (self.mesh.n_nodes,):
            raise InvalidArgument(
                "expected {} nodal values, got shape {}".format(
                    self.mesh.n_nodes, values.shape
                )
            )

    def __call__(self, x):
        return numpy.interp(x, self.mesh.nodes, self.values)

    def l2_norm(self):
        left, right = self.values[:-1], self.values[1:]
        squares = (left**2 + left * right + right**2) / 3.0
        return float(numpy.sqrt(numpy.dot(squares, self.mesh.lengths)))

    def h1_seminorm(self):
        slopes = numpy.diff(self.values) / self.mesh.lengths
        return float(numpy.sqrt(numpy.dot(slopes**2, self.mesh.lengths)))

    def v_norm(self):
        """The H1 norm ``||u||_L2 + ||u'||_L2`` used in stability bounds."""
        return self.l2_norm() + self.h1_seminorm()

    def integral(self, interval=None):
        """Exact integral over the mesh domain or a subinterval of it."""
        if interval is None:
            return float(
                numpy.dot(
                    0.5 * (self.values[:-1] + self.values[1:]),
                    self.mesh.lengths,
                )
            )
        weights = interval_weights(self.mesh, interval)
        return float(numpy.dot(weights, self.values))


def interpolate(mesh, function):
    """The P1 interpolant of a function on a mesh."""
    return P1State(mesh, function(mesh.nodes))


def mass_matrix_apply(mesh, values):
    """Apply the exact P1 mass matrix to a vector of nodal values."""
    lengths = mesh.lengths
    left, right = values[:-1], values[1:]
    out = numpy.zeros(mesh.n_nodes)
    out[:-1] += lengths * (2.0 * left + right) / 6.0
    out[1:] += lengths * (left + 2.0 * right) / 6.0
    return out


def interval_weights(mesh, interval):
    """Exact integrals of the P1 hat functions over a subinterval.

    Elements cut by the interval endpoints are split, so the integral of any
    P1 function over the interval is ``interval_weights(...) @ values``.
    """
    lower, upper = (float(v) for v in interval)
    a, b = mesh.domain
    if not (a <= lower < upper <= b):
        raise InvalidArgument(
            "interval ({}, {}) is not a nonempty subinterval of "
            "({}, {})".format(lower, upper, a, b)
        )
    nodes = mesh.nodes
    lo = numpy.clip(lower, nodes[:-1], nodes[1:])
    hi = numpy.clip(upper, nodes[:-1], nodes[1:])
    lengths = mesh.lengths
    # On [lo, hi] inside element i, phi_left is linear so the midpoint rule
    # is exact.
    covered = hi - lo
    mid = 0.5 * (lo + hi)
    phi_right = (mid - nodes[:-1]) / lengths
    phi_left = 1.0 - phi_right
    weights = numpy.zeros(mesh.n_nodes)
    weights[:-1] += covered * phi_left
    weights[1:] += covered * phi_right
    return weights
