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
Galerkin solves of the random-coefficient heat equation with Robin
boundary conditions,

    -(xi u')' = c1 z + f   in (a, b)
    xi u' n   = c2 (s_e - u)   at x = a, b

in the P1 space of a mesh, together with the adjoint solves used for
gradients.
"""


import numpy
import scipy.sparse
from attr import attrs, attrib

from riskpde.coefficients import as_coefficient
from riskpde.fem.mesh import P1State
from riskpde.fem.tridiag import factorize
from riskpde.util import InvalidArgument, NumericalFailure


STIFFNESS_QUADRATURE_ORDER = 2
SOURCE_QUADRATURE_ORDER = 3


def _pair(value):
    pair = tuple(float(v) for v in numpy.broadcast_to(value, (2,)))
    return pair


def _coefficient_or_none(value):
    return None if value is None else as_coefficient(value)


@attrs(frozen=True, eq=False)
class PdeData:
    """The deterministic data of the heat equation.

    Parameters
    ----------
    c1 : float or numpy.ndarray
        Control coefficient, a nonnegative constant or one value per control
        element.
    c2 : tuple of float
        Robin coefficients at the left and right endpoints.
    s_e : tuple of float
        Exterior temperatures at the left and right endpoints.
    source : callable, optional
        An additional deterministic source term f(x).
    """

    c1 = attrib(default=1.0)
    c2 = attrib(default=(1.0, 1.0), converter=_pair)
    s_e = attrib(default=(0.0, 0.0), converter=_pair)
    source = attrib(default=None, converter=_coefficient_or_none)

    @c1.validator
    def _check_c1(self, attribute, c1):
        c1 = numpy.asarray(c1, dtype=float)
        if not numpy.all(numpy.isfinite(c1)) or numpy.any(c1 < 0):
            raise InvalidArgument("c1 must be finite and nonnegative")

    @c2.validator
    def _check_c2(self, attribute, c2):
        if not all(numpy.isfinite(c2)) or min(c2) < 0:
            raise InvalidArgument("c2 must be finite and nonnegative")

    @s_e.validator
    def _check_s_e(self, attribute, s_e):
        if not all(numpy.isfinite(s_e)):
            raise InvalidArgument("s_e must be finite")

    def c1_on(self, control_mesh):
        """The control coefficient as one value per control element."""
        c1 = numpy.asarray(self.c1, dtype=float)
        if c1.ndim == 0:
            return numpy.full(control_mesh.n_elements, float(c1))
        if c1.shape != (control_mesh.n_elements,):
            raise InvalidArgument(
                "c1 has {} values but the control mesh has {} elements".format(
                    c1.size, control_mesh.n_elements
                )
            )
        return c1


@attrs(frozen=True, eq=False)
class RobinOperator:
    """Assembled and factorised stiffness matrices for a batch of fields.

    The bilinear form ``a(u, v; xi)`` is symmetric, so the same factors
    serve the state and the adjoint equations.

    Parameters
    ----------
    mesh : Mesh
        The state mesh.
    diagonal : numpy.ndarray
        Shape ``(m, n_nodes)``.
    offdiagonal : numpy.ndarray
        Shape ``(m, n_nodes - 1)``.
    factor : riskpde.fem.tridiag.TridiagonalFactor
    """

    mesh = attrib()
    diagonal = attrib()
    offdiagonal = attrib()
    factor = attrib()

    @property
    def batch_size(self):
        return self.diagonal.shape[0]

    def solve(self, rhs):
        return self.factor.solve(rhs)

    def apply(self, values):
        """Multiply every matrix of the batch with nodal values."""
        values = numpy.broadcast_to(values, self.diagonal.shape)
        out = self.diagonal * values
        out[:, :-1] += self.offdiagonal * values[:, 1:]
        out[:, 1:] += self.offdiagonal * values[:, :-1]
        return out

    def matrix(self, index=0):
        """The assembled matrix of one batch member, as a sparse matrix."""
        off = self.offdiagonal[index]
        return scipy.sparse.diags(
            [off, self.diagonal[index], off], [-1, 0, 1], format="csr"
        )


def evaluate_fields(samples, points):
    """Evaluate a list of field samples at the same points.

    Returns
    -------
    numpy.ndarray
        Shape ``(len(samples),) + points.shape``.
    """
    return numpy.stack([sample(points) for sample in samples])


def assemble_operator(mesh, samples, data):
    """Assemble and factorise ``a(., .; xi)`` for every sample.

    Parameters
    ----------
    mesh : Mesh
        The state mesh.
    samples : list of FieldSample
    data : PdeData

    Returns
    -------
    RobinOperator

    Raises
    ------
    InvalidArgument
        If both Robin coefficients vanish, which leaves the constants in the
        kernel of the operator.
    NumericalFailure
        If a field is not positive at a quadrature point or an assembled
        matrix is not positive definite.
    """
    if max(data.c2) == 0.0:
        raise InvalidArgument(
            "both Robin coefficients are zero; the operator is singular on "
            "constants"
        )
    points, weights = mesh.quadrature(STIFFNESS_QUADRATURE_ORDER)
    xi = evaluate_fields(samples, points)
    bad = ~(xi > 0) | ~numpy.isfinite(xi)
    if numpy.any(bad):
        index = int(numpy.flatnonzero(numpy.any(bad, axis=(1, 2)))[0])
        raise NumericalFailure(
            "conductivity is not positive and finite at all quadrature "
            "points",
            sample_index=index,
        )
    # Element stiffness (int_K xi) / |K|^2 times [[1, -1], [-1, 1]]
    conductance = numpy.sum(xi * weights[None], axis=2) / mesh.lengths**2
    diagonal = numpy.zeros((len(samples), mesh.n_nodes))
    diagonal[:, :-1] += conductance
    diagonal[:, 1:] += conductance
    diagonal[:, 0] += data.c2[0]
    diagonal[:, -1] += data.c2[1]
    offdiagonal = -conductance
    factor = factorize(diagonal, offdiagonal)
    return RobinOperator(mesh, diagonal, offdiagonal, factor)


def boundary_load(mesh, data):
    """The Robin load ``l(v) = c2 s_e v`` at both endpoints."""
    load = numpy.zeros(mesh.n_nodes)
    load[0] += data.c2[0] * data.s_e[0]
    load[-1] += data.c2[1] * data.s_e[1]
    return load


def source_load(mesh, source):
    """Integrals of ``source * phi_i`` by 3-point Gauss on every element."""
    load = numpy.zeros(mesh.n_nodes)
    if source is None:
        return load
    points, weights = mesh.quadrature(SOURCE_QUADRATURE_ORDER)
    values = source(points) * weights
    phi_right = (points - mesh.nodes[:-1, None]) / mesh.lengths[:, None]
    load[:-1] += numpy.sum(values * (1.0 - phi_right), axis=1)
    load[1:] += numpy.sum(values * phi_right, axis=1)
    return load


def control_load_matrix(state_mesh, control_mesh, c1):
    """The matrix of ``b(z, v) = int c1 z v`` between P0 and P1 bases.

    The state and control meshes may differ; the integrals are exact on the
    common refinement of both partitions.

    Parameters
    ----------
    state_mesh : Mesh
    control_mesh : Mesh
    c1 : numpy.ndarray
        One value per control element.

    Returns
    -------
    numpy.ndarray
        Shape ``(state_mesh.n_nodes, control_mesh.n_elements)``.
    """
    if not numpy.allclose(
        state_mesh.domain, control_mesh.domain, rtol=0.0, atol=1e-14
    ):
        raise InvalidArgument(
            "state mesh on {} and control mesh on {} differ".format(
                state_mesh.domain, control_mesh.domain
            )
        )
    breaks = numpy.union1d(state_mesh.nodes, control_mesh.nodes[1:-1])
    lengths = numpy.diff(breaks)
    keep = lengths > 0
    lengths = lengths[keep]
    mid = (0.5 * (breaks[:-1] + breaks[1:]))[keep]
    element = state_mesh.locate(mid)
    piece = control_mesh.locate(mid)
    phi_right = (mid - state_mesh.nodes[element]) / state_mesh.lengths[element]
    weight = lengths * c1[piece]
    matrix = numpy.zeros((state_mesh.n_nodes, control_mesh.n_elements))
    numpy.add.at(matrix, (element, piece), weight * (1.0 - phi_right))
    numpy.add.at(matrix, (element + 1, piece), weight * phi_right)
    return matrix


def state_rhs(mesh, data, z):
    """The right-hand side ``l(v) + b(z, v) (+ source)`` as nodal values."""
    load = boundary_load(mesh, data) + source_load(mesh, data.source)
    coupling = control_load_matrix(mesh, z.mesh, data.c1_on(z.mesh))
    return load + coupling @ z.coeffs


def solve_state(mesh, xi, data, z):
    """Solve the Galerkin problem for one field sample.

    Parameters
    ----------
    mesh : Mesh
        The state mesh.
    xi : FieldSample
    data : PdeData
    z : P0Control
        The control, possibly on a different mesh.

    Returns
    -------
    P1State
    """
    operator = assemble_operator(mesh, [xi], data)
    values = operator.solve(state_rhs(mesh, data, z))[0]
    return P1State(mesh, values)


def solve_adjoint(mesh, xi, data, dual_load):
    """Solve ``a(v, p; xi) = dual_load(v)`` for all P1 ``v``.

    Parameters
    ----------
    mesh : Mesh
    xi : FieldSample
    data : PdeData
    dual_load : numpy.ndarray or P1State
        Values of the functional on the P1 hat functions.

    Returns
    -------
    P1State
    """
    values = getattr(dual_load, "values", dual_load)
    values = numpy.asarray(values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise InvalidArgument(
            "dual load needs {} entries, got shape {}".format(
                mesh.n_nodes, values.shape
            )
        )
    operator = assemble_operator(mesh, [xi], data)
    return P1State(mesh, operator.solve(values)[0])


def galerkin_residual(operator, states, rhs):
    """The residual ``rhs - A u`` on every basis function, per sample."""
    return rhs - operator.apply(states)
