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
Error norms and observed convergence rates of the Galerkin solves.
"""


from collections import namedtuple

import numpy

from riskpde.coefficients import Sine
from riskpde.fem.mesh import P0Control, build_uniform_mesh
from riskpde.fem.solver import PdeData, solve_state
from riskpde.util import InvalidArgument


ConvergenceRow = namedtuple(
    "ConvergenceRow", ["h", "dof", "l2_error", "rate"]
)

ManufacturedSolution = namedtuple(
    "ManufacturedSolution", ["data", "control_value", "exact"]
)


def estimate_rate(errors):
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    Parameters
    ----------
    errors : list of (float, float)
        Pairs ``(h, error)`` from at least three mesh levels.

    Returns
    -------
    float
    """
    if len(errors) < 3:
        raise InvalidArgument(
            "need at least 3 mesh levels, got {}".format(len(errors))
        )
    h, error = numpy.array(errors, dtype=float).T
    if numpy.any(h <= 0) or numpy.any(error <= 0):
        raise InvalidArgument("mesh sizes and errors must be positive")
    slope, _ = numpy.polyfit(numpy.log(h), numpy.log(error), 1)
    return float(slope)


def l2_error(state, exact, order=5):
    """``||u_h - u||_L2`` by Gauss quadrature on every element."""
    points, weights = state.mesh.quadrature(order)
    difference = state(points) - exact(points)
    return float(numpy.sqrt(numpy.sum(weights * difference**2)))


def l2_distance(coarse, fine, order=5):
    """``||u_coarse - u_fine||_L2`` when the fine mesh refines the coarse."""
    points, weights = fine.mesh.quadrature(order)
    difference = coarse(points) - fine(points)
    return float(numpy.sqrt(numpy.sum(weights * difference**2)))


def quadratic_solution():
    """``u(x) = x (1 - x)`` on (0, 1): xi = 1, c1 z = 2, s_e = -1."""
    data = PdeData(c1=1.0, c2=(1.0, 1.0), s_e=(-1.0, -1.0))
    return ManufacturedSolution(data, 2.0, lambda x: x * (1.0 - x))


def sine_solution():
    """``u(x) = sin(pi x)`` on (0, 1) driven by a source term."""
    data = PdeData(
        c1=1.0,
        c2=(1.0, 1.0),
        s_e=(-numpy.pi, -numpy.pi),
        source=Sine(numpy.pi**2, 1.0),
    )
    return ManufacturedSolution(
        data, 0.0, lambda x: numpy.sin(numpy.pi * x)
    )


def _rows(levels):
    """Table rows and the fitted rate of ``(mesh, error)`` levels."""
    rows = []
    pairs = []
    for mesh, error in levels:
        if pairs:
            previous_h, previous_error = pairs[-1]
            local = numpy.log(error / previous_error) / numpy.log(
                mesh.h / previous_h
            )
        else:
            local = float("nan")
        pairs.append((mesh.h, error))
        rows.append(ConvergenceRow(mesh.h, mesh.n_nodes, error, float(local)))
    return rows, estimate_rate(pairs)


def convergence_study(manufactured, xi, n_elements_list, domain=(0.0, 1.0)):
    """Solve a manufactured problem on a sequence of uniform meshes.

    Parameters
    ----------
    manufactured : ManufacturedSolution
    xi : FieldSample
    n_elements_list : list of int
    domain : tuple of float, optional

    Returns
    -------
    rows : list of ConvergenceRow
        The rate column holds the observed rate between consecutive levels
        (NaN on the first row).
    rate : float
        Least-squares rate over all levels.
    """
    levels = []
    for n_elements in n_elements_list:
        mesh = build_uniform_mesh(n_elements, domain)
        control = P0Control(
            mesh, numpy.full(n_elements, manufactured.control_value)
        )
        state = solve_state(mesh, xi, manufactured.data, control)
        levels.append((mesh, l2_error(state, manufactured.exact)))
    return _rows(levels)


def refinement_study(xi, data, control, n_elements_list, refinement=4):
    """Errors against a solve on a finer mesh, for problems without a
    known solution.

    The reference mesh has ``refinement`` times as many elements as the
    finest level, so it refines every level that divides it.

    Parameters
    ----------
    xi : FieldSample
    data : PdeData
    control : P0Control
    n_elements_list : list of int
    refinement : int, optional

    Returns
    -------
    rows : list of ConvergenceRow
    rate : float
    """
    domain = control.mesh.domain
    finest = build_uniform_mesh(refinement * max(n_elements_list), domain)
    reference = solve_state(finest, xi, data, control)
    levels = []
    for n_elements in n_elements_list:
        mesh = build_uniform_mesh(n_elements, domain)
        state = solve_state(mesh, xi, data, control)
        levels.append((mesh, l2_distance(state, reference)))
    return _rows(levels)
