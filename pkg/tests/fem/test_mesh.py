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

import numpy
import pytest

from riskpde.fem.mesh import (
    Mesh,
    P0Control,
    P1State,
    build_uniform_mesh,
    embed_control_norm,
    interpolate,
    interval_weights,
    mass_matrix_apply,
)
from riskpde.util import InvalidArgument


UNIT_MESH = build_uniform_mesh(4)
HALVES = build_uniform_mesh(2)


def test_build_uniform_mesh():
    assert UNIT_MESH.nodes.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert UNIT_MESH.h == 0.25
    assert UNIT_MESH.n_elements == 4
    assert UNIT_MESH.n_nodes == 5
    assert UNIT_MESH.domain == (0.0, 1.0)


def test_build_uniform_mesh_single_element():
    mesh = build_uniform_mesh(1)
    assert mesh.nodes.tolist() == [0.0, 1.0]
    assert mesh.h == 1.0


def test_build_uniform_mesh_domain():
    mesh = build_uniform_mesh(3, (-1.0, 2.0))
    assert mesh.h == 1.0
    assert mesh.nodes[0] == -1.0
    assert mesh.nodes[-1] == 2.0


@pytest.mark.parametrize(
    "n_elements, domain",
    [(0, (0, 1)), (-2, (0, 1)), (2.5, (0, 1)), (4, (1, 1)), (4, (1, 0))],
)
def test_build_uniform_mesh_invalid(n_elements, domain):
    with pytest.raises(InvalidArgument):
        build_uniform_mesh(n_elements, domain)


def test_mesh_h_is_largest_element():
    mesh = Mesh([0.0, 0.1, 0.5, 1.0])
    assert mesh.h == pytest.approx(0.5)


@pytest.mark.parametrize("nodes", [[0.0], [0.0, 0.5, 0.5, 1.0], [1.0, 0.0]])
def test_mesh_invalid_nodes(nodes):
    with pytest.raises(InvalidArgument):
        Mesh(nodes)


def test_locate():
    points = numpy.array([0.0, 0.1, 0.25, 0.6, 1.0])
    assert UNIT_MESH.locate(points).tolist() == [0, 0, 1, 2, 3]


def test_quadrature_integrates_cubics():
    points, weights = UNIT_MESH.quadrature(2)
    assert points.shape == (4, 2)
    assert numpy.sum(weights * points**3) == pytest.approx(0.25)


@pytest.mark.parametrize(
    "coeffs, expected",
    [([1.0, 1.0], 1.0), ([3.0, 4.0], numpy.sqrt(12.5)), ([0.0, 0.0], 0.0)],
)
def test_embed_control_norm(coeffs, expected):
    control = P0Control(HALVES, coeffs)
    assert embed_control_norm(control) == pytest.approx(expected, abs=1e-15)


def test_embed_control_norm_uniform_identity():
    mesh = build_uniform_mesh(37)
    z = numpy.random.default_rng(0).standard_normal(37)
    expected = numpy.sqrt(mesh.h) * numpy.linalg.norm(z)
    actual = embed_control_norm(P0Control(mesh, z))
    assert abs(actual - expected) <= 1e-14 * max(1.0, expected)


def test_p0_control_evaluation():
    control = P0Control(HALVES, [3.0, 4.0])
    assert control(numpy.array([0.1, 0.7])).tolist() == [3.0, 4.0]


def test_p0_control_wrong_size():
    with pytest.raises(InvalidArgument):
        P0Control(HALVES, [1.0, 2.0, 3.0])


def test_p1_state_wrong_size():
    with pytest.raises(InvalidArgument):
        P1State(UNIT_MESH, [0.0, 1.0])


def test_p1_state_norms():
    identity = interpolate(UNIT_MESH, lambda x: x)
    assert identity.l2_norm() == pytest.approx(numpy.sqrt(1.0 / 3.0))
    assert identity.h1_seminorm() == pytest.approx(1.0)
    assert identity.v_norm() == pytest.approx(numpy.sqrt(1.0 / 3.0) + 1.0)


def test_p1_state_evaluation():
    identity = interpolate(UNIT_MESH, lambda x: 2.0 * x)
    assert identity(numpy.array([0.125, 0.9])) == pytest.approx([0.25, 1.8])


@pytest.mark.parametrize(
    "interval, expected",
    [(None, 0.5), ((0.0, 1.0), 0.5), ((0.25, 0.75), 0.25), ((0.1, 0.3), 0.04)],
)
def test_p1_state_integral(interval, expected):
    identity = interpolate(UNIT_MESH, lambda x: x)
    assert identity.integral(interval) == pytest.approx(expected)


def test_interval_weights_sum_to_length():
    weights = interval_weights(UNIT_MESH, (0.1, 0.6))
    assert weights.sum() == pytest.approx(0.5)
    assert weights[-1] == 0.0


@pytest.mark.parametrize("interval", [(0.5, 0.5), (-0.1, 0.5), (0.5, 1.5)])
def test_interval_weights_invalid(interval):
    with pytest.raises(InvalidArgument):
        interval_weights(UNIT_MESH, interval)


def test_mass_matrix_apply():
    values = numpy.linspace(0.0, 1.0, UNIT_MESH.n_nodes)
    ones = numpy.ones(UNIT_MESH.n_nodes)
    # int x * 1 and int x * x
    assert ones @ mass_matrix_apply(UNIT_MESH, values) == pytest.approx(0.5)
    assert values @ mass_matrix_apply(UNIT_MESH, values) == pytest.approx(
        1.0 / 3.0
    )
