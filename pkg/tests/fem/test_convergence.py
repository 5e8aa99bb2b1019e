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

from riskpde.coefficients import Piecewise
from riskpde.fem.convergence import (
    convergence_study,
    estimate_rate,
    quadratic_solution,
    refinement_study,
    sine_solution,
)
from riskpde.fem.mesh import P0Control, build_uniform_mesh
from riskpde.fem.solver import PdeData
from riskpde.field import FieldSpec, realize
from riskpde.util import InvalidArgument


LEVELS = [16, 32, 64, 128, 256]
UNIT_FIELD = realize(FieldSpec(), [])


@pytest.mark.parametrize("order", [1.0, 2.0, 1.5])
def test_estimate_rate_exact(order):
    errors = [(h, 3.0 * h**order) for h in [0.5, 0.25, 0.125, 0.0625]]
    assert estimate_rate(errors) == pytest.approx(order)


def test_estimate_rate_halving():
    errors = [(0.1, 0.4), (0.05, 0.2), (0.025, 0.1)]
    assert estimate_rate(errors) == pytest.approx(1.0)


def test_estimate_rate_too_few_levels():
    with pytest.raises(InvalidArgument):
        estimate_rate([(0.1, 0.4), (0.05, 0.2)])


def test_estimate_rate_nonpositive_error():
    with pytest.raises(InvalidArgument):
        estimate_rate([(0.1, 0.4), (0.05, 0.0), (0.025, 0.1)])


def test_convergence_study_sine():
    rows, rate = convergence_study(sine_solution(), UNIT_FIELD, LEVELS)
    assert rate >= 1.9
    assert [row.dof for row in rows] == [n + 1 for n in LEVELS]
    assert numpy.isnan(rows[0].rate)
    assert all(row.rate > 1.8 for row in rows[1:])
    assert all(
        later.l2_error < earlier.l2_error
        for earlier, later in zip(rows[:-1], rows[1:])
    )


def test_convergence_study_quadratic():
    manufactured = quadratic_solution()
    rows, rate = convergence_study(manufactured, UNIT_FIELD, [8, 16, 32])
    assert rate >= 1.9
    assert rows[-1].l2_error < 1e-3


def test_refinement_study_random_field():
    spec = FieldSpec(modes=[Piecewise([0.0, 0.25, 1.0], [0.8, -0.4])])
    xi = realize(spec, [1.3])
    control_mesh = build_uniform_mesh(4)
    control = P0Control(control_mesh, [1.0, 0.0, 2.0, -1.0])
    data = PdeData(c1=1.0, c2=(1.0, 2.0), s_e=(0.5, -0.5))
    rows, rate = refinement_study(xi, data, control, [16, 32, 64, 128])
    assert rate >= 1.0
    assert len(rows) == 4
