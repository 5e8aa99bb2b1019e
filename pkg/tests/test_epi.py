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

from riskpde.epi import (
    BUNDLED_PROBLEMS,
    DEFAULT_SCHEDULE,
    LIMIT_TOLERANCE,
    DemoStage,
    Perturbation,
    bundled_problem,
    oscillatory_problem,
    run_gap_demo,
    select_level,
    shift_problem,
    step_problem,
)
from riskpde.util import InvalidArgument


STEP = step_problem()
SHIFT = shift_problem()
OSCILLATORY = oscillatory_problem()


def test_perturbation_none():
    assert Perturbation.NONE(10, 0.5) == 0.0
    assert Perturbation.NONE.derivative(10, 0.5) == 0.0
    assert Perturbation.NONE.amplitude(10) == 0.0


def test_perturbation_shift():
    assert Perturbation.SHIFT(4, 0.5) == 0.25
    assert Perturbation.SHIFT.derivative(4, 0.5) == 0.0
    assert Perturbation.SHIFT.amplitude(4) == 0.0


def test_perturbation_oscillatory():
    r = numpy.array([0.0, 0.3])
    expected = numpy.sin(100 * r) / 100
    assert Perturbation.OSCILLATORY(100, r) == pytest.approx(expected)
    assert Perturbation.OSCILLATORY.derivative(100, 0.3) == pytest.approx(
        numpy.cos(30.0)
    )
    assert Perturbation.OSCILLATORY.amplitude(100) == 0.01


def test_step_levels():
    assert STEP.level(4).error == pytest.approx(0.0, abs=1e-12)
    assert STEP.level(4).averages == pytest.approx([1.0, -0.5, 2.0, 0.25])
    assert STEP.level(2).averages == pytest.approx([0.25, 1.125])
    assert STEP.level(2).error == pytest.approx(0.6640625)
    assert STEP.level(1).error == pytest.approx(0.85546875)


def test_levels_are_nested():
    errors = [OSCILLATORY.level(2**k).error for k in range(8)]
    assert numpy.all(numpy.diff(errors) <= 1e-15)
    assert errors[-1] > 0.0


@pytest.mark.parametrize("n", [0, 3, 2**15])
def test_level_invalid(n):
    with pytest.raises(InvalidArgument):
        STEP.level(n)


def test_objective_at_cell_averages():
    level = SHIFT.level(8)
    assert SHIFT.objective(level.averages) == pytest.approx(level.error + 0.5)
    assert SHIFT.objective(level.averages + 1.0) == pytest.approx(
        level.error + 1.5
    )


def test_approximate():
    averages = SHIFT.level(4).averages
    assert SHIFT.approximate(20, averages) == pytest.approx(
        SHIFT.objective(averages) + 0.05
    )


@pytest.mark.parametrize(
    "epsilon, expected", [(1e-6, 4), (0.7, 2), (1.0, 1)]
)
def test_select_level_step(epsilon, expected):
    assert select_level(STEP, epsilon) == expected


def test_select_level_smallest():
    n = select_level(OSCILLATORY, 1e-3)
    assert OSCILLATORY.level(n).error <= 1e-3
    assert OSCILLATORY.level(n // 2).error > 1e-3


def test_select_level_invalid():
    with pytest.raises(InvalidArgument):
        select_level(STEP, 0.0)
    with pytest.raises(InvalidArgument):
        select_level(OSCILLATORY, 1e-20)


def test_infimum_without_perturbation():
    level = SHIFT.level(8)
    assert SHIFT.infimum(8) == pytest.approx(level.error + 0.5)
    assert STEP.infimum(4, 100) == pytest.approx(STEP.infimum(4), abs=1e-12)


def test_infimum_shift():
    assert SHIFT.infimum(8, 50) == pytest.approx(SHIFT.infimum(8) + 0.02)


@pytest.mark.parametrize("nu", [10, 1000])
def test_infimum_oscillatory(nu):
    base = OSCILLATORY.infimum(16)
    value = OSCILLATORY.infimum(16, nu)
    radius = numpy.sqrt(numpy.mean(OSCILLATORY.level(16).averages ** 2))
    assert value >= base - 1.0 / nu
    assert value <= base + numpy.sin(nu * radius) / nu + 1e-12


def test_minimise_recovers_averages():
    level = STEP.level(4)
    x, value = STEP.minimise(4, 10, [numpy.zeros(4), numpy.ones(4)])
    assert x == pytest.approx(level.averages, abs=1e-6)
    assert value == pytest.approx(level.error, abs=1e-10)


@pytest.mark.parametrize("name", sorted(BUNDLED_PROBLEMS))
def test_gap_demo_passes(name):
    report = run_gap_demo(bundled_problem(name), 1e-3, DEFAULT_SCHEDULE)
    assert report.passed
    assert report.failed_stage is None
    assert report.discretisation_error <= 1e-3
    assert [row.nu for row in report.rows] == [10, 100, 1000, 10000]
    for row in report.rows:
        assert row.passed
        assert row.achieved <= row.inf_estimate + row.delta + report.grid_slack
        assert row.true_value <= row.bound
    assert report.liminf_gap >= -LIMIT_TOLERANCE
    assert report.limsup_gap <= LIMIT_TOLERANCE


def test_gap_demo_delta_includes_oscillation():
    report = run_gap_demo(OSCILLATORY, 1e-3, [DemoStage(100, 1e-9)])
    assert report.rows[0].delta == pytest.approx(1e-9 + 0.02)


def test_gap_demo_is_reproducible():
    first = run_gap_demo(OSCILLATORY, 1e-3, DEFAULT_SCHEDULE[:2], seed=4)
    second = run_gap_demo(OSCILLATORY, 1e-3, DEFAULT_SCHEDULE[:2], seed=4)
    assert first.rows == second.rows


def test_gap_demo_reports_failed_stage():
    schedule = [DemoStage(10, 1e-9), DemoStage(100, -1.0)]
    report = run_gap_demo(STEP, 1e-3, schedule)
    assert not report.passed
    assert report.failed_stage == 1
    assert report.rows[0].passed
    assert not report.rows[1].passed


def test_gap_demo_empty_schedule():
    with pytest.raises(InvalidArgument):
        run_gap_demo(STEP, 1e-3, [])


def test_bundled_problem_unknown():
    with pytest.raises(InvalidArgument):
        bundled_problem("quartic")


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("name", sorted(BUNDLED_PROBLEMS))
def test_gap_demo_all_seeds(name, seed):
    report = run_gap_demo(bundled_problem(name), 1e-3, DEFAULT_SCHEDULE, seed)
    assert report.passed
