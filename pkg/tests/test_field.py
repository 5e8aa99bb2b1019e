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

import math

import numpy
import pytest

from riskpde.coefficients import Constant, Cosine, Piecewise, Sine
from riskpde.field import (
    GRID_BOUND_INFLATION,
    FieldSpec,
    generator,
    integrability_probe,
    realize,
    sample_batch,
    sample_field,
)
from riskpde.util import InvalidArgument, NumericalFailure


CONSTANT_MODE = FieldSpec(modes=[Constant(1.0)])
LEFT_HALF = FieldSpec(modes=[Piecewise([0.0, 0.5], [1.0])])
TRIG_MODES = FieldSpec(
    b0=0.1,
    modes=[Sine(0.6, 1.0), Cosine(0.3, 3.0), Piecewise([0.2, 0.7], [0.5])],
    grid_cells=2000,
)
DENSE_GRID = numpy.linspace(0.0, 1.0, 10001)


def test_field_spec_defaults():
    spec = FieldSpec()
    assert spec.J == 0
    assert spec.domain == (0.0, 1.0)
    assert spec.piecewise_constant


@pytest.mark.parametrize(
    "kwargs",
    [{"domain": (1.0, 1.0)}, {"domain": (0.0,)}, {"grid_cells": 0}],
)
def test_field_spec_invalid(kwargs):
    with pytest.raises(InvalidArgument):
        FieldSpec(**kwargs)


def test_empty_expansion():
    sample = sample_field(FieldSpec(), seed=3)
    assert sample.y.shape == (0,)
    assert sample.c_lower == 1.0
    assert sample.c_upper == 1.0
    assert sample(DENSE_GRID) == pytest.approx(numpy.ones_like(DENSE_GRID))


def test_constant_mode():
    sample = realize(CONSTANT_MODE, [0.5])
    assert sample.c_lower == pytest.approx(math.exp(0.5), rel=1e-15)
    assert sample.c_upper == pytest.approx(math.exp(0.5), rel=1e-15)
    assert sample(DENSE_GRID) == pytest.approx(
        numpy.full_like(DENSE_GRID, math.exp(0.5))
    )


def test_indicator_mode():
    sample = realize(LEFT_HALF, [1.0])
    assert sample.c_lower == pytest.approx(1.0)
    assert sample.c_upper == pytest.approx(math.e)
    values = sample(numpy.array([0.1, 0.4, 0.6, 0.9]))
    assert values == pytest.approx([math.e, math.e, 1.0, 1.0])


def test_piecewise_bounds_are_attained():
    spec = FieldSpec(
        b0=Piecewise([0.0, 0.3, 1.0], [0.2, -0.1]),
        modes=[Piecewise([0.0, 0.6, 1.0], [1.0, -0.5])],
    )
    sample = realize(spec, [0.8])
    values = sample(DENSE_GRID)
    assert sample.c_lower == pytest.approx(values.min())
    assert sample.c_upper == pytest.approx(values.max())


@pytest.mark.parametrize("seed", [0, 1, 17])
def test_grid_bounds_enclose_field(seed):
    sample = sample_field(TRIG_MODES, seed)
    values = sample(DENSE_GRID)
    assert sample.c_lower <= values.min()
    assert values.max() <= sample.c_upper
    assert sample.c_upper / values.max() <= GRID_BOUND_INFLATION**2
    assert values.min() / sample.c_lower <= GRID_BOUND_INFLATION**2


def test_realize_wrong_length():
    with pytest.raises(InvalidArgument):
        realize(CONSTANT_MODE, [0.1, 0.2])


def test_realize_overflow():
    with pytest.raises(NumericalFailure):
        realize(FieldSpec(modes=[Constant(1000.0)]), [1.0])


def test_sample_field_deterministic():
    first = sample_field(TRIG_MODES, 42, index=5)
    second = sample_field(TRIG_MODES, 42, index=5)
    assert first.y.tolist() == second.y.tolist()
    assert first.c_lower == second.c_lower
    assert first.c_upper == second.c_upper


def test_sample_field_streams_differ():
    first = sample_field(TRIG_MODES, 42, index=0)
    assert first.y.tolist() != sample_field(TRIG_MODES, 42, 1).y.tolist()
    assert first.y.tolist() != sample_field(TRIG_MODES, 43, 0).y.tolist()


def test_sample_batch_independent_of_start():
    batch = sample_batch(TRIG_MODES, 7, 6)
    tail = sample_batch(TRIG_MODES, 7, 3, start=3)
    assert [s.y.tolist() for s in batch[3:]] == [s.y.tolist() for s in tail]


def test_sample_is_read_only():
    sample = sample_field(TRIG_MODES, 1)
    with pytest.raises(ValueError):
        sample.y[0] = 0.0


def test_generator_invalid():
    with pytest.raises(InvalidArgument):
        generator(-1)
    with pytest.raises(InvalidArgument):
        generator(0, -1)


def test_log_field_mean():
    spec = FieldSpec(b0=0.3, modes=[Constant(0.5), Sine(0.2, 1.0)])
    n_samples = 400
    x = numpy.array([0.2, 0.5, 0.8])
    logs = numpy.array(
        [
            numpy.log(sample(x))
            for sample in sample_batch(spec, 11, n_samples)
        ]
    )
    standard_error = logs.std(axis=0, ddof=1) / math.sqrt(n_samples)
    assert numpy.all(numpy.abs(logs.mean(axis=0) - 0.3) < 4 * standard_error)


def test_probe_constant_integrand():
    result = integrability_probe(TRIG_MODES, 0.0, 0.0, 50)
    assert result.mean == 1.0
    assert result.standard_error == 0.0
    assert result.n_samples == 50


def test_probe_constant_mode_ratio():
    result = integrability_probe(CONSTANT_MODE, 1.0, 1.0, 1000)
    assert result.mean == 1.0
    assert result.standard_error == 0.0


def test_probe_lognormal_moment():
    result = integrability_probe(CONSTANT_MODE, 0.0, 1.0, 10**5, seed=5)
    assert abs(result.mean - math.exp(0.5)) <= 4 * result.standard_error
    assert result.standard_error < 0.01


def test_probe_deterministic():
    first = integrability_probe(TRIG_MODES, 0.5, 2.0, 300, seed=9)
    second = integrability_probe(TRIG_MODES, 0.5, 2.0, 300, seed=9)
    assert first == second


def test_probe_single_sample():
    result = integrability_probe(CONSTANT_MODE, 1.0, 0.0, 1)
    assert result.n_samples == 1
    assert math.isnan(result.standard_error)


@pytest.mark.parametrize(
    "p, q, n_mc", [(-0.1, 1.0, 10), (1.1, 1.0, 10), (0.5, 3.5, 10), (0, 0, 0)]
)
def test_probe_invalid(p, q, n_mc):
    with pytest.raises(InvalidArgument):
        integrability_probe(CONSTANT_MODE, p, q, n_mc)


def test_probe_nonfinite():
    spec = FieldSpec(modes=[Constant(400.0)])
    with numpy.errstate(over="ignore", divide="ignore"):
        with pytest.raises(NumericalFailure):
            integrability_probe(spec, 0.0, 3.0, 200)
