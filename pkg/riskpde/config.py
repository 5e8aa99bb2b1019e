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
Load and validate experiment configuration files.

An experiment is described by one JSON file. Lengths are in units of the
spatial domain, temperatures in the units of ``s_e``, and conductivities
are dimensionless multipliers of the unit conductivity. Nothing is read
from the environment: the only inputs outside the file are the command line
flags resolved by :func:`resolve_run_options`.
"""


import hashlib
import json
from collections import namedtuple

import numpy
from attr import attrs, attrib
from marshmallow import (
    RAISE,
    Schema,
    ValidationError,
    fields,
    post_load,
    validate,
    validates_schema,
)
from marshmallow_enum import EnumField
from marshmallow_oneofschema import OneOfSchema

from riskpde.coefficients import Constant, Cosine, Piecewise, Sine
from riskpde.epi import BUNDLED_PROBLEMS, DEFAULT_SCHEDULE, DemoStage
from riskpde.fem.mesh import P0Control, build_uniform_mesh
from riskpde.fem.solver import PdeData
from riskpde.field import FieldSpec
from riskpde.optimize import (
    DEFAULT_Y_MAX,
    MultiplierRule,
    Schedule,
    Stage,
    schedule_problems,
)
from riskpde.problem import Box, Instance, ObjectiveMode, QoiSpec
from riskpde.util import ConfigError, InvalidArgument


DEFAULT_SEED = 0
DEFAULT_REFERENCE_SEED = 1
DEFAULT_THREADS = 1
DEFAULT_OUTPUT = "riskpde-output"
DEFAULT_REFERENCE_SAMPLES = 10000
DEFAULT_FEASIBILITY_TOLERANCE = 1e-3
# Field bounds for trigonometric modes are taken on a grid this many times
# finer than the state mesh.
GRID_REFINEMENT = 10

Seeds = namedtuple("Seeds", ["sample", "reference"])

MeshConfig = namedtuple(
    "MeshConfig", ["n_elements", "domain", "state_n_elements"]
)

RunOptions = namedtuple("RunOptions", ["seed", "threads", "output"])


@attrs
class InstanceConfig:
    """The control problem of an experiment, before sampling.

    Parameters
    ----------
    mesh : MeshConfig
        ``n_elements`` control cells on ``domain``; the state mesh has
        ``state_n_elements`` cells, the same number by default.
    field : dict
        Keyword arguments of :class:`riskpde.field.FieldSpec`.
    pde : PdeData
    qoi : QoiSpec
    box : Box
    theta_reg : float
    mode : ObjectiveMode
    multiplier : float
        Initial multiplier of the buffered constraint.
    control : float or list of float
        The control solved for by ``solve-pde``, constant or one value per
        control cell.
    """

    mesh = attrib()
    field = attrib()
    pde = attrib()
    qoi = attrib()
    box = attrib()
    theta_reg = attrib()
    mode = attrib()
    multiplier = attrib()
    control = attrib(default=0.0)


@attrs
class VerifyConfig:
    """Sizes and thresholds of the verification battery.

    Parameters
    ----------
    fem_rate_min : float
        Smallest accepted L2 convergence order of the manufactured solve.
    fem_levels : list of int
        Numbers of elements of the convergence study.
    decay_rate_min : float
        Smallest accepted order of the mesh refinement decay per sample.
    field_samples : int
    smax_betas : list of float
    superquantile_laws : int
    superquantile_tolerance : float
    duality_laws : int
    duality_alphas : int
    probe_samples : int
    embedding_trials : int
    stability_samples : int
    """

    fem_rate_min = attrib(default=1.9)
    fem_levels = attrib(default=(16, 32, 64, 128, 256))
    decay_rate_min = attrib(default=1.0)
    field_samples = attrib(default=20)
    smax_betas = attrib(default=(1.0, 0.1, 0.01))
    superquantile_laws = attrib(default=1000)
    superquantile_tolerance = attrib(default=1e-10)
    duality_laws = attrib(default=200)
    duality_alphas = attrib(default=25)
    probe_samples = attrib(default=100000)
    embedding_trials = attrib(default=100)
    stability_samples = attrib(default=200)


@attrs
class EpiConfig:
    """The synthetic gap demonstration.

    Parameters
    ----------
    problems : list of str
        Names of bundled synthetic problems.
    epsilon : float
    seeds : list of int
    stages : list of DemoStage
    """

    problems = attrib(default=tuple(sorted(BUNDLED_PROBLEMS)))
    epsilon = attrib(default=1e-3)
    seeds = attrib(default=tuple(range(10)))
    stages = attrib(default=DEFAULT_SCHEDULE)


@attrs
class ExperimentConfig:
    """A validated experiment configuration.

    Parameters
    ----------
    instance : InstanceConfig
    schedule : riskpde.optimize.Schedule, optional
        Required by ``optimize``.
    seeds : Seeds
        Seeds of the optimisation samples and the independent reference
        sample.
    reference_samples : int
        Size of the reference sample of certificate checks.
    feasibility_tolerance : float
        Largest accepted final residual of the buffered constraint.
    threads : int, optional
    output : str, optional
    verify : VerifyConfig
    epi : EpiConfig
    sha256 : str
        Hex digest of the file contents.
    """

    instance = attrib()
    schedule = attrib()
    seeds = attrib()
    reference_samples = attrib()
    feasibility_tolerance = attrib()
    threads = attrib()
    output = attrib()
    verify = attrib()
    epi = attrib()
    sha256 = attrib(default=None)


class BaseSchema(Schema):
    class Meta:
        unknown = RAISE


def _build(cls, data):
    try:
        return cls(**data)
    except InvalidArgument as err:
        raise ValidationError(str(err))


class _ConstantSchema(BaseSchema):
    value = fields.Float(required=True)

    @post_load
    def make_constant(self, data, **kwargs):
        return _build(Constant, data)


class _PiecewiseSchema(BaseSchema):
    edges = fields.List(fields.Float(), required=True)
    values = fields.List(fields.Float(), required=True)

    @post_load
    def make_piecewise(self, data, **kwargs):
        return _build(Piecewise, data)


class _SineSchema(BaseSchema):
    amplitude = fields.Float(required=True)
    wavenumber = fields.Float(required=True)
    phase = fields.Float(load_default=0.0)

    @post_load
    def make_sine(self, data, **kwargs):
        return _build(Sine, data)


class _CosineSchema(BaseSchema):
    amplitude = fields.Float(required=True)
    wavenumber = fields.Float(required=True)
    phase = fields.Float(load_default=0.0)

    @post_load
    def make_cosine(self, data, **kwargs):
        return _build(Cosine, data)


class _CoefficientSchema(OneOfSchema):
    type_field = "type"
    type_schemas = {
        "constant": _ConstantSchema,
        "piecewise": _PiecewiseSchema,
        "sine": _SineSchema,
        "cosine": _CosineSchema,
    }

    def get_obj_type(self, obj):
        for name, cls in [
            ("constant", Constant),
            ("piecewise", Piecewise),
            ("sine", Sine),
            ("cosine", Cosine),
        ]:
            if isinstance(obj, cls):
                return name
        raise ValidationError(
            "unsupported coefficient function {!r}".format(obj)
        )


class _ScalarOrList(fields.Field):
    """A finite float, or a list of finite floats."""

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, list):
            return [self._float(item) for item in value]
        return self._float(value)

    def _float(self, value):
        return fields.Float().deserialize(value)


def _defaults(schema_class):
    """Load the defaults of a nested section left out of a file."""
    return lambda: schema_class().load({})


def _pair():
    return fields.List(fields.Float(), validate=validate.Length(equal=2))


def _open_unit_interval():
    return validate.Range(
        min=0.0, max=1.0, min_inclusive=False, max_inclusive=False
    )


class _MeshSchema(BaseSchema):
    n_elements = fields.Integer(required=True, validate=validate.Range(min=1))
    domain = fields.List(
        fields.Float(),
        validate=validate.Length(equal=2),
        load_default=lambda: [0.0, 1.0],
    )
    state_n_elements = fields.Integer(
        validate=validate.Range(min=1), load_default=None
    )

    @validates_schema
    def validate_domain(self, data, **kwargs):
        lower, upper = data["domain"]
        if not upper > lower:
            raise ValidationError("empty domain", "domain")

    @post_load
    def make_mesh_config(self, data, **kwargs):
        return MeshConfig(**data)


class _FieldSchema(BaseSchema):
    b0 = fields.Nested(_CoefficientSchema, load_default=None)
    modes = fields.List(fields.Nested(_CoefficientSchema), load_default=list)
    grid_cells = fields.Integer(
        validate=validate.Range(min=1), load_default=None
    )

    @post_load
    def make_field(self, data, **kwargs):
        return {key: value for key, value in data.items() if value is not None}


class _PdeSchema(BaseSchema):
    c1 = _ScalarOrList(load_default=1.0)
    c2 = _pair()
    s_e = _pair()
    source = fields.Nested(_CoefficientSchema, load_default=None)

    @post_load
    def make_pde(self, data, **kwargs):
        data.setdefault("c2", (1.0, 1.0))
        data.setdefault("s_e", (0.0, 0.0))
        return _build(PdeData, data)


class _QoiSchema(BaseSchema):
    s_d = fields.Nested(_CoefficientSchema, load_default=None)
    target = fields.List(
        fields.Float(),
        validate=validate.Length(equal=2),
        load_default=lambda: [0.0, 1.0],
    )
    s_t = fields.Float(load_default=0.0)
    alpha = fields.Float(load_default=0.9, validate=_open_unit_interval())

    @post_load
    def make_qoi(self, data, **kwargs):
        if data["s_d"] is None:
            data["s_d"] = Constant(0.0)
        return _build(QoiSpec, data)


class _BoxSchema(BaseSchema):
    lower = fields.Float(required=True)
    upper = fields.Float(required=True)

    @validates_schema
    def validate_order(self, data, **kwargs):
        if data["lower"] > data["upper"]:
            raise ValidationError("lower bound exceeds upper bound")

    @post_load
    def make_box(self, data, **kwargs):
        return Box(**data)


class _InstanceSchema(BaseSchema):
    mesh = fields.Nested(_MeshSchema, required=True)
    field = fields.Nested(_FieldSchema, load_default=dict)
    pde = fields.Nested(_PdeSchema, load_default=_defaults(_PdeSchema))
    qoi = fields.Nested(_QoiSchema, load_default=_defaults(_QoiSchema))
    box = fields.Nested(_BoxSchema, required=True)
    theta_reg = fields.Float(load_default=0.0, validate=validate.Range(min=0))
    mode = EnumField(
        ObjectiveMode, by_value=True, load_default=ObjectiveMode.EXPECTATION
    )
    multiplier = fields.Float(load_default=0.0)
    control = _ScalarOrList(load_default=0.0)

    @validates_schema
    def validate_target(self, data, **kwargs):
        if "mesh" not in data or "qoi" not in data:
            return
        lower, upper = data["mesh"].domain
        target = data["qoi"].target
        if not (lower <= target[0] and target[1] <= upper):
            raise ValidationError(
                "target interval {} is not inside the domain {}".format(
                    list(target), list(data["mesh"].domain)
                ),
                "qoi",
            )

    @validates_schema
    def validate_cell_values(self, data, **kwargs):
        if "mesh" not in data:
            return
        n_elements = data["mesh"].n_elements
        values = [("control", data.get("control"))]
        if "pde" in data:
            values.insert(0, ("pde", data["pde"].c1))
        for name, value in values:
            size = numpy.size(value)
            if numpy.ndim(value) > 0 and size != n_elements:
                raise ValidationError(
                    "{} values given for {} control cells".format(
                        size, n_elements
                    ),
                    name,
                )

    @post_load
    def make_instance_config(self, data, **kwargs):
        return InstanceConfig(**data)


class _StageSchema(BaseSchema):
    nu = fields.Integer(required=True, validate=validate.Range(min=1))
    beta = fields.Float(
        required=True, validate=validate.Range(min=0, min_inclusive=False)
    )
    theta_pen = fields.Float(
        required=True, validate=validate.Range(min=0, min_inclusive=False)
    )
    delta = fields.Float(required=True, validate=validate.Range(min=0))
    max_inner_iters = fields.Integer(
        load_default=200, validate=validate.Range(min=0)
    )

    @post_load
    def make_stage(self, data, **kwargs):
        return _build(Stage, data)


class _ScheduleSchema(BaseSchema):
    stages = fields.List(
        fields.Nested(_StageSchema),
        required=True,
        validate=validate.Length(min=1),
    )
    multiplier_rule = EnumField(
        MultiplierRule, by_value=True, load_default=MultiplierRule.FIXED_ZERO
    )
    y_max = fields.Float(
        load_default=DEFAULT_Y_MAX,
        validate=validate.Range(min=0, min_inclusive=False),
    )
    multiplier_rounds = fields.Integer(
        load_default=1, validate=validate.Range(min=1)
    )

    @validates_schema
    def validate_monotone(self, data, **kwargs):
        problems = schedule_problems(data.get("stages", []))
        if problems:
            raise ValidationError(problems, "stages")

    @post_load
    def make_schedule(self, data, **kwargs):
        return _build(Schedule, data)


class _SeedsSchema(BaseSchema):
    sample = fields.Integer(
        load_default=DEFAULT_SEED, validate=validate.Range(min=0)
    )
    reference = fields.Integer(
        load_default=DEFAULT_REFERENCE_SEED, validate=validate.Range(min=0)
    )

    @validates_schema
    def validate_distinct(self, data, **kwargs):
        if data.get("sample") == data.get("reference"):
            raise ValidationError(
                "the reference seed must differ from the sample seed"
            )

    @post_load
    def make_seeds(self, data, **kwargs):
        return Seeds(**data)


def _positive_integer(**kwargs):
    return fields.Integer(validate=validate.Range(min=1), **kwargs)


class _VerifySchema(BaseSchema):
    fem_rate_min = fields.Float(load_default=1.9)
    fem_levels = fields.List(
        _positive_integer(),
        validate=validate.Length(min=3),
        load_default=lambda: [16, 32, 64, 128, 256],
    )
    decay_rate_min = fields.Float(load_default=1.0)
    field_samples = _positive_integer(load_default=20)
    smax_betas = fields.List(
        fields.Float(validate=validate.Range(min=0, min_inclusive=False)),
        load_default=lambda: [1.0, 0.1, 0.01],
    )
    superquantile_laws = _positive_integer(load_default=1000)
    superquantile_tolerance = fields.Float(load_default=1e-10)
    duality_laws = _positive_integer(load_default=200)
    duality_alphas = _positive_integer(load_default=25)
    probe_samples = _positive_integer(load_default=100000)
    embedding_trials = _positive_integer(load_default=100)
    stability_samples = _positive_integer(load_default=200)

    @post_load
    def make_verify_config(self, data, **kwargs):
        return VerifyConfig(**data)


class _DemoStageSchema(BaseSchema):
    nu = _positive_integer(required=True)
    delta_floor = fields.Float(
        load_default=1e-9, validate=validate.Range(min=0)
    )

    @post_load
    def make_demo_stage(self, data, **kwargs):
        return DemoStage(**data)


class _EpiSchema(BaseSchema):
    problems = fields.List(
        fields.String(validate=validate.OneOf(sorted(BUNDLED_PROBLEMS))),
        load_default=lambda: sorted(BUNDLED_PROBLEMS),
    )
    epsilon = fields.Float(
        load_default=1e-3, validate=validate.Range(min=0, min_inclusive=False)
    )
    seeds = fields.List(
        fields.Integer(validate=validate.Range(min=0)),
        load_default=lambda: list(range(10)),
    )
    stages = fields.List(
        fields.Nested(_DemoStageSchema),
        validate=validate.Length(min=1),
        load_default=lambda: list(DEFAULT_SCHEDULE),
    )

    @post_load
    def make_epi_config(self, data, **kwargs):
        return EpiConfig(**data)


class _ExperimentSchema(BaseSchema):
    instance = fields.Nested(_InstanceSchema, required=True)
    schedule = fields.Nested(_ScheduleSchema, load_default=None)
    seeds = fields.Nested(
        _SeedsSchema, load_default=_defaults(_SeedsSchema)
    )
    reference_samples = _positive_integer(
        load_default=DEFAULT_REFERENCE_SAMPLES
    )
    feasibility_tolerance = fields.Float(
        load_default=DEFAULT_FEASIBILITY_TOLERANCE,
        validate=validate.Range(min=0),
    )
    threads = _positive_integer(load_default=None)
    output = fields.String(load_default=None)
    verify = fields.Nested(
        _VerifySchema, load_default=_defaults(_VerifySchema)
    )
    epi = fields.Nested(_EpiSchema, load_default=_defaults(_EpiSchema))

    @post_load
    def make_experiment_config(self, data, **kwargs):
        return ExperimentConfig(**data)


def loads(text):
    """Validate an experiment configuration from JSON text.

    Parameters
    ----------
    text : str or bytes

    Returns
    -------
    ExperimentConfig

    Raises
    ------
    ConfigError
        If the text is not JSON or does not describe a valid experiment.
    """
    raw = text.encode("utf-8") if isinstance(text, str) else text
    try:
        document = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ConfigError("invalid JSON: {}".format(err))
    if not isinstance(document, dict):
        raise ConfigError("the configuration must be a JSON object")
    try:
        config = _ExperimentSchema().load(document)
    except ValidationError as err:
        raise ConfigError(
            "invalid configuration: {}".format(err.messages),
            err.messages,
        )
    config.sha256 = hashlib.sha256(raw).hexdigest()
    return config


def load(path):
    """Read and validate an experiment configuration file.

    Parameters
    ----------
    path : str or pathlib.Path

    Returns
    -------
    ExperimentConfig
    """
    try:
        with open(str(path), "rb") as fp:
            raw = fp.read()
    except OSError as err:
        raise ConfigError("cannot read {}: {}".format(path, err.strerror))
    return loads(raw)


def resolve_run_options(config=None, seed=None, threads=None, output=None):
    """Determine the seed, thread count and output directory of a run.

    Every option is taken, in order of priority, from:

    * The value passed to this function (a command line flag)
    * The value set in the configuration file
    * The library default

    Parameters
    ----------
    config : ExperimentConfig, optional
    seed : int, optional
    threads : int, optional
    output : str, optional

    Returns
    -------
    RunOptions
    """
    file_seed = file_threads = file_output = None
    if config is not None:
        file_seed = config.seeds.sample
        file_threads = config.threads
        file_output = config.output

    def first(*values):
        return next(value for value in values if value is not None)

    resolved = RunOptions(
        seed=first(seed, file_seed, DEFAULT_SEED),
        threads=first(threads, file_threads, DEFAULT_THREADS),
        output=first(output, file_output, DEFAULT_OUTPUT),
    )
    if resolved.seed < 0:
        raise ConfigError("seeds must be nonnegative")
    if resolved.threads < 1:
        raise ConfigError("the thread count must be positive")
    return resolved


def build_meshes(instance_config):
    """The state and control meshes of an instance."""
    mesh_config = instance_config.mesh
    control_mesh = build_uniform_mesh(
        mesh_config.n_elements, mesh_config.domain
    )
    state_n_elements = mesh_config.state_n_elements or mesh_config.n_elements
    state_mesh = build_uniform_mesh(state_n_elements, mesh_config.domain)
    return state_mesh, control_mesh


def build_field(instance_config):
    state_mesh, _ = build_meshes(instance_config)
    field = dict(instance_config.field)
    field.setdefault("grid_cells", GRID_REFINEMENT * state_mesh.n_elements)
    return FieldSpec(domain=state_mesh.domain, **field)


def build_instance(instance_config, seed):
    """The :class:`riskpde.problem.Instance` of a configuration.

    Parameters
    ----------
    instance_config : InstanceConfig
    seed : int
        Seed of the optimisation sample stream.

    Returns
    -------
    Instance
    """
    state_mesh, control_mesh = build_meshes(instance_config)
    try:
        return Instance(
            mesh=state_mesh,
            control_mesh=control_mesh,
            field=build_field(instance_config),
            pde=instance_config.pde,
            qoi=instance_config.qoi,
            box=instance_config.box,
            theta_reg=instance_config.theta_reg,
            mode=instance_config.mode,
            sample_seed=seed,
            multiplier=instance_config.multiplier,
        )
    except InvalidArgument as err:
        raise ConfigError(str(err))


def build_control(instance_config):
    """The fixed control of an instance on its control mesh."""
    _, control_mesh = build_meshes(instance_config)
    values = numpy.asarray(instance_config.control, dtype=float)
    if values.ndim == 0:
        values = numpy.full(control_mesh.n_elements, float(values))
    try:
        return P0Control(control_mesh, values)
    except InvalidArgument as err:
        raise ConfigError(str(err))
