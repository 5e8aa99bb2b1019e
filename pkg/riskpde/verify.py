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
Property checks of the discretisation, the risk calculus and the
sample average problems against independent oracles.

Every check returns :class:`CheckResult` rows of a measured value, the bound
it is compared against and whether it passed.
"""


import logging
from collections import namedtuple

import numpy
from attr import evolve

from riskpde.coefficients import Constant
from riskpde.config import build_field, build_meshes
from riskpde.fem.convergence import (
    convergence_study,
    estimate_rate,
    l2_distance,
    sine_solution,
)
from riskpde.fem.mesh import (
    P0Control,
    P1State,
    build_uniform_mesh,
    embed_control_norm,
)
from riskpde.fem.solver import solve_state
from riskpde.field import (
    FieldSpec,
    generator,
    integrability_probe,
    realize,
    sample_batch,
)
from riskpde.problem import (
    AugmentedLagrangian,
    Box,
    ControlPoint,
    ObjectiveMode,
    SaaSpec,
    qoi_g1,
    qoi_g2_raw,
    saa_gradient,
    saa_value,
)
from riskpde.risk import (
    DiscreteRv,
    buffered_probability,
    smax,
    superquantile,
    superquantile_tail,
)


logger = logging.getLogger(__name__)

CheckResult = namedtuple(
    "CheckResult", ["check", "measured", "bound", "passed"]
)

PROBE_CORNERS = [(0.0, 0.0), (1.0, 0.0), (0.0, 3.0), (1.0, 3.0)]
DECAY_LEVELS = (16, 32, 64, 128, 256)
EMBEDDING_TOLERANCE = 1e-14
GRADIENT_TOLERANCE = 1e-6
GRADIENT_STEP = 1e-3
# Gradient coordinates smaller than this are compared in absolute terms
GRADIENT_FLOOR = 1e-4
CONTINUITY_PAIRS = 20
DEFAULT_GRADIENT_INSTANCES = 50

# Independent random streams of the checks
_SUPERQUANTILE_STREAM = 1
_DUALITY_STREAM = 2
_EMBEDDING_STREAM = 3
_STABILITY_STREAM = 4
_CONTINUITY_STREAM = 5
_GRADIENT_STREAM = 6


def _result(check, measured, bound, passed):
    return CheckResult(check, float(measured), float(bound), bool(passed))


def check_fem_rate(levels, rate_min):
    """Observed L2 order on the sine manufactured solution with xi = 1."""
    unit_field = realize(FieldSpec(), [])
    _, rate = convergence_study(sine_solution(), unit_field, list(levels))
    return [_result("fem_rate", rate, rate_min, rate >= rate_min)]


def check_random_decay(instance_config, seed, n_samples, rate_min):
    """Order of ``||s^h - s^{h/2}||`` under refinement, per field sample."""
    _, control_mesh = build_meshes(instance_config)
    field = build_field(instance_config)
    box = instance_config.box
    control = P0Control(
        control_mesh,
        numpy.clip(numpy.ones(control_mesh.n_elements), box.lower, box.upper),
    )
    meshes = [
        build_uniform_mesh(n, control_mesh.domain) for n in DECAY_LEVELS
    ]
    worst = numpy.inf
    for sample in sample_batch(field, seed, n_samples):
        states = [
            solve_state(mesh, sample, instance_config.pde, control)
            for mesh in meshes
        ]
        pairs = [
            (coarse.mesh.h, l2_distance(coarse, fine))
            for coarse, fine in zip(states[:-1], states[1:])
        ]
        worst = min(worst, estimate_rate(pairs))
    return [_result("random_decay", worst, rate_min, worst >= rate_min)]


def check_smax(betas):
    """``0 <= smax(gamma; beta) - max(0, gamma) <= 2 beta`` on a grid."""
    gamma = numpy.linspace(-100.0, 100.0, 20001)
    lowest = numpy.inf
    worst = 0.0
    for beta in betas:
        excess = smax(gamma, beta) - numpy.maximum(gamma, 0.0)
        lowest = min(lowest, float(numpy.min(excess)))
        worst = max(worst, float(numpy.max(excess)) / (2.0 * beta))
    return [
        _result("smax_lower", lowest, 0.0, lowest >= 0.0),
        _result("smax_upper", worst, 1.0, worst <= 1.0),
    ]


def _random_law(rng, max_size=200):
    size = int(rng.integers(1, max_size + 1))
    values = rng.standard_normal(size) * rng.uniform(0.1, 10.0)
    values += rng.uniform(-5.0, 5.0)
    weights = rng.dirichlet(numpy.ones(size))
    return DiscreteRv(values, weights / weights.sum())


def check_superquantile(n_laws, tolerance, seed):
    """Regret minimisation against the sorted tail average."""
    rng = generator(seed, _SUPERQUANTILE_STREAM)
    worst = 0.0
    for _ in range(n_laws):
        rv = _random_law(rng)
        alpha = float(rng.uniform(0.0, 0.999))
        difference = superquantile(rv, alpha) - superquantile_tail(rv, alpha)
        worst = max(worst, abs(difference))
    return [
        _result("superquantile_oracle", worst, tolerance, worst <= tolerance)
    ]


def check_duality(n_laws, n_alphas, seed):
    """``bprob <= 1 - alpha`` exactly when the superquantile is nonpositive."""
    rng = generator(seed, _DUALITY_STREAM)
    alphas = numpy.linspace(0.02, 0.98, n_alphas)
    mismatches = 0
    for _ in range(n_laws):
        rv = _random_law(rng)
        probability = buffered_probability(rv)
        for alpha in alphas:
            if (probability <= 1.0 - alpha) != (
                superquantile(rv, alpha) <= 0.0
            ):
                mismatches += 1
    closed_cases = [
        ([-1.0, -2.0], 0.0),
        ([-1.0, 1.0], 1.0),
        ([-3.0, 1.0], 2.0 / 3.0),
    ]
    closed_error = max(
        abs(buffered_probability(DiscreteRv(values)) - expected)
        for values, expected in closed_cases
    )
    return [
        _result("duality", mismatches, 0, mismatches == 0),
        _result(
            "duality_closed_cases", closed_error, 1e-9, closed_error <= 1e-9
        ),
    ]


def check_integrability(instance_config, n_mc, seed):
    """Finite ``E[c_upper^p / c_lower^q]`` at the corners of the range."""
    field = build_field(instance_config)
    results = []
    for p, q in PROBE_CORNERS:
        probe = integrability_probe(field, p, q, n_mc, seed)
        results.append(
            _result(
                "integrability_p{:g}_q{:g}".format(p, q),
                probe.mean,
                numpy.inf,
                numpy.isfinite(probe.mean),
            )
        )
    constant_mode = FieldSpec(modes=[Constant(1.0)])
    probe = integrability_probe(constant_mode, 0.0, 1.0, n_mc, seed)
    error = abs(probe.mean - numpy.exp(0.5))
    bound = 3.0 * probe.standard_error
    results.append(
        _result("integrability_lognormal", error, bound, error <= bound)
    )
    return results


def check_embedding(instance_config, n_trials, seed):
    """``||T_n z|| = sqrt(h) ||z||_2`` on the uniform control mesh."""
    _, control_mesh = build_meshes(instance_config)
    rng = generator(seed, _EMBEDDING_STREAM)
    worst = 0.0
    for _ in range(n_trials):
        z = rng.standard_normal(control_mesh.n_elements)
        expected = numpy.sqrt(control_mesh.h) * numpy.linalg.norm(z)
        actual = embed_control_norm(P0Control(control_mesh, z))
        worst = max(worst, abs(actual - expected) / max(1.0, expected))
    return [
        _result(
            "embedding_identity",
            worst,
            EMBEDDING_TOLERANCE,
            worst <= EMBEDDING_TOLERANCE,
        )
    ]


def stability_bound(sample, pde, mesh, control_mesh):
    """An upper bound on ``||s(xi, z)||_V / (1 + ||z||_Z)`` for one field.

    From coercivity of the Robin form through the endpoint with the larger
    Robin coefficient and the trace inequality on an interval of length L.
    """
    a, b = mesh.domain
    length = b - a
    coercivity = min(sample.c_lower, max(pde.c2))
    spread = max(2.0 * length, 2.0 * length**2 + 1.0)
    trace = numpy.sqrt(max(2.0 / length, 2.0 * length))
    c1_max = float(numpy.max(pde.c1_on(control_mesh)))
    source_norm = 0.0
    if pde.source is not None:
        points, weights = mesh.quadrature(5)
        squares = weights * pde.source(points) ** 2
        source_norm = float(numpy.sqrt(numpy.sum(squares)))
    boundary = trace * sum(c * abs(s) for c, s in zip(pde.c2, pde.s_e))
    # v_norm adds the L2 norms of u and u', at most sqrt(2) times the
    # Hilbert norm.
    return (
        numpy.sqrt(2.0)
        * spread
        / coercivity
        * max(c1_max, source_norm + boundary)
    )


def check_stability(instance_config, seed, n_samples):
    """Per-sample stability ratio against :func:`stability_bound`."""
    mesh, control_mesh = build_meshes(instance_config)
    field = build_field(instance_config)
    box = instance_config.box
    pde = instance_config.pde
    rng = generator(seed, _STABILITY_STREAM)
    worst = 0.0
    for sample in sample_batch(field, seed, n_samples):
        z = rng.uniform(box.lower, box.upper, control_mesh.n_elements)
        control = P0Control(control_mesh, z)
        state = solve_state(mesh, sample, pde, control)
        ratio = state.v_norm() / (1.0 + embed_control_norm(control))
        bound = stability_bound(sample, pde, mesh, control_mesh)
        worst = max(worst, ratio / bound)
    return [_result("stability_ratio", worst, 1.0, worst <= 1.0)]


def check_qoi_bounds(instance_config, seed):
    """Continuity and growth bounds of g1 and g2 on pairs of states."""
    mesh, control_mesh = build_meshes(instance_config)
    field = build_field(instance_config)
    qoi = instance_config.qoi
    box = instance_config.box
    rng = generator(seed, _CONTINUITY_STREAM)
    target = P1State(mesh, qoi.s_d(mesh.nodes))
    target_norm = target.l2_norm()
    # Cauchy-Schwarz on D_t
    target_size = numpy.sqrt(qoi.target[1] - qoi.target[0])
    samples = sample_batch(field, seed, 2 * CONTINUITY_PAIRS)
    ratios = dict.fromkeys(
        ["g1_continuity", "g1_growth", "g2_continuity", "g2_growth"], 0.0
    )
    for first, second in zip(samples[::2], samples[1::2]):
        states = []
        for sample in (first, second):
            z = rng.uniform(box.lower, box.upper, control_mesh.n_elements)
            control = P0Control(control_mesh, z)
            states.append(
                solve_state(mesh, sample, instance_config.pde, control)
            )
        u, v = states
        distance = P1State(mesh, u.values - v.values).l2_norm()
        norms = u.l2_norm(), v.l2_norm()
        if distance > 0:
            ratios["g1_continuity"] = max(
                ratios["g1_continuity"],
                abs(qoi_g1(u, qoi) - qoi_g1(v, qoi))
                / ((norms[0] + norms[1] + 2.0 * target_norm) * distance),
            )
            ratios["g2_continuity"] = max(
                ratios["g2_continuity"],
                abs(qoi_g2_raw(u, qoi) - qoi_g2_raw(v, qoi))
                / (target_size * distance),
            )
        for state, norm in zip(states, norms):
            ratios["g1_growth"] = max(
                ratios["g1_growth"],
                qoi_g1(state, qoi) / (norm + target_norm) ** 2,
            )
            ratios["g2_growth"] = max(
                ratios["g2_growth"],
                abs(qoi_g2_raw(state, qoi))
                / (abs(qoi.s_t) + target_size * norm),
            )
    # Rounding in exact quadrature
    slack = 1.0 + 1e-12
    return [
        _result(name, ratio, 1.0, ratio <= slack)
        for name, ratio in sorted(ratios.items())
    ]


def random_buffered_spec(instance_config, rng, n_elements, nu, seed):
    """A small buffered problem with random parameters and point."""
    _, control_mesh = build_meshes(instance_config)
    mesh = build_uniform_mesh(n_elements, control_mesh.domain)
    field = build_field(instance_config)
    pde = instance_config.pde
    c1 = pde.c1_on(control_mesh)[control_mesh.locate(mesh.midpoints)]
    pde = evolve(pde, c1=c1 * rng.uniform(0.5, 1.5, n_elements))
    al = AugmentedLagrangian(
        multiplier=rng.uniform(0.0, 1.0),
        theta_pen=rng.uniform(1.0, 10.0),
        beta=rng.uniform(0.05, 0.5),
    )
    spec = SaaSpec(
        samples=sample_batch(field, seed, nu),
        mesh=mesh,
        control_mesh=mesh,
        pde=pde,
        qoi=instance_config.qoi,
        theta_reg=rng.uniform(0.0, 0.1),
        mode=ObjectiveMode.BUFFERED,
        al=al,
    )
    point = ControlPoint(
        rng.standard_normal(n_elements),
        rng.standard_normal(),
        rng.uniform(0.1, 1.0),
        Box(-100.0, 100.0),
    )
    return spec, point


# Sixth order central stencil
_STENCIL = (
    (-3.0, -1.0 / 60.0),
    (-2.0, 9.0 / 60.0),
    (-1.0, -45.0 / 60.0),
    (1.0, 45.0 / 60.0),
    (2.0, -9.0 / 60.0),
    (3.0, 1.0 / 60.0),
)


def finite_difference_gradient(point, spec, step=GRADIENT_STEP):
    """Central differences of the smooth objective in every coordinate."""
    x = numpy.append(point.z_n, [point.gamma, point.sigma])
    n = point.z_n.size
    gradient = numpy.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        total = 0.0
        for offset, weight in _STENCIL:
            shifted = x.copy()
            shifted[i] += offset * h
            shifted_point = ControlPoint(
                shifted[:n], shifted[n], shifted[n + 1], point.box
            )
            total += weight * saa_value(shifted_point, spec)
        gradient[i] = total / h
    return gradient


def gradient_error(point, spec):
    """Largest relative coordinate error of the adjoint gradient.

    Each coordinate is measured against its own magnitude, with
    ``GRADIENT_FLOOR`` as the smallest scale.
    """
    gradient = saa_gradient(point, spec)
    adjoint = numpy.append(gradient.z, [gradient.gamma, gradient.sigma])
    reference = finite_difference_gradient(point, spec)
    scale = numpy.maximum(numpy.abs(adjoint), GRADIENT_FLOOR)
    return float(numpy.max(numpy.abs(adjoint - reference) / scale))


def check_gradients(instance_config, n_instances, seed):
    rng = generator(seed, _GRADIENT_STREAM)
    worst = 0.0
    for index in range(n_instances):
        n_elements = (4, 16)[index % 2]
        nu = (8, 32)[(index // 2) % 2]
        spec, point = random_buffered_spec(
            instance_config, rng, n_elements, nu, seed + index
        )
        worst = max(worst, gradient_error(point, spec))
    return [
        _result(
            "gradient",
            worst,
            GRADIENT_TOLERANCE,
            worst <= GRADIENT_TOLERANCE,
        )
    ]


def run_verification(
    config, seed, gradient_instances=DEFAULT_GRADIENT_INSTANCES
):
    """Run the whole battery for an experiment configuration.

    Parameters
    ----------
    config : riskpde.config.ExperimentConfig
    seed : int
    gradient_instances : int, optional

    Returns
    -------
    list of CheckResult
    """
    settings = config.verify
    instance = config.instance
    batteries = [
        lambda: check_fem_rate(settings.fem_levels, settings.fem_rate_min),
        lambda: check_random_decay(
            instance, seed, settings.field_samples, settings.decay_rate_min
        ),
        lambda: check_smax(settings.smax_betas),
        lambda: check_superquantile(
            settings.superquantile_laws,
            settings.superquantile_tolerance,
            seed,
        ),
        lambda: check_duality(
            settings.duality_laws, settings.duality_alphas, seed
        ),
        lambda: check_integrability(instance, settings.probe_samples, seed),
        lambda: check_embedding(instance, settings.embedding_trials, seed),
        lambda: check_stability(instance, seed, settings.stability_samples),
        lambda: check_qoi_bounds(instance, seed),
        lambda: check_gradients(instance, gradient_instances, seed),
    ]
    results = []
    for battery in batteries:
        for result in battery():
            logger.info(
                "%s: measured %.6g, bound %.6g, %s",
                result.check,
                result.measured,
                result.bound,
                "PASS" if result.passed else "FAIL",
            )
            results.append(result)
    return results
