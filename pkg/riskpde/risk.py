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
Risk and reliability of discrete random variables: quantiles,
superquantiles, penalty regret, buffered failure probability and the smooth
surrogate smax of the positive part.
"""


from collections import namedtuple

import numpy
import scipy.optimize
import scipy.special
from attr import attrs, attrib

from riskpde.util import InvalidArgument


WEIGHT_SUM_TOLERANCE = 1e-12

# Search interval [ALPHA_MARGIN, 1 - ALPHA_MARGIN] for the buffered
# probability root.
ALPHA_MARGIN = 1e-12
ALPHA_XTOL = 1e-14

RiskSummary = namedtuple(
    "RiskSummary",
    [
        "alpha",
        "mean",
        "quantile",
        "superquantile",
        "penalty_regret",
        "buffered_probability",
    ],
)


def _as_values(values):
    values = numpy.array(values, dtype=float).reshape(-1)
    values.setflags(write=False)
    return values


def _as_weights(weights):
    if weights is None:
        return None
    return _as_values(weights)


@attrs(frozen=True, eq=False)
class DiscreteRv:
    """A random variable with finitely many outcomes.

    Parameters
    ----------
    values : numpy.ndarray
        The outcomes.
    weights : numpy.ndarray, optional
        Positive probabilities summing to one. Uniform when omitted.
    """

    values = attrib(converter=_as_values)
    weights = attrib(default=None, converter=_as_weights)

    @values.validator
    def _check_values(self, attribute, values):
        if values.size == 0:
            raise InvalidArgument("a random variable needs outcomes")
        if not numpy.all(numpy.isfinite(values)):
            raise InvalidArgument("outcomes must be finite")

    def __attrs_post_init__(self):
        if self.weights is None:
            weights = numpy.full(self.values.size, 1.0 / self.values.size)
            weights.setflags(write=False)
            object.__setattr__(self, "weights", weights)
        weights = self.weights
        if weights.shape != self.values.shape:
            raise InvalidArgument(
                "got {} weights for {} outcomes".format(
                    weights.size, self.values.size
                )
            )
        if numpy.any(weights <= 0) or not numpy.all(numpy.isfinite(weights)):
            raise InvalidArgument("weights must be positive and finite")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise InvalidArgument(
                "weights sum to {!r}, not 1".format(float(weights.sum()))
            )

    def mean(self):
        return float(numpy.dot(self.weights, self.values))

    def shift(self, offset):
        """The random variable ``eta + offset``."""
        return DiscreteRv(self.values + offset, self.weights)

    def sorted(self):
        order = numpy.argsort(self.values, kind="stable")
        return self.values[order], self.weights[order]


@attrs(frozen=True)
class SmaxParam:
    """Smoothing scale of :func:`smax`.

    Parameters
    ----------
    beta : float
        A positive scale.
    """

    beta = attrib(converter=float)

    @beta.validator
    def _check_beta(self, attribute, beta):
        if not beta > 0 or not numpy.isfinite(beta):
            raise InvalidArgument(
                "smoothing scale must be positive, got {}".format(beta)
            )


def _beta(beta):
    if isinstance(beta, SmaxParam):
        return beta.beta
    return SmaxParam(beta).beta


def smax(gamma, beta):
    """Smooth positive part ``beta * log(1 + exp(gamma / beta))``.

    Evaluated as ``max(0, gamma) + beta * log1p(exp(-|gamma| / beta))``, so
    the result never falls below ``max(0, gamma)`` in floating point and
    exceeds it by at most ``beta * log(2)``.

    Parameters
    ----------
    gamma : float or numpy.ndarray
    beta : SmaxParam or float

    Returns
    -------
    float or numpy.ndarray
    """
    beta = _beta(beta)
    gamma = numpy.asarray(gamma, dtype=float)
    value = numpy.maximum(gamma, 0.0) + beta * numpy.log1p(
        numpy.exp(-numpy.abs(gamma) / beta)
    )
    return float(value) if value.ndim == 0 else value


def smax_grad(gamma, beta):
    """Derivative of :func:`smax`, the logistic function of gamma / beta."""
    beta = _beta(beta)
    value = scipy.special.expit(numpy.asarray(gamma, dtype=float) / beta)
    return float(value) if numpy.ndim(value) == 0 else value


def _check_alpha(alpha, allow_zero):
    lower_ok = alpha >= 0.0 if allow_zero else alpha > 0.0
    if not (lower_ok and alpha < 1.0):
        interval = "[0, 1)" if allow_zero else "(0, 1)"
        raise InvalidArgument(
            "alpha must lie in {}, got {}".format(interval, alpha)
        )


def quantile(rv, alpha):
    """The smallest outcome whose cumulative probability reaches ``alpha``."""
    values, weights = rv.sorted()
    cumulative = numpy.cumsum(weights)
    index = numpy.searchsorted(cumulative, alpha, side="left")
    return float(values[min(index, values.size - 1)])


def _regret_objective(values, weights, gamma, alpha):
    excess = numpy.maximum(values - gamma, 0.0)
    return gamma + numpy.dot(weights, excess) / (1.0 - alpha)


def superquantile(rv, alpha):
    """The alpha-superquantile (CVaR) by regret minimisation.

    ``min_gamma gamma + E[max(0, eta - gamma)] / (1 - alpha)``. The
    objective is convex and piecewise linear with kinks at the outcomes, so
    the minimum is attained at one of them.

    Parameters
    ----------
    rv : DiscreteRv
    alpha : float
        In [0, 1).

    Returns
    -------
    float
    """
    _check_alpha(alpha, allow_zero=True)
    values, weights = rv.sorted()
    # Objective at every outcome from suffix sums, then re-evaluated exactly
    # around the minimiser.
    suffix_weight = numpy.cumsum(weights[::-1])[::-1]
    suffix_moment = numpy.cumsum((weights * values)[::-1])[::-1]
    above_weight = numpy.append(suffix_weight[1:], 0.0)
    above_moment = numpy.append(suffix_moment[1:], 0.0)
    objective = values + (above_moment - values * above_weight) / (1.0 - alpha)
    best = int(numpy.argmin(objective))
    candidates = values[max(best - 1, 0) : best + 2]
    return float(
        min(
            _regret_objective(values, weights, gamma, alpha)
            for gamma in candidates
        )
    )


def superquantile_tail(rv, alpha):
    """The alpha-superquantile as the average of the upper 1 - alpha tail.

    An independent implementation of :func:`superquantile`.
    """
    _check_alpha(alpha, allow_zero=True)
    values, weights = rv.sorted()
    values, weights = values[::-1], weights[::-1]
    mass = 1.0 - alpha
    before = numpy.cumsum(weights) - weights
    taken = numpy.clip(mass - before, 0.0, weights)
    return float(numpy.dot(taken, values) / mass)


def penalty_regret(rv, alpha):
    """``E[max(0, eta)] / (1 - alpha)``."""
    _check_alpha(alpha, allow_zero=False)
    return float(
        numpy.dot(rv.weights, numpy.maximum(rv.values, 0.0)) / (1.0 - alpha)
    )


def buffered_probability(rv):
    """The buffered probability of ``eta > 0``.

    Zero when ``eta <= 0`` almost surely, one when ``E[eta] >= 0`` (and
    ``eta > 0`` has positive probability) and ``1 - alpha*`` otherwise,
    where the alpha*-superquantile vanishes. Then ``buffered_probability(rv)
    <= 1 - alpha`` exactly when ``superquantile(rv, alpha) <= 0``.

    Parameters
    ----------
    rv : DiscreteRv

    Returns
    -------
    float
    """
    if not isinstance(rv, DiscreteRv):
        rv = DiscreteRv(rv)
    if numpy.all(rv.values <= 0.0):
        return 0.0
    if rv.mean() >= 0.0:
        return 1.0

    def excess(alpha):
        return superquantile(rv, alpha)

    lower, upper = ALPHA_MARGIN, 1.0 - ALPHA_MARGIN
    if excess(upper) <= 0.0:
        # Positive outcomes carry less than ALPHA_MARGIN of probability
        return ALPHA_MARGIN
    root = scipy.optimize.bisect(
        excess, lower, upper, xtol=ALPHA_XTOL, maxiter=200
    )
    return float(1.0 - root)


def summarize(rv, alpha):
    """All risk measures of a random variable at one level."""
    return RiskSummary(
        alpha=alpha,
        mean=rv.mean(),
        quantile=quantile(rv, alpha),
        superquantile=superquantile(rv, alpha),
        penalty_regret=penalty_regret(rv, alpha),
        buffered_probability=buffered_probability(rv),
    )
