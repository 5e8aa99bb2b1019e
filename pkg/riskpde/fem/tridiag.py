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
Batched LDL^T factorisation of symmetric tridiagonal systems.

The loops run over matrix rows; every operation inside them is vectorised
over a stack of independent systems, so all samples of a sample average
factorise and solve together.
"""


import numpy
from attr import attrs, attrib

from riskpde.util import NumericalFailure


# Relative pivot size below which a system is treated as not positive
# definite.
PIVOT_TOLERANCE = 1e-13


@attrs(frozen=True, eq=False)
class TridiagonalFactor:
    """The LDL^T factors of a stack of SPD tridiagonal matrices.

    Parameters
    ----------
    pivots : numpy.ndarray
        Diagonal of D, shape ``(m, N)``.
    multipliers : numpy.ndarray
        Subdiagonal of L, shape ``(m, N - 1)``.
    """

    pivots = attrib()
    multipliers = attrib()

    @property
    def size(self):
        return self.pivots.shape[1]

    def solve(self, rhs):
        """Solve every system of the stack.

        Parameters
        ----------
        rhs : numpy.ndarray
            Right-hand sides of shape ``(m, N)``, or ``(N,)`` to use the same
            right-hand side for all systems.

        Returns
        -------
        numpy.ndarray
            Solutions of shape ``(m, N)``.
        """
        pivots, multipliers = self.pivots, self.multipliers
        x = numpy.array(
            numpy.broadcast_to(rhs, pivots.shape), dtype=float, copy=True
        )
        n = self.size
        for i in range(n - 1):
            x[:, i + 1] -= multipliers[:, i] * x[:, i]
        x /= pivots
        for i in range(n - 2, -1, -1):
            x[:, i] -= multipliers[:, i] * x[:, i + 1]
        return x


def factorize(diagonal, offdiagonal):
    """Factorise a stack of symmetric tridiagonal matrices.

    Parameters
    ----------
    diagonal : numpy.ndarray
        Shape ``(m, N)``.
    offdiagonal : numpy.ndarray
        Shape ``(m, N - 1)``.

    Returns
    -------
    TridiagonalFactor

    Raises
    ------
    NumericalFailure
        If any matrix of the stack is not positive definite. The sample
        index of the first failing system is attached.
    """
    diagonal = numpy.atleast_2d(numpy.asarray(diagonal, dtype=float))
    offdiagonal = numpy.atleast_2d(numpy.asarray(offdiagonal, dtype=float))
    if not (
        numpy.all(numpy.isfinite(diagonal))
        and numpy.all(numpy.isfinite(offdiagonal))
    ):
        bad = numpy.flatnonzero(
            ~numpy.all(numpy.isfinite(diagonal), axis=1)
            | ~numpy.all(numpy.isfinite(offdiagonal), axis=1)
        )
        raise NumericalFailure(
            "nonfinite entries in assembled matrix", sample_index=int(bad[0])
        )

    m, n = diagonal.shape
    pivots = numpy.empty((m, n))
    multipliers = numpy.empty((m, n - 1))
    scale = numpy.max(numpy.abs(diagonal), axis=1)
    pivots[:, 0] = diagonal[:, 0]
    for i in range(n - 1):
        _check_pivot(pivots[:, i], scale, i)
        multipliers[:, i] = offdiagonal[:, i] / pivots[:, i]
        pivots[:, i + 1] = (
            diagonal[:, i + 1] - multipliers[:, i] * offdiagonal[:, i]
        )
    _check_pivot(pivots[:, n - 1], scale, n - 1)
    return TridiagonalFactor(pivots, multipliers)


def _check_pivot(pivot, scale, row):
    failed = ~(pivot > PIVOT_TOLERANCE * scale)
    if numpy.any(failed):
        index = int(numpy.flatnonzero(failed)[0])
        raise NumericalFailure(
            "matrix is not positive definite (pivot {:.3e} at row {})".format(
                pivot[index], row
            ),
            sample_index=index,
        )
