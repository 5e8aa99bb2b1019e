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

"""Common components for riskpde."""


class RiskPdeError(Exception):
    """An error occurred in riskpde."""

    pass


class InvalidArgument(RiskPdeError, ValueError):
    """An argument violated the precondition of an operation."""

    pass


class NumericalFailure(RiskPdeError, ArithmeticError):
    """A numerical computation could not be completed.

    Parameters
    ----------
    message : str
        A description of the failure.
    sample_index : int, optional
        The index of the field sample whose solve failed, when known.
    """

    def __init__(self, message, sample_index=None):
        self.reason = message
        if sample_index is not None:
            message = "sample {}: {}".format(sample_index, message)
        super(NumericalFailure, self).__init__(message)
        self.sample_index = sample_index


class ConfigError(RiskPdeError):
    """An experiment configuration could not be loaded.

    Parameters
    ----------
    message : str
        A description of the problem.
    errors : dict, optional
        Field-level validation messages, keyed by field name.
    """

    def __init__(self, message, errors=None):
        super(ConfigError, self).__init__(message)
        self.errors = errors or {}
