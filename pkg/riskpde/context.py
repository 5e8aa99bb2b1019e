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
Describe the run that produced an artifact.
"""


import hashlib

from attr import attrs, attrib


NO_CONFIG = "none"


@attrs(frozen=True)
class RunContext:
    """Information identifying a run.

    Parameters
    ----------
    command : str
        The subcommand that was run.
    config_sha256 : str
        Hex digest of the configuration file, or ``"none"``.
    seed : int
        The sample seed of the run.
    threads : int
        The number of worker threads. Results do not depend on it, so it is
        left out of artifact headers.
    """

    command = attrib()
    config_sha256 = attrib(default=NO_CONFIG)
    seed = attrib(default=0)
    threads = attrib(default=1)

    def header(self):
        """The comment line heading every CSV artifact of the run."""
        return "# riskpde {} config_sha256={} seed={}".format(
            self.command, self.config_sha256, self.seed
        )

    def as_dict(self):
        return {
            "command": self.command,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
        }


def get_context(command, config=None, options=None, input_bytes=None):
    """Build the context of a run.

    Parameters
    ----------
    command : str
    config : riskpde.config.ExperimentConfig, optional
    options : riskpde.config.RunOptions, optional
    input_bytes : bytes, optional
        Contents of an input file hashed in place of a configuration, for
        commands that run without one.

    Returns
    -------
    RunContext
    """
    if config is not None and config.sha256 is not None:
        digest = config.sha256
    elif input_bytes is not None:
        digest = hashlib.sha256(input_bytes).hexdigest()
    else:
        digest = NO_CONFIG
    seed = options.seed if options is not None else 0
    threads = options.threads if options is not None else 1
    return RunContext(command, digest, seed, threads)
