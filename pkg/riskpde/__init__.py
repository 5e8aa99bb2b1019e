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


from riskpde.config import build_instance, load
from riskpde.field import FieldSpec, sample_field
from riskpde.optimize import Schedule, Stage, outer_loop
from riskpde.problem import Instance, ObjectiveMode, SaaSpec
from riskpde.util import ConfigError


__all__ = [
    "FieldSpec",
    "Instance",
    "ObjectiveMode",
    "SaaSpec",
    "Schedule",
    "Stage",
    "load",
    "optimize_file",
    "sample_field",
]


def optimize_file(path, seed=None, workers=1):
    """Run the outer loop of an experiment file.

    Parameters
    ----------
    path : str or pathlib.Path
        The experiment configuration, which must define a schedule.
    seed : int, optional
        The sample seed. The seed in the file is used by default.
    workers : int, optional
        Number of threads over which per-sample solves fan out.

    Returns
    -------
    riskpde.optimize.GapCertificate

    Examples
    --------
    >>> certificate = riskpde.optimize_file("configs/convex.json")
    >>> certificate.final_record.status
    <StageStatus.CONVERGED: 'converged'>
    """
    config = load(path)
    if config.schedule is None:
        raise ConfigError("{} does not define a schedule".format(path))
    if seed is None:
        seed = config.seeds.sample
    instance = build_instance(config.instance, seed)
    return outer_loop(instance, config.schedule, workers)
