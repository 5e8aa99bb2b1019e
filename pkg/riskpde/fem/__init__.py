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


from riskpde.fem.mesh import (
    Mesh,
    P0Control,
    P1State,
    build_uniform_mesh,
    embed_control_norm,
)
from riskpde.fem.solver import (
    PdeData,
    assemble_operator,
    solve_adjoint,
    solve_state,
)
from riskpde.fem.convergence import convergence_study, estimate_rate


__all__ = [
    "Mesh",
    "P0Control",
    "P1State",
    "PdeData",
    "assemble_operator",
    "build_uniform_mesh",
    "convergence_study",
    "embed_control_norm",
    "estimate_rate",
    "solve_adjoint",
    "solve_state",
]
