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
Write run artifacts.

Every CSV file starts with the header comment of its
:class:`riskpde.context.RunContext`. Floats are written with 17 significant
digits so that files round-trip and identical runs give identical bytes.
"""


import csv
import json
import logging
import math
import os
from enum import Enum

import numpy


logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.17g}"


def format_value(value):
    """The CSV text of one cell."""
    if value is None:
        return ""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (bool, numpy.bool_)):
        return "PASS" if value else "FAIL"
    if isinstance(value, (int, numpy.integer)):
        return str(int(value))
    if isinstance(value, (float, numpy.floating)):
        return FLOAT_FORMAT.format(float(value))
    return str(value)


def write_csv(path, context, columns, rows):
    """Write a table with the run header.

    Parameters
    ----------
    path : str
    context : RunContext
    columns : list of str
    rows : iterable of sequences
    """
    directory = os.path.dirname(str(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(str(path), "w", newline="") as fp:
        fp.write(context.header() + "\n")
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(value) for value in row])
    logger.info("wrote %s", path)
    return str(path)


def read_csv(path):
    """Read a table, skipping ``#`` comment lines.

    Returns
    -------
    columns : list of str
    rows : list of list of str
    """
    with open(str(path), newline="") as fp:
        lines = [line for line in fp if not line.startswith("#")]
    reader = csv.reader(lines)
    table = [row for row in reader if row]
    if not table:
        return [], []
    return table[0], table[1:]


def _jsonable(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (numpy.integer,)):
        return int(value)
    if isinstance(value, (float, numpy.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, numpy.ndarray):
        return [_jsonable(item) for item in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    return value


def write_json(path, context, document):
    """Write a structured text artifact with the run context embedded."""
    directory = os.path.dirname(str(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    payload = {"run": context.as_dict()}
    payload.update(_jsonable(document))
    with open(str(path), "w") as fp:
        json.dump(payload, fp, indent=2, sort_keys=True)
        fp.write("\n")
    logger.info("wrote %s", path)
    return str(path)


STAGE_COLUMNS = [
    "nu",
    "beta",
    "theta_pen",
    "y",
    "value",
    "residual",
    "inner_iters",
    "smoothing_error",
    "status",
]


def write_state(path, context, state):
    """Nodal values of a P1 state as ``x, value`` rows."""
    return write_csv(
        path, context, ["x", "value"], zip(state.mesh.nodes, state.values)
    )


def write_convergence(path, context, rows):
    return write_csv(path, context, ["h", "dof", "l2_error", "rate"], rows)


def write_field(directory, context, sample, points):
    """The coordinates of a field sample and its values on a grid."""
    y_path = write_csv(
        os.path.join(directory, "field_y.csv"),
        context,
        ["j", "y"],
        enumerate(sample.y),
    )
    grid_path = write_csv(
        os.path.join(directory, "field.csv"),
        context,
        ["x", "xi"],
        zip(points, sample(points)),
    )
    bounds_path = write_csv(
        os.path.join(directory, "field_bounds.csv"),
        context,
        ["c_lower", "c_upper"],
        [(sample.c_lower, sample.c_upper)],
    )
    return [y_path, grid_path, bounds_path]


def write_certificate(directory, context, certificate, control_mesh):
    """The stage table, final point and timings of an outer loop run.

    ``certificate.json`` and ``certificate.csv`` depend only on the
    configuration and seeds; wall-clock times go to ``timing.csv``.
    """
    records = [
        [
            record.nu,
            record.beta,
            record.theta_pen,
            record.multiplier,
            record.value,
            record.residual,
            record.inner_iters,
            record.smoothing_error,
            record.status,
        ]
        for record in certificate.stage_records
    ]
    point = certificate.final_point
    document = {
        "stages": [dict(zip(STAGE_COLUMNS, record)) for record in records],
        "final_point": {
            "z_n": point.z_n,
            "gamma": point.gamma,
            "sigma": point.sigma,
            "box": [point.box.lower, point.box.upper],
        },
        "delta_limit": certificate.delta_limit,
        "mode": certificate.mode,
        "alpha": certificate.alpha,
        "standard_error": certificate.standard_error,
        "final_residual": certificate.final_residual,
        "stationarity_surrogate": certificate.surrogate,
    }
    paths = [
        write_json(
            os.path.join(directory, "certificate.json"), context, document
        ),
        write_csv(
            os.path.join(directory, "certificate.csv"),
            context,
            STAGE_COLUMNS,
            records,
        ),
        write_csv(
            os.path.join(directory, "control.csv"),
            context,
            ["x_left", "x_right", "z"],
            zip(control_mesh.nodes[:-1], control_mesh.nodes[1:], point.z_n),
        ),
        write_csv(
            os.path.join(directory, "timing.csv"),
            context,
            ["stage", "nu", "wall_time"],
            certificate.timings,
        ),
    ]
    return paths


def write_certificate_check(path, context, check, tolerance):
    columns = list(check._fields) + ["feasibility_tolerance"]
    return write_csv(path, context, columns, [list(check) + [tolerance]])


def write_report(path, context, results):
    """A verification report of ``check, measured, bound, pass`` rows."""
    return write_csv(
        path,
        context,
        ["check", "measured", "bound", "pass"],
        [
            (result.check, result.measured, result.bound, result.passed)
            for result in results
        ],
    )


EPI_COLUMNS = [
    "problem",
    "seed",
    "n",
    "nu",
    "inf_estimate",
    "achieved",
    "true_value",
    "bound",
    "pass",
]


def write_epi_reports(directory, context, reports):
    """The gap demonstration as a stage table and a per-run summary."""
    rows = [
        [
            report.problem,
            report.seed,
            row.n,
            row.nu,
            row.inf_estimate,
            row.achieved,
            row.true_value,
            row.bound,
            row.passed,
        ]
        for report in reports
        for row in report.rows
    ]
    summary = {
        "runs": [
            {
                "problem": report.problem,
                "seed": report.seed,
                "epsilon": report.epsilon,
                "n": report.n,
                "discretisation_error": report.discretisation_error,
                "grid_slack": report.grid_slack,
                "liminf_gap": report.liminf_gap,
                "limsup_gap": report.limsup_gap,
                "passed": report.passed,
                "failed_stage": report.failed_stage,
            }
            for report in reports
        ]
    }
    return [
        write_csv(
            os.path.join(directory, "epi.csv"), context, EPI_COLUMNS, rows
        ),
        write_json(os.path.join(directory, "epi.json"), context, summary),
    ]
