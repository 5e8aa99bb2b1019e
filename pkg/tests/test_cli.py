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

import hashlib
import json
import os

import numpy
import pytest

from riskpde import artifacts
from riskpde.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    RISK_COLUMNS,
    main,
)
from riskpde.optimize import GapCertificate, StageRecord, StageStatus
from riskpde.problem import Box, ControlPoint, ObjectiveMode
from riskpde.util import NumericalFailure


CONFIG_DIRECTORY = os.path.join(os.path.dirname(__file__), "..", "configs")
MANUFACTURED = os.path.join(CONFIG_DIRECTORY, "manufactured.json")
ZERO = os.path.join(CONFIG_DIRECTORY, "zero.json")

SMALL_INSTANCE = {
    "mesh": {"n_elements": 8},
    "field": {
        "modes": [
            {
                "type": "piecewise",
                "edges": [0.0, 0.5, 1.0],
                "values": [0.3, -0.3],
            }
        ]
    },
    "qoi": {
        "s_d": {"type": "constant", "value": 0.5},
        "target": [0.25, 0.75],
        "s_t": 0.1,
        "alpha": 0.9,
    },
    "box": {"lower": 0.0, "upper": 10.0},
    "theta_reg": 0.01,
}
SMALL_SCHEDULE = {
    "stages": [
        {"nu": 8, "beta": 0.1, "theta_pen": 1.0, "delta": 1e-5},
        {"nu": 16, "beta": 0.05, "theta_pen": 2.0, "delta": 1e-6},
    ]
}
SMALL_VERIFY = {
    "field_samples": 3,
    "superquantile_laws": 20,
    "duality_laws": 10,
    "duality_alphas": 5,
    "probe_samples": 500,
    "embedding_trials": 5,
    "stability_samples": 5,
}


def write_config(tmpdir, document, name="experiment.json"):
    path = tmpdir.join(name)
    path.write(json.dumps(document))
    return str(path)


def sha256(path):
    with open(path, "rb") as fp:
        return hashlib.sha256(fp.read()).hexdigest()


def run(*argv):
    return main([str(arg) for arg in argv])


def test_solve_pde_manufactured(tmpdir):
    out = tmpdir.join("out")
    assert run("solve-pde", "--config", MANUFACTURED, "--out", out) == 0
    path = str(out.join("state.csv"))
    with open(path) as fp:
        header = fp.readline().strip()
    assert header == "# riskpde solve-pde config_sha256={} seed=0".format(
        sha256(MANUFACTURED)
    )
    columns, rows = artifacts.read_csv(path)
    assert columns == ["x", "value"]
    table = numpy.array(rows, dtype=float)
    x, u = table[:, 0], table[:, 1]
    assert x.size == 17
    numpy.testing.assert_allclose(u, x * (1.0 - x), rtol=0, atol=1e-12)


def test_solve_pde_zero(tmpdir):
    assert run("solve-pde", "--config", ZERO, "--out", tmpdir) == 0
    _, rows = artifacts.read_csv(str(tmpdir.join("state.csv")))
    assert [row[1] for row in rows] == ["0"] * 9


def test_solve_pde_study(tmpdir):
    argv = ["solve-pde", "--config", MANUFACTURED, "--out", tmpdir]
    assert run(*(argv + ["--study"])) == 0
    columns, rows = artifacts.read_csv(str(tmpdir.join("convergence.csv")))
    assert columns == ["h", "dof", "l2_error", "rate"]
    assert [row[1] for row in rows] == ["17", "33", "65", "129", "257"]


def test_solve_pde_reproducible(tmpdir):
    for name, threads in [("first", 1), ("second", 4)]:
        argv = ["solve-pde", "--config", MANUFACTURED, "--threads", threads]
        assert run(*(argv + ["--out", tmpdir.join(name)])) == 0
    first = tmpdir.join("first", "state.csv").read_binary()
    assert first == tmpdir.join("second", "state.csv").read_binary()


def test_missing_config(tmpdir):
    assert run("solve-pde", "--out", tmpdir) == EXIT_CONFIG_ERROR


def test_unreadable_config(tmpdir):
    path = tmpdir.join("missing.json")
    assert run("solve-pde", "--config", path) == EXIT_CONFIG_ERROR


def test_malformed_config(tmpdir):
    path = tmpdir.join("broken.json")
    path.write("{")
    assert run("verify", "--config", path) == EXIT_CONFIG_ERROR


def test_invalid_config(tmpdir):
    document = {"instance": dict(SMALL_INSTANCE, mode="worst-case")}
    path = write_config(tmpdir, document)
    assert run("solve-pde", "--config", path) == EXIT_CONFIG_ERROR


def test_unknown_command():
    with pytest.raises(SystemExit):
        run("plot")


def test_sample_field(tmpdir):
    path = write_config(tmpdir, {"instance": SMALL_INSTANCE})
    argv = ["sample-field", "--config", path, "--seed", 3]
    assert run(*(argv + ["--out", tmpdir.join("a")])) == 0
    assert run(*(argv + ["--out", tmpdir.join("b"), "--index", 1])) == 0
    _, first = artifacts.read_csv(str(tmpdir.join("a", "field_y.csv")))
    _, second = artifacts.read_csv(str(tmpdir.join("b", "field_y.csv")))
    assert len(first) == 1
    assert first != second
    _, grid = artifacts.read_csv(str(tmpdir.join("a", "field.csv")))
    assert len(grid) == 81
    _, bounds = artifacts.read_csv(str(tmpdir.join("a", "field_bounds.csv")))
    lower, upper = (float(value) for value in bounds[0])
    values = [float(row[1]) for row in grid]
    assert lower <= min(values) <= max(values) <= upper


def test_risk_eval(tmpdir):
    values = tmpdir.join("values.csv")
    values.write("value\n1\n2\n3\n4\n")
    argv = ["risk", "eval", values, "--alpha", 0.5, 0.75, "--out", tmpdir]
    assert run(*argv) == EXIT_OK
    path = str(tmpdir.join("risk.csv"))
    with open(path) as fp:
        header = fp.readline().strip()
    assert header.endswith(
        "config_sha256={} seed=0".format(sha256(str(values)))
    )
    columns, rows = artifacts.read_csv(path)
    assert columns == RISK_COLUMNS
    table = numpy.array(rows, dtype=float)
    assert table[:, 0].tolist() == [0.5, 0.75]
    assert table[:, 2].tolist() == [2.0, 3.0]
    assert table[:, 3] == pytest.approx([3.5, 4.0])
    assert table[:, 4] == pytest.approx([5.0, 10.0])
    assert table[:, 1] == pytest.approx([2.5, 2.5])
    assert table[:, 5].tolist() == [1.0, 1.0]


def test_risk_eval_weights(tmpdir):
    values = tmpdir.join("values.csv")
    values.write("value,weight\n-3,0.5\n1,0.5\n")
    assert run("risk", "eval", values, "--out", tmpdir) == EXIT_OK
    _, rows = artifacts.read_csv(str(tmpdir.join("risk.csv")))
    assert float(rows[0][0]) == 0.9
    assert float(rows[0][5]) == pytest.approx(2.0 / 3.0)


@pytest.mark.parametrize(
    "contents, alpha",
    [
        ("x\n1\n", "0.5"),
        ("value\nhot\n", "0.5"),
        ("value\n", "0.5"),
        ("value\n1\n2\n", "1.0"),
        ("value,weight\n1,0.2\n2,0.2\n", "0.5"),
    ],
)
def test_risk_eval_invalid(tmpdir, contents, alpha):
    values = tmpdir.join("values.csv")
    values.write(contents)
    argv = ["risk", "eval", values, "--alpha", alpha, "--out", tmpdir]
    assert run(*argv) == EXIT_CONFIG_ERROR


def test_risk_eval_missing_file(tmpdir):
    argv = ["risk", "eval", tmpdir.join("missing.csv"), "--out", tmpdir]
    assert run(*argv) == EXIT_CONFIG_ERROR


def test_verify(tmpdir):
    document = {"instance": SMALL_INSTANCE, "verify": SMALL_VERIFY}
    path = write_config(tmpdir, document)
    argv = ["verify", "--config", path, "--gradient-instances", 1]
    assert run(*(argv + ["--out", tmpdir])) == EXIT_OK
    columns, rows = artifacts.read_csv(str(tmpdir.join("verify.csv")))
    assert columns == ["check", "measured", "bound", "pass"]
    assert all(row[3] == "PASS" for row in rows)


def test_verify_default_gradient_instances(mocker, tmpdir):
    verification = mocker.patch(
        "riskpde.cli.run_verification", return_value=[]
    )
    document = {"instance": SMALL_INSTANCE, "verify": SMALL_VERIFY}
    path = write_config(tmpdir, document)
    assert run("verify", "--config", path, "--out", tmpdir) == EXIT_OK
    _, kwargs = verification.call_args
    assert kwargs["gradient_instances"] == 50


def test_verify_failed_check(tmpdir):
    settings = dict(SMALL_VERIFY, fem_rate_min=5.0)
    document = {"instance": SMALL_INSTANCE, "verify": settings}
    path = write_config(tmpdir, document)
    argv = ["verify", "--config", path, "--gradient-instances", 1]
    assert run(*(argv + ["--out", tmpdir])) == EXIT_CHECK_FAILED
    _, rows = artifacts.read_csv(str(tmpdir.join("verify.csv")))
    results = {row[0]: row[3] for row in rows}
    assert results["fem_rate"] == "FAIL"
    assert results["smax_upper"] == "PASS"


def test_epi_demo(tmpdir):
    argv = ["epi-demo", "--problem", "step", "--seed", 2, "--out", tmpdir]
    assert run(*argv) == EXIT_OK
    columns, rows = artifacts.read_csv(str(tmpdir.join("epi.csv")))
    assert [row[:2] for row in rows] == [["step", "2"]] * 4
    with open(str(tmpdir.join("epi.json"))) as fp:
        summary = json.load(fp)
    assert [entry["problem"] for entry in summary["runs"]] == ["step"]
    assert summary["run"]["config_sha256"] == "none"


def test_epi_demo_config(tmpdir):
    epi = {"problems": ["shift"], "seeds": [0, 1], "stages": [{"nu": 10000}]}
    path = write_config(tmpdir, {"instance": SMALL_INSTANCE, "epi": epi})
    assert run("epi-demo", "--config", path, "--out", tmpdir) == EXIT_OK
    _, rows = artifacts.read_csv(str(tmpdir.join("epi.csv")))
    assert [row[:2] + row[3:4] for row in rows] == [
        ["shift", "0", "10000"],
        ["shift", "1", "10000"],
    ]


def test_optimize(tmpdir):
    document = {
        "instance": SMALL_INSTANCE,
        "schedule": SMALL_SCHEDULE,
        "reference_samples": 64,
    }
    path = write_config(tmpdir, document)
    code = run("optimize", "--config", path, "--out", tmpdir)
    for name in [
        "certificate.json",
        "certificate.csv",
        "control.csv",
        "timing.csv",
    ]:
        assert tmpdir.join(name).check(file=True)
    columns, rows = artifacts.read_csv(str(tmpdir.join("certificate.csv")))
    assert [row[0] for row in rows] == ["8", "16"]
    columns, rows = artifacts.read_csv(
        str(tmpdir.join("certificate_check.csv"))
    )
    passed = rows[0][columns.index("passed")]
    assert code == (EXIT_OK if passed == "PASS" else EXIT_CHECK_FAILED)


def test_optimize_reproducible(tmpdir):
    document = {
        "instance": SMALL_INSTANCE,
        "schedule": SMALL_SCHEDULE,
        "reference_samples": 16,
    }
    path = write_config(tmpdir, document)
    for name, threads in [("first", 1), ("second", 3)]:
        out = tmpdir.join(name)
        run("optimize", "--config", path, "--threads", threads, "--out", out)
    for name in ["certificate.json", "certificate.csv", "control.csv"]:
        first = tmpdir.join("first", name).read_binary()
        assert first == tmpdir.join("second", name).read_binary()


def test_optimize_without_schedule(tmpdir):
    path = write_config(tmpdir, {"instance": SMALL_INSTANCE})
    assert run("optimize", "--config", path) == EXIT_CONFIG_ERROR


def test_optimize_seed_collision(tmpdir):
    document = {"instance": SMALL_INSTANCE, "schedule": SMALL_SCHEDULE}
    path = write_config(tmpdir, document)
    argv = ["optimize", "--config", path, "--seed", 1, "--out", tmpdir]
    assert run(*argv) == EXIT_CONFIG_ERROR


def test_optimize_numerical_failure(mocker, tmpdir):
    mocker.patch(
        "riskpde.optimize.inner_solve",
        side_effect=NumericalFailure("factorisation failed", sample_index=0),
    )
    document = {"instance": SMALL_INSTANCE, "schedule": SMALL_SCHEDULE}
    path = write_config(tmpdir, document)
    with pytest.warns(UserWarning, match="failed"):
        code = run("optimize", "--config", path, "--out", tmpdir)
    assert code == EXIT_NUMERICAL_FAILURE
    _, rows = artifacts.read_csv(str(tmpdir.join("certificate.csv")))
    assert [row[-1] for row in rows] == ["failed", "failed"]


def _buffered_certificate(z_value, sigma, recorded_residual):
    record = StageRecord(
        8, 0.05, 1.0, 0.0, 1e6, recorded_residual, 10, 0.0,
        StageStatus.CONVERGED,
    )
    point = ControlPoint(
        numpy.full(8, z_value), 0.0, sigma, Box(0.0, 10.0)
    )
    return GapCertificate(
        [record], point, 1e-5, ObjectiveMode.BUFFERED, 0.9, 0.0
    )


@pytest.mark.parametrize(
    "sigma, recorded_residual, expected_code",
    [(0.0, 0.5, EXIT_OK), (0.5, 0.0, EXIT_CHECK_FAILED)],
)
def test_optimize_feasibility_uses_reference_sample(
    mocker, tmpdir, sigma, recorded_residual, expected_code
):
    # Every shortfall is negative at the hottest admissible control, so the
    # exact residual on any sample is sigma.
    certificate = _buffered_certificate(10.0, sigma, recorded_residual)
    mocker.patch("riskpde.cli.outer_loop", return_value=certificate)
    document = {
        "instance": dict(SMALL_INSTANCE, mode="buffered"),
        "schedule": SMALL_SCHEDULE,
        "reference_samples": 32,
    }
    path = write_config(tmpdir, document)
    assert run("optimize", "--config", path, "--out", tmpdir) == (
        expected_code
    )
    columns, rows = artifacts.read_csv(
        str(tmpdir.join("certificate_check.csv"))
    )
    assert columns.index("smoothing_budget") + 1 == columns.index("bound")
    check = dict(zip(columns, rows[0]))
    assert check["passed"] == "PASS"
    assert float(check["reference_residual"]) == pytest.approx(sigma)


def test_optimize_buffered_small(tmpdir):
    instance = {
        "mesh": {"n_elements": 8},
        "field": {
            "modes": [
                {
                    "type": "piecewise",
                    "edges": [0.0, 0.5, 1.0],
                    "values": [0.001, -0.001],
                }
            ]
        },
        "qoi": {
            "s_d": {"type": "constant", "value": 0.5},
            "target": [0.25, 0.75],
            "s_t": 0.6,
            "alpha": 0.5,
        },
        "box": {"lower": 0.0, "upper": 10.0},
        "theta_reg": 1.0,
        "mode": "buffered",
    }
    stage = {"delta": 1e-5, "max_inner_iters": 5000}
    schedule = {
        "stages": [
            dict(stage, nu=16, beta=0.05, theta_pen=20.0),
            dict(stage, nu=32, beta=0.02, theta_pen=100.0),
        ],
        "multiplier_rule": "augmented-lagrangian",
        "multiplier_rounds": 4,
    }
    document = {
        "instance": instance,
        "schedule": schedule,
        "reference_samples": 256,
    }
    path = write_config(tmpdir, document)
    assert run("optimize", "--config", path, "--out", tmpdir) == EXIT_OK
    _, rows = artifacts.read_csv(str(tmpdir.join("certificate.csv")))
    assert [row[-1] for row in rows] == ["converged", "converged"]
    columns, rows = artifacts.read_csv(
        str(tmpdir.join("certificate_check.csv"))
    )
    check = dict(zip(columns, rows[0]))
    tolerance = float(check["feasibility_tolerance"])
    assert abs(float(check["reference_residual"])) <= tolerance


@pytest.mark.slow
@pytest.mark.parametrize("name", ["convex.json", "buffered.json"])
def test_optimize_bundled(tmpdir, name):
    path = os.path.join(CONFIG_DIRECTORY, name)
    assert run("optimize", "--config", path, "--out", tmpdir) == EXIT_OK
    _, rows = artifacts.read_csv(str(tmpdir.join("certificate.csv")))
    assert all(row[-1] == "converged" for row in rows)
    columns, rows = artifacts.read_csv(
        str(tmpdir.join("certificate_check.csv"))
    )
    check = dict(zip(columns, rows[0]))
    assert check["passed"] == "PASS"
    if name == "buffered.json":
        residual = float(check["reference_residual"])
        assert abs(residual) <= float(check["feasibility_tolerance"])
