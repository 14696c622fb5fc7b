import warnings

import pytest
import yaml
from click.testing import CliRunner
from pydantic import ValidationError

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from safe_horizon.cli import main
from safe_horizon.config import ExperimentSpec, load_experiment, load_spec, scene_names
from safe_horizon.experiments import SUMMARY_COLUMNS
from safe_horizon.service import app
from safe_horizon.uncertainty import Variant

client = TestClient(app)

TINY = {
    "scene": "tiny",
    "planner": {"path": [[0, 0], [5, 0]], "N": 8},
    "obstacles": [{"model": "constant_velocity", "position": [2.5, 1.5], "velocity": [0, -0.3], "sigma_w": 0.2}],
    "repetitions": 1, "n_mc": 1000, "max_time": 0.6,
}


def test_bundled_scenes_load():
    assert {"gaussian-4", "gaussian-8", "gmm-8"} <= set(scene_names())
    g4 = load_experiment("gaussian-4")
    assert len(g4.obstacles) == 4 and g4.planner.risk.sample_size == 1237
    assert g4.planner.N == 20 and g4.planner.dt == 0.2
    assert all(o.radius == 0.3 for o in g4.obstacles) and g4.planner.robot_radius == 0.325
    gmm = load_experiment("gmm-8")
    assert len(gmm.obstacles) == 8
    assert all(o.model.variant is Variant.MARKOV_CHAIN_GMM for o in gmm.obstacles)
    assert len(load_experiment("gaussian-8").obstacles) == 8


def test_overrides_and_unknown_keys():
    spec = load_spec("gaussian-4", seed=5, repetitions=2, n_mc=None)
    assert spec.seed == 5 and spec.repetitions == 2 and spec.n_mc == 100_000
    with pytest.raises(ValidationError):
        ExperimentSpec.model_validate({**TINY, "colour": "red"})
    with pytest.raises(ValidationError):
        ExperimentSpec.model_validate({**TINY, "planner": {"path": [[0, 0]]}})
    with pytest.raises(FileNotFoundError):
        load_spec("no-such-scene")


def test_health_and_scenes():
    assert client.get("/health").json()["status"] == "ok"
    assert "gaussian-4" in client.get("/scenes").json()["scenes"]
    assert client.get("/scenes/gmm-8").json()["scene"] == "gmm-8"
    assert client.get("/scenes/missing").status_code == 404


def test_sample_size_endpoint():
    out = client.post("/sample-size", json={"epsilon": 0.05, "beta": 0.01, "support": 9}).json()
    assert out["S"] == 1237 and len(out["table"]) == 10
    assert out["table"][9]["epsilon_n"] <= 0.05
    out = client.post("/sample-size", json={"epsilon": 0.1, "beta": 1e-6, "support": 2, "removal": 2}).json()
    assert out["S"] == 388 and out["support_limit"] == 4
    assert client.post("/sample-size", json={"epsilon": 1.5, "beta": 0.01, "support": 9}).status_code == 422


def test_simulate_and_validate_endpoints(tmp_path):
    out = client.post("/simulate", json={"spec": TINY, "out_dir": str(tmp_path)}).json()
    assert out["columns"] == SUMMARY_COLUMNS and out["summary"]["Scene"] == "tiny"
    assert out["runs"][0]["error"] is None
    res = client.post("/validate", json={"plans": str(tmp_path), "n_mc": 1000}).json()
    assert res["plans"] == len(res["rows"]) > 0
    assert client.post("/validate", json={"plans": str(tmp_path / "nope")}).status_code == 404
    assert client.post("/simulate", json={}).status_code == 422


def test_plan_endpoint():
    req = {"planner": {"path": [[0, 0], [10, 0]], "N": 10},
           "obstacles": [{"model": "gaussian_random_walk", "position": [3, 0.8], "sigma_w": 0.2}]}
    out = client.post("/plan", json=req).json()
    assert out["status"] in ("optimal", "early_terminated") and out["certified"]
    assert len(out["states"]) == 11 and out["command"][0] > 0
    assert out["epsilon_bound"] <= 0.05


def test_cli_sample_size_prints_table():
    res = CliRunner().invoke(main, ["sample-size", "--epsilon", "0.05", "--beta", "0.01", "--support", "9"])
    assert res.exit_code == 0, res.output
    lines = res.output.strip().splitlines()
    assert lines[0] == "S=1237" and lines[1] == "n,epsilon_n" and len(lines) == 12
    assert lines[2].startswith("0,")


def test_cli_simulate_then_validate(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    out = tmp_path / "out"
    res = CliRunner().invoke(main, ["simulate", "--config", str(cfg), "--seed", "3", "--reps", "1",
                                    "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert res.output.splitlines()[0] == ",".join(SUMMARY_COLUMNS)
    assert (out / "summary.csv").exists() and (out / "steps.jsonl").exists()
    res = CliRunner().invoke(main, ["validate", "--plans", str(out), "--mc", "2000"])
    assert res.exit_code == 0, res.output
    assert "joint_cp" in res.output.splitlines()[0]


def test_cli_toy_and_errors():
    res = CliRunner().invoke(main, ["toy", "--mode", "solve", "--S", "100"])
    assert res.exit_code == 0 and '"status": "optimal"' in res.output
    res = CliRunner().invoke(main, ["sample-size", "--epsilon", "0.05", "--beta", "2", "--support", "9"])
    assert res.exit_code != 0 and "422" in res.output
