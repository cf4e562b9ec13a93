import json

import pytest

from qgsnet.cli import main
from qgsnet.cli.config import RunConfig, load_run_config
from qgsnet.utils.persistence import read_csv, read_json

TINY_RUN = {
    "scenario": {
        "experiments_per_class": 6,
        "train_per_class": 4,
        "active_pmus": [4],
        "layout": {"w_pre": 3, "w_dur": 3},
    },
    "two_stage": {
        "stage1_hidden": 3,
        "stage2_hidden": 2,
        "trainer": "ebp",
        "ebp": {"learning_rate": 0.05, "epochs": 30},
    },
}


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def with_scenario(**changes):
    data = json.loads(json.dumps(TINY_RUN))
    data["scenario"].update(changes)
    return data


@pytest.fixture
def config_path(tmp_path):
    return write_config(tmp_path, TINY_RUN)


@pytest.fixture
def dataset_dir(tmp_path, config_path):
    out = tmp_path / "dataset"
    assert main(["generate", "--config", config_path, "--out", str(out)]) == 0
    return out


@pytest.fixture
def model_path(tmp_path, config_path, dataset_dir):
    out = tmp_path / "model"
    assert main(["train", "--config", config_path, "--dataset", str(dataset_dir), "--out", str(out)]) == 0
    return out / "model.json"


def test_generate_writes_dataset(dataset_dir):
    frame = read_csv(dataset_dir / "features.csv")
    assert len(frame) == 78
    manifest = read_json(dataset_dir / "manifest.json")
    assert manifest["n_features"] == 32


def test_generate_with_raw_streams(tmp_path, config_path):
    out = tmp_path / "raw"
    assert main(["generate", "--config", config_path, "--out", str(out), "--raw-streams"]) == 0
    assert (out / "streams.csv").exists()


def test_train_writes_reloadable_model(model_path):
    data = read_json(model_path)
    assert data["stage1"]["training"]["method"] == "ebp"
    assert data["direct_classes"] == [1, 2, 3, 4, 10, 11, 12, 13]


def test_train_with_qgs_writes_minima(tmp_path, dataset_dir):
    data = json.loads(json.dumps(TINY_RUN))
    data["two_stage"] = {
        "stage1_hidden": 2,
        "stage2_hidden": 2,
        "trainer": "qgs",
        "train": {"target_minima": 1},
        "qgs": {"abs_tol": 1e-4, "rel_tol": 1e-4, "grad_tol": 1e-3, "max_steps": 100,
                "escape_directions": 1, "keep_unconverged": True},
    }
    out = tmp_path / "qgs_model"
    assert main(["train", "--config", write_config(tmp_path, data, "qgs.json"), "--dataset", str(dataset_dir),
                 "--out", str(out)]) == 0
    assert read_json(out / "model.json")["stage2"]["training"]["method"] == "qgs"
    minima = read_json(out / "minima_stage1.json")
    assert len(minima["items"]) + len(minima["candidates"]) == 1


def test_trainer_flag_overrides_config(tmp_path, dataset_dir):
    data = json.loads(json.dumps(TINY_RUN))
    data["two_stage"]["ga"] = {"population_size": 8, "generations": 2}
    out = tmp_path / "ga_model"
    assert main(["train", "--config", write_config(tmp_path, data, "ga.json"), "--dataset", str(dataset_dir),
                 "--out", str(out), "--trainer", "ga"]) == 0
    assert read_json(out / "model.json")["stage1"]["training"]["method"] == "ga"


def test_evaluate_writes_reports(tmp_path, config_path, dataset_dir, model_path):
    out = tmp_path / "evaluation"
    assert main(["evaluate", "--config", config_path, "--model", str(model_path), "--dataset", str(dataset_dir),
                 "--out", str(out)]) == 0
    summary = read_json(out / "summary.json")
    assert summary["total"] == 26
    assert summary["accuracy"] == summary["correct"] / 26
    frame = read_csv(out / "confusion.csv")
    assert set(frame["kind"]) == {"count", "percent"}
    counts = frame[frame["kind"] == "count"].drop(columns=["kind", "target"]).to_numpy()
    assert counts.sum() == 26
    assert counts.sum(axis=1).tolist() == [2] * 13


def test_runs_are_byte_identical(tmp_path, config_path):
    outputs = []
    for run in ("a", "b"):
        base = tmp_path / run
        assert main(["generate", "--config", config_path, "--out", str(base / "dataset")]) == 0
        assert main(["train", "--config", config_path, "--dataset", str(base / "dataset"),
                     "--out", str(base / "model")]) == 0
        assert main(["evaluate", "--config", config_path, "--model", str(base / "model" / "model.json"),
                     "--dataset", str(base / "dataset"), "--out", str(base / "evaluation")]) == 0
        outputs.append(base)
    for name in ("dataset/features.csv", "dataset/manifest.json", "model/model.json", "evaluation/confusion.csv"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_seed_flag_changes_the_data(tmp_path, config_path, dataset_dir):
    out = tmp_path / "seeded"
    assert main(["generate", "--config", config_path, "--out", str(out), "--seed", "5"]) == 0
    assert (out / "features.csv").read_bytes() != (dataset_dir / "features.csv").read_bytes()


def test_negative_noise_is_a_config_error(tmp_path, caplog):
    path = write_config(tmp_path, with_scenario(noise_variance=-0.1))
    assert main(["generate", "--config", path, "--out", str(tmp_path / "x")]) == 2
    assert "scenario.noise_variance" in caplog.text


def test_unknown_key_is_a_config_error(tmp_path):
    path = write_config(tmp_path, {**TINY_RUN, "colour": "blue"})
    assert main(["generate", "--config", path, "--out", str(tmp_path / "x")]) == 2


def test_missing_config_file(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "absent.json")]) == 3


def test_missing_dataset(tmp_path, config_path):
    assert main(["train", "--config", config_path, "--dataset", str(tmp_path / "absent")]) == 3


def test_too_few_experiments(tmp_path):
    path = write_config(tmp_path, with_scenario(experiments_per_class=3))
    assert main(["generate", "--config", path, "--out", str(tmp_path / "x")]) == 2


def test_empty_evaluation_split(tmp_path, caplog):
    path = write_config(tmp_path, with_scenario(experiments_per_class=4))
    data_dir, model_dir = tmp_path / "dataset", tmp_path / "model"
    assert main(["generate", "--config", path, "--out", str(data_dir)]) == 0
    assert main(["train", "--config", path, "--dataset", str(data_dir), "--out", str(model_dir)]) == 0
    code = main(["evaluate", "--config", path, "--model", str(model_dir / "model.json"),
                 "--dataset", str(data_dir), "--out", str(tmp_path / "evaluation")])
    assert code == 2
    assert "empty evaluation set" in caplog.text


def test_resume_with_other_features_is_rejected(tmp_path, model_path):
    path = write_config(tmp_path, with_scenario(active_pmus=[3, 4]), "wide.json")
    other = tmp_path / "wide_dataset"
    assert main(["generate", "--config", path, "--out", str(other)]) == 0
    code = main(["train", "--config", path, "--dataset", str(other), "--resume", str(model_path),
                 "--out", str(tmp_path / "resumed")])
    assert code == 2


def test_evaluate_with_other_features_is_rejected(tmp_path, model_path):
    path = write_config(tmp_path, with_scenario(active_pmus=[3, 4]), "wide.json")
    other = tmp_path / "wide_dataset"
    assert main(["generate", "--config", path, "--out", str(other)]) == 0
    assert main(["evaluate", "--config", path, "--model", str(model_path), "--dataset", str(other)]) == 2


def test_unknown_sweep_axis(tmp_path, config_path, caplog):
    assert main(["sweep", "frequency", "--config", config_path, "--out", str(tmp_path / "s")]) == 2
    assert "valid axes" in caplog.text


def test_sweep_writes_report(tmp_path, config_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "pmu_count", "--config", config_path, "--out", str(out)]) == 0
    frame = read_csv(out / "sweep_pmu_count.csv")
    assert frame["setting"].tolist() == [1, 2, 3, 4]
    assert frame["n_features"].is_monotonic_increasing


def test_sweep_with_every_point_failing(tmp_path):
    path = write_config(tmp_path, with_scenario(experiments_per_class=2))
    assert main(["sweep", "noise", "--config", path, "--out", str(tmp_path / "s")]) == 5


def test_boost_command(tmp_path):
    data = with_scenario(experiments_per_class=8)
    data["boost_rounds"] = 2
    out = tmp_path / "boost"
    assert main(["boost", "--config", write_config(tmp_path, data), "--out", str(out)]) == 0
    report = read_json(out / "boost.json")
    assert len(report["train_sizes"]) == 3
    assert (out / "model.json").exists()


def test_output_dir_from_environment(tmp_path, config_path, monkeypatch):
    monkeypatch.setenv("QGSNET_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["generate", "--config", config_path]) == 0
    assert (tmp_path / "env" / "dataset" / "features.csv").exists()


def test_run_config_round_trips():
    config = RunConfig.model_validate(TINY_RUN)
    assert RunConfig.model_validate_json(config.model_dump_json()) == config
    assert load_run_config(None) == RunConfig()


def test_seeds_are_split_per_subsystem():
    scenario, two_stage = RunConfig(seed=3).seeded()
    assert scenario.seed != two_stage.seed
    assert RunConfig(seed=3).seeded()[0].seed == scenario.seed
