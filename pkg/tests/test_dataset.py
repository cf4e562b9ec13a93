import numpy as np
import pytest
from numpy.testing import assert_allclose

from qgsnet.data import (
    Dataset,
    LabeledFeatures,
    ScenarioConfig,
    build_dataset,
    event_id,
)
from qgsnet.data.dataset import FEATURES_FILE, MANIFEST_FILE, STREAMS_FILE
from qgsnet.exceptions import ArtifactError, DigestMismatch, InsufficientData
from qgsnet.utils.persistence import read_csv, read_json, write_json


@pytest.fixture
def tiny_dataset(tiny_scenario):
    return build_dataset(tiny_scenario)


def test_event_ids():
    assert event_id(3, 12) == "c03-e0012"


def test_counts_and_shapes(tiny_dataset):
    assert len(tiny_dataset) == 78
    assert tiny_dataset.n_features == 32
    assert len(tiny_dataset.train_ids) == 52
    assert len(tiny_dataset.eval_ids) == 26
    assert set(tiny_dataset.train_ids).isdisjoint(tiny_dataset.eval_ids)
    assert np.bincount(tiny_dataset.train().labels, minlength=14)[1:].tolist() == [4] * 13


def test_even_split(tiny_layout):
    config = ScenarioConfig(experiments_per_class=10, train_per_class=5, active_pmus=[4], layout=tiny_layout)
    dataset = build_dataset(config)
    assert (len(dataset.train()), len(dataset.evaluation())) == (65, 65)


def test_generation_is_deterministic(tiny_scenario):
    assert build_dataset(tiny_scenario).content_digest == build_dataset(tiny_scenario).content_digest


def test_seed_changes_the_data(tiny_scenario):
    other = tiny_scenario.model_copy(update={"seed": 8})
    assert build_dataset(tiny_scenario).content_digest != build_dataset(other).content_digest


def test_parallel_generation_matches_serial(tiny_scenario):
    assert build_dataset(tiny_scenario, jobs=2).content_digest == build_dataset(tiny_scenario).content_digest


def test_noise_changes_features_but_not_the_split(tiny_scenario):
    clean = build_dataset(tiny_scenario)
    noisy = build_dataset(tiny_scenario.model_copy(update={"noise_variance": 0.01}))
    assert noisy.train_ids == clean.train_ids
    assert not np.allclose(noisy.features, clean.features)


def test_too_few_experiments(tiny_layout):
    config = ScenarioConfig(experiments_per_class=3, train_per_class=4, active_pmus=[4], layout=tiny_layout)
    with pytest.raises(InsufficientData):
        build_dataset(config)


def test_eval_batches_are_disjoint_and_cover(tiny_layout):
    config = ScenarioConfig(experiments_per_class=7, train_per_class=4, active_pmus=[4], layout=tiny_layout)
    dataset = build_dataset(config)
    batches = dataset.eval_batches(3)
    ids = [name for batch in batches for name in batch.ids]
    assert sorted(ids) == sorted(dataset.eval_ids)
    assert len(ids) == len(set(ids))
    for batch in batches:
        assert batch.classes == list(range(1, 14))


def test_save_and_load_round_trip(tiny_dataset, tmp_path):
    tiny_dataset.save(tmp_path)
    loaded = Dataset.load(tmp_path)
    assert loaded.content_digest == tiny_dataset.content_digest
    assert loaded.feature_digest == tiny_dataset.feature_digest
    assert_allclose(loaded.features, tiny_dataset.features, rtol=0, atol=0)


def test_saved_files(tiny_dataset, tmp_path):
    tiny_dataset.save(tmp_path)
    frame = read_csv(tmp_path / FEATURES_FILE)
    assert list(frame.columns[:3]) == ["event_id", "class", "f_0"]
    assert frame.shape == (78, 34)
    manifest = read_json(tmp_path / MANIFEST_FILE)
    assert manifest["n_features"] == 32
    assert len(manifest["gain_table"]) == 13
    assert not (tmp_path / STREAMS_FILE).exists()


def test_saving_is_byte_stable(tiny_dataset, tmp_path):
    tiny_dataset.save(tmp_path / "a")
    tiny_dataset.save(tmp_path / "b")
    for name in (FEATURES_FILE, MANIFEST_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_raw_streams_are_written_long_format(tiny_scenario, tmp_path):
    build_dataset(tiny_scenario, keep_streams=True).save(tmp_path, raw_streams=True)
    frame = read_csv(tmp_path / STREAMS_FILE)
    assert list(frame.columns) == ["event_id", "pmu", "channel", "sample", "value"]
    assert len(frame) == 78 * 1 * 4 * 60
    assert set(frame["pmu"]) == {4}


def test_edited_features_are_detected(tiny_dataset, tmp_path):
    tiny_dataset.save(tmp_path)
    path = tmp_path / FEATURES_FILE
    path.write_text(path.read_text().replace("c01-e0000", "c01-e9999"))
    with pytest.raises(DigestMismatch):
        Dataset.load(tmp_path)


def test_edited_config_is_detected(tiny_dataset, tmp_path):
    tiny_dataset.save(tmp_path)
    manifest = read_json(tmp_path / MANIFEST_FILE)
    manifest["config"]["noise_variance"] = 0.5
    write_json(manifest, tmp_path / MANIFEST_FILE)
    with pytest.raises(DigestMismatch):
        Dataset.load(tmp_path)


def test_unknown_schema_version(tiny_dataset, tmp_path):
    tiny_dataset.save(tmp_path)
    manifest = read_json(tmp_path / MANIFEST_FILE)
    manifest["schema_version"] = 99
    write_json(manifest, tmp_path / MANIFEST_FILE)
    with pytest.raises(ArtifactError):
        Dataset.load(tmp_path)


def test_labeled_features_helpers():
    rows = LabeledFeatures(np.arange(12.0).reshape(4, 3), [1, 2, 1, 3], ["a", "b", "c", "d"])
    assert rows.classes == [1, 2, 3]
    assert rows.of_classes([1]).ids == ["a", "c"]
    assert len(rows.concat(rows.of_classes([3]))) == 5
    empty = LabeledFeatures(np.empty(0), [])
    assert len(empty) == 0
    assert len(empty.concat(rows)) == 4
