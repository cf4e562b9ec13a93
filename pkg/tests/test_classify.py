import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from qgsnet.classify import (
    ConfusionMatrix,
    FeatureScaler,
    TwoStageConfig,
    TwoStageModel,
    boost,
    evaluate,
    route,
    train_two_stage,
)
from qgsnet.data import LabeledFeatures, ScenarioConfig, build_dataset, extract_features, generate_event
from qgsnet.data.events import EventClass
from qgsnet.exceptions import ContractViolation, DigestMismatch, MissingClass
from qgsnet.solver import UNCONVERGED
from qgsnet.trainers import EbpConfig, TrainConfig

DIRECT = [1, 2, 3, 4, 10, 11, 12, 13]
GROUPED = [5, 6, 7, 8, 9]


class FixedPredictor:
    def __init__(self, predictions):
        self.predictions = np.asarray(predictions)

    def predict_many(self, features):
        return self.predictions[: len(features)]


def never_called(rows):
    raise AssertionError("stage 2 should not run")


@pytest.fixture
def quick_config():
    return TwoStageConfig(
        stage1_hidden=3,
        stage2_hidden=2,
        trainer="ebp",
        ebp=EbpConfig(learning_rate=0.05, epochs=40),
    )


@pytest.fixture
def tiny_data(tiny_scenario):
    return build_dataset(tiny_scenario)


@pytest.fixture
def tiny_model(tiny_data, tiny_scenario, quick_config):
    return train_two_stage(tiny_data.train(), tiny_scenario, quick_config)


def test_direct_route():
    outputs = np.zeros((1, 9))
    outputs[0, 1] = 1.0
    assert route(outputs, DIRECT, never_called, GROUPED).tolist() == [2]


def test_two_hop_route():
    outputs = np.zeros((1, 9))
    outputs[0, 8] = 1.0
    assert route(outputs, DIRECT, lambda rows: np.eye(5)[[4]], GROUPED).tolist() == [9]


def test_ties_go_to_the_first_class():
    assert route(np.full((1, 9), 0.3), DIRECT, never_called, GROUPED).tolist() == [1]


def test_route_only_sends_grouped_rows_to_stage_two():
    outputs = np.zeros((3, 9))
    outputs[0, 8] = outputs[1, 5] = outputs[2, 8] = 1.0
    seen = []

    def stage2(rows):
        seen.append(rows.tolist())
        return np.eye(5)[[0, 2]]

    assert route(outputs, DIRECT, stage2, GROUPED).tolist() == [5, 11, 7]
    assert seen == [[0, 2]]


def test_grouped_classes_only_come_from_stage_two():
    rng = np.random.default_rng(0)
    outputs = rng.normal(size=(200, 9))
    predicted = route(outputs, DIRECT, lambda rows: rng.normal(size=(len(rows), 5)), GROUPED)
    from_group = np.isin(predicted, GROUPED)
    assert np.array_equal(from_group, np.argmax(outputs, axis=1) == 8)


def test_class_six_row_percentages():
    targets = [6] * 100
    predicted = [6] * 88 + [7] * 10 + [5] * 2
    matrix = ConfusionMatrix.from_predictions(targets, predicted)
    row = matrix.percentages()[5]
    assert row[4] == 2.0
    assert row[5] == 88.0
    assert row[6] == 10.0
    assert row.sum() == 100.0
    assert matrix.accuracy == 0.88
    assert np.all(matrix.percentages()[np.arange(13) != 5] == 0.0)


def test_perfect_predictor():
    labels = np.repeat(np.arange(1, 14), 3)
    accuracy, matrix = evaluate(FixedPredictor(labels), LabeledFeatures(np.zeros((39, 2)), labels))
    assert accuracy == 1.0
    assert np.array_equal(matrix.counts, 3 * np.eye(13, dtype=int))


def test_constant_predictor_on_balanced_set():
    labels = np.repeat(np.arange(1, 14), 4)
    accuracy, matrix = evaluate(FixedPredictor(np.full(52, 7)), LabeledFeatures(np.zeros((52, 2)), labels))
    assert accuracy == pytest.approx(1 / 13)
    assert matrix.total == 52
    assert matrix.row_totals.tolist() == [4] * 13


def test_empty_evaluation_set():
    with pytest.raises(ContractViolation, match="empty evaluation set"):
        evaluate(FixedPredictor([]), LabeledFeatures(np.empty((0, 2)), []))


def test_confusion_rejects_unknown_classes():
    with pytest.raises(ContractViolation):
        ConfusionMatrix.from_predictions([1], [0])


def test_confusion_frames():
    matrix = ConfusionMatrix.from_predictions([1, 1, 2], [1, 2, 2])
    frame = matrix.to_csv_frame()
    assert list(frame.columns[:3]) == ["kind", "target", "1"]
    assert len(frame) == 26
    percent = matrix.to_frame("percent")
    assert percent.loc["1", "2"] == 50.0
    assert ConfusionMatrix.from_dict(matrix.to_dict()).digest == matrix.digest


def test_scaler_standardizes_and_scales():
    features = np.array([[1.0, 5.0], [3.0, 5.0]])
    scaler = FeatureScaler.fit(features, input_width=4)
    assert_allclose(scaler.transform(features), [[-0.5, 0.0], [0.5, 0.0]])
    restored = FeatureScaler.from_dict(scaler.to_dict())
    assert_allclose(restored.transform(features), scaler.transform(features))


def test_config_validation():
    assert TwoStageConfig().direct_classes == DIRECT
    assert TwoStageConfig(stage2_classes=[9, 8, 7, 6]).direct_classes == [1, 2, 3, 4, 5, 10, 11, 12, 13]
    with pytest.raises(ValidationError):
        TwoStageConfig(stage2_classes=[1, 2])
    with pytest.raises(ValidationError):
        TwoStageConfig(trainer="sgd")


def test_missing_direct_class(tiny_data, tiny_scenario, quick_config):
    train = tiny_data.train()
    with pytest.raises(MissingClass) as info:
        train_two_stage(train.subset(train.labels != 3), tiny_scenario, quick_config)
    assert info.value.missing == [3]


def test_missing_grouped_class(tiny_data, tiny_scenario, quick_config):
    train = tiny_data.train()
    with pytest.raises(MissingClass, match="stage 2"):
        train_two_stage(train.subset(train.labels != 7), tiny_scenario, quick_config)


def test_two_stage_shapes(tiny_model, tiny_data):
    assert tiny_model.stage1.shape.q == 9
    assert tiny_model.stage2.shape.q == 5
    assert tiny_model.stage1.shape.n == tiny_data.n_features
    predicted = tiny_model.predict_many(tiny_data.evaluation().features)
    assert set(predicted.tolist()) <= set(range(1, 14))


def test_two_stage_training_is_deterministic(tiny_data, tiny_scenario, quick_config, tiny_model):
    again = train_two_stage(tiny_data.train(), tiny_scenario, quick_config)
    assert again.to_dict() == tiny_model.to_dict()


def test_identical_vectors_get_identical_predictions(tiny_model, tiny_data):
    row = tiny_data.evaluation().features[:1]
    assert np.all(tiny_model.predict_many(np.repeat(row, 5, axis=0)) == tiny_model.predict_many(row)[0])


def test_model_round_trip(tiny_model, tiny_data):
    restored = TwoStageModel.from_dict(tiny_model.to_dict())
    features = tiny_data.evaluation().features
    assert np.array_equal(restored.predict_many(features), tiny_model.predict_many(features))


def test_tampered_model_digest(tiny_model):
    data = tiny_model.to_dict()
    data["feature_digest"] = "0" * 64
    with pytest.raises(DigestMismatch):
        TwoStageModel.from_dict(data)


def test_predict_single_vector(tiny_model, tiny_scenario):
    stream = generate_event(EventClass.from_id(10), 100.0, np.random.default_rng(0), tiny_scenario)
    vector = extract_features(stream, tiny_scenario.layout)
    assert tiny_model.predict(vector) == tiny_model.predict_many(vector.values[None, :])[0]
    other = ScenarioConfig(active_pmus=[3, 4], layout=tiny_scenario.layout)
    stream = generate_event(EventClass.from_id(10), 100.0, np.random.default_rng(0), other)
    with pytest.raises(ContractViolation):
        tiny_model.predict(extract_features(stream, other.layout))


@pytest.mark.parametrize("rate", [120, None])
def test_predict_rejects_other_reporting_rates(tiny_model, tiny_scenario, rate):
    stream = generate_event(EventClass.from_id(10), 100.0, np.random.default_rng(0), tiny_scenario)
    vector = extract_features(stream, tiny_scenario.layout)
    assert vector.reporting_rate == tiny_scenario.reporting_rate
    with pytest.raises(ContractViolation):
        tiny_model.predict(dataclasses.replace(vector, reporting_rate=rate))


def test_two_stage_with_qgs(tiny_data, tiny_scenario, quick_qgs):
    config = TwoStageConfig(stage1_hidden=2, stage2_hidden=2, train=TrainConfig(target_minima=1), qgs=quick_qgs)
    model = train_two_stage(tiny_data.train(), tiny_scenario, config)
    assert model.stage1.provenance.method == "qgs"
    for minima in model.minima:
        assert minima is not None
        assert len(minima.items) + len(minima.candidates) == 1


def test_stage_minima_hold_only_equilibria(tiny_data, tiny_scenario):
    qgs = TwoStageConfig().qgs.model_copy(update={"max_steps": 100, "max_attempts": 3})
    config = TwoStageConfig(stage1_hidden=2, stage2_hidden=2, train=TrainConfig(target_minima=2), qgs=qgs)
    model = train_two_stage(tiny_data.train(), tiny_scenario, config)
    for stage, minima in zip((model.stage1, model.stage2), model.minima):
        assert all(item.grad_norm < qgs.grad_tol for item in minima.items)
        assert all(item.stability == UNCONVERGED for item in minima.candidates)
        assert stage.provenance.converged == minima.converged
        assert stage.provenance.minima_count == len(minima)

@pytest.fixture
def boost_data(tiny_layout):
    config = ScenarioConfig(experiments_per_class=8, train_per_class=4, active_pmus=[4], layout=tiny_layout, seed=3)
    return config, build_dataset(config)


def test_boost_needs_a_round(boost_data, quick_config, tiny_model):
    scenario, dataset = boost_data
    with pytest.raises(ContractViolation):
        boost(tiny_model, dataset.train(), dataset.eval_batches(4), scenario, quick_config, rounds=0)


def test_boost_needs_a_held_out_batch(boost_data, quick_config, tiny_model):
    scenario, dataset = boost_data
    with pytest.raises(ContractViolation):
        boost(tiny_model, dataset.train(), dataset.eval_batches(2), scenario, quick_config, rounds=2)


def test_boost_grows_the_training_set(boost_data, quick_config):
    scenario, dataset = boost_data
    model = train_two_stage(dataset.train(), scenario, quick_config)
    batches = dataset.eval_batches(4)
    result = boost(model, dataset.train(), batches, scenario, quick_config, rounds=3)
    assert result.train_sizes[0] == 52
    assert all(b >= a for a, b in zip(result.train_sizes, result.train_sizes[1:]))
    assert [b - a for a, b in zip(result.train_sizes, result.train_sizes[1:])] == list(result.misclassified)
    assert result.confusion.total == len(batches[3])
    assert result.final_accuracy == result.confusion.accuracy


@pytest.mark.slow
def test_end_to_end_accuracy():
    scenario = ScenarioConfig(experiments_per_class=150, train_per_class=100)
    dataset = build_dataset(scenario, jobs=4)
    model = train_two_stage(dataset.train(), scenario, TwoStageConfig())
    accuracy, matrix = evaluate(model, dataset.evaluation())
    assert accuracy >= 0.90
    off_diagonal = matrix.counts - np.diag(np.diag(matrix.counts))
    grouped = np.ix_(np.array(GROUPED) - 1, np.array(GROUPED) - 1)
    assert off_diagonal[grouped].sum() >= 0.5 * off_diagonal.sum()
