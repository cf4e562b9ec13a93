import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from qgsnet.data import CHANNELS, EventClass, PmuStream, ScenarioConfig, add_noise, generate_event
from qgsnet.data.events import default_signatures
from qgsnet.exceptions import ContractViolation


def event_stream(class_id, rate=60, seed=0, **kwargs):
    config = ScenarioConfig(reporting_rate=rate)
    return generate_event(EventClass.from_id(class_id), 100.0, np.random.default_rng(seed), config, **kwargs)


def changed_samples(values):
    return np.flatnonzero(np.abs(values - values[0]) > 1e-12)


@pytest.mark.parametrize(
    "class_id, kind, location",
    [(1, "cap_switch", 1), (4, "cap_switch", 4), (5, "oltc_switch", 1), (8, "oltc_switch", 4),
     (9, "load_change", None), (10, "reconfiguration", 1), (13, "reconfiguration", 4)],
)
def test_event_class_mapping(class_id, kind, location):
    event = EventClass.from_id(class_id)
    assert (event.kind, event.location_index) == (kind, location)


@pytest.mark.parametrize("class_id", [0, 14])
def test_unknown_class_id(class_id):
    with pytest.raises(ContractViolation):
        EventClass.from_id(class_id)


def test_all_classes_in_order():
    assert [event.id for event in EventClass.all()] == list(range(1, 14))


def test_capacitor_dip_lasts_one_sample_at_60_hz():
    stream = event_stream(2)
    start = stream.event_window[1]
    for pmu in stream.pmus:
        assert changed_samples(stream.channel(pmu, "v_mag")).tolist() == [start]


def test_reconfiguration_transition_takes_ten_samples_at_120_hz():
    stream = event_stream(11, rate=120)
    start = stream.event_window[1]
    current = stream.channel(1, "i_mag")
    steps = np.flatnonzero(np.abs(np.diff(current)) > 1e-12)
    assert steps.tolist() == list(range(start - 1, start + 9))
    assert current[-1] == pytest.approx(current[start + 9])


def test_oltc_hold_is_one_contiguous_block():
    stream = event_stream(6, seed=3)
    start = stream.event_window[1]
    changed = changed_samples(stream.channel(2, "v_mag"))
    assert changed[0] == start
    assert np.all(np.diff(changed) == 1)
    assert 2 <= changed.size <= 12


def test_zero_load_change_is_flat():
    stream = event_stream(9, change_percent=0.0)
    for name in CHANNELS:
        for pmu in stream.pmus:
            assert changed_samples(stream.channel(pmu, name)).size == 0


def test_load_change_shifts_level_after_start():
    stream = event_stream(9, change_percent=20.0)
    start = stream.event_window[1]
    current = stream.channel(3, "i_mag")
    assert changed_samples(current)[0] == start
    assert current[-1] > current[0]


def test_event_window_fits_stream():
    config = ScenarioConfig()
    for seed in range(20):
        stream = generate_event(EventClass.from_id(7), 80.0, np.random.default_rng(seed), config)
        pre_start, start, end = stream.event_window
        assert start - pre_start == config.layout.w_pre
        assert end - start + 1 == config.layout.w_dur
        assert end < stream.duration == 60


def test_loading_scales_the_baseline_current():
    config = ScenarioConfig()
    event = EventClass.from_id(1)
    light = generate_event(event, 50.0, np.random.default_rng(0), config)
    heavy = generate_event(event, 100.0, np.random.default_rng(0), config)
    assert heavy.channel(1, "i_mag")[0] == pytest.approx(2.0 * light.channel(1, "i_mag")[0])


def test_generation_is_reproducible():
    assert_allclose(event_stream(12, seed=5).data, event_stream(12, seed=5).data)


def test_non_positive_loading_is_rejected():
    with pytest.raises(ContractViolation):
        generate_event(EventClass.from_id(1), 0.0, np.random.default_rng(0), ScenarioConfig())


def test_only_active_pmus_are_measured():
    config = ScenarioConfig(active_pmus=[3, 1])
    stream = generate_event(EventClass.from_id(3), 100.0, np.random.default_rng(0), config)
    assert stream.pmus == (1, 3)
    assert stream.data.shape == (2, 4, 60)


def constant_stream(duration=25_000):
    return PmuStream(data=np.ones((1, 4, duration)), pmus=(1,), reporting_rate=60, event_window=(0, 10, 19))


def test_noise_has_the_requested_relative_variance():
    stream = constant_stream()
    noisy = add_noise(stream, 0.01, np.random.default_rng(0))
    relative = noisy.data / stream.data - 1.0
    assert relative.size == 100_000
    assert np.var(relative) == pytest.approx(0.01, rel=0.05)


def test_zero_noise_is_the_identity():
    stream = constant_stream(100)
    assert add_noise(stream, 0.0, np.random.default_rng(0)) is stream


def test_noise_keeps_magnitudes_positive():
    noisy = add_noise(constant_stream(1000), 4.0, np.random.default_rng(1))
    assert np.all(noisy.data[:, [0, 2], :] > 0.0)


def test_negative_noise_is_rejected():
    with pytest.raises(ContractViolation):
        add_noise(constant_stream(100), -0.1, np.random.default_rng(0))


def test_stream_validates_its_window():
    with pytest.raises(ContractViolation):
        PmuStream(data=np.ones((1, 4, 10)), pmus=(1,), reporting_rate=60, event_window=(0, 5, 10))


def test_stream_rejects_non_positive_magnitude():
    data = np.ones((1, 4, 10))
    data[0, 2, 3] = 0.0
    with pytest.raises(ContractViolation):
        PmuStream(data=data, pmus=(1,), reporting_rate=60, event_window=(0, 5, 6))


def test_scenario_defaults_come_from_shipped_signatures():
    config = ScenarioConfig()
    assert config.gain_table == default_signatures()["gain_table"]
    assert config.gains.shape == (13, 4)
    assert config.duration_samples == 60
    assert ScenarioConfig(reporting_rate=120).duration_samples == 120


@pytest.mark.parametrize(
    "overrides",
    [
        {"noise_variance": -0.01},
        {"active_pmus": []},
        {"active_pmus": [1, 1]},
        {"active_pmus": [5]},
        {"reporting_rate": 30},
        {"loading_levels": []},
        {"gain_table": [[1.0, 1.0, 1.0, 1.0]]},
        {"layout": {"w_pre": 40, "w_dur": 40}},
        {"unknown": 1},
    ],
)
def test_invalid_scenarios(overrides):
    with pytest.raises(ValidationError):
        ScenarioConfig(**overrides)


def test_indistinguishable_classes_are_rejected():
    table = [list(row) for row in default_signatures()["gain_table"]]
    table[1][3] = table[0][3]
    ScenarioConfig(gain_table=table, active_pmus=[1, 2]).check_separable()
    with pytest.raises(ContractViolation):
        ScenarioConfig(gain_table=table, active_pmus=[4]).check_separable()


def test_classes_of_different_kinds_must_reach_an_active_pmu():
    table = [list(row) for row in default_signatures()["gain_table"]]
    table[0][3] = 0.0
    table[8][3] = 0.0
    ScenarioConfig(gain_table=table, active_pmus=[1, 2]).check_separable()
    ScenarioConfig(gain_table=table, active_pmus=[3, 4]).check_separable()
    with pytest.raises(ContractViolation, match="classes 1 .* and 9"):
        ScenarioConfig(gain_table=table, active_pmus=[4]).check_separable()


def test_one_silent_class_is_still_separable():
    table = [list(row) for row in default_signatures()["gain_table"]]
    table[8][3] = 0.0
    ScenarioConfig(gain_table=table, active_pmus=[4]).check_separable()


@pytest.mark.parametrize("pmus", [[1], [2], [3], [4], [1, 2], [3, 4], [1, 2, 3, 4]])
def test_shipped_gains_separate_every_subset(pmus):
    ScenarioConfig(active_pmus=pmus).check_separable()
