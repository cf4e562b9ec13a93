import json
import logging
from functools import lru_cache
from itertools import combinations
from importlib import resources
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..exceptions import ContractViolation
from .features import FeatureLayout
from .streams import CHANNEL_INDEX, CHANNELS, MAGNITUDE_CHANNELS, PmuStream

logger = logging.getLogger(__name__)

EventKind = Literal["cap_switch", "oltc_switch", "load_change", "reconfiguration"]
EVENT_KINDS = ("cap_switch", "oltc_switch", "load_change", "reconfiguration")
N_CLASSES = 13
N_PMUS = 4

# Template timing constants, seconds
CAP_DIP_SECONDS = 0.01667
OLTC_HOLD_SECONDS = (0.030, 0.200)
RECONFIGURATION_SECONDS = 0.083


@lru_cache(maxsize=1)
def default_signatures() -> Dict[str, Any]:
    """Gain table, channel responses and PMU baselines shipped with the package"""
    text = resources.files("qgsnet.data").joinpath("default_signatures.json").read_text(encoding="utf-8")
    return json.loads(text)


class EventClass(BaseModel):
    """One of the 13 labeled event classes"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    id: int = Field(ge=1, le=N_CLASSES)
    kind: EventKind
    # None for load changes, which have a single fixed location
    location_index: Optional[int] = Field(None, ge=1, le=4)

    @classmethod
    def from_id(cls, class_id: int) -> "EventClass":
        if not 1 <= class_id <= N_CLASSES:
            raise ContractViolation(f"class id {class_id} outside 1..{N_CLASSES}")
        if class_id <= 4:
            return cls(id=class_id, kind="cap_switch", location_index=class_id)
        if class_id <= 8:
            return cls(id=class_id, kind="oltc_switch", location_index=class_id - 4)
        if class_id == 9:
            return cls(id=class_id, kind="load_change")
        return cls(id=class_id, kind="reconfiguration", location_index=class_id - 9)

    @classmethod
    def all(cls) -> List["EventClass"]:
        return [cls.from_id(c) for c in range(1, N_CLASSES + 1)]


class PmuBaseline(BaseModel):
    """Steady-state phasors of each PMU at 100% loading, angles vs. the reference PMU"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    current_pu: List[float]
    voltage_drop_pu: List[float]
    voltage_angle_deg: List[float]
    power_factor_angle_deg: List[float]

    @model_validator(mode="after")
    def _four_pmus(self) -> "PmuBaseline":
        for name, values in self.model_dump().items():
            if len(values) != N_PMUS or not np.all(np.isfinite(values)):
                raise ValueError(f"{name} needs {N_PMUS} finite values")
        if min(self.current_pu) <= 0:
            raise ValueError("baseline currents must be positive")
        return self


def _fill_defaults(data: Any) -> Any:
    if isinstance(data, dict):
        data = dict(data)
        defaults = default_signatures()
        for key in ("gain_table", "channel_response", "pmu_baseline"):
            if data.get(key) is None:
                data[key] = defaults[key]
    return data


class ScenarioConfig(BaseModel):
    """Everything that determines a synthetic dataset"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    loading_levels: List[float] = Field(default_factory=lambda: [float(x) for x in range(50, 150, 10)])
    load_change_percents: List[float] = Field(
        default_factory=lambda: [-25.0, -20.0, -15.0, -10.0, -5.0, 5.0, 10.0, 15.0, 20.0, 25.0]
    )
    experiments_per_class: int = Field(910, ge=1)
    train_per_class: int = Field(100, ge=1)
    noise_variance: float = Field(0.0, ge=0)
    active_pmus: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    reporting_rate: Literal[60, 120] = 60
    seed: int = Field(0, ge=0, lt=2**64)
    # Multiplicative loading jitter applied once the loading grid has been used up
    jitter: float = Field(0.02, ge=0, lt=1)
    load_model: Literal["constant_pq", "constant_z", "constant_i"] = "constant_pq"
    duration_s: float = Field(1.0, gt=0)
    layout: FeatureLayout = Field(default_factory=FeatureLayout)
    gain_table: List[List[float]]
    channel_response: Dict[EventKind, List[float]]
    pmu_baseline: PmuBaseline

    @model_validator(mode="before")
    @classmethod
    def _signatures(cls, data: Any) -> Any:
        return _fill_defaults(data)

    @field_validator("loading_levels")
    @classmethod
    def _positive_loading(cls, value: List[float]) -> List[float]:
        if not value or min(value) <= 0:
            raise ValueError("loading levels must be a nonempty list of positive percentages")
        return value

    @field_validator("active_pmus")
    @classmethod
    def _pmu_subset(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("active_pmus must not be empty")
        if len(set(value)) != len(value) or not set(value) <= set(range(1, N_PMUS + 1)):
            raise ValueError(f"active_pmus must be distinct PMU numbers in 1..{N_PMUS}")
        return sorted(value)

    @field_validator("gain_table")
    @classmethod
    def _gain_shape(cls, value: List[List[float]]) -> List[List[float]]:
        table = np.asarray(value, dtype=float)
        if table.shape != (N_CLASSES, N_PMUS):
            raise ValueError(f"gain_table must be {N_CLASSES}x{N_PMUS}, got {table.shape}")
        if not np.all(np.isfinite(table)):
            raise ValueError("gains must be finite")
        return value

    @field_validator("channel_response")
    @classmethod
    def _responses(cls, value: Dict[str, List[float]]) -> Dict[str, List[float]]:
        missing = set(EVENT_KINDS) - set(value)
        if missing:
            raise ValueError(f"channel_response lacks {sorted(missing)}")
        for kind, response in value.items():
            if len(response) != len(CHANNELS) or not np.all(np.isfinite(response)):
                raise ValueError(f"channel_response[{kind}] needs {len(CHANNELS)} finite values")
        return value

    @model_validator(mode="after")
    def _windows_fit(self) -> "ScenarioConfig":
        if self.layout.window > self.duration_samples:
            raise ValueError(f"feature window of {self.layout.window} samples exceeds the stream length")
        return self

    @property
    def duration_samples(self) -> int:
        return int(round(self.duration_s * self.reporting_rate))

    @property
    def gains(self) -> np.ndarray:
        return np.asarray(self.gain_table, dtype=float)

    def signature(self, event: "EventClass") -> np.ndarray:
        """Per-PMU, per-channel response amplitude of a class on the active PMUs"""
        columns = [p - 1 for p in self.active_pmus]
        return np.outer(self.gains[event.id - 1, columns], self.channel_response[event.kind])

    def check_separable(self) -> None:
        """Every pair of classes must leave a distinct trace on the active PMUs

        Classes of one kind share a template, so their signatures must differ.
        Classes of different kinds differ in template, which only shows when at least
        one of them reaches an active PMU.
        """
        for a, b in combinations(EventClass.all(), 2):
            first, second = self.signature(a), self.signature(b)
            if a.kind == b.kind:
                clash = np.allclose(first, second, rtol=0, atol=1e-12)
            else:
                clash = np.allclose(first, 0.0, atol=1e-12) and np.allclose(second, 0.0, atol=1e-12)
            if clash:
                raise ContractViolation(
                    f"classes {a.id} ({a.kind}) and {b.id} ({b.kind}) look alike on PMUs {self.active_pmus}"
                )


def _template(event: EventClass, start: int, duration: int, rate: int, rng: np.random.Generator,
              change_percent: Optional[float]) -> np.ndarray:
    """Unit-scaled perturbation shape over the stream"""
    shape = np.zeros(duration)
    if event.kind == "cap_switch":
        dip = max(1, int(round(CAP_DIP_SECONDS * rate)))
        shape[start:start + dip] = 1.0
    elif event.kind == "oltc_switch":
        hold = max(1, int(round(rng.uniform(*OLTC_HOLD_SECONDS) * rate)))
        shape[start:start + hold] = 1.0
    elif event.kind == "load_change":
        shape[start:] = change_percent / 100.0
    else:
        transition = max(1, int(round(RECONFIGURATION_SECONDS * rate)))
        ramp = np.arange(1, transition + 1) / transition
        stop = min(duration, start + transition)
        shape[start:stop] = ramp[: stop - start]
        shape[stop:] = 1.0
    return shape


def generate_event(
    event: EventClass,
    loading: float,
    rng: np.random.Generator,
    config: ScenarioConfig,
    change_percent: Optional[float] = None,
    event_id: str = "",
) -> PmuStream:
    """Noise-free phasor stream of one event at the given loading percentage"""
    if loading <= 0:
        raise ContractViolation(f"loading must be positive, got {loading}")
    rate = config.reporting_rate
    duration = config.duration_samples
    layout = config.layout
    if event.kind == "load_change" and change_percent is None:
        change_percent = float(rng.choice(config.load_change_percents))

    event_start = int(rng.integers(layout.w_pre, duration - layout.w_dur + 1))
    window = (event_start - layout.w_pre, event_start, event_start + layout.w_dur - 1)
    shape = _template(event, event_start, duration, rate, rng, change_percent)

    scale = loading / 100.0
    response = np.asarray(config.channel_response[event.kind], dtype=float)
    baseline = config.pmu_baseline
    # Current response to voltage excursions for each load implementation
    coupling = {"constant_pq": -1.0, "constant_z": 1.0, "constant_i": 0.0}[config.load_model]

    data = np.empty((len(config.active_pmus), len(CHANNELS), duration))
    for j, pmu in enumerate(config.active_pmus):
        k = pmu - 1
        gain = config.gains[event.id - 1, k] * scale
        v0 = 1.0 - baseline.voltage_drop_pu[k] * scale
        dv = gain * response[CHANNEL_INDEX["v_mag"]] * shape
        v_ang = baseline.voltage_angle_deg[k] * scale

        data[j, CHANNEL_INDEX["v_mag"]] = v0 * (1.0 + dv)
        data[j, CHANNEL_INDEX["v_ang"]] = v_ang + gain * response[CHANNEL_INDEX["v_ang"]] * shape
        data[j, CHANNEL_INDEX["i_mag"]] = (
            baseline.current_pu[k] * scale * (1.0 + gain * response[CHANNEL_INDEX["i_mag"]] * shape + coupling * dv)
        )
        data[j, CHANNEL_INDEX["i_ang"]] = (
            v_ang - baseline.power_factor_angle_deg[k] + gain * response[CHANNEL_INDEX["i_ang"]] * shape
        )

    if np.any(data[:, MAGNITUDE_CHANNELS, :] <= 0.0):
        raise ContractViolation(f"class {event.id} at {loading}% loading drives a magnitude non-positive")

    return PmuStream(
        data=data,
        pmus=tuple(config.active_pmus),
        reporting_rate=rate,
        event_window=window,
        class_id=event.id,
        event_id=event_id,
    )


def add_noise(stream: PmuStream, variance: float, rng: np.random.Generator) -> PmuStream:
    """Relative Gaussian noise: every sample x becomes x * (1 + sigma * eps)"""
    if variance < 0:
        raise ContractViolation(f"noise variance must be nonnegative, got {variance}")
    if variance == 0:
        return stream
    noise = np.sqrt(variance) * rng.standard_normal(stream.data.shape)
    data = stream.data * (1.0 + noise)
    # Keep magnitudes physical under heavy noise
    data[:, MAGNITUDE_CHANNELS, :] = np.abs(data[:, MAGNITUDE_CHANNELS, :]) + np.finfo(float).tiny
    return PmuStream(
        data=data,
        pmus=stream.pmus,
        reporting_rate=stream.reporting_rate,
        event_window=stream.event_window,
        class_id=stream.class_id,
        event_id=stream.event_id,
    )
