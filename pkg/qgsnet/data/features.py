from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..exceptions import ContractViolation
from ..utils.persistence import digest
from .streams import CHANNEL_INDEX, PmuStream

Channel = Literal["v_mag", "v_ang", "i_mag", "i_ang"]


class FeatureLayout(BaseModel):
    """Which windows and channels make up a feature vector.

    Per PMU the vector holds the raw channels over the pre-event and
    during-event windows (w_pre + w_dur samples each), followed by the
    consecutive differences of the diff channels over the same span.
    PMUs are concatenated in PMU-number order.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    w_pre: int = Field(10, ge=1)
    w_dur: int = Field(10, ge=1)
    raw_channels: List[Channel] = Field(default_factory=lambda: ["i_mag", "i_ang"])
    diff_channels: List[Channel] = Field(default_factory=lambda: ["v_mag", "v_ang", "i_mag", "i_ang"])
    # "sequence" feeds the network one time step per sample instead of one flat vector
    sequence_mode: Literal["flat", "sequence"] = "flat"

    @field_validator("raw_channels", "diff_channels")
    @classmethod
    def _unique(cls, value: List[str]) -> List[str]:
        if len(set(value)) != len(value):
            raise ValueError("channels must not repeat")
        return value

    @model_validator(mode="after")
    def _nonempty(self) -> "FeatureLayout":
        if not self.raw_channels and not self.diff_channels:
            raise ValueError("layout selects no channels")
        return self

    @property
    def window(self) -> int:
        return self.w_pre + self.w_dur

    @property
    def per_pmu_length(self) -> int:
        return len(self.raw_channels) * self.window + len(self.diff_channels) * (self.window - 1)

    def length(self, n_pmus: int) -> int:
        return n_pmus * self.per_pmu_length

    @property
    def step_width(self) -> int:
        """Inputs per time step in sequence mode, per PMU"""
        return len(self.raw_channels) + len(self.diff_channels)


def feature_digest(layout: FeatureLayout, pmus: Sequence[int], reporting_rate: int) -> str:
    """Digest identifying the meaning of every feature coordinate"""
    return digest({
        "layout": layout.model_dump(mode="json"),
        "active_pmus": sorted(int(p) for p in pmus),
        "reporting_rate": int(reporting_rate),
    })


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: FeatureLayout
    pmus: Tuple[int, ...]
    label: Optional[int] = None
    # Samples per second of the stream the windows were cut from
    reporting_rate: Optional[int] = None

    def __post_init__(self):
        expected = self.layout.length(len(self.pmus))
        if self.values.shape != (expected,):
            raise ContractViolation(f"feature vector has shape {self.values.shape}, layout needs ({expected},)")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("feature vector is not finite")

    @property
    def digest(self) -> Optional[str]:
        if self.reporting_rate is None:
            return None
        return feature_digest(self.layout, self.pmus, self.reporting_rate)


def extract_features(stream: PmuStream, layout: FeatureLayout, label: Optional[int] = None) -> FeatureVector:
    """Cut the pre/during windows around event_start and flatten them"""
    _, event_start, _ = stream.event_window
    start = event_start - layout.w_pre
    stop = event_start + layout.w_dur
    if start < 0 or stop > stream.duration:
        raise ContractViolation(
            f"window [{start}, {stop}) does not fit a stream of {stream.duration} samples"
        )

    parts = []
    for j in range(len(stream.pmus)):
        window = stream.data[j, :, start:stop]
        parts.extend(window[CHANNEL_INDEX[name]] for name in layout.raw_channels)
        parts.extend(np.diff(window[CHANNEL_INDEX[name]]) for name in layout.diff_channels)

    values = np.concatenate(parts) if parts else np.empty(0)
    return FeatureVector(
        values=values,
        layout=layout,
        pmus=tuple(stream.pmus),
        label=stream.class_id if label is None else label,
        reporting_rate=int(stream.reporting_rate),
    )


def to_sequences(features: np.ndarray, layout: FeatureLayout, n_pmus: int) -> np.ndarray:
    """Reshape flat feature rows (N, n) into network input sequences (N, T, d).

    Flat mode gives T = 1. Sequence mode gives one step per consecutive sample
    pair: step k carries the raw values at sample k + 1 and the differences
    between samples k and k + 1, for every PMU.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    n_rows, width = features.shape
    if width != layout.length(n_pmus):
        raise ContractViolation(f"feature rows have {width} columns, layout needs {layout.length(n_pmus)}")
    if layout.sequence_mode == "flat":
        return features[:, None, :]

    w = layout.window
    n_raw = len(layout.raw_channels)
    n_diff = len(layout.diff_channels)
    blocks = features.reshape(n_rows, n_pmus, layout.per_pmu_length)
    raw = blocks[:, :, : n_raw * w].reshape(n_rows, n_pmus, n_raw, w)[..., 1:]
    diff = blocks[:, :, n_raw * w:].reshape(n_rows, n_pmus, n_diff, w - 1)
    steps = np.concatenate([raw, diff], axis=2)  # (N, pmus, channels, T)
    return steps.transpose(0, 3, 1, 2).reshape(n_rows, w - 1, n_pmus * layout.step_width)
