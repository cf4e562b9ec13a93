from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..exceptions import ContractViolation

CHANNELS = ("v_mag", "v_ang", "i_mag", "i_ang")
CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNELS)}
MAGNITUDE_CHANNELS = (CHANNEL_INDEX["v_mag"], CHANNEL_INDEX["i_mag"])


@dataclass(frozen=True)
class PmuStream:
    """Phasor samples of the measuring PMUs around one labeled event.

    data has shape (n_pmus, 4, duration) with channels |v| (pu), delta_v (deg),
    |i| (pu), delta_i (deg). event_window holds (pre_start, event_start,
    event_end) sample indices; event_end is inclusive.
    """
    data: np.ndarray
    pmus: Tuple[int, ...]
    reporting_rate: int
    event_window: Tuple[int, int, int]
    class_id: Optional[int] = None
    event_id: str = ""

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[:2] != (len(self.pmus), len(CHANNELS)):
            raise ContractViolation(
                f"stream data has shape {self.data.shape}, expected ({len(self.pmus)}, {len(CHANNELS)}, duration)"
            )
        pre_start, event_start, event_end = self.event_window
        if not 0 <= pre_start < event_start <= event_end < self.duration:
            raise ContractViolation(f"invalid event window {self.event_window} for {self.duration} samples")
        if np.any(self.data[:, MAGNITUDE_CHANNELS, :] <= 0.0):
            raise ContractViolation("magnitudes must be positive")

    @property
    def duration(self) -> int:
        return self.data.shape[2]

    def channel(self, pmu: int, name: str) -> np.ndarray:
        """Samples of one channel of one PMU (by PMU number)"""
        return self.data[self.pmus.index(pmu), CHANNEL_INDEX[name]]
