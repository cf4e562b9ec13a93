import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from ..data import ScenarioConfig, build_dataset
from ..exceptions import ContractViolation, QgsNetError
from ..utils.persistence import SCHEMA_VERSION, PathLike, digest, write_csv, write_json
from .evaluation import ConfusionMatrix, evaluate
from .two_stage import TwoStageConfig, boost, train_two_stage

logger = logging.getLogger(__name__)

AXES = ("reporting_rate", "noise", "pmu_count", "boosting", "trainer")

# Accuracies reported for the simulated 123-bus feeder, attached as annotations
REFERENCE_VALUES: Dict[str, Dict[str, float]] = {
    "reporting_rate": {"60": 0.96, "120": 0.9666},
    "noise": {"0.005": 0.9533, "0.01": 0.9311, "0.02": 0.9022, "0.05": 0.8377},
    "pmu_count": {"1": 0.6466, "2": 0.8311, "3": 0.9222, "4": 0.96},
    "boosting": {"normal": 0.96, "boosting": 0.9644},
    "trainer": {"qgs": 0.8377, "ga": 0.7733, "ebp": 0.7044},
}

TRAINER_COMPARISON_NOISE = 0.05
BOOST_ROUNDS = 3


def axis_points(axis: str) -> List[str]:
    """Settings swept along an axis, in report order"""
    points = {
        "reporting_rate": ["60", "120"],
        "noise": ["0.005", "0.01", "0.02", "0.05"],
        "pmu_count": ["1", "2", "3", "4"],
        "boosting": ["normal", "boosting"],
        "trainer": ["qgs", "ga", "ebp"],
    }
    if axis not in points:
        raise ContractViolation(f"unknown sweep axis {axis!r}; valid axes: {', '.join(AXES)}")
    return points[axis]


def point_configs(
    axis: str, setting: str, scenario: ScenarioConfig, config: TwoStageConfig
) -> Tuple[ScenarioConfig, TwoStageConfig]:
    """Scenario and classifier config of one sweep point"""
    if axis == "reporting_rate":
        rate = int(setting)
        scenario = scenario.model_copy(update={"reporting_rate": rate})
        # Hidden sizes used for the reporting-rate study
        config = config.model_copy(update={"stage1_hidden": 10, "stage2_hidden": 4})
    elif axis == "noise":
        scenario = scenario.model_copy(update={"noise_variance": float(setting)})
    elif axis == "pmu_count":
        # PMUs are removed starting from PMU 1, so every set keeps PMU 4
        scenario = scenario.model_copy(update={"active_pmus": list(range(5 - int(setting), 5))})
    elif axis == "trainer":
        scenario = scenario.model_copy(update={"noise_variance": TRAINER_COMPARISON_NOISE})
        config = config.model_copy(update={"trainer": setting})
    elif axis != "boosting":
        axis_points(axis)
    # model_copy skips validation; round-trip so derived checks run
    return (
        ScenarioConfig.model_validate(scenario.model_dump(mode="json")),
        TwoStageConfig.model_validate(config.model_dump(mode="json")),
    )


@dataclass
class SweepPoint:
    setting: str
    accuracy: Optional[float]
    confusion: Optional[ConfusionMatrix]
    runtime_s: float
    n_features: Optional[int] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def confusion_digest(self) -> Optional[str]:
        return self.confusion.digest if self.confusion is not None else None


def run_point(axis: str, setting: str, scenario: ScenarioConfig, config: TwoStageConfig) -> SweepPoint:
    """Regenerate data, train and evaluate one point; failures are recorded, not raised"""
    started = time.perf_counter()
    n_features = None
    try:
        scenario, config = point_configs(axis, setting, scenario, config)
        dataset = build_dataset(scenario)
        n_features = dataset.n_features
        train = dataset.train()
        model = train_two_stage(train, scenario, config)
        if axis == "boosting":
            batches = dataset.eval_batches(BOOST_ROUNDS + 1)
            if setting == "boosting":
                result = boost(model, train, batches, scenario, config, rounds=BOOST_ROUNDS)
                accuracy, matrix = result.final_accuracy, result.confusion
            else:
                accuracy, matrix = evaluate(model, batches[BOOST_ROUNDS])
        else:
            accuracy, matrix = evaluate(model, dataset.evaluation())
    except (QgsNetError, ValueError) as e:
        logger.warning(f"sweep point {axis}={setting} failed: {e}")
        return SweepPoint(setting, None, None, time.perf_counter() - started, n_features, f"{type(e).__name__}: {e}")
    runtime = time.perf_counter() - started
    logger.info(f"sweep point {axis}={setting}: accuracy {accuracy:.4f} in {runtime:.1f}s")
    return SweepPoint(setting, accuracy, matrix, runtime, n_features)


@dataclass
class SweepReport:
    axis: str
    points: List[SweepPoint]
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.points:
            raise ContractViolation("a sweep report needs at least one point")

    @property
    def succeeded(self) -> List[SweepPoint]:
        return [point for point in self.points if point.ok]

    def to_frame(self) -> pd.DataFrame:
        references = REFERENCE_VALUES.get(self.axis, {})
        return pd.DataFrame({
            "setting": [p.setting for p in self.points],
            "accuracy": [p.accuracy for p in self.points],
            "runtime_s": [round(p.runtime_s, 3) for p in self.points],
            "n_features": [p.n_features for p in self.points],
            "confusion_digest": [p.confusion_digest for p in self.points],
            "reference_accuracy": [references.get(p.setting) for p in self.points],
            "error": [p.error for p in self.points],
        })

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "axis": self.axis,
            "provenance": self.provenance,
            "reference_values": REFERENCE_VALUES.get(self.axis, {}),
            "points": [
                {
                    "setting": p.setting,
                    "accuracy": p.accuracy,
                    "runtime_s": p.runtime_s,
                    "n_features": p.n_features,
                    "error": p.error,
                    "confusion": p.confusion.to_dict() if p.confusion is not None else None,
                    "confusion_digest": p.confusion_digest,
                }
                for p in self.points
            ],
        }

    def save(self, directory: PathLike) -> Tuple[Path, Path]:
        out = Path(directory)
        return (
            write_csv(self.to_frame(), out / f"sweep_{self.axis}.csv"),
            write_json(self.to_dict(), out / f"sweep_{self.axis}.json"),
        )


def sweep(
    axis: str,
    scenario: ScenarioConfig,
    config: TwoStageConfig,
    trainer: Optional[str] = None,
    jobs: int = 1,
) -> SweepReport:
    """Regenerate and retrain at every point of an axis"""
    settings = axis_points(axis)
    if trainer is not None and axis != "trainer":
        config = TwoStageConfig.model_validate({**config.model_dump(mode="json"), "trainer": trainer})
    logger.info(f"Sweeping {axis} over {settings} with {jobs} job(s)")

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(run_point, repeat(axis), settings, repeat(scenario), repeat(config)))
    else:
        points = [run_point(axis, setting, scenario, config) for setting in settings]

    return SweepReport(
        axis=axis,
        points=points,
        provenance={
            "scenario_digest": digest(scenario.model_dump(mode="json")),
            "config_digest": digest(config.model_dump(mode="json")),
            "trainer": config.trainer if axis != "trainer" else "per point",
            "seed": scenario.seed,
        },
    )
