import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..exceptions import ArtifactError, ContractViolation, DigestMismatch, InsufficientData
from ..utils.persistence import (
    SCHEMA_VERSION,
    PathLike,
    digest,
    file_digest,
    read_csv,
    read_json,
    write_csv,
    write_json,
)
from ..utils.seeding import make_rng
from .events import EventClass, ScenarioConfig, add_noise, generate_event
from .features import extract_features, feature_digest, to_sequences
from .streams import CHANNELS, PmuStream

logger = logging.getLogger(__name__)

FEATURES_FILE = "features.csv"
MANIFEST_FILE = "manifest.json"
STREAMS_FILE = "streams.csv"


def event_id(class_id: int, index: int) -> str:
    return f"c{class_id:02d}-e{index:04d}"


def experiment_settings(config: ScenarioConfig, event: EventClass, index: int) -> Tuple[float, Optional[float], int]:
    """Loading, load change percent and grid cycle of the index-th experiment of a class"""
    levels = config.loading_levels
    if event.kind == "load_change":
        grid = [(level, percent) for level in levels for percent in config.load_change_percents]
        loading, percent = grid[index % len(grid)]
        return loading, percent, index // len(grid)
    return levels[index % len(levels)], None, index // len(levels)


def _generate_class(
    config: ScenarioConfig, class_id: int, keep_streams: bool
) -> Tuple[List[str], np.ndarray, List[PmuStream]]:
    event = EventClass.from_id(class_id)
    ids, rows, streams = [], [], []
    for index in range(config.experiments_per_class):
        rng = make_rng(config.seed, class_id, index)
        loading, percent, cycle = experiment_settings(config, event, index)
        if cycle > 0:
            loading *= 1.0 + rng.uniform(-config.jitter, config.jitter)
        name = event_id(class_id, index)
        stream = generate_event(event, loading, rng, config, change_percent=percent, event_id=name)
        stream = add_noise(stream, config.noise_variance, rng)
        ids.append(name)
        rows.append(extract_features(stream, config.layout).values)
        if keep_streams:
            streams.append(stream)
    return ids, np.vstack(rows), streams


@dataclass
class LabeledFeatures:
    """Feature rows with their class ids and event ids"""
    features: np.ndarray
    labels: np.ndarray
    ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(1, -1) if features.size else features.reshape(0, 0)
        self.features = features
        self.labels = np.asarray(self.labels, dtype=int).ravel()
        if self.features.shape[0] != self.labels.size:
            raise ContractViolation(f"{self.features.shape[0]} feature rows but {self.labels.size} labels")
        if not self.ids:
            self.ids = [f"row-{i}" for i in range(self.labels.size)]
        if len(self.ids) != self.labels.size:
            raise ContractViolation(f"{len(self.ids)} ids for {self.labels.size} rows")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def classes(self) -> List[int]:
        return sorted(set(int(c) for c in self.labels))

    def subset(self, mask: np.ndarray) -> "LabeledFeatures":
        mask = np.asarray(mask)
        indices = np.flatnonzero(mask) if mask.dtype == bool else mask
        return LabeledFeatures(self.features[indices], self.labels[indices], [self.ids[i] for i in indices])

    def of_classes(self, classes: Sequence[int]) -> "LabeledFeatures":
        return self.subset(np.isin(self.labels, list(classes)))

    def concat(self, other: "LabeledFeatures") -> "LabeledFeatures":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return LabeledFeatures(
            np.vstack([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            self.ids + other.ids,
        )


@dataclass
class Dataset:
    """Generated events, their features and the train/evaluation split"""
    config: ScenarioConfig
    event_ids: List[str]
    labels: np.ndarray
    features: np.ndarray
    train_ids: List[str]
    eval_ids: List[str]
    streams: Optional[Dict[str, PmuStream]] = None

    def __post_init__(self):
        self._position = {name: i for i, name in enumerate(self.event_ids)}

    def __len__(self) -> int:
        return len(self.event_ids)

    @property
    def feature_digest(self) -> str:
        return feature_digest(self.config.layout, self.config.active_pmus, self.config.reporting_rate)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def _select(self, names: Sequence[str]) -> LabeledFeatures:
        rows = [self._position[name] for name in names]
        return LabeledFeatures(self.features[rows], self.labels[rows], list(names))

    def train(self) -> LabeledFeatures:
        return self._select(self.train_ids)

    def evaluation(self) -> LabeledFeatures:
        return self._select(self.eval_ids)

    def eval_batches(self, k: int) -> List[LabeledFeatures]:
        """Split the evaluation events into k disjoint batches, dealing each class round-robin"""
        if k < 1:
            raise ContractViolation(f"need at least one batch, got {k}")
        batches: List[List[str]] = [[] for _ in range(k)]
        per_class: Dict[int, int] = {}
        for name in self.eval_ids:
            label = int(self.labels[self._position[name]])
            slot = per_class.get(label, 0)
            batches[slot % k].append(name)
            per_class[label] = slot + 1
        return [self._select(names) for names in batches]

    def sequences(self, features: np.ndarray) -> np.ndarray:
        """Network inputs for feature rows of this dataset"""
        return to_sequences(features, self.config.layout, len(self.config.active_pmus))

    def save(self, directory: PathLike, raw_streams: bool = False) -> Path:
        """Write features.csv, manifest.json and optionally streams.csv"""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(self.features, columns=[f"f_{j}" for j in range(self.n_features)])
        frame.insert(0, "class", self.labels.astype(int))
        frame.insert(0, "event_id", self.event_ids)
        features_path = write_csv(frame, out / FEATURES_FILE)

        manifest = {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.model_dump(mode="json"),
            "config_digest": digest(self.config.model_dump(mode="json")),
            "feature_digest": self.feature_digest,
            "features_sha256": file_digest(features_path),
            "n_features": self.n_features,
            "split": {"train_ids": list(self.train_ids), "eval_ids": list(self.eval_ids)},
            "gain_table": self.config.gain_table,
        }

        if raw_streams:
            if not self.streams:
                raise ContractViolation("dataset was built without keeping raw streams")
            write_csv(streams_frame(self.streams[name] for name in self.event_ids), out / STREAMS_FILE)
        write_json(manifest, out / MANIFEST_FILE)
        logger.info(f"Saved {len(self)} events with {self.n_features} features to {out}")
        return out

    @property
    def content_digest(self) -> str:
        return digest({
            "config": self.config.model_dump(mode="json"),
            "event_ids": self.event_ids,
            "features": self.features.tolist(),
            "split": [self.train_ids, self.eval_ids],
        })

    @classmethod
    def load(cls, directory: PathLike) -> "Dataset":
        source = Path(directory)
        manifest = read_json(source / MANIFEST_FILE)
        try:
            config = ScenarioConfig.model_validate(manifest["config"])
            split = manifest["split"]
            train_ids, eval_ids = list(split["train_ids"]), list(split["eval_ids"])
        except KeyError as e:
            raise ArtifactError(f"manifest in {source} lacks {e}") from e

        if digest(config.model_dump(mode="json")) != manifest.get("config_digest"):
            raise DigestMismatch(f"config digest in {source / MANIFEST_FILE} does not match its config")
        features_path = source / FEATURES_FILE
        if file_digest(features_path) != manifest.get("features_sha256"):
            raise DigestMismatch(f"{features_path} changed since the manifest was written")

        frame = read_csv(features_path)
        columns = [f"f_{j}" for j in range(int(manifest["n_features"]))]
        if list(frame.columns) != ["event_id", "class", *columns]:
            raise ArtifactError(f"{features_path} has an unexpected header")
        return cls(
            config=config,
            event_ids=frame["event_id"].astype(str).tolist(),
            labels=frame["class"].to_numpy(dtype=int),
            features=frame[columns].to_numpy(dtype=float),
            train_ids=train_ids,
            eval_ids=eval_ids,
        )


def streams_frame(streams) -> pd.DataFrame:
    """Long-format table event_id, pmu, channel, sample, value"""
    frames = []
    for stream in streams:
        n_pmus, n_channels, duration = stream.data.shape
        pmu, channel, sample = np.meshgrid(
            np.asarray(stream.pmus), np.arange(n_channels), np.arange(duration), indexing="ij"
        )
        frames.append(pd.DataFrame({
            "event_id": stream.event_id,
            "pmu": pmu.ravel(),
            "channel": np.asarray(CHANNELS)[channel.ravel()],
            "sample": sample.ravel(),
            "value": stream.data.ravel(),
        }))
    return pd.concat(frames, ignore_index=True)


def split_events(config: ScenarioConfig, ids_per_class: Dict[int, List[str]]) -> Tuple[List[str], List[str]]:
    """Draw train_per_class random events of every class for training"""
    rng = make_rng(config.seed, 0)
    train, evaluation = set(), set()
    for class_id in sorted(ids_per_class):
        names = ids_per_class[class_id]
        if len(names) < config.train_per_class:
            raise InsufficientData(
                f"class {class_id} has {len(names)} events, training needs {config.train_per_class}"
            )
        order = rng.permutation(len(names))
        train.update(names[i] for i in order[: config.train_per_class])
        evaluation.update(names[i] for i in order[config.train_per_class:])
    ordered = [name for class_id in sorted(ids_per_class) for name in ids_per_class[class_id]]
    return [n for n in ordered if n in train], [n for n in ordered if n in evaluation]


def build_dataset(config: ScenarioConfig, jobs: int = 1, keep_streams: bool = False) -> Dataset:
    """Generate, featurize and split every class of the scenario"""
    if config.experiments_per_class < config.train_per_class:
        raise InsufficientData(
            f"experiments_per_class={config.experiments_per_class} is below the training quota "
            f"train_per_class={config.train_per_class}"
        )
    config.check_separable()
    class_ids = [event.id for event in EventClass.all()]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_generate_class, repeat(config), class_ids, repeat(keep_streams)))
    else:
        results = [_generate_class(config, class_id, keep_streams) for class_id in class_ids]

    ids_per_class = {class_id: ids for class_id, (ids, _, _) in zip(class_ids, results)}
    event_ids = [name for ids, _, _ in results for name in ids]
    features = np.vstack([rows for _, rows, _ in results])
    labels = np.concatenate([np.full(len(ids), class_id) for class_id, (ids, _, _) in zip(class_ids, results)])
    streams = {s.event_id: s for _, _, batch in results for s in batch} if keep_streams else None

    train_ids, eval_ids = split_events(config, ids_per_class)
    logger.info(
        f"Built {len(event_ids)} events ({len(train_ids)} train / {len(eval_ids)} eval), "
        f"{features.shape[1]} features, noise variance {config.noise_variance}"
    )
    return Dataset(
        config=config,
        event_ids=event_ids,
        labels=labels.astype(int),
        features=features,
        train_ids=train_ids,
        eval_ids=eval_ids,
        streams=streams,
    )
