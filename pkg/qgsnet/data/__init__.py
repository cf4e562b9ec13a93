from .dataset import Dataset, LabeledFeatures, build_dataset, event_id, experiment_settings, streams_frame
from .events import EventClass, ScenarioConfig, add_noise, default_signatures, generate_event
from .features import FeatureLayout, FeatureVector, extract_features, feature_digest, to_sequences
from .streams import CHANNELS, PmuStream

__all__ = [
    "Dataset",
    "LabeledFeatures",
    "build_dataset",
    "event_id",
    "experiment_settings",
    "streams_frame",
    "EventClass",
    "ScenarioConfig",
    "add_noise",
    "default_signatures",
    "generate_event",
    "FeatureLayout",
    "FeatureVector",
    "extract_features",
    "feature_digest",
    "to_sequences",
    "CHANNELS",
    "PmuStream",
]
