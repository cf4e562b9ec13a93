import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Union

import pandas as pd

from ..exceptions import ArtifactError

SCHEMA_VERSION = 1

PathLike = Union[str, Path]


def canonical_json(data: Any) -> str:
    """Compact, key-sorted JSON used for hashing"""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest(data: Any) -> str:
    """SHA-256 of the canonical JSON encoding"""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def file_digest(path: PathLike) -> str:
    """SHA-256 of a file's bytes"""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(data: Dict[str, Any], path: PathLike) -> Path:
    """Write an artifact with stable key order and a trailing newline"""
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(data, indent=2, sort_keys=True, allow_nan=False)
    output_path.write_text(text + "\n", encoding="utf-8")
    return output_path


def read_json(path: PathLike) -> Dict[str, Any]:
    """Read an artifact and check its schema version"""
    input_path = Path(path)
    try:
        data = json.loads(input_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{input_path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ArtifactError(f"{input_path} does not hold a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ArtifactError(
            f"{input_path} has schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    return data


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """Write a CSV with a header row and no index column"""
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output_path, index=False, lineterminator="\n", encoding="utf-8")
    return output_path


def read_csv(path: PathLike) -> pd.DataFrame:
    """Read a CSV written by write_csv without losing float precision"""
    return pd.read_csv(Path(path), float_precision="round_trip", encoding="utf-8")
