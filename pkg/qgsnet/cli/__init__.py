from .config import RunConfig, describe_validation_error, load_run_config
from .main import build_parser, main

__all__ = ["RunConfig", "describe_validation_error", "load_run_config", "build_parser", "main"]
