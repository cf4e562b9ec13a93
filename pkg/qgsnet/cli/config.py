from pathlib import Path
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..classify import TwoStageConfig
from ..data import ScenarioConfig
from ..utils.seeding import derive_seed


class RunConfig(BaseModel):
    """Settings file for every CLI command"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    two_stage: TwoStageConfig = Field(default_factory=TwoStageConfig)
    output_dir: str = "runs"
    # Top-level seed; data generation and training get their own derived seeds
    seed: int = Field(0, ge=0, lt=2**64)
    jobs: int = Field(1, ge=1)
    boost_rounds: int = Field(3, ge=1)

    def seeded(self) -> Tuple[ScenarioConfig, TwoStageConfig]:
        """Scenario and classifier configs with seeds split from the top-level seed"""
        scenario = ScenarioConfig.model_validate(
            {**self.scenario.model_dump(mode="json"), "seed": derive_seed(self.seed, "datagen")}
        )
        two_stage = TwoStageConfig.model_validate(
            {**self.two_stage.model_dump(mode="json"), "seed": derive_seed(self.seed, "training")}
        )
        return scenario, two_stage

    def with_overrides(self, seed: Optional[int] = None, trainer: Optional[str] = None,
                       jobs: Optional[int] = None) -> "RunConfig":
        data = self.model_dump(mode="json")
        if seed is not None:
            data["seed"] = seed
        if jobs is not None:
            data["jobs"] = jobs
        if trainer is not None:
            data["two_stage"]["trainer"] = trainer
        return RunConfig.model_validate(data)


def load_run_config(path: Optional[str]) -> RunConfig:
    """Parse a JSON settings file; no path gives the defaults"""
    if path is None:
        return RunConfig()
    return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


def describe_validation_error(error: ValidationError) -> str:
    """One line per failing field, dotted field path first"""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "\n".join(lines)
