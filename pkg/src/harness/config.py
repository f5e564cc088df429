"""Experiment configuration files.

Configs are ``.env``-format files: ``SECTION__FIELD=value`` lines read with
python-dotenv and validated into one pydantic model per section. Sequence
fields take comma-separated values.
"""
import hashlib
import json
import typing
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.expert.collector import CollectionSetup
from src.expert.scripted import ExpertConfig
from src.policy.config import REPLAY, VARIANTS, PolicyConfig, variant_config
from src.sim.pipeline import BalanceConfig, IkConfig, RetargetConfig
from src.sim.scene import SceneConfig, TaskKind
from src.sim.tactile import build_layout
from src.utils.errors import InvalidConfig

# Fields that the variant decides; they cannot be set from the POLICY section.
VARIANT_FIELDS = {"variant", "use_vision", "use_tactile", "gcn_hidden"}


def reorient_grid() -> List[float]:
    return [round(-0.2 + 0.02 * i, 2) for i in range(21)]


class ExperimentSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "experiment"
    task: TaskKind = TaskKind.REORIENT
    variant: str = "TACT"
    seed: int = 0
    out_dir: str = "results"

    @model_validator(mode="after")
    def _check_variant(self):
        if self.variant not in VARIANTS and self.variant != REPLAY:
            raise InvalidConfig(f"unknown policy variant '{self.variant}'")
        return self


class DatasetSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    episodes_per_condition: int = 0
    workers: int = 0


class TrainingSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = 5000
    batch_size: int = 8
    fraction: float = 1.0
    log_every: int = 100
    clip_norm: float = 10.0

    @model_validator(mode="after")
    def _check(self):
        if not 0.0 < self.fraction <= 1.0:
            raise InvalidConfig("training fraction must be in (0, 1]")
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidConfig("steps and batch size must be positive")
        return self


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    positions: Tuple[float, ...] = Field(default_factory=lambda: tuple(reorient_grid()))
    sizes: Tuple[str, ...] = ("small", "medium", "large", "unseen")
    trials_per_condition: int = 3
    size_scales: Tuple[float, ...] = (1.0,)
    textures: Tuple[str, ...] = ("plain",)
    record_traces: bool = True
    workers: int = 0


class AblationSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    variants: Tuple[str, ...] = ("TACT", "TACT-w/o-vision", "TACT-w/o-tactile")
    seeds: Tuple[int, ...] = (0, 1, 2)
    fractions: Tuple[float, ...] = ()
    admittance: Tuple[bool, ...] = ()


SECTIONS = {
    "EXPERIMENT": ("experiment", ExperimentSection),
    "DATASET": ("dataset", DatasetSection),
    "TRAINING": ("training", TrainingSection),
    "EVAL": ("evaluation", EvalSection),
    "ABLATION": ("ablation", AblationSection),
    "POLICY": ("policy", PolicyConfig),
    "LIPM": ("lipm", BalanceConfig),
    "RETARGET": ("retarget", RetargetConfig),
    "IK": ("ik", IkConfig),
    "SCENE": ("scene", SceneConfig),
    "EXPERT": ("expert", ExpertConfig),
}


def _canonical_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentSection = ExperimentSection()
    dataset: DatasetSection = DatasetSection()
    training: TrainingSection = TrainingSection()
    evaluation: EvalSection = EvalSection()
    ablation: AblationSection = AblationSection()
    policy: PolicyConfig = PolicyConfig()
    lipm: BalanceConfig = BalanceConfig()
    retarget: RetargetConfig = RetargetConfig()
    ik: IkConfig = IkConfig()
    scene: SceneConfig = SceneConfig()
    expert: ExpertConfig = ExpertConfig()

    @property
    def task(self) -> TaskKind:
        return self.experiment.task

    def dataset_hash(self) -> str:
        """Hash of everything that shapes a demonstration."""
        return _canonical_hash({
            "task": self.task.value,
            "scene": self.scene.model_dump(mode="json"),
            "retarget": self.retarget.model_dump(mode="json"),
            "lipm": self.lipm.model_dump(mode="json"),
            "ik": self.ik.model_dump(mode="json"),
            "expert": self.expert.model_dump(mode="json"),
        })

    def collection_setup(self) -> CollectionSetup:
        return CollectionSetup(scene=self.scene, balance=self.lipm, retarget=self.retarget, ik=self.ik,
                               expert=self.expert, config_hash=self.dataset_hash())

    def policy_config(self, variant: Optional[str] = None) -> PolicyConfig:
        """Policy architecture of ``variant`` sized to this scene.

        Raises:
            InvalidConfig: For the Replay baseline, which has no network
        """
        variant = variant or self.experiment.variant
        if variant == REPLAY:
            raise InvalidConfig("the Replay baseline has no policy network")
        overrides = self.policy.model_dump(exclude=VARIANT_FIELDS)
        overrides.update(n_cells=build_layout().n_cells, image_width=self.scene.image_width,
                         image_height=self.scene.image_height)
        return variant_config(variant, **overrides)

    def with_updates(self, **sections) -> "ExperimentConfig":
        """Copy with per-section field updates, e.g. ``experiment={"variant": "TACT"}``."""
        raw = self.model_dump(mode="json")
        for section, fields in sections.items():
            raw[section].update(fields)
        return ExperimentConfig.model_validate(raw)


def _is_sequence(annotation) -> bool:
    origin = typing.get_origin(annotation)
    return origin in (tuple, list, Tuple, List, Sequence) or annotation in (tuple, list)


def _coerce(model: type, field: str, raw: str):
    info = model.model_fields.get(field)
    if info is None:
        raise InvalidConfig(f"unknown config field '{field}' for {model.__name__}")
    if _is_sequence(info.annotation):
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def parse_entries(entries: Dict[str, Optional[str]]) -> Dict[str, dict]:
    """Group ``SECTION__FIELD`` entries into per-section dictionaries."""
    nested: Dict[str, dict] = {}
    for key, value in entries.items():
        if value is None:
            continue
        section, sep, field = key.partition("__")
        if not sep or section.upper() not in SECTIONS:
            raise InvalidConfig(f"config key '{key}' is not SECTION__FIELD with a known section")
        name, model = SECTIONS[section.upper()]
        field = field.lower()
        nested.setdefault(name, {})[field] = _coerce(model, field, value)
    return nested


def build_config(entries: Dict[str, Optional[str]]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(parse_entries(entries))
    except ValidationError as e:
        raise InvalidConfig(f"invalid experiment config: {e}")


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read a config file and apply ``KEY=VALUE`` overrides on top.

    Raises:
        InvalidConfig: If the file is missing or any entry is invalid
    """
    entries: Dict[str, Optional[str]] = {}
    if path is not None:
        if not Path(path).exists():
            raise InvalidConfig(f"config file {path} does not exist")
        entries.update(dotenv_values(path))
    for override in overrides:
        key, sep, value = override.partition("=")
        if not sep:
            raise InvalidConfig(f"override '{override}' is not KEY=VALUE")
        entries[key.strip()] = value.strip()
    return build_config(entries)


def render_config(config: ExperimentConfig) -> str:
    """The config as a complete ``SECTION__FIELD=value`` file."""
    lines = []
    dumped = config.model_dump(mode="json")
    for section, (name, _) in SECTIONS.items():
        lines.append(f"# {section}")
        for field, value in dumped[name].items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{section}__{field.upper()}={value}")
        lines.append("")
    return "\n".join(lines)
