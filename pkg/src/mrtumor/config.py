"""Pipeline configuration: one JSON document, overridable from the command line."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigInvalid, InvalidSpec
from .forest import ForestConfig
from .segment import SegConfig
from .svm import SvmConfig


@dataclass
class PipelineConfig:
    data_dir: str = "data"
    model_dir: str = "models"
    output_dir: str = "out"
    template: str | None = None  # defaults to <data_dir>/template.nii
    svm: SvmConfig = field(default_factory=SvmConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    split_ratio: float = 3.0  # train : test
    seed: int = 0
    workers: int = 1
    register: bool = True

    def validate(self) -> None:
        if not self.split_ratio > 0:
            raise ConfigInvalid(f"split_ratio must be > 0, got {self.split_ratio}")
        if self.workers < 1:
            raise ConfigInvalid(f"workers must be >= 1, got {self.workers}")
        for name in ("svm", "forest", "seg"):
            try:
                getattr(self, name).validate()
            except InvalidSpec as exc:
                raise ConfigInvalid(f"{name}: {exc}") from exc

    @property
    def template_path(self) -> Path:
        return Path(self.template) if self.template else Path(self.data_dir) / "template.nii"

    def to_dict(self) -> dict:
        return asdict(self)


_NESTED = {"svm": SvmConfig, "forest": ForestConfig, "seg": SegConfig}


def config_from_dict(doc: dict) -> PipelineConfig:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigInvalid(f"unknown config field(s): {', '.join(sorted(unknown))}")
    kwargs = dict(doc)
    for key, cls in _NESTED.items():
        if key in kwargs:
            sub = kwargs[key]
            fields = {f.name for f in dataclasses.fields(cls)}
            if not isinstance(sub, dict) or set(sub) - fields:
                raise ConfigInvalid(f"bad '{key}' section; allowed fields: {', '.join(sorted(fields))}")
            kwargs[key] = cls(**sub)
    cfg = PipelineConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read ``path`` (if given) and apply non-None keyword overrides on top."""
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigInvalid(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{p}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigInvalid(f"{p}: top level must be an object")
    cfg = config_from_dict(doc)
    changes = {k: v for k, v in overrides.items() if v is not None}
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
        cfg.validate()
    return cfg
