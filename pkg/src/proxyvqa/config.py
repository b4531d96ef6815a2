"""Plain-text ``key = value`` pipeline configuration.

A file may hold ``[section]`` blocks (data, fr, train, features, head, eval,
ablate) or, for single-stage use, bare keys that belong to the stage reading
the file. Unknown sections and keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path
from typing import Optional

from proxyvqa.errors import ValidationError
from proxyvqa.trainer import TrainConfig

SECTIONS = {
    "data": dict(seed=7, contents=40, frames=8, size="96x96", domain="source", first_content=0),
    "fr": dict(tasks="ssim,ms_ssim,psnr_norm"),
    "train": {f.name: f.default for f in fields(TrainConfig)},
    "features": dict(stride=1),
    "head": dict(model="svr", ridge_lambda=1.0, svr_c="", svr_gamma="", svr_epsilon="", cv_folds=5),
    "eval": dict(protocol="standard", runs=100, k="10,20,50,100", samplings=100, regressor="ridge",
                 seed=0, zeroshot_epochs=300),
    "ablate": dict(train_contents=30, eval_contents=10, st_tasks="ssim",
                   mtl_tasks="ssim,ms_ssim,psnr_norm", runs=20),
}
SECTIONS["train"]["tasks"] = ",".join(SECTIONS["train"]["tasks"])


def _coerce(default, raw: str):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


class PipelineConfig:
    def __init__(self, values: Optional[dict] = None):
        self.values = {s: dict(d) for s, d in SECTIONS.items()}
        for sec, kv in (values or {}).items():
            self.update(sec, kv)

    def update(self, section: str, kv: dict):
        if section not in self.values:
            raise ValidationError(f"unknown config section [{section}]")
        for k, v in kv.items():
            if k not in self.values[section]:
                raise ValidationError(f"unknown key {k!r} in [{section}]")
            if v is None:
                continue
            default = SECTIONS[section][k]
            try:
                self.values[section][k] = _coerce(default, v) if isinstance(v, str) else v
            except ValueError:
                raise ValidationError(f"bad value {v!r} for [{section}] {k}") from None

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_mapping({k: str(v) for k, v in self.values["train"].items()})

    @classmethod
    def load(cls, path, default_section: str = "data") -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        text = path.read_text()
        if not any(line.strip().startswith("[") for line in text.splitlines()):
            text = f"[{default_section}]\n" + text
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ValidationError(f"{path}: {exc}") from None
        cfg = cls()
        for sec in parser.sections():
            cfg.update(sec, dict(parser.items(sec)))
        return cfg


def parse_size(text) -> tuple:
    """'96' or '128x96' -> (width, height)."""
    s = str(text).lower()
    try:
        if "x" in s:
            w, h = s.split("x", 1)
            return int(w), int(h)
        return int(s), int(s)
    except ValueError:
        raise ValidationError(f"bad frame size {text!r}; use N or WxH") from None


def parse_int_list(text) -> tuple:
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise ValidationError(f"bad integer list {text!r}") from None
