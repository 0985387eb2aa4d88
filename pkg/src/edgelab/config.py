"""Plain-text configuration: dotted `key = value` lines over typed defaults.

Unknown keys and untypable values are rejected with their line number so a
fat-fingered config fails loudly instead of training on defaults.
"""

from __future__ import annotations

from pathlib import Path

from .homography import AnnotatorConfig
from .model import LossConfig
from .pseudolabel import LabelConfig


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "seed": 7,

    "synth.count": 2000,
    "synth.height": 120,
    "synth.width": 160,
    "synth.out_dir": "data/synth",

    "annotate.data_dir": "data/real",
    "annotate.checkpoint": "",
    "annotate.n_homographies": 100,
    "annotate.rotation_max_deg": 25.0,
    "annotate.scale_min": 0.8,
    "annotate.scale_max": 1.2,
    "annotate.perspective_amp": 0.1,
    "annotate.translation_frac": 0.1,
    "annotate.blur_sigma": 1.5,
    "annotate.l0_lambda": 0.02,
    "annotate.canny_low": 0.1,
    "annotate.canny_high": 0.2,
    "annotate.dilate_radius": 1,
    "annotate.pixel_threshold": 0.005,

    "train.lr": 0.001,
    "train.epochs": 100,
    "train.batch_size": 16,
    "train.lam": 1.1,

    "train_synth.data_dir": "data/synth",
    "train_synth.out_dir": "runs/synth",
    "train_synth.resume": "",

    "train_real.data_dir": "data/real",
    "train_real.out_dir": "runs/real",
    "train_real.resume": "",
    "train_real.init_checkpoint": "",

    "infer.checkpoint": "",
    "infer.data_dir": "data/real",
    "infer.out_dir": "out/infer",
    "infer.pix_threshold": 0.005,
    "infer.obj_threshold": 0.005,

    "eval.pred_dir": "out/infer/fused",
    "eval.gt_dir": "data/real/edges",
    "eval.out_dir": "out/eval",
    "eval.tolerance": 0.0075,
    "eval.n_thresholds": 99,
}


def _convert(key: str, raw: str, where: str):
    default = _DEFAULTS[key]
    kind = type(default)
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"{where}: value {raw!r} for {key!r} is not a valid {kind.__name__}") from None


class Config:
    """Typed view over the merged defaults/file/override key space."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def annotator_config(self) -> AnnotatorConfig:
        hcfg = AnnotatorConfig(
            n_homographies=self["annotate.n_homographies"],
            rotation_max_deg=self["annotate.rotation_max_deg"],
            scale_min=self["annotate.scale_min"],
            scale_max=self["annotate.scale_max"],
            perspective_amp=self["annotate.perspective_amp"],
            translation_frac=self["annotate.translation_frac"],
            rng_seed=self["seed"],
        )
        hcfg.validate()
        return hcfg

    def label_config(self) -> LabelConfig:
        return LabelConfig(
            blur_sigma=self["annotate.blur_sigma"],
            l0_lambda=self["annotate.l0_lambda"],
            canny_low=self["annotate.canny_low"],
            canny_high=self["annotate.canny_high"],
            dilate_radius=self["annotate.dilate_radius"],
            pixel_threshold=self["annotate.pixel_threshold"],
        ).validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self["train.lam"]).validate()


def _parse_line(line: str, where: str, values: dict):
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return
    if "=" not in stripped:
        raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
    key, _, raw = stripped.partition("=")
    key = key.strip()
    raw = raw.strip()
    if key not in _DEFAULTS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    values[key] = _convert(key, raw, where)


def load_config(path=None, overrides=()) -> Config:
    """Parse a config file (optional) and apply `key=value` overrides last."""
    values = dict(_DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for lineno, line in enumerate(text.splitlines(), start=1):
            _parse_line(line, f"{path}:{lineno}", values)
    for item in overrides:
        _parse_line(item, f"--set {item}", values)
    return Config(values)
