"""INI run configuration with typed keys and documented defaults.

Sections are ``[data]``, ``[model]``, ``[train]`` and ``[eval]``. Unknown
sections or keys are rejected; anything missing falls back to the default.
"""

from __future__ import annotations

import configparser
import io
from pathlib import Path

from .datapipe import DegradationConfig
from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .trainer import TrainConfig

DEFAULTS: dict[str, dict] = {
    "data": {
        "scale": 8,
        "max_rotation": 10.0,
        "max_shift": 0.05,
        "max_shear": 0.05,
        "blur_sigma": 0.0,
        "seed": 0,
        "heatmap_sigma": 2.0,
        "crop_left_eye": (32, 40),
        "crop_right_eye": (32, 40),
        "crop_nose": (40, 32),
        "crop_mouth": (32, 48),
    },
    "model": {
        "enc_channels": 64,
        "ft_channels": (64, 32, 16),
        "touchup_base": 16,
        "fine_base": 16,
        "hourglass_channels": 32,
        "hourglass_stacks": 2,
        "hourglass_depth": 4,
        "d_attn": 64,
        "d_value": 64,
        "sigma_tradeoff": 1.0,
        "attn_grid": 32,
        "critic_channels": (32, 64, 128, 256),
        "embedder_layers": 4,
        "embedder_width": 16,
        "embedder_seed": 1234,
        "use_component_module": True,
        "prior_mode": "touchup",
    },
    "train": {
        "lr_fine_integration": 1e-3,
        "lr_other": 1e-4,
        "batch_size": 8,
        "steps_stage1": 2000,
        "steps_stage2": 1000,
        "steps_stage3": 2000,
        "seed": 0,
        "checkpoint_every": 500,
        "alpha1": 0.01,
        "psi1": 0.01,
        "alpha2": 0.01,
        "gamma2": 0.01,
        "psi2": 0.01,
        "adam_beta1": 0.5,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "use_sym_loss": True,
        "use_id_loss": True,
        "use_coarse_d": True,
        "use_fine_d": True,
        "adv_per_element": True,
    },
    "eval": {
        "use_mean_landmarks": False,
        "bicubic_baseline": True,
        "figures": True,
    },
}

# Loss-term switches reproducing the five objective variants, weakest first.
ABLATIONS = {
    "L_G-": {"use_sym_loss": False, "use_id_loss": False, "use_coarse_d": False, "use_fine_d": False},
    "L_G_dagger": {"use_sym_loss": False, "use_id_loss": True, "use_coarse_d": False, "use_fine_d": False},
    "L_G_ddagger": {"use_sym_loss": True, "use_id_loss": True, "use_coarse_d": False, "use_fine_d": False},
    "L_G_star": {"use_sym_loss": True, "use_id_loss": True, "use_coarse_d": True, "use_fine_d": False},
    "L_G": {"use_sym_loss": True, "use_id_loss": True, "use_coarse_d": True, "use_fine_d": True},
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            sep = "x" if "x" in raw else ","
            return tuple(int(v) for v in raw.split(sep) if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


class RunConfig:
    def __init__(self, values: dict[str, dict] | None = None):
        self.values = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
        for sec, keys in (values or {}).items():
            self.update(sec, keys)

    def update(self, section: str, keys: dict):
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in keys.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            default = DEFAULTS[section][key]
            if isinstance(value, str) and not isinstance(default, str):
                value = _parse(value, default, f"{section}.{key}")
            self.values[section][key] = value
        return self

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            cfg.update(section, dict(parser.items(section)))
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}: config file not found")
        return cls.from_ini(path.read_text())

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for sec, keys in self.values.items():
            parser[sec] = {k: _format(v) for k, v in keys.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def echo(self, out_dir) -> Path:
        """Write the fully resolved config next to a command's outputs."""
        path = Path(out_dir) / "config.resolved.ini"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini())
        return path

    def __getitem__(self, section):
        return self.values[section]

    # -- typed views -------------------------------------------------------------

    def degradation(self, **overrides) -> DegradationConfig:
        d = self.values["data"]
        keys = ("scale", "max_rotation", "max_shift", "max_shear", "blur_sigma", "seed")
        return DegradationConfig(**{**{k: d[k] for k in keys}, **overrides})

    def crop_spec(self) -> dict:
        d = self.values["data"]
        spec = {c: d[f"crop_{c}"] for c in ("left_eye", "right_eye", "nose", "mouth")}
        for comp, size in spec.items():
            if len(size) != 2 or min(size) <= 0:
                raise ConfigError(f"data.crop_{comp} must be 'HxW', got {size}")
        return spec

    def model(self) -> ModelConfig:
        try:
            return ModelConfig(
                **self.values["model"],
                heatmap_sigma=self.values["data"]["heatmap_sigma"],
                crop_spec=self.crop_spec(),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train(self, stage: int) -> TrainConfig:
        t = self.values["train"]
        try:
            weights = LossWeights(**{k: t[k] for k in ("alpha1", "psi1", "alpha2", "gamma2", "psi2")})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        keys = ("lr_fine_integration", "lr_other", "batch_size", "seed", "checkpoint_every", "adam_beta1",
                "adam_beta2", "adam_eps", "use_sym_loss", "use_id_loss", "use_coarse_d", "use_fine_d",
                "adv_per_element")
        return TrainConfig(stage=stage, steps=t[f"steps_stage{stage}"], weights=weights, **{k: t[k] for k in keys})
