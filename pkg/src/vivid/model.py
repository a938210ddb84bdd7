"""The full generator/critic bundle and its architecture config."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .coarse_net import CoarseNet
from .critics import Critic
from .fine_net import FineNet, TouchupNets, build_prior
from .geometry import StitchTemplate
from .layout import DEFAULT_CROP_SPEC
from .losses import IdentityEmbedder

PRIOR_MODES = ("touchup", "none", "ground_truth")


@dataclass(frozen=True)
class ModelConfig:
    enc_channels: int = 64
    ft_channels: tuple = (64, 32, 16)
    touchup_base: int = 16
    fine_base: int = 16
    hourglass_channels: int = 32
    hourglass_stacks: int = 2
    hourglass_depth: int = 4
    d_attn: int = 64
    d_value: int = 64
    sigma_tradeoff: float = 1.0
    attn_grid: int = 32
    critic_channels: tuple = (32, 64, 128, 256)
    embedder_layers: int = 4
    embedder_width: int = 16
    embedder_seed: int = 1234
    use_component_module: bool = True
    prior_mode: str = "touchup"
    heatmap_sigma: float = 2.0
    crop_spec: dict = field(default_factory=lambda: dict(DEFAULT_CROP_SPEC))

    def __post_init__(self):
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}, got {self.prior_mode!r}")
        object.__setattr__(self, "ft_channels", tuple(self.ft_channels))
        object.__setattr__(self, "critic_channels", tuple(self.critic_channels))
        object.__setattr__(self, "crop_spec", {k: tuple(v) for k, v in self.crop_spec.items()})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ft_channels"] = list(self.ft_channels)
        d["critic_channels"] = list(self.critic_channels)
        d["crop_spec"] = {k: list(v) for k, v in self.crop_spec.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def make_embedder(self) -> IdentityEmbedder:
        return IdentityEmbedder(self.embedder_layers, self.embedder_width, self.embedder_seed)


class VividModel(nn.Module):
    """Coarse net, touch-up nets, fine net, Coarse-D and Fine-D."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.coarse = CoarseNet(cfg.enc_channels, cfg.ft_channels)
        self.touchup = TouchupNets(cfg.touchup_base, cfg.crop_spec)
        self.fine = FineNet(
            cfg.fine_base,
            cfg.hourglass_channels,
            cfg.hourglass_stacks,
            cfg.hourglass_depth,
            cfg.d_attn,
            cfg.d_value,
            cfg.sigma_tradeoff,
            cfg.attn_grid,
            cfg.use_component_module,
        )
        self.coarse_d = Critic(cfg.critic_channels, "coarse")
        self.fine_d = Critic(cfg.critic_channels, "fine")
        self.register_buffer("mean_landmarks", torch.zeros(68, 2, dtype=torch.float64))

    @property
    def heatmap_size(self) -> int:
        return 128 // 4

    def templates(self, landmarks_batch):
        return [StitchTemplate.from_landmarks(lm, (128, 128), self.cfg.crop_spec) for lm in landmarks_batch]

    def prior(self, coarse_hr, templates, hr=None):
        if self.cfg.prior_mode == "none":
            return torch.zeros_like(coarse_hr), {}
        if self.cfg.prior_mode == "ground_truth":
            if hr is None:
                raise ValueError("prior_mode='ground_truth' needs the HR target")
            return build_prior(hr, templates, lambda patch, comp: patch)[0], {}
        return build_prior(coarse_hr, templates, self.touchup)

    def forward(self, lr, landmarks_batch=None, hr=None):
        """Full pipeline. Without landmarks, components are cropped at the mean layout."""
        coarse_hr, thetas = self.coarse(lr)
        if landmarks_batch is None:
            landmarks_batch = [self.mean_landmarks.numpy()] * lr.shape[0]
        templates = self.templates(landmarks_batch)
        prior, refined = self.prior(coarse_hr, templates, hr)
        fine_hr, heatmaps = self.fine(coarse_hr, prior)
        return {
            "coarse": coarse_hr,
            "thetas": thetas,
            "prior": prior,
            "refined": refined,
            "fine": fine_hr,
            "heatmaps": heatmaps,
            "templates": templates,
        }

    def set_mean_landmarks(self, landmarks):
        self.mean_landmarks.copy_(torch.as_tensor(np.asarray(landmarks, dtype=np.float64)))
