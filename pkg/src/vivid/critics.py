"""Coarse-D and Fine-D: identical strided-conv critics with separate weights."""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import InputError

LOGIT_CLAMP = 20.0


class Critic(nn.Module):
    """Five strided conv layers ending in a single logit per image. No batch coupling."""

    def __init__(self, channels=(32, 64, 128, 256), level="coarse", size=128):
        super().__init__()
        layers, cin = [], 3
        for c in channels:
            layers += [nn.Conv2d(cin, c, 4, 2, 1), nn.LeakyReLU(0.2)]
            cin = c
        self.features = nn.Sequential(*layers)
        self.size = size
        self.head = nn.Conv2d(cin, 1, size // 2 ** len(channels))
        self.level = level

    def logits(self, img):
        if img.dim() != 4 or img.shape[1] != 3 or tuple(img.shape[-2:]) != (self.size, self.size):
            raise InputError(f"critic expects (N,3,{self.size},{self.size}) images, got {tuple(img.shape)}")
        return self.head(self.features(img)).flatten().clamp(-LOGIT_CLAMP, LOGIT_CLAMP)

    def forward(self, img):
        return torch.sigmoid(self.logits(img))


def discriminate(img, critic: Critic):
    """Probability in (0, 1) that each image is a real frontal HR face."""
    return critic(img)
