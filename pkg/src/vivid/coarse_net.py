"""Coarse-level hallucination network: 16x16 unaligned LR -> 128x128 frontal face."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InputError
from .geometry import IDENTITY_THETA, affine_grid_sample, compose_thetas


def conv3x3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride, 1)


def init_conv_weights(module: nn.Module, slope: float = 0.2):
    """He-normal init for every linear and (transposed) conv layer, zero biases.

    A stride-2, 4x4 transposed conv feeds each output pixel from ``4 * cin``
    taps, so its fan-in is taken as that rather than PyTorch's default.
    """
    gain = (2.0 / (1 + slope**2)) ** 0.5
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, gain / (m.in_channels * m.kernel_size[0] * m.kernel_size[1]) ** 0.5)
        elif isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, 0.0, gain / m.in_features**0.5)
        elif isinstance(m, nn.ConvTranspose2d):
            taps = m.in_channels * (m.kernel_size[0] // m.stride[0]) * (m.kernel_size[1] // m.stride[1])
            nn.init.normal_(m.weight, 0.0, gain / taps**0.5)
        else:
            continue
        if m.bias is not None:
            nn.init.zeros_(m.bias)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)
        self.act = nn.LeakyReLU(0.2)
        self.zero_init()

    def zero_init(self):
        """Zero the residual branch so the block starts as the identity."""
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class Localizer(nn.Module):
    """Predicts a 2x3 affine per sample; initialized to the identity transform."""

    def __init__(self, channels, hidden=64, pooled=4, width=16):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(channels, width, 3, 1, 1),
            nn.LeakyReLU(0.2),
            nn.AdaptiveAvgPool2d(pooled),
        )
        self.fc = nn.Sequential(nn.Linear(width * pooled * pooled, hidden), nn.LeakyReLU(0.2), nn.Linear(hidden, 6))
        self.reset_identity()

    def reset_identity(self):
        """Zero the output layer and set its bias to the identity theta."""
        nn.init.zeros_(self.fc[2].weight)
        with torch.no_grad():
            self.fc[2].bias.copy_(torch.tensor(IDENTITY_THETA).flatten())

    def forward(self, x):
        return self.fc(self.features(x).flatten(1)).view(-1, 2, 3)


class FTModule(nn.Module):
    """Feature transform: STN alignment, residual refinement, 2x deconvolution."""

    def __init__(self, cin, cout):
        super().__init__()
        self.localizer = Localizer(cin)
        self.residual = ResidualBlock(cin)
        self.upsample = nn.Sequential(nn.ConvTranspose2d(cin, cout, 4, 2, 1), nn.LeakyReLU(0.2))

    def forward(self, feat):
        if feat.dim() != 4 or min(feat.shape[-2:]) < 2:
            raise InputError(f"FT module needs (N,C,H,W) features with H,W >= 2, got {tuple(feat.shape)}")
        theta = self.localizer(feat)
        aligned = affine_grid_sample(feat, theta)
        return self.upsample(self.residual(aligned)), theta


def ft_module(feat, module: FTModule):
    return module(feat)[0]


SKIP_EPS = 1e-3


def image_logit(img):
    """Logit of an image clamped away from 0 and 1; the base that output heads correct."""
    return torch.logit(img.clamp(SKIP_EPS, 1 - SKIP_EPS))


def init_head(conv: nn.Conv2d, std: float = 1e-3):
    nn.init.normal_(conv.weight, std=std)
    nn.init.zeros_(conv.bias)


class CoarseNet(nn.Module):
    """Encoder, three FT modules and a head that corrects an aligned bicubic upsample.

    The bicubic upsample of the input is warped by the composition of the three
    FT-module thetas (the same alignment the features received) and the head
    adds a logit-space correction. At initialization the thetas are identity
    and the head is near zero, so the net starts as a plain upsampler.
    """

    def __init__(self, enc_channels=64, ft_channels=(64, 32, 16)):
        super().__init__()
        self.encoder = nn.Sequential(
            conv3x3(3, enc_channels), nn.LeakyReLU(0.2), conv3x3(enc_channels, enc_channels), nn.LeakyReLU(0.2)
        )
        chans = (enc_channels, *ft_channels)
        self.ft_modules = nn.ModuleList(FTModule(a, b) for a, b in zip(chans[:-1], chans[1:]))
        self.head = conv3x3(chans[-1], 3)
        init_conv_weights(self)
        for ft in self.ft_modules:
            ft.residual.zero_init()
            ft.localizer.reset_identity()
        init_head(self.head)

    def forward(self, lr):
        if lr.dim() != 4 or lr.shape[1] != 3:
            raise InputError(f"coarse net expects (N,3,H,W) input, got {tuple(lr.shape)}")
        feat = self.encoder(lr)
        thetas = []
        for ft in self.ft_modules:
            feat, theta = ft(feat)
            thetas.append(theta)
        total = thetas[0]
        for theta in thetas[1:]:
            total = compose_thetas(total, theta)
        base = F.interpolate(lr, size=feat.shape[-2:], mode="bicubic", align_corners=False)
        base = affine_grid_sample(base, total, padding="border")
        return torch.sigmoid(image_logit(base) + self.head(feat)), thetas


def coarse_forward(lr, net: CoarseNet):
    """``lr`` is ``(N,3,16,16)``; returns the ``(N,3,128,128)`` coarse face and the 3 thetas."""
    if tuple(lr.shape[-2:]) != (16, 16):
        raise InputError(f"coarse_forward expects 16x16 input, got {tuple(lr.shape[-2:])}")
    return net(lr)
