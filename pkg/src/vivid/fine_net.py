"""Fine-level hallucination network.

Touch-up U-nets refine cropped facial components, which are stitched into a
component prior. The fine-integration network encodes ``[coarse | prior]``,
predicts landmark heatmaps with a stacked hourglass and fuses them back into
the face features through a heatmap-attention integration block.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .coarse_net import ResidualBlock, conv3x3, image_logit, init_conv_weights, init_head
from .errors import InputError
from .geometry import StitchTemplate, crop_window, stitch_components
from .layout import COMPONENTS, DEFAULT_CROP_SPEC, NUM_LANDMARKS


class TouchupNet(nn.Module):
    """Two-level U-net refiner for one component; patch dims must be multiples of 4.

    The head corrects its input patch in logit space and starts near identity.
    """

    def __init__(self, base=16):
        super().__init__()
        act = nn.LeakyReLU(0.2)
        self.enc1 = nn.Sequential(conv3x3(3, base), act)
        self.enc2 = nn.Sequential(conv3x3(base, 2 * base, 2), act)
        self.enc3 = nn.Sequential(conv3x3(2 * base, 4 * base, 2), act)
        self.up2 = nn.Sequential(nn.ConvTranspose2d(4 * base, 2 * base, 4, 2, 1), act)
        self.dec2 = nn.Sequential(conv3x3(4 * base, 2 * base), act)
        self.up1 = nn.Sequential(nn.ConvTranspose2d(2 * base, base, 4, 2, 1), act)
        self.dec1 = nn.Sequential(conv3x3(2 * base, base), act)
        self.head = conv3x3(base, 3)
        init_conv_weights(self)
        init_head(self.head)

    def forward(self, x):
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise InputError(f"touch-up patches need dims divisible by 4, got {tuple(x.shape[-2:])}")
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        d2 = self.dec2(torch.cat([self.up2(e3), e2], 1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], 1))
        return torch.sigmoid(image_logit(x) + self.head(d1))


class TouchupNets(nn.ModuleDict):
    def __init__(self, base=16, crop_spec=None):
        super().__init__({c: TouchupNet(base) for c in COMPONENTS})
        self.crop_spec = dict(crop_spec or DEFAULT_CROP_SPEC)


def touchup_forward(patch, comp, nets: TouchupNets):
    if tuple(patch.shape[-2:]) != tuple(nets.crop_spec[comp]):
        raise InputError(f"{comp} patch is {tuple(patch.shape[-2:])}, expected {nets.crop_spec[comp]}")
    return nets[comp](patch)


def crop_batch(images, templates, comp):
    """Crop ``comp`` from each image of an ``(N,C,H,W)`` batch at its template window."""
    out = []
    for img, tpl in zip(images, templates):
        top, left = dict(tpl.placements)[comp]
        out.append(crop_window(img, top, left, *tpl.sizes[comp]))
    return torch.stack(out)


def build_prior(coarse_hr, templates, refine):
    """Crop components from ``coarse_hr``, refine them, stitch onto a masked template.

    ``templates`` holds one :class:`StitchTemplate` per image (or a single one
    shared by the batch). ``refine`` is a :class:`TouchupNets` or any callable
    ``(patch, comp) -> patch``. Returns ``(prior, refined_patches)``.
    """
    squeeze = coarse_hr.dim() == 3
    if squeeze:
        coarse_hr = coarse_hr.unsqueeze(0)
    if isinstance(templates, StitchTemplate):
        templates = [templates] * coarse_hr.shape[0]
    if isinstance(refine, TouchupNets):
        nets = refine
        refine = lambda patch, comp: touchup_forward(patch, comp, nets)  # noqa: E731
    present = {c for tpl in templates for c, _ in tpl.placements}
    refined = {c: refine(crop_batch(coarse_hr, templates, c), c) for c in COMPONENTS if c in present}
    priors = [
        stitch_components({c: refined[c][i] for c, _ in tpl.placements}, tpl) for i, tpl in enumerate(templates)
    ]
    prior = torch.stack(priors)
    return (prior[0] if squeeze else prior), refined


def l2_normalize(x, dim, eps=1e-8):
    return x / torch.sqrt((x * x).sum(dim=dim, keepdim=True) + eps)


class IntegrationBlock(nn.Module):
    """Heatmap attention: each face-feature position attends over all heatmap positions.

    Features are pooled to ``grid x grid`` before attention; the attended
    result is projected back to the face-feature channels, upsampled and added
    residually: ``F_E = sigma * (F_CH @ W_phi) + F_C``.
    """

    def __init__(self, c_face, c_heat=NUM_LANDMARKS, d_attn=64, d_value=64, sigma_tradeoff=1.0, grid=32):
        super().__init__()

        def init(*shape):
            return nn.Parameter(torch.randn(*shape) / np.sqrt(shape[0]))

        self.W_theta = init(c_face, d_attn)
        self.W_psi = init(c_heat, d_attn)
        self.W_zeta = init(c_heat, d_value)
        self.W_phi = nn.Parameter(torch.randn(d_value, c_face) * 0.02)
        self.sigma_tradeoff = sigma_tradeoff
        self.grid = grid

    def forward(self, F_C, F_H, return_weights=False):
        return integration_block(F_C, F_H, self, return_weights)


def integration_block(F_C, F_H, w: IntegrationBlock, return_weights=False):
    if F_C.shape[-2:] != F_H.shape[-2:]:
        raise InputError(f"spatial mismatch: F_C {tuple(F_C.shape[-2:])} vs F_H {tuple(F_H.shape[-2:])}")
    n, cc, h, wd = F_C.shape
    grid = w.grid
    pooled = grid is not None and (h, wd) != (grid, grid) and h > grid
    fc, fh = F_C, F_H
    if pooled:
        fc, fh = F.adaptive_avg_pool2d(fc, grid), F.adaptive_avg_pool2d(fh, grid)
    fc = fc.flatten(2).transpose(1, 2)  # (N, P, Cc)
    fh = fh.flatten(2).transpose(1, 2)  # (N, P, Ch)
    query = l2_normalize(fc, -1) @ w.W_theta
    key = l2_normalize(fh, -1) @ w.W_psi
    weights = torch.softmax(query @ key.transpose(1, 2), dim=-1)
    attended = weights @ (fh @ w.W_zeta)  # F_CH, (N, P, d_v)
    proj = (attended @ w.W_phi).transpose(1, 2).reshape(n, cc, *((grid, grid) if pooled else (h, wd)))
    if pooled:
        proj = F.interpolate(proj, size=(h, wd), mode="bilinear", align_corners=False)
    out = w.sigma_tradeoff * proj + F_C
    return (out, weights) if return_weights else out


def group_norm(channels):
    # per-sample statistics, so outputs never depend on the rest of the batch
    return nn.GroupNorm(min(8, channels), channels)


class NormResidualBlock(nn.Module):
    """Pre-activation residual block with group norm, used inside the hourglass."""

    def __init__(self, channels):
        super().__init__()
        self.branch = nn.Sequential(
            group_norm(channels), nn.LeakyReLU(0.2), conv3x3(channels, channels),
            group_norm(channels), nn.LeakyReLU(0.2), conv3x3(channels, channels),
        )

    def forward(self, x):
        return x + self.branch(x)


class Hourglass(nn.Module):
    def __init__(self, channels, depth):
        super().__init__()
        self.up = NormResidualBlock(channels)
        self.down = NormResidualBlock(channels)
        self.inner = Hourglass(channels, depth - 1) if depth > 1 else NormResidualBlock(channels)
        self.post = NormResidualBlock(channels)

    def forward(self, x):
        low = self.post(self.inner(self.down(F.max_pool2d(x, 2))))
        return self.up(x) + F.interpolate(low, scale_factor=2, mode="nearest")


class StackedHourglass(nn.Module):
    """Predicts 68 landmark heatmaps with intermediate outputs from every stack."""

    def __init__(self, cin, channels=32, stacks=2, depth=4, points=NUM_LANDMARKS):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(cin, channels, 1), nn.LeakyReLU(0.2))
        self.hourglasses = nn.ModuleList(Hourglass(channels, depth) for _ in range(stacks))
        self.features = nn.ModuleList(
            nn.Sequential(nn.Conv2d(channels, channels, 1), group_norm(channels), nn.LeakyReLU(0.2))
            for _ in range(stacks)
        )
        self.heads = nn.ModuleList(nn.Conv2d(channels, points, 1) for _ in range(stacks))
        self.merge_feat = nn.ModuleList(nn.Conv2d(channels, channels, 1) for _ in range(stacks - 1))
        self.merge_heat = nn.ModuleList(nn.Conv2d(points, channels, 1) for _ in range(stacks - 1))

    def forward(self, x):
        x = self.stem(x)
        outputs = []
        for i, hg in enumerate(self.hourglasses):
            feat = self.features[i](hg(x))
            heat = self.heads[i](feat)
            outputs.append(heat)
            if i < len(self.hourglasses) - 1:
                x = x + self.merge_feat[i](feat) + self.merge_heat[i](heat)
        return outputs


class FineNet(nn.Module):
    """Encoder over ``[coarse | prior]``, component-aware module, decoder with additive skips."""

    def __init__(
        self,
        base=16,
        hourglass_channels=32,
        hourglass_stacks=2,
        hourglass_depth=4,
        d_attn=64,
        d_value=64,
        sigma_tradeoff=1.0,
        attn_grid=32,
        use_component_module=True,
    ):
        super().__init__()
        act = nn.LeakyReLU(0.2)
        self.enc1 = nn.Sequential(conv3x3(6, base), act)
        self.enc2 = nn.Sequential(conv3x3(base, 2 * base, 2), act)
        self.enc3 = nn.Sequential(conv3x3(2 * base, 4 * base, 2), act, conv3x3(4 * base, 4 * base), act)
        self.use_component_module = use_component_module
        self.hourglass = StackedHourglass(4 * base, hourglass_channels, hourglass_stacks, hourglass_depth)
        self.integration = IntegrationBlock(4 * base, NUM_LANDMARKS, d_attn, d_value, sigma_tradeoff, attn_grid)
        self.up2 = nn.Sequential(nn.ConvTranspose2d(4 * base, 2 * base, 4, 2, 1), act)
        self.up1 = nn.Sequential(nn.ConvTranspose2d(2 * base, base, 4, 2, 1), act)
        self.dec1 = nn.Sequential(conv3x3(base, base), act)
        self.head = conv3x3(base, 3)
        init_conv_weights(self)
        for m in self.hourglass.modules():
            if isinstance(m, NormResidualBlock):
                # small but nonzero residual branches keep the stacked sums bounded
                m.branch[-1].weight.data.mul_(0.1)
        init_head(self.head)
        for head in self.hourglass.heads:
            # linear heatmap heads start near zero, like the targets away from landmarks
            nn.init.normal_(head.weight, std=1e-3)
            nn.init.zeros_(head.bias)

    def encode(self, coarse_hr, prior):
        e1 = self.enc1(torch.cat([coarse_hr, prior], 1))
        e2 = self.enc2(e1)
        return e1, e2, self.enc3(e2)

    def decode(self, F_E, e1, e2, coarse_hr):
        d2 = self.up2(F_E) + e2
        d1 = self.dec1(self.up1(d2) + e1)
        return torch.sigmoid(image_logit(coarse_hr) + self.head(d1))

    def forward(self, coarse_hr, prior):
        if coarse_hr.shape != prior.shape or coarse_hr.dim() != 4 or coarse_hr.shape[1] != 3:
            raise InputError(f"coarse {tuple(coarse_hr.shape)} and prior {tuple(prior.shape)} must be (N,3,H,W)")
        e1, e2, F_C = self.encode(coarse_hr, prior)
        heatmaps = []
        F_E = F_C
        if self.use_component_module:
            heatmaps = self.hourglass(F_C)
            F_H = heatmaps[-1]
            if F_H.shape[-2:] != F_C.shape[-2:]:
                F_H = F.interpolate(F_H, size=F_C.shape[-2:], mode="bilinear", align_corners=False)
            F_E = self.integration(F_C, F_H)
        return self.decode(F_E, e1, e2, coarse_hr), heatmaps

    def parameter_groups(self):
        return {
            "encoder": [*self.enc1.parameters(), *self.enc2.parameters(), *self.enc3.parameters()],
            "hourglass": list(self.hourglass.parameters()),
            "integration": list(self.integration.parameters()),
            "decoder": [*self.up2.parameters(), *self.up1.parameters(), *self.dec1.parameters(),
                        *self.head.parameters()],
        }


def fine_forward(coarse_hr, prior, net: FineNet):
    """Returns ``(fine_hr, heatmap_stacks)``; the last stack is the final heatmap prediction."""
    if tuple(coarse_hr.shape[-2:]) != (128, 128):
        raise InputError(f"fine_forward expects 128x128 inputs, got {tuple(coarse_hr.shape[-2:])}")
    return net(coarse_hr, prior)
