"""Differentiable image-geometry kernels.

Tensors use the ``(..., C, H, W)`` layout. Normalized coordinates follow the
align-corners convention: -1 is the centre of the first pixel and +1 the
centre of the last one. Everything outside the source image reads as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InputError
from .layout import COMPONENTS, DEFAULT_CROP_SPEC, component_window

IDENTITY_THETA = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))


def identity_theta(batch: int | None = None, dtype=torch.float32) -> torch.Tensor:
    theta = torch.tensor(IDENTITY_THETA, dtype=dtype)
    return theta if batch is None else theta.expand(batch, 2, 3).clone()


def _pixel_affine(theta: torch.Tensor, in_hw, out_hw):
    """Rewrite a normalized-coordinate affine as one acting on pixel indices.

    Returns coefficient tensors (ax, bx, cx, ay, by, cy) with
    ``x_in = ax * x_out + bx * y_out + cx`` (and likewise for rows). Integer
    valued thetas give integer coefficients, so flips land exactly on pixels.
    """
    hi, wi = in_hw
    ho, wo = out_hw
    sxi, syi = (wi - 1) / 2, (hi - 1) / 2
    sxo = 2 / (wo - 1) if wo > 1 else 0.0
    syo = 2 / (ho - 1) if ho > 1 else 0.0
    t = theta
    ax = t[:, 0, 0] * (sxi * sxo)
    bx = t[:, 0, 1] * (sxi * syo)
    cx = sxi * (t[:, 0, 2] - t[:, 0, 0] - t[:, 0, 1] + 1)
    ay = t[:, 1, 0] * (syi * sxo)
    by = t[:, 1, 1] * (syi * syo)
    cy = syi * (t[:, 1, 2] - t[:, 1, 0] - t[:, 1, 1] + 1)
    return ax, bx, cx, ay, by, cy


def affine_grid_sample(x: torch.Tensor, theta: torch.Tensor, out_size=None, padding: str = "zeros") -> torch.Tensor:
    """Bilinearly resample ``x`` at ``theta``-mapped coordinates.

    ``x`` is ``(C, H, W)`` or ``(N, C, H, W)``; ``theta`` is ``(2, 3)`` or
    ``(N, 2, 3)`` and maps output coordinates to input coordinates.
    Differentiable in both ``x`` and ``theta``. ``padding="border"`` clamps
    sample positions to the image instead of reading zeros.
    """
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    if x.dim() != 4:
        raise InputError(f"expected a (C,H,W) or (N,C,H,W) tensor, got shape {tuple(x.shape)}")
    n, c, h, w = x.shape
    theta = torch.as_tensor(theta, dtype=x.dtype)
    if theta.dim() == 2:
        theta = theta.unsqueeze(0).expand(n, 2, 3)
    if theta.shape != (n, 2, 3):
        raise InputError(f"theta must be (2,3) or ({n},2,3), got {tuple(theta.shape)}")
    if not torch.isfinite(theta).all():
        raise InputError("theta contains non-finite entries")
    ho, wo = (h, w) if out_size is None else (int(out_size[0]), int(out_size[1]))

    ax, bx, cx, ay, by, cy = (v.view(n, 1, 1) for v in _pixel_affine(theta, (h, w), (ho, wo)))
    ys = torch.arange(ho, dtype=x.dtype).view(1, ho, 1)
    xs = torch.arange(wo, dtype=x.dtype).view(1, 1, wo)
    px = ax * xs + bx * ys + cx
    py = ay * xs + by * ys + cy
    if padding == "border":
        px, py = px.clamp(0, w - 1), py.clamp(0, h - 1)
    elif padding != "zeros":
        raise InputError(f"unknown padding mode {padding!r}")

    x0f, y0f = torch.floor(px), torch.floor(py)
    fx, fy = px - x0f, py - y0f
    x0, y0 = x0f.long(), y0f.long()
    flat = x.reshape(n, c, h * w)
    out = x.new_zeros(n, c, ho * wo)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).view(n, 1, -1).expand(n, c, -1)
            weight = (wx * wy * valid).view(n, 1, -1)
            out = out + torch.gather(flat, 2, idx) * weight
    out = out.view(n, c, ho, wo)
    return out.squeeze(0) if squeeze else out


def compose_thetas(first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
    """Single theta equivalent to sampling with ``first`` and then ``second``."""

    def homog(t):
        bottom = torch.tensor([[0.0, 0.0, 1.0]], dtype=t.dtype).expand(*t.shape[:-2], 1, 3)
        return torch.cat([t, bottom], dim=-2)

    return (homog(first) @ homog(second))[..., :2, :]


def hflip(x):
    """Reverse the column order (last axis) of a tensor or array."""
    if isinstance(x, np.ndarray):
        return x[..., ::-1].copy()
    return torch.flip(x, dims=(-1,))


def crop_window(img: torch.Tensor, top: int, left: int, height: int, width: int) -> torch.Tensor:
    """Slice a ``height x width`` window; parts outside ``img`` are zero."""
    h, w = img.shape[-2:]
    pad = (max(0, -left), max(0, left + width - w), max(0, -top), max(0, top + height - h))
    if any(pad):
        img = torch.nn.functional.pad(img, pad)
        top, left = top + pad[2], left + pad[0]
    return img[..., top:top + height, left:left + width]


def crop_component(img: torch.Tensor, landmarks, comp: str, crop_spec=None) -> torch.Tensor:
    """Crop the ``comp`` window centred on its landmark centroid (zero padded)."""
    crop_spec = crop_spec or DEFAULT_CROP_SPEC
    if comp not in COMPONENTS:
        raise InputError(f"unknown component {comp!r}")
    size = crop_spec[comp]
    top, left = component_window(landmarks, comp, size)
    return crop_window(img, top, left, *size)


@dataclass
class StitchTemplate:
    canvas_size: tuple[int, int]
    placements: list[tuple[str, tuple[int, int]]]
    sizes: dict[str, tuple[int, int]] = field(default_factory=lambda: dict(DEFAULT_CROP_SPEC))

    def __post_init__(self):
        ch, cw = self.canvas_size
        for comp, (top, left) in self.placements:
            h, w = self.sizes[comp]
            if top < 0 or left < 0 or top + h > ch or left + w > cw:
                raise InputError(f"placement of {comp} at {(top, left)} leaves the {ch}x{cw} canvas")

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.canvas_size, dtype=bool)
        for comp, (top, left) in self.placements:
            h, w = self.sizes[comp]
            m[top:top + h, left:left + w] = True
        return m

    def without(self, *comps: str) -> "StitchTemplate":
        return StitchTemplate(self.canvas_size, [p for p in self.placements if p[0] not in comps], self.sizes)

    @classmethod
    def from_landmarks(cls, landmarks, canvas_size=(128, 128), crop_spec=None) -> "StitchTemplate":
        """Windows centred on each component centroid, shifted to fit in the canvas."""
        sizes = dict(crop_spec or DEFAULT_CROP_SPEC)
        placements = []
        for comp in COMPONENTS:
            h, w = sizes[comp]
            top, left = component_window(landmarks, comp, (h, w))
            top = min(max(top, 0), canvas_size[0] - h)
            left = min(max(left, 0), canvas_size[1] - w)
            placements.append((comp, (top, left)))
        return cls(tuple(canvas_size), placements, sizes)


def stitch_components(patches: dict, template: StitchTemplate) -> torch.Tensor:
    """Place patches on a zero canvas, taking the pixel-wise max where windows overlap."""
    ch, cw = template.canvas_size
    layers = []
    for comp, (top, left) in template.placements:
        patch = patches[comp]
        if tuple(patch.shape[-2:]) != tuple(template.sizes[comp]):
            raise InputError(
                f"{comp} patch is {tuple(patch.shape[-2:])}, template window is {template.sizes[comp]}"
            )
        h, w = patch.shape[-2:]
        pad = (left, cw - left - w, top, ch - top - h)
        layers.append(torch.nn.functional.pad(patch, pad, value=float("-inf")))
    if not layers:
        ref = next(iter(patches.values()), None)
        lead = () if ref is None else tuple(ref.shape[:-2])
        return torch.zeros(*lead, ch, cw)
    fused = torch.stack(layers).amax(dim=0)
    return torch.where(torch.isinf(fused), torch.zeros_like(fused), fused)
