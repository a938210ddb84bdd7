"""Loss terms and the composite generator objectives.

Squared norms are averaged over elements, so each term is resolution independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .critics import LOGIT_CLAMP
from .errors import InputError
from .geometry import hflip
from .layout import NUM_LANDMARKS

SCORE_EPS = 1.0 / (1.0 + math.exp(LOGIT_CLAMP))


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 0.01
    psi1: float = 0.01
    alpha2: float = 0.01
    gamma2: float = 0.01
    psi2: float = 0.01

    def __post_init__(self):
        if min(self.alpha1, self.psi1, self.alpha2, self.gamma2, self.psi2) < 0:
            raise ValueError("loss weights must be non-negative")


class IdentityEmbedder(nn.Module):
    """Frozen conv encoder with global average pooling; weights come from a fixed seed.

    ``IdentityEmbedder.wrap(module)`` freezes any external feature extractor
    behind the same interface.
    """

    def __init__(self, layers=4, width=16, seed=1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs, cin = [], 3
        for i in range(layers):
            cout = width * 2 ** min(i, 2)
            conv = nn.Conv2d(cin, cout, 3, 2, 1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / (cin * 9)))
                conv.bias.zero_()
            convs += [conv, nn.LeakyReLU(0.2)]
            cin = cout
        self.net = nn.Sequential(*convs)
        self.dim = cin
        self.freeze()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode=True):
        return super().train(False)

    def forward(self, img):
        return self.net(img).mean(dim=(-2, -1))

    @classmethod
    def wrap(cls, module: nn.Module) -> "IdentityEmbedder":
        emb = cls.__new__(cls)
        nn.Module.__init__(emb)
        emb.net = module
        emb.dim = None
        return emb.freeze()


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise InputError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_mse(pred, gt):
    _same_shape(pred, gt, "loss_mse")
    return ((pred - gt) ** 2).mean()


def loss_sym(pred):
    return loss_mse(hflip(pred), pred)


def loss_id(pred, gt, emb):
    _same_shape(pred, gt, "loss_id")
    return ((emb(pred) - emb(gt)) ** 2).mean()


def loss_heatmap(pred, gt, num_points=NUM_LANDMARKS):
    """Mean over the ``num_points`` channels (dim -3) of per-channel MSE."""
    if pred.shape[-3] != num_points or gt.shape[-3] != num_points:
        raise InputError(f"heatmaps need {num_points} channels, got {pred.shape[-3]} and {gt.shape[-3]}")
    _same_shape(pred, gt, "loss_heatmap")
    per_channel = ((pred - gt) ** 2).transpose(0, -3).reshape(num_points, -1).mean(dim=1)
    return per_channel.sum() / num_points


def _scores(x):
    x = x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)
    one = torch.tensor(1.0, dtype=x.dtype)
    hi = torch.minimum(one - SCORE_EPS, torch.nextafter(one, torch.tensor(0.0, dtype=x.dtype)))
    return torch.minimum(x.clamp(min=SCORE_EPS), hi)


def loss_d(real_scores, fake_scores):
    real, fake = _scores(real_scores), _scores(fake_scores)
    return -(torch.log(real).mean() + torch.log1p(-fake).mean())


def loss_adv(fake_scores):
    return -torch.log(_scores(fake_scores)).mean()


# Logit forms of the two adversarial terms. Identical values, but stable in float32
# where sigmoid(20) rounds to 1.
def loss_d_logits(real_logits, fake_logits):
    return -(F.logsigmoid(real_logits).mean() + F.logsigmoid(-fake_logits).mean())


def loss_adv_logits(fake_logits):
    return -F.logsigmoid(fake_logits).mean()


def compose_LC(mse, sym, id_, adv, w: LossWeights):
    return mse + sym + w.alpha1 * id_ + w.psi1 * adv


def compose_LT(mse_t, w: LossWeights | None = None):
    return mse_t


def compose_LF(mse, id_, heat, adv, w: LossWeights):
    return mse + w.alpha2 * id_ + w.gamma2 * heat + w.psi2 * adv


def compose_LG(lc, lt, lf):
    return lc + lt + lf
