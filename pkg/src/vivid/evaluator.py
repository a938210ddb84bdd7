"""PSNR / SSIM / identity-distance evaluation over a dataset.

PSNR is computed jointly over RGB on the full frame. SSIM uses an 11x11
Gaussian window (sigma 1.5) over valid positions only, per channel, averaged.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError
from .losses import loss_id

log = logging.getLogger(__name__)

REPORT_FIELDS = ("id", "pose_tag", "psnr_db", "ssim", "id_dist")


def _pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, data_range: float = 1.0) -> float:
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, win_size: int = 11, sigma: float = 1.5, data_range: float = 1.0) -> float:
    """Mean structural similarity of two ``H x W`` or ``H x W x C`` images."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < win_size:
        raise InputError(f"image {a.shape[:2]} is smaller than the {win_size}x{win_size} SSIM window")
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    win = gaussian_window(win_size, sigma)

    def filt(x):
        return np.einsum("ijkl,kl->ij", sliding_window_view(x, (win_size, win_size)), win)

    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = filt(x), filt(y)
        vx = filt(x * x) - mx**2
        vy = filt(y * y) - my**2
        cov = filt(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
        scores.append(s.mean())
    return float(np.mean(scores))


def to_nchw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)).unsqueeze(0)


def to_hwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().squeeze(0).numpy().transpose(1, 2, 0).astype(np.float64)


def bicubic_upsample(lr: np.ndarray, size: int = 128) -> np.ndarray:
    up = F.interpolate(to_nchw(lr), size=(size, size), mode="bicubic", align_corners=False)
    return to_hwc(up.clamp(0, 1))


class ModelPredictor:
    """Runs the coarse -> prior -> fine pipeline from a trained model."""

    def __init__(self, model, use_mean_landmarks: bool = False):
        self.model = model.eval()
        self.use_mean_landmarks = use_mean_landmarks

    @torch.no_grad()
    def run(self, lr: np.ndarray, landmarks=None, hr=None) -> dict:
        lms = None if (landmarks is None or self.use_mean_landmarks) else [landmarks]
        out = self.model(to_nchw(lr), lms, None if hr is None else to_nchw(hr))
        return {k: to_hwc(out[k]) for k in ("coarse", "prior", "fine")}

    def __call__(self, pair) -> np.ndarray:
        return self.run(pair.lr, pair.landmarks, pair.hr)["fine"]


class IdentityStub:
    """Returns the ground truth; checks the evaluation plumbing end to end."""

    def __call__(self, pair) -> np.ndarray:
        return np.array(pair.hr, dtype=np.float64)


class BicubicPredictor:
    def __call__(self, pair) -> np.ndarray:
        return bicubic_upsample(pair.lr, pair.hr.shape[0])


def _mean_block(rows) -> dict:
    ok = [r for r in rows if r.get("error") is None]
    psnrs = [r["psnr_db"] for r in ok]
    finite = [p for p in psnrs if math.isfinite(p)]
    if finite:
        mean_psnr = float(np.mean(finite))
    else:
        mean_psnr = math.inf if psnrs else None
    return {
        "n": len(ok),
        "mean_psnr_db": mean_psnr,
        "psnr_inf_count": len(psnrs) - len(finite),
        "mean_ssim": float(np.mean([r["ssim"] for r in ok])) if ok else None,
        "mean_id_dist": float(np.mean([r["id_dist"] for r in ok])) if ok else None,
    }


@dataclass
class MetricsReport:
    per_image: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> dict:
        agg = _mean_block(self.per_image)
        agg["n_errors"] = sum(1 for r in self.per_image if r.get("error") is not None)
        groups = defaultdict(list)
        for r in self.per_image:
            groups[r["pose_tag"]].append(r)
        if len(groups) > 1 or any(tag != 0.0 for tag in groups):
            agg["by_pose"] = {_fmt(tag): _mean_block(groups[tag]) for tag in sorted(groups)}
        agg.update(self.extra)
        return agg

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_FIELDS)
            for r in self.per_image:
                if r.get("error") is not None:
                    writer.writerow([r["id"], _fmt(r["pose_tag"]), "error", "error", r["error"]])
                    continue
                writer.writerow([r["id"], _fmt(r["pose_tag"]), _fmt(r["psnr_db"]), _fmt(r["ssim"]), _fmt(r["id_dist"])])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"aggregate": _jsonable(self.aggregate)}, indent=2) + "\n")
        return path


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def evaluate(predictor, data, emb, baseline: bool = False) -> MetricsReport:
    """Score ``predictor(pair) -> HxWx3 image`` against every pair's HR target.

    A failure on one item becomes an error row; the rest are still evaluated.
    """
    report = MetricsReport()
    bicubic = BicubicPredictor()
    baseline_psnr = []
    for pair in sorted(data, key=lambda p: p.id):
        row = {"id": pair.id, "pose_tag": float(pair.pose_tag), "error": None}
        try:
            pred = np.asarray(predictor(pair), dtype=np.float64)
            row["psnr_db"] = psnr(pred, pair.hr)
            row["ssim"] = ssim(pred, pair.hr)
            with torch.no_grad():
                row["id_dist"] = float(loss_id(to_nchw(pred), to_nchw(pair.hr), emb))
        except Exception as exc:  # noqa: BLE001 - recorded per row
            log.warning("evaluation failed for %s: %s", pair.id, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        report.per_image.append(row)
        if baseline:
            baseline_psnr.append(psnr(bicubic(pair), pair.hr))
    if baseline and baseline_psnr:
        report.extra["bicubic_mean_psnr_db"] = float(np.mean(baseline_psnr))
    return report
