"""Paired training data: synthesis, component sets, heatmaps, on-disk datasets.

Images are ``H x W x C`` float arrays in [0, 1]; landmarks are ``(68, 2)``
arrays of ``(x, y)`` HR pixel coordinates.

On-disk layout::

    <root>/hr/<id>.png          128x128 RGB
    <root>/lr/<id>.png          16x16 RGB
    <root>/landmarks/<id>.txt   68 lines of "x y"
    <root>/manifest.json        {"items": [{"id": ..., "pose_tag": ...}, ...]}
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DataError, InputError
from .geometry import affine_grid_sample, crop_window
from .layout import COMPONENTS, DEFAULT_CROP_SPEC, NUM_LANDMARKS, check_landmarks, component_window

HR_SIZE = 128
LR_SIZE = 16


@dataclass
class FacePair:
    lr: np.ndarray
    hr: np.ndarray
    landmarks: np.ndarray
    pose_tag: float = 0.0
    id: str = ""

    def validate(self, scale: int = 8) -> "FacePair":
        if self.hr.ndim != 3 or self.hr.shape[2] != 3:
            raise InputError(f"hr must be HxWx3, got {self.hr.shape}")
        h, w = self.hr.shape[:2]
        if self.lr.shape != (h // scale, w // scale, 3) or h % scale or w % scale:
            raise InputError(f"lr shape {self.lr.shape} is not hr shape {self.hr.shape} / {scale}")
        for name, img in (("lr", self.lr), ("hr", self.hr)):
            if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
                raise InputError(f"{name} pixel values leave [0, 1]")
        try:
            check_landmarks(self.landmarks, h, w)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        return self


@dataclass
class ComponentSet:
    patches: dict[str, list[np.ndarray]]
    crop_spec: dict[str, tuple[int, int]]
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.patches[COMPONENTS[0]])


@dataclass(frozen=True)
class DegradationConfig:
    scale: int = 8
    max_rotation: float = 10.0
    max_shift: float = 0.05
    max_shear: float = 0.05
    blur_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.scale) != self.scale or self.scale < 2:
            raise ConfigError(f"scale must be an integer >= 2, got {self.scale}")
        for name in ("max_rotation", "max_shift", "max_shear", "blur_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


def downsample(img: np.ndarray, scale: int) -> np.ndarray:
    """Area (block-mean) downsampling of an ``H x W x C`` image."""
    h, w, c = img.shape
    if h % scale or w % scale:
        raise ConfigError(f"scale {scale} does not divide image dims {h}x{w}")
    if scale & (scale - 1):
        return img.reshape(h // scale, scale, w // scale, scale, c).mean(axis=(1, 3))
    # repeated 2x2 halving: same block mean, but exact on constant blocks
    out = np.asarray(img, dtype=np.float64)
    while out.shape[0] > h // scale:
        out = 0.25 * (out[0::2, 0::2] + out[1::2, 0::2] + out[0::2, 1::2] + out[1::2, 1::2])
    return out


def random_affine(cfg: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    angle = np.radians(rng.uniform(-cfg.max_rotation, cfg.max_rotation))
    tx, ty = 2 * rng.uniform(-cfg.max_shift, cfg.max_shift, size=2)
    shear = rng.uniform(-cfg.max_shear, cfg.max_shear)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    lin = rot @ np.array([[1.0, shear], [0.0, 1.0]])
    return np.hstack([lin, [[tx], [ty]]])


def warp_image(img: np.ndarray, theta: np.ndarray) -> np.ndarray:
    x = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float64))
    out = affine_grid_sample(x, torch.from_numpy(theta), padding="border")
    return out.numpy().transpose(1, 2, 0)


def synth_pair(hr, landmarks, cfg: DegradationConfig, rng_state=None, source=None, pose_tag=0.0, id="") -> FacePair:
    """Degrade a face into an unaligned LR input paired with the untouched HR target.

    ``source`` is the view to degrade (e.g. a non-frontal rendering of the same
    face); it defaults to ``hr``. ``rng_state`` is a seed or a Generator.
    """
    hr = np.asarray(hr, dtype=np.float64)
    if hr.shape != (HR_SIZE, HR_SIZE, 3):
        raise InputError(f"hr must be {HR_SIZE}x{HR_SIZE}x3, got {hr.shape}")
    src = hr if source is None else np.asarray(source, dtype=np.float64)
    if src.shape != hr.shape:
        raise InputError(f"source view {src.shape} does not match hr {hr.shape}")
    if HR_SIZE % cfg.scale:
        raise ConfigError(f"scale {cfg.scale} does not divide {HR_SIZE}")
    try:
        lm = check_landmarks(landmarks, HR_SIZE, HR_SIZE)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    rng = rng_state if isinstance(rng_state, np.random.Generator) else np.random.default_rng(rng_state)

    warped = warp_image(src, random_affine(cfg, rng))
    if cfg.blur_sigma > 0:
        warped = gaussian_filter(warped, sigma=(cfg.blur_sigma, cfg.blur_sigma, 0), mode="nearest")
    lr = np.clip(downsample(warped, cfg.scale), 0.0, 1.0)
    return FacePair(lr=lr, hr=hr, landmarks=lm, pose_tag=float(pose_tag), id=id)


def crop_patch(img: np.ndarray, top: int, left: int, size) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))
    return crop_window(t, top, left, *size).numpy().transpose(1, 2, 0).copy()


def build_component_set(pairs, crop_spec=None) -> ComponentSet:
    """Crop the four facial components out of every HR face."""
    crop_spec = dict(crop_spec or DEFAULT_CROP_SPEC)
    out = ComponentSet({c: [] for c in COMPONENTS}, crop_spec)
    for n, pair in enumerate(pairs):
        h, w = pair.hr.shape[:2]
        for comp in COMPONENTS:
            size = crop_spec[comp]
            top, left = component_window(pair.landmarks, comp, size)
            if top < 0 or left < 0 or top + size[0] > h or left + size[1] > w:
                out.warnings.append(f"pair {pair.id or n}: {comp} window at {(top, left)} clamped to image")
            out.patches[comp].append(crop_patch(pair.hr, top, left, size))
    return out


def render_heatmaps(landmarks, size, gauss_sigma: float = 2.0) -> np.ndarray:
    """Unnormalized Gaussian bumps, one ``H x W`` channel per landmark."""
    h, w = size
    if h <= 0 or w <= 0:
        raise InputError(f"heatmap size must be positive, got {size}")
    if gauss_sigma <= 0:
        raise InputError("gauss_sigma must be positive")
    lm = np.asarray(landmarks, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    gx = np.exp(-((xs[None, :] - lm[:, 0:1]) ** 2) / (2 * gauss_sigma**2))
    gy = np.exp(-((ys[None, :] - lm[:, 1:2]) ** 2) / (2 * gauss_sigma**2))
    return gy[:, :, None] * gx[:, None, :]


def _read_png(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from None
    if arr.shape != (size, size, 3):
        raise DataError(f"{path}: expected {size}x{size} RGB, got {arr.shape[1]}x{arr.shape[0]}")
    return arr


def write_png(path, img: np.ndarray):
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _read_landmarks(path: Path) -> np.ndarray:
    if not path.exists():
        raise DataError(f"{path}: missing landmark file")
    try:
        rows = [line.split() for line in path.read_text().splitlines() if line.strip()]
        lm = np.array([[float(a), float(b)] for a, b in rows])
    except ValueError:
        raise DataError(f"{path}: each line must hold two numbers 'x y'") from None
    if lm.shape != (NUM_LANDMARKS, 2):
        raise DataError(f"{path}: expected {NUM_LANDMARKS} landmark lines, found {len(lm)}")
    return lm


class Dataset(Sequence):
    """Read-only collection of validated :class:`FacePair` items."""

    def __init__(self, pairs: list[FacePair], root: Path | None = None):
        self.pairs = list(pairs)
        self.root = root

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.pairs]

    def mean_landmarks(self) -> np.ndarray:
        return np.mean([p.landmarks for p in self.pairs], axis=0)


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest = root / "manifest.json"
    if not manifest.exists():
        if root.is_dir() and not any(root.iterdir()):
            return Dataset([], root)
        raise DataError(f"{manifest}: missing manifest")
    try:
        items = json.loads(manifest.read_text())["items"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{manifest}: malformed manifest ({exc})") from None
    pairs = []
    for item in items:
        pid = str(item["id"])
        hr = _read_png(root / "hr" / f"{pid}.png", HR_SIZE)
        lr = _read_png(root / "lr" / f"{pid}.png", LR_SIZE)
        lm_path = root / "landmarks" / f"{pid}.txt"
        pair = FacePair(lr, hr, _read_landmarks(lm_path), float(item.get("pose_tag", 0.0)), pid)
        try:
            pair.validate(HR_SIZE // LR_SIZE)
        except InputError as exc:
            raise DataError(f"{lm_path}: {exc}") from None
        pairs.append(pair)
    return Dataset(pairs, root)


def save_dataset(root, pairs) -> Path:
    root = Path(root)
    for sub in ("hr", "lr", "landmarks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    items = []
    for pair in pairs:
        write_png(root / "hr" / f"{pair.id}.png", pair.hr)
        write_png(root / "lr" / f"{pair.id}.png", pair.lr)
        lines = "\n".join(f"{x:.4f} {y:.4f}" for x, y in pair.landmarks)
        (root / "landmarks" / f"{pair.id}.txt").write_text(lines + "\n")
        items.append({"id": pair.id, "pose_tag": pair.pose_tag})
    (root / "manifest.json").write_text(json.dumps({"items": items}, indent=1))
    return root


def toy_pairs(n: int, cfg: DegradationConfig | None = None, seed: int = 0) -> list[FacePair]:
    """Synthetic pairs from procedural faces: non-frontal view degraded, frontal view as target."""
    from .toyfaces import make_faces

    cfg = cfg or DegradationConfig(seed=seed)
    return [
        synth_pair(hr, lm, cfg, np.random.default_rng([cfg.seed, i]), source=side, pose_tag=yaw, id=f"{i:04d}")
        for i, (hr, lm, side, yaw) in enumerate(make_faces(n, seed))
    ]
