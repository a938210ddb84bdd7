"""68-point landmark layout and facial-component definitions.

Landmarks are ``(x, y)`` pairs in pixel coordinates where integer values sit
on pixel centres: ``x`` is the column, ``y`` the row. ``left``/``right`` refer
to the side of the image, not the subject's own left/right.
"""

from __future__ import annotations

import numpy as np

NUM_LANDMARKS = 68

COMPONENTS = ("left_eye", "right_eye", "nose", "mouth")

# 0-indexed point ranges (the usual 1-indexed 37-42, 43-48, 28-36, 49-68).
COMPONENT_POINTS = {
    "left_eye": tuple(range(36, 42)),
    "right_eye": tuple(range(42, 48)),
    "nose": tuple(range(27, 36)),
    "mouth": tuple(range(48, 68)),
}

# (height, width) in HR pixels at 128x128.
DEFAULT_CROP_SPEC = {
    "left_eye": (32, 40),
    "right_eye": (32, 40),
    "nose": (40, 32),
    "mouth": (32, 48),
}

MIRRORED_COMPONENT = {"left_eye": "right_eye", "right_eye": "left_eye", "nose": "nose", "mouth": "mouth"}


def _mirror_permutation() -> np.ndarray:
    pairs = [(i, 16 - i) for i in range(8)]
    pairs += [(17, 26), (18, 25), (19, 24), (20, 23), (21, 22)]
    pairs += [(31, 35), (32, 34)]
    pairs += [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)]
    pairs += [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58)]
    pairs += [(60, 64), (61, 63), (65, 67)]
    perm = np.arange(NUM_LANDMARKS)
    for a, b in pairs:
        perm[a], perm[b] = b, a
    return perm


MIRROR_PERM = _mirror_permutation()


def check_landmarks(landmarks, height: int | None = None, width: int | None = None) -> np.ndarray:
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.shape != (NUM_LANDMARKS, 2):
        raise ValueError(f"expected landmarks of shape (68, 2), got {lm.shape}")
    if not np.all(np.isfinite(lm)):
        raise ValueError("landmarks contain non-finite values")
    if height is not None and width is not None:
        inside = (lm[:, 0] >= 0) & (lm[:, 0] <= width - 1) & (lm[:, 1] >= 0) & (lm[:, 1] <= height - 1)
        if not inside.all():
            bad = int(np.flatnonzero(~inside)[0])
            raise ValueError(f"landmark {bad} at {tuple(lm[bad])} lies outside the {height}x{width} frame")
    return lm


def component_centroid(landmarks, comp: str) -> np.ndarray:
    """Mean ``(x, y)`` of the points belonging to ``comp``."""
    if comp not in COMPONENT_POINTS:
        raise ValueError(f"unknown component {comp!r}; expected one of {COMPONENTS}")
    lm = np.asarray(landmarks, dtype=np.float64)
    return lm[list(COMPONENT_POINTS[comp])].mean(axis=0)


def component_window(landmarks, comp: str, size: tuple[int, int]) -> tuple[int, int]:
    """Top-left ``(row, col)`` of a ``size`` window centred on the component centroid.

    The window's centre pixel coordinate is ``top + (h - 1) / 2``; rounding is
    half-to-even so that mirrored landmarks give mirrored windows.
    """
    h, w = size
    cx, cy = component_centroid(landmarks, comp)
    return int(np.rint(cy - (h - 1) / 2)), int(np.rint(cx - (w - 1) / 2))


def mirror_landmarks(landmarks, width: int) -> np.ndarray:
    """Landmarks of the horizontally flipped image, relabelled to the 68-point order."""
    lm = np.asarray(landmarks, dtype=np.float64).copy()
    lm[:, 0] = (width - 1) - lm[:, 0]
    return lm[MIRROR_PERM]


def scale_landmarks(landmarks, factor: float) -> np.ndarray:
    """Map pixel-centre coordinates through an area resize by ``factor``."""
    lm = np.asarray(landmarks, dtype=np.float64)
    return (lm + 0.5) * factor - 0.5
