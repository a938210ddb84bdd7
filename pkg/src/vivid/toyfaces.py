"""Procedural cartoon faces with exact 68-point landmarks.

Used to build desk-scale toy datasets. A face is drawn from a handful of soft
ellipses; ``yaw`` (degrees) swings the inner features over an ellipsoidal
depth map so that the same identity can be rendered frontal and non-frontal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIZE = 128


@dataclass(frozen=True)
class FaceParams:
    background: np.ndarray
    skin: np.ndarray
    hair: np.ndarray
    iris: np.ndarray
    lips: np.ndarray
    cy: float
    face_a: float
    face_b: float
    hairline: float
    eye_dx: float
    eye_rx: float
    eye_ry: float
    brow_gap: float
    nose_w: float
    nose_len: float
    mouth_w: float
    mouth_h: float

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "FaceParams":
        skin = np.array([0.55, 0.42, 0.33]) + rng.uniform(-0.15, 0.3) + rng.uniform(-0.04, 0.04, 3)
        return cls(
            background=rng.uniform(0.05, 0.95, 3),
            skin=np.clip(skin, 0.15, 0.95),
            hair=rng.uniform(0.02, 0.5) * np.array([1.0, 0.8, 0.6]) + rng.uniform(0, 0.1, 3),
            iris=rng.uniform(0.05, 0.45, 3),
            lips=np.array([0.65, 0.25, 0.3]) + rng.uniform(-0.12, 0.12, 3),
            cy=66.0 + rng.uniform(-3, 3),
            face_a=rng.uniform(36, 43),
            face_b=rng.uniform(46, 53),
            hairline=rng.uniform(0.45, 0.65),
            eye_dx=rng.uniform(15, 19),
            eye_rx=rng.uniform(5.5, 7.5),
            eye_ry=rng.uniform(2.8, 4.2),
            brow_gap=rng.uniform(7, 10),
            nose_w=rng.uniform(5, 8),
            nose_len=rng.uniform(16, 21),
            mouth_w=rng.uniform(10, 15),
            mouth_h=rng.uniform(3, 5),
        )


def _soft_ellipse(xx, yy, cx, cy, rx, ry):
    # ~1px anti-aliased edge
    r = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return np.clip((1.0 - r) * min(rx, ry) + 0.5, 0.0, 1.0)


def _blend(img, mask, color):
    img *= 1.0 - mask[..., None]
    img += mask[..., None] * np.asarray(color)[None, None, :]


class _Projector:
    def __init__(self, p: FaceParams, yaw_deg: float):
        self.cx = (SIZE - 1) / 2
        self.p = p
        self.cos = np.cos(np.radians(yaw_deg))
        self.sin = np.sin(np.radians(yaw_deg))

    def __call__(self, x, y, bulge=0.0):
        p = self.p
        u = (np.asarray(x, dtype=np.float64) - self.cx) / p.face_a
        v = (np.asarray(y, dtype=np.float64) - p.cy) / p.face_b
        depth = 0.8 * p.face_a * np.sqrt(np.clip(1.0 - u**2 - v**2, 0.0, None)) + bulge
        return self.cx + (x - self.cx) * self.cos + depth * self.sin, np.asarray(y, dtype=np.float64)


def _landmarks_frontal(p: FaceParams) -> tuple[np.ndarray, np.ndarray]:
    """Frontal landmark positions plus per-point extra depth (nose bulge)."""
    cx = (SIZE - 1) / 2
    pts = np.zeros((68, 2))
    bulge = np.zeros(68)
    t = np.linspace(np.pi - 0.2, 0.2, 17)
    pts[0:17, 0] = cx + p.face_a * np.cos(t)
    pts[0:17, 1] = p.cy + p.face_b * np.sin(t)

    eye_y = p.cy - 0.25 * p.face_b
    brow_y = eye_y - p.brow_gap
    s = np.linspace(-1, 1, 5)
    for start, ex in ((17, cx - p.eye_dx), (22, cx + p.eye_dx)):
        pts[start:start + 5, 0] = ex + 1.3 * p.eye_rx * s
        pts[start:start + 5, 1] = brow_y - 2.0 * (1 - s**2)

    tip_y = eye_y + p.nose_len
    pts[27:31, 0] = cx
    pts[27:31, 1] = np.linspace(eye_y, tip_y - 3, 4)
    bulge[27:31] = np.linspace(2, 8, 4)
    pts[31:36, 0] = cx + p.nose_w * s
    pts[31:36, 1] = tip_y + np.array([0.0, 1.5, 2.0, 1.5, 0.0])
    bulge[31:36] = np.array([3, 5, 7, 5, 3])

    k = np.sqrt(1 - 1 / 9)
    unit_eye = np.array([[-1, 0], [-1 / 3, -k], [1 / 3, -k], [1, 0], [1 / 3, k], [-1 / 3, k]])
    for start, ex in ((36, cx - p.eye_dx), (42, cx + p.eye_dx)):
        pts[start:start + 6] = np.array([ex, eye_y]) + unit_eye * np.array([p.eye_rx, p.eye_ry])

    mouth_y = p.cy + 0.42 * p.face_b
    t = np.pi - np.arange(12) * 2 * np.pi / 12
    pts[48:60, 0] = cx + p.mouth_w * np.cos(t)
    pts[48:60, 1] = mouth_y - p.mouth_h * np.sin(t)
    t = np.pi - np.arange(8) * 2 * np.pi / 8
    pts[60:68, 0] = cx + 0.7 * p.mouth_w * np.cos(t)
    pts[60:68, 1] = mouth_y - 0.35 * p.mouth_h * np.sin(t)
    return pts, bulge


def render_face(p: FaceParams, yaw: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Render a 128x128x3 face in [0,1] and its 68 landmarks at ``yaw`` degrees."""
    proj = _Projector(p, yaw)
    cx = proj.cx
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    img = np.broadcast_to(p.background, (SIZE, SIZE, 3)).copy()

    front, bulge = _landmarks_frontal(p)
    lm = np.empty_like(front)
    lm[:, 0], lm[:, 1] = proj(front[:, 0], front[:, 1], bulge)
    # jaw sits on the silhouette: foreshortened, no depth swing
    lm[0:17, 0] = cx + (front[0:17, 0] - cx) * proj.cos

    a = p.face_a * proj.cos
    hair = _soft_ellipse(xx, yy, cx, p.cy - 4, a + 4, p.face_b + 6)
    hair *= np.clip(p.cy - p.hairline * p.face_b - yy + 0.5, 0, 1)
    _blend(img, hair, p.hair)
    face = _soft_ellipse(xx, yy, cx, p.cy, a, p.face_b)
    face *= np.clip(yy - (p.cy - p.hairline * p.face_b) + 0.5, 0, 1)
    shade = 1.0 - 0.18 * ((xx - cx) / p.face_a) ** 2
    skin = p.skin[None, None, :] * shade[..., None]
    img = img * (1 - face[..., None]) + skin * face[..., None]

    eye_y = p.cy - 0.25 * p.face_b
    for side in (-1, 1):
        ex, ey = proj(cx + side * p.eye_dx, eye_y)
        rx = p.eye_rx * proj.cos
        _blend(img, _soft_ellipse(xx, yy, ex, ey, rx, p.eye_ry), (0.95, 0.95, 0.92))
        _blend(img, _soft_ellipse(xx, yy, ex, ey, 0.9 * p.eye_ry, 0.9 * p.eye_ry), p.iris)
        _blend(img, 0.9 * _soft_ellipse(xx, yy, ex, ey, 0.4 * p.eye_ry, 0.4 * p.eye_ry), (0.02, 0.02, 0.02))
        bx, by = proj(cx + side * p.eye_dx, eye_y - p.brow_gap - 1.2)
        _blend(img, _soft_ellipse(xx, yy, bx, by, 1.3 * p.eye_rx * proj.cos, 1.6), p.hair)

    tip_y = eye_y + p.nose_len
    nx, ny = proj(cx, tip_y - 4, 6.0)
    _blend(img, 0.35 * _soft_ellipse(xx, yy, nx, ny, p.nose_w * proj.cos, 6.0), p.skin * 0.55)
    for side in (-1, 1):
        sx, sy = proj(cx + side * 0.5 * p.nose_w, tip_y + 1.0, 5.0)
        _blend(img, 0.8 * _soft_ellipse(xx, yy, sx, sy, 1.6 * proj.cos, 1.2), p.skin * 0.35)

    mouth_y = p.cy + 0.42 * p.face_b
    mx, my = proj(cx, mouth_y)
    _blend(img, _soft_ellipse(xx, yy, mx, my, p.mouth_w * proj.cos, p.mouth_h), p.lips)
    _blend(img, 0.8 * _soft_ellipse(xx, yy, mx, my, 0.7 * p.mouth_w * proj.cos, 0.6), p.lips * 0.35)

    return np.clip(img, 0.0, 1.0), lm


def make_faces(n: int, seed: int = 0, yaws=(-30, -15, 0, 15, 30)):
    """``n`` identities as ``(frontal_hr, landmarks, nonfrontal_hr, yaw)`` tuples."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        p = FaceParams.sample(rng)
        yaw = float(rng.choice(yaws))
        hr, lm = render_face(p, 0.0)
        side, _ = render_face(p, yaw)
        out.append((hr, lm, side, yaw))
    return out
