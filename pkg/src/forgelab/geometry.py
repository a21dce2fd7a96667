"""Facial landmarks, forgery regions, convex hulls, rasterization, affine warps.

Landmarks follow the 68-point face annotation scheme. Region index subsets
are pinned here as constants; all operations are pure functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numnn.layers import bilinear_resize  # noqa: F401  (shared sampling convention)


class GeometryError(ValueError):
    """Degenerate geometry (too few points, collinear input, bad region count)."""


class ForgeryRegion(Enum):
    LEFT_EYE = "left eye"
    RIGHT_EYE = "right eye"
    NOSE = "nose"
    MOUTH = "mouth"
    CENTER_FACE = "center face"
    JAW = "jaw"

    @property
    def display_name(self) -> str:
        return self.value


# 68-point convention: jaw 0-16, right brow 17-21, left brow 22-26,
# nose 27-35, right eye 36-41, left eye 42-47, mouth 48-67.
_EYE_R = list(range(36, 42))
_EYE_L = list(range(42, 48))
_NOSE = list(range(27, 36))
_MOUTH = list(range(48, 68))

REGION_POINTS: dict[ForgeryRegion, list[int]] = {
    ForgeryRegion.LEFT_EYE: _EYE_L,
    ForgeryRegion.RIGHT_EYE: _EYE_R,
    ForgeryRegion.NOSE: _NOSE,
    ForgeryRegion.MOUTH: _MOUTH,
    ForgeryRegion.CENTER_FACE: _EYE_L + _EYE_R + _NOSE + _MOUTH,
    ForgeryRegion.JAW: list(range(0, 17)),
}


@dataclass
class LandmarkSet:
    """68 (x, y) pixel coordinates inside a HxW image."""

    points: np.ndarray  # (68, 2) float32
    height: int
    width: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32)
        if self.points.shape != (68, 2):
            raise GeometryError(f"expected 68 landmark points, got {self.points.shape}")
        x, y = self.points[:, 0], self.points[:, 1]
        if (x < 0).any() or (x >= self.width).any() or (y < 0).any() or (y >= self.height).any():
            raise GeometryError("landmark coordinates out of image bounds")

    def region_points(self, region: ForgeryRegion) -> np.ndarray:
        return self.points[REGION_POINTS[region]]


def load_landmarks(path, height: int, width: int) -> LandmarkSet:
    """Read a sidecar JSON file with key "points": 68 [x, y] pairs."""
    with open(path) as f:
        doc = json.load(f)
    return LandmarkSet(np.asarray(doc["points"], dtype=np.float32), height, width)


def save_landmarks(lm: LandmarkSet, path) -> None:
    with open(path, "w") as f:
        json.dump({"points": lm.points.tolist()}, f)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise convex hull (Andrew monotone chain).

    y grows downward in image coordinates; "counter-clockwise" is with
    respect to mathematical axes (positive cross products on turns).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise GeometryError("convex hull needs >= 3 points")
    uniq = sorted(set(map(tuple, pts.tolist())))
    if len(uniq) < 3:
        raise GeometryError("convex hull needs >= 3 distinct points")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[tuple] = []
    for p in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple] = []
    for p in reversed(uniq):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise GeometryError("all points are collinear")
    return np.asarray(hull, dtype=np.float32)


def rasterize_hull(polygon: np.ndarray, height: int, width: int) -> np.ndarray:
    """Binary HxW mask: 1 iff the pixel center (x+0.5, y+0.5) is inside or on
    the convex polygon."""
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        return np.zeros((height, width), np.float32)
    cx = np.arange(width, dtype=np.float64) + 0.5
    cy = np.arange(height, dtype=np.float64) + 0.5
    px, py = np.meshgrid(cx, cy)
    inside = np.ones((height, width), dtype=bool)
    eps = 1e-9
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        # convex CCW polygon: interior is on the positive side of each edge
        side = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside &= side >= -eps
    return inside.astype(np.float32)


@dataclass
class AffineParams:
    """2x3 matrix mapping source -> destination pixel coordinates."""

    matrix: np.ndarray  # (2, 3) float32

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.shape != (2, 3):
            raise GeometryError("affine matrix must be 2x3")

    @property
    def determinant(self) -> float:
        a = self.matrix
        return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])

    def inverse(self) -> "AffineParams":
        a = self.matrix[:, :2].astype(np.float64)
        t = self.matrix[:, 2].astype(np.float64)
        ainv = np.linalg.inv(a)
        return AffineParams(np.hstack([ainv, (-ainv @ t)[:, None]]).astype(np.float32))

    @staticmethod
    def identity() -> "AffineParams":
        return AffineParams(np.array([[1, 0, 0], [0, 1, 0]], np.float32))


def sample_affine_jitter(rng: np.random.Generator, height: int, width: int,
                         max_rot_deg: float = 7.0, scale_range=(0.95, 1.05),
                         max_translate_frac: float = 0.02,
                         min_translate_frac: float = 0.008) -> AffineParams:
    """Mild affine jitter about the image center: rotation, scale, translation.

    Translation magnitude per axis is bounded away from zero so the warped
    copy is never pixel-aligned with the original: a near-identity draw would
    otherwise produce a blend with no detectable displacement at all.
    """
    theta = np.deg2rad(rng.uniform(-max_rot_deg, max_rot_deg))
    scale = rng.uniform(*scale_range)
    tx = float(rng.choice([-1.0, 1.0])) \
        * rng.uniform(min_translate_frac, max_translate_frac) * width
    ty = float(rng.choice([-1.0, 1.0])) \
        * rng.uniform(min_translate_frac, max_translate_frac) * height
    c, s = np.cos(theta) * scale, np.sin(theta) * scale
    cx, cy = width / 2.0, height / 2.0
    # rotate/scale about center, then translate
    m = np.array([
        [c, -s, cx - c * cx + s * cy + tx],
        [s, c, cy - s * cx - c * cy + ty],
    ], np.float32)
    return AffineParams(m)


def affine_warp(image: np.ndarray, params: AffineParams) -> np.ndarray:
    """Inverse-mapping warp with bilinear sampling, zero fill outside source."""
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[0], img.shape[1]
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    inv = params.inverse().matrix.astype(np.float64)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sxc = np.clip(sx, 0, w - 1)
    syc = np.clip(sy, 0, h - 1)
    x0 = np.floor(sxc).astype(np.int64)
    y0 = np.floor(syc).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sxc - x0)[..., None].astype(np.float32)
    fy = (syc - y0)[..., None].astype(np.float32)
    out = (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
           + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)
    out *= valid[..., None]
    if squeeze:
        out = out[:, :, 0]
    return out.astype(np.float32)


def select_regions(landmarks: LandmarkSet, n_max: int, rng: np.random.Generator
                   ) -> list[ForgeryRegion]:
    """Uniformly pick k in [1, n_max], then k distinct regions."""
    regions = list(ForgeryRegion)
    if n_max < 1 or n_max > len(regions):
        raise GeometryError(f"n_max must be in [1, {len(regions)}], got {n_max}")
    k = int(rng.integers(1, n_max + 1))
    idx = rng.choice(len(regions), size=k, replace=False)
    return [regions[i] for i in sorted(idx)]
