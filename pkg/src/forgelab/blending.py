"""Mask blending and gradient-domain Poisson blending.

mask_blend is the elementwise composition M*fg + (1-M)*bg. poisson_blend
solves the discrete Poisson equation per channel on the mask interior
(5-point Laplacian, conjugate gradient) with the background as Dirichlet
boundary, then clamps to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter


class BlendShapeError(ValueError):
    pass


class PoissonConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"Poisson solve did not converge: residual {residual:.3e} after {iterations} iterations"
        )


@dataclass
class BlendRequest:
    background: np.ndarray  # (H, W, 3) in [0, 1]
    foreground: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray        # (H, W) in [0, 1]

    def __post_init__(self):
        self.background = np.asarray(self.background, np.float32)
        self.foreground = np.asarray(self.foreground, np.float32)
        self.mask = np.asarray(self.mask, np.float32)
        if self.background.shape != self.foreground.shape:
            raise BlendShapeError(
                f"foreground {self.foreground.shape} != background {self.background.shape}")
        if self.mask.shape != self.background.shape[:2]:
            raise BlendShapeError(
                f"mask {self.mask.shape} does not match image {self.background.shape[:2]}")


def mask_blend(request: BlendRequest) -> np.ndarray:
    m = request.mask[:, :, None]
    return (m * request.foreground + (1.0 - m) * request.background).astype(np.float32)


def build_soft_mask(binary: np.ndarray, blur_sigma: float, intensity: float) -> np.ndarray:
    """Gaussian-blur a binary mask and scale by intensity; clamped to [0, 1]."""
    if blur_sigma < 0:
        raise ValueError("blur_sigma must be >= 0")
    if not (0.0 < intensity <= 1.0):
        raise ValueError("intensity must be in (0, 1]")
    soft = np.asarray(binary, np.float32)
    if blur_sigma > 0:
        soft = gaussian_filter(soft, sigma=blur_sigma, mode="constant")
    return np.clip(soft * intensity, 0.0, 1.0).astype(np.float32)


def _laplacian_interior(values: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """Apply the 5-point Laplacian (4u - neighbors) restricted to interior
    pixels, treating values outside `inside` as zero. values: (H, W)."""
    h, w = values.shape
    full = np.zeros((h + 2, w + 2), np.float64)
    full[1:-1, 1:-1] = np.where(inside, values, 0.0)
    out = 4.0 * full[1:-1, 1:-1] - full[:-2, 1:-1] - full[2:, 1:-1] \
        - full[1:-1, :-2] - full[1:-1, 2:]
    return out[inside]


def _poisson_rhs(fg: np.ndarray, bg: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """RHS = Laplacian(foreground) on interior, plus boundary terms from the
    background on neighbors outside the interior."""
    h, w = fg.shape
    fpad = np.pad(fg.astype(np.float64), 1, mode="edge")
    lap_fg = 4.0 * fpad[1:-1, 1:-1] - fpad[:-2, 1:-1] - fpad[2:, 1:-1] \
        - fpad[1:-1, :-2] - fpad[1:-1, 2:]
    bpad = np.pad(bg.astype(np.float64), 1, mode="edge")
    ipad = np.zeros((h + 2, w + 2), dtype=bool)
    ipad[1:-1, 1:-1] = inside
    boundary = np.zeros((h, w), np.float64)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb_val = bpad[1 + dy : h + 1 + dy, 1 + dx : w + 1 + dx]
        nb_in = ipad[1 + dy : h + 1 + dy, 1 + dx : w + 1 + dx]
        boundary += np.where(~nb_in, nb_val, 0.0)
    return (lap_fg + boundary)[inside]


def poisson_blend(request: BlendRequest, tol: float = 1e-6, max_iter: int = 10000
                  ) -> np.ndarray:
    """Solve Laplacian(out) = Laplacian(fg) on the interior (mask >= 0.5),
    out = background elsewhere; conjugate gradient; result clamped to [0,1]."""
    inside = request.mask >= 0.5
    out = request.background.astype(np.float64).copy()
    if not inside.any():
        return request.background.copy()
    for c in range(request.background.shape[2]):
        fg = request.foreground[:, :, c].astype(np.float64)
        bg = request.background[:, :, c].astype(np.float64)
        b = _poisson_rhs(fg, bg, inside)
        x = fg[inside].copy()  # warm start from the foreground
        r = b - _laplacian_interior(_scatter(x, inside), inside)
        p = r.copy()
        rs = float(r @ r)
        bnorm = float(np.linalg.norm(b)) or 1.0
        it = 0
        while np.sqrt(rs) > tol * bnorm:
            if it >= max_iter:
                raise PoissonConvergenceError(np.sqrt(rs) / bnorm, it)
            ap = _laplacian_interior(_scatter(p, inside), inside)
            alpha = rs / float(p @ ap)
            x += alpha * p
            r -= alpha * ap
            rs_new = float(r @ r)
            p = r + (rs_new / rs) * p
            rs = rs_new
            it += 1
        out[:, :, c][inside] = x
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _scatter(values: np.ndarray, inside: np.ndarray) -> np.ndarray:
    full = np.zeros(inside.shape, np.float64)
    full[inside] = values
    return full
