"""Differentiable layers and array ops with explicit backward passes.

Layout conventions: images and feature maps are (N, H, W, C) float32;
vectors are (..., D). Every forward caches what its backward needs; a
layer instance is therefore single-threaded during forward/backward,
matching the one-writer training model.
"""

from __future__ import annotations

import numpy as np

from .params import ParamStore


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Linear:
    """y = x @ W + b over the last axis. W: (d_in, d_out)."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, trainable: bool = True, bias: bool = True):
        self.store = store
        self.name = name
        self.bias = bias
        store.add(f"{name}/w", kaiming_uniform(rng, (d_in, d_out), d_in), trainable)
        if bias:
            store.add(f"{name}/b", np.zeros(d_out, np.float32), trainable)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = x @ self.store[f"{self.name}/w"]
        if self.bias:
            y = y + self.store[f"{self.name}/b"]
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._x
        w = self.store[f"{self.name}/w"]
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.store.accumulate_grad(f"{self.name}/w", x2.T @ dy2)
        if self.bias:
            self.store.accumulate_grad(f"{self.name}/b", dy2.sum(axis=0))
        return (dy2 @ w.T).reshape(x.shape)


class Conv2d:
    """2-D convolution, zero-padded "same" (pad = k//2), arbitrary stride.

    Weight layout (kh, kw, c_in, c_out). Forward/backward are expressed as
    k*k slice matmuls, which keeps the code short and numpy-fast.
    """

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 k: int, stride: int, rng: np.random.Generator, trainable: bool = True):
        self.store = store
        self.name = name
        self.k = k
        self.stride = stride
        self.c_in = c_in
        fan_in = k * k * c_in
        store.add(f"{name}/w", kaiming_uniform(rng, (k, k, c_in, c_out), fan_in), trainable)
        store.add(f"{name}/b", np.zeros(c_out, np.float32), trainable)
        self._xpad = None
        self._xshape = None

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        p = self.k // 2
        return (h + 2 * p - self.k) // self.stride + 1, (w + 2 * p - self.k) // self.stride + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ValueError(f"{self.name}: expected (N,H,W,{self.c_in}), got {x.shape}")
        n, h, w, _ = x.shape
        k, s, p = self.k, self.stride, self.k // 2
        ho, wo = self.out_hw(h, w)
        xpad = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        self._xpad, self._xshape = xpad, x.shape
        wgt = self.store[f"{self.name}/w"]
        y = np.tile(self.store[f"{self.name}/b"], (n, ho, wo, 1)).astype(
            np.result_type(x, np.float32))
        for i in range(k):
            for j in range(k):
                xs = xpad[:, i : i + s * ho : s, j : j + s * wo : s, :]
                y += xs @ wgt[i, j]
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, h, w, _ = self._xshape
        k, s, p = self.k, self.stride, self.k // 2
        ho, wo = dy.shape[1], dy.shape[2]
        xpad = self._xpad
        wgt = self.store[f"{self.name}/w"]
        dxpad = np.zeros_like(xpad)
        dw = np.zeros_like(wgt)
        dy2 = dy.reshape(-1, dy.shape[-1])
        for i in range(k):
            for j in range(k):
                xs = xpad[:, i : i + s * ho : s, j : j + s * wo : s, :]
                dw[i, j] = xs.reshape(-1, self.c_in).T @ dy2
                dxpad[:, i : i + s * ho : s, j : j + s * wo : s, :] += dy @ wgt[i, j].T
        self.store.accumulate_grad(f"{self.name}/w", dw)
        self.store.accumulate_grad(f"{self.name}/b", dy2.sum(axis=0))
        return dxpad[:, p : p + h, p : p + w, :]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def _resize_coeffs(src: int, dst: int):
    # align-corners-false: sample centers at (i + 0.5) * src/dst - 0.5
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = (pos - i0).astype(np.float32)
    return i0, i1, frac


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    """Dense (dst, src) 1-D bilinear interpolation matrix (cached)."""
    key = (src, dst)
    m = _INTERP_CACHE.get(key)
    if m is None:
        i0, i1, frac = _resize_coeffs(src, dst)
        m = np.zeros((dst, src), np.float32)
        rows = np.arange(dst)
        np.add.at(m, (rows, i0), 1.0 - frac)
        np.add.at(m, (rows, i1), frac)
        _INTERP_CACHE[key] = m
    return m


_INTERP_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _apply_rows(mat: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    """Contract mat (dst, src) against the given axis of x."""
    moved = np.moveaxis(x, axis, -1)
    out = moved @ mat.T
    return np.moveaxis(out, -1, axis)


def bilinear_resize(x: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize (..., H, W, C) -> (..., H2, W2, C), align-corners-false.

    Separable: y = My x Mx^T with 1-D interpolation matrices, which makes
    the adjoint (backward) a plain transposed application.
    """
    h2, w2 = out_hw
    if h2 < 1 or w2 < 1:
        raise ValueError("target size must be >= 1")
    h, w = x.shape[-3], x.shape[-2]
    y = _apply_rows(_interp_matrix(h, h2), x, -3)
    y = _apply_rows(_interp_matrix(w, w2), y, -2)
    return y.astype(x.dtype)


def bilinear_resize_backward(dy: np.ndarray, in_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of bilinear_resize. dy: (..., H2, W2, C) -> (..., H, W, C)."""
    h, w = in_hw
    h2, w2 = dy.shape[-3], dy.shape[-2]
    dx = _apply_rows(_interp_matrix(h, h2).T, dy, -3)
    dx = _apply_rows(_interp_matrix(w, w2).T, dx, -2)
    return dx.astype(dy.dtype)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N, C)."""
    return x.mean(axis=(1, 2))


def global_avg_pool_backward(dy: np.ndarray, in_shape) -> np.ndarray:
    n, h, w, c = in_shape
    return np.broadcast_to(dy[:, None, None, :] / (h * w), in_shape).astype(dy.dtype)


def l2_normalize(x: np.ndarray, eps: float = 1e-12):
    """Normalize last axis to unit norm. Returns (y, norm) for backward."""
    norm = np.sqrt(np.sum(x.astype(np.float64) ** 2, axis=-1, keepdims=True)) + eps
    return (x / norm).astype(x.dtype), norm.astype(x.dtype)


def l2_normalize_backward(dy: np.ndarray, y: np.ndarray, norm: np.ndarray) -> np.ndarray:
    # d/dx (x/|x|) = (I - y y^T)/|x|
    proj = np.sum(dy * y, axis=-1, keepdims=True)
    return ((dy - y * proj) / norm).astype(dy.dtype)
