"""Named synthetic images used as toy-model targets, masks and depth maps."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor4


def constant(shape, value=0.0):
    return Tensor4.full(shape, value)


def checkerboard(shape, period=8, low=-1.0, high=1.0):
    n, c, h, w = shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cells = ((yy // period) + (xx // period)) % 2
    img = np.where(cells == 1, high, low)
    return Tensor4(np.broadcast_to(img, shape))


def radial_gradient(shape, center=1.0, edge=-1.0):
    """Linear falloff from ``center`` at the image middle to ``edge`` at the corners."""
    n, c, h, w = shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r = np.hypot(yy - cy, xx - cx)
    rmax = max(np.hypot(cy, cx), 1e-12)
    img = center + (edge - center) * (r / rmax)
    return Tensor4(np.broadcast_to(img, shape))


def half_plane(shape, axis="x", low=0.0, high=1.0):
    """Left/top half ``low``, right/bottom half ``high``."""
    n, c, h, w = shape
    img = np.full((h, w), low, dtype=np.float64)
    if axis == "x":
        img[:, w // 2:] = high
    elif axis == "y":
        img[h // 2:, :] = high
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    return Tensor4(np.broadcast_to(img, shape))


def noise(shape, seed=0, scale=1.0):
    from .sampler import gaussian_noise

    return Tensor4(gaussian_noise(seed, shape).f64() * scale)


PATTERNS = {
    "constant": constant,
    "checkerboard": checkerboard,
    "radial_gradient": radial_gradient,
    "half_plane": half_plane,
    "noise": noise,
}


def make(name, shape, **params):
    """Build the named pattern; unknown names or parameters raise ValueError."""
    try:
        fn = PATTERNS[name]
    except KeyError:
        raise ValueError(f"unknown pattern {name!r}; choose from {sorted(PATTERNS)}") from None
    try:
        return fn(tuple(shape), **params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for pattern {name!r}: {exc}") from None
