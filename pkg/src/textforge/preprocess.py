"""Input pipelines: fixed resize, normalization, squarization, rotation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonSquareInput
from .geometry import ControlPolygon, resize_bilinear

FIXED_HEIGHT = 64
FIXED_WIDTH = 256
GREY = 128
# (255 - 128) / 128
NORM_MAX = 0.9921875


def fixed_resize(img: np.ndarray, height: int = FIXED_HEIGHT, width: int = FIXED_WIDTH) -> np.ndarray:
    """Bilinear resize to 64x256, ignoring aspect ratio."""
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("empty image")
    return resize_bilinear(img, height, width)


def normalize(img: np.ndarray) -> np.ndarray:
    """Map 8-bit samples to [-1.0, 0.9921875] via (v - 128) / 128."""
    return (np.asarray(img, dtype=np.float32) - 128.0) / 128.0


def denormalize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 128.0 + 128.0), 0, 255).astype(np.uint8)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Placement:
    """Where the resized content landed on the square canvas."""

    offset_x: int
    offset_y: int
    content_width: int
    content_height: int
    src_width: int
    src_height: int
    side: int

    @property
    def scale_x(self) -> float:
        return self.content_width / self.src_width

    @property
    def scale_y(self) -> float:
        return self.content_height / self.src_height

    def apply(self, points) -> np.ndarray:
        """Map source-image pixel coordinates onto the canvas."""
        pts = np.asarray(points, dtype=np.float64)
        return pts * np.array([self.scale_x, self.scale_y]) + np.array([self.offset_x, self.offset_y])

    def apply_polygon(self, poly: ControlPolygon) -> ControlPolygon:
        return poly.transformed(self.apply)


def squarize(img: np.ndarray, side: int = 256):
    """Resize the long side to ``side`` and pad the short side with grey.

    Returns ``(canvas, placement)``.  The odd leftover padding pixel goes to
    the bottom/right.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("empty image")
    h, w = img.shape[:2]
    scale = side / max(h, w)
    ch = min(side, max(1, _round_half_up(h * scale)))
    cw = min(side, max(1, _round_half_up(w * scale)))
    content = img if (ch, cw) == (h, w) else resize_bilinear(img, ch, cw)
    canvas = np.full((side, side) + img.shape[2:], GREY, dtype=np.uint8)
    oy = (side - ch) // 2
    ox = (side - cw) // 2
    canvas[oy:oy + ch, ox:ox + cw] = content
    return canvas, Placement(ox, oy, cw, ch, w, h, side)


def rotate_points_k90(points, k: int, side: float) -> np.ndarray:
    """Rotate pixel coordinates counter-clockwise by k*90 degrees in a side x side frame."""
    pts = np.asarray(points, dtype=np.float64).copy()
    for _ in range(k % 4):
        pts = np.stack([pts[..., 1], side - pts[..., 0]], axis=-1)
    return pts


def rotate_k90(img: np.ndarray, k: int, polygon: ControlPolygon | None = None):
    """Rotate counter-clockwise by k quarter turns; returns ``(image, polygon)``.

    The polygon (if given) is mapped with the image and keeps its chain
    order.  Requires a square image when a polygon is supplied.
    """
    img = np.asarray(img)
    out = np.ascontiguousarray(np.rot90(img, k))
    if polygon is None:
        return out, None
    h, w = img.shape[:2]
    if h != w:
        raise NonSquareInput(f"polygon rotation needs a square image, got {h}x{w}")
    return out, polygon.transformed(lambda p: rotate_points_k90(p, k, h))


@dataclass(frozen=True)
class AugmentPolicy:
    rot_prob_each: float = 0.05

    def __post_init__(self):
        if self.rot_prob_each < 0 or 3 * self.rot_prob_each > 1:
            raise ValueError("rotation probabilities must satisfy 0 <= 3p <= 1")


def draw_rotation(policy: AugmentPolicy, rng: np.random.Generator) -> int:
    """Pick k in {0,1,2,3}; each non-zero k has probability ``rot_prob_each``."""
    u = rng.random()
    p = policy.rot_prob_each
    if u < p:
        return 1
    if u < 2 * p:
        return 2
    if u < 3 * p:
        return 3
    return 0


def augment(img: np.ndarray, polygon: ControlPolygon | None, policy: AugmentPolicy,
            rng: np.random.Generator):
    """Randomly rotate by 90/180/270 degrees. Returns ``(image, polygon, k)``."""
    k = draw_rotation(policy, rng)
    if k == 0:
        return np.asarray(img), polygon, 0
    out, poly = rotate_k90(img, k, polygon)
    return out, poly, k


def downsample_half(img: np.ndarray) -> np.ndarray:
    """Bilinear resize to (H // 2, W // 2)."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ValueError("downsample_half needs H, W >= 2")
    return resize_bilinear(img, h // 2, w // 2)
