"""Strip rectification driven by centre-line geometry.

A text region is described by an ordered centre line with a radius at each
point.  ``unroll`` walks the centre line at even arc-length steps and samples
the image along the local normal, producing a straight horizontal strip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateGeometry
from .geometry import ControlPolygon, arc_lengths, bilinear_sample, to_uint8


@dataclass(frozen=True, eq=False)
class SnakeGeometry:
    centers: np.ndarray
    radii: np.ndarray
    # Pixel offset from each centre toward the top edge, when known.  Used
    # only to decide which side of the centre line is "up".
    top_hint: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        r = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if len(c) < 2:
            raise DegenerateGeometry("need at least 2 centre points")
        if len(r) != len(c):
            raise ValueError(f"{len(r)} radii for {len(c)} centres")
        if np.any(~np.isfinite(c)) or np.any(~np.isfinite(r)):
            raise DegenerateGeometry("non-finite geometry")
        if np.any(r <= 0):
            raise DegenerateGeometry("radii must be positive")
        if np.any(np.hypot(*np.diff(c, axis=0).T) == 0):
            raise DegenerateGeometry("consecutive centres coincide")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)
        if self.top_hint is not None:
            object.__setattr__(self, "top_hint", np.asarray(self.top_hint, dtype=np.float64).reshape(-1, 2))

    @property
    def length(self) -> float:
        return float(arc_lengths(self.centers)[-1])

    def smoothed(self, window: int = 3) -> "SnakeGeometry":
        """Moving-average centre line (endpoints kept); radii untouched."""
        if window < 2 or len(self.centers) <= 2:
            return self
        k = window // 2
        c = self.centers.copy()
        for i in range(1, len(c) - 1):
            lo, hi = max(0, i - k), min(len(c), i + k + 1)
            c[i] = self.centers[lo:hi].mean(axis=0)
        return SnakeGeometry(c, self.radii, self.top_hint)


@dataclass(frozen=True)
class StripSpec:
    out_height: int = 64
    width: int | None = None  # None keeps the aspect ratio

    def __post_init__(self):
        if self.out_height < 2:
            raise ValueError("out_height must be >= 2")
        if self.width is not None and self.width < 1:
            raise ValueError("width must be >= 1")


def geometry_from_polygon(poly: ControlPolygon) -> SnakeGeometry:
    """Centre line at chain midpoints, radius = half the column length."""
    chord = poly.bottom - poly.top
    radii = np.hypot(*chord.T) / 2
    if np.any(radii == 0):
        bad = np.flatnonzero(radii == 0).tolist()
        raise DegenerateGeometry(f"zero-length column(s) at {bad}")
    centers = (poly.top + poly.bottom) / 2
    return SnakeGeometry(centers, radii, top_hint=poly.top - centers)


def _tangents(points: np.ndarray) -> np.ndarray:
    """Unit tangents from central differences (one-sided at the ends)."""
    t = np.gradient(points, axis=0)
    norm = np.hypot(t[:, 0], t[:, 1])[:, None]
    if np.any(norm == 0):
        raise DegenerateGeometry("centre line folds back on itself")
    return t / norm


def centre_curve(geo: SnakeGeometry):
    """Natural cubic spline through the centres, parametrized by chord length.

    Sparse annotations (ten points on a half circle) make a polyline centre
    line visibly faceted; the spline keeps normals turning smoothly and is
    exact on straight, evenly or unevenly spaced collinear points.
    """
    s_nodes = arc_lengths(geo.centers)
    if len(s_nodes) == 2:
        c0, c1 = geo.centers
        return lambda s: c0 + (np.asarray(s)[:, None] / s_nodes[-1]) * (c1 - c0)
    return CubicSpline(s_nodes, geo.centers, axis=0, bc_type="natural")


def strip_width(geo: SnakeGeometry, spec: StripSpec) -> int:
    if spec.width is not None:
        return spec.width
    return max(1, int(math.floor(spec.out_height * geo.length / (2 * geo.radii.mean()) + 0.5)))


def normal_sign(geo: SnakeGeometry) -> float:
    """+1 if the left-hand-down normal points away from the top edge, else -1.

    Per-point votes; the majority wins so a few noisy annotations cannot flip
    the strip.
    """
    if geo.top_hint is None:
        return 1.0
    t = _tangents(geo.centers)
    n = np.stack([-t[:, 1], t[:, 0]], axis=1)
    votes = np.einsum("ij,ij->i", geo.top_hint, n)
    disagree = np.count_nonzero(votes > 0)
    return -1.0 if disagree > len(votes) / 2 else 1.0


def unroll(img: np.ndarray, geo: SnakeGeometry, spec: StripSpec = StripSpec()) -> np.ndarray:
    """Resample the band around the centre line into an ``out_height`` tall strip.

    Row 0 is the top-edge side.  Column ``j`` samples the centre line at arc
    length ``(j + 0.5) / W`` of the total; row ``i`` sits at normalized offset
    ``s = (2i + 1) / H - 1`` times the local radius, so the outer rows reach
    the band edges the same way pixel centres reach an image's edges.
    """
    img = np.asarray(img)
    width = strip_width(geo, spec)
    height = spec.out_height
    s_nodes = arc_lengths(geo.centers)
    total = s_nodes[-1]
    s_cols = (np.arange(width) + 0.5) / width * total
    col_pts = centre_curve(geo)(s_cols)
    r = np.interp(s_cols, s_nodes, geo.radii)
    if width >= 2:
        t = _tangents(col_pts)
    else:
        t = _tangents(geo.centers).mean(axis=0, keepdims=True)
        t /= np.hypot(*t[0])
    n = np.stack([-t[:, 1], t[:, 0]], axis=1) * normal_sign(geo)
    s_rows = (2 * np.arange(height) + 1) / height - 1.0
    off = s_rows[:, None, None] * (r[None, :, None] * n[None, :, :])
    pts = col_pts[None, :, :] + off
    return to_uint8(bilinear_sample(img, pts[..., 0], pts[..., 1]))


def unroll_polygon(img: np.ndarray, poly: ControlPolygon, spec: StripSpec = StripSpec(),
                   smooth: bool = False) -> np.ndarray:
    geo = geometry_from_polygon(poly)
    if smooth:
        geo = geo.smoothed(3)
    return unroll(img, geo, spec)
