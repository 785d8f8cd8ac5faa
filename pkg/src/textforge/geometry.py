"""Thin-plate-spline warps, bilinear grid sampling and polyline helpers.

Coordinates follow one convention everywhere: a pixel with integer index
``(col, row)`` covers the square ``[col, col+1) x [row, row+1)`` and its
centre sits at ``(col + 0.5, row + 0.5)``.  Normalized coordinates divide
that by ``(width, height)``, so the centre of pixel ``(col, row)`` in an
``H x W`` image is ``((col + 0.5) / W, (row + 0.5) / H)``.

Images ("rasters") are plain ``numpy.uint8`` arrays of shape ``(H, W)`` or
``(H, W, C)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChain, DegenerateGeometry, SingularSystem

N_CHAIN = 10
N_FIDUCIALS = 2 * N_CHAIN

# Condition numbers above this are treated as a singular TPS system.
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ControlPolygon:
    """Ten top-edge and ten bottom-edge points, both ordered left to right."""

    top: np.ndarray
    bottom: np.ndarray

    def __post_init__(self):
        top = np.asarray(self.top, dtype=np.float64).reshape(-1, 2)
        bottom = np.asarray(self.bottom, dtype=np.float64).reshape(-1, 2)
        if top.shape != (N_CHAIN, 2) or bottom.shape != (N_CHAIN, 2):
            raise ValueError(
                f"control polygon needs {N_CHAIN}+{N_CHAIN} points, "
                f"got {len(top)}+{len(bottom)}"
            )
        if not (np.all(np.isfinite(top)) and np.all(np.isfinite(bottom))):
            raise ValueError("control polygon has non-finite coordinates")
        object.__setattr__(self, "top", top)
        object.__setattr__(self, "bottom", bottom)

    @classmethod
    def from_points(cls, points) -> "ControlPolygon":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if len(pts) != N_FIDUCIALS:
            raise ValueError(f"expected {N_FIDUCIALS} points, got {len(pts)}")
        return cls(pts[:N_CHAIN], pts[N_CHAIN:])

    @property
    def points(self) -> np.ndarray:
        """All 20 points, top chain first."""
        return np.concatenate([self.top, self.bottom])

    def transformed(self, fn) -> "ControlPolygon":
        """Apply ``fn`` (an (N, 2) -> (N, 2) map) to both chains."""
        return ControlPolygon(fn(self.top), fn(self.bottom))

    def scaled(self, sx: float, sy: float) -> "ControlPolygon":
        s = np.array([sx, sy])
        return ControlPolygon(self.top * s, self.bottom * s)

    def shifted(self, dx: float, dy: float) -> "ControlPolygon":
        d = np.array([dx, dy])
        return ControlPolygon(self.top + d, self.bottom + d)

    def bbox(self):
        pts = self.points
        return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()

    def crossing_pairs(self):
        """Index pairs (i, j) whose column segments intersect."""
        bad = []
        for i in range(N_CHAIN):
            for j in range(i + 1, N_CHAIN):
                if segments_intersect(self.top[i], self.bottom[i], self.top[j], self.bottom[j]):
                    bad.append((i, j))
        return bad

    def is_valid(self) -> bool:
        return not self.crossing_pairs()

    def __eq__(self, other):
        if not isinstance(other, ControlPolygon):
            return NotImplemented
        return np.array_equal(self.top, other.top) and np.array_equal(self.bottom, other.bottom)

    __hash__ = None


@dataclass(frozen=True)
class GridSpec:
    out_height: int = 64
    out_width: int = 256
    margin_x: float = 0.05
    margin_y: float = 0.05

    def __post_init__(self):
        if self.out_height < 2 or self.out_width < 2:
            raise ValueError("output grid must be at least 2x2")
        for m in (self.margin_x, self.margin_y):
            if not 0.0 <= m < 0.5:
                raise ValueError(f"margin {m} outside [0, 0.5)")


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection test for two closed segments."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 and d2 and d3 and d4:
        return True
    return ((d1 == 0 and on_segment(q1, q2, p1)) or (d2 == 0 and on_segment(q1, q2, p2))
            or (d3 == 0 and on_segment(p1, p2, q1)) or (d4 == 0 and on_segment(p1, p2, q2)))


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def apply_affine(points, A, b=(0.0, 0.0)) -> np.ndarray:
    """Map points by ``p -> A @ p + b``."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ np.asarray(A, dtype=np.float64).T + np.asarray(b, dtype=np.float64)


def canonical_fiducials(spec: GridSpec = GridSpec()) -> np.ndarray:
    """Rectified-space fiducials: two rows of ten evenly spaced points."""
    xs = np.linspace(spec.margin_x, 1.0 - spec.margin_x, N_CHAIN)
    top = np.stack([xs, np.full(N_CHAIN, spec.margin_y)], axis=1)
    bottom = np.stack([xs, np.full(N_CHAIN, 1.0 - spec.margin_y)], axis=1)
    return np.concatenate([top, bottom])


# --------------------------------------------------------------------------
# thin-plate spline


def tps_kernel(r2: np.ndarray) -> np.ndarray:
    """U evaluated on squared distances: r^2 * ln(r^2), with U(0) = 0."""
    r2 = np.asarray(r2, dtype=np.float64)
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = r2[nz] * np.log(r2[nz])
    return out


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def tps_system(dst: np.ndarray, lam: float = 0.0) -> np.ndarray:
    """The (N+3) x (N+3) TPS matrix built on ``dst`` control points."""
    n = len(dst)
    K = tps_kernel(_sq_dists(dst, dst)) + lam * np.eye(n)
    P = np.hstack([np.ones((n, 1)), dst])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n] = K
    L[:n, n:] = P
    L[n:, :n] = P.T
    return L


@dataclass(frozen=True, eq=False)
class TpsWarp:
    """A solved TPS mapping from rectified (dst) space to source space.

    ``f(q) = affine[0] + q_x * affine[1] + q_y * affine[2]
    + sum_i weights[i] * U(|q - dst_i|)``, evaluated per output coordinate.
    """

    src_fiducials: np.ndarray
    dst_fiducials: np.ndarray
    weights: np.ndarray
    affine: np.ndarray
    lam: float = 0.0

    def __call__(self, points) -> np.ndarray:
        q = np.asarray(points, dtype=np.float64)
        shape = q.shape
        q = q.reshape(-1, 2)
        U = tps_kernel(_sq_dists(q, self.dst_fiducials))
        out = self.affine[0] + q @ self.affine[1:] + U @ self.weights
        return out.reshape(shape)

    def side_conditions(self) -> np.ndarray:
        """(3, 2) array of sum(w), sum(w*x), sum(w*y); zero for a valid solve."""
        P = np.hstack([np.ones((len(self.dst_fiducials), 1)), self.dst_fiducials])
        return P.T @ self.weights


def tps_solve(dst, src, lam: float = 0.0) -> TpsWarp:
    """Fit the TPS that carries ``dst`` points onto ``src`` points.

    Raises SingularSystem for duplicate or collinear ``dst`` points when the
    regularizer cannot rescue the system.
    """
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    if dst.shape != src.shape:
        raise ValueError(f"fiducial count mismatch: {len(dst)} vs {len(src)}")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if not (np.all(np.isfinite(dst)) and np.all(np.isfinite(src))):
        raise ValueError("non-finite fiducials")
    n = len(dst)
    L = tps_system(dst, lam)
    cond = np.linalg.cond(L)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystem(f"TPS system is singular (condition number {cond:.3g})")
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = src
    try:
        # LAPACK gesv: LU with partial pivoting.
        sol = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return TpsWarp(
        src_fiducials=src, dst_fiducials=dst,
        weights=sol[:n], affine=sol[n:], lam=float(lam),
    )


# --------------------------------------------------------------------------
# sampling


def bilinear_sample(img: np.ndarray, xs, ys) -> np.ndarray:
    """Sample ``img`` at continuous pixel coordinates with border clamping.

    ``xs``/``ys`` use the pixel-centre convention of this module (centre of
    pixel 0 is 0.5).  Returns float64 values with shape ``xs.shape`` plus the
    channel axis, if ``img`` has one.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    fx = np.clip(np.asarray(xs, dtype=np.float64) - 0.5, 0.0, w - 1)
    fy = np.clip(np.asarray(ys, dtype=np.float64) - 0.5, 0.0, h - 1)
    x0 = np.floor(fx).astype(np.intp)
    y0 = np.floor(fy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = fx - x0
    ay = fy - y0
    if img.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    data = img.astype(np.float64, copy=False)
    top = data[y0, x0] * (1 - ax) + data[y0, x1] * ax
    bot = data[y1, x0] * (1 - ax) + data[y1, x1] * ax
    return top * (1 - ay) + bot * ay


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half up and saturate to the 8-bit range."""
    return np.clip(np.floor(np.asarray(values) + 0.5), 0, 255).astype(np.uint8)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) normalized coordinates of pixel centres."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def resize_bilinear(img: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Half-pixel-aligned bilinear resize (no antialiasing)."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    xs = (np.arange(out_width) + 0.5) * (w / out_width)
    ys = (np.arange(out_height) + 0.5) * (h / out_height)
    gx, gy = np.meshgrid(xs, ys)
    return to_uint8(bilinear_sample(img, gx, gy))


def tps_sample(warp: TpsWarp, source_image: np.ndarray, spec: GridSpec = GridSpec(),
               frame_scale=(1.0, 1.0)) -> np.ndarray:
    """Backward-warp ``source_image`` onto the rectified ``spec`` grid.

    ``frame_scale`` multiplies the normalized output coordinates before they
    reach the warp; it must match the scale applied to the warp's ``dst``
    fiducials (see ``rectify_tps``).
    """
    img = np.asarray(source_image)
    if img.size == 0:
        raise ValueError("empty source image")
    h, w = img.shape[:2]
    grid = pixel_grid(spec.out_height, spec.out_width) * np.asarray(frame_scale, dtype=np.float64)
    src = warp(grid)
    return to_uint8(bilinear_sample(img, src[..., 0] * w, src[..., 1] * h))


def polygon_aspect(poly: ControlPolygon) -> float:
    """Physical width/height of the text region: mean chain length over mean column height."""
    length = 0.5 * (arc_lengths(poly.top)[-1] + arc_lengths(poly.bottom)[-1])
    height = float(np.mean(np.hypot(*(poly.bottom - poly.top).T)))
    if not height > 0:
        return 1.0
    return max(length / height, 1e-6)


def rectify_tps(img: np.ndarray, polygon: ControlPolygon, spec: GridSpec = GridSpec(),
                lam: float = 0.0, aspect: float | None = None) -> np.ndarray:
    """Rectify the region under a pixel-space ``polygon`` to a strip of the grid's size.

    The spline is fitted in a rectified frame stretched to the region's own
    aspect ratio (``aspect`` overrides it; 1.0 gives the plain unit square).
    The kernel is radial, so an unstretched frame squeezes a long, thin text
    band into a square and bends columns between the fiducials.
    """
    h, w = np.asarray(img).shape[:2]
    columns = np.hypot(*(polygon.bottom - polygon.top).T)
    if np.any(columns == 0) or arc_lengths(polygon.top)[-1] == 0:
        raise DegenerateGeometry("polygon has a zero-length column or edge")
    if aspect is None:
        aspect = polygon_aspect(polygon)
    scale = np.array([aspect, 1.0])
    src = polygon.points / np.array([w, h], dtype=np.float64)
    warp = tps_solve(canonical_fiducials(spec) * scale, src, lam)
    return tps_sample(warp, img, spec, scale)


# --------------------------------------------------------------------------
# polylines


def arc_lengths(points) -> np.ndarray:
    """Cumulative arc length at each vertex, starting from 0."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_chain(points, n: int) -> np.ndarray:
    """``n`` points at equal arc-length spacing along a polyline.

    The first and last output points are the polyline's endpoints exactly.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2 or n < 2:
        raise ValueError("need at least 2 input points and n >= 2")
    s = arc_lengths(pts)
    total = s[-1]
    if not total > 0:
        raise DegenerateChain("polyline has zero length")
    targets = np.linspace(0.0, total, n)
    out = np.stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])], axis=1)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def polygon_ring(poly: ControlPolygon) -> np.ndarray:
    """Closed outline: top chain left to right, then bottom chain right to left."""
    return np.concatenate([poly.top, poly.bottom[::-1]])


def points_in_ring(ring, points) -> np.ndarray:
    """Even-odd point-in-polygon test for (N, 2) points."""
    ring = np.asarray(ring, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0:1], pts[:, 1:2]
    a = ring
    b = np.roll(ring, -1, axis=0)
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = ax + (y - ay) * (bx - ax) / (by - ay)
    return np.count_nonzero(straddle & (x < xcross), axis=1) % 2 == 1


def distance_to_ring(ring, points) -> np.ndarray:
    """Euclidean distance from each point to the closed outline."""
    ring = np.asarray(ring, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    a = ring[None]
    d = np.roll(ring, -1, axis=0)[None] - a
    p = pts[:, None]
    dd = np.einsum("ijk,ijk->ij", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dd > 0, np.einsum("ijk,ijk->ij", p - a, d) / dd, 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[..., None] * d
    return np.sqrt(((p - proj) ** 2).sum(-1)).min(axis=1)


def outside_distance(poly: ControlPolygon, points) -> np.ndarray:
    """How far each point lies outside the polygon's band (0 when inside)."""
    ring = polygon_ring(poly)
    dist = distance_to_ring(ring, points)
    return np.where(points_in_ring(ring, points), 0.0, dist)
