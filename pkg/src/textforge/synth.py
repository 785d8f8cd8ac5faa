"""Curved synthetic scene-text generation with exact geometric annotations.

Words are laid out along a straight line, a parabola ``y = alpha * x**2``
or a circular arc, rasterized glyph by glyph, and composited onto a crop of
a background image.  Every sample carries its character boxes and a 20-point
control polygon.

Layout coordinates are pixels with y pointing down; the origin is the
middle of the word (the apex of a curve).
"""
from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .dataio import Concavity, CurveKind, CurveSpec, SampleRecord
from .errors import AssetError, EmptyText, LayoutOverflow
from .geometry import N_CHAIN, ControlPolygon, outside_distance, resample_chain, rotation_matrix, to_uint8

ALPHA_RANGES = ((-0.50, -0.45), (0.50, 0.55))
BEND_RANGE = (math.pi / 6, 1.9 * math.pi)
MIN_CONTRAST = 60.0
# Box vertices may sit at most this far outside the emitted polygon.
BAND_TOLERANCE = 2.0
IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")
FONT_EXTS = (".ttf", ".otf", ".ttc")


@dataclass(frozen=True, eq=False)
class CharPlacement:
    char: str
    center: np.ndarray
    rotation: float
    box: np.ndarray  # TL, TR, BR, BL


# --------------------------------------------------------------------------
# sampling


def sample_alpha(rng: np.random.Generator, ranges=ALPHA_RANGES) -> float:
    """Parabola coefficient, uniform over the union of two equal-width intervals."""
    lo, hi = ranges[int(rng.random() < 0.5)]
    return float(rng.uniform(lo, hi))


def sample_bend(rng: np.random.Generator, bend_range=BEND_RANGE) -> float:
    return float(rng.uniform(*bend_range))


# --------------------------------------------------------------------------
# layout


def _char_centers(advances: np.ndarray) -> np.ndarray:
    """Straight-line centre x of each char, symmetric about 0."""
    x = np.cumsum(advances) - advances / 2
    return x - (x[0] + x[-1]) / 2


def layout_word(text: str, advances, curve: CurveSpec, height: float | None = None) -> list[CharPlacement]:
    """Place characters along ``curve``.

    ``advances`` holds one horizontal advance per character; ``height`` is
    the box height (defaults to the largest advance).

    Parabola: x is normalized by the half-span of the character centres, so
    the outer characters sit at x = +-1, with ``y = alpha * x**2`` in the same
    units and rotation ``atan(2 * alpha * x)``.  Circle: radius is the
    centre-to-centre span divided by ``bend_angle``; characters keep their
    straight-line arc length, measured from the apex.
    """
    if not text:
        raise EmptyText("cannot lay out empty text")
    adv = np.asarray(advances, dtype=np.float64).reshape(-1)
    if len(adv) != len(text):
        raise ValueError(f"{len(adv)} advances for {len(text)} characters")
    if np.any(adv <= 0):
        raise ValueError("advances must be positive")
    h = float(adv.max() if height is None else height)
    xs = _char_centers(adv)
    half = float(np.abs(xs).max())

    if curve.kind is CurveKind.STRAIGHT or half == 0.0:
        centers = np.stack([xs, np.zeros_like(xs)], axis=1)
        thetas = np.zeros_like(xs)
    elif curve.kind is CurveKind.PARABOLA:
        u = xs / half
        centers = np.stack([xs, curve.alpha * u * u * half], axis=1)
        thetas = np.arctan(2.0 * curve.alpha * u)
    else:
        radius = 2.0 * half / curve.bend_angle
        phi = xs / radius
        # DOWN is an arch: the circle centre lies below the text.
        sign = 1.0 if curve.concavity is not Concavity.UP else -1.0
        centers = np.stack([radius * np.sin(phi), sign * radius * (1.0 - np.cos(phi))], axis=1)
        thetas = sign * phi

    local = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    out = []
    for ch, a, c, t in zip(text, adv, centers, thetas):
        box = (local * np.array([a, h])) @ rotation_matrix(t).T + c
        out.append(CharPlacement(ch, c, float(t), box))
    return out


def glyph_boxes(placements: list[CharPlacement]) -> list[np.ndarray]:
    """Boxes of the visible (non-space) characters."""
    return [p.box for p in placements if not p.char.isspace()]


def _line_intersection(p1, p2, q1, q2):
    d1, d2 = p2 - p1, q2 - q1
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-12:
        return None
    t = ((q1[0] - p1[0]) * d2[1] - (q1[1] - p1[1]) * d2[0]) / den
    return p1 + t * d1


def box_chain(boxes, left: int, right: int) -> np.ndarray:
    """Outline of one side of a row of boxes, following the union's edge.

    Where neighbouring boxes leave a wedge-shaped gap both corners are
    kept; where their edges overlap, the two corners are replaced by the
    crossing point of the edges, so the chain never doubles back.
    """
    pts = [boxes[0][left], boxes[0][right]]
    prev = boxes[0]
    for b in boxes[1:]:
        a0, a1 = prev[left], prev[right]
        direction = a1 - a0
        if np.dot(b[left] - a1, direction) >= 0:
            gap = b[left] - pts[-1]
            if gap[0] * gap[0] + gap[1] * gap[1] > 1e-18:
                pts.append(b[left])
        else:
            x = _line_intersection(a0, a1, b[left], b[right])
            if x is None or np.dot(x - a0, direction) <= 0 or np.dot(b[right] - x, b[right] - b[left]) <= 0:
                x = (a1 + b[left]) / 2
            pts[-1] = x
        pts.append(b[right])
        prev = b
    return np.array(pts)


def polygon_from_boxes(boxes) -> ControlPolygon:
    """Reduce ordered character boxes to a 10 + 10 point control polygon.

    Top and bottom outlines of the box row (``box_chain``) are resampled by
    arc length to ten points each.
    """
    boxes = [np.asarray(b, dtype=np.float64) for b in boxes]
    if not boxes:
        raise EmptyText("no visible characters")
    top = resample_chain(box_chain(boxes, 0, 1), N_CHAIN)
    bottom = resample_chain(box_chain(boxes, 3, 2), N_CHAIN)
    return ControlPolygon(top, bottom)


def band_violation(poly: ControlPolygon, boxes) -> float:
    """Largest distance of any box vertex outside the polygon."""
    if not boxes:
        return 0.0
    return float(outside_distance(poly, np.concatenate(boxes)).max())


# --------------------------------------------------------------------------
# rasterization


def _layout_frame(placements, pad: float):
    corners = np.concatenate([p.box for p in placements])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    width = int(math.ceil(hi[0] - lo[0] + 2 * pad))
    height = int(math.ceil(hi[1] - lo[1] + 2 * pad))
    return pad - lo, max(width, 1), max(height, 1)


def _shift(placements, offset) -> list[CharPlacement]:
    return [CharPlacement(p.char, p.center + offset, p.rotation, p.box + offset) for p in placements]


def rasterize_blocks(placements, width: int, height: int, ink_frac: float = 0.8,
                     supersample: int = 4) -> np.ndarray:
    """Coverage mask in [0, 1]: each glyph is a filled block inside its box.

    The block keeps the box's full height and ``ink_frac`` of its advance.
    """
    s = supersample
    canvas = Image.new("L", (width * s, height * s), 0)
    draw = ImageDraw.Draw(canvas)
    inset = (1.0 - ink_frac) / 2
    for p in placements:
        if p.char.isspace():
            continue
        tl, tr, br, bl = p.box
        quad = [tl + (tr - tl) * inset, tr - (tr - tl) * inset,
                br - (br - bl) * inset, bl + (br - bl) * inset]
        # PIL addresses pixel centres at integer coordinates.
        draw.polygon([(x * s - 0.5, y * s - 0.5) for x, y in quad], fill=255)
    return np.asarray(canvas.reduce(s), dtype=np.float64) / 255.0


def rasterize_font(placements, font: ImageFont.FreeTypeFont, width: int, height: int) -> np.ndarray:
    """Coverage mask in [0, 1] with each glyph drawn rotated about its box centre."""
    ascent, descent = font.getmetrics()
    cell_h = ascent + descent
    mask = np.zeros((height, width), dtype=np.float64)
    for p in placements:
        if p.char.isspace():
            continue
        adv = float(np.hypot(*(p.box[1] - p.box[0])))
        side = int(math.ceil(math.hypot(adv, cell_h))) + 4
        cx, cy = p.center - 0.5
        ox, oy = int(math.floor(cx)) - side // 2, int(math.floor(cy)) - side // 2
        lx, ly = cx - ox, cy - oy
        tile = Image.new("L", (side, side), 0)
        ImageDraw.Draw(tile).text((lx - adv / 2, ly - cell_h / 2), p.char, fill=255, font=font)
        tile = tile.rotate(-math.degrees(p.rotation), resample=Image.BICUBIC, center=(lx, ly))
        t = np.asarray(tile, dtype=np.float64) / 255.0
        # clip the tile against the canvas
        x0, y0 = max(ox, 0), max(oy, 0)
        x1, y1 = min(ox + side, width), min(oy + side, height)
        if x1 <= x0 or y1 <= y0:
            continue
        sub = t[y0 - oy:y1 - oy, x0 - ox:x1 - ox]
        np.maximum(mask[y0:y1, x0:x1], sub, out=mask[y0:y1, x0:x1])
    return mask


def composite(background: np.ndarray, mask: np.ndarray, color) -> np.ndarray:
    bg = np.asarray(background, dtype=np.float64)
    a = mask[..., None]
    return to_uint8(bg * (1.0 - a) + np.asarray(color, dtype=np.float64) * a)


def _build_record(placements, curve: CurveSpec, text: str, rid: str = "", image_path: str = ""):
    boxes = glyph_boxes(placements)
    return SampleRecord(
        id=rid, image_path=image_path, text=text,
        polygon=polygon_from_boxes(boxes), char_boxes=boxes,
        curve=curve, is_curved=curve.is_curved,
    )


def render_block_glyphs(text: str, advances, curve: CurveSpec, height: float | None = None,
                        pad: float | None = None):
    """Deterministic renderer: dark blocks on white, no font needed.

    Returns ``(image, record)`` where image is (H, W, 3) uint8 and the
    record's polygon and boxes are in image pixels.
    """
    placements = layout_word(text, advances, curve, height)
    h = float(np.asarray(advances).max() if height is None else height)
    pad = 0.25 * h if pad is None else pad
    offset, width, hgt = _layout_frame(placements, pad)
    placements = _shift(placements, offset)
    mask = rasterize_blocks(placements, width, hgt)
    img = to_uint8(255.0 * (1.0 - mask))
    img = np.repeat(img[..., None], 3, axis=2)
    return img, _build_record(placements, curve, text)


# --------------------------------------------------------------------------
# the engine


@dataclass(frozen=True)
class SynthConfig:
    fonts_dir: Path | None = None
    backgrounds_dir: Path | None = None
    corpus_path: Path | None = None
    count: int = 1
    single_word_prob: float = 0.30
    # None: calibrate from the corpus so the curved fraction hits curved_frac_target
    curve_prob_given_eligible: float | None = None
    curved_frac_target: float = 0.10
    circle_vs_parabola_prob: float = 0.5
    alpha_range: tuple = ALPHA_RANGES
    bend_angle_range: tuple = BEND_RANGE
    max_curved_len: int = 10
    seed: int = 0
    glyphs: str = "font"  # "font" or "block"
    text_height: tuple = (24, 48)
    min_text_height: int = 12
    max_canvas: tuple = (256, 1024)  # (height, width)
    max_line_chars: int = 30
    max_words: int = 4

    def __post_init__(self):
        for name in ("single_word_prob", "circle_vs_parabola_prob", "curved_frac_target"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.curve_prob_given_eligible is not None and not 0 <= self.curve_prob_given_eligible <= 1:
            raise ValueError("curve_prob_given_eligible must be in [0, 1]")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.glyphs not in ("font", "block"):
            raise ValueError("glyphs must be 'font' or 'block'")
        lo, hi = self.bend_angle_range
        if not 0 < lo <= hi < 2 * math.pi:
            raise ValueError("bend_angle_range must lie inside (0, 2*pi)")


_TOKEN = re.compile(r"\S+")
_EDGE_PUNCT = "\"'`()[]{}<>.,;:!?"


def _tokens(line: str) -> list[str]:
    words = (t.strip(_EDGE_PUNCT) for t in _TOKEN.findall(line))
    return [w for w in words if w]


def _list_files(directory, exts, what):
    if directory is None:
        raise AssetError(f"no {what} directory configured")
    d = Path(directory)
    if not d.is_dir():
        raise AssetError(f"{what} directory not found", d)
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in exts)
    if not files:
        raise AssetError(f"no {what} files", d)
    return files


@functools.lru_cache(maxsize=8)
def _load_background(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise AssetError(f"unreadable background ({exc})", path) from exc


@functools.lru_cache(maxsize=64)
def _load_font(path: Path, size: int) -> ImageFont.FreeTypeFont:
    try:
        return ImageFont.truetype(str(path), size)
    except (OSError, ValueError) as exc:
        raise AssetError(f"unreadable font ({exc})", path) from exc


def block_advance(ch: str, height: float) -> float:
    if ch.isspace():
        return 0.35 * height
    if ch.islower():
        return 0.5 * height
    return 0.6 * height


@dataclass
class SamplePlan:
    """The random decisions behind one sample, before any pixels are drawn."""

    text: str
    single_word: bool
    curve: CurveSpec
    text_height: float
    font_index: int
    background_index: int
    pad: float
    color_seed: int
    notes: list = field(default_factory=list)


class Synthesizer:
    """Loads assets once and renders samples by index."""

    def __init__(self, config: SynthConfig):
        self.config = config
        if config.corpus_path is None or not Path(config.corpus_path).is_file():
            raise AssetError("corpus file not found", config.corpus_path)
        try:
            lines = Path(config.corpus_path).read_text(encoding="utf-8").splitlines()
        except (OSError, UnicodeDecodeError) as exc:
            raise AssetError(f"unreadable corpus ({exc})", config.corpus_path) from exc
        self.lines = [t for t in (_tokens(line) for line in lines) if t]
        self.words = [w for t in self.lines for w in t]
        if not self.words:
            raise AssetError("corpus has no words", config.corpus_path)
        self.multi_lines = [t for t in self.lines if len(t) >= 2]
        self.backgrounds = _list_files(config.backgrounds_dir, IMAGE_EXTS, "background")
        self.fonts = _list_files(config.fonts_dir, FONT_EXTS, "font") if config.glyphs == "font" else []
        self.eligible_fraction = sum(len(w) <= config.max_curved_len for w in self.words) / len(self.words)
        self.curve_prob = self._curve_prob()

    def _curve_prob(self) -> float:
        cfg = self.config
        if cfg.curve_prob_given_eligible is not None:
            return cfg.curve_prob_given_eligible
        reach = cfg.single_word_prob * self.eligible_fraction
        if reach == 0:
            return 0.0
        return min(1.0, cfg.curved_frac_target / reach)

    # -- planning ----------------------------------------------------------

    def rng(self, index: int, attempt: int = 0) -> np.random.Generator:
        key = [self.config.seed & (2**64 - 1), index]
        if attempt:
            key.append(attempt)
        return np.random.default_rng(key)

    def _pick_text(self, rng):
        cfg = self.config
        if rng.random() < cfg.single_word_prob or not self.multi_lines:
            return self.words[int(rng.integers(len(self.words)))], True
        toks = self.multi_lines[int(rng.integers(len(self.multi_lines)))]
        n = int(rng.integers(2, min(cfg.max_words, len(toks)) + 1))
        start = int(rng.integers(len(toks) - n + 1))
        run = toks[start:start + n]
        while len(run) > 2 and len(" ".join(run)) > cfg.max_line_chars:
            run = run[:-1]
        return " ".join(run), False

    def _pick_curve(self, rng, text: str, single: bool) -> CurveSpec:
        cfg = self.config
        if not single or len(text) > cfg.max_curved_len:
            return CurveSpec.straight()
        if not rng.random() < self.curve_prob:
            return CurveSpec.straight()
        if rng.random() < cfg.circle_vs_parabola_prob:
            concavity = Concavity.UP if rng.random() < 0.5 else Concavity.DOWN
            return CurveSpec.circle(sample_bend(rng, cfg.bend_angle_range), concavity)
        return CurveSpec.parabola(sample_alpha(rng, cfg.alpha_range))

    def plan(self, index: int, attempt: int = 0) -> SamplePlan:
        cfg = self.config
        rng = self.rng(index, attempt)
        text, single = self._pick_text(rng)
        curve = self._pick_curve(rng, text, single)
        lo, hi = cfg.text_height
        return SamplePlan(
            text=text, single_word=single, curve=curve,
            text_height=float(rng.uniform(lo, hi)),
            font_index=int(rng.integers(len(self.fonts))) if self.fonts else -1,
            background_index=int(rng.integers(len(self.backgrounds))),
            pad=float(rng.uniform(0.1, 0.4)),
            color_seed=int(rng.integers(2**63)),
        )

    # -- layout ------------------------------------------------------------

    def _advances(self, text: str, height: float, font):
        if font is None:
            return np.array([block_advance(c, height) for c in text]), height
        ascent, descent = font.getmetrics()
        adv = np.array([max(font.getlength(c), 1.0) for c in text])
        return adv, float(ascent + descent)

    def _fit_curve(self, text, adv, box_h, curve):
        """Layout with circle bends shrunk until the polygon hugs the boxes.

        A tight arc on a short word can fold the inner chain or bow the
        10-point outline away from the glyph corners; the bend is reduced in
        steps while it stays inside the configured range, and a parabola is
        used when no admissible bend works.
        """
        if curve.kind is CurveKind.CIRCLE:
            lo = self.config.bend_angle_range[0]
            span = float(np.ptp(_char_centers(adv)))
            # keep the inner edge of the arc at least half a box height from its centre
            bend = min(curve.bend_angle, span / box_h) if span > 0 else curve.bend_angle
            while bend >= lo:
                trial = replace(curve, bend_angle=bend)
                placements = layout_word(text, adv, trial, box_h)
                boxes = glyph_boxes(placements)
                poly = polygon_from_boxes(boxes)
                if poly.is_valid() and band_violation(poly, boxes) <= BAND_TOLERANCE:
                    return placements, trial
                bend *= 0.85
            curve = CurveSpec.parabola(math.copysign(
                self.config.alpha_range[1][0], -1.0 if curve.concavity is Concavity.UP else 1.0))
        return layout_word(text, adv, curve, box_h), curve

    def render(self, index: int, attempt: int = 0):
        """Render sample ``index``; returns ``(image, record)``.

        ``attempt`` > 0 re-draws the sample from an independent stream, for
        callers that need a replacement after a LayoutOverflow.
        """
        cfg = self.config
        plan = self.plan(index, attempt)
        max_h, max_w = cfg.max_canvas
        height = plan.text_height
        while True:
            font = None
            if self.fonts:
                font = _load_font(self.fonts[plan.font_index], max(1, int(round(height))))
            adv, box_h = self._advances(plan.text, height, font)
            placements, curve = self._fit_curve(plan.text, adv, box_h, plan.curve)
            offset, width, hgt = _layout_frame(placements, plan.pad * box_h)
            fits = width <= max_w and hgt <= max_h
            # the outline error grows with glyph size, so shrinking also tightens the polygon
            if fits and band_violation(polygon_from_boxes(glyph_boxes(placements)),
                                       glyph_boxes(placements)) <= BAND_TOLERANCE:
                break
            if height * 0.8 < cfg.min_text_height:
                raise LayoutOverflow(
                    f"sample {index}: {plan.text!r} does not fit at minimum scale "
                    f"({hgt}x{width} px, canvas limit {max_h}x{max_w})")
            height *= 0.8
        placements = _shift(placements, offset)
        if font is None:
            mask = rasterize_blocks(placements, width, hgt)
        else:
            mask = rasterize_font(placements, font, width, hgt)
        crng = np.random.default_rng(plan.color_seed)
        bg = self._background_crop(plan.background_index, hgt, width, crng)
        color = pick_text_color(bg, crng)
        img = composite(bg, mask, color)
        rid = f"{index:07d}"
        rec = _build_record(placements, curve, plan.text, rid, f"images/{rid}.png")
        return img, rec

    def _background_crop(self, which: int, h: int, w: int, rng) -> np.ndarray:
        src = _load_background(self.backgrounds[which])
        sh, sw = src.shape[:2]
        if sh < h or sw < w:
            scale = max(h / sh, w / sw)
            nh, nw = int(math.ceil(sh * scale)), int(math.ceil(sw * scale))
            src = np.asarray(Image.fromarray(src).resize((nw, nh), Image.BILINEAR))
            sh, sw = nh, nw
        y = int(rng.integers(sh - h + 1))
        x = int(rng.integers(sw - w + 1))
        return src[y:y + h, x:x + w]


def luminance(rgb) -> float:
    r, g, b = np.asarray(rgb, dtype=np.float64)[..., :3].reshape(-1, 3).mean(axis=0)
    return 0.299 * r + 0.587 * g + 0.114 * b


def pick_text_color(background: np.ndarray, rng: np.random.Generator, min_contrast: float = MIN_CONTRAST):
    """Uniform RGB colour whose luminance differs from the crop mean by >= min_contrast."""
    bg_lum = luminance(background)
    for _ in range(64):
        c = rng.integers(0, 256, size=3)
        if abs(luminance(c) - bg_lum) >= min_contrast:
            return c
    return np.array([0, 0, 0]) if bg_lum >= 128 else np.array([255, 255, 255])


@functools.lru_cache(maxsize=4)
def _synthesizer(config: SynthConfig) -> Synthesizer:
    return Synthesizer(config)


def render_sample(config: SynthConfig, index: int):
    """Render sample ``index`` of the dataset described by ``config``."""
    return _synthesizer(config).render(index)
