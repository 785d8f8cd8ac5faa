"""Manifests, polygon cropping, real/synthetic mixing and the label codec.

A manifest is a JSONL file with one sample per line::

    {"id": "000001", "image": "images/000001.png", "text": "hello",
     "polygon": [[x, y], ... 20 points] | null,
     "top": [[x, y], ... 10] | null, "bottom": [[x, y], ... 10] | null,
     "char_boxes": [[[x, y] x 4], ...] | null,
     "curve": {"kind": "straight" | "parabola" | "circle",
               "alpha": float?, "bend_angle": float?, "concavity": "up" | "down"?} | null,
     "is_curved": bool}

Coordinates are source-image pixels, x to the right and y down.  Image
paths are relative to the manifest's directory.
"""
from __future__ import annotations

import enum
import json
import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptyIntersection, EmptyPool, UnsupportedSymbol
from .geometry import N_CHAIN, ControlPolygon


class CurveKind(str, enum.Enum):
    STRAIGHT = "straight"
    PARABOLA = "parabola"
    CIRCLE = "circle"


class Concavity(str, enum.Enum):
    # UP opens upward (a smile); DOWN is an arch.
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class CurveSpec:
    kind: CurveKind = CurveKind.STRAIGHT
    alpha: float | None = None
    bend_angle: float | None = None
    concavity: Concavity | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CurveKind(self.kind))
        if self.concavity is not None:
            object.__setattr__(self, "concavity", Concavity(self.concavity))
        if self.kind is CurveKind.PARABOLA and self.alpha is None:
            raise ValueError("parabola curve needs alpha")
        if self.kind is CurveKind.CIRCLE:
            if self.bend_angle is None or not 0 < self.bend_angle < 2 * math.pi:
                raise ValueError("circle curve needs bend_angle in (0, 2*pi)")

    @classmethod
    def straight(cls) -> "CurveSpec":
        return cls(CurveKind.STRAIGHT)

    @classmethod
    def parabola(cls, alpha: float) -> "CurveSpec":
        # y grows downward in images, so a negative alpha raises the ends.
        return cls(CurveKind.PARABOLA, alpha=float(alpha),
                   concavity=Concavity.UP if alpha < 0 else Concavity.DOWN)

    @classmethod
    def circle(cls, bend_angle: float, concavity: Concavity | str = Concavity.DOWN) -> "CurveSpec":
        return cls(CurveKind.CIRCLE, bend_angle=float(bend_angle), concavity=Concavity(concavity))

    @property
    def is_curved(self) -> bool:
        return self.kind is not CurveKind.STRAIGHT

    def to_json(self) -> dict:
        out = {"kind": self.kind.value}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.bend_angle is not None:
            out["bend_angle"] = self.bend_angle
        if self.concavity is not None:
            out["concavity"] = self.concavity.value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "CurveSpec":
        return cls(
            CurveKind(obj["kind"]),
            alpha=obj.get("alpha"),
            bend_angle=obj.get("bend_angle"),
            concavity=obj.get("concavity"),
        )


def _points_json(pts) -> list:
    return [[float(x), float(y)] for x, y in np.asarray(pts, dtype=np.float64).reshape(-1, 2)]


@dataclass(eq=False)
class SampleRecord:
    id: str
    image_path: str
    text: str
    polygon: ControlPolygon | None = None
    char_boxes: list | None = None
    curve: CurveSpec | None = None
    is_curved: bool = False

    def to_json(self) -> dict:
        poly = self.polygon
        return {
            "id": self.id,
            "image": self.image_path,
            "text": self.text,
            "polygon": None if poly is None else _points_json(poly.points),
            "top": None if poly is None else _points_json(poly.top),
            "bottom": None if poly is None else _points_json(poly.bottom),
            "char_boxes": None if self.char_boxes is None
            else [_points_json(b) for b in self.char_boxes],
            "curve": None if self.curve is None else self.curve.to_json(),
            "is_curved": bool(self.is_curved),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SampleRecord":
        poly = None
        if obj.get("top") is not None and obj.get("bottom") is not None:
            poly = ControlPolygon(obj["top"], obj["bottom"])
        elif obj.get("polygon") is not None:
            poly = ControlPolygon.from_points(obj["polygon"])
        boxes = obj.get("char_boxes")
        if boxes is not None:
            boxes = [np.asarray(b, dtype=np.float64).reshape(4, 2) for b in boxes]
        curve = obj.get("curve")
        return cls(
            id=str(obj["id"]),
            image_path=obj["image"],
            text=obj["text"],
            polygon=poly,
            char_boxes=boxes,
            curve=None if curve is None else CurveSpec.from_json(curve),
            is_curved=bool(obj.get("is_curved", False)),
        )

    def to_line(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, separators=(", ", ": "))

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return self.to_json() == other.to_json()


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    source_name: str = ""
    split: str = "train"
    root: Path | None = None

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def validate(self, check_files: bool = True):
        """Raise ValueError on duplicate ids or missing image files."""
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValueError(f"duplicate record id {rec.id!r} in {self.source_name}")
            seen.add(rec.id)
        if check_files and self.root is not None:
            missing = [r.image_path for r in self.records if not (self.root / r.image_path).is_file()]
            if missing:
                raise FileNotFoundError(f"{len(missing)} image(s) missing, first: {missing[0]}")

    def image_file(self, rec: SampleRecord) -> Path:
        return (self.root or Path(".")) / rec.image_path

    def dumps(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.records)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str, source_name: str = "", split: str = "train", root=None) -> "Manifest":
        records = [SampleRecord.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(records, source_name, split, None if root is None else Path(root))

    @classmethod
    def load(cls, path, split: str = "train", validate: bool = False) -> "Manifest":
        path = Path(path)
        m = cls.loads(path.read_text(encoding="utf-8"), path.stem, split, path.parent)
        if validate:
            m.validate()
        return m


# --------------------------------------------------------------------------
# cropping


def crop(img: np.ndarray, poly: ControlPolygon, margin_px: int = 0):
    """Crop the polygon's bounding box (plus margin), clamped to the image.

    Returns ``(crop, shifted_polygon, (x0, y0))``.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    xmin, ymin, xmax, ymax = poly.bbox()
    x0 = max(0, int(math.floor(xmin - margin_px)))
    y0 = max(0, int(math.floor(ymin - margin_px)))
    x1 = min(w, int(math.ceil(xmax + margin_px)))
    y1 = min(h, int(math.ceil(ymax + margin_px)))
    if x1 <= x0 or y1 <= y0:
        raise EmptyIntersection(f"polygon bbox ({xmin:.1f},{ymin:.1f})-({xmax:.1f},{ymax:.1f}) "
                                f"misses the {w}x{h} image")
    return img[y0:y1, x0:x1].copy(), poly.shifted(-x0, -y0), (x0, y0)


# --------------------------------------------------------------------------
# mixing


@dataclass(frozen=True)
class MixConfig:
    real_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ValueError("real_fraction must be in [0, 1]")


def mix_indices(n_real: int, n_synth: int, cfg: MixConfig, n: int) -> Iterator[tuple]:
    """Yield ``(is_real, index)`` for ``n`` Bernoulli-then-uniform draws."""
    p = cfg.real_fraction
    if p > 0 and n_real == 0:
        raise EmptyPool("real pool is empty but real_fraction > 0")
    if p < 1 and n_synth == 0:
        raise EmptyPool("synthetic pool is empty but real_fraction < 1")
    rng = np.random.default_rng(cfg.seed)
    for _ in range(n):
        is_real = bool(rng.random() < p)
        yield is_real, int(rng.integers(n_real if is_real else n_synth))


def mix_stream(real: Sequence, synth: Sequence, cfg: MixConfig, n: int) -> Iterator[SampleRecord]:
    """Draw ``n`` records: real with probability p, else synthetic; uniform with replacement."""
    real = list(real)
    synth = list(synth)
    for is_real, idx in mix_indices(len(real), len(synth), cfg, n):
        yield real[idx] if is_real else synth[idx]


# --------------------------------------------------------------------------
# labels


ALPHABET = string.digits + string.ascii_uppercase + string.ascii_lowercase


class LabelCodec:
    """Maps text over the 62 alphanumerics to indices, with EOS = 62."""

    def __init__(self, alphabet: str = ALPHABET):
        if len(set(alphabet)) != len(alphabet):
            raise ValueError("alphabet has repeated symbols")
        self.alphabet = alphabet
        self.eos_index = len(alphabet)
        self._index = {c: i for i, c in enumerate(alphabet)}

    def __len__(self):
        return len(self.alphabet) + 1

    def encode(self, text: str) -> list[int]:
        bad = [c for c in text if c not in self._index]
        if bad:
            raise UnsupportedSymbol(bad)
        return [self._index[c] for c in text] + [self.eos_index]

    def decode(self, indices) -> str:
        out = []
        for i in indices:
            i = int(i)
            if i == self.eos_index:
                break
            if not 0 <= i < self.eos_index:
                raise ValueError(f"index {i} outside the label range")
            out.append(self.alphabet[i])
        return "".join(out)
