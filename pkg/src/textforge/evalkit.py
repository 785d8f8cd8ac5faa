"""Word accuracy, size-weighted micro-average and majority voting."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyAfterFilter, EmptyInput, LengthMismatch


@dataclass(frozen=True)
class EvalConfig:
    case_sensitive: bool = False
    alnum_only: bool = True
    min_len_filter: int = 0

    def __post_init__(self):
        if self.min_len_filter < 0:
            raise ValueError("min_len_filter must be >= 0")


@dataclass(frozen=True)
class EvalRow:
    dataset: str
    size: int
    accuracy: float

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"{self.dataset}: size must be >= 1")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"{self.dataset}: accuracy must be in [0, 1]")


def _alnum(s: str) -> str:
    return "".join(c for c in s if c.isalnum())


def normalize_text(s: str, cfg: EvalConfig) -> str:
    if cfg.alnum_only:
        s = _alnum(s)
    if not cfg.case_sensitive:
        s = s.casefold()
    return s


def word_accuracy(preds: Sequence[str], gts: Sequence[str], cfg: EvalConfig = EvalConfig()) -> float:
    """Fraction of exact matches after protocol filtering and normalization.

    Pairs whose ground truth is shorter than ``cfg.min_len_filter`` (counted
    after the alphanumeric filter, when enabled) are dropped first.
    """
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    kept = hits = 0
    for p, g in zip(preds, gts):
        glen = len(_alnum(g)) if cfg.alnum_only else len(g)
        if glen < cfg.min_len_filter:
            continue
        kept += 1
        hits += normalize_text(p, cfg) == normalize_text(g, cfg)
    if kept == 0:
        raise EmptyAfterFilter("no pairs left after filtering")
    return hits / kept


def micro_average(rows: Iterable[EvalRow]) -> float:
    """Accuracy averaged over datasets, weighted by dataset size."""
    rows = list(rows)
    if not rows:
        raise EmptyInput("micro_average needs at least one row")
    total = sum(r.size for r in rows)
    return sum(r.accuracy * r.size for r in rows) / total


def vote(predictions: Sequence[str]) -> str:
    """Most frequent string; ties go to whichever appears first."""
    if not predictions:
        raise EmptyInput("vote needs at least one prediction")
    counts = Counter(predictions)
    best = max(counts.values())
    for p in predictions:
        if counts[p] == best:
            return p
    raise AssertionError("unreachable")


# --------------------------------------------------------------------------
# file formats


def read_predictions(path) -> dict[str, str]:
    """Read ``id<TAB>text`` lines; a missing text field means an empty prediction."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            key, sep, text = line.partition("\t")
            if not sep and not key:
                raise ValueError(f"{path}:{lineno}: malformed line")
            out[key] = text
    return out


def write_predictions(path, preds: dict[str, str]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, text in preds.items():
            fh.write(f"{key}\t{text}\n")


def read_rows(path) -> dict[str, list[EvalRow]]:
    """Read a report CSV grouped by its optional ``group`` column.

    Required columns are ``dataset,size,accuracy``.  Without a group column
    every row lands in the ``""`` group.
    """
    groups: dict[str, list[EvalRow]] = {}
    with open(Path(path), encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"dataset", "size", "accuracy"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        for rec in reader:
            row = EvalRow(rec["dataset"].strip(), int(rec["size"]), float(rec["accuracy"]))
            groups.setdefault((rec.get("group") or "").strip(), []).append(row)
    return groups
