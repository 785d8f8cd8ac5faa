"""Command-line entry point: ``textforge <subcommand> ...``.

Every subcommand reads and writes files only.  Outputs go under ``--out``
together with ``run_metadata.json`` describing the run.  Exit status is 0 on
success, 1 on a usage error and 2 on a data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .dataio import Manifest, MixConfig, SampleRecord, mix_indices
from .errors import LayoutOverflow, TextforgeError
from .evalkit import (EvalConfig, micro_average, read_predictions, read_rows, vote,
                      word_accuracy, write_predictions)
from .geometry import ControlPolygon, GridSpec, arc_lengths, canonical_fiducials, rectify_tps
from .preprocess import (AugmentPolicy, draw_rotation, fixed_resize, rotate_k90,
                         rotate_points_k90, squarize)
from .snake import StripSpec, geometry_from_polygon, strip_width, unroll
from .synth import SynthConfig, Synthesizer

log = logging.getLogger("textforge")

METADATA_NAME = "run_metadata.json"
MANIFEST_NAME = "manifest.jsonl"
MAX_SYNTH_ATTEMPTS = 16


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; usage errors are 1 here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# shared helpers


def save_png(path: Path, img: np.ndarray):
    # fixed encoder settings keep reruns byte-identical
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PNG", compress_level=6)


def load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_metadata(out: Path, args, counts: dict):
    flags = {k: (str(v) if isinstance(v, Path) else v)
             for k, v in sorted(vars(args).items()) if k != "func"}
    meta = {
        "command": args.command,
        "flags": flags,
        "seed": args.seed,
        "jobs": args.jobs,
        "version": __version__,
        "counts": counts,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / METADATA_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n",
                                     encoding="utf-8")


def _map(fn, items, jobs: int):
    """Order-preserving map, in-process for a single job."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        return Manifest.load(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc


def _relative_image(m: Manifest, rec: SampleRecord, out: Path) -> str:
    return Path(os.path.relpath(m.image_file(rec).resolve(), out.resolve())).as_posix()


# --------------------------------------------------------------------------
# synth


def _synth_one(task):
    config, index, out = task
    synth = _worker_synth(config)
    for attempt in range(MAX_SYNTH_ATTEMPTS):
        try:
            img, rec = synth.render(index, attempt)
            break
        except LayoutOverflow as exc:
            last = exc
    else:
        raise last
    save_png(Path(out) / rec.image_path, img)
    return rec.to_line()


_SYNTH_CACHE: dict = {}


def _worker_synth(config: SynthConfig) -> Synthesizer:
    if config not in _SYNTH_CACHE:
        _SYNTH_CACHE.clear()
        _SYNTH_CACHE[config] = Synthesizer(config)
    return _SYNTH_CACHE[config]


def cmd_synth(args) -> dict:
    config = SynthConfig(
        fonts_dir=args.fonts, backgrounds_dir=args.backgrounds, corpus_path=args.corpus,
        count=args.count, curved_frac_target=args.curved_frac_target, seed=args.seed,
        glyphs=args.glyphs,
    )
    _worker_synth(config)  # fail fast on missing assets
    out = args.out
    (out / "images").mkdir(parents=True, exist_ok=True)
    lines = _map(_synth_one, ((config, i, str(out)) for i in range(args.count)), args.jobs)
    (out / MANIFEST_NAME).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    curved = sum(json.loads(line)["is_curved"] for line in lines)
    log.info("wrote %d samples (%d curved) to %s", len(lines), curved, out)
    return {"records": len(lines), "curved": curved}


# --------------------------------------------------------------------------
# rectify


def _rectify_one(task):
    method, src_path, poly_pts, height, width, margin = task
    img = load_image(Path(src_path))
    poly = ControlPolygon.from_points(poly_pts)
    try:
        if method == "tps":
            spec = GridSpec(out_height=height, out_width=width, margin_x=margin, margin_y=margin)
            out = rectify_tps(img, poly, spec)
            target = canonical_fiducials(spec) * np.array([width, height])
        else:
            geo = geometry_from_polygon(poly)
            strip = StripSpec(out_height=height, width=width)
            out = unroll(img, geo, strip)
            w = strip_width(geo, strip)
            xs = arc_lengths(geo.centers) / geo.length * w
            target = np.concatenate([np.stack([xs, np.zeros_like(xs)], 1),
                                     np.stack([xs, np.full_like(xs, height)], 1)])
    except (TextforgeError, np.linalg.LinAlgError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return (out, target), None


def cmd_rectify(args) -> dict:
    if not 0.0 <= args.margin < 0.5:
        raise UsageError("--margin must be in [0, 0.5)")
    m = _load_manifest(args.manifest)
    out = args.out
    (out / "images").mkdir(parents=True, exist_ok=True)
    todo = [r for r in m if r.polygon is not None]
    for rec in m:
        if rec.polygon is None:
            log.warning("skipping %s: no polygon", rec.id)
    width = args.width
    if width is None and args.method == "tps":
        width = 256
    tasks = [(args.method, str(m.image_file(r)), r.polygon.points.tolist(), args.height, width,
              args.margin)
             for r in todo]
    results = _map(_rectify_one, tasks, args.jobs)
    records, failures = [], []
    for rec, (res, err) in zip(todo, results):
        if res is None:
            log.warning("record %s failed: %s", rec.id, err)
            failures.append(rec.id)
            continue
        img, target = res
        path = f"images/{rec.id}.png"
        save_png(out / path, img)
        records.append(SampleRecord(rec.id, path, rec.text, ControlPolygon.from_points(target),
                                    None, rec.curve, rec.is_curved))
    Manifest(records).save(out / MANIFEST_NAME)
    counts = {"input": len(m), "written": len(records), "skipped": len(m) - len(todo),
              "failed": len(failures)}
    if todo and not records:
        raise DataError(f"all {len(todo)} records failed to rectify")
    return counts


# --------------------------------------------------------------------------
# preprocess


def _preprocess_one(task):
    mode, side, rot_prob, seed, index, src_path, rec_json = task
    rec = SampleRecord.from_json(rec_json)
    img = load_image(Path(src_path))
    h, w = img.shape[:2]
    k = 0
    if mode == "fixed":
        out = fixed_resize(img)
        sx, sy = out.shape[1] / w, out.shape[0] / h
        fn = lambda p: np.asarray(p, dtype=np.float64) * np.array([sx, sy])
    else:
        out, place = squarize(img, side)
        fn = place.apply
        k = draw_rotation(AugmentPolicy(rot_prob), np.random.default_rng([seed, index]))
        if k:
            out, _ = rotate_k90(out, k)
            place_fn = fn
            fn = lambda p: rotate_points_k90(place_fn(p), k, side)
    poly = None if rec.polygon is None else rec.polygon.transformed(fn)
    boxes = None if rec.char_boxes is None else [fn(b) for b in rec.char_boxes]
    return out, poly, boxes, k


def cmd_preprocess(args) -> dict:
    rot = args.rotate_prob
    if rot is None:
        rot = 0.05 if args.mode == "squarize" else 0.0
    if args.mode == "fixed" and rot > 0:
        raise UsageError("--rotate-prob needs --mode squarize (rotation keeps square images square)")
    try:
        AugmentPolicy(rot)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    m = _load_manifest(args.manifest)
    out = args.out
    (out / "images").mkdir(parents=True, exist_ok=True)
    tasks = [(args.mode, args.side, rot, args.seed, i, str(m.image_file(r)), r.to_json())
             for i, r in enumerate(m)]
    results = _map(_preprocess_one, tasks, args.jobs)
    records = []
    rotated = 0
    for rec, (img, poly, boxes, k) in zip(m, results):
        path = f"images/{rec.id}.png"
        save_png(out / path, img)
        rotated += k != 0
        records.append(SampleRecord(rec.id, path, rec.text, poly, boxes, rec.curve, rec.is_curved))
    Manifest(records).save(out / MANIFEST_NAME)
    return {"records": len(records), "rotated": rotated}


# --------------------------------------------------------------------------
# mix


def cmd_mix(args) -> dict:
    if not 0.0 <= args.ratio <= 1.0:
        raise UsageError("--ratio must be in [0, 1]")
    real, synth = _load_manifest(args.real), _load_manifest(args.synth)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    records = []
    n_real = 0
    draws = mix_indices(len(real), len(synth), MixConfig(args.ratio, args.seed), args.count)
    for i, (is_real, idx) in enumerate(draws):
        src = real if is_real else synth
        rec = src.records[idx]
        n_real += is_real
        tag = "real" if is_real else "synth"
        records.append(SampleRecord(f"{i:07d}-{tag}-{rec.id}", _relative_image(src, rec, out),
                                    rec.text, rec.polygon, rec.char_boxes, rec.curve, rec.is_curved))
    Manifest(records).save(out / MANIFEST_NAME)
    return {"records": len(records), "real": n_real, "synthetic": len(records) - n_real}


# --------------------------------------------------------------------------
# evaluation


def _eval_config(args, case_sensitive=None) -> EvalConfig:
    return EvalConfig(
        case_sensitive=args.case_sensitive if case_sensitive is None else case_sensitive,
        alnum_only=not args.keep_punct,
        min_len_filter=args.min_len,
    )


def cmd_evaluate(args) -> dict:
    m = _load_manifest(args.manifest)
    preds = read_predictions(args.predictions)
    gts = [r.text for r in m]
    got = [preds.get(r.id, "") for r in m]
    missing = sum(r.id not in preds for r in m)
    if missing:
        log.warning("%d record(s) have no prediction; counted as wrong", missing)
    result = {
        "accuracy": word_accuracy(got, gts, _eval_config(args)),
        "accuracy_case_insensitive": word_accuracy(got, gts, _eval_config(args, False)),
        "accuracy_case_sensitive": word_accuracy(got, gts, _eval_config(args, True)),
        "records": len(m),
        "missing": missing,
    }
    print(f"accuracy\t{result['accuracy']:.4f}")
    print(f"case_insensitive\t{result['accuracy_case_insensitive']:.4f}")
    print(f"case_sensitive\t{result['accuracy_case_sensitive']:.4f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "evaluation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    return {"records": len(m), "missing": missing}


def bundled_table():
    return resources.files("textforge").joinpath("data/real_ratio_table.csv")


def cmd_report(args) -> dict:
    if args.table is None:
        with resources.as_file(bundled_table()) as path:
            groups = read_rows(path)
    else:
        if not Path(args.table).is_file():
            raise DataError(f"report table not found: {args.table}")
        groups = read_rows(args.table)
    result = {}
    for name, rows in groups.items():
        avg = micro_average(rows)
        result[name] = {"micro_average": avg, "datasets": len(rows), "samples": sum(r.size for r in rows)}
        print(f"{name or 'all'}\t{avg:.4f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
    return {"groups": len(result), "rows": sum(len(r) for r in groups.values())}


def cmd_vote(args) -> dict:
    tables = [read_predictions(p) for p in args.predictions]
    ids = list(tables[0])
    for path, t in zip(args.predictions[1:], tables[1:]):
        if set(t) != set(ids):
            raise DataError(f"{path} does not cover the same ids as {args.predictions[0]}")
    voted = {i: vote([t[i] for t in tables]) for i in ids}
    args.out.mkdir(parents=True, exist_ok=True)
    write_predictions(args.out / "predictions.tsv", voted)
    unanimous = sum(len({t[i] for t in tables}) == 1 for i in ids)
    return {"records": len(ids), "inputs": len(tables), "unanimous": unanimous}


# --------------------------------------------------------------------------
# parser


def _default_seed() -> int:
    env = os.environ.get("TEXTFORGE_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"TEXTFORGE_SEED must be an integer, got {env!r}") from None


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser(default_seed: int = 0) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default_seed,
                        help="random seed (default: $TEXTFORGE_SEED or 0)")
    common.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1,
                        help="worker processes (default: CPU count)")

    parser = _Parser(prog="textforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"textforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="render synthetic word images")
    p.add_argument("--fonts", type=Path, required=True)
    p.add_argument("--backgrounds", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--curved-frac-target", type=float, default=0.10)
    p.add_argument("--glyphs", choices=("font", "block"), default="font",
                   help="'block' draws filled boxes instead of font glyphs")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rectify", parents=[common], help="rectify annotated text regions")
    p.add_argument("method", choices=("tps", "snake"))
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--height", type=_positive_int, default=64)
    p.add_argument("--width", type=_positive_int, default=None,
                   help="output width (tps default 256; snake default keeps the aspect ratio)")
    p.add_argument("--margin", type=float, default=0.05,
                   help="tps only: inset of the target fiducials, as a fraction of the output")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("preprocess", parents=[common], help="resize or squarize images")
    p.add_argument("--mode", choices=("squarize", "fixed"), required=True)
    p.add_argument("--side", type=_positive_int, default=256)
    p.add_argument("--rotate-prob", type=float, default=None,
                   help="probability of each 90/180/270 rotation (squarize default 0.05)")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("mix", parents=[common], help="mix real and synthetic manifests")
    p.add_argument("--real", type=Path, required=True)
    p.add_argument("--synth", type=Path, required=True)
    p.add_argument("--ratio", type=float, default=0.15)
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_mix)

    def eval_flags(p):
        p.add_argument("--case-sensitive", action="store_true")
        p.add_argument("--keep-punct", action="store_true",
                       help="compare all characters instead of alphanumerics only")
        p.add_argument("--min-len", type=int, default=0,
                       help="drop ground truths shorter than this")

    p = sub.add_parser("evaluate", parents=[common], help="word accuracy of a prediction file")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="size-weighted accuracy per group")
    p.add_argument("table", nargs="?", type=Path, default=None,
                   help="CSV with dataset,size,accuracy[,group] (default: bundled table)")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("vote", parents=[common], help="majority vote over prediction files")
    p.add_argument("predictions", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_vote)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="textforge: %(levelname)s: %(message)s",
                        stream=sys.stderr)
    try:
        parser = build_parser(_default_seed())
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        counts = args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    except (DataError, TextforgeError, FileNotFoundError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    if args.out is not None:
        write_metadata(args.out, args, counts)
    return 0


if __name__ == "__main__":
    sys.exit(main())
