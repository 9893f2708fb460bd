"""Command-line entry point: ``vertenet <subcommand> ...``.

Exit status is 0 on success, 2 for invalid arguments or inputs and 1 for
failures while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .landmarks import LandmarkError

log = logging.getLogger("vertenet")


class UsageError(Exception):
    """Bad flags or unreadable/invalid inputs (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _levels(text: str) -> dict:
    """``"2:2,10;3:2,10;4:4,20"`` -> {level: (r, p)}."""
    try:
        out = {}
        for part in text.split(";"):
            lvl, rp = part.split(":")
            r, p = rp.split(",")
            out[int(lvl)] = (int(r), int(p))
        return out
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected level:r,p;... got {text!r}") from None


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _load_doc(path):
    from .io import load_landmarks

    try:
        return load_landmarks(_need_file(path))
    except LandmarkError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _crop_cfg(args):
    from .cropdetect import CropConfig

    try:
        return CropConfig(factor=args.factor, sample_count=args.samples, black_threshold=args.black_threshold,
                          min_component_area=args.min_area, kernel=args.kernel)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _report_json(report, regions=None) -> dict:
    out = {
        "cropped": report.cropped,
        "percent": round(report.percent, 6),
        "d": report.d,
        "violations": [{"x": v.point[0], "y": v.point[1], "reason": v.reason, "level": v.level}
                       for v in report.violations],
    }
    if regions is not None:
        out["black_regions"] = [list(b) for b in regions.boxes]
    return out


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    from .cropdetect import CropConfig, detect_crop
    from .io import LandmarkDocument, ManifestEntry, save_landmarks, write_image, write_manifest
    from .synth import synth_generate

    try:
        images, sets = synth_generate(args.seed, args.count, args.size, black_band_fraction=args.black_band)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    cfg = CropConfig(factor=args.label_factor)
    for i, (img, lm) in enumerate(zip(images, sets)):
        name = f"img{i:04d}"
        write_image(out / f"{name}.pgm", img, bits=16)
        save_landmarks(out / f"{name}.landmarks.json", LandmarkDocument(name, lm))
        mask = img == 0
        label = detect_crop(img.shape, mask if mask.any() else None, lm, cfg).cropped
        entries.append(ManifestEntry(name, out / f"{name}.pgm", out / f"{name}.landmarks.json", label))
    write_manifest(out / "manifest.json", entries)
    print(f"wrote {len(entries)} images to {out}")
    return 0


def cmd_train_toy(args) -> int:
    from .io import load_manifest, read_image
    from .model import ModelConfig, VertenetParams, save_model
    from .plotting import plot_loss_curve
    from .synth import synth_generate
    from .train import evaluate, toy_train
    from .landmarks import corner_distances

    if args.manifest:
        from .io import load_landmarks

        entries = load_manifest(_need_file(args.manifest))
        images = np.stack([read_image(e.image) for e in entries])
        sets = [load_landmarks(e.landmarks).landmarks for e in entries]
    else:
        images, sets = synth_generate(args.seed, args.count, args.size)
    H, W = images.shape[1:]
    try:
        cfg = ModelConfig(encoder_widths=tuple(args.widths), head_width=args.head_width, input_size=(H, W),
                          fusion_mode=args.fusion, levels=args.levels or {2: (2, 10), 3: (2, 10), 4: (2, 10)},
                          normalize=not args.literal)
        params = VertenetParams.create(cfg, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = toy_train(params, images, sets, steps=args.steps, lr=args.lr, batch_size=args.batch,
                       seed=args.seed, freeze=tuple(args.freeze))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.vnet", params)
    with open(out / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "heatmap", "center", "corner"])
        for i, (loss, parts) in enumerate(zip(result.losses, result.components)):
            w.writerow([i, f"{loss:.8g}"] + [f"{v:.8g}" for v in parts])
    plot_loss_curve(result.losses, out / "losses.png")
    preds = evaluate(params, images, sets)
    summary = {"initial_loss": result.losses[0], "final_loss": result.losses[-1]}
    if all(len(p) == len(g) for p, g in zip(preds, sets)):
        summary["mean_corner_error_px"] = float(corner_distances(preds, sets, canonical=False).mean())
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import BLOCKS, run_suite

    blocks = args.blocks or list(BLOCKS)
    bad = [b for b in blocks if b not in BLOCKS]
    if bad:
        raise UsageError(f"unknown blocks {bad}; choose from {list(BLOCKS)}")
    rows = run_suite(seeds=(args.seed,), blocks=blocks, max_coords=args.max_coords)
    print("block,seed,max_rel_error,coords,seconds")
    for r in rows:
        print(f"{r.block},{r.seed},{r.max_rel_error:.3e},{r.n_checked},{r.seconds:.1f}")
    worst = max(r.max_rel_error for r in rows)
    if worst >= args.tol:
        log.error("max relative error %.3e exceeds %.1e", worst, args.tol)
        return 1
    return 0


def cmd_infer(args) -> int:
    from .io import LandmarkDocument, read_image, save_landmarks
    from .model import load_model, predict_landmarks

    try:
        params = load_model(_need_file(args.model))
        image = read_image(_need_file(args.image))
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None
    lm = predict_landmarks(image, params, args.orientation, args.threshold)
    if not lm.complete:
        log.warning("only %d of %d vertebrae found", len(lm), params.config.num_vertebrae)
    save_landmarks(args.out, LandmarkDocument(args.image_id or Path(args.image).stem, lm))
    return 0


def cmd_guides(args) -> int:
    from .guides import generate_ivgs
    from .io import save_landmarks

    doc = _load_doc(args.landmarks)
    try:
        doc.guides = generate_ivgs(doc.landmarks, args.orientation).to_json()
    except LandmarkError as exc:
        raise UsageError(str(exc)) from None
    save_landmarks(args.out, doc)
    return 0


def cmd_cropdetect(args) -> int:
    from .cropdetect import analyze_image
    from .io import read_image

    doc = _load_doc(args.landmarks)
    image = read_image(_need_file(args.image))
    report, regions = analyze_image(image, doc.landmarks, _crop_cfg(args), args.orientation)
    Path(args.out).write_text(json.dumps(_report_json(report, regions), indent=2) + "\n")
    print(f"cropped={report.cropped} percent={report.percent:.2f}")
    return 0


def _sweep_cases(manifest, cfg):
    from .cropdetect import CropCase, detect_black_regions, smooth_mask
    from .io import load_landmarks, load_manifest, read_image

    cases = []
    for e in load_manifest(_need_file(manifest)):
        img = read_image(e.image)
        regions = smooth_mask(detect_black_regions(img, cfg), cfg.kernel)
        lm = load_landmarks(e.landmarks).landmarks
        cases.append(CropCase(e.entry_id, img.shape, None if regions.empty else regions.mask, lm, e.crop_label))
    return cases


def cmd_sweep(args) -> int:
    from .cropdetect import factor_sweep, parse_factor_range
    from .plotting import plot_sweep

    try:
        factors = parse_factor_range(args.factors)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = _crop_cfg(args)
    rows, skipped = factor_sweep(_sweep_cases(args.manifest, cfg), factors, cfg)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["factor", "FP", "FN", "TP", "TN", "accuracy"])
        for r in rows:
            w.writerow([str(round(r.factor, 6)), r.FP, r.FN, r.TP, r.TN, f"{r.accuracy:.2f}"])
    plot_sweep(rows, Path(args.out).with_suffix(".png"))
    if skipped:
        print(f"skipped (no label): {', '.join(skipped)}")
    return 0


def cmd_eval(args) -> int:
    from .io import load_manifest
    from .landmarks import corner_distances

    preds, gts = [], []
    for e in load_manifest(_need_file(args.manifest)):
        pred_path = Path(args.predictions) / f"{e.entry_id}.landmarks.json"
        preds.append(_load_doc(pred_path).landmarks)
        gts.append(_load_doc(e.landmarks).landmarks)
    try:
        d = corner_distances(preds, gts, canonical=True)
    except LandmarkError as exc:
        raise UsageError(str(exc)) from None
    result = {"images": len(gts), "corners": int(d.size), "mean_error": float(d.mean()),
              "median_error": float(np.median(d))}
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_agree(args) -> int:
    from .plotting import plot_agreement
    from .stats import ScoreError, agreement_stats, read_scoresheets

    try:
        sheets = read_scoresheets(_need_file(args.scores))
        readers = args.readers or sorted(sheets)
        if len(readers) != 2 or any(r not in sheets for r in readers):
            raise ScoreError(f"need exactly two readers present in the file; found {sorted(sheets)}")
        a, b = sheets[readers[0]], sheets[readers[1]]
        rows = agreement_stats(a, b, resamples=args.resamples, seed=args.seed)
    except ScoreError as exc:
        raise UsageError(str(exc)) from None

    def fmt(v):
        return "" if v is None else f"{v:.4f}"

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "n", "correlation", "corr_lo", "corr_hi", "kappa", "kappa_lo", "kappa_hi", "note"])
        for r in rows:
            rci = r.correlation_ci or (None, None)
            kci = r.kappa_ci or (None, None)
            w.writerow([r.region, r.n, fmt(r.correlation), fmt(rci[0]), fmt(rci[1]),
                        fmt(r.kappa), fmt(kci[0]), fmt(kci[1]), r.correlation_note or ""])
    pairs = {}
    for r in rows:
        ra, rb = a.region(r.region), b.region(r.region)
        ids = sorted(ra)
        pairs[r.region] = ([ra[i] for i in ids], [rb[i] for i in ids])
    plot_agreement(pairs, Path(args.out).with_suffix(".png"))
    return 0


def cmd_render(args) -> int:
    from .cropdetect import analyze_image
    from .guides import generate_ivgs
    from .io import read_image, write_image
    from .render import render_overlay

    image = read_image(_need_file(args.image))
    guides = report = None
    if args.landmarks:
        lm = _load_doc(args.landmarks).landmarks
        guides = generate_ivgs(lm, args.orientation)
        if not args.no_crop:
            report, _ = analyze_image(image, lm, _crop_cfg(args), args.orientation)
    try:
        write_image(args.out, render_overlay(image, guides, report))
    except (OSError, ValueError) as exc:
        log.error("cannot write %s: %s", args.out, exc)
        return 1
    return 0


# ---------------------------------------------------------------- parser

def _crop_flags(p):
    p.add_argument("--factor", type=float, default=1.2)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--black-threshold", type=float, default=0.0)
    p.add_argument("--min-area", type=int, default=None, help="px; default 0.5%% of the image")
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--orientation", choices=("anterior-right", "anterior-left"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vertenet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic images, landmark JSON and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=_hw, default=(256, 128), help="HxW, multiples of 32")
    p.add_argument("--black-band", type=float, default=0.0, help="fraction of images with a black band")
    p.add_argument("--label-factor", type=float, default=1.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-toy", help="overfit a small model on synthetic or manifest images")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=_hw, default=(256, 128))
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--widths", type=int, nargs=4, default=[4, 8, 8, 16])
    p.add_argument("--head-width", type=int, default=8)
    p.add_argument("--fusion", default="full", choices=("simple", "drsa-only", "drca-only", "full"))
    p.add_argument("--levels", type=_levels, default=None, help='per-level r,p e.g. "2:2,10;3:2,10;4:4,20"')
    p.add_argument("--literal", action="store_true", help="disable layer normalization in transformer blocks")
    p.add_argument("--freeze", nargs="*", default=[], help="parameter-name prefixes to keep fixed")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks", nargs="*")
    p.add_argument("--max-coords", type=int, default=12)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("infer", help="predict landmarks for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-id")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--orientation", choices=("anterior-right", "anterior-left"), default="anterior-right")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("guides", help="add inter/intra-vertebral guides to a landmark document")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--orientation", choices=("anterior-right", "anterior-left"), default=None)
    p.set_defaults(func=cmd_guides)

    p = sub.add_parser("cropdetect", help="test one image for a cropped abdominal aorta")
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", required=True)
    _crop_flags(p)
    p.set_defaults(func=cmd_cropdetect)

    p = sub.add_parser("sweep", help="confusion table per crop factor over a labelled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--factors", default="0.8:1.5:0.1")
    p.add_argument("--out", required=True, help="CSV path; a PNG figure is written next to it")
    _crop_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="corner errors (canonical 1024x512 px) of predictions vs a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True, help="directory of <id>.landmarks.json files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("agree", help="inter-reader correlation and weighted kappa per region")
    p.add_argument("--scores", required=True, help="CSV image_id,region,reader,score")
    p.add_argument("--readers", nargs=2)
    p.add_argument("--out", required=True, help="CSV path; a PNG figure is written next to it")
    p.add_argument("--resamples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("render", help="burn guides, spline and violations into an image")
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks")
    p.add_argument("--out", required=True)
    p.add_argument("--no-crop", action="store_true")
    _crop_flags(p)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"vertenet: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"vertenet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"vertenet {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
