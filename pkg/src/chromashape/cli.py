"""Command line entry point: ``chromashape {train,attack,sweep,report,enhance}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .attacks import ATTACKS
from .classifier import (
    REFERENCE_ARCHITECTURE,
    generate_toy_dataset,
    init_model,
    load_model,
    reference_model,
    save_model,
    train,
)
from .errors import ChromaShapeError, DatasetError, ModelFileError, PngError, ShapeMismatchError, TrainingDivergedError
from .image import NoiseField, RgbImage, l2_distance, load_png, save_png
from .search import search_minimal, search_with_fallback
from .shaping import ShapeConfig, compose_adversarial

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_DATASET = 4
EXIT_IO = 5


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chromashape", description="Perceptually shaped adversarial images.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", help="train a toy classifier and save it")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--count", type=int, default=600)
    t.add_argument("--size", type=int, default=32)
    t.add_argument("--classes", type=int, default=3)
    t.add_argument("--epochs", type=int, default=25)
    t.add_argument("--lr", type=float, default=0.03)

    a = sub.add_parser("attack", help="shaped minimal-strength attack on one image")
    a.add_argument("--model", help="model file (default: train the reference model)")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="input PNG")
    src.add_argument("--toy-index", type=int, help="image index in the toy dataset given by --toy-seed")
    a.add_argument("--toy-seed", type=int, default=1)
    a.add_argument("--label", type=int, help="true class (required with --image)")
    a.add_argument("--attack", choices=ATTACKS, default="fgsm")
    a.add_argument("--alpha", type=float, default=0.6)
    a.add_argument("--sigma", type=float)
    a.add_argument("--no-fallback", action="store_true", help="report the shaped search even if the baseline wins")
    a.add_argument("--out", help="write the adversarial PNG here")

    s = sub.add_parser("sweep", help="alpha sweep over attacks; writes report.csv / report.json")
    s.add_argument("--config", help="JSON file mirroring SweepConfig; flags override it")
    s.add_argument("--model")
    s.add_argument("--attacks", type=_names)
    s.add_argument("--alphas", type=_floats)
    s.add_argument("--sigma", type=float)
    s.add_argument("--seed", type=int, dest="toy_seed")
    s.add_argument("--count", type=int, dest="toy_count")
    s.add_argument("--size", type=int, dest="toy_size")
    s.add_argument("--png-dir")
    s.add_argument("--labels")
    s.add_argument("--out-dir")
    s.add_argument("--workers", type=int)
    s.add_argument("--emit-images", action="store_true")

    r = sub.add_parser("report", help="recompute improvements from a sweep report or a means table")
    r.add_argument("path", nargs="?", help="report.json, report.csv or a means table (default: the bundled ImageNet means)")

    e = sub.add_parser("enhance", help="shape a given noise (or adversarial image) for an image")
    e.add_argument("--image", required=True)
    ng = e.add_mutually_exclusive_group(required=True)
    ng.add_argument("--noise", help=".npy array of shape (3, H, W), RGB noise")
    ng.add_argument("--adversarial", help="adversarial PNG; noise is its difference to --image")
    e.add_argument("--alpha", type=float, default=0.6)
    e.add_argument("--sigma", type=float)
    e.add_argument("--out", required=True)
    e.add_argument("--model", help="if given, report the predicted class before and after")
    return p


def _get_model(path):
    return load_model(path) if path else reference_model()


def cmd_train(args) -> int:
    data = generate_toy_dataset(args.seed, args.count, args.size, args.classes)
    m = init_model(REFERENCE_ARCHITECTURE, (3, args.size, args.size), data.class_names, seed=args.seed)
    m = train(m, data, epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    save_model(m, args.out)
    print(json.dumps({"model": str(args.out), "train_accuracy": m.train_accuracy}))
    return EXIT_OK


def cmd_attack(args) -> int:
    m = _get_model(args.model)
    if args.image:
        if args.label is None:
            raise UsageError("--label is required with --image")
        img, label = load_png(args.image), args.label
    else:
        data = generate_toy_dataset(args.toy_seed, args.toy_index + 1, m.input_shape[1], m.num_classes)
        img, label = data.images[args.toy_index], int(data.labels[args.toy_index])
    sched = harness.DEFAULT_SCHEDULES[args.attack]
    cfg = harness.DEFAULT_ATTACK_CONFIGS[args.attack]
    shape = ShapeConfig(args.alpha, args.sigma)
    baseline = search_minimal(m, img, label, sched, cfg, shaping_enabled=False)
    if args.no_fallback:
        res = search_minimal(m, img, label, sched, cfg, shape)
    else:
        res = search_with_fallback(m, img, label, sched, cfg, shape, baseline=baseline)
    if args.out and res.success:
        save_png(res.best_image, args.out)
    print(
        json.dumps(
            {
                "attack": args.attack,
                "alpha": args.alpha,
                "label": label,
                "baseline_l2": harness.sig6(baseline.best_l2),
                "shaped_l2": harness.sig6(res.best_l2),
                "strength": res.strength,
                "attempts": res.attempts,
                "success": res.success,
                "fallback_used": res.fallback_used,
            }
        )
    )
    return EXIT_OK if res.success else EXIT_FAILURE


def cmd_sweep(args) -> int:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {
        "model_path": args.model,
        "attacks": args.attacks,
        "alphas": args.alphas,
        "sigma": args.sigma,
        "toy_seed": args.toy_seed,
        "toy_count": args.toy_count,
        "toy_size": args.toy_size,
        "png_dir": args.png_dir,
        "labels_file": args.labels,
        "output_dir": args.out_dir,
        "workers": args.workers,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    cfg = harness.SweepConfig.from_dict(base)
    out_dir = Path(cfg.output_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    report = harness.run_sweep(cfg, keep_images=args.emit_images)
    harness.write_report(report, "csv", out_dir / "report.csv")
    harness.write_report(report, "json", out_dir / "report.json")
    if args.emit_images:
        harness.emit_images(report, out_dir / "images")
    _print_aggregates(report.aggregates())
    return EXIT_OK


def _print_aggregates(agg: dict) -> None:
    for attack, e in agg["attacks"].items():
        print(
            f"{attack:5s} baseline {e['baseline_mean_l2']}  best alpha {e.get('best_alpha')}  "
            f"improvement {e.get('improvement_percent')}%  improved images {e.get('best_alpha_improved_fraction')}"
        )
    print(f"mean improvement {agg['mean_improvement_percent']}%")


def cmd_report(args) -> int:
    if args.path is None:
        base, per_alpha = harness.load_table_fixture()
    else:
        path = Path(args.path)
        text = path.read_text()
        if path.suffix == ".csv":
            _print_aggregates(harness.SweepReport(rows=harness.read_csv_rows(text)).aggregates())
            return EXIT_OK
        doc = json.loads(text)
        if doc.get("format") == "chromashape-sweep-report":
            _print_aggregates(harness.SweepReport.from_json(text).aggregates())
            return EXIT_OK
        base, per_alpha = harness.load_table_fixture(path)
    table, mean = harness.improvement_table(base, per_alpha)
    for c in table:
        print(f"{c.column:16s} baseline {c.baseline:<8g} best alpha {c.best_alpha:g}  improvement {c.improvement:.2f}%")
    print(f"mean improvement {mean:.2f}%")
    return EXIT_OK


def cmd_enhance(args) -> int:
    img = load_png(args.image)
    if args.noise:
        try:
            arr = np.load(args.noise)
        except (OSError, ValueError) as exc:
            raise OSError(f"cannot read noise file {args.noise}: {exc}") from exc
        noise = NoiseField(arr)
        if noise.shape != img.shape:
            raise UsageError(f"noise {noise.shape} does not match image {img.shape}")
    else:
        adv = load_png(args.adversarial)
        if adv.shape != img.shape:
            raise UsageError(f"adversarial image {adv.shape} does not match image {img.shape}")
        noise = NoiseField.between(adv, img)
    shape = ShapeConfig(args.alpha, args.sigma)
    out = compose_adversarial(img, noise, shape, shape.mask_for(img.width, img.height))
    save_png(out, args.out)
    raw = RgbImage(np.clip(img.data + noise.data, 0, 1))
    info = {"raw_l2": harness.sig6(l2_distance(raw, img)), "shaped_l2": harness.sig6(l2_distance(out, img))}
    if args.model:
        from .classifier import predict_class

        m = load_model(args.model)
        info.update(clean_class=predict_class(m, img), raw_class=predict_class(m, raw), shaped_class=predict_class(m, out))
    print(json.dumps(info))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "sweep": cmd_sweep, "report": cmd_report, "enhance": cmd_enhance}


def cli_main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        if isinstance(exc, ShapeMismatchError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATASET
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelFileError, TrainingDivergedError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DatasetError, PngError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ChromaShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
