"""Alpha sweeps over attacks, improvement tables and report files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attacks import ATTACKS, CW, FGSM, MIM, CwConfig, MimConfig, NoiseSource
from .classifier import Model, ToyDataset, generate_toy_dataset, load_model, predict_class, reference_model
from .errors import DatasetError
from .image import load_png, quantize, save_png
from .search import DEFAULT_SCHEDULES, StrengthSchedule, search_minimal, search_with_fallback
from .shaping import ShapeConfig

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (1.0, 0.8, 0.6, 0.4, 0.2, 0.0)
WORKERS_ENV = "CHROMASHAPE_WORKERS"

DEFAULT_ATTACK_CONFIGS = {
    FGSM: None,
    MIM: MimConfig(0.0, iterations=10, decay=1.0),
    CW: CwConfig(c=10.0, kappa=0.0, max_iterations=1, step_size=0.01, optimizer="adam"),
}

CSV_COLUMNS = (
    "image_id",
    "attack",
    "alpha",
    "baseline_l2",
    "shaped_l2",
    "strength",
    "attempts",
    "success",
    "fallback_used",
)


def sig6(x):
    """Round to 6 significant digits; NaN and None become None."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    return float(f"{x:.6g}")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


# --- configuration ---------------------------------------------------------


@dataclass
class SweepConfig:
    attacks: tuple = ATTACKS
    alphas: tuple = DEFAULT_ALPHAS
    sigma: float | None = None
    schedules: dict = field(default_factory=lambda: dict(DEFAULT_SCHEDULES))
    attack_configs: dict = field(default_factory=lambda: dict(DEFAULT_ATTACK_CONFIGS))
    model_path: str | None = None
    toy_seed: int = 1
    toy_count: int = 64
    toy_size: int = 32
    toy_classes: int = 3
    png_dir: str | None = None
    labels_file: str | None = None
    output_dir: str | None = None
    workers: int | None = None

    def __post_init__(self):
        self.attacks = tuple(self.attacks)
        self.alphas = tuple(float(a) for a in self.alphas)
        if not self.attacks:
            raise ValueError("at least one attack is required")
        for a in self.attacks:
            if a not in ATTACKS:
                raise ValueError(f"unknown attack {a!r}")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"alpha {a} outside [0, 1]")
        if not self.alphas:
            raise ValueError("at least one alpha is required")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        if "schedules" in d:
            scheds = dict(DEFAULT_SCHEDULES)
            for kind, s in d["schedules"].items():
                scheds[kind] = StrengthSchedule(kind=kind, **{k: v for k, v in s.items() if k != "kind"})
            d["schedules"] = scheds
        if "attack_configs" in d:
            cfgs = dict(DEFAULT_ATTACK_CONFIGS)
            for kind, c in d["attack_configs"].items():
                if kind == MIM:
                    cfgs[kind] = MimConfig(**{"epsilon": 0.0, **c})
                elif kind == CW:
                    cfgs[kind] = CwConfig(**{"max_iterations": 1, **c})
                elif kind != FGSM:
                    raise ValueError(f"unknown attack {kind!r}")
            d["attack_configs"] = cfgs
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attacks"] = list(self.attacks)
        d["alphas"] = list(self.alphas)
        d["schedules"] = {k: asdict(v) for k, v in sorted(self.schedules.items())}
        d["attack_configs"] = {k: asdict(v) for k, v in sorted(self.attack_configs.items()) if v is not None}
        return d

    def worker_count(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def load_png_dataset(png_dir, labels_file=None, class_names=None) -> tuple[list[str], ToyDataset]:
    """PNG directory plus a ``filename,label`` CSV (default ``labels.csv`` inside it)."""
    png_dir = Path(png_dir)
    labels_path = Path(labels_file) if labels_file else png_dir / "labels.csv"
    if not labels_path.is_file():
        raise DatasetError(f"label file not found: {labels_path}")
    ids, images, labels = [], [], []
    with labels_path.open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "filename":
                continue
            if len(row) < 2:
                raise DatasetError(f"bad label row {row!r} in {labels_path}")
            name, label = row[0].strip(), row[1].strip()
            try:
                images.append(load_png(png_dir / name))
                labels.append(int(label))
            except ValueError as exc:
                raise DatasetError(f"bad label {label!r} for {name}") from exc
            ids.append(Path(name).stem)
    if not images:
        raise DatasetError(f"no images listed in {labels_path}")
    names = tuple(class_names) if class_names else tuple(str(i) for i in range(max(labels) + 1))
    return ids, ToyDataset(images, np.array(labels, dtype=np.int64), None, names)


# --- report ----------------------------------------------------------------


@dataclass(frozen=True)
class ColumnImprovement:
    column: str
    baseline: float
    best_alpha: float
    best_mean: float
    improvement: float  # percent


def improvement_table(baseline_means: dict, alpha_means: dict) -> tuple[list[ColumnImprovement], float]:
    """Best alpha and percent L2 improvement per column, plus their mean.

    ``alpha_means[col]`` maps alpha to mean shaped L2.  The best alpha has the
    lowest mean; ties go to the larger alpha.
    """
    out = []
    for col, base in baseline_means.items():
        if base is None or not base > 0:
            raise ValueError(f"baseline mean for {col!r} must be positive, got {base}")
        cells = [(a, v) for a, v in alpha_means[col].items() if v is not None]
        if not cells:
            raise ValueError(f"no shaped means for {col!r}")
        best_alpha, best = min(cells, key=lambda av: (av[1], -av[0]))
        out.append(ColumnImprovement(col, base, best_alpha, best, 100.0 * (base - best) / base))
    mean = sum(c.improvement for c in out) / len(out)
    return out, mean


def load_table_fixture(path=None) -> tuple[dict, dict]:
    """Read a means table: ``{"columns": [{"name", "baseline", "alphas": {alpha: mean}}]}``."""
    if path is None:
        from importlib.resources import files

        text = files("chromashape").joinpath("data/imagenet_means.json").read_text()
    else:
        text = Path(path).read_text()
    data = json.loads(text)
    base, per_alpha = {}, {}
    for col in data["columns"]:
        base[col["name"]] = float(col["baseline"])
        per_alpha[col["name"]] = {float(a): float(v) for a, v in col["alphas"].items()}
    return base, per_alpha


@dataclass
class SweepReport:
    rows: list  # dicts keyed by ROW_FIELDS, sorted by (image_id, attack, alpha)
    skipped: list = field(default_factory=list)  # [{"image_id", "reason"}]
    config: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict, repr=False)  # not serialised

    def aggregates(self) -> dict:
        attacks = sorted({r["attack"] for r in self.rows})
        per_attack = {}
        for attack in attacks:
            rows = [r for r in self.rows if r["attack"] == attack]
            baselines = {}
            for r in rows:
                if _baseline_ok(r):
                    baselines[r["image_id"]] = r["baseline_l2"]
            base_mean = _mean(list(baselines.values()))
            cells = {}
            for alpha in sorted({r["alpha"] for r in rows}, reverse=True):
                sel = [r for r in rows if r["alpha"] == alpha]
                ok = [r for r in sel if r["success"]]
                improved = [r for r in ok if _baseline_ok(r) and r["shaped_l2"] < r["baseline_l2"]]
                cells[_alpha_key(alpha)] = {
                    "mean_l2": sig6(_mean([r["shaped_l2"] for r in ok])),
                    "successes": len(ok),
                    "cells": len(sel),
                    "improved_fraction": sig6(len(improved) / len(sel)) if sel else None,
                    "fallback_rate": sig6(sum(r["fallback_used"] for r in sel) / len(sel)) if sel else None,
                }
            entry = {
                "baseline_mean_l2": sig6(base_mean),
                "baseline_successes": len(baselines),
                "images": len({r["image_id"] for r in rows}),
                "alphas": cells,
            }
            if base_mean and base_mean > 0 and any(c["mean_l2"] is not None for c in cells.values()):
                table, _ = improvement_table(
                    {attack: base_mean}, {attack: {float(a): c["mean_l2"] for a, c in cells.items()}}
                )
                entry["best_alpha"] = table[0].best_alpha
                entry["improvement_percent"] = sig6(table[0].improvement)
                entry["best_alpha_improved_fraction"] = cells[_alpha_key(table[0].best_alpha)]["improved_fraction"]
            per_attack[attack] = entry
        imps = [e["improvement_percent"] for e in per_attack.values() if e.get("improvement_percent") is not None]
        return {"attacks": per_attack, "mean_improvement_percent": sig6(_mean(imps))}

    def to_json(self) -> str:
        doc = {
            "format": "chromashape-sweep-report",
            "version": 1,
            "config": self.config,
            "rows": self.rows,
            "skipped": self.skipped,
            "aggregates": self.aggregates(),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "SweepReport":
        doc = json.loads(text)
        if doc.get("format") != "chromashape-sweep-report":
            raise ValueError("not a sweep report")
        return cls(rows=doc["rows"], skipped=doc.get("skipped", []), config=doc.get("config", {}))


def _baseline_ok(row) -> bool:
    # CSV rows carry no baseline_success column; a blank baseline_l2 marks failure
    return row.get("baseline_success", row["baseline_l2"] is not None)


def _alpha_key(alpha: float) -> str:
    return f"{alpha:g}"


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def read_csv_rows(text: str) -> list[dict]:
    rows = []
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    for r in reader:
        rows.append(
            {
                "image_id": r["image_id"],
                "attack": r["attack"],
                "alpha": float(r["alpha"]),
                "baseline_l2": float(r["baseline_l2"]) if r["baseline_l2"] else None,
                "shaped_l2": float(r["shaped_l2"]) if r["shaped_l2"] else None,
                "strength": float(r["strength"]) if r["strength"] else None,
                "attempts": int(r["attempts"]),
                "success": r["success"] == "true",
                "fallback_used": r["fallback_used"] == "true",
            }
        )
    return rows


def write_report(report: SweepReport, fmt: str, path) -> Path:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    text = report.to_csv() if fmt == "csv" else report.to_json()
    path.write_text(text)
    return path


# --- sweep -----------------------------------------------------------------


def _strength_value(kind, s):
    if s is None:
        return None
    return int(s) if kind == CW else sig6(s)


def _work_item(args):
    """Baseline plus every alpha for one (image, attack)."""
    m, image_id, img, label, kind, alphas, sigma, sched, attack_cfg, keep_images = args
    source = NoiseSource(m, img, label, kind, attack_cfg)
    baseline = search_minimal(m, img, label, sched, attack_cfg, shaping_enabled=False, source=source)
    rows, images = [], {}
    for alpha in alphas:
        shape = ShapeConfig(alpha, sigma)
        res = search_with_fallback(m, img, label, sched, attack_cfg, shape, source=source, baseline=baseline)
        rows.append(
            {
                "image_id": image_id,
                "attack": kind,
                "alpha": alpha,
                "baseline_l2": sig6(baseline.best_l2),
                "shaped_l2": sig6(res.best_l2),
                "strength": _strength_value(kind, res.strength),
                "attempts": res.attempts,
                "success": res.success,
                "fallback_used": res.fallback_used,
                "baseline_strength": _strength_value(kind, baseline.strength),
                "baseline_attempts": baseline.attempts,
                "baseline_success": baseline.success,
                "label": label,
            }
        )
        if keep_images and res.success:
            images[(image_id, kind, alpha)] = (img, baseline.best_image, res.best_image)
    return rows, images


def run_sweep(
    cfg: SweepConfig,
    model: Model | None = None,
    dataset: ToyDataset | None = None,
    image_ids=None,
    keep_images: bool = True,
) -> SweepReport:
    """Baseline and shaped-with-fallback searches for every kept image, attack and alpha.

    Images the model misclassifies before any attack are skipped and listed in
    ``report.skipped``.
    """
    if model is None:
        model = load_model(cfg.model_path) if cfg.model_path else reference_model()
    if dataset is None:
        if cfg.png_dir:
            image_ids, dataset = load_png_dataset(cfg.png_dir, cfg.labels_file, model.class_names)
        else:
            dataset = generate_toy_dataset(cfg.toy_seed, cfg.toy_count, cfg.toy_size, cfg.toy_classes)
    if len(dataset) == 0:
        raise DatasetError("dataset is empty")
    if image_ids is None:
        width = max(4, len(str(len(dataset) - 1)))
        image_ids = [f"img{i:0{width}d}" for i in range(len(dataset))]

    items, skipped = [], []
    for image_id, img, label in zip(image_ids, dataset.images, dataset.labels):
        label = int(label)
        if not 0 <= label < model.num_classes:
            raise DatasetError(f"label {label} of {image_id} outside the model's {model.num_classes} classes")
        if predict_class(model, img) != label:
            skipped.append({"image_id": image_id, "reason": "misclassified before attack"})
            continue
        for kind in cfg.attacks:
            items.append(
                (
                    model,
                    image_id,
                    img,
                    label,
                    kind,
                    cfg.alphas,
                    cfg.sigma,
                    cfg.schedules[kind],
                    cfg.attack_configs.get(kind),
                    keep_images,
                )
            )

    workers = cfg.worker_count()
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_work_item, items, chunksize=1))
    else:
        results = [_work_item(it) for it in items]

    rows, images = [], {}
    for r, im in results:
        rows.extend(r)
        images.update(im)
    rows.sort(key=lambda r: (r["image_id"], r["attack"], r["alpha"]))
    log.info("sweep finished: %d rows, %d images skipped", len(rows), len(skipped))
    return SweepReport(rows=rows, skipped=skipped, config=cfg.to_dict(), images=images)


# --- images ----------------------------------------------------------------


def image_name(image_id: str, attack: str, variant: str, alpha: float) -> str:
    return f"{image_id}_{attack}_{variant}_{alpha:g}.png"


def emit_images(report: SweepReport, out_dir) -> list[Path]:
    """Write original, baseline and shaped PNGs for every successful cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for (image_id, attack, alpha), triple in sorted(report.images.items()):
        for variant, img in zip(("original", "baseline", "shaped"), triple):
            if img is None:
                continue
            p = out_dir / image_name(image_id, attack, variant, alpha)
            save_png(img, p)
            paths.append(p)
    return paths


def quantized_success_rate(report: SweepReport, model: Model) -> float | None:
    """Share of successful shaped cells still misclassified after 8-bit quantization."""
    labels = {(r["image_id"], r["attack"], r["alpha"]): r["label"] for r in report.rows if "label" in r}
    hits = total = 0
    for key, (_, _, shaped) in report.images.items():
        if shaped is None or key not in labels:
            continue
        total += 1
        hits += predict_class(model, quantize(shaped)) != labels[key]
    return hits / total if total else None
