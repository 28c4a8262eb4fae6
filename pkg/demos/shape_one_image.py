"""Shape one FGSM perturbation and compare it with the plain attack.

Trains the pinned toy classifier (a few seconds), takes one synthetic image,
runs the minimal-strength FGSM search with and without shaping, and writes
the three images next to this script.

    python demos/shape_one_image.py [alpha]
"""
import sys
from pathlib import Path

from chromashape import ShapeConfig, reference_model, search_minimal, search_with_fallback
from chromashape.classifier import generate_toy_dataset, predict_class
from chromashape.image import save_png
from chromashape.search import DEFAULT_SCHEDULES

alpha = float(sys.argv[1]) if len(sys.argv) > 1 else 0.6
out = Path(__file__).with_suffix("")
out.mkdir(exist_ok=True)

model = reference_model()
data = generate_toy_dataset(seed=1, count=8)
img, label = data.images[3], int(data.labels[3])
print(f"clean image: class {data.class_names[label]!r}, predicted {data.class_names[predict_class(model, img)]!r}")

sched = DEFAULT_SCHEDULES["fgsm"]
baseline = search_minimal(model, img, label, sched, shaping_enabled=False)
shaped = search_with_fallback(model, img, label, sched, shape=ShapeConfig(alpha), baseline=baseline)

# The shaped search keeps luminance noise, scales chroma noise by alpha and
# fades everything towards the borders, so it usually needs a larger epsilon
# but ends up closer to the original.
print(f"baseline: eps {baseline.strength * 255:.3f}/255  L2 {baseline.best_l2:.4f}  ({baseline.attempts} attempts)")
print(f"shaped:   eps {shaped.strength * 255:.3f}/255  L2 {shaped.best_l2:.4f}  ({shaped.attempts} attempts)"
      + ("  [baseline kept]" if shaped.fallback_used else ""))
print(f"adversarial class: {data.class_names[predict_class(model, shaped.best_image)]!r}")

save_png(img, out / "original.png")
save_png(baseline.best_image, out / "baseline.png")
save_png(shaped.best_image, out / f"shaped_{alpha:g}.png")
print(f"wrote PNGs to {out}")
