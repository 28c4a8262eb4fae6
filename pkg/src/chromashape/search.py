"""Search for the weakest attack whose (optionally shaped) output still fools the model."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .attacks import CW, FGSM, MIM, NoiseSource
from .classifier import Model, _check_label, predict_class
from .image import RgbImage, add_noise, clip_unit, l2_distance
from .shaping import GaussianMask, ShapeConfig, compose_adversarial


@dataclass(frozen=True)
class StrengthSchedule:
    """Linear strength schedule.

    FGSM and MIM start at ``initial`` and move down by ``step`` after each
    improving success.  C&W strength is the iteration count and moves *up* by
    ``step``.  Before the first success every kind moves up, by ``boost`` if
    given and by ``step`` otherwise.
    """

    kind: str
    initial: float
    step: float
    boost: float | None = None
    minimum: float = 0.0
    max_attempts: int = 500

    def __post_init__(self):
        if self.kind not in (FGSM, MIM, CW):
            raise ValueError(f"unknown attack {self.kind!r}")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.boost is not None and not self.boost > 0:
            raise ValueError("boost must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.kind == CW and (self.initial != int(self.initial) or self.step != int(self.step) or self.initial < 1):
            raise ValueError("C&W strengths are iteration counts: use positive integers")

    @property
    def descending(self) -> bool:
        return self.kind != CW


# Desk-scale defaults for [0, 1] pixels.  FGSM keeps the reference schedule
# (10, -0.025, +5) divided by 255.
DEFAULT_SCHEDULES = {
    FGSM: StrengthSchedule(FGSM, 10.0 / 255, 0.025 / 255, boost=5.0 / 255),
    MIM: StrengthSchedule(MIM, 1.8, 0.01),
    CW: StrengthSchedule(CW, 10, 10),
}

# Schedules for full-size ImageNet networks: FGSM in 0-255 pixel units, MIM as L2 epsilon.
IMAGENET_SCHEDULES = {
    FGSM: StrengthSchedule(FGSM, 10.0, 0.025, boost=5.0),
    MIM: StrengthSchedule(MIM, 0.018, 0.001),
    CW: StrengthSchedule(CW, 10, 10),
}


@dataclass(frozen=True)
class Attempt:
    strength: float
    l2: float
    success: bool


@dataclass(frozen=True, eq=False)
class SearchResult:
    best_image: RgbImage | None
    best_l2: float
    strength: float | None
    attempts: int
    success: bool
    fallback_used: bool = False
    log: tuple = field(default=())


def is_successful(m: Model, adv: RgbImage, label) -> bool:
    label = _check_label(m, label)
    return predict_class(m, adv) != label


def _strength_at(sched: StrengthSchedule, boosts: int, steps: int) -> float:
    up = sched.boost if sched.boost is not None else sched.step
    base = sched.initial + boosts * up
    value = base - steps * sched.step if sched.descending else base + steps * sched.step
    return int(round(value)) if sched.kind == CW else value


def search_minimal(
    m: Model,
    img: RgbImage,
    label: int,
    sched: StrengthSchedule,
    attack_config=None,
    shape: ShapeConfig | None = None,
    mask: GaussianMask | None = None,
    shaping_enabled: bool = True,
    source: NoiseSource | None = None,
) -> SearchResult:
    """Lower the attack strength while the adversarial image keeps improving.

    Each attempt regenerates noise at the current strength from the original
    image.  With shaping the noise is chroma-scaled and windowed in YUV;
    without it the raw noise is added in RGB.  The result is clipped to
    ``[0, 1]`` before it is classified and measured.  The loop stops at the
    first attempt that fails or does not lower L2 after a success, when the
    strength would drop below ``sched.minimum``, or when attempts run out.
    """
    label = _check_label(m, label)
    if predict_class(m, img) != label:
        raise ValueError("clean image is already misclassified; nothing to attack")
    if source is None:
        source = NoiseSource(m, img, label, sched.kind, attack_config)
    elif source.kind != sched.kind:
        raise ValueError(f"noise source is {source.kind}, schedule is {sched.kind}")
    if shaping_enabled:
        shape = shape if shape is not None else ShapeConfig()
        mask = mask if mask is not None else shape.mask_for(img.width, img.height)

    tol = abs(sched.step) * 1e-9
    best_img, best_l2, best_strength = None, float("inf"), None
    boosts = steps = 0
    log = []
    for _ in range(sched.max_attempts):
        strength = _strength_at(sched, boosts, steps)
        if sched.descending and (strength <= tol or strength < sched.minimum - tol):
            break
        noise = source(strength)
        if shaping_enabled:
            adv = compose_adversarial(img, noise, shape, mask)
        else:
            adv = clip_unit(add_noise(img, noise))
        l2 = l2_distance(adv, img)
        ok = is_successful(m, adv, label)
        log.append(Attempt(strength, l2, ok))
        if ok and l2 < best_l2:
            best_img, best_l2, best_strength = adv, l2, strength
            steps += 1
        elif best_img is None:
            boosts += 1
        else:
            break
    return SearchResult(
        best_image=best_img,
        best_l2=best_l2 if best_img is not None else float("nan"),
        strength=best_strength,
        attempts=len(log),
        success=best_img is not None,
        log=tuple(log),
    )


def search_with_fallback(
    m: Model,
    img: RgbImage,
    label: int,
    sched: StrengthSchedule,
    attack_config=None,
    shape: ShapeConfig | None = None,
    mask: GaussianMask | None = None,
    source: NoiseSource | None = None,
    baseline: SearchResult | None = None,
) -> SearchResult:
    """Shaped search, replaced by the unshaped baseline when that is closer.

    A precomputed ``baseline`` (as from ``search_minimal(...,
    shaping_enabled=False)``) may be passed to avoid repeating it.
    """
    if source is None:
        source = NoiseSource(m, img, label, sched.kind, attack_config)
    shaped = search_minimal(m, img, label, sched, attack_config, shape, mask, True, source)
    if baseline is None:
        baseline = search_minimal(m, img, label, sched, attack_config, None, None, False, source)
    if baseline.success and (not shaped.success or baseline.best_l2 < shaped.best_l2):
        return replace(baseline, fallback_used=True)
    return shaped
