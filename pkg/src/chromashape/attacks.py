"""Untargeted FGSM, momentum iterative (MIM) and Carlini-Wagner L2 noise generators.

Every attack returns the raw RGB perturbation ``N = A - I``.  FGSM and MIM
ascend the cross-entropy of the true label; C&W minimises squared distance
plus a logit-margin penalty in tanh space.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import Model, _batch, _ce_dlogits, _check_label, input_gradient
from .errors import DegenerateGradientError, NumericFailureError
from .image import RGB, NoiseField, RgbImage


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass(frozen=True)
class MimConfig:
    epsilon: float
    iterations: int = 10
    decay: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")

    @property
    def step(self) -> float:
        return self.epsilon / self.iterations


@dataclass(frozen=True)
class CwConfig:
    c: float = 1.0
    kappa: float = 0.0
    max_iterations: int = 100
    step_size: float = 0.01
    optimizer: str = "adam"  # or "gd"

    def __post_init__(self):
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.c < 0 or self.kappa < 0:
            raise ValueError("c and kappa must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")


def fgsm_noise(m: Model, img: RgbImage, label, cfg: FgsmConfig) -> NoiseField:
    grad = input_gradient(m, img, label)
    return NoiseField(cfg.epsilon * np.sign(grad.data), RGB)


def mim_noise(m: Model, img: RgbImage, label, cfg: MimConfig) -> NoiseField:
    """Momentum iterative attack with an L2 budget of ``epsilon``.

    Each of the ``T`` steps adds ``epsilon / T`` along the L2-normalised
    momentum; iterates are clipped to ``[0, 1]`` so every gradient is taken at
    a valid image.
    """
    adv = img.data.copy()
    g = np.zeros_like(adv)
    for t in range(cfg.iterations):
        grad = input_gradient(m, RgbImage(adv), label).data
        l1 = np.abs(grad).sum()
        if l1 == 0.0:
            raise DegenerateGradientError(f"zero loss gradient at MIM iteration {t}")
        g = cfg.decay * g + grad / l1
        l2 = np.sqrt(np.sum(g * g))
        if l2 == 0.0:
            raise DegenerateGradientError(f"momentum vanished at MIM iteration {t}")
        adv = np.clip(adv + cfg.step * g / l2, 0.0, 1.0)
    return NoiseField(adv - img.data, RGB)


# --- Carlini-Wagner L2 -----------------------------------------------------

TANH_CLAMP = 1e-6
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class CwState:
    """Resumable optimiser state; extending ``max_iterations`` continues the same trajectory."""

    w: np.ndarray
    iteration: int = 0
    best_objective: float = np.inf
    best_image: np.ndarray | None = None
    best_adversarial: bool = False
    objective_history: list = field(default_factory=list)
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None

    @classmethod
    def start(cls, img: RgbImage) -> "CwState":
        x = np.clip(img.data, TANH_CLAMP, 1.0 - TANH_CLAMP)
        return cls(w=np.arctanh(2.0 * x - 1.0))


def _margin(z: np.ndarray, label: int) -> tuple[float, int]:
    others = z.copy()
    others[label] = -np.inf
    runner_up = int(np.argmax(others))
    return float(z[label] - z[runner_up]), runner_up


def cw_l2_run(m: Model, img: RgbImage, label, cfg: CwConfig, state: CwState | None = None) -> CwState:
    """Advance the optimisation of ``||A - I||^2 + c * f(A)`` to ``cfg.max_iterations`` steps.

    ``f(A) = max(Z_y - max_{i != y} Z_i, -kappa)`` vanishes once some wrong
    class leads by ``kappa``.  The best iterate is the lowest-objective one
    among those the model misclassifies; until any iterate is misclassified
    it is the lowest-objective iterate overall.
    """
    label = _check_label(m, label)
    _batch(m, img)
    st = state if state is not None else CwState.start(img)
    onehot = np.zeros(m.num_classes)
    while st.iteration < cfg.max_iterations:
        tw = np.tanh(st.w)
        adv = (tw + 1.0) / 2.0
        z, caches = m.forward(adv[None])
        z = z[0]
        margin, runner_up = _margin(z, label)
        f = max(margin, -cfg.kappa)
        diff = adv - img.data
        objective = float(np.sum(diff * diff) + cfg.c * f)
        if not np.isfinite(objective):
            raise NumericFailureError(f"non-finite C&W objective at iteration {st.iteration}")
        st.objective_history.append(objective)
        adversarial = int(np.argmax(z)) != label
        if (adversarial and (not st.best_adversarial or objective < st.best_objective)) or (
            not st.best_adversarial and not adversarial and objective < st.best_objective
        ):
            st.best_objective = objective
            st.best_image = adv
            st.best_adversarial = adversarial
        dadv = 2.0 * diff
        if cfg.c > 0 and margin > -cfg.kappa:
            onehot[:] = 0.0
            onehot[label] = cfg.c
            onehot[runner_up] = -cfg.c
            dz, _ = m.backward(onehot[None], caches)
            dadv = dadv + dz[0]
        dw = dadv * (1.0 - tw * tw) / 2.0
        st.iteration += 1
        if cfg.optimizer == "gd":
            st.w = st.w - cfg.step_size * dw
        else:
            if st.adam_m is None:
                st.adam_m = np.zeros_like(dw)
                st.adam_v = np.zeros_like(dw)
            st.adam_m = ADAM_BETA1 * st.adam_m + (1.0 - ADAM_BETA1) * dw
            st.adam_v = ADAM_BETA2 * st.adam_v + (1.0 - ADAM_BETA2) * dw * dw
            m_hat = st.adam_m / (1.0 - ADAM_BETA1**st.iteration)
            v_hat = st.adam_v / (1.0 - ADAM_BETA2**st.iteration)
            st.w = st.w - cfg.step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return st


def cw_l2_noise(m: Model, img: RgbImage, label, cfg: CwConfig) -> NoiseField:
    st = cw_l2_run(m, img, label, cfg)
    return NoiseField(st.best_image - img.data, RGB)


FGSM, MIM, CW = "fgsm", "mim", "cw"
ATTACKS = (FGSM, MIM, CW)


class NoiseSource:
    """Noise for one (image, label, attack) at varying strength, memoised.

    Strength is epsilon for FGSM/MIM and the iteration count for C&W.  The
    FGSM gradient sign is computed once, and C&W resumes its trajectory when
    asked for more iterations; both give results identical to calling the
    attack afresh.
    """

    def __init__(self, m: Model, img: RgbImage, label: int, kind: str, base=None):
        if kind not in ATTACKS:
            raise ValueError(f"unknown attack {kind!r}")
        self.m, self.img, self.label, self.kind = m, img, int(label), kind
        self.base = base if base is not None else default_attack_config(kind)
        self._cache: dict = {}
        self._sign = None
        self._cw_state: CwState | None = None

    def config_at(self, strength):
        if self.kind == FGSM:
            return FgsmConfig(float(strength))
        if self.kind == MIM:
            return MimConfig(float(strength), self.base.iterations, self.base.decay)
        return replace(self.base, max_iterations=int(strength))

    def __call__(self, strength) -> NoiseField:
        key = float(strength)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.kind == FGSM:
            if self._sign is None:
                self._sign = np.sign(input_gradient(self.m, self.img, self.label).data)
            noise = NoiseField(float(strength) * self._sign, RGB)
        elif self.kind == MIM:
            noise = mim_noise(self.m, self.img, self.label, self.config_at(strength))
        else:
            cfg = self.config_at(strength)
            st = self._cw_state
            if st is None or st.iteration > cfg.max_iterations:
                st = None
            st = cw_l2_run(self.m, self.img, self.label, cfg, st)
            self._cw_state = st
            noise = NoiseField(st.best_image - self.img.data, RGB)
        self._cache[key] = noise
        return noise


def default_attack_config(kind: str):
    if kind == FGSM:
        return FgsmConfig(0.0)
    if kind == MIM:
        return MimConfig(0.0)
    if kind == CW:
        return CwConfig(max_iterations=1)
    raise ValueError(f"unknown attack {kind!r}")
