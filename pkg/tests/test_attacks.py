import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chromashape.attacks import (
    CW,
    FGSM,
    MIM,
    CwConfig,
    FgsmConfig,
    MimConfig,
    NoiseSource,
    cw_l2_noise,
    cw_l2_run,
    fgsm_noise,
    mim_noise,
)
from chromashape.classifier import init_model, input_gradient, predict_class
from chromashape.errors import DegenerateGradientError, ShapeMismatchError
from chromashape.image import RgbImage

from conftest import linear_model

SMALL_CONV = [{"type": "conv", "out": 3, "kernel": 3, "stride": 2}, {"type": "relu"}, {"type": "flatten"}, {"type": "dense"}]


def small_model(seed=0):
    return init_model(SMALL_CONV, (3, 8, 8), ("a", "b", "c"), seed=seed)


def random_image(rng, h=8, w=8):
    return RgbImage(rng.uniform(0.05, 0.95, (3, h, w)))


# --- FGSM --------------------------------------------------------------------


def test_fgsm_zero_epsilon(rng):
    m = small_model()
    assert np.all(fgsm_noise(m, random_image(rng), 0, FgsmConfig(0.0)).data == 0.0)


def test_fgsm_linear_hand_computed_signs():
    # label 0; dJ/dx = p1 * (W1 - W0) with W1 - W0 = (1, -2, 3)
    m = linear_model([[0.0, 0.0, 0.0], [1.0, -2.0, 3.0]])
    img = RgbImage(np.full((3, 1, 1), 0.5))
    assert np.allclose(fgsm_noise(m, img, 0, FgsmConfig(0.1)).data.ravel(), [0.1, -0.1, 0.1], atol=0, rtol=0)


def test_fgsm_values_and_linf(rng):
    m = small_model(1)
    img = random_image(rng)
    n = fgsm_noise(m, img, 1, FgsmConfig(0.03)).data
    assert set(np.unique(n)) <= {-0.03, 0.0, 0.03}
    if np.all(input_gradient(m, img, 1).data != 0):
        assert np.max(np.abs(n)) == 0.03


def test_fgsm_rejects_mismatched_image(rng):
    with pytest.raises(ShapeMismatchError):
        fgsm_noise(small_model(), random_image(rng, 4, 4), 0, FgsmConfig(0.1))


def test_negative_epsilon_rejected():
    with pytest.raises(ValueError):
        FgsmConfig(-0.1)
    with pytest.raises(ValueError):
        MimConfig(-0.1)


# --- MIM ---------------------------------------------------------------------


def test_mim_zero_epsilon(rng):
    assert np.all(mim_noise(small_model(), random_image(rng), 0, MimConfig(0.0)).data == 0.0)


def test_mim_single_step_has_norm_epsilon(rng):
    m = small_model(2)
    img = random_image(rng)
    n = mim_noise(m, img, 2, MimConfig(0.05, iterations=1, decay=0.0)).data
    g = input_gradient(m, img, 2).data
    assert np.linalg.norm(n) == pytest.approx(0.05, rel=1e-12)
    assert np.allclose(n, 0.05 * g / np.linalg.norm(g), atol=1e-15)


def test_mim_two_steps_match_scalar_loop():
    w = np.array([[0.3, -0.2, 0.5, 0.1, 0.0, -0.4], [-0.1, 0.6, -0.3, 0.2, 0.7, 0.1]])
    b = np.array([0.2, -0.1])
    m = linear_model(w, b, 1, 2)
    x0 = [0.4, 0.5, 0.6, 0.3, 0.2, 0.7]
    eps, mu, T = 0.3, 1.0, 2

    # plain python oracle on flattened values; flatten order is channel-major
    x = list(x0)
    g = [0.0] * 6
    for _ in range(T):
        z = [sum(w[k][i] * x[i] for i in range(6)) + b[k] for k in range(2)]
        zmax = max(z)
        e = [np.exp(v - zmax) for v in z]
        p = [v / sum(e) for v in e]
        grad = [p[1] * (w[1][i] - w[0][i]) for i in range(6)]  # label 0
        l1 = sum(abs(v) for v in grad)
        g = [mu * g[i] + grad[i] / l1 for i in range(6)]
        l2 = sum(v * v for v in g) ** 0.5
        x = [min(1.0, max(0.0, x[i] + eps / T * g[i] / l2)) for i in range(6)]
    expected = np.array([x[i] - x0[i] for i in range(6)])

    n = mim_noise(m, RgbImage(np.array(x0).reshape(3, 1, 2)), 0, MimConfig(eps, T, mu)).data
    assert np.allclose(n.ravel(), expected, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0.0, 3.0), iters=st.integers(1, 6), decay=st.floats(0.0, 1.5))
def test_mim_noise_within_budget(seed, eps, iters, decay):
    rng = np.random.default_rng(seed)
    m = small_model(seed % 4)
    n = mim_noise(m, random_image(rng), int(seed % 3), MimConfig(eps, iters, decay)).data
    assert np.linalg.norm(n) <= eps + 1e-9


def test_mim_zero_gradient_raises_degenerate():
    m = linear_model(np.zeros((2, 3)), [1.0, 0.0])
    with pytest.raises(DegenerateGradientError):
        mim_noise(m, RgbImage(np.full((3, 1, 1), 0.5)), 0, MimConfig(0.1))


# --- C&W ---------------------------------------------------------------------


def test_cw_without_penalty_stays_at_the_image(rng):
    m = small_model(3)
    img = random_image(rng)
    n = cw_l2_noise(m, img, 0, CwConfig(c=0.0, max_iterations=50))
    assert np.linalg.norm(n.data) < 1e-3


@pytest.mark.parametrize("opt", ["adam", "gd"])
def test_cw_output_in_unit_range_without_clipping(rng, opt):
    m = small_model(4)
    img = RgbImage(rng.choice([0.0, 1.0, 0.5], size=(3, 8, 8)))
    st_ = cw_l2_run(m, img, 1, CwConfig(c=50.0, max_iterations=40, step_size=0.05, optimizer=opt))
    assert st_.best_image.min() >= 0.0 and st_.best_image.max() <= 1.0


@pytest.mark.parametrize("opt,iters", [("adam", 3000), ("gd", 1000)])
def test_cw_two_pixel_problem_matches_grid_search(opt, iters):
    # only the red values of the two pixels reach the logits
    w = np.zeros((2, 6))
    w[0, 0], w[0, 1] = 4.0, 2.0
    m = linear_model(w, [0.0, 3.0], 1, 2)
    x0 = np.array([0.9, 0.8, 0.3, 0.3, 0.4, 0.4]).reshape(3, 1, 2)
    img = RgbImage(x0)
    assert predict_class(m, img) == 0
    c = 20.0
    st_ = cw_l2_run(m, img, 0, CwConfig(c=c, max_iterations=iters, step_size=0.01, optimizer=opt))

    # z0 - z1 = 4 r0 + 2 r1 - 3; objective with the other values left untouched
    r0, r1 = np.meshgrid(np.linspace(0, 1, 2001), np.linspace(0, 1, 2001), indexing="ij")
    margin = 4 * r0 + 2 * r1 - 3.0
    obj = (r0 - 0.9) ** 2 + (r1 - 0.8) ** 2 + c * np.maximum(margin, 0.0)
    adversarial = margin < 0
    grid_best = obj[adversarial].min()
    initial = c * (4 * 0.9 + 2 * 0.8 - 3.0)

    assert st_.best_adversarial
    assert predict_class(m, RgbImage(st_.best_image)) == 1
    assert st_.best_objective <= initial
    assert st_.best_objective >= grid_best - 1e-3
    assert st_.best_objective <= grid_best * 1.01
    assert np.allclose(st_.best_image[1:], x0[1:], atol=1e-9)


def test_cw_resumed_run_equals_fresh_run(rng):
    m = small_model(5)
    img = random_image(rng)
    cfg = CwConfig(c=5.0, max_iterations=30)
    fresh = cw_l2_run(m, img, 2, cfg)
    part = cw_l2_run(m, img, 2, CwConfig(c=5.0, max_iterations=12))
    resumed = cw_l2_run(m, img, 2, cfg, part)
    assert np.array_equal(fresh.best_image, resumed.best_image)
    assert fresh.objective_history == resumed.objective_history


def test_cw_best_objective_non_increasing_once_adversarial(rng):
    m = small_model(6)
    img = random_image(rng)
    label = predict_class(m, img)
    state = None
    seen = []
    for n in range(5, 200, 5):
        state = cw_l2_run(m, img, label, CwConfig(c=10.0, max_iterations=n, step_size=0.02), state)
        seen.append((state.best_adversarial, state.best_objective))
    for adv in (False, True):
        phase = [o for a, o in seen if a == adv]
        assert all(b <= a for a, b in zip(phase, phase[1:]))
    assert seen[-1][0]


# --- noise source ------------------------------------------------------------


@pytest.mark.parametrize("kind", [FGSM, MIM, CW])
def test_noise_source_matches_direct_calls(rng, kind):
    m = small_model(7)
    img = random_image(rng)
    src = NoiseSource(m, img, 1, kind)
    strengths = [0.2, 0.1, 0.3] if kind != CW else [20, 10, 40]
    for s in strengths:
        cfg = src.config_at(s)
        direct = {FGSM: fgsm_noise, MIM: mim_noise, CW: cw_l2_noise}[kind](m, img, 1, cfg)
        assert np.array_equal(src(s).data, direct.data)
