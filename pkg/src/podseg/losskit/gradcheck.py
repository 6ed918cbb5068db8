"""Central finite-difference checks for every analytic gradient in the loss kit."""

from __future__ import annotations

from typing import Callable, Dict, Tuple

import numpy as np

from ..errors import KinkProximity
from .alignment import DualHeadLogits, FeaturePair, loss_j_am, loss_s_am, semantic_distance
from .config import LossConfig
from .gate import DynamicGateInputs, dynamic_gate_forward
from .ocm import ocm_loss
from .supervised import HeadPredictions, HeadTargets, supervised_losses

# func(x) -> (value, gradient with x's shape)
ValueAndGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def numeric_gradient(func: ValueAndGrad, point: np.ndarray, eps: float) -> np.ndarray:
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        fp = func(x)[0]
        flat[j] = orig - eps
        fm = func(x)[0]
        flat[j] = orig
        grad[j] = (fp - fm) / (2.0 * eps)
    return grad.reshape(x.shape)


def finite_diff_check(func: ValueAndGrad, point: np.ndarray, eps: float = 1e-6) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|)."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    analytic = np.asarray(func(np.array(point, dtype=np.float64))[1], dtype=np.float64)
    numeric = numeric_gradient(func, point, eps)
    if analytic.shape != numeric.shape:
        raise ValueError(f"gradient shape {analytic.shape} != point shape {numeric.shape}")
    if numeric.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def sample_kink_free(build, rng: np.random.Generator, min_distance: float, max_tries: int = 100):
    """Draw ``build(rng) -> (func, point, kink_distance)`` until the point clears every kink."""
    for tries in range(1, max_tries + 1):
        func, point, distance = build(rng)
        if distance > min_distance:
            return func, point, tries - 1
    raise KinkProximity(f"no kink-free point after {max_tries} draws")


# ---------------------------------------------------------------- per-op problem builders


def _build_s_am(rng):
    nc, p = int(rng.integers(2, 5)), int(rng.integers(3, 9))
    sh_in = rng.normal(0, 1.5, (nc, p))
    y = rng.integers(0, 2, p)
    m = float(rng.choice([rng.uniform(0.5, 4.0), 50.0]))

    def func(x):
        return loss_s_am(DualHeadLogits(sh_in, x, y), m)

    x0 = rng.normal(0, 1.5, (nc + 1, p))
    e, _ = semantic_distance(DualHeadLogits(sh_in, x0, y))
    dist = np.min(np.abs(e - m)[y == 1], initial=np.inf)
    return func, x0, dist


def _build_j_am(rng):
    d, p = int(rng.integers(2, 6)), int(rng.integers(3, 9))
    x_in = rng.normal(0, 1.0, (d, p))
    y = rng.integers(0, 2, p)
    m = float(rng.choice([rng.uniform(1.0, 6.0), 50.0]))
    head = "center_pred" if rng.random() < 0.5 else "center_regress"

    def func(x):
        return loss_j_am(FeaturePair(x_in, x, y, head), m)

    x0 = rng.normal(0, 1.0, (d, p))
    e = np.sum(np.abs(x0 - x_in), axis=0)
    dist = min(np.min(np.abs(x0 - x_in)), np.min(np.abs(e - m)[y == 1], initial=np.inf))
    return func, x0, dist


def _build_supervised(rng):
    k, h, w = int(rng.integers(2, 5)), int(rng.integers(3, 6)), int(rng.integers(3, 6))
    labels = rng.integers(-1, k, (h, w))
    labels[0, 0] = 0
    weights = rng.uniform(0.5, 2.0, (h, w))
    t_heat = rng.uniform(0, 1, (h, w))
    t_offs = rng.normal(0, 3, (2, h, w))
    mask = rng.random((h, w)) < 0.6
    cfg = LossConfig(bootstrap_fraction=float(rng.uniform(0.1, 1.0)))
    shapes = [(k, h, w), (h, w), (2, h, w)]
    sizes = [int(np.prod(s)) for s in shapes]
    target = HeadTargets(labels, t_heat, t_offs, mask, weights)

    def unpack(x):
        a, b = sizes[0], sizes[0] + sizes[1]
        return x[:a].reshape(shapes[0]), x[a:b].reshape(shapes[1]), x[b:].reshape(shapes[2])

    def run(x):
        logits, heat, offs = unpack(x)
        return supervised_losses(HeadPredictions(logits, heat, offs), target, cfg)

    def func(x):
        r = run(x)
        return r.sem + r.cp + r.cr, np.concatenate([r.grad_logits.ravel(), r.grad_heatmap.ravel(), r.grad_offsets.ravel()])

    x0 = np.concatenate([rng.normal(0, 2, sizes[0]), rng.uniform(0, 1, sizes[1]), rng.normal(0, 3, sizes[2])])
    r = run(x0)
    _, _, offs = unpack(x0)
    resid = np.abs(offs - t_offs)[:, mask]
    dist = min(r.bootstrap_gap, np.min(resid, initial=np.inf))
    return func, x0, dist


def _build_ocm(rng):
    p_a, p_b = int(rng.integers(3, 10)), int(rng.integers(3, 10))
    has_ood = int(rng.integers(0, 2))
    lab_a = rng.integers(0, 2, p_a)
    lab_b = rng.integers(0, 2, p_b)
    cfg = LossConfig()
    n_a = 2 * p_a

    def func(x):
        r = ocm_loss(x[0], has_ood, x[1:1 + n_a].reshape(2, p_a), x[1 + n_a:].reshape(2, p_b), lab_a, lab_b, cfg)
        return r.loss, np.concatenate([[r.grad_class_logit], r.grad_seg_a.ravel(), r.grad_seg_b.ravel()])

    x0 = rng.normal(0, 2, 1 + n_a + 2 * p_b)
    return func, x0, np.inf


def _build_gate(rng):
    c_f, hidden, c_out = (int(rng.integers(2, 5)) for _ in range(3))
    c_g, p, q = int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 6))
    c_gate = 1 if rng.random() < 0.5 else c_out
    f = rng.normal(0, 1, (c_f, p))
    g = rng.normal(0, 1, (c_g, q))
    k = rng.normal(0, 1, (c_out, p))
    w1 = rng.normal(0, 1, (hidden, c_f))
    w2 = rng.normal(0, 1, (c_out, hidden))
    up = rng.normal(0, 1, (c_out, p))
    shapes = [(hidden, c_f), (c_out, hidden), (c_gate, c_g), (c_gate,)]
    bounds = np.cumsum([0] + [int(np.prod(s)) for s in shapes])

    def inputs(x):
        parts = [x[bounds[i]:bounds[i + 1]].reshape(s) for i, s in enumerate(shapes)]
        return DynamicGateInputs(f, g, k, w1, w2, parts[0], parts[1], parts[2], parts[3])

    def func(x):
        out = dynamic_gate_forward(inputs(x), up)
        grad = np.concatenate([out.grad_dw1.ravel(), out.grad_dw2.ravel(), out.grad_h1_w.ravel(), out.grad_h1_b.ravel()])
        return float(np.sum(up * out.f_o)), grad

    x0 = rng.normal(0, 0.5, bounds[-1])
    dist = float(np.min(np.abs(dynamic_gate_forward(inputs(x0), up).pre_activation)))
    return func, x0, dist


BUILDERS = {
    "loss_s_am": _build_s_am,
    "loss_j_am": _build_j_am,
    "supervised_losses": _build_supervised,
    "ocm_loss": _build_ocm,
    "dynamic_gate_forward": _build_gate,
}


def gradient_suite(ops=None, trials: int = 50, eps: float = 1e-6, seed: int = 0,
                   min_distance: float = 1e-3) -> Dict[str, Dict[str, float]]:
    """Run ``trials`` kink-free finite-difference checks per op; report the worst error of each."""
    names = list(BUILDERS) if ops is None else list(ops)
    report = {}
    for idx, name in enumerate(names):
        if name not in BUILDERS:
            raise KeyError(f"unknown op {name!r}; choose from {sorted(BUILDERS)}")
        rng = np.random.default_rng([seed, idx])
        worst, rejected = 0.0, 0
        for _ in range(trials):
            func, point, rej = sample_kink_free(BUILDERS[name], rng, min_distance)
            rejected += rej
            worst = max(worst, finite_diff_check(func, point, eps))
        report[name] = {"max_error": worst, "trials": trials, "rejected_draws": rejected}
    return report
