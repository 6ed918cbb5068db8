import numpy as np
import pytest

from podseg.errors import KinkProximity, NonFinite, ShapeMismatch
from podseg.losskit import (
    DualHeadLogits,
    DynamicGateInputs,
    FeaturePair,
    HeadPredictions,
    HeadTargets,
    LossConfig,
    dynamic_gate_forward,
    loss_j_am,
    loss_s_am,
    ocm_loss,
    supervised_losses,
    total_loss,
)
from podseg.losskit.alignment import softplus
from podseg.losskit.config import PARTS
from podseg.losskit.gradcheck import finite_diff_check, gradient_suite, sample_kink_free

SH_IN = np.array([[0.5, -1.0, 2.0, 0.0], [1.5, 0.3, -0.7, 1.1], [-0.2, 0.8, 0.4, -1.3]])
SH_OUT = np.array([[0.1, -0.5, 1.0, 0.3], [1.2, 0.0, -0.2, 0.9], [0.4, 1.1, 0.6, -1.0], [1.0, 0.2, 2.5, 0.7]])


# --------------------------------------------------------------- alignment-mismatch


def test_s_am_identical_heads_in_distribution():
    d = DualHeadLogits(SH_IN, DualHeadLogits(SH_IN, SH_OUT, np.zeros(4)).augmented_in(), np.zeros(4))
    loss, grad = loss_s_am(d, 50.0)
    assert loss == 0.0 and not grad.any()


def test_s_am_saturated_hinge():
    far = np.vstack([SH_IN, SH_IN.max(axis=0)]) + 30.0
    loss, grad = loss_s_am(DualHeadLogits(SH_IN, far, np.ones(4)), 5.0)
    assert loss == 0.0 and not grad.any()


def test_s_am_fixed_case_matches_scalar_oracle():
    d = DualHeadLogits(SH_IN, SH_OUT, np.array([0, 1, 0, 1]))
    assert loss_s_am(d, 2.0)[0] == pytest.approx(0.613508067729239, rel=1e-12)
    assert loss_s_am(d, 50.0)[0] == pytest.approx(12.613508067729239, rel=1e-12)


def test_s_am_gradient_is_for_trainable_head_only():
    d = DualHeadLogits(SH_IN, SH_OUT, np.array([0, 1, 0, 1]))
    assert loss_s_am(d, 2.0)[1].shape == SH_OUT.shape


def test_s_am_random_gradient():
    rng = np.random.default_rng(0)
    sh_in = rng.normal(size=(3, 4))
    y = np.array([0, 1, 0, 1])

    def f(x):
        return loss_s_am(DualHeadLogits(sh_in, x, y), 50.0)

    assert finite_diff_check(f, rng.normal(size=(4, 4))) < 1e-5


def test_s_am_margin_monotone():
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = DualHeadLogits(rng.normal(size=(3, 6)), rng.normal(size=(4, 6)), rng.integers(0, 2, 6))
        losses = [loss_s_am(d, m)[0] for m in (0.0, 0.5, 1.0, 5.0, 50.0)]
        assert all(a <= b for a, b in zip(losses, losses[1:]))
        assert min(losses) >= 0.0


def test_s_am_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        DualHeadLogits(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros(4))


def test_softplus_stable():
    assert softplus(np.array([1000.0]))[0] == 1000.0
    assert softplus(np.array([-1000.0]))[0] == 0.0


def test_j_am_identity_and_boundary():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert loss_j_am(FeaturePair(x, x, np.zeros(2)), 50.0)[0] == 0.0
    out = x + np.array([[1.5, 0.0], [1.5, 3.0]])  # e = 3 in both pixels
    loss, grad = loss_j_am(FeaturePair(x, out, np.ones(2)), 3.0)
    assert loss == 0.0 and not grad.any()


def test_j_am_fixed_case_matches_scalar_oracle():
    f = FeaturePair(np.array([[1, 2, 3], [0, -1, 0.5]]), np.array([[1.5, 2, 1], [0.25, -3, 0.5]]),
                    np.array([0, 1, 1]), head="center_regress")
    assert loss_j_am(f, 3.0)[0] == pytest.approx(0.4583333333333333, rel=1e-12)


def test_j_am_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        FeaturePair(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros(3))


# --------------------------------------------------------------- supervised heads


def _targets(labels, heat, offs, mask, weights=None):
    return HeadTargets(np.asarray(labels), np.asarray(heat, float), np.asarray(offs, float),
                       np.asarray(mask, bool), None if weights is None else np.asarray(weights, float))


def test_supervised_perfect_predictions():
    labels = np.array([[0, 2, 1]])
    logits = np.zeros((3, 1, 3))
    for i, lab in enumerate(labels[0]):
        logits[lab, 0, i] = 1000.0
    heat = np.array([[0.1, 1.0, 0.3]])
    offs = np.ones((2, 1, 3))
    r = supervised_losses(HeadPredictions(logits, heat, offs), _targets(labels, heat, offs, [[1, 1, 0]]))
    assert (r.sem, r.cp, r.cr) == (0.0, 0.0, 0.0)


def test_supervised_constant_heatmap_offset():
    heat = np.random.default_rng(0).random((4, 4))
    r = supervised_losses(HeadPredictions(np.zeros((2, 4, 4)), heat + 0.3, np.zeros((2, 4, 4))),
                          _targets(np.zeros((4, 4), int), heat, np.zeros((2, 4, 4)), np.zeros((4, 4))))
    assert r.cp == pytest.approx(0.09, rel=1e-12)
    assert r.cr == 0.0 and r.cr_empty


def test_supervised_fixed_case_matches_scalar_oracle():
    logits = np.array([[2.0, 0.0, 1.0, -1.0], [0.5, 1.0, 1.0, 2.0], [-1.0, 0.3, 0.0, 0.0]])[:, None, :]
    pred = HeadPredictions(logits, np.array([[0.2, 0.5, 0.9, 0.0]]),
                           np.array([[1.0, -2.0, 0.5, 3.0], [0.0, 1.0, 1.0, -1.0]])[:, None, :])
    tgt = _targets([[0, 2, 1, -1]], [[0.0, 0.5, 1.0, 0.1]],
                   np.array([[0.0, -1.0, 0.5, 0.0], [0.5, 1.0, -1.0, 0.0]])[:, None, :],
                   [[1, 1, 0, 1]], [[1.0, 2.0, 0.5, 1.0]])
    r = supervised_losses(pred, tgt, LossConfig(bootstrap_fraction=0.5))
    assert r.sem == pytest.approx(2.6459480237669455, rel=1e-12)
    assert r.cp == pytest.approx(0.015, rel=1e-12)
    assert r.cr == pytest.approx(2.1666666666666665, rel=1e-12)


def test_supervised_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        supervised_losses(HeadPredictions(np.zeros((2, 3, 3)), np.zeros((3, 3)), np.zeros((2, 3, 3))),
                          _targets(np.zeros((3, 4), int), np.zeros((3, 3)), np.zeros((2, 3, 3)), np.zeros((3, 3))))


# --------------------------------------------------------------- OCM


def test_ocm_without_ood_is_bce_only():
    rng = np.random.default_rng(0)
    sa, sb = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
    la, lb = rng.integers(0, 2, (3, 3)), rng.integers(0, 2, (3, 3))
    r = ocm_loss(0.3, 0, sa, sb, la, lb)
    assert r.loss == pytest.approx(0.8543552444685272, rel=1e-12)
    assert r.loss == r.bce
    assert not r.grad_seg_a.any() and not r.grad_seg_b.any()


def test_ocm_fixed_case_matches_scalar_oracle():
    sa = np.array([[1.0, -0.5, 0.2], [0.0, 0.5, 2.0]])
    sb = np.array([[0.3, 0.3, -1.0], [-0.3, 1.2, 0.4]])
    r = ocm_loss(0.3, 1, sa, sb, np.array([0, 1, 1]), np.array([1, 1, 0]))
    assert r.loss == pytest.approx(1.5359879371361616, rel=1e-12)
    assert r.loss == pytest.approx(r.bce + 0.7 * r.ce_a + 0.8 * r.ce_b, rel=1e-14)


def test_ocm_saturated_perfect():
    la = np.array([[0, 1], [1, 0]])
    seg = np.stack([np.where(la == 0, 20.0, -20.0), np.where(la == 1, 20.0, -20.0)])
    assert ocm_loss(20.0, 1, seg, seg, la, la).loss < 1e-6


def test_ocm_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ocm_loss(0.0, 1, np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(4, int), np.zeros(3, int))


# --------------------------------------------------------------- total loss


def test_total_loss_identities():
    assert total_loss({p: 0.0 for p in PARTS}) == 0.0
    assert total_loss({p: 1.0 for p in PARTS}) == pytest.approx(202.022, abs=1e-12)


@pytest.mark.parametrize("part, coef", [("ocm", 1.0), ("sem", 1.0), ("cp", 200.0), ("cr", 0.01),
                                        ("s_am", 0.01), ("c_am", 0.001), ("r_am", 0.001)])
def test_total_loss_linear_coefficients(part, coef):
    rng = np.random.default_rng(0)
    base = {p: float(rng.random()) for p in PARTS}
    bumped = dict(base, **{part: base[part] + 2.5})
    assert total_loss(bumped) - total_loss(base) == pytest.approx(2.5 * coef, rel=1e-9)


def test_total_loss_non_finite():
    with pytest.raises(NonFinite):
        total_loss({**{p: 0.0 for p in PARTS}, "cp": float("nan")})


def test_loss_config_positive():
    with pytest.raises(ValueError):
        LossConfig(m=0.0)


# --------------------------------------------------------------- dynamic gate


def _gate_inputs(rng, bias=0.0, zero_offsets=False, c_gate=1):
    c_f, hidden, c_out, c_g, p = 3, 4, 2, 5, 6
    dw1 = np.zeros((hidden, c_f)) if zero_offsets else rng.normal(size=(hidden, c_f))
    dw2 = np.zeros((c_out, hidden)) if zero_offsets else rng.normal(size=(c_out, hidden))
    return DynamicGateInputs(rng.normal(size=(c_f, p)), rng.normal(size=(c_g, 7)), rng.normal(size=(c_out, p)),
                             rng.normal(size=(hidden, c_f)), rng.normal(size=(c_out, hidden)), dw1, dw2,
                             rng.normal(size=(c_gate, c_g)) * 0.1, np.full(c_gate, bias))


def test_gate_closed_returns_k():
    inp = _gate_inputs(np.random.default_rng(0), bias=-20.0)
    out = dynamic_gate_forward(inp)
    assert np.max(np.abs(out.f_o - inp.k)) < 1e-6 * np.max(np.abs(out.f_r - inp.k))


def test_gate_open_zero_offsets_is_base_path():
    inp = _gate_inputs(np.random.default_rng(1), bias=50.0, zero_offsets=True)
    out = dynamic_gate_forward(inp)
    assert np.array_equal(out.f_o, inp.w2 @ np.maximum(inp.w1 @ inp.f, 0.0))


def test_gate_is_convex_combination():
    rng = np.random.default_rng(2)
    for c_gate in (1, 2):
        out = dynamic_gate_forward(_gate_inputs(rng, c_gate=c_gate))
        assert np.all((out.gate > 0) & (out.gate < 1))
    inp = _gate_inputs(rng, c_gate=2)
    out = dynamic_gate_forward(inp)
    g = out.gate[:, None]
    assert np.allclose(out.f_o, g * out.f_r + (1 - g) * inp.k, rtol=0, atol=1e-15)


def test_gate_shape_mismatch():
    rng = np.random.default_rng(0)
    inp = _gate_inputs(rng)
    with pytest.raises(ShapeMismatch):
        DynamicGateInputs(inp.f, inp.g, inp.k, inp.w1, inp.w2, inp.dw1, np.zeros((3, 3)), inp.h1_w, inp.h1_b)


# --------------------------------------------------------------- gradient checker


def test_quadratic_check():
    assert finite_diff_check(lambda x: (float(np.sum(x ** 2)), 2 * x), np.array([3.0]), 1e-6) < 1e-8


def test_corrupted_gradient_detected():
    assert finite_diff_check(lambda x: (float(np.sum(x ** 2)), 2 * x + 0.1), np.array([3.0, -1.0]), 1e-6) > 1e-2


@pytest.mark.parametrize("eps", [1e-8, 1e-2])
def test_eps_range(eps):
    with pytest.raises(ValueError):
        finite_diff_check(lambda x: (0.0, x), np.zeros(1), eps)


def test_kink_rejection_gives_up():
    with pytest.raises(KinkProximity):
        sample_kink_free(lambda rng: (None, None, 0.0), np.random.default_rng(0), 1e-3, max_tries=5)


def test_gradient_suite_small():
    report = gradient_suite(trials=5, seed=3)
    assert set(report) == {"loss_s_am", "loss_j_am", "supervised_losses", "ocm_loss", "dynamic_gate_forward"}
    assert all(v["max_error"] < 1e-5 for v in report.values())
