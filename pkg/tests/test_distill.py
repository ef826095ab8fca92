import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from distillforge.distill import (
    DistillTargets,
    LossConfig,
    adaptive_temperature,
    build_targets,
    confidence_weight,
    mixed_gradient_mlp,
    mixed_gradient_tree,
    mixed_loss,
    normalized_entropy,
    softmax,
    tree_gradient_terms,
)

from conftest import random_simplex


def single_row_targets(p_soft, t, w, y):
    """One-row binary DistillTargets with explicit temperature and weight."""
    p = np.array([p_soft], dtype=np.float64)
    logits = np.log(p)
    return DistillTargets(
        soft_probs=p,
        soft_logits=logits - logits.mean(axis=1, keepdims=True),
        temperature=np.array([float(t)]),
        weight=np.array([float(w)]),
        hard_label=np.array([y], dtype=np.int64),
    )


class TestNormalizedEntropy:
    def test_hand_case_09_01(self):
        h = normalized_entropy(np.array([[0.9, 0.1]]))[0]
        assert abs(h - 0.46899559358928117) < 1e-12
        assert abs(h - 0.46900) < 1e-5

    def test_uniform_is_one(self):
        for c in (2, 3, 7):
            h = normalized_entropy(np.full((1, c), 1.0 / c))[0]
            assert abs(h - 1.0) < 1e-12

    def test_one_hot_is_zero(self):
        h = normalized_entropy(np.array([[1.0, 0.0, 0.0]]))[0]
        assert h == 0.0

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            normalized_entropy(np.ones((2, 1)))


class TestAdaptiveTemperature:
    def test_endpoints_exact(self):
        cfg = LossConfig()
        assert adaptive_temperature(np.array([[1.0, 0.0]]), cfg)[0] == 1.0
        assert adaptive_temperature(np.array([[0.5, 0.5]]), cfg)[0] == 5.0

    def test_hand_case(self):
        t = adaptive_temperature(np.array([[0.9, 0.1]]), LossConfig())[0]
        assert abs(t - 2.8759823743571247) < 1e-12
        assert abs(t - 2.8760) < 1e-3

    def test_custom_range(self):
        cfg = LossConfig(t_min=2.0, t_max=3.0)
        t = adaptive_temperature(np.array([[0.5, 0.5]]), cfg)[0]
        assert t == 3.0


class TestConfidenceWeight:
    def test_peak_at_mu(self):
        # binary row whose normalized entropy is exactly mu=0.7
        p = brentq(lambda q: normalized_entropy(np.array([[q, 1 - q]]))[0] - 0.7,
                   0.5 + 1e-12, 1 - 1e-12, xtol=1e-15)
        w = confidence_weight(np.array([[p, 1 - p]]), LossConfig())[0]
        assert abs(w - 1.0) < 1e-9

    def test_one_hot_hand_case(self):
        w = confidence_weight(np.array([[1.0, 0.0]]), LossConfig())[0]
        assert abs(w - math.exp(-6.125)) < 1e-12
        assert abs(w - 0.002187) < 1e-5

    def test_entropy_09_hand_case(self):
        p = brentq(lambda q: normalized_entropy(np.array([[q, 1 - q]]))[0] - 0.9,
                   0.5 + 1e-12, 1 - 1e-12, xtol=1e-15)
        w = confidence_weight(np.array([[p, 1 - p]]), LossConfig())[0]
        assert abs(w - math.exp(-0.5)) < 1e-9
        assert abs(w - 0.60653) < 1e-5

    def test_never_exceeds_one(self):
        rng = np.random.default_rng(0)
        w = confidence_weight(random_simplex(rng, 200, 3), LossConfig())
        assert (w > 0).all() and (w <= 1.0).all()


class TestBuildTargets:
    def test_binary_logit_hand_case(self):
        tg = build_targets(np.array([[0.8, 0.2]]), np.array([0]), LossConfig())
        assert abs(tg.binary_logit()[0] - math.log(0.2 / 0.8)) < 1e-12
        assert abs(tg.binary_logit()[0] + 1.38629) < 1e-5

    def test_even_row_logit_zero(self):
        tg = build_targets(np.array([[0.5, 0.5]]), np.array([1]), LossConfig())
        assert tg.binary_logit()[0] == 0.0

    def test_one_hot_clipped_finite(self):
        tg = build_targets(np.array([[1.0, 0.0]]), np.array([0]), LossConfig())
        z = tg.binary_logit()[0]
        bound = math.log((1 - 1e-6) / 1e-6)
        assert math.isfinite(z)
        assert abs(z + 13.8155) < 1e-3
        assert abs(z) <= bound + 1e-12

    def test_soft_logits_centered_and_consistent(self):
        rng = np.random.default_rng(3)
        probs = random_simplex(rng, 50, 4)
        tg = build_targets(probs, np.zeros(50, dtype=np.int64), LossConfig())
        assert np.allclose(tg.soft_logits.mean(axis=1), 0.0, atol=1e-12)
        assert np.allclose(softmax(tg.soft_logits), probs, atol=1e-12)

    def test_ovr_logit(self):
        tg = build_targets(np.array([[0.5, 0.3, 0.2]]), np.array([0]), LossConfig())
        assert abs(tg.ovr_logit(1)[0] - math.log(0.3 / 0.7)) < 1e-12

    def test_accepts_soft_label_set_like(self):
        class Box:
            probs = np.array([[0.6, 0.4], [0.2, 0.8]])

        tg = build_targets(Box(), np.array([0, 1]), LossConfig())
        assert tg.n_rows == 2

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            build_targets(np.array([[0.5, 0.5]]), np.array([0, 1]), LossConfig())
        with pytest.raises(ValueError):
            build_targets(np.array([[0.5, 0.5]]), np.array([2]), LossConfig())

    def test_overrides(self):
        tg = build_targets(np.array([[0.9, 0.1], [0.4, 0.6]]),
                           np.array([0, 1]), LossConfig())
        fixed = tg.with_fixed_temperature(3.0)
        assert (fixed.temperature == 3.0).all()
        flat = tg.with_uniform_weights()
        assert (flat.weight == 1.0).all()
        # originals untouched
        assert not (tg.temperature == 3.0).all()


class TestMixedLoss:
    def test_hand_case(self):
        tg = single_row_targets([0.7, 0.3], t=1.0, w=1.0, y=0)
        logits = np.log(np.array([[0.6, 0.4]]))
        loss = mixed_loss(logits, tg, LossConfig(alpha=0.7))
        kl = 0.7 * math.log(0.7 / 0.6) + 0.3 * math.log(0.3 / 0.4)
        ce = -math.log(0.6)
        assert abs(loss - (0.7 * kl + 0.3 * ce)) < 1e-12
        assert abs(loss - 0.168360) < 1e-5

    def test_pure_soft_identical_distributions_zero(self):
        tg = single_row_targets([0.7, 0.3], t=2.5, w=1.0, y=0)
        logits = np.log(np.array([[0.7, 0.3]]))
        loss = mixed_loss(logits, tg, LossConfig(alpha=1.0))
        assert abs(loss) < 1e-12

    def test_pure_hard_is_weighted_ce(self):
        rng = np.random.default_rng(1)
        probs = random_simplex(rng, 8, 3)
        labels = rng.integers(0, 3, size=8)
        tg = build_targets(probs, labels, LossConfig())
        logits = rng.normal(size=(8, 3))
        loss = mixed_loss(logits, tg, LossConfig(alpha=0.0))
        log_q = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        expected = (tg.weight * -log_q[np.arange(8), labels]).sum()
        assert abs(loss - expected) < 1e-10

    def test_kl_matches_ce_minus_entropy_at_t1(self):
        rng = np.random.default_rng(2)
        p = random_simplex(rng, 1, 3)
        tg = build_targets(p, np.array([0]),
                           LossConfig(t_min=1.0, t_max=1.0)).with_uniform_weights()
        logits = rng.normal(size=(1, 3))
        loss = mixed_loss(logits, tg, LossConfig(alpha=1.0))
        q = softmax(logits)
        ce_pq = -(p * np.log(q)).sum()
        h_p = -(p * np.log(p)).sum()
        assert abs(loss - (ce_pq - h_p)) < 1e-10

    def test_sums_over_batch(self):
        tg1 = single_row_targets([0.7, 0.3], t=1.0, w=1.0, y=0)
        both = DistillTargets(
            soft_probs=np.vstack([tg1.soft_probs] * 2),
            soft_logits=np.vstack([tg1.soft_logits] * 2),
            temperature=np.repeat(tg1.temperature, 2),
            weight=np.repeat(tg1.weight, 2),
            hard_label=np.repeat(tg1.hard_label, 2),
        )
        logits = np.log(np.array([[0.6, 0.4]]))
        one = mixed_loss(logits, tg1, LossConfig())
        two = mixed_loss(np.vstack([logits] * 2), both, LossConfig())
        assert abs(two - 2 * one) < 1e-12

    def test_non_negative(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n, c = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            tg = build_targets(random_simplex(rng, n, c),
                               rng.integers(0, c, size=n), LossConfig())
            loss = mixed_loss(rng.normal(size=(n, c)), tg,
                              LossConfig(alpha=float(rng.random())))
            assert loss >= -1e-12


class TestMlpGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(5)
        cfgs = [LossConfig(alpha=a) for a in (0.0, 0.3, 0.7, 1.0)]
        checked = 0
        for trial in range(24):
            n, c = int(rng.integers(1, 5)), int(rng.integers(2, 5))
            tg = build_targets(random_simplex(rng, n, c),
                               rng.integers(0, c, size=n), LossConfig())
            cfg = cfgs[trial % len(cfgs)]
            z = rng.normal(size=(n, c))
            grad = mixed_gradient_mlp(z, tg, cfg)
            fd = np.zeros_like(z)
            eps = 1e-5
            for i in range(n):
                for j in range(c):
                    zp, zm = z.copy(), z.copy()
                    zp[i, j] += eps
                    zm[i, j] -= eps
                    fd[i, j] = (mixed_loss(zp, tg, cfg) - mixed_loss(zm, tg, cfg)) / (2 * eps)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-4, f"trial {trial}: relative error {rel}"
            checked += 1
        assert checked >= 20

    def test_alpha_zero_is_ce_gradient(self):
        rng = np.random.default_rng(6)
        tg = build_targets(random_simplex(rng, 5, 3),
                           rng.integers(0, 3, size=5), LossConfig())
        z = rng.normal(size=(5, 3))
        grad = mixed_gradient_mlp(z, tg, LossConfig(alpha=0.0))
        onehot = np.zeros((5, 3))
        onehot[np.arange(5), tg.hard_label] = 1.0
        expected = tg.weight[:, None] * (softmax(z) - onehot)
        assert np.allclose(grad, expected, atol=1e-12)

    def test_soft_term_zero_when_student_matches_teacher(self):
        tg = single_row_targets([0.6, 0.4], t=3.0, w=0.8, y=1)
        z = tg.soft_logits.copy()
        grad = mixed_gradient_mlp(z, tg, LossConfig(alpha=1.0))
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_smoothed_hard_targets_override(self):
        tg = single_row_targets([0.5, 0.5], t=1.0, w=1.0, y=1)
        z = np.zeros((1, 2))
        smoothed = np.array([[0.025, 0.975]])
        grad = mixed_gradient_mlp(z, tg, LossConfig(alpha=0.0), hard_targets=smoothed)
        assert np.allclose(grad, np.array([[0.5, 0.5]]) - smoothed, atol=1e-12)


class TestTreeGradient:
    def test_hand_case(self):
        g, h = tree_gradient_terms(
            raw_score=np.array([0.0]), soft_logit=np.array([1.0]),
            temperature=np.array([2.0]), weight=np.array([0.5]),
            hard=np.array([1.0]), alpha=0.7,
        )
        assert abs(g[0] - (-0.775)) < 1e-9
        assert abs(h[0] - 1.4375) < 1e-9

    def test_alpha_zero_logistic_case(self):
        g, h = tree_gradient_terms(
            raw_score=np.array([0.0]), soft_logit=np.array([3.0]),
            temperature=np.array([1.0]), weight=np.array([1.0]),
            hard=np.array([1.0]), alpha=0.0,
        )
        assert abs(g[0] - (-0.5)) < 1e-12
        assert abs(h[0] - 0.25) < 1e-12

    def test_soft_gradient_vanishes_at_scaled_teacher_logit(self):
        g, h = tree_gradient_terms(
            raw_score=np.array([1.5 / 2.0]), soft_logit=np.array([1.5]),
            temperature=np.array([2.0]), weight=np.array([0.9]),
            hard=np.array([0.0]), alpha=1.0,
        )
        assert abs(g[0]) < 1e-12
        assert abs(h[0] - 0.9 * 4.0) < 1e-12

    def test_binary_route_uses_probability_ratio_logit(self):
        tg = single_row_targets([0.8, 0.2], t=2.0, w=0.5, y=1)
        g, h = mixed_gradient_tree(np.array([0.0]), tg, LossConfig(alpha=0.7))
        z_soft = math.log(0.2 / 0.8)
        g_exp = 0.7 * 0.5 * 4.0 * (0.0 - z_soft / 2.0) + 0.3 * 0.5 * (0.5 - 1.0)
        assert abs(g[0] - g_exp) < 1e-12
        assert h[0] > 0

    def test_hessian_positive(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            _, h = tree_gradient_terms(
                rng.normal(size=4), rng.normal(size=4),
                rng.uniform(1, 5, size=4), rng.uniform(0.01, 1, size=4),
                rng.integers(0, 2, size=4).astype(float),
                alpha=float(rng.random()),
            )
            assert (h >= 0).all()

    def test_multiclass_rejected_on_binary_route(self):
        tg = build_targets(np.array([[0.5, 0.3, 0.2]]), np.array([0]), LossConfig())
        with pytest.raises(ValueError):
            mixed_gradient_tree(np.array([0.0]), tg, LossConfig())


@st.composite
def prob_rows(draw):
    c = draw(st.integers(min_value=2, max_value=5))
    raw = draw(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=c, max_size=c))
    arr = np.array(raw, dtype=np.float64)
    return arr / arr.sum()


class TestProperties:
    @given(prob_rows())
    @settings(max_examples=200, deadline=None)
    def test_entropy_in_unit_interval(self, row):
        h = normalized_entropy(row[None, :])[0]
        assert -1e-12 <= h <= 1.0 + 1e-12

    @given(prob_rows(),
           st.floats(min_value=0.5, max_value=4.0),
           st.floats(min_value=0.0, max_value=6.0))
    @settings(max_examples=200, deadline=None)
    def test_temperature_within_bounds(self, row, t_min, t_span):
        cfg = LossConfig(t_min=t_min, t_max=t_min + t_span)
        t = adaptive_temperature(row[None, :], cfg)[0]
        assert cfg.t_min - 1e-9 <= t <= cfg.t_max + 1e-9

    @given(prob_rows())
    @settings(max_examples=200, deadline=None)
    def test_weight_in_unit_interval(self, row):
        w = confidence_weight(row[None, :], LossConfig())[0]
        assert 0.0 < w <= 1.0

    @given(prob_rows(), st.floats(min_value=0.0, max_value=1.0),
           st.integers(min_value=0, max_value=4))
    @settings(max_examples=150, deadline=None)
    def test_loss_non_negative(self, row, alpha, label):
        c = row.shape[0]
        tg = build_targets(row[None, :], np.array([label % c]), LossConfig())
        z = np.linspace(-1.0, 1.0, c)[None, :]
        assert mixed_loss(z, tg, LossConfig(alpha=alpha)) >= -1e-12


class TestLossConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=1.5).validate()
        with pytest.raises(ValueError):
            LossConfig(t_min=0.0).validate()
        with pytest.raises(ValueError):
            LossConfig(t_min=3.0, t_max=2.0).validate()
        with pytest.raises(ValueError):
            LossConfig(sigma=0.0).validate()

    def test_round_trip(self):
        cfg = LossConfig(alpha=0.5, t_min=1.5, t_max=4.0, mu=0.6, sigma=0.3)
        assert LossConfig.from_dict(cfg.to_dict()) == cfg
