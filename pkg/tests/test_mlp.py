"""MLP student: schedule math, collapse handling, SWA, and serialization."""

import math

import numpy as np
import pytest

from distillforge.dataset import SynthSpec, synth_generate
from distillforge.distill import LossConfig, build_targets
from distillforge.ioutil import canonical_json_bytes
from distillforge.metrics import auc
from distillforge.mlp import (
    BASE_DROPOUT,
    PARAM_KEYS,
    MlpModel,
    TrainSchedule,
    collapse_check,
    embed_width,
    fit_mlp,
    hidden_width,
    init_params,
    loss_and_gradients,
    lr_at,
    restart_policy,
    smoothed_targets,
)

from conftest import make_dataset, random_simplex


class TestWidths:
    def test_embed_width_scales_then_caps(self):
        assert embed_width(10) == 80
        assert embed_width(20) == 128
        assert embed_width(16) == 128
        assert embed_width(17) == 128
        assert embed_width(1) == 8

    def test_hidden_width_clamps(self):
        assert hidden_width(100) == 32      # 12 clamped up
        assert hidden_width(800) == 100
        assert hidden_width(10_000) == 256  # 1250 clamped down
        assert hidden_width(256) == 32
        assert hidden_width(2048) == 256


class TestSchedule:
    def test_warmup_starts_at_zero(self):
        sched = TrainSchedule()
        assert lr_at(0, 1000, sched) == 0.0

    def test_peak_reached_at_warmup_end(self):
        sched = TrainSchedule(peak_lr=2e-3, warmup_fraction=0.1)
        warm = round(0.1 * 1000)
        assert lr_at(warm, 1000, sched) == pytest.approx(2e-3)
        # linear ramp below the knee
        assert lr_at(warm // 2, 1000, sched) == pytest.approx(1e-3)

    def test_final_step_decays_to_zero(self):
        sched = TrainSchedule(peak_lr=1e-3)
        assert lr_at(999, 1000, sched) == 0.0
        assert lr_at(1500, 1000, sched) == 0.0  # past the end stays floored

    def test_shape_is_ramp_then_cosine(self):
        sched = TrainSchedule(peak_lr=1e-3, warmup_fraction=0.1)
        total = 200
        lrs = [lr_at(s, total, sched) for s in range(total)]
        warm = round(0.1 * total)
        for a, b in zip(lrs[:warm], lrs[1:warm + 1]):
            assert b > a
        for a, b in zip(lrs[warm:-1], lrs[warm + 1:]):
            assert b <= a
        assert max(lrs) == pytest.approx(1e-3)

    def test_tiny_warmup_never_divides_by_zero(self):
        sched = TrainSchedule(warmup_fraction=0.0)
        assert lr_at(0, 10, sched) == pytest.approx(0.0)
        assert lr_at(1, 10, sched) > 0.0

    def test_validation(self):
        with pytest.raises(ValueError, match="epochs"):
            TrainSchedule(epochs=0).validate()
        with pytest.raises(ValueError, match="warmup_fraction"):
            TrainSchedule(warmup_fraction=1.0).validate()
        with pytest.raises(ValueError, match="peak_lr"):
            TrainSchedule(peak_lr=0.0).validate()
        with pytest.raises(ValueError, match="swa_start_fraction"):
            TrainSchedule(swa_start_fraction=1.0).validate()
        with pytest.raises(ValueError, match="smoothing"):
            TrainSchedule(smoothing=1.0).validate()
        with pytest.raises(ValueError, match="non-negative"):
            TrainSchedule(augment_sigma=-0.1).validate()
        with pytest.raises(ValueError, match="non-negative"):
            TrainSchedule(max_restarts=-1).validate()

    def test_dict_roundtrip(self):
        sched = TrainSchedule(epochs=77, peak_lr=3e-4, smoothing=0.02)
        assert TrainSchedule.from_dict(sched.to_dict()) == sched


class TestSmoothedTargets:
    def test_two_class_values(self):
        out = smoothed_targets(np.array([0, 1]), 2, 0.05)
        assert out[0, 1] == 0.025
        assert out[1, 0] == 0.025
        assert out[0, 0] == pytest.approx(0.975, abs=1e-12)
        assert out[1, 1] == pytest.approx(0.975, abs=1e-12)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_smoothing_is_one_hot(self):
        out = smoothed_targets(np.array([2, 0]), 3, 0.0)
        np.testing.assert_array_equal(out, [[0, 0, 1], [1, 0, 0]])

    def test_multiclass_off_target_mass(self):
        out = smoothed_targets(np.array([1]), 4, 0.2)
        assert out[0, 0] == 0.05
        assert out[0, 1] == pytest.approx(0.85)


class TestCollapseCheck:
    def test_saturated_single_class_is_collapsed(self):
        p = np.tile([0.999, 0.001], (50, 1))
        assert collapse_check(p) == "collapsed"

    def test_uniform_predictions_are_healthy(self):
        p = np.full((50, 2), 0.5)
        assert collapse_check(p) == "healthy"

    def test_confident_but_diverse_is_healthy(self):
        # saturated rows pointing at different classes must not trip it
        p = np.tile([[0.999, 0.001], [0.001, 0.999]], (25, 1))
        assert collapse_check(p) == "healthy"

    def test_near_uniform_same_argmax_is_healthy(self):
        p = np.tile([0.51, 0.49], (50, 1))
        assert collapse_check(p) == "healthy"

    def test_non_finite_is_collapsed(self):
        p = np.full((50, 2), 0.5)
        p[3, 0] = np.nan
        assert collapse_check(p) == "collapsed"
        p[3, 0] = np.inf
        assert collapse_check(p) == "collapsed"

    def test_threshold_is_adjustable(self):
        p = np.tile([0.999, 0.001], (50, 1))
        assert collapse_check(p, threshold_entropy=0.001) == "healthy"


class TestRestartPolicy:
    def test_escalation_chain(self):
        d = BASE_DROPOUT
        seen = [d]
        for attempt in range(1, 5):
            d = restart_policy(d, attempt)
            seen.append(d)
        assert seen[:4] == [0.1, pytest.approx(0.15), pytest.approx(0.225),
                            pytest.approx(0.3375)]
        assert seen[4] == 0.5

    def test_cap(self):
        assert restart_policy(0.4, 1) == 0.5
        assert restart_policy(0.5, 2) == 0.5


class TestInitParams:
    def test_shapes_and_zero_biases(self):
        rng = np.random.default_rng(0)
        p = init_params(7, 20, 3, rng)
        assert set(p) == set(PARAM_KEYS)
        e = embed_width(7)
        assert p["w_emb"].shape == (7, e)
        assert p["w1_0"].shape == (e, 20)
        assert p["w2_1"].shape == (20, e)
        assert p["w_out"].shape == (e, 3)
        for key in p:
            if key.startswith("b"):
                assert not p[key].any()

    def test_residual_branches_start_small(self):
        rng = np.random.default_rng(1)
        p = init_params(8, 64, 2, rng)
        assert p["w2_0"].std() < 0.5 * p["w1_0"].std()


class TestLossAndGradients:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        n, d, c, hidden = 12, 4, 3, 6
        params = init_params(d, hidden, c, rng)
        x = rng.normal(size=(n, d))
        tg = build_targets(random_simplex(rng, n, c),
                           rng.integers(0, c, size=n), LossConfig())
        hard = smoothed_targets(tg.hard_label, c, 0.05)
        cfg = LossConfig()
        loss, grads = loss_and_gradients(params, x, tg, cfg, hard)
        assert np.isfinite(loss)
        eps = 1e-6
        worst = 0.0
        for key in PARAM_KEYS:
            arr = params[key]
            picks = rng.choice(arr.size, size=min(4, arr.size), replace=False)
            for flat in picks:
                idx = np.unravel_index(flat, arr.shape)
                orig = arr[idx]
                arr[idx] = orig + eps
                lp, _ = loss_and_gradients(params, x, tg, cfg, hard)
                arr[idx] = orig - eps
                lm, _ = loss_and_gradients(params, x, tg, cfg, hard)
                arr[idx] = orig
                fd = (lp - lm) / (2 * eps)
                g = grads[key][idx]
                worst = max(worst, abs(fd - g) / max(1e-8, abs(fd), abs(g)))
        assert worst < 1e-4

    def test_loss_is_batch_mean(self):
        rng = np.random.default_rng(5)
        n, d, c = 8, 3, 2
        params = init_params(d, 6, c, rng)
        x = rng.normal(size=(n, d))
        tg = build_targets(random_simplex(rng, n, c),
                           rng.integers(0, c, size=n), LossConfig())
        loss, _ = loss_and_gradients(params, x, tg, LossConfig())
        from distillforge.mlp import _forward
        from distillforge.distill import mixed_loss
        logits, _ = _forward(params, x)
        assert loss == mixed_loss(logits, tg, LossConfig()) / n


@pytest.fixture(scope="module")
def trained_student():
    ds = synth_generate(SynthSpec(n=240, d=6, cluster_sep=2.5,
                                  label_noise=0.05, seed=7))
    probs = smoothed_targets(ds.labels, 2, 0.1)  # stand-in teacher
    targets = build_targets(probs, ds.labels, LossConfig())
    sched = TrainSchedule(epochs=60, batch_size=64)
    model = fit_mlp(ds, targets, sched=sched, seed=0)
    return ds, targets, sched, model


class TestFitMlp:
    def test_learns_separable_problem(self, trained_student):
        ds, _, _, model = trained_student
        probs = model.predict_proba(ds.features)
        assert not model.collapsed
        assert auc(probs[:, 1], ds.labels) > 0.9

    def test_probabilities_form_simplex(self, trained_student):
        ds, _, _, model = trained_student
        probs = model.predict_proba(ds.features[:50])
        assert probs.min() > 0
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_same_seed_reproduces_bitwise(self, trained_student):
        ds, targets, sched, model = trained_student
        again = fit_mlp(ds, targets, sched=sched, seed=0)
        assert canonical_json_bytes(model.to_json_dict()) == \
            canonical_json_bytes(again.to_json_dict())

    def test_different_seed_differs(self, trained_student):
        ds, targets, sched, model = trained_student
        other = fit_mlp(ds, targets, sched=sched, seed=1)
        assert canonical_json_bytes(model.to_json_dict()) != \
            canonical_json_bytes(other.to_json_dict())

    def test_swa_params_average_recorded_snapshots(self):
        ds = synth_generate(SynthSpec(n=120, d=4, cluster_sep=2.0, seed=3))
        targets = build_targets(smoothed_targets(ds.labels, 2, 0.1),
                                ds.labels, LossConfig())
        sched = TrainSchedule(epochs=10, batch_size=32)
        model = fit_mlp(ds, targets, sched=sched, seed=2, record_snapshots=True)
        snaps = model.history["snapshots"]
        assert len(snaps) == 10 - math.floor(10 * 0.8)
        assert model.swa
        for key in PARAM_KEYS:
            acc = snaps[0][key].copy()
            for snap in snaps[1:]:
                acc += snap[key]
            np.testing.assert_array_equal(model.params[key], acc / len(snaps))

    def test_restarts_escalate_dropout_then_give_up(self):
        ds = synth_generate(SynthSpec(n=80, d=4, cluster_sep=2.0, seed=4))
        targets = build_targets(smoothed_targets(ds.labels, 2, 0.1),
                                ds.labels, LossConfig())
        # a divergent learning rate collapses every attempt
        sched = TrainSchedule(epochs=6, batch_size=16, peak_lr=1e4,
                              max_restarts=2, augment_sigma=0.0)
        with np.errstate(over="ignore", invalid="ignore"):
            model = fit_mlp(ds, targets, val_fraction=0.2, sched=sched, seed=0)
        assert model.collapsed
        attempts = model.history["attempts"]
        assert len(attempts) == 3
        assert [a["dropout"] for a in attempts] == \
            [0.1, pytest.approx(0.15), pytest.approx(0.225)]
        assert all(a["collapsed"] for a in attempts)
        probs = model.predict_proba(ds.features)
        assert np.isfinite(probs).all()

    def test_small_dataset_skips_validation_split(self):
        feats = np.random.default_rng(0).normal(size=(16, 3))
        labels = np.array([0, 1] * 8)
        ds = make_dataset(feats, labels)
        targets = build_targets(smoothed_targets(labels, 2, 0.1),
                                labels, LossConfig())
        sched = TrainSchedule(epochs=5, batch_size=8)
        model = fit_mlp(ds, targets, sched=sched, seed=0)
        assert not model.collapsed
        assert model.history["attempts"][0]["val_losses"] == []

    def test_misaligned_targets_rejected(self, trained_student):
        ds, _, sched, _ = trained_student
        bad = build_targets(smoothed_targets(ds.labels[:100], 2, 0.1),
                            ds.labels[:100], LossConfig())
        with pytest.raises(ValueError, match="align"):
            fit_mlp(ds, bad, sched=sched)

    def test_dims_recorded(self, trained_student):
        ds, _, _, model = trained_student
        assert model.dims == {"in": 6, "embed": 48,
                              "hidden": hidden_width(240), "classes": 2}


class TestSerialization:
    def test_save_load_predictions_bitwise(self, trained_student, tmp_path):
        ds, _, _, model = trained_student
        path = tmp_path / "student.json"
        model.save(path)
        back = MlpModel.load(path)
        np.testing.assert_array_equal(model.predict_logits(ds.features),
                                      back.predict_logits(ds.features))
        assert back.swa == model.swa
        assert back.seed == model.seed

    def test_reserialization_is_stable(self, trained_student, tmp_path):
        _, _, _, model = trained_student
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        model.save(p1)
        MlpModel.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_foreign_format_rejected(self):
        with pytest.raises(ValueError, match="format"):
            MlpModel.from_json_dict({"format": "something-else"})
        with pytest.raises(ValueError, match="version"):
            MlpModel.from_json_dict({"format": "distillforge-mlp",
                                     "version": 99})

    def test_feature_width_checked(self, trained_student):
        _, _, _, model = trained_student
        with pytest.raises(ValueError, match="expected"):
            model.predict_logits(np.zeros((4, 11)))
