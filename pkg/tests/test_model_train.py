"""Model assembly, training loop behavior, evaluation, persistence."""

import dataclasses

import numpy as np
import pytest

from manifoldnorm.config import parse_config
from manifoldnorm.data import generate_synthetic, split_dataset
from manifoldnorm.errors import ConfigError, NumericalError
from manifoldnorm.model import (
    build_plan,
    feature_stats,
    forward,
    init_model,
    load_model,
    save_model,
)
from manifoldnorm.normalization import FeatureGrid
from manifoldnorm.train import (
    accuracy_of,
    evaluate,
    run_experiment,
    softmax_cross_entropy,
    train_model,
)

SMOKE = {
    "dims": "2x2x1",
    "channels": "2",
    "train_per_class": "4",
    "test_per_class": "2",
    "epochs": "1",
    "batch_size": "4",
    "arch": "conv:2x2x1:s:2x2x1:c:2, trelu, norm, fc",
}


def _cfg(**overrides):
    pairs = dict(SMOKE)
    pairs.update(overrides)
    return parse_config("".join(f"{k} = {v}\n" for k, v in pairs.items()))


def _dataset(cfg, seed=0):
    grid, labels = generate_synthetic(cfg, seed)
    return split_dataset(grid, labels, cfg)


class TestLoss:
    def test_cross_entropy_matches_the_closed_form(self):
        logits = np.array([[2.0, 0.5], [0.0, 0.0]])
        labels = np.array([0, 1])
        loss, probs = softmax_cross_entropy(logits, labels)
        p0 = np.exp(2.0) / (np.exp(2.0) + np.exp(0.5))
        expected = -(np.log(p0) + np.log(0.5)) / 2.0
        assert abs(loss - expected) < 1e-12
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_accuracy_counts_argmax_hits(self):
        logits = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
        assert accuracy_of(logits, np.array([0, 1, 1])) == pytest.approx(2 / 3)


class TestPlan:
    def test_window_larger_than_the_grid_rejected(self):
        cfg = _cfg(arch="conv:8x8x1:s:1x1x1:c:2, fc")
        with pytest.raises(ConfigError):
            build_plan(cfg)

    def test_feature_dim_tracks_the_final_spatial_extent(self):
        plan = build_plan(_cfg())
        # 2x2 window at stride 2 collapses 2x2x1 to 1x1x1 with 2 channels.
        assert plan.feature_dim == 2

    def test_param_count_is_theta_plus_head(self):
        model = init_model(_cfg())
        assert model.param_count == model.theta.size + model.head_w.size + model.head_b.size


class TestFeatureStats:
    def test_spread_floor_is_relative(self):
        feats = np.array([[1.0, 5.0], [3.0, 5.0]])
        _, sd = feature_stats(feats)
        assert sd[0] == pytest.approx(1.0)
        # The collapsed column is floored at 5% of the largest spread.
        assert sd[1] == pytest.approx(0.05 * 1.0 + 1e-12)


class TestTraining:
    def test_zero_epochs_reports_chance_accuracy(self):
        cfg = _cfg(epochs="0")
        tr, try_, _, _ = _dataset(cfg)
        model, report = train_model(cfg, tr, try_)
        assert report.loss_curve == ()
        assert report.accuracy == pytest.approx(1.0 / cfg.classes)
        assert model.head_updates == 0

    def test_same_seed_reproduces_the_report(self):
        cfg = _cfg()
        tr, try_, _, _ = _dataset(cfg)
        _, r1 = train_model(cfg, tr, try_)
        _, r2 = train_model(cfg, tr, try_)
        assert r1.fingerprint() == r2.fingerprint()

    def test_training_accuracy_is_reproduced_by_evaluate(self):
        cfg = _cfg()
        tr, try_, _, _ = _dataset(cfg)
        model, report = train_model(cfg, tr, try_)
        again = evaluate(model, tr, try_)
        assert again.accuracy == report.accuracy

    def test_evaluate_leaves_the_model_untouched(self):
        cfg = _cfg()
        tr, try_, te, tey = _dataset(cfg)
        model, _ = train_model(cfg, tr, try_)
        before = [
            (st.running_mean.tobytes(), st.updates.tobytes(), st.steps_seen)
            for st in model.norm_states
        ]
        mu, sd = model.head_mu.tobytes(), model.head_sd.tobytes()
        evaluate(model, te, tey)
        after = [
            (st.running_mean.tobytes(), st.updates.tobytes(), st.steps_seen)
            for st in model.norm_states
        ]
        assert before == after
        assert (model.head_mu.tobytes(), model.head_sd.tobytes()) == (mu, sd)

    def test_divergent_loss_aborts_with_a_diagnostic(self):
        cfg = _cfg(head_lr="1e12")
        tr, try_, _, _ = _dataset(cfg)
        with pytest.raises(NumericalError, match="diverged"), np.errstate(all="ignore"):
            train_model(cfg, tr, try_)

    def test_empty_training_set_rejected(self):
        cfg = _cfg()
        tr, try_, _, _ = _dataset(cfg)
        with pytest.raises(ConfigError):
            train_model(cfg, tr, np.array([], dtype=np.int64))

    def test_dispersion_contrast_is_linearly_separable(self):
        # The distance read-out measures within-sample spread around the
        # sample mean, so classes that differ only in that spread are
        # noise-free separable: class 0 repeats one point, class 1
        # alternates between two.
        cfg = parse_config(
            "dims = 2x2x1\nchannels = 1\ntrain_per_class = 4\ntest_per_class = 2\n"
            "epochs = 1\nbatch_size = 4\nnorm = none\narch = fc\n"
        )
        m = cfg.manifold()
        rng = np.random.default_rng(6)
        a = m.exp(m.origin(), m.tangent_from_coords(0.4 * rng.standard_normal(6)))
        b = m.exp(m.origin(), m.tangent_from_coords(0.4 * rng.standard_normal(6)))
        total = 12
        data = np.empty((2, 2, 1, total, 1) + m.point_shape)
        labels = np.array([0] * 6 + [1] * 6, dtype=np.int64)
        for s in range(total):
            for i, j in np.ndindex(2, 2):
                if labels[s] == 0:
                    data[i, j, 0, s, 0] = a
                else:
                    data[i, j, 0, s, 0] = a if (i + j) % 2 == 0 else b
        grid = FeatureGrid(m, data)
        tr, try_, te, tey = split_dataset(grid, labels, cfg)
        model, report = train_model(cfg, tr, try_)
        assert report.accuracy == 1.0
        assert evaluate(model, te, tey).accuracy == 1.0


class TestPersistence:
    def test_save_load_roundtrip_is_bitwise(self, tmp_path):
        cfg = _cfg()
        tr, try_, te, tey = _dataset(cfg)
        model, _ = train_model(cfg, tr, try_)
        save_model(model, tmp_path / "run")
        back = load_model(tmp_path / "run")
        assert back.config == model.config
        assert back.theta.tobytes() == model.theta.tobytes()
        assert back.head_w.tobytes() == model.head_w.tobytes()
        assert back.head_b.tobytes() == model.head_b.tobytes()
        assert back.head_mu.tobytes() == model.head_mu.tobytes()
        assert back.head_sd.tobytes() == model.head_sd.tobytes()
        assert back.head_updates == model.head_updates
        for s1, s2 in zip(back.norm_states, model.norm_states):
            assert s1.running_mean.tobytes() == s2.running_mean.tobytes()
            assert s1.updates.tobytes() == s2.updates.tobytes()
            assert s1.steps_seen == s2.steps_seen

    def test_loaded_model_evaluates_identically(self, tmp_path):
        cfg = _cfg()
        tr, try_, te, tey = _dataset(cfg)
        model, _ = train_model(cfg, tr, try_)
        save_model(model, tmp_path / "run")
        back = load_model(tmp_path / "run")
        assert evaluate(back, te, tey).fingerprint() == evaluate(model, te, tey).fingerprint()

    def test_mismatched_stored_shapes_rejected(self, tmp_path):
        cfg = _cfg()
        tr, try_, _, _ = _dataset(cfg)
        model, _ = train_model(cfg, tr, try_)
        save_model(model, tmp_path / "run")
        other = _cfg(arch="conv:2x2x1:s:2x2x1:c:3, trelu, norm, fc")
        from manifoldnorm.config import format_config

        (tmp_path / "run" / "config.txt").write_text(
            format_config(other), encoding="utf-8"
        )
        with pytest.raises(ConfigError):
            load_model(tmp_path / "run")


class TestForwardModes:
    def test_train_mode_returns_fresh_states(self):
        cfg = _cfg()
        tr, try_, _, _ = _dataset(cfg)
        model = init_model(cfg)
        _, _, states = forward(model, tr, train_mode=True)
        assert len(states) == len(model.norm_states)
        assert states[0] is not model.norm_states[0]
        _, _, frozen = forward(model, tr, train_mode=False)
        assert all(a is b for a, b in zip(frozen, model.norm_states))

    def test_infer_mode_is_deterministic_in_the_model(self):
        cfg = _cfg()
        tr, try_, _, _ = _dataset(cfg)
        model, _ = train_model(cfg, tr, try_)
        l1, _, _ = forward(model, tr, train_mode=False)
        l2, _, _ = forward(model, tr, train_mode=False)
        assert l1.tobytes() == l2.tobytes()


class TestRunExperiment:
    def test_writes_report_and_results_row(self, tmp_path):
        cfg = _cfg()
        out = tmp_path / "exp"
        _, _, test_report = run_experiment(cfg, out)
        report_text = (out / "report.txt").read_text(encoding="utf-8")
        assert "test_accuracy" in report_text
        rows = (out / "results.tsv").read_text(encoding="utf-8").strip().splitlines()
        assert rows[0] == "variant\tparams\ttime_per_epoch\ttest_accuracy"
        fields = rows[1].split("\t")
        assert fields[0] == cfg.variant_name()
        assert int(fields[1]) == test_report.param_count
        assert float(fields[3]) == test_report.accuracy

    def test_identical_configs_agree_on_accuracy_fields(self, tmp_path):
        cfg = _cfg()
        _, tr_a, te_a = run_experiment(cfg, tmp_path / "a")
        _, tr_b, te_b = run_experiment(cfg, tmp_path / "b")
        assert tr_a.fingerprint() == tr_b.fingerprint()
        assert te_a.accuracy == te_b.accuracy
