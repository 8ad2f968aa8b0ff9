import math
from dataclasses import replace

import numpy as np
import pytest

from jointspace import autodiff as ad
from jointspace.graphs import generate_tree
from jointspace.layers import JointSpaceGNN, load_params_json, save_params_json
from jointspace.objectives import normalize_delta
from jointspace.training import (Adam, RunReport, TrainConfig,
                                 analyze_hyperbolicities, evaluate_lp,
                                 evaluate_nc, identity_features, mu_profile,
                                 run_grid, run_seeds, synthetic_lp_tree,
                                 synthetic_nc_graph, train)


def quick_cfg(**kw) -> TrainConfig:
    base = dict(task="nc", layers=2, hidden=8, q_dim=4, max_epochs=30,
                patience=10, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults_match_protocol(self):
        cfg = TrainConfig()
        assert cfg.hidden == 16 and cfg.patience == 100 and cfg.max_epochs == 1000
        assert cfg.k == 2 and cfg.p == 2.0

    def test_fraction_defaults_by_task(self):
        assert TrainConfig(task="nc").fractions == (0.6, 0.2, 0.2)
        assert TrainConfig(task="lp").fractions == (0.85, 0.05, 0.10)

    def test_json_round_trip(self):
        cfg = TrainConfig(task="lp", lr=0.005, split_fractions=(0.7, 0.1, 0.2))
        assert TrainConfig.from_json(cfg.to_json()) == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(task="xyz")
        with pytest.raises(ValueError):
            TrainConfig(dropout=1.0)
        with pytest.raises(ValueError):
            TrainConfig(comparison_mode="other")
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)


class TestMetrics:
    def test_accuracy_perfect_and_partial(self):
        logits = np.array([[2.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
        labels = np.array([0, 1, 1])
        assert evaluate_nc(logits, labels, [0, 1, 2]) == pytest.approx(2 / 3)
        assert evaluate_nc(logits, labels, [0, 1]) == 1.0

    def test_f1_binary(self):
        logits = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
        labels = np.array([1, 0, 0, 1])
        # preds = [1,1,0,0]: tp=1, fp=1, fn=1 -> F1 = 0.5
        assert evaluate_nc(logits, labels, [0, 1, 2, 3], metric="f1") == 0.5

    def test_f1_micro_multiclass_equals_accuracy(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(20, 4))
        labels = rng.integers(0, 4, size=20)
        mask = np.arange(20)
        assert evaluate_nc(logits, labels, mask, "f1", "micro") == \
            pytest.approx(evaluate_nc(logits, labels, mask, "accuracy"))

    def test_f1_macro(self):
        logits = np.array([[3.0, 0, 0], [0, 3.0, 0], [0, 0, 3.0]])
        labels = np.array([0, 1, 2])
        assert evaluate_nc(logits, labels, [0, 1, 2], "f1", "macro") == 1.0

    def test_auc_perfect_and_ties(self):
        assert evaluate_lp(np.array([0.9, 0.2, 0.6]), np.array([1, 0, 1])) == 1.0
        assert evaluate_lp(np.array([0.5, 0.5, 0.5, 0.5]),
                           np.array([1, 0, 1, 0])) == 0.5

    def test_auc_hand_case(self):
        scores = np.array([0.9, 0.8, 0.3, 0.2])
        truth = np.array([1, 0, 1, 0])
        # pairs: (0.9>0.8), (0.9>0.2), (0.3<0.8), (0.3>0.2) -> 3/4
        assert evaluate_lp(scores, truth) == 0.75

    def test_auc_single_class_rejected(self):
        with pytest.raises(ValueError):
            evaluate_lp(np.array([0.5, 0.6]), np.array([1, 1]))


class TestAdam:
    def test_descends_quadratic(self):
        x = ad.DiffValue(np.array([5.0, -3.0]))
        opt = Adam([x], lr=0.1)
        for _ in range(300):
            loss = ad.sum_(ad.mul(x, x))
            ad.backward(loss)
            opt.step()
        assert np.abs(x.value).max() < 1e-2

    def test_weight_decay_shrinks(self):
        x = ad.DiffValue(np.array([1.0]))
        opt = Adam([x], lr=0.01, weight_decay=1.0)
        loss = ad.sum_(ad.mul(x, 0.0))
        ad.backward(loss)
        opt.step()
        assert x.value[0] < 1.0


class TestTrainLoop:
    def test_seed_determinism(self):
        g = synthetic_nc_graph(seed=3)
        cfg = quick_cfg(seed=3)
        r1, r2 = train(g, cfg), train(g, cfg)
        assert r1.loss_trace == r2.loss_trace
        assert r1.test_metric == r2.test_metric

    def test_missing_labels_rejected(self):
        g = generate_tree(2, 3)
        g = g.with_features(identity_features(g.num_nodes))
        with pytest.raises(ValueError, match="labels"):
            train(g, quick_cfg())

    def test_missing_features_rejected(self):
        g = generate_tree(2, 3).with_labels(
            np.array([0] + [1] * 14, dtype=np.int64))
        with pytest.raises(ValueError, match="features"):
            train(g, quick_cfg(max_epochs=5, patience=5))

    def test_identity_features_work(self):
        g = generate_tree(2, 3).with_labels(
            np.array([0] + [1] * 14, dtype=np.int64))
        g = g.with_features(identity_features(g.num_nodes))
        rep = train(g, quick_cfg(max_epochs=5, patience=5,
                                 split_fractions=(0.5, 0.25, 0.25)))
        assert rep.epochs_run == 5

    def test_loss_decreases_on_synthetic(self):
        g = synthetic_nc_graph(seed=0)
        rep = train(g, quick_cfg(max_epochs=40, patience=40))
        assert rep.loss_trace[rep.epoch_of_best - 1] < rep.loss_trace[0]

    def test_early_stopping_plateau_exact(self):
        g = synthetic_nc_graph(seed=0)
        cfg = quick_cfg(lr=1e-30, max_epochs=200, patience=25)
        rep = train(g, cfg)
        assert rep.epoch_of_best == 1
        assert rep.epochs_run == 26
        assert len(rep.loss_trace) == 26

    def test_never_exceeds_max_epochs(self):
        g = synthetic_nc_graph(seed=0)
        rep = train(g, quick_cfg(max_epochs=7, patience=100))
        assert rep.epochs_run == 7

    def test_test_metric_from_restored_checkpoint(self, tmp_path):
        g = synthetic_nc_graph(seed=1)
        cfg = quick_cfg(seed=1, max_epochs=25, patience=25)
        rep, model, split = train(g, cfg, return_model=True)
        # serialize, reload into a fresh model, re-evaluate the test metric
        ck = tmp_path / "ck.json"
        ck.write_text(save_params_json(model.state_dict()))
        fresh = JointSpaceGNN(in_dim=g.features.shape[1], hidden_dim=cfg.hidden,
                              out_dim=2, num_layers=cfg.layers, q_dim=cfg.q_dim,
                              seed=999)
        fresh.load_state_dict(load_params_json(ck.read_text()))
        out, _ = fresh.forward(g, g.features, training=False)
        metric = evaluate_nc(out.z.value, g.labels, split.test)
        assert metric == rep.test_metric

    def test_report_round_trip(self):
        g = synthetic_nc_graph(seed=2)
        rep = train(g, quick_cfg(seed=2, max_epochs=12, patience=12))
        assert RunReport.from_json(rep.to_json()) == rep

    def test_beta_record_shape(self):
        g = synthetic_nc_graph(seed=0)
        rep = train(g, quick_cfg(layers=3, max_epochs=6, patience=6))
        assert len(rep.beta_samples) == 3
        assert all(len(b) == 40 for b in rep.beta_samples)

    def test_lp_smoke(self):
        g = synthetic_lp_tree(depth=3, seed=0)
        cfg = TrainConfig(task="lp", layers=2, hidden=8, q_dim=4,
                          max_epochs=30, patience=15, seed=0,
                          split_fractions=(0.7, 0.15, 0.15))
        rep = train(g, cfg)
        assert 0.0 <= rep.test_metric <= 1.0
        assert rep.epochs_run <= 30

    def test_divergence_detected(self):
        g = synthetic_nc_graph(seed=0)
        # An absurd learning rate sends parameters to overflow within a few
        # steps; the loop must abort with a diagnostic rather than loop on NaN.
        from jointspace.training import TrainingDiverged
        cfg = quick_cfg(lr=1e150, max_epochs=50, patience=50)
        with np.errstate(invalid="ignore", over="ignore"):
            with pytest.raises(TrainingDiverged):
                train(g, cfg)


class TestProfileCache:
    def test_cache_round_trip(self, tmp_path):
        g = synthetic_nc_graph(seed=0)
        p1 = mu_profile(g, 2, "inf", cache_dir=str(tmp_path))
        files = list(tmp_path.iterdir())
        assert len(files) == 1
        p2 = mu_profile(g, 2, "inf", cache_dir=str(tmp_path))
        assert p1 == p2

    def test_cache_keyed_by_k(self, tmp_path):
        g = synthetic_nc_graph(seed=0)
        mu_profile(g, 1, "inf", cache_dir=str(tmp_path))
        mu_profile(g, 2, "inf", cache_dir=str(tmp_path))
        assert len(list(tmp_path.iterdir())) == 2


class TestAnalysis:
    def test_matching_beta_gives_zero_w2(self):
        g = synthetic_nc_graph(seed=0)
        mu = normalize_delta(mu_profile(g, 2, "inf"))
        rep = RunReport(
            best_val_metric=1.0, test_metric=1.0, epoch_of_best=1, epochs_run=1,
            loss_trace=(0.0,), beta_samples=(tuple(mu), tuple(mu)),
            w2_nu_unif=0.0, w2_nu_mu=0.0, config={}, wall_time=0.0)
        w2_unif, w2_mu = analyze_hyperbolicities(rep, mu)
        assert w2_mu == 0.0
        assert w2_unif > 0.0

    def test_uniform_beta_against_midpoint_reference(self):
        # all-0.5 weights: rank pairing against the m midpoints (i-0.5)/m
        n = 40
        beta = tuple([0.5] * n)
        rep = RunReport(
            best_val_metric=1.0, test_metric=1.0, epoch_of_best=1, epochs_run=1,
            loss_trace=(0.0,), beta_samples=(beta, beta),
            w2_nu_unif=0.0, w2_nu_mu=0.0, config={}, wall_time=0.0)
        w2_unif, _ = analyze_hyperbolicities(rep, np.zeros(n))
        midpoints = (np.arange(1, n + 1) - 0.5) / n
        expected = math.sqrt(np.mean((0.5 - midpoints) ** 2))
        assert w2_unif == pytest.approx(expected, abs=1e-12)
        assert w2_unif < 0.3  # far below the 1/sqrt(3) one-sided maximum

    def test_first_two_layers_averaged(self):
        mu = np.array([0.0, 1.0])
        rep = RunReport(
            best_val_metric=1.0, test_metric=1.0, epoch_of_best=1, epochs_run=1,
            loss_trace=(0.0,),
            beta_samples=((0.0, 0.0), (1.0, 1.0), (0.25, 0.75)),
            w2_nu_unif=0.0, w2_nu_mu=0.0, config={}, wall_time=0.0)
        # layers 1-2 average to (0.5, 0.5); the third layer must be ignored.
        # Rank pairing against mu = (0, 1) gives gaps of 0.5 -> W2 = 0.5.
        _, w2_mu = analyze_hyperbolicities(rep, mu)
        assert w2_mu == pytest.approx(0.5, abs=1e-12)

    def test_missing_record_rejected(self):
        rep = RunReport(best_val_metric=0, test_metric=0, epoch_of_best=0,
                        epochs_run=0, loss_trace=(), beta_samples=(),
                        w2_nu_unif=0, w2_nu_mu=0, config={}, wall_time=0)
        with pytest.raises(ValueError):
            analyze_hyperbolicities(rep, np.zeros(3))


class TestRunners:
    def test_singleton_grid_equals_train(self):
        g = synthetic_nc_graph(seed=0)
        cfg = quick_cfg(max_epochs=8, patience=8)
        best, table = run_grid(g, cfg, {"lr": [0.01]})
        solo = train(g, replace(cfg, lr=0.01))
        assert best.loss_trace == solo.loss_trace
        assert len(table) == 1

    def test_two_point_grid_selects_by_val(self):
        g = synthetic_nc_graph(seed=0)
        cfg = quick_cfg(max_epochs=8, patience=8)
        best, table = run_grid(g, cfg, {"lr": [0.01, 0.005]})
        assert best.best_val_metric == max(r["val_metric"] for r in table)

    def test_parallel_equals_sequential(self):
        g = synthetic_nc_graph(seed=0)
        cfg = quick_cfg(max_epochs=6, patience=6)
        grid = {"lr": [0.01, 0.005], "omega_nu": [0.0, 0.1]}
        best_seq, table_seq = run_grid(g, cfg, grid, workers=1)
        best_par, table_par = run_grid(g, cfg, grid, workers=3)
        assert table_seq == table_par
        assert best_seq.loss_trace == best_par.loss_trace

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            run_grid(synthetic_nc_graph(), quick_cfg(), {})

    def test_run_seeds_summary(self):
        g = synthetic_nc_graph(seed=0)
        cfg = quick_cfg(max_epochs=6, patience=6)
        summary = run_seeds(g, cfg, [0, 1, 2])
        assert len(summary["reports"]) == 3
        tests = [r.test_metric for r in summary["reports"]]
        assert summary["test_mean"] == pytest.approx(np.mean(tests))
        assert summary["test_std"] == pytest.approx(np.std(tests, ddof=1))
