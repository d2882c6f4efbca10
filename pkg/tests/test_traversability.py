"""Label construction, experience pairing, the three training paths, and
learned cost-map inference."""

import dataclasses
import math

import numpy as np
import pytest

from offnav.mapping import ElevationGrid
from offnav.nn import AdamState, MlpParams, adam_step, backprop, init_params
from offnav.nn import TrainBatch, forward_gaussian_batch
from offnav.simulate import ControlInput, ImuSample, StepRecord, VehicleState
from offnav.traversability import (
    ADAPT_GRAD_CLIP,
    INPUT_DIM,
    MetaConfig,
    OnlineAdapter,
    TaskDataset,
    Experience,
    adapt,
    attach_labels,
    compute_label,
    default_layer_sizes,
    eval_mse,
    meta_train,
    predict_cost_map,
    recalibrate_mean_head,
    support_nll,
    train_baseline,
)


def imu(z=0.0, r=0.0, p=0.0, t=0.0):
    return ImuSample(z_acc=z, roll_acc=r, pitch_acc=p, timestamp=t)


def zero_params(layer_sizes):
    ws = [np.zeros((layer_sizes[i + 1], layer_sizes[i]))
          for i in range(len(layer_sizes) - 1)]
    bs = [np.zeros(layer_sizes[i + 1]) for i in range(len(layer_sizes) - 1)]
    return MlpParams(layer_sizes=list(layer_sizes), weights=ws, biases=bs)


def synth_experiences(rng, n, task_id=0, noise=0.25):
    """Labels depend linearly on two feature dims, plus clipped noise."""
    X = rng.normal(0.0, 0.5, (n, INPUT_DIM))
    base = 0.5 + 0.2 * X[:, 0] - 0.15 * X[:, 5]
    y = np.clip(base + rng.normal(0.0, noise, n), 0.0, 1.0)
    return [Experience(feature=X[i], label=float(y[i]), task_id=task_id,
                       timestamp=float(i)) for i in range(n)]


class TestComputeLabel:
    def test_zero_window(self):
        assert compute_label([imu() for _ in range(10)]) == 0.0

    def test_constant_z_acc(self):
        win = [imu(z=10.0) for _ in range(20)]
        assert compute_label(win) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(0)
        win = [imu(z=rng.normal(0, 5), r=rng.normal(0, 2), p=rng.normal(0, 2))
               for _ in range(50)]
        terms = [(abs(s.z_acc) / 10 + abs(s.roll_acc) / 5
                  + abs(s.pitch_acc) / 5) / 3 for s in win]
        want = min(np.sqrt(np.mean(np.square(terms))), 1.0)
        assert compute_label(win) == pytest.approx(want, abs=1e-12)

    def test_clamped_at_one(self):
        assert compute_label([imu(z=500.0)]) == 1.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        win = [imu(z=rng.normal(0, 4)) for _ in range(30)]
        shuffled = [win[i] for i in rng.permutation(30)]
        assert compute_label(win) == pytest.approx(compute_label(shuffled))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_label([])


def make_log(n, dt=0.1, speed=2.0, z_acc_fn=lambda t: 0.0):
    records = []
    for k in range(n):
        t = k * dt
        st = VehicleState(x=speed * t, y=0.0, heading=0.0, speed=speed)
        records.append(StepRecord(
            t=t, state=st, control=ControlInput(0.0, 0.0),
            imu=imu(z=z_acc_fn(t), t=t + dt)))
    return records


def known_flat_grid(size=160):
    g = ElevationGrid(center=(10.0, 0.0), size=size)
    g.n_obs[:] = 1
    return g


class TestAttachLabels:
    def test_flat_log(self):
        records = make_log(30)
        exps = attach_labels(records, known_flat_grid(), task_id=3)
        assert len(exps) == 20  # windows that fit before the log ends
        for e in exps:
            assert e.label == 0.0
            np.testing.assert_allclose(e.feature[:26], 0.0, atol=1e-12)
            assert e.feature[26] == pytest.approx(0.2)
            assert e.task_id == 3

    def test_short_log_empty(self):
        records = make_log(5)  # 0.5 s of data, 1 s window never fits
        assert attach_labels(records, known_flat_grid()) == []

    def test_bump_window_pairing(self):
        # IMU spike on [1.5, 2.0); exactly the steps whose forward window
        # overlaps it must get elevated labels
        records = make_log(40, z_acc_fn=lambda t: 8.0 if 1.5 <= t < 2.0 else 0.0)
        exps = attach_labels(records, known_flat_grid())
        assert len(exps) == 30
        for e in exps:
            if 0.55 < e.timestamp < 1.95:
                assert e.label > 0.05, e.timestamp
            else:
                assert e.label == 0.0, e.timestamp

    def test_snapshot_selection_and_unknown_skip(self):
        records = make_log(30)
        empty = ElevationGrid(center=(10.0, 0.0))  # nothing observed
        full = known_flat_grid()
        # grid becomes available at t=1.0; earlier steps have no snapshot
        exps = attach_labels(records, [(1.0, full)])
        assert all(e.timestamp >= 1.0 for e in exps)
        # an all-unknown snapshot yields nothing
        assert attach_labels(records, [(-1.0, empty)]) == []

    def test_stride(self):
        records = make_log(30)
        assert len(attach_labels(records, known_flat_grid(), stride=5)) == 4


class TestTrainBaseline:
    def test_converges_on_constant_dataset(self):
        # lr kept moderate: on a noiseless dataset the variance head
        # collapses to the clamp floor and large steps start oscillating
        x = np.zeros(INPUT_DIM)
        x[0] = 1.0
        exps = [Experience(feature=x, label=0.37) for _ in range(64)]
        params = train_baseline(exps, epochs=300, lr=0.005,
                                rng=np.random.default_rng(0))
        mean, _ = forward_gaussian_batch(params, x[None])
        assert mean[0] == pytest.approx(0.37, abs=1e-2)

    def test_zero_lr_keeps_init(self):
        exps = synth_experiences(np.random.default_rng(1), 64)
        rng = np.random.default_rng(5)
        params = train_baseline(exps, epochs=1, lr=0.0, rng=rng)
        want = init_params(default_layer_sizes(), np.random.default_rng(5))
        for w0, w1 in zip(params.weights, want.weights):
            np.testing.assert_array_equal(w0, w1)

    def test_seed_changes_result(self):
        exps = synth_experiences(np.random.default_rng(1), 128)
        p0 = train_baseline(exps, 3, 0.01, np.random.default_rng(0))
        p1 = train_baseline(exps, 3, 0.01, np.random.default_rng(1))
        assert any(not np.array_equal(a, b)
                   for a, b in zip(p0.weights, p1.weights))

    def test_deterministic(self):
        exps = synth_experiences(np.random.default_rng(2), 100)
        p0 = train_baseline(exps, 3, 0.01, np.random.default_rng(7))
        p1 = train_baseline(exps, 3, 0.01, np.random.default_rng(7))
        for a, b in zip(p0.weights, p1.weights):
            np.testing.assert_array_equal(a, b)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            train_baseline([], 1, 0.01, np.random.default_rng(0))


def make_tasks(rng, n_tasks=4, per_task=80, identical=False):
    if identical:
        exps = synth_experiences(rng, per_task, task_id=0)
        tasks = []
        for tid in range(n_tasks):
            cloned = [Experience(feature=e.feature.copy(), label=e.label,
                                 task_id=tid, timestamp=e.timestamp)
                      for e in exps]
            tasks.append(TaskDataset(task_id=tid, experiences=cloned))
        return tasks
    return [TaskDataset(task_id=tid,
                        experiences=synth_experiences(rng, per_task, tid))
            for tid in range(n_tasks)]


class TestMetaTrain:
    def test_requires_two_tasks(self):
        tasks = make_tasks(np.random.default_rng(0), n_tasks=1)
        with pytest.raises(ValueError):
            meta_train(tasks, MetaConfig(epochs=1), np.random.default_rng(0))

    def test_small_tasks_excluded(self):
        rng = np.random.default_rng(0)
        tasks = make_tasks(rng, n_tasks=2, per_task=80)
        tasks.append(TaskDataset(task_id=9,
                                 experiences=synth_experiences(rng, 10, 9)))
        # still trains: two eligible tasks remain
        meta_train(tasks, MetaConfig(epochs=2), np.random.default_rng(0))
        with pytest.raises(ValueError):
            meta_train([tasks[0], tasks[2]], MetaConfig(epochs=1),
                       np.random.default_rng(0))

    def test_zero_outer_lr_returns_init(self):
        tasks = make_tasks(np.random.default_rng(1))
        cfg = MetaConfig(outer_lr=0.0, epochs=3)
        params = meta_train(tasks, cfg, np.random.default_rng(4))
        want = init_params(default_layer_sizes(), np.random.default_rng(4))
        for a, b in zip(params.weights, want.weights):
            np.testing.assert_array_equal(a, b)

    def test_inner_steps_zero_matches_pooled_query_training(self):
        tasks = make_tasks(np.random.default_rng(2))
        cfg = MetaConfig(inner_steps=0, epochs=5)
        got = meta_train(tasks, cfg, np.random.default_rng(9))

        # independent replication of the same reduced algorithm
        rng = np.random.default_rng(9)
        data = [(t.features(), t.labels()) for t in tasks]
        params = init_params(default_layer_sizes(), rng)
        state = AdamState.zeros(params)
        for _ in range(cfg.epochs):
            picks = rng.choice(len(tasks), size=cfg.meta_batch_tasks,
                               replace=False)
            mw = [np.zeros_like(w) for w in params.weights]
            mb = [np.zeros_like(b) for b in params.biases]
            for ti in picks:
                X, y = data[ti]
                perm = rng.permutation(len(X))
                n_sup = min(max(1, int(round(0.5 * len(X)))), len(X) - 1)
                qry = perm[n_sup:]
                dw, db = backprop(params,
                                  TrainBatch(inputs=X[qry], targets=y[qry]),
                                  loss_kind="nll")
                for k in range(len(mw)):
                    mw[k] += dw[k] / len(picks)
                    mb[k] += db[k] / len(picks)
            params, state = adam_step(params, (mw, mb), state, cfg.outer_lr)
        for a, b in zip(got.weights, params.weights):
            np.testing.assert_array_equal(a, b)

    def test_warm_start_is_the_initialization(self):
        # with outer_lr 0 the outer loop never moves, so the result is the
        # warm-start parameters exactly
        tasks = make_tasks(np.random.default_rng(3))
        init = init_params(default_layer_sizes(), np.random.default_rng(7))
        cfg = MetaConfig(outer_lr=0.0, epochs=2)
        out = meta_train(tasks, cfg, np.random.default_rng(1), init=init)
        for a, b in zip(out.weights, init.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(out.biases, init.biases):
            np.testing.assert_array_equal(a, b)

    def test_warm_start_fixes_layer_sizes(self):
        sizes = [INPUT_DIM, 8, 2]
        init = init_params(sizes, np.random.default_rng(0))
        tasks = make_tasks(np.random.default_rng(4))
        out = meta_train(tasks, MetaConfig(epochs=1),
                         np.random.default_rng(2), init=init)
        assert list(out.layer_sizes) == sizes

    def test_degenerate_tasks_match_pooled_baseline(self):
        # identical tasks: the meta initialization should match pooled
        # training. Every feature appears twice with a bounded label gap so
        # the NLL optimum has a well-conditioned variance (no clamp-floor
        # collapse, which destabilizes full-batch inner steps).
        rng = np.random.default_rng(6)
        X = rng.normal(0, 0.5, (40, INPUT_DIM))
        base_fn = np.clip(0.5 + 0.2 * X[:, 0] - 0.15 * X[:, 5], 0.4, 0.6)
        delta = rng.uniform(0.2, 0.35, 40)
        tasks = []
        for tid in range(4):
            exps = []
            for i in range(40):
                for sign in (-1.0, 1.0):
                    exps.append(Experience(
                        feature=X[i].copy(),
                        label=float(base_fn[i] + sign * delta[i]),
                        task_id=tid))
            tasks.append(TaskDataset(task_id=tid, experiences=exps))
        pooled = [e for t in tasks for e in t.experiences]
        meta = meta_train(tasks, MetaConfig(epochs=500, inner_steps=1),
                          np.random.default_rng(0))
        base = train_baseline(pooled, epochs=300, lr=1e-3,
                              rng=np.random.default_rng(0))
        nll_meta = support_nll(meta, pooled)
        nll_base = support_nll(base, pooled)
        assert abs(nll_meta - nll_base) <= 0.05 * abs(nll_base)


class TestAdapt:
    def test_zero_steps_identity(self):
        exps = synth_experiences(np.random.default_rng(0), 40)
        params = init_params(default_layer_sizes(), np.random.default_rng(1))
        out = adapt(params, exps, steps=0, lr=0.01)
        for a, b in zip(out.weights, params.weights):
            np.testing.assert_array_equal(a, b)

    def test_loss_non_increasing(self):
        exps = synth_experiences(np.random.default_rng(4), 100)
        params = init_params(default_layer_sizes(), np.random.default_rng(2))
        losses = [support_nll(params, exps)]
        for _ in range(10):
            params = adapt(params, exps, steps=1, lr=0.01)
            losses.append(support_nll(params, exps))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_deterministic_and_input_untouched(self):
        exps = synth_experiences(np.random.default_rng(5), 50)
        params = init_params(default_layer_sizes(), np.random.default_rng(3))
        before = [w.copy() for w in params.weights]
        a = adapt(params, exps, steps=3, lr=0.01)
        b = adapt(params, exps, steps=3, lr=0.01)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)
        for w0, w1 in zip(before, params.weights):
            np.testing.assert_array_equal(w0, w1)

    def test_empty_rejected(self):
        params = init_params(default_layer_sizes(), np.random.default_rng(0))
        with pytest.raises(ValueError):
            adapt(params, [], steps=1, lr=0.01)

    def test_per_step_movement_is_norm_capped(self):
        # a tight-variance net sees NLL gradients hundreds of times larger
        # than lr can absorb; the clip caps each step at lr * cap
        rng = np.random.default_rng(6)
        exps = synth_experiences(rng, 80, noise=0.01)
        params = train_baseline(exps, epochs=80, lr=1e-3,
                                rng=np.random.default_rng(2))
        shifted = [Experience(feature=e.feature,
                              label=min(1.0, e.label + 0.4),
                              task_id=e.task_id, timestamp=e.timestamp)
                   for e in exps]
        lr = 0.01
        stepped = adapt(params, shifted, steps=1, lr=lr)
        move = math.sqrt(sum(
            float(np.sum((a - b) ** 2))
            for a, b in zip([*stepped.weights, *stepped.biases],
                            [*params.weights, *params.biases])))
        assert move <= lr * ADAPT_GRAD_CLIP + 1e-12
        assert move == pytest.approx(lr * ADAPT_GRAD_CLIP, rel=1e-6)


class TestRecalibrateMeanHead:
    def test_zeroes_the_mean_residual(self):
        rng = np.random.default_rng(3)
        exps = synth_experiences(rng, 150)
        params = init_params(default_layer_sizes(), np.random.default_rng(4))
        fixed = recalibrate_mean_head(params, exps)
        X = np.stack([e.feature for e in exps])
        y = np.array([e.label for e in exps])
        mean, _ = forward_gaussian_batch(fixed, X)
        # the refit includes an intercept, so the residual mean is zero
        assert abs(float(np.mean(mean - y))) < 1e-10

    def test_least_squares_optimal_given_trunk(self):
        # brute-force oracle: no other mean row may do better on the fit set
        rng = np.random.default_rng(9)
        exps = synth_experiences(rng, 120)
        params = init_params(default_layer_sizes(), np.random.default_rng(2))
        fixed = recalibrate_mean_head(params, exps)
        base = eval_mse(fixed, exps)
        for trial in range(10):
            ws = [w.copy() for w in fixed.weights]
            bs = [b.copy() for b in fixed.biases]
            ws[-1][0, :] += rng.normal(0, 1e-3, size=ws[-1].shape[1])
            bs[-1][0] += rng.normal(0, 1e-3)
            jitter = MlpParams(list(fixed.layer_sizes), ws, bs)
            assert eval_mse(jitter, exps) >= base - 1e-12

    def test_variance_head_and_trunk_untouched(self):
        rng = np.random.default_rng(5)
        exps = synth_experiences(rng, 60)
        params = init_params(default_layer_sizes(), np.random.default_rng(6))
        fixed = recalibrate_mean_head(params, exps)
        X = np.stack([e.feature for e in exps])
        _, var0 = forward_gaussian_batch(params, X)
        _, var1 = forward_gaussian_batch(fixed, X)
        np.testing.assert_array_equal(var0, var1)
        for a, b in zip(params.weights[:-1], fixed.weights[:-1]):
            np.testing.assert_array_equal(a, b)

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        exps = synth_experiences(rng, 90)
        once = recalibrate_mean_head(
            init_params(default_layer_sizes(), np.random.default_rng(8)),
            exps)
        twice = recalibrate_mean_head(once, exps)
        np.testing.assert_allclose(twice.weights[-1][0], once.weights[-1][0],
                                   atol=1e-10)
        np.testing.assert_allclose(twice.biases[-1][0], once.biases[-1][0],
                                   atol=1e-10)

    def test_empty_rejected(self):
        params = init_params(default_layer_sizes(), np.random.default_rng(0))
        with pytest.raises(ValueError):
            recalibrate_mean_head(params, [])


class TestEvalMse:
    def test_perfect_predictions(self):
        # zero params predict mean 0; labels 0 -> mse 0
        x = np.zeros(INPUT_DIM)
        exps = [Experience(feature=x, label=0.0) for _ in range(5)]
        assert eval_mse(zero_params(default_layer_sizes()), exps) == 0.0

    def test_constant_zero_predictor_on_half_labels(self):
        x = np.zeros(INPUT_DIM)
        exps = [Experience(feature=x, label=0.5) for _ in range(8)]
        assert eval_mse(zero_params(default_layer_sizes()), exps) == \
            pytest.approx(0.25)

    def test_matches_oracle(self):
        exps = synth_experiences(np.random.default_rng(8), 60)
        params = init_params(default_layer_sizes(), np.random.default_rng(1))
        X = np.stack([e.feature for e in exps])
        y = np.array([e.label for e in exps])
        mean, _ = forward_gaussian_batch(params, X)
        want = float(np.mean((mean - y) ** 2))
        assert eval_mse(params, exps) == pytest.approx(want, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            eval_mse(zero_params(default_layer_sizes()), [])


class TestPredictCostMap:
    def test_zero_params_known_cells(self):
        g = ElevationGrid(size=24)
        g.n_obs[:] = 1
        cm = predict_cost_map(zero_params(default_layer_sizes()), g, speed=5.0)
        interior = cm.known[2:-2, 2:-2]
        assert interior.all()
        np.testing.assert_allclose(cm.cost_mean[2:-2, 2:-2], 0.0)
        np.testing.assert_allclose(cm.cost_std[2:-2, 2:-2], 1.0)

    def test_unknown_grid_fully_unknown(self):
        g = ElevationGrid(size=16)
        cm = predict_cost_map(zero_params(default_layer_sizes()), g, speed=5.0)
        assert cm.known.sum() == 0

    def test_bounds_on_random_params(self):
        rng = np.random.default_rng(0)
        g = ElevationGrid(size=20)
        g.n_obs[:] = 1
        g.height_mean = rng.normal(0, 0.3, (20, 20))
        params = init_params(default_layer_sizes(), rng, scale=3.0)
        cm = predict_cost_map(params, g, speed=7.0, heading=0.7)
        sel = cm.known == 1
        assert sel.any()
        assert np.all(cm.cost_mean[sel] >= 0.0)
        assert np.all(cm.cost_mean[sel] <= 1.0)
        assert np.all(cm.cost_std[sel] > 0.0)

    def test_radius_window(self):
        g = ElevationGrid(size=40)
        g.n_obs[:] = 1
        cm = predict_cost_map(zero_params(default_layer_sizes()), g, speed=5.0,
                              center=(0.0, 0.0), radius=2.0)
        assert cm.known.sum() > 0
        ox, oy = cm.origin
        for ix, iy in zip(*np.nonzero(cm.known)):
            cx = ox + (ix + 0.5) * cm.resolution
            cy = oy + (iy + 0.5) * cm.resolution
            assert cx * cx + cy * cy <= 4.0 + 1e-9


class TestOnlineAdapter:
    def make_adapter(self, min_buffer=32):
        params = init_params(default_layer_sizes(), np.random.default_rng(0))
        return OnlineAdapter(params, min_buffer=min_buffer)

    def test_empty_buffer_never_adapts(self):
        ad = self.make_adapter()
        assert ad.maybe_adapt(0.0) is None
        assert ad.maybe_adapt(100.0) is None
        assert ad.n_adaptations == 0

    def test_periodic_trigger(self):
        ad = self.make_adapter()
        for e in synth_experiences(np.random.default_rng(1), 40):
            ad.add_experience(e)
        assert ad.maybe_adapt(0.0) is not None
        assert ad.maybe_adapt(1.0) is None      # 2 s not yet elapsed
        assert ad.maybe_adapt(2.0) is not None
        assert ad.n_adaptations == 2

    def test_ring_capacity(self):
        ad = self.make_adapter()
        for e in synth_experiences(np.random.default_rng(2), 600):
            ad.add_experience(e)
        assert len(ad.buffer) == ad.capacity
        # oldest entries dropped
        assert ad.buffer[0].timestamp == pytest.approx(88.0)

    def test_adaptation_moves_params(self):
        ad = self.make_adapter()
        for e in synth_experiences(np.random.default_rng(3), 64):
            ad.add_experience(e)
        before = [w.copy() for w in ad.params.weights]
        ad.maybe_adapt(0.0)
        assert any(not np.array_equal(a, b)
                   for a, b in zip(before, ad.params.weights))


class TestConfigAndTypes:
    def test_meta_config_validation(self):
        for bad in [dict(inner_lr=-1), dict(inner_steps=-1),
                    dict(meta_batch_tasks=0), dict(support_frac=0.0),
                    dict(support_frac=1.0), dict(epochs=0)]:
            with pytest.raises(ValueError):
                MetaConfig(**bad)

    def test_experience_validation(self):
        with pytest.raises(ValueError):
            Experience(feature=np.zeros(5), label=0.5)
        with pytest.raises(ValueError):
            Experience(feature=np.zeros(INPUT_DIM), label=1.5)
        with pytest.raises(ValueError):
            Experience(feature=np.full(INPUT_DIM, np.nan), label=0.5)

    def test_experience_json_roundtrip(self):
        e = Experience(feature=np.linspace(0, 1, INPUT_DIM), label=0.4,
                       task_id=7, timestamp=3.25)
        e2 = Experience.from_json(e.to_json())
        np.testing.assert_array_equal(e.feature, e2.feature)
        assert (e2.label, e2.task_id, e2.timestamp) == (0.4, 7, 3.25)

    def test_task_dataset_mismatch(self):
        e = Experience(feature=np.zeros(INPUT_DIM), label=0.0, task_id=1)
        with pytest.raises(ValueError):
            TaskDataset(task_id=2, experiences=[e])
