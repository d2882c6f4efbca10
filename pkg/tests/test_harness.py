"""Scenario config, metrics, pipeline operations, and the CLI."""

import dataclasses
import json
import os

import numpy as np
import pytest

from offnav import cli, pipeline
from offnav.metrics import (
    MetricsReport,
    MseRow,
    NavRow,
    motion_stats,
    read_mse_csv,
    write_mse_csv,
    write_nav_csv,
)
from offnav.mppi import MppiConfig
from offnav.nn import MlpParams, save_params
from offnav.scenario import ScenarioConfig, default_scenario
from offnav.terrain import TerrainSpec, generate_terrain
from offnav.traversability import Experience, MetaConfig


def small_scenario(**overrides):
    sc = default_scenario()
    base = dict(
        collect_budget=300,
        trials=2,
        timeout=18.0,
        waypoints=((0.0, 0.0), (22.0, 0.0), (44.0, 0.0)),
        meta=MetaConfig(epochs=20),
    )
    base.update(overrides)
    return dataclasses.replace(sc, **base)


def zero_traversability_params():
    ls = [27, 8, 2]
    return MlpParams(layer_sizes=ls,
                     weights=[np.zeros((8, 27)), np.zeros((2, 8))],
                     biases=[np.zeros(8), np.zeros(2)])


class TestScenarioConfig:
    def test_roundtrip(self, tmp_path):
        sc = default_scenario(seed=3)
        p = tmp_path / "sc.json"
        sc.save(p)
        back = ScenarioConfig.load(p)
        assert back.to_dict() == sc.to_dict()
        assert back.seed == 3
        assert back.mppi == sc.mppi

    def test_validation(self):
        sc = default_scenario()
        with pytest.raises(ValueError):
            dataclasses.replace(sc, trials=0)
        with pytest.raises(ValueError):
            dataclasses.replace(sc, waypoints=((0.0, 0.0),))
        with pytest.raises(ValueError):
            dataclasses.replace(sc, timeout=0.0)
        with pytest.raises(ValueError):
            dataclasses.replace(sc, collect_budget=-1)

    def test_default_tracks_have_hazards(self):
        sc = default_scenario()
        assert len(sc.race_track.bumps) > 0
        assert len(sc.adaptation_track.bumps) == 3
        profiles = {b.profile for b in sc.adaptation_track.bumps}
        train_profiles = {b.profile for t in sc.train_tasks for b in t.bumps}
        # the adaptation bumps are a type never seen in training
        assert profiles.isdisjoint(train_profiles)


class TestMetrics:
    def test_zero_imu_log_gives_zero_stats(self):
        stats = motion_stats(np.zeros(50), np.zeros(50), np.zeros(50),
                             np.zeros(50))
        assert all(v == 0.0 for v in stats.values())

    def test_empty_log_gives_zero_stats(self):
        stats = motion_stats([], [], [], [])
        assert all(v == 0.0 for v in stats.values())

    def test_max_ge_mean_on_random(self):
        rng = np.random.default_rng(0)
        stats = motion_stats(*(rng.normal(size=200) for _ in range(4)))
        for chan in ("vertical_vel", "vertical_acc", "roll_acc",
                     "pitch_acc"):
            assert stats[f"max_{chan}"] >= stats[f"mean_{chan}"] >= 0.0

    def test_nav_row_invariants(self):
        stats = motion_stats([1.0], [2.0], [0.5], [0.1])
        row = NavRow(method="ours", success_count=3, trials=5, **stats)
        assert row.max_vertical_acc == 2.0
        with pytest.raises(ValueError):
            NavRow(method="ours", success_count=6, trials=5, **stats)
        bad = dict(stats, max_roll_acc=0.1, mean_roll_acc=0.2)
        with pytest.raises(ValueError):
            NavRow(method="ours", success_count=1, trials=5, **bad)

    def test_csv_roundtrip_and_determinism(self, tmp_path):
        rows = [MseRow("baseline", "heldout0", "none", 0.25),
                MseRow("meta", "heldout0", "adapted", 0.125)]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_mse_csv(rows, p1)
        write_mse_csv(rows, p2)
        assert p1.read_bytes() == p2.read_bytes()
        back = read_mse_csv(p1)
        assert [r.to_dict() for r in back] == [r.to_dict() for r in rows]


class TestCollect:
    def test_zero_budget_empty_logs(self, tmp_path):
        sc = small_scenario(collect_budget=0)
        manifest = pipeline.run_collect(sc, tmp_path)
        assert all(m["experiences"] == 0 and m["transitions"] == 0
                   for m in manifest["train"])
        for i in range(len(sc.train_tasks)):
            p = tmp_path / "logs" / f"experiences_task{i}.jsonl"
            assert p.exists() and p.read_text() == ""

    def test_task_files_and_ids(self, tmp_path):
        sc = small_scenario(collect_budget=150)
        manifest = pipeline.run_collect(sc, tmp_path)
        assert len(manifest["train"]) == len(sc.train_tasks)
        assert len(manifest["heldout"]) == len(sc.heldout_tasks)
        for i in range(len(sc.train_tasks)):
            exps = pipeline.load_experiences(
                tmp_path / "logs" / f"experiences_task{i}.jsonl")
            assert all(e.task_id == i for e in exps)

    def test_fixed_seed_byte_identical(self, tmp_path):
        sc = small_scenario(collect_budget=150)
        a, b = tmp_path / "a", tmp_path / "b"
        pipeline.run_collect(sc, a)
        pipeline.run_collect(sc, b)
        for name in sorted(os.listdir(a / "logs")):
            assert (a / "logs" / name).read_bytes() == \
                (b / "logs" / name).read_bytes(), name

    def test_bad_mode_rejected(self):
        sc = small_scenario()
        field = generate_terrain(sc.train_tasks[0])
        with pytest.raises(ValueError):
            pipeline.collect_task(field, sc, 0, np.random.default_rng(0),
                                  mode="zigzag")


class TestTrainAndEval:
    def test_missing_logs_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            pipeline.run_train(small_scenario(), tmp_path)

    def test_missing_checkpoints_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            pipeline.run_eval_mse(small_scenario(), tmp_path)

    def test_perfect_predictor_gives_zero_mse(self, tmp_path):
        sc = small_scenario()
        sc = dataclasses.replace(sc, heldout_tasks=sc.heldout_tasks[:2])
        log_dir = tmp_path / "logs"
        ckpt_dir = tmp_path / "checkpoints"
        log_dir.mkdir()
        ckpt_dir.mkdir()
        rng = np.random.default_rng(0)
        for i in range(2):
            exps = [Experience(feature=rng.normal(size=27), label=0.0,
                               task_id=100 + i, timestamp=0.1 * k)
                    for k in range(200)]
            pipeline.save_experiences(
                exps, log_dir / f"experiences_heldout{i}.jsonl")
        zero = zero_traversability_params()
        save_params(zero, ckpt_dir / "baseline.json")
        save_params(zero, ckpt_dir / "meta.json")
        rows = pipeline.run_eval_mse(sc, tmp_path)
        assert len(rows) == 3 * 2  # methods x tasks
        assert all(r.mse == 0.0 for r in rows)
        table = read_mse_csv(tmp_path / "eval" / "mse_table.csv")
        assert len(table) == 6

    def test_eval_rows_complete_per_task(self, tmp_path):
        sc = small_scenario()
        sc = dataclasses.replace(sc, heldout_tasks=sc.heldout_tasks[:1])
        (tmp_path / "logs").mkdir()
        (tmp_path / "checkpoints").mkdir()
        rng = np.random.default_rng(1)
        exps = [Experience(feature=rng.normal(size=27),
                           label=float(rng.uniform(0, 1)), task_id=100,
                           timestamp=float(k))
                for k in range(300)]
        pipeline.save_experiences(
            exps, tmp_path / "logs" / "experiences_heldout0.jsonl")
        zero = zero_traversability_params()
        save_params(zero, tmp_path / "checkpoints" / "baseline.json")
        save_params(zero, tmp_path / "checkpoints" / "meta.json")
        rows = pipeline.run_eval_mse(sc, tmp_path)
        got = {(r.model, r.adaptation) for r in rows}
        assert got == {("baseline", "none"), ("meta", "none"),
                       ("meta", "adapted")}


def flat_scenario(**overrides):
    flat = TerrainSpec(seed=7)
    return small_scenario(race_track=flat,
                          adaptation_track=dataclasses.replace(
                              default_scenario().adaptation_track,
                              roughness_amplitude=0.0),
                          **overrides)


def write_stub_checkpoints(root):
    ckpt = os.path.join(root, "checkpoints")
    os.makedirs(ckpt, exist_ok=True)
    save_params(zero_traversability_params(),
                os.path.join(ckpt, "baseline.json"))
    save_params(zero_traversability_params(),
                os.path.join(ckpt, "meta.json"))
    from offnav.dynamics import Ensemble
    from offnav.nn import init_params
    members = [init_params([8, 4, 6], np.random.default_rng(s))
               for s in range(2)]
    Ensemble(members=members, member_seeds=[0, 1],
             d_ref=1.0).save(os.path.join(ckpt, "ensemble.json"))


class TestNavigate:
    def test_unknown_method_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            pipeline.run_navigate(small_scenario(), "astar", tmp_path)

    def test_missing_checkpoints_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            pipeline.run_navigate(small_scenario(), "ours", tmp_path)

    def test_flat_track_all_methods_succeed(self, tmp_path):
        sc = flat_scenario(trials=2)
        write_stub_checkpoints(tmp_path)
        for method in pipeline.METHODS:
            row = pipeline.run_navigate(sc, method, tmp_path)
            assert row.success_count == row.trials == 2, method
            assert row.max_vertical_acc < 1.0, method
            for k in range(2):
                assert (tmp_path / "nav" / method / "trajectories" /
                        f"trial_{k}.jsonl").exists()

    def test_trial_seeds_independent(self, tmp_path):
        # trial k's outcome must not depend on how many trials run before it
        sc = flat_scenario(trials=1)
        write_stub_checkpoints(tmp_path)
        pipeline.run_navigate(sc, "elevation", tmp_path)
        one = (tmp_path / "nav" / "elevation" / "trajectories" /
               "trial_0.jsonl").read_bytes()
        sc2 = flat_scenario(trials=2)
        pipeline.run_navigate(sc2, "elevation", tmp_path)
        again = (tmp_path / "nav" / "elevation" / "trajectories" /
                 "trial_0.jsonl").read_bytes()
        assert one == again


class TestAdaptationScenario:
    def test_missing_checkpoint_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            pipeline.run_adaptation_scenario(small_scenario(), tmp_path)

    def test_report_structure(self, tmp_path):
        sc = flat_scenario(timeout=30.0)
        write_stub_checkpoints(tmp_path)
        report = pipeline.run_adaptation_scenario(sc, tmp_path)
        assert set(report) >= {"success", "laps", "predicted_bump_cost",
                               "cost_increased", "bump_acc_decreased",
                               "n_adaptations"}
        assert len(report["laps"]) == 2
        on_disk = json.loads(
            (tmp_path / "adapt" / "adaptation_report.json").read_text())
        assert on_disk == report


class TestReport:
    def test_gather_and_write(self, tmp_path):
        stats = motion_stats([0.1], [0.2], [0.3], [0.4])
        rep = MetricsReport(
            nav_rows=[NavRow(method="ours", success_count=2, trials=2,
                             **stats)],
            mse_rows=[MseRow("baseline", "heldout0", "none", 0.5)])
        out = tmp_path / "report"
        pipeline.write_report(rep, out)
        assert (out / "nav_table.csv").exists()
        assert (out / "mse_table.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["nav"][0]["method"] == "ours"
        pipeline.write_report(rep, tmp_path / "report2")
        assert (out / "nav_table.csv").read_bytes() == \
            (tmp_path / "report2" / "nav_table.csv").read_bytes()

    def test_gather_empty_run(self, tmp_path):
        rep = pipeline.gather_metrics(tmp_path)
        assert rep.nav_rows == [] and rep.mse_rows == []


class TestCli:
    def test_collect_and_report_commands(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        sc = small_scenario(collect_budget=0)
        sc.save(cfg)
        out = tmp_path / "run"
        rc = cli.main(["collect", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        manifest = json.loads(capsys.readouterr().out)
        assert len(manifest["train"]) == len(sc.train_tasks)
        assert (out / "logs" / "experiences_task0.jsonl").exists()
        rc = cli.main(["report", "--out", str(out)])
        assert rc == 0
        assert (out / "report" / "nav_table.csv").exists()

    def test_seed_override_changes_logs(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        small_scenario(collect_budget=120).save(cfg)
        cli.main(["collect", "--config", str(cfg), "--out",
                  str(tmp_path / "r0"), "--seed", "0"])
        cli.main(["collect", "--config", str(cfg), "--out",
                  str(tmp_path / "r1"), "--seed", "1"])
        a = (tmp_path / "r0" / "logs" / "experiences_task0.jsonl").read_text()
        b = (tmp_path / "r1" / "logs" / "experiences_task0.jsonl").read_text()
        assert a != b

    def test_failure_prints_json_error(self, tmp_path, capsys):
        rc = cli.main(["train", "--out", str(tmp_path)])
        assert rc != 0
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "FileNotFoundError"

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["no-such-command", "--out", "x"])
        assert exc.value.code != 0
