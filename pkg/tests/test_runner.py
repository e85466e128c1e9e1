import pandas as pd
import pytest

from voxevo import checkpoint as ckpt
from voxevo import runner
from voxevo.advisor import AdvisorMode, AdvisorSettings
from voxevo.config import RunConfig
from voxevo.errors import ConfigError
from voxevo.genome import EncodingSpec
from voxevo.models import CURVES_COLUMNS
from voxevo.physics import SimConfig


def small_config(out_dir, **overrides):
    values = dict(
        seed=11, generations=2, population=4, dims=(3, 3, 3), repetitions=1, hidden=[8],
        encoding=EncodingSpec(m=4), sim=SimConfig(dt=1e-4, duration=0.01), threads=1, out_dir=str(out_dir),
    )
    values.update(overrides)
    return RunConfig(**values)


def desk_config(out_dir, seed, threads=1):
    """Grid 3^3, population 12, 20 generations of 0.5 s at dt 1e-4"""
    return RunConfig(seed=seed, generations=20, population=12, dims=(3, 3, 3), repetitions=1,
                     sim=SimConfig(dt=1e-4, duration=0.5), threads=threads, out_dir=str(out_dir))


def read_curves(path):
    return pd.read_csv(path, comment="#")


class TestRun:
    def test_generation_zero_only(self, tmp_path):
        [result] = runner.run(small_config(tmp_path, generations=0))
        curves = read_curves(result.run_dir / "curves.csv")
        assert len(curves) == 1
        assert list(curves.columns) == CURVES_COLUMNS
        assert (result.run_dir / "curves.csv").read_text().startswith(runner.CURVES_HEADER + "\n")

    def test_artifacts_stay_in_run_dir(self, tmp_path):
        [result] = runner.run(small_config(tmp_path, advisor=AdvisorSettings(mode=AdvisorMode.SCRIPTED),
                                           generations=3, trajectory_stride=20))
        assert result.run_dir == tmp_path / "run_00_seed_11"
        for name in ("curves.csv", "timings.csv", "best_genome.ckpt", "best_robot.mesh", "best_robot.voxels",
                     "initial_robot.mesh", "initial_robot.voxels", "state.ckpt", "trajectory.csv",
                     "advisor_audit.jsonl"):
            assert (result.run_dir / name).exists(), name
        assert [p.name for p in tmp_path.iterdir()] == ["run_00_seed_11"]
        assert len(read_curves(result.run_dir / "curves.csv")) == 4

    def test_repetitions_use_consecutive_seeds(self, tmp_path):
        results = runner.run(small_config(tmp_path, repetitions=3, generations=0))
        assert [r.seed for r in results] == [11, 12, 13]
        assert sorted(p.name for p in tmp_path.iterdir()) == ["run_00_seed_11", "run_01_seed_12", "run_02_seed_13"]

    def test_same_seed_same_curves(self, tmp_path):
        [a] = runner.run(small_config(tmp_path / "a"))
        [b] = runner.run(small_config(tmp_path / "b"))
        assert (a.run_dir / "curves.csv").read_bytes() == (b.run_dir / "curves.csv").read_bytes()

    def test_wall_time_kept_when_asked(self, tmp_path):
        [result] = runner.run(small_config(tmp_path, reproducible_curves=False, generations=0))
        assert read_curves(result.run_dir / "curves.csv")["wall_time"][0] > 0.0
        assert not (result.run_dir / "timings.csv").exists()


class TestResume:
    def test_matches_straight_run(self, tmp_path):
        [straight] = runner.run(small_config(tmp_path / "straight", generations=6))

        [partial] = runner.run(small_config(tmp_path / "resumed", generations=3))
        saved = ckpt.load_run(partial.run_dir / runner.STATE_FILE)
        assert saved.state.generation == 4
        saved.config.generations = 6
        ckpt.save_run(partial.run_dir / runner.STATE_FILE, saved)

        resumed = runner.resume(partial.run_dir / runner.STATE_FILE)
        assert (resumed.run_dir / "curves.csv").read_bytes() == (straight.run_dir / "curves.csv").read_bytes()
        assert ckpt.load_genome(resumed.run_dir / "best_genome.ckpt").equals(
            ckpt.load_genome(straight.run_dir / "best_genome.ckpt"))

    def test_finished_run_rewrites_artifacts(self, tmp_path):
        [result] = runner.run(small_config(tmp_path))
        curves = (result.run_dir / "curves.csv").read_bytes()
        (result.run_dir / "best_robot.mesh").unlink()

        again = runner.resume(result.run_dir / runner.STATE_FILE)
        assert (again.run_dir / "best_robot.mesh").exists()
        assert (again.run_dir / "curves.csv").read_bytes() == curves
        assert again.final_best == result.final_best

    def test_writes_next_to_checkpoint(self, tmp_path, monkeypatch):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        monkeypatch.chdir(tmp_path / "a")
        [result] = runner.run(small_config("runs"))
        state_file = (tmp_path / "a" / result.run_dir / runner.STATE_FILE).resolve()
        (state_file.parent / "best_robot.mesh").unlink()

        monkeypatch.chdir(tmp_path / "b")
        again = runner.resume(state_file)
        assert again.run_dir == state_file.parent
        assert (state_file.parent / "best_robot.mesh").exists()
        assert list((tmp_path / "b").iterdir()) == []


class TestCompare:
    def test_writes_both_arms(self, tmp_path):
        frame = runner.compare(small_config(tmp_path, repetitions=2, generations=3))
        assert list(frame["advisor"]) == ["off", "off", "scripted", "scripted"]
        assert list(frame["seed"]) == [11, 12, 11, 12]
        assert (tmp_path / "comparison.csv").exists()
        assert (tmp_path / "advisor_off" / "run_00_seed_11" / "curves.csv").exists()


class TestSigmaSweep:
    def test_one_arm_per_sigma(self, tmp_path):
        frame = runner.sweep_sigma(small_config(tmp_path, repetitions=2, generations=1), [0.5, 2.0])
        assert list(frame["sigma"]) == [0.5, 0.5, 2.0, 2.0]
        assert list(frame["seed"]) == [11, 12, 11, 12]
        assert (tmp_path / "sigma_sweep.csv").read_text().startswith("sigma,seed,initial_best,final_best")
        for name in ("sigma_0.5", "sigma_2"):
            assert (tmp_path / name / "run_00_seed_11" / "curves.csv").exists()

    def test_sigma_reaches_the_genome(self, tmp_path):
        runner.sweep_sigma(small_config(tmp_path, generations=0), [0.25])
        saved = ckpt.load_run(tmp_path / "sigma_0.25" / "run_00_seed_11" / runner.STATE_FILE)
        assert saved.config.encoding.sigma == 0.25
        assert saved.state.population[0].spec.sigma == 0.25

    @pytest.mark.parametrize("sigmas", [[], [1.0, 0.0], [-1.0]])
    def test_rejects_bad_values(self, tmp_path, sigmas):
        with pytest.raises(ConfigError):
            runner.sweep_sigma(small_config(tmp_path), sigmas)


@pytest.mark.slow
class TestDeskScale:
    def test_best_fitness_never_drops(self, tmp_path):
        improved = 0
        for seed in (0, 1, 2):
            [result] = runner.run(desk_config(tmp_path / str(seed), seed))
            curves = read_curves(result.run_dir / "curves.csv")
            best = list(curves["best"])
            assert len(best) == 21
            assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
            assert curves["diversity"].between(0.0, 1.0).all()
            improved += best[-1] > best[0]
        assert improved >= 2

    def test_thread_count_and_reruns_agree(self, tmp_path):
        files = []
        for threads in (1, 8):
            for attempt in range(2):
                [result] = runner.run(desk_config(tmp_path / f"{threads}_{attempt}", seed=5, threads=threads))
                files.append((result.run_dir / "curves.csv").read_bytes())
        assert all(f == files[0] for f in files)

