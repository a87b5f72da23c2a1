"""Integration tests for the experiment service layer."""

from pathlib import Path

import pytest

from src.core.simplex import OPTIMAL, SolverError
from src.services.experiment_service import ExperimentService, ValidationError, run_seeds
from tests.fixtures.sample_data import get_sample_instance_yaml

RANDOM_ENV = {"seed": 2, "states": 3, "actions": 2, "resources": 1}


def _overrides(tmp_path, **extra):
    overrides = {
        "env": "random",
        "random": dict(RANDOM_ENV),
        "horizon": 3,
        "episodes": 3,
        "seed": 5,
        "log_every": 0,
        "out": str(tmp_path / "out"),
    }
    overrides.update(extra)
    return overrides


@pytest.fixture
def service():
    return ExperimentService()


class TestResolveConfig:
    """Test cases for settings validation."""

    def test_defaults(self, service):
        """Test an empty override set resolves to the Mars defaults."""
        cfg = service.resolve_config()
        assert (cfg.env, cfg.planner, cfg.epsilon, cfg.aggreg_mode) == ("mars", "lp", "auto", "bound")
        assert cfg.eta == 0.2

    def test_environment_default_eta(self, service):
        """Test the Box world gets its own learning rate."""
        assert service.resolve_config({"env": "box"}).eta == 0.01

    def test_case_insensitive_choices(self, service):
        """Test choices are normalized to lower case."""
        cfg = service.resolve_config({"planner": " Lagrangian ", "lp_backend": "HIGHS"})
        assert (cfg.planner, cfg.lp_backend) == ("lagrangian", "highs")

    def test_string_values_typed(self, service):
        """Test command-line strings are converted and flags parsed."""
        cfg = service.resolve_config(
            {"episodes": "40", "budgets": "0.2,0.3", "epsilon": "0.25", "box_goal": "yes"}
        )
        assert cfg.episodes == 40
        assert cfg.budgets == (0.2, 0.3)
        assert cfg.epsilon == 0.25
        assert service.resolve_config({"bonus_scale": "0.5"}).bonus_scale == 0.5
        assert cfg.box_goal is True

    @pytest.mark.parametrize(
        "overrides",
        [
            {"colour": "blue"},
            {"env": "atari"},
            {"planner": "greedy"},
            {"aggreg_mode": "guess"},
            {"episodes": 0},
            {"episodes": 2.5},
            {"delta": 1.0},
            {"bonus_scale": -0.5},
            {"slip": -0.1},
            {"eta": 0},
            {"budgets": "0.2,-1"},
            {"budgets": "lots"},
            {"epsilon": 1.5},
            {"convex": "log"},
        ],
    )
    def test_invalid_settings(self, service, overrides):
        """Test each invalid setting raises ValidationError."""
        with pytest.raises(ValidationError):
            service.resolve_config(overrides)

    def test_config_file_layer(self, tmp_path):
        """Test file settings apply and overrides win over them."""
        path = tmp_path / "run.conf"
        path.write_text("env = random\nepisodes = 7\nlog_level = debug\n")
        service = ExperimentService(config_path=str(path))
        assert service.log_level == "debug"
        cfg = service.resolve_config({"episodes": 9})
        assert (cfg.env, cfg.episodes) == ("random", 9)

    def test_missing_config_file(self, tmp_path):
        """Test a missing config file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            ExperimentService(config_path=str(tmp_path / "absent.yaml"))


class TestRun:
    """Test cases for ExperimentService.run."""

    def test_single_run_writes_reports(self, service, tmp_path):
        """Test one run writes CSV, manifest and counts and summarizes them."""
        response = service.run(_overrides(tmp_path))
        assert response["success"] is True
        (summary,) = response["data"]["runs"]
        assert summary["seed"] == 5
        assert summary["episodes"] == 3
        assert set(summary["outputs"]) == {"csv", "manifest", "counts"}
        assert all(Path(path).exists() for path in summary["outputs"].values())

    def test_rerun_is_reproducible(self, service, tmp_path):
        """Test the same seed reproduces the regret CSV byte for byte."""
        first = service.run(_overrides(tmp_path, out=str(tmp_path / "a")))
        second = service.run(_overrides(tmp_path, out=str(tmp_path / "b")))
        assert (tmp_path / "a" / "regret.csv").read_bytes() == (tmp_path / "b" / "regret.csv").read_bytes()
        assert first["data"]["runs"][0]["final_rew_reg"] == second["data"]["runs"][0]["final_rew_reg"]

    def test_several_runs(self, service, tmp_path):
        """Test several runs use spawned seeds and separate directories."""
        response = service.run(_overrides(tmp_path, runs=2))
        runs = response["data"]["runs"]
        assert [run["seed"] for run in runs] == run_seeds(5, 2)
        assert (tmp_path / "out" / "run_0" / "regret.csv").exists()
        assert (tmp_path / "out" / "run_1" / "regret.csv").exists()

    def test_validation_failure(self, service, tmp_path):
        """Test invalid settings give a VALIDATION_ERROR response."""
        response = service.run(_overrides(tmp_path, planner="greedy"))
        assert response["success"] is False
        assert response["error_code"] == "VALIDATION_ERROR"

    def test_missing_resume_snapshot(self, service, tmp_path):
        """Test an unreadable snapshot gives an IO_ERROR response."""
        response = service.run(_overrides(tmp_path, resume_counts=str(tmp_path / "absent.txt")))
        assert response["error_code"] == "IO_ERROR"


class TestRunSeeds:
    """Test cases for run_seeds."""

    def test_deterministic_and_distinct(self):
        """Test spawned seeds repeat for one root and differ from each other."""
        seeds = run_seeds(3, 4)
        assert seeds == run_seeds(3, 4)
        assert len(set(seeds)) == 4


class TestPlanAndEvaluate:
    """Test cases for plan and evaluate."""

    def test_plan(self, service, tmp_path):
        """Test the true benchmark respects the budget."""
        response = service.plan(_overrides(tmp_path))
        data = response["data"]
        assert data["num_states"] == 3
        assert data["consumption"][0] <= data["budgets"][0] + 1e-7

    def test_infeasible_budget(self, service, tmp_path):
        """Test a zero budget on strictly costly actions is a CONFIG_ERROR."""
        response = service.plan(_overrides(tmp_path, budgets="0.0"))
        assert response["error_code"] == "CONFIG_ERROR"

    def test_solver_failure(self, service, tmp_path, mocker):
        """Test solver failures map to SOLVER_ERROR."""
        mocker.patch(
            "src.services.experiment_service.solve_true_benchmark",
            side_effect=SolverError("iteration limit"),
        )
        response = service.plan(_overrides(tmp_path))
        assert response["error_code"] == "SOLVER_ERROR"

    def test_evaluate_uniform(self, service, tmp_path):
        """Test evaluation without a snapshot uses the uniform policy."""
        data = service.evaluate(_overrides(tmp_path))["data"]
        assert data["policy"] == "uniform"
        assert data["consumption"][0] <= data["budgets"][0] + 1e-12

    def test_evaluate_from_snapshot(self, service, tmp_path):
        """Test the counts written by a run can be evaluated."""
        overrides = _overrides(tmp_path, budgets="3.0")
        service.run(overrides)
        response = service.evaluate(overrides, counts_path=str(tmp_path / "out" / "counts.txt"))
        assert response["success"] is True
        assert response["data"]["policy"] == "counts"

    def test_bench_planners(self, service, tmp_path):
        """Test the three planners are compared on the true model."""
        response = service.bench_planners(
            _overrides(tmp_path, budgets="3.0", lagr_iters=20)
        )
        names = [row["planner"] for row in response["data"]["planners"]]
        assert names == ["lp", "lagrangian", "convex"]


class TestBenchOracle:
    """Test cases for the exact oracle constants."""

    def test_chain_instance(self, service, tmp_path):
        """Test the chain instance's LP optimum and best deterministic policy."""
        path = tmp_path / "chain.yaml"
        path.write_text(get_sample_instance_yaml())
        data = service.bench_oracle(str(path))["data"]
        assert data["lp_status"] == OPTIMAL
        assert data["lp_optimum_float"] == pytest.approx(46 / 75, rel=1e-9)
        assert data["best_deterministic_float"] == pytest.approx(0.2)

    def test_incomplete_instance(self, service, tmp_path):
        """Test an instance without the required tables is a CONFIG_ERROR."""
        path = tmp_path / "bad.yaml"
        path.write_text("horizon: 2\n")
        assert service.bench_oracle(str(path))["error_code"] == "CONFIG_ERROR"

    def test_missing_instance(self, service, tmp_path):
        """Test a missing instance file is an IO_ERROR."""
        assert service.bench_oracle(str(tmp_path / "absent.yaml"))["error_code"] == "IO_ERROR"
