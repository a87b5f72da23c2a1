"""Unit tests for the online loop, the knapsack executor and regret accounting."""

import numpy as np
import pytest

from src.core.cmdp import Policy
from src.core.conrl import (
    STATUS_GUARD_NULL,
    EpisodeLog,
    ExperimentConfig,
    HarnessConfigurationError,
    compute_regret,
    knapsack_budgets,
    run_conrl,
    run_episode,
    run_experiment,
    run_knapsack,
    solve_true_benchmark,
)
from src.core.convex_planner import build_convex_spec
from src.core.estimation import Counts, save_counts
from src.core.planners import (
    STATUS_OPTIMAL,
    STATUS_UNIFORM_FALLBACK,
    PlannerConfigurationError,
    PlannerInfeasibleError,
)
from src.environments import add_null_action
from tests.fixtures.sample_data import get_sample_bandit_cmdp, get_sample_chain_cmdp

RANDOM_ENV = {"seed": 1, "states": 3, "actions": 2, "resources": 1}


def _log(episode, reward, consumption):
    consumption = np.atleast_1d(np.asarray(consumption, dtype=float))
    return EpisodeLog(
        episode=episode,
        exp_reward=reward,
        exp_consumption=consumption,
        realized_reward=reward,
        realized_consumption=consumption,
        planner_status=STATUS_OPTIMAL,
    )


def _random_config(**kwargs):
    settings = dict(env="random", random=RANDOM_ENV, horizon=3, episodes=4, seed=3, log_every=0)
    settings.update(kwargs)
    return ExperimentConfig(**settings)


class TestExperimentConfig:
    """Test cases for configuration checks."""

    def test_defaults(self):
        """Test the default run is the LP planner on the Mars rover."""
        cfg = ExperimentConfig()
        assert (cfg.env, cfg.planner, cfg.episodes, cfg.delta) == ("mars", "lp", 100, 0.1)
        assert cfg.aggreg_mode == "bound"
        assert not cfg.knapsack

    def test_invalid_planner(self):
        """Test an unknown planner raises HarnessConfigurationError."""
        with pytest.raises(HarnessConfigurationError):
            ExperimentConfig(planner="dqn")

    def test_invalid_delta(self):
        """Test delta = 1 is rejected."""
        with pytest.raises(HarnessConfigurationError):
            ExperimentConfig(delta=1.0)

    def test_invalid_aggreg_mode(self):
        """Test an unknown aggregate-regret source is rejected."""
        with pytest.raises(HarnessConfigurationError):
            ExperimentConfig(aggreg_mode="oracle")

    def test_invalid_bonus_scale(self):
        """Test a negative bonus scale is rejected."""
        with pytest.raises(HarnessConfigurationError):
            ExperimentConfig(bonus_scale=-0.1)

    def test_bonus_config_carries_sizes_and_scale(self):
        """Test the bonus settings take the instance sizes and the configured scale."""
        bonus_cfg = ExperimentConfig(delta=0.05, bonus_scale=0.25).bonus_config(get_sample_chain_cmdp())
        assert (bonus_cfg.num_states, bonus_cfg.num_actions, bonus_cfg.horizon) == (2, 2, 2)
        assert (bonus_cfg.delta, bonus_cfg.scale) == (0.05, 0.25)

    def test_budgets_normalized(self):
        """Test budgets become a float tuple and serialize as a list."""
        cfg = ExperimentConfig(budgets=[1, 2])
        assert cfg.budgets == (1.0, 2.0)
        assert cfg.to_dict()["budgets"] == [1.0, 2.0]

    def test_knapsack_adds_null_action(self):
        """Test knapsack runs request the null action from the builder."""
        assert ExperimentConfig(planner="knapsack").env_config().include_null_action
        assert not ExperimentConfig(planner="lp").env_config().include_null_action


class TestRegret:
    """Test cases for compute_regret."""

    def test_running_means(self):
        """Test RewReg and ConsReg use running means of exact expectations."""
        logs = [_log(1, 0.2, [0.5]), _log(2, 0.4, [0.1])]
        report = compute_regret(logs, 0.5, np.array([0.2]), np.array([0.2]))
        assert report.rew_reg == pytest.approx([0.3, 0.2])
        assert report.cons_reg == pytest.approx([0.3, 0.1])
        assert report.cum_consumption[:, 0] == pytest.approx([0.5, 0.6])

    def test_benchmark_policy_has_zero_regret(self):
        """Test logs equal to the benchmark give zero regret everywhere."""
        logs = [_log(k, 0.7, [0.2]) for k in range(1, 4)]
        report = compute_regret(logs, 0.7, np.array([0.2]), np.array([0.2]))
        assert np.allclose(report.rew_reg, 0.0)
        assert np.allclose(report.cons_reg, 0.0)

    def test_cons_reg_takes_worst_resource(self):
        """Test the maximum excess over resources is reported, negative when slack."""
        logs = [_log(1, 0.0, [0.1, 0.5])]
        report = compute_regret(logs, 0.0, np.zeros(2), np.array([0.3, 0.4]))
        assert report.cons_reg == pytest.approx([0.1])
        slack = compute_regret([_log(1, 0.0, [0.1, 0.1])], 0.0, np.zeros(2), np.array([0.3, 0.4]))
        assert slack.cons_reg == pytest.approx([-0.2])

    def test_no_resources(self):
        """Test d = 0 gives a zero consumption regret."""
        logs = [_log(1, 0.1, np.zeros(0)), _log(2, 0.3, np.zeros(0))]
        report = compute_regret(logs, 0.5, np.zeros(0), np.zeros(0))
        assert report.cons_reg.tolist() == [0.0, 0.0]
        assert report.rew_reg == pytest.approx([0.4, 0.3])

    def test_convex_regret(self):
        """Test the convex curves apply f and g to the running means."""
        logs = [_log(1, 0.2, [0.5]), _log(2, 0.4, [0.1])]
        spec = build_convex_spec("capped", "budget", budgets=[0.2], cap=0.3)
        report = compute_regret(logs, 0.5, np.array([0.2]), np.array([0.2]), convex_spec=spec)
        assert report.convex_rew_reg == pytest.approx([0.1, 0.0])
        assert report.convex_cons_reg == pytest.approx([0.3, 0.1])


class TestBenchmark:
    """Test cases for the true benchmark."""

    def test_chain_benchmark(self):
        """Test the chain benchmark is the LP optimum 46/75."""
        solution = solve_true_benchmark(get_sample_chain_cmdp(budget=0.6))
        assert solution.predicted_reward == pytest.approx(46 / 75, abs=1e-9)

    def test_budget_override(self):
        """Test explicit budgets replace the truth's budgets."""
        solution = solve_true_benchmark(get_sample_chain_cmdp(budget=0.6), budgets=np.array([2.0]))
        assert solution.predicted_reward == pytest.approx(0.82, abs=1e-9)

    def test_infeasible_budgets(self):
        """Test budgets no policy meets raise HarnessConfigurationError."""
        with pytest.raises(HarnessConfigurationError):
            solve_true_benchmark(get_sample_bandit_cmdp(), budgets=np.array([-0.1]))


class TestRunEpisode:
    """Test cases for executing one episode."""

    def test_bandit_episode(self):
        """Test one bandit step records the visit and returns its reward and consumption."""
        truth = get_sample_bandit_cmdp()
        counts = Counts.empty(1, 2, 1)
        reward, consumption = run_episode(
            truth, Policy.constant_action(1, 1, 2, 0), np.random.default_rng(0), counts
        )
        assert reward == 1.0
        assert consumption.tolist() == [1.0]
        assert counts.visits.tolist() == [[1, 0]]
        assert counts.episodes_seen == 1

    def test_records_every_step(self):
        """Test an H-step episode adds H visits."""
        truth = get_sample_chain_cmdp(horizon=2)
        counts = Counts.empty(2, 2, 1)
        run_episode(truth, Policy.uniform(2, 2, 2), np.random.default_rng(1), counts)
        assert counts.visits.sum() == 2


class TestRunConrl:
    """Test cases for the soft-constraint loop."""

    def test_same_seed_same_run(self):
        """Test two runs with one seed log identical values."""
        first = run_experiment(_random_config())
        second = run_experiment(_random_config())
        assert [log.exp_reward for log in first.logs] == [log.exp_reward for log in second.logs]
        assert [log.realized_reward for log in first.logs] == [log.realized_reward for log in second.logs]
        assert np.array_equal(first.counts.visits, second.counts.visits)

    def test_logs_and_counts(self):
        """Test K episodes produce K logs, K regret entries and K H visits."""
        result = run_experiment(_random_config())
        assert [log.episode for log in result.logs] == [1, 2, 3, 4]
        assert result.report.rew_reg.size == 4
        assert result.counts.episodes_seen == 4
        assert result.counts.visits.sum() == 12

    def test_lagrangian_planner(self):
        """Test the Lagrangian planner runs through the loop."""
        result = run_experiment(_random_config(planner="lagrangian", lagr_iters=20))
        assert len(result.logs) == 4
        assert all(log.planner_status == STATUS_OPTIMAL for log in result.logs)

    def test_convex_planner_reports_convex_regret(self):
        """Test convex runs fill the convex regret curves."""
        cfg = _random_config(
            planner="convex",
            convex={"constraint": "none", "outer_iterations": 1, "inner_iterations": 2},
        )
        result = run_experiment(cfg)
        assert result.report.convex_rew_reg.size == 4
        assert result.report.convex_cons_reg.tolist() == [0.0] * 4

    def test_infeasible_plan_plays_uniform(self, mocker):
        """Test a planner failure falls back to the uniform policy."""
        mocker.patch("src.core.conrl._plan", side_effect=PlannerInfeasibleError("no plan"))
        result = run_experiment(_random_config(episodes=2))
        assert [log.planner_status for log in result.logs] == [STATUS_UNIFORM_FALLBACK] * 2

    def test_episode_hook(self):
        """Test the hook sees k = 1..K and the updated counts."""
        seen = []
        run_experiment(
            _random_config(),
            on_episode=lambda k, counts, model, solution: seen.append((k, counts.episodes_seen)),
        )
        assert seen == [(1, 1), (2, 2), (3, 3), (4, 4)]

    def test_zero_bonus_scale_plans_on_the_empirical_model(self):
        """Test bonus_scale 0 hands the planner a model without bonus."""
        bonuses = []
        run_experiment(
            _random_config(bonus_scale=0.0),
            on_episode=lambda k, counts, model, solution: bonuses.append(model.bonus.max()),
        )
        assert bonuses == [0.0] * 4

    def test_rejects_knapsack(self):
        """Test the soft loop refuses the knapsack planner."""
        with pytest.raises(HarnessConfigurationError):
            run_conrl(ExperimentConfig(planner="knapsack"), get_sample_chain_cmdp())

    def test_budget_count_checked(self):
        """Test two budget overrides for one resource are rejected."""
        with pytest.raises(HarnessConfigurationError):
            run_experiment(_random_config(budgets=(0.5, 0.5)))

    def test_resume_size_mismatch(self, tmp_path):
        """Test a snapshot for another environment is rejected."""
        path = save_counts(Counts.empty(5, 2, 1), tmp_path / "counts.txt")
        with pytest.raises(HarnessConfigurationError):
            run_experiment(_random_config(resume_counts=str(path)))

    def test_resume_continues_episode_index(self, tmp_path):
        """Test a resumed run starts its bonus index after the snapshot's episodes."""
        first = run_experiment(_random_config(episodes=2))
        path = save_counts(first.counts, tmp_path / "counts.txt")
        seen = []
        run_experiment(
            _random_config(episodes=1, resume_counts=str(path)),
            on_episode=lambda k, counts, model, solution: seen.append(k),
        )
        assert seen == [3]


class TestKnapsack:
    """Test cases for the hard-constraint loop."""

    def _truth(self):
        truth, null = add_null_action(get_sample_chain_cmdp(horizon=2))
        return truth, null

    def test_guard_plays_null_from_the_start(self):
        """Test B < H activates the guard before the first episode and nothing is consumed."""
        truth, null = self._truth()
        cfg = ExperimentConfig(planner="knapsack", episodes=3, budgets=(1.0,), epsilon=0.0, log_every=0)
        logs, report, violated = run_knapsack(cfg, truth, null_action=null)
        assert [log.planner_status for log in logs] == [STATUS_GUARD_NULL] * 3
        assert report.info["guard_episode"] == 1
        assert not violated
        assert report.cum_consumption[-1, 0] == 0.0

    def test_large_budget_never_guards(self):
        """Test a generous budget plans every episode."""
        truth, null = self._truth()
        cfg = ExperimentConfig(planner="knapsack", episodes=3, budgets=(100.0,), epsilon=0.0, log_every=0)
        logs, report, violated = run_knapsack(cfg, truth, null_action=null)
        assert STATUS_GUARD_NULL not in [log.planner_status for log in logs]
        assert report.info["guard_episode"] is None
        assert report.info["epsilon"] == 0.0
        assert not violated

    def test_default_budgets_scale_with_episodes(self):
        """Test the cumulative budget defaults to K times the per-episode budget."""
        truth, _ = self._truth()
        cfg = ExperimentConfig(planner="knapsack", episodes=10)
        assert knapsack_budgets(cfg, truth).tolist() == pytest.approx([6.0])

    def test_budget_count_checked(self):
        """Test two cumulative budgets for one resource are rejected."""
        truth, _ = self._truth()
        with pytest.raises(HarnessConfigurationError):
            knapsack_budgets(ExperimentConfig(planner="knapsack", budgets=(1.0, 1.0)), truth)

    def test_bound_epsilon_needs_large_budget(self):
        """Test auto epsilon from the regret bound fails when the bound exceeds the budget."""
        truth, null = self._truth()
        cfg = ExperimentConfig(planner="knapsack", episodes=3, budgets=(10.0,), epsilon="auto")
        with pytest.raises(PlannerConfigurationError):
            run_knapsack(cfg, truth, null_action=null)

    def test_measured_aggregate_epsilon(self, mocker):
        """Test empirical mode resolves epsilon from the calibration run."""
        mocker.patch("src.core.conrl.measured_aggregate_regret", return_value=0.5)
        truth, _ = self._truth()
        cfg = ExperimentConfig(
            planner="knapsack",
            episodes=3,
            budgets=(100.0,),
            epsilon="auto",
            aggreg_mode="empirical",
            log_every=0,
        )
        result = run_experiment(cfg, truth=truth)
        assert result.report.info["aggreg"] == 0.5
        assert result.report.info["epsilon"] == pytest.approx(0.005)
        assert result.report.info["aggreg_mode"] == "empirical"
