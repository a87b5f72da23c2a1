"""Long statistical checks of the learning loop; run with ``pytest -m slow``."""

import numpy as np
import pytest
from scipy.stats import binomtest

from src.core.cmdp import Policy, evaluate_policy
from src.core.conrl import ExperimentConfig, run_conrl, run_experiment, solve_true_benchmark
from src.core.diagnostics import bonus_validity_violations, knapsack_reward_bound, optimism_gaps
from src.core.estimation import (
    BonusConfig,
    BonusTable,
    Counts,
    EmpiricalModel,
    bonus_enhanced_model,
    compute_bonus,
    empirical_model,
    record_step,
)
from src.environments import build_environment, build_random_cmdp, sample_step

pytestmark = pytest.mark.slow

WARM_VISITS = 10**8


def _warm_counts(cmdp, visits=WARM_VISITS):
    """Counts whose empirical model equals the truth, as after long play."""
    counts = Counts.empty(cmdp.num_states, cmdp.num_actions, cmdp.num_resources)
    counts.visits[:] = visits
    counts.transition_counts[:] = np.rint(cmdp.transitions * visits).astype(np.int64)
    counts.reward_sum[:] = cmdp.rewards * visits
    counts.consumption_sum[:] = cmdp.consumption * visits
    counts.episodes_seen = 1000
    return counts


class TestBonusValidity:
    """The confidence bonus covers the model error after real play."""

    def test_bonus_valid_and_optimistic(self, chain_cmdp):
        """Test zero violations and optimism for the benchmark policy after 200 episodes."""
        cfg = ExperimentConfig(episodes=200, seed=11, log_every=0)
        result = run_experiment(cfg, truth=chain_cmdp)
        counts = result.counts
        bonus = compute_bonus(counts, counts.episodes_seen, BonusConfig(cfg.delta, 2, 2, 2, 1))
        emp = empirical_model(counts)
        reference = solve_true_benchmark(chain_cmdp).policy

        assert bonus_validity_violations(chain_cmdp, emp, bonus, reference) == 0
        assert optimism_gaps(chain_cmdp, bonus_enhanced_model(emp, bonus), reference).holds()

    def test_uniform_play_keeps_bonus_valid(self, chain_cmdp, uniform_chain_policy, rng):
        """Test the bonus stays valid along a uniformly exploring trajectory."""
        counts = Counts.empty(2, 2, 1)
        bonus_cfg = BonusConfig(0.1, 2, 2, 2, 1)
        for k in range(1, 301):
            s = chain_cmdp.initial_state
            for h in range(1, chain_cmdp.horizon + 1):
                a = int(rng.choice(2, p=uniform_chain_policy.probabilities(h, s)))
                step = sample_step(chain_cmdp, s, a, rng)
                record_step(counts, s, a, step.reward, step.consumption, step.next_state)
                s = step.next_state
            counts.end_episode()
            if k % 50 == 0:
                bonus = compute_bonus(counts, k, bonus_cfg)
                violations = bonus_validity_violations(
                    chain_cmdp, empirical_model(counts), bonus, uniform_chain_policy
                )
                assert violations == 0


VALIDITY_RUNS = 200
SIGNIFICANCE = 0.01


class TestBonusValidityFrequency:
    """Across seeded runs the bonus is valid at every episode in at least a 1 - delta share."""

    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_validity_share_and_optimism(self, delta):
        """Test the share of fully valid runs and optimism at every episode of those runs."""
        truth = build_random_cmdp(seed=2, num_states=3, num_actions=2, horizon=3)
        reference = solve_true_benchmark(truth).policy
        holding = 0
        for seed in range(VALIDITY_RUNS):
            checks = []

            def check(k, counts, model, solution):
                emp = EmpiricalModel(p_hat=model.p, r_hat=model.r_hat, c_hat=model.c_hat)
                violations = bonus_validity_violations(truth, emp, BonusTable(model.bonus), reference)
                checks.append((violations == 0, optimism_gaps(truth, model, reference).holds()))

            cfg = ExperimentConfig(
                env="random", horizon=3, episodes=200, delta=delta, seed=seed, log_every=0
            )
            run_experiment(cfg, truth=truth, on_episode=check)
            if all(valid for valid, _ in checks):
                holding += 1
                assert all(optimistic for _, optimistic in checks)

        result = binomtest(holding, VALIDITY_RUNS, 1.0 - delta, alternative="less")
        assert result.pvalue > SIGNIFICANCE


class TestRegretWithGoodModel:
    """With a near-exact model the learner plays near the benchmark."""

    def test_warm_start_regret_small(self, chain_cmdp):
        """Test both regrets are within the residual bonus after a warm start."""
        cfg = ExperimentConfig(episodes=20, seed=3, log_every=0)
        _, report = run_conrl(cfg, chain_cmdp, counts=_warm_counts(chain_cmdp))
        assert abs(report.rew_reg[-1]) < 0.05
        assert report.cons_reg[-1] < 0.05

    def test_warm_start_random_instance(self):
        """Test the same on a random instance with two resources."""
        cfg = ExperimentConfig(
            env="random",
            horizon=4,
            episodes=10,
            seed=8,
            log_every=0,
            random={"seed": 6, "states": 4, "actions": 3, "resources": 2},
        )
        cmdp = build_environment(cfg.env, cfg.env_config(), random_params=cfg.random)
        _, report = run_conrl(cfg, cmdp, counts=_warm_counts(cmdp))
        assert abs(report.rew_reg[-1]) < 0.1
        assert report.cons_reg[-1] < 0.1


KNAPSACK_EPISODES = 30
KNAPSACK_EPSILON = 0.1


@pytest.fixture(scope="module")
def knapsack_setup():
    """Null-extended instance, its budget 0.4 K (uniform consumption), and the tightened optimum."""
    cfg = ExperimentConfig(
        env="random",
        planner="knapsack",
        horizon=3,
        episodes=KNAPSACK_EPISODES,
        random={"seed": 4, "states": 3, "actions": 2, "resources": 1},
    )
    base = build_random_cmdp(seed=4, num_states=3, num_actions=2, horizon=3)
    uniform = evaluate_policy(
        base.transitions, base.consumption[:, :, 0], Policy.uniform(3, 3, 2), 3
    ).value(0)
    budget = 0.4 * KNAPSACK_EPISODES * uniform
    truth = build_environment(cfg.env, cfg.env_config(), random_params=cfg.random)
    tightened = solve_true_benchmark(
        truth, budgets=[(1.0 - KNAPSACK_EPSILON) * budget / KNAPSACK_EPISODES]
    ).predicted_reward
    return truth, budget, tightened


class TestKnapsackSafety:
    """Cumulative consumption never exceeds the hard budget."""

    @pytest.mark.parametrize("seed", range(100))
    def test_budget_never_exceeded(self, seed, knapsack_setup):
        """
        Test the realized cumulative consumption stays within B on every run.

        The measured aggregate regret is the realized reward shortfall against
        the tightened optimum, floored at ``epsilon * B`` so that epsilon never
        exceeds ``AggReg / B``. When B exceeds it, the realized reward regret
        must respect ``2 H AggReg / B``.
        """
        truth, budget, tightened = knapsack_setup
        K, H = KNAPSACK_EPISODES, truth.horizon
        cfg = ExperimentConfig(
            env="random",
            planner="knapsack",
            horizon=H,
            episodes=K,
            seed=seed,
            log_every=0,
            budgets=(budget,),
            epsilon=KNAPSACK_EPSILON,
        )
        result = run_experiment(cfg, truth=truth)
        assert not result.report.budget_violated
        assert np.all(result.report.cum_consumption <= budget + 1e-12)

        realized = sum(log.realized_reward for log in result.logs)
        aggreg = max(K * tightened - realized, KNAPSACK_EPSILON * budget)
        if budget > aggreg:
            regret = result.report.benchmark_reward - realized / K
            assert regret <= knapsack_reward_bound(aggreg, [budget], H) + 1e-9


class TestMarsRoverRegretTrend:
    """Regret on the default Mars rover under the unscaled bonus."""

    @pytest.mark.xfail(
        strict=True,
        raises=AssertionError,
        reason="with H = 30 the bonus stays above 1/H at every visit count reachable in "
        "2000 episodes, so the optimistic plan keeps exploring and ignores the crash budget",
    )
    def test_regret_reaches_targets_by_2000_episodes(self):
        """Test ConsReg <= 0.05 and RewReg <= 0.05 H at K = 2000, then the 10-seed decay."""
        cfg = ExperimentConfig(env="mars", episodes=2000, seed=7, log_every=0)
        report = run_experiment(cfg).report
        assert report.cons_reg[-1] <= 0.05
        assert report.rew_reg[-1] <= 0.05 * cfg.horizon

        early, late = [], []
        for seed in range(10):
            seeded = ExperimentConfig(env="mars", episodes=2000, seed=seed, log_every=0)
            report = run_experiment(seeded).report
            early.append(report.rew_reg[499])
            late.append(report.rew_reg[-1])
        assert np.mean(late) < 0.5 * np.mean(early)
