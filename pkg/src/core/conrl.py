"""
Online constrained RL loop, knapsack executor and exact regret accounting.

Each episode rebuilds the empirical model and the bonus from every step
observed so far, plans on the bonus-enhanced model, executes one episode on
the true cMDP and logs the exact expected reward and consumption of the
planned policy under the truth.
"""

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from src.core.cmdp import (
    AnyPolicy,
    Cmdp,
    MixturePolicy,
    Policy,
    draw_index,
    mixture_value,
)
from src.core.convex_planner import (
    ConvexConfig,
    ConvexSpec,
    build_convex_spec,
    convex_conplanner,
)
from src.core.diagnostics import measured_aggregate_regret
from src.core.estimation import (
    BonusConfig,
    BonusEnhancedModel,
    Counts,
    bonus_enhanced_model,
    compute_bonus,
    empirical_model,
    load_counts,
    record_step,
)
from src.core.planners import (
    STATUS_NULL_FALLBACK,
    STATUS_UNIFORM_FALLBACK,
    KnapsackConfig,
    LagrConfig,
    PlannerConfigurationError,
    PlannerInfeasibleError,
    PlannerSolution,
    basic_conplanner,
    knapsack_conplanner,
    lagr_conplanner,
    null_policy_solution,
    solution_from_policy,
)
from src.core.simplex import SolverOptions
from src.environments import EnvConfig, build_environment, sample_step
from src.utils.logger import get_logger

logger = get_logger(__name__)

PLANNERS = ("lp", "lagrangian", "convex", "knapsack")
AGGREG_MODES = ("bound", "empirical")
STATUS_GUARD_NULL = "guard_null"
VIOLATION_TOLERANCE = 1e-9

EpisodeHook = Callable[[int, Counts, BonusEnhancedModel, PlannerSolution], None]


class HarnessConfigurationError(Exception):
    """The experiment configuration is invalid or inconsistent with the environment."""

    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved settings of one experiment run."""

    env: str = "mars"
    map_path: Optional[str] = None
    planner: str = "lp"
    episodes: int = 100
    delta: float = 0.1
    bonus_scale: float = 1.0
    seed: int = 0
    eta: float = 0.2
    lagr_iters: int = 500
    budgets: Optional[Tuple[float, ...]] = None
    epsilon: Union[str, float] = "auto"
    bound_constant: float = 1.0
    aggreg_mode: str = "bound"
    slip: float = 0.1
    horizon: int = 30
    box_goal: bool = False
    lp_backend: str = "auto"
    simplex_max_variables: int = 1500
    convex: Dict = field(default_factory=dict)
    random: Dict = field(default_factory=dict)
    out: str = "out"
    log_every: int = 100
    resume_counts: Optional[str] = None
    runs: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise HarnessConfigurationError(f"planner must be one of {PLANNERS}, got {self.planner!r}")
        if int(self.episodes) < 1:
            raise HarnessConfigurationError(f"episodes must be >= 1, got {self.episodes}")
        if not 0.0 < float(self.delta) < 1.0:
            raise HarnessConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if float(self.bonus_scale) < 0.0:
            raise HarnessConfigurationError(f"bonus_scale must be nonnegative, got {self.bonus_scale}")
        if self.aggreg_mode not in AGGREG_MODES:
            raise HarnessConfigurationError(f"aggreg_mode must be one of {AGGREG_MODES}")
        if int(self.runs) < 1 or int(self.workers) < 1:
            raise HarnessConfigurationError("runs and workers must be >= 1")
        if self.budgets is not None:
            object.__setattr__(self, "budgets", tuple(float(b) for b in self.budgets))

    @property
    def knapsack(self) -> bool:
        return self.planner == "knapsack"

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            slip=self.slip,
            horizon=self.horizon,
            include_null_action=self.knapsack,
            box_goal=self.box_goal,
        )

    def bonus_config(self, truth: Cmdp) -> BonusConfig:
        return BonusConfig(
            self.delta,
            truth.num_states,
            truth.num_actions,
            truth.horizon,
            truth.num_resources,
            scale=float(self.bonus_scale),
        )

    def solver(self) -> SolverOptions:
        return SolverOptions(backend=self.lp_backend, simplex_max_variables=self.simplex_max_variables)

    def convex_config(self) -> ConvexConfig:
        keys = ("outer_iterations", "inner_iterations", "dual_step", "feasibility_tolerance", "polish")
        return ConvexConfig(**{k: self.convex[k] for k in keys if k in self.convex})

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["budgets"] = list(self.budgets) if self.budgets is not None else None
        return data


@dataclass(eq=False)
class EpisodeLog:
    episode: int
    exp_reward: float
    exp_consumption: np.ndarray
    realized_reward: float
    realized_consumption: np.ndarray
    planner_status: str
    wall_time: float = 0.0


@dataclass(eq=False)
class RegretReport:
    """
    Per-episode regret curves (index k - 1 holds the value after episode k).

    ``cons_reg`` is the maximum over resources of the averaged excess and
    may be negative; it is 0 when there are no resources.
    """

    benchmark_reward: float
    benchmark_consumption: np.ndarray
    budgets: np.ndarray
    rew_reg: np.ndarray
    cons_reg: np.ndarray
    cum_consumption: np.ndarray
    convex_rew_reg: Optional[np.ndarray] = None
    convex_cons_reg: Optional[np.ndarray] = None
    budget_violated: bool = False
    info: Dict = field(default_factory=dict)


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    logs: List[EpisodeLog]
    report: RegretReport
    counts: Counts


def _policy_expectations(truth: Cmdp, policy: AnyPolicy) -> Tuple[float, np.ndarray]:
    H, s0 = truth.horizon, truth.initial_state
    reward = mixture_value(truth.transitions, truth.rewards, policy, H, s0)
    consumption = np.array(
        [
            mixture_value(truth.transitions, truth.consumption[:, :, i], policy, H, s0)
            for i in range(truth.num_resources)
        ]
    )
    return reward, consumption


def solve_true_benchmark(
    truth: Cmdp,
    budgets: Optional[np.ndarray] = None,
    solver: SolverOptions = SolverOptions(),
    convex_spec: Optional[ConvexSpec] = None,
    convex_cfg: ConvexConfig = ConvexConfig(),
) -> PlannerSolution:
    """
    Best feasible policy of the true cMDP (zero bonus).

    The occupancy LP by default; the convex planner when ``convex_spec`` is
    given.

    Raises:
        HarnessConfigurationError: if the budgets admit no policy
    """
    model = BonusEnhancedModel.exact(truth.transitions, truth.rewards, truth.consumption)
    xi = truth.budgets if budgets is None else np.asarray(budgets, dtype=float)
    try:
        if convex_spec is not None:
            solution = convex_conplanner(model, convex_spec, truth.initial_state, truth.horizon, convex_cfg)
        else:
            solution = basic_conplanner(model, xi, truth.initial_state, truth.horizon, solver)
    except PlannerInfeasibleError as e:
        raise HarnessConfigurationError(f"budgets infeasible for the environment: {e}") from e
    logger.info(
        f"Benchmark: reward={solution.predicted_reward:.6f}, "
        f"consumption={np.round(solution.predicted_consumption, 6).tolist()}"
    )
    return solution


def run_episode(
    truth: Cmdp, policy: Policy, rng: np.random.Generator, counts: Counts
) -> Tuple[float, np.ndarray]:
    """Execute one H-step episode on the truth, recording every step into ``counts``."""
    s = truth.initial_state
    reward = 0.0
    consumption = np.zeros(truth.num_resources)
    for h in range(1, truth.horizon + 1):
        a = draw_index(policy.probabilities(h, s), rng.random())
        step = sample_step(truth, s, a, rng)
        record_step(counts, s, a, step.reward, step.consumption, step.next_state)
        reward += step.reward
        consumption += step.consumption
        s = step.next_state
    counts.end_episode()
    return reward, consumption


def compute_regret(
    logs: List[EpisodeLog],
    benchmark_reward: float,
    benchmark_consumption: np.ndarray,
    budgets: np.ndarray,
    convex_spec: Optional[ConvexSpec] = None,
) -> RegretReport:
    """
    Regret curves from the logged exact expectations.

    ``RewReg(k) = benchmark - mean_{t<=k} E[reward_t]`` and
    ``ConsReg(k) = max_i (mean_{t<=k} E[cons_{t,i}] - budget_i)``.
    """
    budgets = np.asarray(budgets, dtype=float).reshape(-1)
    d = budgets.size
    K = len(logs)
    episodes = np.arange(1, K + 1, dtype=float)
    rewards = np.array([log.exp_reward for log in logs], dtype=float)
    consumption = np.array([log.exp_consumption for log in logs], dtype=float).reshape(K, d)
    realized = np.array([log.realized_consumption for log in logs], dtype=float).reshape(K, d)

    avg_reward = np.cumsum(rewards) / episodes if K else np.zeros(0)
    avg_consumption = np.cumsum(consumption, axis=0) / episodes[:, None] if K else np.zeros((0, d))
    rew_reg = benchmark_reward - avg_reward
    cons_reg = np.max(avg_consumption - budgets, axis=1) if d else np.zeros(K)

    report = RegretReport(
        benchmark_reward=float(benchmark_reward),
        benchmark_consumption=np.asarray(benchmark_consumption, dtype=float),
        budgets=budgets,
        rew_reg=rew_reg,
        cons_reg=cons_reg,
        cum_consumption=np.cumsum(realized, axis=0),
    )
    if convex_spec is not None:
        f_star = convex_spec.f(benchmark_reward)
        report.convex_rew_reg = np.array([f_star - convex_spec.f(t) for t in avg_reward])
        if convex_spec.g is not None:
            report.convex_cons_reg = np.array([convex_spec.g(v) for v in avg_consumption])
        else:
            report.convex_cons_reg = np.zeros(K)
    return report


def _initial_counts(cfg: ExperimentConfig, truth: Cmdp) -> Counts:
    if not cfg.resume_counts:
        return Counts.empty(truth.num_states, truth.num_actions, truth.num_resources)
    counts = load_counts(cfg.resume_counts)
    expected = (truth.num_states, truth.num_actions, truth.num_resources)
    found = (counts.num_states, counts.num_actions, counts.num_resources)
    if found != expected:
        raise HarnessConfigurationError(
            f"counts snapshot sizes {found} do not match the environment {expected}"
        )
    logger.info(f"Resuming from {cfg.resume_counts} after {counts.episodes_seen} episodes")
    return counts


def convex_spec_for(cfg: ExperimentConfig, truth: Cmdp) -> ConvexSpec:
    """Convex objective/constraint from the ``convex`` config section; budgets default to the truth's."""
    section = cfg.convex
    default_constraint = "budget" if truth.num_resources else "none"
    try:
        return build_convex_spec(
            objective=section.get("objective", "linear"),
            constraint=section.get("constraint", default_constraint),
            budgets=section.get("budgets", truth.budgets.tolist()),
            cap=section.get("cap"),
            target=section.get("target"),
            radius=float(section.get("radius", 0.0)),
        )
    except PlannerConfigurationError as e:
        raise HarnessConfigurationError(str(e)) from e


def _plan(
    cfg: ExperimentConfig,
    truth: Cmdp,
    model: BonusEnhancedModel,
    convex_spec: Optional[ConvexSpec],
) -> PlannerSolution:
    s0, H = truth.initial_state, truth.horizon
    if cfg.planner == "lagrangian":
        return lagr_conplanner(model, truth.budgets, s0, H, LagrConfig(cfg.eta, cfg.lagr_iters))
    if cfg.planner == "convex":
        return convex_conplanner(model, convex_spec, s0, H, cfg.convex_config())
    return basic_conplanner(model, truth.budgets, s0, H, cfg.solver())


def _progress(k: int, K: int, report_every: int, logs: List[EpisodeLog]) -> None:
    if report_every and (k % report_every == 0 or k == K):
        recent = logs[-report_every:]
        mean_reward = sum(log.exp_reward for log in recent) / len(recent)
        logger.info(f"Episode {k}/{K}: mean expected reward {mean_reward:.4f} over last {len(recent)}")


def run_conrl(
    cfg: ExperimentConfig,
    truth: Cmdp,
    on_episode: Optional[EpisodeHook] = None,
    counts: Optional[Counts] = None,
) -> Tuple[List[EpisodeLog], RegretReport]:
    """
    Soft-constraint online loop.

    Planner infeasibility is logged and the episode runs the uniform policy.

    Returns:
        (per-episode logs, regret report against the true benchmark)
    """
    if cfg.planner == "knapsack":
        raise HarnessConfigurationError("knapsack runs go through run_knapsack")
    rng = np.random.default_rng(cfg.seed)
    counts = counts if counts is not None else _initial_counts(cfg, truth)
    S, A, H, d = truth.num_states, truth.num_actions, truth.horizon, truth.num_resources
    bonus_cfg = cfg.bonus_config(truth)
    convex_spec = convex_spec_for(cfg, truth) if cfg.planner == "convex" else None
    benchmark = solve_true_benchmark(
        truth, solver=cfg.solver(), convex_spec=convex_spec, convex_cfg=cfg.convex_config()
    )

    logger.info(
        f"Starting ConRL run: planner={cfg.planner}, K={cfg.episodes}, S={S}, A={A}, H={H}, "
        f"d={d}, delta={cfg.delta}, seed={cfg.seed}"
    )
    logs: List[EpisodeLog] = []
    for episode in range(1, cfg.episodes + 1):
        started = time.perf_counter()
        k = counts.episodes_seen + 1
        model = bonus_enhanced_model(empirical_model(counts), compute_bonus(counts, k, bonus_cfg))
        try:
            solution = _plan(cfg, truth, model, convex_spec)
        except PlannerInfeasibleError as e:
            logger.warning(f"Episode {episode}: planner infeasible ({e}); playing the uniform policy")
            solution = solution_from_policy(
                Policy.uniform(H, S, A),
                model.p,
                model.r_plus,
                model.c_minus,
                truth.initial_state,
                H,
                status=STATUS_UNIFORM_FALLBACK,
            )
        logs.append(_execute(truth, solution, rng, counts, episode, started))
        if on_episode is not None:
            on_episode(k, counts, model, solution)
        _progress(episode, cfg.episodes, cfg.log_every, logs)

    report = compute_regret(
        logs,
        benchmark.predicted_reward,
        benchmark.predicted_consumption,
        truth.budgets,
        convex_spec=convex_spec,
    )
    logger.info(
        f"Finished ConRL run: RewReg={report.rew_reg[-1]:.6f}, ConsReg={report.cons_reg[-1]:.6f}"
    )
    return logs, report


def _execute(
    truth: Cmdp,
    solution: PlannerSolution,
    rng: np.random.Generator,
    counts: Counts,
    episode: int,
    started: float,
) -> EpisodeLog:
    policy = solution.policy
    executed = policy.sample(rng) if isinstance(policy, MixturePolicy) else policy
    realized_reward, realized_consumption = run_episode(truth, executed, rng, counts)
    exp_reward, exp_consumption = _policy_expectations(truth, policy)
    return EpisodeLog(
        episode=episode,
        exp_reward=exp_reward,
        exp_consumption=exp_consumption,
        realized_reward=realized_reward,
        realized_consumption=realized_consumption,
        planner_status=solution.status,
        wall_time=time.perf_counter() - started,
    )


def knapsack_budgets(cfg: ExperimentConfig, truth: Cmdp) -> np.ndarray:
    """Cumulative budgets: configured, or K times the environment's per-episode budgets."""
    if cfg.budgets is not None:
        budgets = np.asarray(cfg.budgets, dtype=float)
    else:
        budgets = truth.budgets * cfg.episodes
    if budgets.size != truth.num_resources:
        raise HarnessConfigurationError(
            f"{budgets.size} knapsack budgets for {truth.num_resources} resources"
        )
    return budgets


def run_knapsack(
    cfg: ExperimentConfig,
    truth: Cmdp,
    null_action: Optional[int] = None,
    on_episode: Optional[EpisodeHook] = None,
    aggreg: Optional[float] = None,
    counts: Optional[Counts] = None,
) -> Tuple[List[EpisodeLog], RegretReport, bool]:
    """
    Hard-constraint loop with cumulative budgets B over K episodes.

    Before each episode, once any realized cumulative consumption plus H
    exceeds its budget, the null policy is played for every remaining
    episode. Regret is measured against the benchmark with per-episode
    budgets B / K.

    Returns:
        (logs, report, violation flag)
    """
    null_action = truth.num_actions - 1 if null_action is None else null_action
    rng = np.random.default_rng(cfg.seed)
    counts = counts if counts is not None else _initial_counts(cfg, truth)
    S, A, H, d = truth.num_states, truth.num_actions, truth.horizon, truth.num_resources
    K = cfg.episodes
    budgets = knapsack_budgets(cfg, truth)
    bonus_cfg = cfg.bonus_config(truth)

    knapsack_cfg = KnapsackConfig(
        budgets=budgets,
        total_episodes=K,
        epsilon=cfg.epsilon,
        bound_constant=cfg.bound_constant,
        delta=cfg.delta,
        aggreg=aggreg,
    )
    epsilon = knapsack_cfg.resolve_epsilon(S, A, H)
    if cfg.epsilon == "auto":
        logger.warning(
            f"Auto epsilon resolved to {epsilon:.6f} "
            f"({'measured' if aggreg is not None else 'bound'} aggregate regret)"
        )
    knapsack_cfg = replace(knapsack_cfg, epsilon=epsilon)

    per_episode = budgets / K
    benchmark = solve_true_benchmark(truth, budgets=per_episode, solver=cfg.solver())
    logger.info(f"Starting knapsack run: K={K}, B={budgets.tolist()}, epsilon={epsilon:.6f}")

    logs: List[EpisodeLog] = []
    cumulative = np.zeros(d)
    guard_active = False
    violated = False
    for episode in range(1, K + 1):
        started = time.perf_counter()
        k = counts.episodes_seen + 1
        model = bonus_enhanced_model(empirical_model(counts), compute_bonus(counts, k, bonus_cfg))
        if not guard_active and np.any(cumulative + H > budgets):
            guard_active = True
            logger.warning(
                f"Episode {episode}: cumulative consumption {cumulative.tolist()} + H exceeds "
                f"budgets {budgets.tolist()}; playing the null policy from now on"
            )
        if guard_active:
            solution = null_policy_solution(model, null_action, truth.initial_state, H)
            solution.status = STATUS_GUARD_NULL
        else:
            solution = knapsack_conplanner(
                model, knapsack_cfg, null_action, truth.initial_state, H, cfg.solver()
            )
            if solution.status == STATUS_NULL_FALLBACK:
                logger.warning(f"Episode {episode}: tightened program infeasible, null policy")
        log = _execute(truth, solution, rng, counts, episode, started)
        logs.append(log)
        cumulative = cumulative + log.realized_consumption
        if np.any(cumulative > budgets + VIOLATION_TOLERANCE):
            violated = True
        if on_episode is not None:
            on_episode(k, counts, model, solution)
        _progress(episode, K, cfg.log_every, logs)

    report = compute_regret(logs, benchmark.predicted_reward, benchmark.predicted_consumption, per_episode)
    report.budget_violated = violated
    guard_episode = next(
        (log.episode for log in logs if log.planner_status == STATUS_GUARD_NULL), None
    )
    report.info.update({"epsilon": epsilon, "guard_episode": guard_episode})
    logger.info(f"Finished knapsack run: RewReg={report.rew_reg[-1]:.6f}, violated={violated}")
    return logs, report, violated


def run_experiment(
    cfg: ExperimentConfig,
    truth: Optional[Cmdp] = None,
    on_episode: Optional[EpisodeHook] = None,
) -> ExperimentResult:
    """Build the environment (unless given) and run the configured loop."""
    if truth is None:
        truth = build_environment(cfg.env, cfg.env_config(), cfg.map_path, cfg.random)
    if cfg.budgets is not None and not cfg.knapsack:
        if len(cfg.budgets) != truth.num_resources:
            raise HarnessConfigurationError(
                f"{len(cfg.budgets)} budgets for {truth.num_resources} resources"
            )
        truth = truth.with_budgets(np.asarray(cfg.budgets))
    counts = _initial_counts(cfg, truth)

    if not cfg.knapsack:
        logs, report = run_conrl(cfg, truth, on_episode=on_episode, counts=counts)
        return ExperimentResult(config=cfg, logs=logs, report=report, counts=counts)

    aggreg = None
    if cfg.epsilon == "auto" and cfg.aggreg_mode == "empirical":
        calibration = replace(cfg, planner="lp", resume_counts=None)
        soft_truth = truth.with_budgets(knapsack_budgets(cfg, truth) / cfg.episodes)
        _, soft_report = run_conrl(calibration, soft_truth)
        aggreg = measured_aggregate_regret(soft_report)
        logger.info(f"Calibration run measured aggregate regret {aggreg:.6f}")
    logs, report, _ = run_knapsack(cfg, truth, on_episode=on_episode, aggreg=aggreg, counts=counts)
    report.info["aggreg_mode"] = cfg.aggreg_mode
    if aggreg is not None:
        report.info["aggreg"] = aggreg
    return ExperimentResult(config=cfg, logs=logs, report=report, counts=counts)
