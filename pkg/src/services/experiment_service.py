"""
Shared service layer for experiments.
Validates settings, runs the engine and converts failures into response
dictionaries with stable error codes for every client.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from src.core.cmdp import Cmdp, CmdpError, Policy, mixture_value
from src.core.conrl import (
    AGGREG_MODES,
    PLANNERS,
    ExperimentConfig,
    ExperimentResult,
    HarnessConfigurationError,
    convex_spec_for,
    run_experiment,
    solve_true_benchmark,
)
from src.core.convex_planner import convex_conplanner
from src.core.estimation import (
    BonusEnhancedModel,
    SnapshotFormatError,
    empirical_model,
    load_counts,
)
from src.core.oracles import OracleSizeError, enumerate_policies, exact_occupancy_optimum
from src.core.planners import (
    LagrConfig,
    PlannerConfigurationError,
    PlannerInfeasibleError,
    basic_conplanner,
    lagr_conplanner,
)
from src.core.simplex import BACKENDS, OPTIMAL, SolverError
from src.environments import ENVIRONMENTS, MapParseError, build_environment
from src.utils.config import ConfigFileError, load_config_file, merge_settings, parse_budgets
from src.utils.logger import get_logger
from src.utils.reports import ReportError, write_reports

logger = get_logger(__name__)

DEFAULT_ETA = {"mars": 0.2, "box": 0.01, "random": 0.2}
SERVICE_KEYS = ("log_level",)

CONFIG_ERRORS = (
    ConfigFileError,
    HarnessConfigurationError,
    PlannerConfigurationError,
    CmdpError,
    MapParseError,
    SnapshotFormatError,
    OracleSizeError,
)
SOLVER_ERRORS = (SolverError, PlannerInfeasibleError)


class ValidationError(Exception):
    """Custom exception for validation errors."""

    pass


def _failure(e: Exception, operation: str) -> Dict[str, Any]:
    if isinstance(e, ValidationError):
        logger.warning(f"Validation error in {operation}: {e}")
        return {"success": False, "error": str(e), "error_code": "VALIDATION_ERROR"}
    if isinstance(e, CONFIG_ERRORS):
        logger.error(f"Configuration error in {operation}: {e}")
        return {"success": False, "error": str(e), "error_code": "CONFIG_ERROR"}
    if isinstance(e, SOLVER_ERRORS):
        logger.error(f"Solver error in {operation}: {e}")
        return {"success": False, "error": str(e), "error_code": "SOLVER_ERROR"}
    if isinstance(e, (ReportError, OSError)):
        logger.error(f"I/O error in {operation}: {e}")
        return {"success": False, "error": str(e), "error_code": "IO_ERROR"}
    logger.error(f"Error in {operation}: {e}", exc_info=True)
    return {"success": False, "error": f"Internal error: {str(e)}", "error_code": "INTERNAL_ERROR"}


def run_single(cfg: ExperimentConfig, out_dir: str) -> Dict[str, Any]:
    """Run one experiment and write its reports; module-level so worker processes can pickle it."""
    started = time.perf_counter()
    result = run_experiment(cfg)
    paths = write_reports(result.logs, result.report, out_dir, cfg.to_dict(), result.counts)
    return summarize(result, paths, time.perf_counter() - started)


def summarize(result: ExperimentResult, paths: Dict[str, Path], seconds: float) -> Dict[str, Any]:
    report = result.report
    summary = {
        "seed": result.config.seed,
        "episodes": len(result.logs),
        "benchmark_reward": float(report.benchmark_reward),
        "final_rew_reg": float(report.rew_reg[-1]),
        "final_cons_reg": float(report.cons_reg[-1]),
        "budget_violated": bool(report.budget_violated),
        "seconds": round(seconds, 3),
        "outputs": {kind: str(path) for kind, path in paths.items()},
    }
    if report.convex_rew_reg is not None:
        summary["final_convex_rew_reg"] = float(report.convex_rew_reg[-1])
        summary["final_convex_cons_reg"] = float(report.convex_cons_reg[-1])
    return summary


def run_seeds(seed: int, runs: int) -> List[int]:
    """Independent per-run seeds spawned from one root seed."""
    children = np.random.SeedSequence(seed).spawn(runs)
    return [int(child.generate_state(1)[0]) for child in children]


class ExperimentService:
    """
    Unified service for experiments.
    Provides settings validation, error handling, and consistent response formatting.
    """

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize the experiment service.

        Args:
            config_path: Optional configuration file (YAML or ``key = value`` lines)
        """
        self.config_path = config_path
        self.file_settings: Dict[str, Any] = {}
        if config_path:
            self.file_settings = load_config_file(config_path)

    @property
    def log_level(self) -> Optional[str]:
        return self.file_settings.get("log_level")

    @staticmethod
    def _choice(name: str, value: Any, allowed) -> str:
        text = str(value).strip().lower()
        if text not in allowed:
            raise ValidationError(f"Invalid {name}: {value}. Must be one of {', '.join(allowed)}")
        return text

    @staticmethod
    def _number(name: str, value: Any, kind=float, low=None, high=None, open_low=False, open_high=False):
        try:
            if kind is int and isinstance(value, float) and not value.is_integer():
                raise ValueError
            number = kind(value)
        except (ValueError, TypeError):
            raise ValidationError(f"Invalid {name} value: {value}. Must be {'an integer' if kind is int else 'a number'}.")
        if low is not None and (number <= low if open_low else number < low):
            raise ValidationError(f"{name} must be {'>' if open_low else '>='} {low}, got {number}")
        if high is not None and (number >= high if open_high else number > high):
            raise ValidationError(f"{name} must be {'<' if open_high else '<='} {high}, got {number}")
        return number

    @staticmethod
    def validate_budgets(value: Any):
        try:
            budgets = parse_budgets(value)
        except (ValueError, TypeError):
            raise ValidationError(f"Invalid budget value: {value}. Expected numbers like 0.2,0.3")
        if budgets is not None and any(b < 0 for b in budgets):
            raise ValidationError("Budgets must be nonnegative")
        return budgets

    @staticmethod
    def validate_epsilon(value: Any):
        if value is None or str(value).strip().lower() == "auto":
            return "auto"
        return ExperimentService._number("epsilon", value, float, 0.0, 1.0)

    def resolve_config(self, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        """
        Merge defaults < config file < overrides and validate the result.

        Raises:
            ValidationError: if a setting is unknown or out of range
        """
        settings = merge_settings(self.file_settings, overrides)
        for key in SERVICE_KEYS:
            settings.pop(key, None)
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = sorted(set(settings) - known)
        if unknown:
            raise ValidationError(f"Unknown settings: {', '.join(unknown)}")

        num = self._number
        values: Dict[str, Any] = dict(settings)
        values["env"] = self._choice("env", settings.get("env", "mars"), ENVIRONMENTS)
        values["planner"] = self._choice("planner", settings.get("planner", "lp"), PLANNERS)
        values["lp_backend"] = self._choice("lp_backend", settings.get("lp_backend", "auto"), BACKENDS)
        values["aggreg_mode"] = self._choice(
            "aggreg_mode", settings.get("aggreg_mode", "bound"), AGGREG_MODES
        )
        values["eta"] = num("eta", settings.get("eta", DEFAULT_ETA[values["env"]]), float, 0.0, open_low=True)
        values["budgets"] = self.validate_budgets(settings.get("budgets"))
        values["epsilon"] = self.validate_epsilon(settings.get("epsilon"))
        checks = {
            "episodes": (int, 1, None, False, False),
            "delta": (float, 0.0, 1.0, True, True),
            "bonus_scale": (float, 0.0, None, False, False),
            "seed": (int, 0, None, False, False),
            "lagr_iters": (int, 1, None, False, False),
            "bound_constant": (float, 0.0, None, True, False),
            "slip": (float, 0.0, 1.0, False, False),
            "horizon": (int, 1, None, False, False),
            "simplex_max_variables": (int, 1, None, False, False),
            "log_every": (int, 0, None, False, False),
            "runs": (int, 1, None, False, False),
            "workers": (int, 1, None, False, False),
        }
        for key, (kind, low, high, open_low, open_high) in checks.items():
            if key in settings:
                values[key] = num(key, settings[key], kind, low, high, open_low, open_high)
        for section in ("convex", "random"):
            if section in settings and not isinstance(settings[section], dict):
                raise ValidationError(f"'{section}' must be a mapping")
        if "box_goal" in settings:
            flag = settings["box_goal"]
            if isinstance(flag, str):
                flag = flag.strip().lower() in ("1", "true", "yes", "on")
            values["box_goal"] = bool(flag)
        try:
            return ExperimentConfig(**values)
        except HarnessConfigurationError as e:
            raise ValidationError(str(e)) from e

    def truth_for(self, cfg: ExperimentConfig) -> Cmdp:
        truth = build_environment(cfg.env, cfg.env_config(), cfg.map_path, cfg.random)
        if cfg.budgets is not None and not cfg.knapsack:
            truth = truth.with_budgets(cfg.budgets)
        return truth

    def run(self, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Run one or several seeded experiments and write their reports.

        Returns:
            Dictionary with success status and one summary per run or error

        Example:
            {
                'success': True,
                'data': {'runs': [{'seed': 7, 'final_rew_reg': 0.03, ...}]}
            }
        """
        try:
            cfg = self.resolve_config(overrides)
            logger.info(
                f"Running {cfg.runs} experiment(s): env={cfg.env}, planner={cfg.planner}, "
                f"episodes={cfg.episodes}, seed={cfg.seed}"
            )
            if cfg.runs == 1:
                summaries = [run_single(cfg, cfg.out)]
            else:
                jobs = [
                    (replace(cfg, seed=seed, runs=1, workers=1), str(Path(cfg.out) / f"run_{i}"))
                    for i, seed in enumerate(run_seeds(cfg.seed, cfg.runs))
                ]
                if cfg.workers > 1:
                    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                        summaries = list(pool.map(run_single, *zip(*jobs)))
                else:
                    summaries = [run_single(job_cfg, out) for job_cfg, out in jobs]
            return {"success": True, "data": {"runs": summaries}}
        except Exception as e:
            return _failure(e, "run")

    def plan(self, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Solve the true benchmark of the configured environment."""
        try:
            cfg = self.resolve_config(overrides)
            truth = self.truth_for(cfg)
            spec = convex_spec_for(cfg, truth) if cfg.planner == "convex" else None
            budgets = None
            if cfg.knapsack and cfg.budgets is not None:
                budgets = np.asarray(cfg.budgets) / cfg.episodes
            solution = solve_true_benchmark(
                truth, budgets=budgets, solver=cfg.solver(), convex_spec=spec, convex_cfg=cfg.convex_config()
            )
            return {
                "success": True,
                "data": {
                    "env": cfg.env,
                    "num_states": truth.num_states,
                    "num_actions": truth.num_actions,
                    "horizon": truth.horizon,
                    "budgets": truth.budgets.tolist() if budgets is None else budgets.tolist(),
                    "reward": solution.predicted_reward,
                    "consumption": solution.predicted_consumption.tolist(),
                    "status": solution.status,
                },
            }
        except Exception as e:
            return _failure(e, "plan")

    def evaluate(self, overrides: Optional[Dict[str, Any]] = None, counts_path: Optional[str] = None) -> Dict[str, Any]:
        """
        Evaluate on the truth the certainty-equivalent constrained plan from a
        counts snapshot, or the uniform policy when no snapshot is given.
        """
        try:
            cfg = self.resolve_config(overrides)
            truth = self.truth_for(cfg)
            H, s0 = truth.horizon, truth.initial_state
            if counts_path:
                counts = load_counts(counts_path)
                emp = empirical_model(counts)
                model = BonusEnhancedModel.exact(emp.p_hat, emp.r_hat, emp.c_hat)
                if model.p.shape != truth.transitions.shape:
                    raise HarnessConfigurationError(
                        f"snapshot sizes {model.p.shape} do not match the environment {truth.transitions.shape}"
                    )
                policy = basic_conplanner(model, truth.budgets, s0, H, cfg.solver()).policy
                source = "counts"
            else:
                policy = Policy.uniform(H, truth.num_states, truth.num_actions)
                source = "uniform"
            consumption = [
                mixture_value(truth.transitions, truth.consumption[:, :, i], policy, H, s0)
                for i in range(truth.num_resources)
            ]
            return {
                "success": True,
                "data": {
                    "policy": source,
                    "reward": mixture_value(truth.transitions, truth.rewards, policy, H, s0),
                    "consumption": consumption,
                    "budgets": truth.budgets.tolist(),
                },
            }
        except Exception as e:
            return _failure(e, "evaluate")

    def bench_oracle(self, instance_path: str) -> Dict[str, Any]:
        """
        Exact constants for a tiny instance described in YAML
        (``transitions``, ``rewards``, ``consumption``, ``budgets``, ``horizon``,
        optional ``initial_state``).
        """
        try:
            truth = load_instance(instance_path)
            lp = exact_occupancy_optimum(truth)
            data: Dict[str, Any] = {"lp_status": lp.status}
            if lp.status == OPTIMAL:
                data["lp_optimum"] = str(lp.value)
                data["lp_optimum_float"] = float(lp.value)
            try:
                enumerated = enumerate_policies(truth)
            except OracleSizeError as e:
                logger.warning(f"Skipping policy enumeration: {e}")
                enumerated = []
            budgets = [Fraction(b) for b in truth.budgets.tolist()]
            feasible = [
                e for e in enumerated if all(c <= b for c, b in zip(e.consumption, budgets))
            ]
            if feasible:
                best = max(feasible, key=lambda e: e.reward)
                data["best_deterministic"] = str(best.reward)
                data["best_deterministic_float"] = float(best.reward)
            return {"success": True, "data": data}
        except Exception as e:
            return _failure(e, "bench_oracle")

    def bench_planners(self, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Compare the LP, Lagrangian and convex planners on the true model."""
        try:
            cfg = self.resolve_config(overrides)
            truth = self.truth_for(cfg)
            model = BonusEnhancedModel.exact(truth.transitions, truth.rewards, truth.consumption)
            H, s0 = truth.horizon, truth.initial_state
            runners = {
                "lp": lambda: basic_conplanner(model, truth.budgets, s0, H, cfg.solver()),
                "lagrangian": lambda: lagr_conplanner(
                    model, truth.budgets, s0, H, LagrConfig(cfg.eta, cfg.lagr_iters)
                ),
                "convex": lambda: convex_conplanner(
                    model, convex_spec_for(cfg, truth), s0, H, cfg.convex_config()
                ),
            }
            rows = []
            for name, solve in runners.items():
                started = time.perf_counter()
                solution = solve()
                elapsed = time.perf_counter() - started
                rows.append(
                    {
                        "planner": name,
                        "reward": float(solution.predicted_reward),
                        "consumption": solution.predicted_consumption.tolist(),
                        "status": solution.status,
                        "seconds": round(elapsed, 3),
                    }
                )
                logger.info(f"{name}: reward={solution.predicted_reward:.6f} in {elapsed:.2f}s")
            return {"success": True, "data": {"budgets": truth.budgets.tolist(), "planners": rows}}
        except Exception as e:
            return _failure(e, "bench_planners")


def load_instance(path: str) -> Cmdp:
    """
    Read a YAML instance description into a Cmdp.

    Raises:
        ConfigFileError: if the file is not a mapping with the required tables
    """
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigFileError(f"invalid YAML: {e}", path) from e
    required = ("transitions", "rewards", "consumption", "budgets", "horizon")
    if not isinstance(data, dict) or any(key not in data for key in required):
        raise ConfigFileError(f"instance needs keys {', '.join(required)}", path)
    return Cmdp(
        transitions=np.asarray(data["transitions"], dtype=float),
        rewards=np.asarray(data["rewards"], dtype=float),
        consumption=np.asarray(data["consumption"], dtype=float),
        budgets=np.asarray(data["budgets"], dtype=float),
        horizon=int(data["horizon"]),
        initial_state=int(data.get("initial_state", 0)),
    )
