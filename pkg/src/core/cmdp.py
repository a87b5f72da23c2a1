"""Tabular constrained MDPs, finite-horizon dynamic programming and occupancy measures.

Array conventions used throughout the package:

- transitions ``p``: shape (S, A, S), ``p[s, a, s']``
- objective tables ``m`` (rewards, one consumption resource): shape (S, A)
- consumption ``c``: shape (S, A, d)
- policies: shape (H, S, A), ``pi[h - 1, s, a]`` is the probability of ``a``
  in state ``s`` at stage ``h``
- Q and occupancy tables: shape (S, A, H), stage ``h`` stored at index ``h - 1``
- V: shape (S, H + 1); column ``H`` is the terminal layer and is identically 0
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

ROW_TOLERANCE = 1e-12
FLOW_TOLERANCE = 1e-10
ARRIVAL_TOLERANCE = 1e-12


class CmdpError(Exception):
    """Base exception for constrained-MDP structures."""

    pass


class StructuralError(CmdpError):
    """Tables with mismatching dimensions were combined."""

    pass


class CmdpValidationError(CmdpError):
    """A table violates a probability or range invariant."""

    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


def _check_kernel(p: np.ndarray, what: str = "transition") -> None:
    if p.ndim != 3 or p.shape[0] != p.shape[2]:
        raise StructuralError(f"{what} table must have shape (S, A, S), got {p.shape}")
    if np.any(p < 0):
        raise CmdpValidationError(f"{what} table has negative entries")
    sums = p.sum(axis=2)
    if np.any(np.abs(sums - 1.0) > ROW_TOLERANCE):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise CmdpValidationError(f"{what} rows must sum to 1 (max deviation {worst:.3e})")


def _arrival_table(p: np.ndarray, means: np.ndarray, payout, what: str) -> Optional[np.ndarray]:
    """
    Validated payout table of the states entered, shape ``(S,) + means.shape[2:]``.

    Wherever some successor pays, the mean of the pair must be its expected payout.
    """
    if payout is None:
        return None
    payout = _frozen(payout)
    expected_shape = (p.shape[0],) + means.shape[2:]
    if payout.shape != expected_shape:
        raise StructuralError(f"arrival {what} must have shape {expected_shape}, got {payout.shape}")
    if np.any(payout < 0) or np.any(payout > 1):
        raise CmdpValidationError(f"arrival {what} must lie in [0, 1]")
    expected = np.tensordot(p, payout, axes=([2], [0]))
    paying = expected > 0
    if np.any(np.abs(means[paying] - expected[paying]) > ARRIVAL_TOLERANCE):
        raise CmdpValidationError(f"{what} of pairs entering paying states must equal their expected payout")
    return payout


@dataclass(frozen=True)
class ObjectiveSelector:
    """Selects the reward or one consumption resource by index."""

    kind: str = "reward"
    index: int = 0

    def __post_init__(self):
        if self.kind not in ("reward", "resource"):
            raise CmdpValidationError(f"Unknown objective kind: {self.kind}")
        if self.kind == "resource" and self.index < 0:
            raise CmdpValidationError(f"Resource index must be nonnegative, got {self.index}")

    @classmethod
    def reward(cls) -> "ObjectiveSelector":
        return cls("reward", 0)

    @classmethod
    def resource(cls, index: int) -> "ObjectiveSelector":
        return cls("resource", index)


@dataclass(frozen=True, eq=False)
class Cmdp:
    """
    A finite-horizon tabular constrained MDP with a fixed initial state.

    ``rewards`` and ``consumption`` hold the means of each (s, a). The
    optional arrival tables, shapes (S,) and (S, d), are paid on the step
    that enters a state: a pair that can enter a paying state observes the
    payout of the state it actually enters, and its mean is the expected
    payout.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    consumption: np.ndarray
    budgets: np.ndarray
    horizon: int
    initial_state: int = 0
    arrival_rewards: Optional[np.ndarray] = None
    arrival_consumption: Optional[np.ndarray] = None

    def __post_init__(self):
        p = _frozen(self.transitions)
        r = _frozen(self.rewards)
        c = _frozen(self.consumption)
        xi = _frozen(np.atleast_1d(self.budgets)) if np.size(self.budgets) else _frozen(np.zeros(0))
        _check_kernel(p)
        S, A = p.shape[0], p.shape[1]
        if r.shape != (S, A):
            raise StructuralError(f"rewards must have shape {(S, A)}, got {r.shape}")
        if c.ndim == 2 and c.shape == (S, A) and xi.size == 1:
            c = _frozen(c[:, :, None])
        if c.ndim != 3 or c.shape[:2] != (S, A):
            raise StructuralError(f"consumption must have shape (S, A, d), got {c.shape}")
        if c.shape[2] != xi.size:
            raise StructuralError(
                f"consumption has {c.shape[2]} resources but {xi.size} budgets were given"
            )
        if np.any(r < 0) or np.any(r > 1):
            raise CmdpValidationError("rewards must lie in [0, 1]")
        if np.any(c < 0) or np.any(c > 1):
            raise CmdpValidationError("consumption must lie in [0, 1]")
        if np.any(xi < 0):
            raise CmdpValidationError("budgets must be nonnegative")
        if int(self.horizon) < 1:
            raise CmdpValidationError(f"horizon must be positive, got {self.horizon}")
        if not 0 <= int(self.initial_state) < S:
            raise CmdpValidationError(
                f"initial state {self.initial_state} out of range for {S} states"
            )
        arrival_r = _arrival_table(p, r, self.arrival_rewards, "rewards")
        arrival_c = _arrival_table(p, c, self.arrival_consumption, "consumption")
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "consumption", c)
        object.__setattr__(self, "arrival_rewards", arrival_r)
        object.__setattr__(self, "arrival_consumption", arrival_c)
        object.__setattr__(self, "budgets", xi)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_resources(self) -> int:
        return self.consumption.shape[2]

    def objective(self, selector: ObjectiveSelector) -> np.ndarray:
        """Return the (S, A) table the selector refers to."""
        if selector.kind == "reward":
            return self.rewards
        if selector.index >= self.num_resources:
            raise CmdpValidationError(
                f"Resource index {selector.index} out of range for d={self.num_resources}"
            )
        return self.consumption[:, :, selector.index]

    def realized_payout(self, s: int, a: int, next_state: int) -> Tuple[float, np.ndarray]:
        """Reward and consumption observed on the transition ``(s, a) -> next_state``."""
        reward = float(self.rewards[s, a])
        consumption = self.consumption[s, a].copy()
        row = self.transitions[s, a]
        if self.arrival_rewards is not None and row @ self.arrival_rewards > 0:
            reward = float(self.arrival_rewards[next_state])
        if self.arrival_consumption is not None:
            paying = row @ self.arrival_consumption > 0
            consumption[paying] = self.arrival_consumption[next_state, paying]
        return reward, consumption

    def with_budgets(self, budgets: Sequence[float]) -> "Cmdp":
        return replace(self, budgets=np.asarray(budgets, dtype=float))

    def with_horizon(self, horizon: int) -> "Cmdp":
        return replace(self, horizon=horizon)


@dataclass(frozen=True, eq=False)
class Policy:
    """A time-dependent stochastic policy, ``table[h - 1, s, a]``."""

    table: np.ndarray

    def __post_init__(self):
        table = _frozen(self.table)
        if table.ndim != 3:
            raise StructuralError(f"policy table must have shape (H, S, A), got {table.shape}")
        if np.any(table < 0):
            raise CmdpValidationError("policy has negative probabilities")
        if np.any(np.abs(table.sum(axis=2) - 1.0) > ROW_TOLERANCE):
            raise CmdpValidationError("policy distributions must sum to 1")
        object.__setattr__(self, "table", table)

    @property
    def horizon(self) -> int:
        return self.table.shape[0]

    @property
    def num_states(self) -> int:
        return self.table.shape[1]

    @property
    def num_actions(self) -> int:
        return self.table.shape[2]

    def probabilities(self, h: int, s: int) -> np.ndarray:
        """Action distribution at 1-based stage ``h`` in state ``s``."""
        return self.table[h - 1, s]

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((horizon, num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions: np.ndarray, num_actions: int) -> "Policy":
        """Build from an integer (H, S) table of chosen actions."""
        actions = np.asarray(actions, dtype=int)
        table = np.zeros(actions.shape + (num_actions,))
        np.put_along_axis(table, actions[..., None], 1.0, axis=2)
        return cls(table)

    @classmethod
    def constant_action(
        cls, horizon: int, num_states: int, num_actions: int, action: int
    ) -> "Policy":
        return cls.deterministic(np.full((horizon, num_states), action), num_actions)


@dataclass(frozen=True, eq=False)
class MixturePolicy:
    """A distribution over policies; one component is drawn per episode."""

    weights: np.ndarray
    components: Tuple[Policy, ...]

    def __post_init__(self):
        weights = _frozen(self.weights)
        components = tuple(self.components)
        if weights.ndim != 1 or weights.size != len(components) or not components:
            raise StructuralError("mixture needs one weight per component")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > ROW_TOLERANCE:
            raise CmdpValidationError("mixture weights must be a probability vector")
        shape = components[0].table.shape
        if any(policy.table.shape != shape for policy in components):
            raise StructuralError("mixture components must share a shape")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)

    @property
    def horizon(self) -> int:
        return self.components[0].horizon

    @classmethod
    def uniform_over(cls, policies: Sequence[Policy]) -> "MixturePolicy":
        """Uniform mixture with identical components merged."""
        merged = {}
        order = []
        for policy in policies:
            key = policy.table.tobytes()
            if key not in merged:
                merged[key] = [policy, 0]
                order.append(key)
            merged[key][1] += 1
        total = float(len(policies))
        weights = np.array([merged[key][1] / total for key in order])
        weights = weights / weights.sum()
        return cls(weights, tuple(merged[key][0] for key in order))

    def sample(self, rng: np.random.Generator) -> Policy:
        """Draw one component by inverse CDF on a single uniform draw."""
        index = draw_index(self.weights, rng.random())
        return self.components[index]


AnyPolicy = Union[Policy, MixturePolicy]


def draw_index(probabilities: np.ndarray, u: float) -> int:
    """Inverse-CDF lookup of ``u`` in a probability vector."""
    cdf = np.cumsum(probabilities)
    index = int(np.searchsorted(cdf, u, side="right"))
    # Guard against the last cdf entry rounding below 1
    last = int(np.flatnonzero(probabilities > 0)[-1])
    return min(index, last)


@dataclass(frozen=True, eq=False)
class ValueTables:
    """Q (S, A, H) and V (S, H + 1) tables of a policy under a model."""

    Q: np.ndarray
    V: np.ndarray = field(repr=False)

    def value(self, s: int, h: int = 1) -> float:
        return float(self.V[s, h - 1])


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    """State-action-stage distribution ``rho[s, a, h - 1]``."""

    rho: np.ndarray

    def __post_init__(self):
        rho = _frozen(self.rho)
        if rho.ndim != 3:
            raise StructuralError(f"occupancy must have shape (S, A, H), got {rho.shape}")
        if np.any(rho < -FLOW_TOLERANCE) or np.any(rho > 1 + FLOW_TOLERANCE):
            raise CmdpValidationError("occupancy entries must lie in [0, 1]")
        stage_mass = rho.sum(axis=(0, 1))
        if np.any(np.abs(stage_mass - 1.0) > FLOW_TOLERANCE):
            raise CmdpValidationError("occupancy must have unit mass at every stage")
        object.__setattr__(self, "rho", rho)

    @property
    def horizon(self) -> int:
        return self.rho.shape[2]

    def flow_violation(self, p: np.ndarray, s0: int) -> float:
        """Largest violation of flow conservation and the initial-state restriction."""
        rho = self.rho
        worst = float(np.max(np.abs(np.delete(rho[:, :, 0], s0, axis=0)), initial=0.0))
        for h in range(rho.shape[2] - 1):
            inflow = np.einsum("sa,sat->t", rho[:, :, h], p)
            worst = max(worst, float(np.max(np.abs(rho[:, :, h + 1].sum(axis=1) - inflow))))
        return worst

    def state_distribution(self, h: int) -> np.ndarray:
        return self.rho[:, :, h - 1].sum(axis=1)


def _check_objective(p: np.ndarray, m: np.ndarray) -> None:
    if m.shape != p.shape[:2]:
        raise StructuralError(f"objective shape {m.shape} does not match transitions {p.shape}")
    if not np.all(np.isfinite(m)):
        raise CmdpValidationError("objective entries must be finite")


def _check_policy(p: np.ndarray, policy: Policy, H: int) -> None:
    if policy.table.shape != (H,) + p.shape[:2]:
        raise StructuralError(
            f"policy shape {policy.table.shape} does not match (H, S, A) = {(H,) + p.shape[:2]}"
        )


def evaluate_policy(p: np.ndarray, m: np.ndarray, policy: Policy, H: int) -> ValueTables:
    """
    Backward dynamic programming for the value of ``policy`` on objective ``m``.

    Objective entries may exceed [0, 1] (bonus-enhanced models).

    Raises:
        StructuralError: if the tables have mismatching dimensions
    """
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    _check_objective(p, m)
    _check_policy(p, policy, H)
    S, A = m.shape
    Q = np.zeros((S, A, H))
    V = np.zeros((S, H + 1))
    for h in range(H - 1, -1, -1):
        Q[:, :, h] = m + p @ V[:, h + 1]
        V[:, h] = np.einsum("sa,sa->s", policy.table[h], Q[:, :, h])
    return ValueTables(Q=Q, V=V)


def mixture_value(p: np.ndarray, m: np.ndarray, policy: AnyPolicy, H: int, s0: int) -> float:
    """Expected total of ``m`` from ``s0`` under a policy or a mixture of policies."""
    if isinstance(policy, MixturePolicy):
        return float(
            sum(
                w * evaluate_policy(p, m, component, H).value(s0)
                for w, component in zip(policy.weights, policy.components)
            )
        )
    return evaluate_policy(p, m, policy, H).value(s0)


def bellman_error_table(
    model_p: np.ndarray,
    model_m: np.ndarray,
    true_p: np.ndarray,
    true_m: np.ndarray,
    policy: Policy,
    H: int,
) -> np.ndarray:
    """
    Per-stage mismatch between the model's Q-function and a one-step true backup.

    Returns an (S, A, H) table
    ``Q_model(s, a, h) - (m*(s, a) + sum_s' p*(s'|s, a) V_model(s', h + 1))``.
    """
    model_p = np.asarray(model_p, dtype=float)
    true_p = np.asarray(true_p, dtype=float)
    true_m = np.asarray(true_m, dtype=float)
    if model_p.shape != true_p.shape:
        raise StructuralError(f"model transitions {model_p.shape} vs truth {true_p.shape}")
    _check_objective(true_p, true_m)
    tables = evaluate_policy(model_p, model_m, policy, H)
    backup = true_m[:, :, None] + np.einsum("sat,th->sah", true_p, tables.V[:, 1:])
    return tables.Q - backup


def occupancy_from_policy(p: np.ndarray, policy: Policy, s0: int, H: int) -> OccupancyMeasure:
    """Forward recursion of the state-action-stage distribution from ``s0``."""
    p = np.asarray(p, dtype=float)
    _check_policy(p, policy, H)
    S, A = p.shape[0], p.shape[1]
    if not 0 <= s0 < S:
        raise StructuralError(f"initial state {s0} out of range for {S} states")
    rho = np.zeros((S, A, H))
    state_dist = np.zeros(S)
    state_dist[s0] = 1.0
    for h in range(H):
        rho[:, :, h] = state_dist[:, None] * policy.table[h]
        if h + 1 < H:
            state_dist = np.einsum("sa,sat->t", rho[:, :, h], p)
    return OccupancyMeasure(rho)


def mixture_occupancy(p: np.ndarray, policy: AnyPolicy, s0: int, H: int) -> OccupancyMeasure:
    if isinstance(policy, MixturePolicy):
        rho = sum(
            w * occupancy_from_policy(p, component, s0, H).rho
            for w, component in zip(policy.weights, policy.components)
        )
        return OccupancyMeasure(rho)
    return occupancy_from_policy(p, policy, s0, H)


def policy_from_occupancy(occupancy: Union[OccupancyMeasure, np.ndarray]) -> Policy:
    """
    Normalize an occupancy measure into the policy it induces.

    States with zero mass at a stage get the uniform distribution.

    Raises:
        CmdpValidationError: if any entry is negative
    """
    rho = occupancy.rho if isinstance(occupancy, OccupancyMeasure) else np.asarray(occupancy)
    if np.any(rho < 0):
        raise CmdpValidationError("occupancy has negative entries")
    S, A, H = rho.shape
    mass = rho.sum(axis=1, keepdims=True)
    uniform = np.full_like(rho, 1.0 / A)
    ratio = np.divide(rho, mass, out=uniform, where=mass > 0)
    # Renormalize so rounding in the ratio never breaks the row-sum check
    ratio = ratio / ratio.sum(axis=1, keepdims=True)
    return Policy(np.transpose(ratio, (2, 0, 1)))


def expected_total(occupancy: Union[OccupancyMeasure, np.ndarray], m: np.ndarray) -> float:
    """Sum over (s, a, h) of ``rho * m``."""
    rho = occupancy.rho if isinstance(occupancy, OccupancyMeasure) else np.asarray(occupancy)
    m = np.asarray(m, dtype=float)
    if m.shape != rho.shape[:2]:
        raise StructuralError(f"objective shape {m.shape} does not match occupancy {rho.shape}")
    return float(np.einsum("sah,sa->", rho, m))


def expected_consumption(
    occupancy: Union[OccupancyMeasure, np.ndarray], c: np.ndarray
) -> np.ndarray:
    """Vector of expected totals, one per resource of an (S, A, d) table."""
    rho = occupancy.rho if isinstance(occupancy, OccupancyMeasure) else np.asarray(occupancy)
    return np.einsum("sah,sai->i", rho, np.asarray(c, dtype=float))
