"""Online sufficient statistics, the plug-in empirical model and the exploration bonus."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from src.core.cmdp import StructuralError
from src.utils.logger import get_logger

logger = get_logger(__name__)

SNAPSHOT_HEADER = "# counts-snapshot v1"


class ObservationError(Exception):
    """An observation fell outside its declared range (corrupted environment)."""

    pass


class SnapshotFormatError(Exception):
    """A counts snapshot file could not be parsed."""

    pass


@dataclass(eq=False)
class Counts:
    """
    Mutable accumulator of visit counts and observation sums.

    ``visits`` holds the raw N(s, a), before the max-with-1 guard.
    """

    visits: np.ndarray
    transition_counts: np.ndarray
    reward_sum: np.ndarray
    consumption_sum: np.ndarray
    episodes_seen: int = 0

    @classmethod
    def empty(cls, num_states: int, num_actions: int, num_resources: int) -> "Counts":
        return cls(
            visits=np.zeros((num_states, num_actions), dtype=np.int64),
            transition_counts=np.zeros((num_states, num_actions, num_states), dtype=np.int64),
            reward_sum=np.zeros((num_states, num_actions)),
            consumption_sum=np.zeros((num_states, num_actions, num_resources)),
        )

    @property
    def num_states(self) -> int:
        return self.visits.shape[0]

    @property
    def num_actions(self) -> int:
        return self.visits.shape[1]

    @property
    def num_resources(self) -> int:
        return self.consumption_sum.shape[2]

    def copy(self) -> "Counts":
        return Counts(
            visits=self.visits.copy(),
            transition_counts=self.transition_counts.copy(),
            reward_sum=self.reward_sum.copy(),
            consumption_sum=self.consumption_sum.copy(),
            episodes_seen=self.episodes_seen,
        )

    def end_episode(self) -> None:
        self.episodes_seen += 1


def record_step(
    counts: Counts,
    s: int,
    a: int,
    reward: float,
    consumption: Sequence[float],
    next_state: int,
) -> Counts:
    """
    Add one observed transition to the accumulator.

    Raises:
        ObservationError: if the reward or a consumption value lies outside [0, 1]
        StructuralError: if an index is out of range
    """
    S, A = counts.visits.shape
    if not (0 <= s < S and 0 <= next_state < S and 0 <= a < A):
        raise StructuralError(f"transition ({s}, {a}, {next_state}) out of range")
    consumption = np.asarray(consumption, dtype=float).reshape(-1)
    if consumption.size != counts.num_resources:
        raise StructuralError(
            f"expected {counts.num_resources} consumption values, got {consumption.size}"
        )
    if not 0.0 <= reward <= 1.0:
        raise ObservationError(f"reward {reward} outside [0, 1] at ({s}, {a})")
    if np.any(consumption < 0.0) or np.any(consumption > 1.0):
        raise ObservationError(f"consumption {consumption.tolist()} outside [0, 1] at ({s}, {a})")

    counts.visits[s, a] += 1
    counts.transition_counts[s, a, next_state] += 1
    counts.reward_sum[s, a] += reward
    counts.consumption_sum[s, a] += consumption
    return counts


@dataclass(frozen=True, eq=False)
class EmpiricalModel:
    """Plug-in estimates of transitions, rewards and consumption."""

    p_hat: np.ndarray
    r_hat: np.ndarray
    c_hat: np.ndarray


def empirical_model(counts: Counts) -> EmpiricalModel:
    """
    Plug-in estimates from the counts.

    Unvisited pairs get the uniform transition row and zero reward/consumption,
    so ``p_hat`` always stays a Markov kernel.
    """
    S = counts.num_states
    n = counts.visits.astype(float)
    guarded = np.maximum(1.0, n)
    visited = n > 0

    p_hat = np.full(counts.transition_counts.shape, 1.0 / S)
    p_hat[visited] = counts.transition_counts[visited] / n[visited][:, None]
    r_hat = counts.reward_sum / guarded
    c_hat = counts.consumption_sum / guarded[:, :, None]
    return EmpiricalModel(p_hat=p_hat, r_hat=r_hat, c_hat=c_hat)


@dataclass(frozen=True)
class BonusConfig:
    """
    Failure probability and problem sizes entering the bonus.

    ``scale`` multiplies the unclipped bonus; 1 is the concentration bound
    itself, smaller values explore less.
    """

    delta: float
    num_states: int
    num_actions: int
    horizon: int
    num_resources: int
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.scale < 0.0:
            raise ValueError(f"bonus scale must be nonnegative, got {self.scale}")

    def log_term(self, k: int) -> float:
        S, A, H, d = self.num_states, self.num_actions, self.horizon, self.num_resources
        return math.log(8.0 * S * A * H * (d + 1) * k * k / self.delta)


@dataclass(frozen=True, eq=False)
class BonusTable:
    b: np.ndarray


def compute_bonus(counts: Counts, k: int, cfg: BonusConfig) -> BonusTable:
    """
    Hoeffding-style bonus ``min{2H, scale H sqrt(2 ln(8SAH(d+1)k^2/delta) / max{1, N})}``.

    Args:
        counts: statistics gathered before episode ``k``
        k: 1-based episode index
        cfg: bonus configuration

    Returns:
        BonusTable with entries in [0, 2H]
    """
    if k < 1:
        raise ValueError(f"episode index must be >= 1, got {k}")
    H = cfg.horizon
    guarded = np.maximum(1.0, counts.visits.astype(float))
    raw = cfg.scale * H * np.sqrt(2.0 * cfg.log_term(k) / guarded)
    return BonusTable(b=np.minimum(2.0 * H, raw))


@dataclass(frozen=True, eq=False)
class BonusEnhancedModel:
    """
    Empirical model with the bonus added to rewards and subtracted from consumption.

    Neither ``r_plus`` nor ``c_minus`` is clipped; ``c_minus`` may be negative.
    The empirical tables and the bonus are kept for planners that form their
    own confidence intervals.
    """

    p: np.ndarray
    r_plus: np.ndarray
    c_minus: np.ndarray
    r_hat: np.ndarray
    c_hat: np.ndarray
    bonus: np.ndarray

    @property
    def num_states(self) -> int:
        return self.p.shape[0]

    @property
    def num_actions(self) -> int:
        return self.p.shape[1]

    @property
    def num_resources(self) -> int:
        return self.c_minus.shape[2]

    @classmethod
    def exact(cls, p: np.ndarray, r: np.ndarray, c: np.ndarray) -> "BonusEnhancedModel":
        """A model with zero bonus, e.g. the true cMDP."""
        return bonus_enhanced_model(
            EmpiricalModel(p_hat=np.asarray(p), r_hat=np.asarray(r), c_hat=np.asarray(c)),
            BonusTable(b=np.zeros(np.asarray(r).shape)),
        )


def bonus_enhanced_model(emp: EmpiricalModel, bonus: BonusTable) -> BonusEnhancedModel:
    b = np.asarray(bonus.b, dtype=float)
    if b.shape != emp.r_hat.shape or emp.c_hat.shape[:2] != b.shape:
        raise StructuralError(f"bonus shape {b.shape} does not match model {emp.r_hat.shape}")
    return BonusEnhancedModel(
        p=emp.p_hat,
        r_plus=emp.r_hat + b,
        c_minus=emp.c_hat - b[:, :, None],
        r_hat=emp.r_hat,
        c_hat=emp.c_hat,
        bonus=b,
    )


def save_counts(counts: Counts, path: Union[str, Path]) -> Path:
    """
    Write a counts snapshot.

    Format: a header line, a ``sizes`` line ``S A d episodes``, a column
    comment, then one whitespace-separated record per (s, a):
    ``s a N reward_sum cons_0 .. cons_{d-1} trans_0 .. trans_{S-1}``.
    Reals use Python's shortest round-tripping decimal form.
    """
    path = Path(path)
    S, A, d = counts.num_states, counts.num_actions, counts.num_resources
    lines = [
        SNAPSHOT_HEADER,
        f"sizes {S} {A} {d} {counts.episodes_seen}",
        "# s a N reward_sum " + " ".join(
            [f"cons_{i}" for i in range(d)] + [f"trans_{t}" for t in range(S)]
        ),
    ]
    for s in range(S):
        for a in range(A):
            fields = [str(s), str(a), str(int(counts.visits[s, a])), repr(float(counts.reward_sum[s, a]))]
            fields += [repr(float(v)) for v in counts.consumption_sum[s, a]]
            fields += [str(int(v)) for v in counts.transition_counts[s, a]]
            lines.append(" ".join(fields))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote counts snapshot to {path}")
    return path


def load_counts(path: Union[str, Path]) -> Counts:
    """
    Read a snapshot written by :func:`save_counts`.

    Raises:
        SnapshotFormatError: if the file is malformed or violates Counts invariants
    """
    path = Path(path)
    rows = [line.strip() for line in path.read_text().splitlines()]
    rows = [line for line in rows if line and not line.startswith("#")]
    if not rows or not rows[0].startswith("sizes"):
        raise SnapshotFormatError(f"{path}: missing 'sizes' line")
    try:
        S, A, d, episodes = (int(v) for v in rows[0].split()[1:5])
    except ValueError as e:
        raise SnapshotFormatError(f"{path}: bad sizes line: {e}") from e

    counts = Counts.empty(S, A, d)
    counts.episodes_seen = episodes
    records = rows[1:]
    if len(records) != S * A:
        raise SnapshotFormatError(f"{path}: expected {S * A} records, found {len(records)}")
    for line_no, line in enumerate(records, start=1):
        fields = line.split()
        if len(fields) != 4 + d + S:
            raise SnapshotFormatError(f"{path}: record {line_no} has {len(fields)} fields")
        try:
            s, a, n = int(fields[0]), int(fields[1]), int(fields[2])
            counts.visits[s, a] = n
            counts.reward_sum[s, a] = float(fields[3])
            counts.consumption_sum[s, a] = [float(v) for v in fields[4 : 4 + d]]
            counts.transition_counts[s, a] = [int(v) for v in fields[4 + d :]]
        except (ValueError, IndexError) as e:
            raise SnapshotFormatError(f"{path}: record {line_no}: {e}") from e

    if np.any(counts.transition_counts.sum(axis=2) != counts.visits):
        raise SnapshotFormatError(f"{path}: transition counts do not add up to visits")
    if np.any(counts.reward_sum > counts.visits) or np.any(
        counts.consumption_sum > counts.visits[:, :, None]
    ):
        raise SnapshotFormatError(f"{path}: observation sums exceed visit counts")
    return counts
