"""Multi-objective continuous-control environments and policy evaluation.

Environments are functional: ``reset(seed)`` returns a state and
``step(state, action)`` returns the successor plus a reward vector, so an
environment object carries no episode state apart from its frame counters.

Both bundled tasks share point-mass dynamics on the plane::

    v <- 0.9 * v + 0.1 * a
    p <- p + v

with state ``(x, y, vx, vy)``, a 2-D force ``a`` clipped to ``[-1, 1]^2``,
initial position uniform in ``[-0.05, 0.05]^2`` and zero initial velocity.
Neither task has absorbing states; episodes end by truncation at ``t_max``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import DimensionError
from .nn import DenseNetwork

RESET_JITTER = 0.05


@dataclass(frozen=True)
class MOMDPContract:
    state_dim: int
    action_dim: int
    n_objectives: int
    gamma: float
    t_max: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]

    def __post_init__(self):
        if self.n_objectives < 2:
            raise ValueError("a multi-objective MDP needs at least 2 objectives")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ValueError("action bounds must have one interval per action dimension")
        if not (np.all(np.isfinite(self.action_low)) and np.all(np.isfinite(self.action_high))):
            raise ValueError("action bounds must be finite")


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: np.ndarray
    terminal: bool = False
    truncated: bool = False


@dataclass
class FrameCounter:
    """Environment steps, split by purpose."""

    training: int = 0
    evaluation: int = 0


class MOEnvironment:
    name = "abstract"
    state_dim = 4
    action_dim = 2
    n_objectives = 2

    def __init__(self, t_max: int = 100, gamma: float = 0.99):
        self.contract = MOMDPContract(
            state_dim=self.state_dim,
            action_dim=self.action_dim,
            n_objectives=self.n_objectives,
            gamma=gamma,
            t_max=t_max,
            action_low=(-1.0,) * self.action_dim,
            action_high=(1.0,) * self.action_dim,
        )
        self.frames = FrameCounter()
        self._low = np.asarray(self.contract.action_low)
        self._high = np.asarray(self.contract.action_high)

    @property
    def t_max(self) -> int:
        return self.contract.t_max

    @property
    def gamma(self) -> float:
        return self.contract.gamma

    @property
    def max_action(self) -> float:
        return float(np.max(np.abs(np.concatenate([self._low, self._high]))))

    def clip_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.action_dim,):
            raise DimensionError(f"expected action of length {self.action_dim}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite action {a}")
        return np.clip(a, self._low, self._high)

    def reset(self, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        pos = rng.uniform(-RESET_JITTER, RESET_JITTER, size=2)
        return np.array([pos[0], pos[1], 0.0, 0.0])

    def step(self, state, action, t: int | None = None, phase: str = "training") -> StepResult:
        """Advance one frame. ``t`` is the 0-based index of this step within the episode."""
        s = np.asarray(state, dtype=np.float64)
        if s.shape != (self.state_dim,):
            raise DimensionError(f"expected state of length {self.state_dim}, got {s.shape}")
        a = self.clip_action(action)
        if phase == "training":
            self.frames.training += 1
        elif phase == "evaluation":
            self.frames.evaluation += 1
        else:
            raise ValueError(f"unknown phase {phase!r}")
        vel = 0.9 * s[2:4] + 0.1 * a
        pos = s[0:2] + vel
        nxt = np.concatenate([pos, vel])
        reward = self._reward(s, a, nxt)
        truncated = t is not None and t + 1 >= self.t_max
        return StepResult(nxt, reward, terminal=False, truncated=truncated)

    def _reward(self, state, action, next_state) -> np.ndarray:
        raise NotImplementedError


class MOPointMass(MOEnvironment):
    """Forward progress (``vx`` at the start of the step) versus energy (``-|a|^2``)."""

    name = "mo-pointmass"

    def _reward(self, state, action, next_state):
        return np.array([state[2], -float(action @ action)])


class MOTwoGoal(MOEnvironment):
    """Reward ``i`` is the decrease in distance to goal ``i`` over the step."""

    name = "mo-twogoal"
    goals = np.array([[1.0, 0.0], [0.0, 1.0]])

    def _reward(self, state, action, next_state):
        before = np.linalg.norm(self.goals - state[0:2], axis=1)
        after = np.linalg.norm(self.goals - next_state[0:2], axis=1)
        return before - after


ENVIRONMENTS: dict[str, type[MOEnvironment]] = {
    MOPointMass.name: MOPointMass,
    MOTwoGoal.name: MOTwoGoal,
}


def make_env(name: str, t_max: int = 100, gamma: float = 0.99) -> MOEnvironment:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(t_max=t_max, gamma=gamma)


Policy = Union[DenseNetwork, Callable[[np.ndarray], np.ndarray]]


def _act(policy: Policy, state: np.ndarray) -> np.ndarray:
    if isinstance(policy, DenseNetwork):
        return policy.forward(state)
    return np.asarray(policy(state), dtype=np.float64)


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(episodes)]


def rollout(env: MOEnvironment, policy: Policy, seed, phase: str = "evaluation") -> np.ndarray:
    """Undiscounted return vector of one deterministic episode."""
    state = env.reset(seed)
    total = np.zeros(env.n_objectives)
    for t in range(env.t_max):
        res = env.step(state, _act(policy, state), t=t, phase=phase)
        total += res.reward
        state = res.next_state
        if res.terminal or res.truncated:
            break
    return total


def evaluate_policy(env: MOEnvironment, policy: Policy, episodes: int = 5, seed: int = 0) -> np.ndarray:
    """Mean undiscounted per-objective return over ``episodes`` seeded episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = [rollout(env, policy, s) for s in episode_seeds(seed, episodes)]
    return np.mean(returns, axis=0)
