"""Offline Pareto-front extraction from single-objective specialists.

Each iteration picks a gap on the current front, assembles a hybrid dataset
from the specialist buffers in proportion to the gap's target weights, and
trains a fresh policy by advantage-weighted behaviour cloning on it, where the
advantage is the target-weighted mix of per-objective advantages from
distribution-matched critics. No environment frames are spent on training;
new policies are only rolled out for evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .envs import MOEnvironment, evaluate_policy
from .errors import (
    CannotExtractError,
    DegenerateWeightsError,
    DimensionError,
    DivergenceError,
    MissingCriticError,
)
from .nn import DenseNetwork, OptimizerState, apply_update, mlp
from .pareto import ParetoArchive, reference_point, select_gap
from .replay import Batch, ReplayBuffer, Transition, build_hybrid
from .specialist import Critic

log = logging.getLogger(__name__)

WEIGHT_ORIGINS = ("reference", "zero")


@dataclass
class ExtractionConfig:
    """Extraction hyperparameters. Defaults are the full-scale values
    (swimmer-style ``epochs``/``beta``/``omega_max``)."""

    iterations: int = 1200
    epochs: int = 10
    beta: float = 1.0
    omega_max: float = 20.0
    hybrid_size: int = 200_000
    warmup_steps: int = 1000
    warmup_lr: float = 3e-4
    warmup_batch_size: int = 256
    lr: float = 3e-4
    batch_size: int = 256
    eval_episodes: int = 5
    hidden_dim: int = 256
    n_hidden: int = 2
    freeze_weights: bool = False
    weight_origin: str = "reference"
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.omega_max >= 1:
            raise ValueError("omega_max must be >= 1")
        if self.weight_origin not in WEIGHT_ORIGINS:
            raise ValueError(f"weight_origin must be one of {WEIGHT_ORIGINS}")


DESK_EXTRACTION = ExtractionConfig(iterations=20, hybrid_size=10_000, warmup_steps=200, hidden_dim=64)


class CriticFamily:
    """Grid of critics ``(k, m)``: objective ``m`` learned on buffer ``k``."""

    def __init__(self, n_objectives: int, critics: Mapping[tuple[int, int], Critic] | None = None):
        self.n_objectives = n_objectives
        self.critics: dict[tuple[int, int], Critic] = dict(critics or {})

    def __getitem__(self, key: tuple[int, int]) -> Critic:
        try:
            return self.critics[key]
        except KeyError:
            raise MissingCriticError(*key) from None

    def __setitem__(self, key: tuple[int, int], critic: Critic) -> None:
        self.critics[key] = critic

    def missing(self) -> list[tuple[int, int]]:
        n = self.n_objectives
        return [(k, m) for k in range(n) for m in range(n) if (k, m) not in self.critics]

    def require_complete(self) -> None:
        missing = self.missing()
        if missing:
            raise MissingCriticError(*missing[0])

    @classmethod
    def from_specialists(cls, specialists) -> "CriticFamily":
        family = cls(len(specialists))
        for sp in specialists:
            for m, critic in sp.critics.items():
                family[sp.objective, m] = critic
        return family


def advantages(family: CriticFamily, batch: Batch, new_actions: np.ndarray) -> np.ndarray:
    """Per-objective advantages ``Q(s, a) - Q(s, pi_new(s))``, one row per transition.

    Each row uses the critics of the buffer the transition came from.
    """
    n = family.n_objectives
    out = np.empty((len(batch), n))
    for k in np.unique(batch.sources):
        rows = batch.sources == k
        if rows.all():
            s, a, pa = batch.states, batch.actions, new_actions
        else:
            s, a, pa = batch.states[rows], batch.actions[rows], new_actions[rows]
        for m in range(n):
            critic = family[int(k), m]
            out[rows, m] = critic.q(s, a) - critic.q(s, pa)
    return out


def advantage_vector(family: CriticFamily, transition: Transition, policy: DenseNetwork) -> np.ndarray:
    n = family.n_objectives
    k = int(transition.source)
    a_new = policy.forward(transition.state)
    return np.array(
        [family[k, m].q(transition.state, transition.action) - family[k, m].q(transition.state, a_new) for m in range(n)]
    )


def mixed_advantage(adv, weights) -> np.ndarray | float:
    adv = np.asarray(adv, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if adv.shape[-1] != w.shape[0]:
        raise DimensionError(f"advantage length {adv.shape[-1]} does not match weights length {len(w)}")
    out = adv @ w
    return float(out) if np.ndim(out) == 0 else out


_TINY = np.finfo(np.float64).tiny


def regression_weight(a_mixed, beta: float, omega_max: float):
    """``min(exp(a_mixed / beta), omega_max)``.

    Overflow saturates at ``omega_max``; underflow is floored at the smallest
    positive double so weights stay strictly positive.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    z = np.asarray(a_mixed, dtype=np.float64) / beta
    cap = np.log(omega_max)
    with np.errstate(over="ignore", under="ignore"):
        w = np.where(z >= cap, omega_max, np.exp(np.minimum(z, cap)))
    w = np.minimum(np.maximum(w, _TINY), omega_max)
    return float(w) if w.ndim == 0 else w


def batch_weights(
    family: CriticFamily,
    batch: Batch,
    new_actions: np.ndarray,
    weights: np.ndarray,
    beta: float,
    omega_max: float,
) -> np.ndarray:
    return regression_weight(mixed_advantage(advantages(family, batch, new_actions), weights), beta, omega_max)


def _regression_step(policy, opt, states, targets) -> float:
    """One Adam step on ``mean(|pi(s) - target|^2)``; returns the pre-step loss."""
    out, acts = policy.forward_cache(states)
    diff = out - targets
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite regression loss")
    grad, _ = policy.backward(acts, (2.0 / len(states)) * diff)
    apply_update(policy, opt, grad)
    return loss


def mean_parent_action(parents: Sequence[DenseNetwork], states: np.ndarray) -> np.ndarray:
    return np.mean([p.forward(states) for p in parents], axis=0)


def warm_up(
    policy: DenseNetwork,
    parents: Sequence[DenseNetwork],
    hybrid: ReplayBuffer,
    config: ExtractionConfig,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Regress ``policy`` onto the mean parent action over hybrid states, in place.

    Returns the full-dataset loss before and after.
    """
    if not parents:
        raise ValueError("warm-up needs at least one parent")
    if len(hybrid) == 0:
        raise ValueError("warm-up needs a non-empty hybrid buffer")
    states = hybrid.states[: len(hybrid)]
    target = mean_parent_action(parents, states)

    def full_loss():
        d = policy.forward(states) - target
        return float(np.mean(np.sum(d * d, axis=1)))

    before = full_loss()
    if config.warmup_steps == 0:
        return before, before
    opt = OptimizerState.for_network(policy, config.warmup_lr)
    for _ in range(config.warmup_steps):
        idx = rng.integers(0, len(states), size=config.warmup_batch_size)
        _regression_step(policy, opt, states[idx], target[idx])
    return before, full_loss()


@dataclass
class Offspring:
    policy: DenseNetwork
    weights: np.ndarray
    parents: tuple[str, ...] = ()
    iteration: int = -1
    warmup_loss: tuple[float, float] = (float("nan"), float("nan"))
    losses: list[float] = field(default_factory=list)


def train_offspring(
    family: CriticFamily,
    hybrid: ReplayBuffer,
    weights,
    parents: Sequence[DenseNetwork],
    config: ExtractionConfig,
    rng: np.random.Generator,
    policy: DenseNetwork | None = None,
    on_batch: Callable[[Batch, np.ndarray], None] | None = None,
) -> Offspring:
    """Warm up a fresh policy, then run ``config.epochs`` shuffled passes of weighted cloning.

    Regression weights are recomputed from the current policy on every
    minibatch unless ``config.freeze_weights`` is set, in which case they are
    computed once after warm-up. ``on_batch(batch, omega)`` observes each step.
    """
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != family.n_objectives:
        raise DimensionError("target weights length does not match the number of objectives")
    present = np.unique(hybrid.sources[: len(hybrid)])
    for k in present:
        for m in range(family.n_objectives):
            family[int(k), m]
    if policy is None:
        policy = mlp(
            hybrid.state_dim,
            hybrid.action_dim,
            config.hidden_dim,
            config.n_hidden,
            seed=rng,
            output_activation="tanh",
            output_scale=parents[0].output_scale if parents else 1.0,
        )
    warm = warm_up(policy, parents, hybrid, config, rng) if parents else (float("nan"),) * 2

    data = hybrid.all()
    frozen = None
    if config.freeze_weights:
        frozen = batch_weights(family, data, policy.forward(data.states), w, config.beta, config.omega_max)

    opt = OptimizerState.for_network(policy, config.lr)
    losses = []
    n = len(data)
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch = Batch(
                data.states[idx],
                data.actions[idx],
                data.rewards[idx],
                data.next_states[idx],
                data.terminals[idx],
                data.sources[idx],
            )
            out, acts = policy.forward_cache(batch.states)
            if frozen is None:
                omega = batch_weights(family, batch, out, w, config.beta, config.omega_max)
            else:
                omega = frozen[idx]
            if on_batch is not None:
                on_batch(batch, omega)
            diff = out - batch.actions
            sq = np.sum(diff * diff, axis=1)
            loss = float(np.mean(omega * sq))
            if not np.isfinite(loss):
                raise DivergenceError("non-finite weighted regression loss")
            grad, _ = policy.backward(acts, (2.0 / len(idx)) * omega[:, None] * diff)
            apply_update(policy, opt, grad)
            epoch_loss += loss * len(idx)
        losses.append(epoch_loss / n)
    return Offspring(policy, w, warmup_loss=warm, losses=losses)


@dataclass
class IterationRecord:
    iteration: int
    status: str
    hypervolume: float
    sparsity: float
    front_size: int
    weights: list[float] | None = None
    parents: list[str] | None = None
    policy_id: str | None = None
    returns: list[float] | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class ExtractionResult:
    archive: ParetoArchive
    records: list[IterationRecord]
    policies: dict[str, DenseNetwork]
    offspring: dict[str, Offspring]
    training_frames: int
    evaluation_frames: int


def offspring_id(iteration: int) -> str:
    return f"offspring-{iteration:04d}"


def iteration_rngs(seed: int, iteration: int, n: int = 4) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence([seed, iteration]).spawn(n)]


def extract_front(
    policies: Mapping[str, DenseNetwork],
    family: CriticFamily,
    buffers: Sequence[ReplayBuffer],
    env: MOEnvironment,
    config: ExtractionConfig,
    evaluations: Mapping[str, np.ndarray] | None = None,
    reference=None,
    eval_seed: int | None = None,
    on_iteration: Callable[[IterationRecord, Offspring | None], None] | None = None,
) -> ExtractionResult:
    """Run the extraction loop starting from the given specialist policies.

    ``evaluations`` may hold pre-computed returns (policies are deterministic,
    so results are cached per policy). ``reference`` defaults to the
    component-wise minimum of the starting evaluations minus 10% of range.
    """
    n = family.n_objectives
    if len(policies) < n:
        raise ValueError(f"need at least {n} starting policies for {n} objectives")
    if len(buffers) != n:
        raise ValueError(f"need one buffer per objective, got {len(buffers)}")
    family.require_complete()
    eval_seed = config.seed if eval_seed is None else eval_seed
    train_before = env.frames.training
    eval_before = env.frames.evaluation

    pool: dict[str, DenseNetwork] = dict(policies)
    evaluations = dict(evaluations or {})
    for pid, pol in pool.items():
        if pid not in evaluations:
            evaluations[pid] = evaluate_policy(env, pol, config.eval_episodes, eval_seed)
    if reference is None:
        reference = reference_point([evaluations[p] for p in pool])
    archive = ParetoArchive(np.asarray(reference, dtype=np.float64))
    for pid in pool:
        archive.add(pid, evaluations[pid])

    origin = archive.reference if config.weight_origin == "reference" else None
    records: list[IterationRecord] = []
    children: dict[str, Offspring] = {}
    for it in range(config.iterations):
        gap_rng, hybrid_rng, init_rng, train_rng = iteration_rngs(config.seed, it)
        weights = parents = None
        try:
            parents, weights = select_gap(archive, gap_rng, origin=origin)
            hybrid = build_hybrid(buffers, weights, config.hybrid_size, hybrid_rng)
            policy = mlp(
                hybrid.state_dim,
                hybrid.action_dim,
                config.hidden_dim,
                config.n_hidden,
                seed=init_rng,
                output_activation="tanh",
                output_scale=env.max_action,
            )
            child = train_offspring(
                family, hybrid, weights, [pool[p] for p in parents], config, train_rng, policy=policy
            )
        except (CannotExtractError, DegenerateWeightsError, DivergenceError) as exc:
            log.warning("iteration %d failed: %s", it, exc)
            rec = IterationRecord(
                it,
                "failed",
                archive.hypervolume(),
                archive.sparsity(),
                len(archive.front()),
                weights=None if weights is None else [float(x) for x in weights],
                parents=None if parents is None else list(parents),
                error=f"{type(exc).__name__}: {exc}",
            )
            records.append(rec)
            if on_iteration:
                on_iteration(rec, None)
            continue

        pid = offspring_id(it)
        child.parents = tuple(parents)
        child.iteration = it
        returns = evaluate_policy(env, child.policy, config.eval_episodes, eval_seed)
        pool[pid] = child.policy
        children[pid] = child
        archive.add(pid, returns)
        rec = IterationRecord(
            it,
            "ok",
            archive.hypervolume(),
            archive.sparsity(),
            len(archive.front()),
            weights=[float(x) for x in weights],
            parents=list(parents),
            policy_id=pid,
            returns=[float(x) for x in returns],
        )
        log.info("iteration %d: J=%s hv=%.4g front=%d", it, np.round(returns, 3), rec.hypervolume, rec.front_size)
        records.append(rec)
        if on_iteration:
            on_iteration(rec, child)

    return ExtractionResult(
        archive=archive,
        records=records,
        policies=pool,
        offspring=children,
        training_frames=env.frames.training - train_before,
        evaluation_frames=env.frames.evaluation - eval_before,
    )
