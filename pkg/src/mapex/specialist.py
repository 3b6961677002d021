"""Single-objective TD3-style specialists with a full row of per-objective critics.

Specialist ``k`` optimises objective ``k``. Alongside its primary critic it
may train secondary critics for every other objective on the same
minibatches; only the primary critic feeds the actor update. Secondary
critics can also be fitted afterwards from a saved buffer with
:func:`train_secondary_posthoc`.

Simplification relative to reference TD3: by default each critic is a single
network with a target copy (``twin_critics=True`` restores the clipped
double-Q minimum). Target-policy smoothing and delayed actor updates are kept.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import MOEnvironment
from .errors import DivergenceError, EmptyBufferError, FormatError, PreconditionError
from .nn import DenseNetwork, OptimizerState, apply_update, mlp, polyak_blend
from .replay import Batch, ReplayBuffer

log = logging.getLogger(__name__)


@dataclass
class TD3Config:
    """TD3 hyperparameters. Defaults are the full-scale values."""

    start_timesteps: int = 25_000
    gamma: float = 0.99
    tau: float = 0.005
    hidden_dim: int = 256
    n_hidden: int = 2
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 256
    buffer_size: int = 1_000_000
    expl_noise: float = 0.1
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_freq: int = 2
    twin_critics: bool = False
    posthoc_steps: int = 10_000


DESK_TD3 = TD3Config(start_timesteps=2_000, hidden_dim=64, batch_size=128, buffer_size=100_000)


class Critic:
    """Action-value network (or twin pair) with target copies and optimizers."""

    def __init__(self, nets: list[DenseNetwork], lr: float = 3e-4):
        self.nets = nets
        self.targets = [n.copy() for n in nets]
        self.optimizers = [OptimizerState.for_network(n, lr) for n in nets]

    @classmethod
    def create(cls, state_dim: int, action_dim: int, config: TD3Config, seed) -> "Critic":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        nets = [
            mlp(state_dim + action_dim, 1, config.hidden_dim, config.n_hidden, seed=rng)
            for _ in range(2 if config.twin_critics else 1)
        ]
        return cls(nets, config.critic_lr)

    @property
    def net(self) -> DenseNetwork:
        return self.nets[0]

    def q(self, states, actions) -> np.ndarray:
        return self.nets[0].forward(np.concatenate([states, actions], axis=-1))[..., 0]

    def target_q(self, states, actions) -> np.ndarray:
        x = np.concatenate([states, actions], axis=-1)
        values = [t.forward(x)[..., 0] for t in self.targets]
        return values[0] if len(values) == 1 else np.minimum(*values)

    def soft_update(self, tau: float) -> None:
        for t, n in zip(self.targets, self.nets):
            polyak_blend(t, n, tau)

    def to_bytes(self) -> bytes:
        blobs = [n.to_bytes() for n in self.nets]
        out = b"MPXC" + struct.pack("<I", len(blobs))
        for b in blobs:
            out += struct.pack("<Q", len(b)) + b
        return out

    @classmethod
    def from_bytes(cls, data: bytes, lr: float = 3e-4) -> "Critic":
        if len(data) < 8 or data[:4] != b"MPXC":
            raise FormatError("not a critic file")
        (count,) = struct.unpack_from("<I", data, 4)
        pos = 8
        nets = []
        for _ in range(count):
            if len(data) < pos + 8:
                raise FormatError("truncated critic file")
            (n,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if len(data) < pos + n:
                raise FormatError("truncated critic file")
            nets.append(DenseNetwork.from_bytes(data[pos : pos + n]))
            pos += n
        if pos != len(data) or not nets:
            raise FormatError("malformed critic file")
        return cls(nets, lr)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, lr: float = 3e-4) -> "Critic":
        return cls.from_bytes(Path(path).read_bytes(), lr)


def smoothed_target_actions(
    target_policy: DenseNetwork,
    next_states: np.ndarray,
    rng: np.random.Generator,
    policy_noise: float,
    noise_clip: float,
    max_action: float,
) -> np.ndarray:
    a = target_policy.forward(next_states)
    if policy_noise > 0:
        noise = np.clip(rng.normal(0.0, policy_noise * max_action, size=a.shape), -noise_clip, noise_clip)
        a = a + noise
    return np.clip(a, -max_action, max_action)


def td_targets(critic: Critic, batch: Batch, next_actions: np.ndarray, objective: int, gamma: float) -> np.ndarray:
    bootstrap = critic.target_q(batch.next_states, next_actions)
    y = batch.rewards[:, objective] + gamma * (1.0 - batch.terminals) * bootstrap
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"non-finite TD target for objective {objective}")
    return y


def td_update_critic(
    critic: Critic,
    target_policy: DenseNetwork,
    batch: Batch,
    objective: int,
    gamma: float,
    rng: np.random.Generator | None = None,
    policy_noise: float = 0.0,
    noise_clip: float = 0.5,
    max_action: float = 1.0,
    next_actions: np.ndarray | None = None,
) -> float:
    """One regression step of ``critic`` toward its TD target; returns the mean squared TD error.

    The target is ``r_m + gamma * (1 - terminal) * Q_target(s', a')`` with
    ``a'`` the smoothed target-policy action (pass ``next_actions`` to share
    one draw across a row of critics).
    """
    if next_actions is None:
        rng = rng if rng is not None else np.random.default_rng()
        next_actions = smoothed_target_actions(
            target_policy, batch.next_states, rng, policy_noise, noise_clip, max_action
        )
    y = td_targets(critic, batch, next_actions, objective, gamma)
    x = np.concatenate([batch.states, batch.actions], axis=1)
    losses = []
    for net, opt in zip(critic.nets, critic.optimizers):
        out, acts = net.forward_cache(x)
        err = out[:, 0] - y
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite critic loss for objective {objective}")
        grad, _ = net.backward(acts, (2.0 / len(y)) * err[:, None])
        apply_update(net, opt, grad)
        losses.append(loss)
    return float(np.mean(losses))


def actor_gradient(policy: DenseNetwork, critic_net: DenseNetwork, states: np.ndarray) -> tuple[float, np.ndarray]:
    """Deterministic policy gradient of ``-mean Q(s, pi(s))`` w.r.t. the actor parameters."""
    actions, acts = policy.forward_cache(states)
    x = np.concatenate([states, actions], axis=1)
    q, qacts = critic_net.forward_cache(x)
    n = len(states)
    _, dx = critic_net.backward(qacts, np.full((n, 1), -1.0 / n))
    grad, _ = policy.backward(acts, dx[:, states.shape[1] :])
    return -float(np.mean(q)), grad


@dataclass
class Specialist:
    objective: int
    policy: DenseNetwork
    critics: dict[int, Critic]
    buffer: ReplayBuffer
    frames: int = 0
    seed: int = 0
    losses: dict[int, list[float]] = field(default_factory=dict)

    @property
    def primary(self) -> Critic:
        return self.critics[self.objective]


def _streams(seed, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def train_specialist(
    env: MOEnvironment,
    objective: int,
    budget: int,
    config: TD3Config,
    seed: int,
    secondary: bool = True,
    loss_every: int = 1000,
) -> Specialist:
    """Train a TD3 specialist for ``objective`` using exactly ``budget`` environment frames.

    With ``secondary=True`` every other objective gets its own critic trained
    on the same minibatches (joint training); otherwise only the primary
    critic exists and the row must be completed post hoc.
    """
    c = env.contract
    if not 0 <= objective < c.n_objectives:
        raise ValueError(f"objective {objective} out of range for {c.n_objectives} objectives")
    if budget < config.start_timesteps:
        raise PreconditionError(
            f"budget {budget} is smaller than start_timesteps {config.start_timesteps}"
        )
    init_rng, explore_rng, sample_rng, noise_rng, reset_rng = _streams(seed, 5)
    max_action = env.max_action
    policy = mlp(
        c.state_dim,
        c.action_dim,
        config.hidden_dim,
        config.n_hidden,
        seed=init_rng,
        output_activation="tanh",
        output_scale=max_action,
    )
    target_policy = policy.copy()
    actor_opt = OptimizerState.for_network(policy, config.actor_lr)
    row = list(range(c.n_objectives)) if secondary else [objective]
    critics = {m: Critic.create(c.state_dim, c.action_dim, config, init_rng) for m in row}
    buffer = ReplayBuffer(c.state_dim, c.action_dim, c.n_objectives, min(config.buffer_size, budget))
    losses: dict[int, list[float]] = {m: [] for m in row}

    low, high = np.asarray(c.action_low), np.asarray(c.action_high)
    state = env.reset(int(reset_rng.integers(2**63)))
    ep_t = 0
    iterations = 0
    for t in range(budget):
        if t < config.start_timesteps:
            action = explore_rng.uniform(low, high)
        else:
            action = policy.forward(state) + explore_rng.normal(0.0, config.expl_noise * max_action, c.action_dim)
            action = np.clip(action, low, high)
        res = env.step(state, action, t=ep_t)
        buffer.add(state, action, res.reward, res.next_state, res.terminal, source=objective)
        state = res.next_state
        ep_t += 1
        if res.terminal or res.truncated:
            state = env.reset(int(reset_rng.integers(2**63)))
            ep_t = 0

        if t < config.start_timesteps:
            continue
        iterations += 1
        batch = buffer.sample_batch(config.batch_size, sample_rng)
        next_actions = smoothed_target_actions(
            target_policy, batch.next_states, noise_rng, config.policy_noise, config.noise_clip, max_action
        )
        try:
            for m, critic in critics.items():
                loss = td_update_critic(critic, target_policy, batch, m, c.gamma, next_actions=next_actions)
                if iterations % loss_every == 0:
                    losses[m].append(loss)
            if iterations % config.policy_freq == 0:
                _, grad = actor_gradient(policy, critics[objective].net, batch.states)
                apply_update(policy, actor_opt, grad)
                polyak_blend(target_policy, policy, config.tau)
                for critic in critics.values():
                    critic.soft_update(config.tau)
        except DivergenceError as exc:
            raise DivergenceError(
                f"specialist {objective} diverged at frame {t} (update {iterations}): {exc}"
            ) from exc

    log.info("specialist %d trained for %d frames (%d updates)", objective, budget, iterations)
    return Specialist(objective, policy, critics, buffer, frames=budget, seed=seed, losses=losses)


def train_secondary_posthoc(
    buffer: ReplayBuffer,
    objective: int,
    policy: DenseNetwork,
    config: TD3Config,
    seed: int,
    steps: int | None = None,
    gamma: float | None = None,
    loss_every: int = 1000,
) -> tuple[Critic, list[float]]:
    """Fit ``Q_m`` for ``policy`` offline from a static buffer; no environment is touched.

    The update rule is the one used during joint training, with ``policy``
    frozen as the target policy.
    """
    if len(buffer) == 0:
        raise EmptyBufferError("cannot train a critic on an empty buffer")
    if not 0 <= objective < buffer.n_objectives:
        raise ValueError(f"objective {objective} out of range")
    steps = config.posthoc_steps if steps is None else steps
    gamma = config.gamma if gamma is None else gamma
    init_rng, sample_rng, noise_rng = _streams(seed, 3)
    critic = Critic.create(buffer.state_dim, buffer.action_dim, config, init_rng)
    max_action = policy.output_scale
    losses = []
    for i in range(1, steps + 1):
        batch = buffer.sample_batch(config.batch_size, sample_rng)
        loss = td_update_critic(
            critic,
            policy,
            batch,
            objective,
            gamma,
            rng=noise_rng,
            policy_noise=config.policy_noise,
            noise_clip=config.noise_clip,
            max_action=max_action,
        )
        if i % config.policy_freq == 0:
            critic.soft_update(config.tau)
        if i % loss_every == 0:
            losses.append(loss)
    return critic, losses


def td_loss(critic: Critic, policy: DenseNetwork, batch: Batch, objective: int, gamma: float) -> float:
    """Mean squared TD error of ``critic`` on ``batch`` without smoothing noise or updates."""
    next_actions = policy.forward(batch.next_states)
    y = td_targets(critic, batch, next_actions, objective, gamma)
    err = critic.q(batch.states, batch.actions) - y
    return float(np.mean(err * err))


# bundle I/O -------------------------------------------------------------

def critic_filename(k: int, m: int) -> str:
    return f"critic_{k}_{m}.bin"


def save_bundle(spec: Specialist, directory, env_name: str) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    spec.policy.save(d / "policy.bin")
    for m, critic in spec.critics.items():
        critic.save(d / critic_filename(spec.objective, m))
    spec.buffer.save(d / "buffer.bin")
    manifest = {
        "objective": spec.objective,
        "seed": spec.seed,
        "frames": spec.frames,
        "env": env_name,
        "critics": sorted(spec.critics),
        "td_losses": {str(m): v for m, v in spec.losses.items()},
    }
    (d / "bundle.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_bundle(directory) -> Specialist:
    d = Path(directory)
    meta = json.loads((d / "bundle.json").read_text())
    k = int(meta["objective"])
    critics = {int(m): Critic.load(d / critic_filename(k, int(m))) for m in meta["critics"]}
    return Specialist(
        objective=k,
        policy=DenseNetwork.load(d / "policy.bin"),
        critics=critics,
        buffer=ReplayBuffer.load(d / "buffer.bin"),
        frames=int(meta["frames"]),
        seed=int(meta["seed"]),
    )


__all__ = [
    "Critic",
    "DESK_TD3",
    "Specialist",
    "TD3Config",
    "actor_gradient",
    "load_bundle",
    "save_bundle",
    "td_loss",
    "td_update_critic",
    "train_secondary_posthoc",
    "train_specialist",
]
