import numpy as np
import pytest

from mapex.envs import evaluate_policy, make_env
from mapex.errors import PreconditionError
from mapex.nn import mlp
from mapex.replay import Batch, ReplayBuffer
from mapex.specialist import (
    DESK_TD3,
    Critic,
    TD3Config,
    actor_gradient,
    critic_filename,
    load_bundle,
    save_bundle,
    td_loss,
    td_targets,
    td_update_critic,
    train_secondary_posthoc,
    train_specialist,
)

from conftest import TINY_TD3


def one_row_batch(reward, terminal, state_dim=4, action_dim=2):
    return Batch(
        np.zeros((1, state_dim)) + 0.3,
        np.zeros((1, action_dim)) + 0.2,
        np.array([reward], dtype=float),
        np.ones((1, state_dim)),
        np.array([float(terminal)]),
        np.zeros(1, dtype=np.int64),
    )


def test_full_scale_defaults():
    cfg = TD3Config()
    assert (cfg.gamma, cfg.tau, cfg.batch_size) == (0.99, 0.005, 256)
    assert (cfg.start_timesteps, cfg.policy_freq, cfg.expl_noise) == (25_000, 2, 0.1)
    assert (cfg.policy_noise, cfg.noise_clip, cfg.buffer_size) == (0.2, 0.5, 1_000_000)


def test_terminal_target_is_reward():
    critic = Critic.create(4, 2, TINY_TD3, 0)
    batch = one_row_batch([0.0, 1.0], terminal=True)
    assert td_targets(critic, batch, np.zeros((1, 2)), 1, 0.99)[0] == 1.0


def test_zero_discount_target_is_reward():
    critic = Critic.create(4, 2, TINY_TD3, 0)
    batch = one_row_batch([0.7, -2.0], terminal=False)
    assert td_targets(critic, batch, np.full((1, 2), 0.5), 0, 0.0)[0] == 0.7


def test_single_transition_regression_converges():
    critic = Critic(Critic.create(4, 2, TINY_TD3, 1).nets, lr=1e-3)
    policy = mlp(4, 2, 8, seed=0, output_activation="tanh")
    batch = one_row_batch([1.0, 0.0], terminal=True)
    for _ in range(2000):
        td_update_critic(critic, policy, batch, 0, 0.99)
    assert critic.q(batch.states, batch.actions)[0] == pytest.approx(1.0, abs=1e-2)


def test_twin_critics_bootstrap_from_the_minimum():
    critic = Critic.create(4, 2, TD3Config(hidden_dim=8, twin_critics=True), 2)
    s, a = np.ones((3, 4)), np.zeros((3, 2))
    expected = np.minimum(*(t.forward(np.hstack([s, a]))[:, 0] for t in critic.targets))
    assert np.array_equal(critic.target_q(s, a), expected)


def closed_on_policy_chain(policy, n=32, seed=0):
    """Transitions s_i -> s_{i+1 mod n} taken by ``policy``, with zero objective-2 reward.

    Every bootstrap query (s', pi(s')) is itself a buffer pair, so zero is the exact fixed point.
    """
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(n, 4)) * 0.5
    buf = ReplayBuffer(4, 2, 2, n)
    for i in range(n):
        buf.add(states[i], policy.forward(states[i]), [rng.normal(), 0.0], states[(i + 1) % n], False)
    return buf


def test_posthoc_zero_reward_fixed_point():
    policy = mlp(4, 2, 16, seed=1, output_activation="tanh")
    buf = closed_on_policy_chain(policy)
    env = make_env("mo-pointmass")
    before = (env.frames.training, env.frames.evaluation)
    cfg = TD3Config(hidden_dim=16, batch_size=32, critic_lr=1e-3, tau=0.1, policy_noise=0.0)
    critic, _ = train_secondary_posthoc(buf, 1, policy, cfg, seed=3, steps=6000)
    data = buf.all()
    assert np.max(np.abs(critic.q(data.states, data.actions))) < 1e-2
    assert (env.frames.training, env.frames.evaluation) == before


def test_specialist_budget_precondition():
    with pytest.raises(PreconditionError):
        train_specialist(make_env("mo-pointmass"), 0, 100, TINY_TD3, seed=0)


def test_specialist_frames_and_buffer(tiny_specialists):
    env, specs = tiny_specialists
    frames = env.frames_after_training
    assert frames.training == 2 * 800 and frames.evaluation == 0
    assert env.frames.training == 2 * 800
    for s in specs:
        assert s.frames == 800 and len(s.buffer) == 800
        # every critic in row k only ever sees D_k
        assert np.all(s.buffer.sources[:800] == s.objective)
        assert sorted(s.critics) == [0, 1]


def test_secondary_critics_do_not_touch_the_actor():
    env = make_env("mo-pointmass", t_max=20)
    with_secondary = train_specialist(env, 0, 500, TINY_TD3, seed=4, secondary=True)
    primary_only = train_specialist(env, 0, 500, TINY_TD3, seed=4, secondary=False)
    assert sorted(primary_only.critics) == [0]
    assert np.array_equal(with_secondary.policy.params, primary_only.policy.params)
    assert np.array_equal(with_secondary.primary.net.params, primary_only.primary.net.params)


def test_actor_gradient_uses_only_the_given_critic(tiny_specialists):
    _, specs = tiny_specialists
    s = specs[0]
    states = s.buffer.states[:64]
    _, grad = actor_gradient(s.policy, s.primary.net, states)
    s.critics[1].net.params[:] += 1.0
    try:
        _, again = actor_gradient(s.policy, s.primary.net, states)
    finally:
        s.critics[1].net.params[:] -= 1.0
    assert np.array_equal(grad, again)


def test_actor_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    policy = mlp(4, 2, 5, seed=rng, output_activation="tanh")
    qnet = mlp(6, 1, 5, seed=rng)
    states = rng.normal(size=(7, 4))

    def objective():
        return -float(np.mean(qnet.forward(np.hstack([states, policy.forward(states)]))))

    _, grad = actor_gradient(policy, qnet, states)
    base = policy.params.copy()
    for i in range(0, base.size, 3):
        policy.params[i] = base[i] + 1e-6
        up = objective()
        policy.params[i] = base[i] - 1e-6
        down = objective()
        policy.params[i] = base[i]
        assert grad[i] == pytest.approx((up - down) / 2e-6, abs=1e-6)


def test_training_is_deterministic():
    env = make_env("mo-pointmass", t_max=20)
    a = train_specialist(env, 1, 400, TINY_TD3, seed=9)
    b = train_specialist(env, 1, 400, TINY_TD3, seed=9)
    assert np.array_equal(a.policy.params, b.policy.params)
    assert a.buffer.transitions() == b.buffer.transitions()


def test_joint_and_posthoc_losses_are_comparable(tiny_specialists, capsys):
    _, specs = tiny_specialists
    s = specs[0]
    critic, _ = train_secondary_posthoc(s.buffer, 1, s.policy, TINY_TD3, seed=5, steps=600)
    batch = s.buffer.sample_batch(500, np.random.default_rng(0))
    joint = td_loss(s.critics[1], s.policy, batch, 1, TINY_TD3.gamma)
    posthoc = td_loss(critic, s.policy, batch, 1, TINY_TD3.gamma)
    with capsys.disabled():
        print(f"\n  secondary critic TD loss: joint {joint:.3g}, post hoc {posthoc:.3g}")
    assert np.isfinite(joint) and np.isfinite(posthoc)


def test_bundle_round_trip(tiny_specialists, tmp_path):
    _, specs = tiny_specialists
    s = specs[1]
    meta = save_bundle(s, tmp_path / "b", "mo-pointmass")
    assert meta["objective"] == 1 and meta["frames"] == 800 and meta["env"] == "mo-pointmass"
    assert (tmp_path / "b" / critic_filename(1, 0)).exists()
    back = load_bundle(tmp_path / "b")
    assert np.array_equal(back.policy.params, s.policy.params)
    assert back.buffer.transitions() == s.buffer.transitions()
    for m in (0, 1):
        assert np.array_equal(back.critics[m].net.params, s.critics[m].net.params)


@pytest.mark.slow
def test_desk_specialist_learns_to_move_forward():
    env = make_env("mo-pointmass", t_max=100)
    spec = train_specialist(env, 0, 30_000, DESK_TD3, seed=0, secondary=False)
    forward = evaluate_policy(env, spec.policy, 5, seed=1)[0]
    # the zero policy never moves, so its forward return is exactly 0
    assert forward > 0.0
