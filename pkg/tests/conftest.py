import dataclasses

import numpy as np
import pytest

from mapex.config import RunConfig
from mapex.envs import make_env
from mapex.specialist import TD3Config, train_specialist

TINY_TD3 = TD3Config(start_timesteps=200, hidden_dim=16, batch_size=32, buffer_size=10_000, posthoc_steps=200)


def tiny_run_config(secondary: str = "joint", seed: int = 0) -> RunConfig:
    cfg = RunConfig()
    cfg.run = dataclasses.replace(cfg.run, t_max=20, seed=seed, secondary_critics=secondary)
    cfg.specialist = dataclasses.replace(
        cfg.specialist, budget=600, start_timesteps=200, hidden_dim=16, batch_size=32, posthoc_steps=100
    )
    cfg.extraction = dataclasses.replace(
        cfg.extraction, iterations=4, hybrid_size=400, warmup_steps=20, hidden_dim=16, epochs=2
    )
    return cfg


@pytest.fixture(scope="session")
def tiny_specialists():
    env = make_env("mo-pointmass", t_max=20)
    specs = [train_specialist(env, k, 800, TINY_TD3, seed=10 + k) for k in range(2)]
    # later tests evaluate on the same env, so keep the counters as they were after training
    env.frames_after_training = dataclasses.replace(env.frames)
    return env, specs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
