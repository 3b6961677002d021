"""Run configuration: a plain-text INI file with three sections.

``[run]`` holds the environment, root seed and stage toggles; ``[specialist]``
the TD3 settings plus the per-objective frame budget; ``[extraction]`` the
extraction settings. Every key is optional and falls back to the desk-scale
defaults below. ``serialize`` writes every key, annotated with the full-scale
value, and ``parse(serialize(cfg)) == cfg`` holds for any valid config.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .extraction import DESK_EXTRACTION, ExtractionConfig
from .specialist import DESK_TD3, TD3Config

SECONDARY_MODES = ("joint", "posthoc")


@dataclass
class RunSettings:
    env: str = "mo-pointmass"
    n_objectives: int = 2
    seed: int = 0
    t_max: int = 100
    secondary_critics: str = "joint"
    out: str = "run"

    def __post_init__(self):
        if self.secondary_critics not in SECONDARY_MODES:
            raise ValueError(f"secondary_critics must be one of {SECONDARY_MODES}")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")


@dataclass
class SpecialistSettings(TD3Config):
    budget: int = 30_000


def _desk_specialist() -> SpecialistSettings:
    return SpecialistSettings(**dataclasses.asdict(DESK_TD3))


def _desk_extraction() -> ExtractionConfig:
    return dataclasses.replace(DESK_EXTRACTION)


@dataclass
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    specialist: SpecialistSettings = field(default_factory=_desk_specialist)
    extraction: ExtractionConfig = field(default_factory=_desk_extraction)

    def td3(self) -> TD3Config:
        values = {f.name: getattr(self.specialist, f.name) for f in fields(TD3Config)}
        return TD3Config(**values)

    def sha256(self) -> str:
        return hashlib.sha256(serialize(self, annotate=False).encode()).hexdigest()


# Full-scale values, one entry per config key that has a full-scale counterpart.
# ``extraction.epochs/beta/omega_max`` are task specific; see TASK_EXTRACTION.
FULL_SCALE = {
    "specialist": {
        "budget": 2_000_000,
        "start_timesteps": 25_000,
        "gamma": 0.99,
        "tau": 0.005,
        "hidden_dim": 256,
        "actor_lr": 3e-4,
        "critic_lr": 3e-4,
        "batch_size": 256,
        "buffer_size": 1_000_000,
        "expl_noise": 0.1,
        "policy_noise": 0.2,
        "noise_clip": 0.5,
        "policy_freq": 2,
    },
    "extraction": {
        "iterations": 1200,
        "hybrid_size": 200_000,
        "warmup_steps": 1000,
        "warmup_lr": 3e-4,
        "warmup_batch_size": 256,
        "eval_episodes": 5,
        "hidden_dim": 256,
    },
    "run": {"t_max": 750},
}

# (epochs, beta, omega_max) per MuJoCo task, and specialist frames per objective.
TASK_EXTRACTION = {
    "ant": (20, 0.5, 1.0),
    "hopper": (10, 0.1, 20.0),
    "swimmer": (10, 1.0, 20.0),
    "walker2d": (20, 0.5, 20.0),
    "halfcheetah": (20, 1.0, 1.0),
}
TASK_BUDGET = {"ant": 2_000_000, "hopper": 2_000_000, "swimmer": 1_000_000, "walker2d": 2_000_000, "halfcheetah": 2_000_000}


def full_scale(task: str = "swimmer") -> RunConfig:
    """Full-scale settings; ``task`` picks the task-specific extraction values."""
    cfg = RunConfig()
    for section, values in FULL_SCALE.items():
        for key, value in values.items():
            setattr(getattr(cfg, section), key, value)
    epochs, beta, omega_max = TASK_EXTRACTION[task]
    cfg.extraction.epochs = epochs
    cfg.extraction.beta = beta
    cfg.extraction.omega_max = omega_max
    cfg.specialist.budget = TASK_BUDGET[task]
    return cfg


_SECTIONS = ("run", "specialist", "extraction")
# derived from [run] seed per stage, never read from the file
_SKIP = {("extraction", "seed")}


def _convert(kind, raw: str, where: str):
    try:
        if kind in (bool, "bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw.replace("_", ""))
        if kind in (float, "float"):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ValueError(f"{where}: cannot read {raw!r} as {kind}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    unknown = set(cp.sections()) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    cfg = RunConfig()
    for section in _SECTIONS:
        if not cp.has_section(section):
            continue
        target = getattr(cfg, section)
        kinds = {f.name: f.type for f in fields(target) if (section, f.name) not in _SKIP}
        values = dataclasses.asdict(target)
        for key, raw in cp.items(section):
            if key not in kinds:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            values[key] = _convert(kinds[key], raw, f"[{section}] {key}")
        setattr(cfg, section, type(target)(**values))
    return cfg


def serialize(cfg: RunConfig, annotate: bool = True) -> str:
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            if (section, f.name) in _SKIP:
                continue
            line = f"{f.name} = {_format(getattr(obj, f.name))}"
            full = FULL_SCALE.get(section, {}).get(f.name)
            if annotate and full is not None:
                line += f"  # full scale: {_format(full)}"
            lines.append(line)
        lines.append("")
    return "\n".join(lines)


def load(path) -> RunConfig:
    return parse(Path(path).read_text())


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(serialize(cfg))
