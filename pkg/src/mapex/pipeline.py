"""Stage orchestration over a run directory.

Run directory layout::

    <out>/config.ini
    <out>/specialists/manifest.json
    <out>/specialists/specialist-<k>/{policy.bin, critic_<k>_<m>.bin, buffer.bin, bundle.json}
    <out>/critics/manifest.json, critic_<k>_<m>.bin          (post-hoc secondary critics)
    <out>/evaluate/manifest.json, evaluations.csv, reference.json
    <out>/extract/manifest.json, metrics.jsonl, archive.csv, front.csv, offspring/offspring-<i>.bin
    <out>/report/manifest.json, front.csv, summary.csv, frames.csv

Each stage writes into a temporary sibling directory and renames it into
place once complete, so a failed stage never leaves partial output. Every
manifest stores a SHA-256 checksum of its own canonical JSON body.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import shutil
import time
import zlib
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import RunConfig
from .envs import evaluate_policy, make_env
from .errors import ChecksumError, MapexError, MissingArtifactError, MissingCriticError
from .extraction import CriticFamily, extract_front
from .nn import DenseNetwork
from .pareto import ParetoArchive, entries_csv, read_entries_csv, reference_point
from .replay import ReplayBuffer
from .specialist import (
    Critic,
    critic_filename,
    load_bundle,
    save_bundle,
    train_secondary_posthoc,
    train_specialist,
)

log = logging.getLogger(__name__)

STAGES = ("train-specialists", "train-critics", "evaluate", "extract", "report")
STAGE_DIRS = {
    "train-specialists": "specialists",
    "train-critics": "critics",
    "evaluate": "evaluate",
    "extract": "extract",
    "report": "report",
}


class AccountingError(MapexError):
    pass


def derive_seed(root: int, *keys) -> int:
    """Deterministic 63-bit seed for a named component of a run."""
    spawn_key = tuple(zlib.crc32(str(k).encode()) for k in keys)
    state = np.random.SeedSequence(root, spawn_key=spawn_key).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def seal_manifest(body: dict) -> dict:
    body = {k: v for k, v in body.items() if k != "checksum"}
    body["checksum"] = hashlib.sha256(_canonical(body).encode()).hexdigest()
    return body


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise MissingArtifactError(f"missing manifest {path}") from None
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"corrupt manifest {path}: {exc}") from None
    recorded = data.get("checksum")
    body = {k: v for k, v in data.items() if k != "checksum"}
    if recorded != hashlib.sha256(_canonical(body).encode()).hexdigest():
        raise ChecksumError(f"manifest checksum mismatch in {path}")
    return data


def _hash_tree(root: Path, base: Path) -> dict[str, str]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            out[p.relative_to(base).as_posix()] = sha256_file(p)
    return out


class RunDirectory:
    def __init__(self, out, cfg: RunConfig):
        self.root = Path(out)
        self.cfg = cfg

    def stage_dir(self, stage: str) -> Path:
        return self.root / STAGE_DIRS[stage]

    def manifest_path(self, stage: str) -> Path:
        return self.stage_dir(stage) / "manifest.json"

    def completed(self, stage: str) -> bool:
        try:
            read_manifest(self.manifest_path(stage))
        except (MissingArtifactError, ChecksumError):
            return False
        return True

    def require(self, stage: str, what: str) -> Path:
        d = self.stage_dir(stage)
        if not self.completed(stage):
            raise MissingArtifactError(f"{what} not found: run `{stage}` first (expected {d})")
        return d

    def specialist_dirs(self) -> list[Path]:
        d = self.require("train-specialists", "specialist bundles")
        n = self.cfg.run.n_objectives
        dirs = [d / f"specialist-{k}" for k in range(n)]
        for p in dirs:
            if not (p / "bundle.json").exists():
                raise MissingArtifactError(f"specialist bundle {p} is missing")
        return dirs


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x: float) -> str:
    return repr(float(x))


# stage bodies --------------------------------------------------------------
# Each takes (run, tmp_dir) and returns (inputs, frames, details).


def _stage_train_specialists(run: RunDirectory, tmp: Path):
    cfg = run.cfg
    env = make_env(cfg.run.env, cfg.run.t_max, cfg.specialist.gamma)
    _check_objectives(cfg, env)
    joint = cfg.run.secondary_critics == "joint"
    seeds = {}
    for k in range(env.n_objectives):
        seed = derive_seed(cfg.run.seed, "specialist", k)
        seeds[k] = seed
        log.info("training specialist %d (seed %d, %d frames)", k, seed, cfg.specialist.budget)
        sp = train_specialist(env, k, cfg.specialist.budget, cfg.td3(), seed, secondary=joint)
        save_bundle(sp, tmp / f"specialist-{k}", cfg.run.env)
    frames = {"training": env.frames.training, "evaluation": env.frames.evaluation}
    return {}, frames, {"seeds": {str(k): s for k, s in seeds.items()}, "secondary_critics": cfg.run.secondary_critics}


def _stage_train_critics(run: RunDirectory, tmp: Path):
    cfg = run.cfg
    inputs = {}
    trained = []
    for d in run.specialist_dirs():
        sp = load_bundle(d)
        inputs.update({f"{d.name}/buffer.bin": sha256_file(d / "buffer.bin"), f"{d.name}/policy.bin": sha256_file(d / "policy.bin")})
        for m in range(cfg.run.n_objectives):
            if m in sp.critics:
                continue
            seed = derive_seed(cfg.run.seed, "posthoc", sp.objective, m)
            log.info("post-hoc critic (%d, %d) for %d steps", sp.objective, m, cfg.specialist.posthoc_steps)
            critic, losses = train_secondary_posthoc(sp.buffer, m, sp.policy, cfg.td3(), seed)
            critic.save(tmp / critic_filename(sp.objective, m))
            trained.append({"k": sp.objective, "m": m, "seed": seed, "td_losses": losses})
    return inputs, {"training": 0, "evaluation": 0}, {"critics": trained}


def _stage_evaluate(run: RunDirectory, tmp: Path):
    cfg = run.cfg
    env = make_env(cfg.run.env, cfg.run.t_max, cfg.specialist.gamma)
    seed = derive_seed(cfg.run.seed, "evaluate")
    rows = []
    inputs = {}
    for d in run.specialist_dirs():
        policy = DenseNetwork.load(d / "policy.bin")
        inputs[f"{d.name}/policy.bin"] = sha256_file(d / "policy.bin")
        j = evaluate_policy(env, policy, cfg.extraction.eval_episodes, seed)
        rows.append((d.name, j))
    ref = reference_point([j for _, j in rows])
    _write_csv(tmp / "evaluations.csv", ["policy_id", *[f"J{i + 1}" for i in range(len(ref))]], [[pid, *map(_fmt, j)] for pid, j in rows])
    (tmp / "reference.json").write_text(json.dumps({"reference": [float(x) for x in ref], "eval_seed": seed}, indent=2))
    return inputs, {"training": env.frames.training, "evaluation": env.frames.evaluation}, {"eval_seed": seed}


def load_critic_family(run: RunDirectory) -> CriticFamily:
    """Critic ``(k, m)`` comes from specialist bundle ``k`` or, failing that, the post-hoc stage."""
    n = run.cfg.run.n_objectives
    family = CriticFamily(n)
    spec_dirs = run.specialist_dirs()
    posthoc = run.stage_dir("train-critics")
    posthoc_ok = run.completed("train-critics")
    for k in range(n):
        for m in range(n):
            name = critic_filename(k, m)
            for base in (spec_dirs[k], posthoc if posthoc_ok else None):
                if base is not None and (base / name).exists():
                    family[k, m] = Critic.load(base / name)
                    break
            else:
                raise MissingCriticError(k, m)
    return family


def _stage_extract(run: RunDirectory, tmp: Path):
    cfg = run.cfg
    family = load_critic_family(run)
    eval_dir = run.require("evaluate", "specialist evaluations")
    spec_dirs = run.specialist_dirs()
    ref_info = json.loads((eval_dir / "reference.json").read_text())
    evaluations = {e.policy_id: e.returns for e in read_entries_csv((eval_dir / "evaluations.csv").read_text())}
    policies = {d.name: DenseNetwork.load(d / "policy.bin") for d in spec_dirs}
    buffers = [ReplayBuffer.load(d / "buffer.bin") for d in spec_dirs]
    inputs = {}
    for d in spec_dirs:
        for p in sorted(d.glob("*.bin")):
            inputs[f"{d.name}/{p.name}"] = sha256_file(p)
    if run.completed("train-critics"):
        for p in sorted(run.stage_dir("train-critics").glob("*.bin")):
            inputs[f"critics/{p.name}"] = sha256_file(p)
    inputs["evaluate/evaluations.csv"] = sha256_file(eval_dir / "evaluations.csv")

    env = make_env(cfg.run.env, cfg.run.t_max, cfg.specialist.gamma)
    xcfg = dataclasses.replace(cfg.extraction, seed=derive_seed(cfg.run.seed, "extract"))
    (tmp / "offspring").mkdir()
    metrics = open(tmp / "metrics.jsonl", "w")

    def on_iteration(rec, child):
        metrics.write(json.dumps(rec.as_dict(), sort_keys=True) + "\n")
        if child is not None:
            child.policy.save(tmp / "offspring" / f"{rec.policy_id}.bin")

    try:
        result = extract_front(
            policies,
            family,
            buffers,
            env,
            xcfg,
            evaluations=evaluations,
            reference=ref_info["reference"],
            eval_seed=ref_info["eval_seed"],
            on_iteration=on_iteration,
        )
    finally:
        metrics.close()
    archive = result.archive
    (tmp / "archive.csv").write_text(entries_csv(archive.entries, archive.n_objectives))
    (tmp / "front.csv").write_text(archive.front_csv())
    frames = {"training": result.training_frames, "evaluation": result.evaluation_frames}
    if frames["training"] != 0:
        raise AccountingError(f"extraction consumed {frames['training']} training frames")
    details = {
        "iterations": xcfg.iterations,
        "new_offspring": len(result.offspring),
        "failed_iterations": sum(r.status != "ok" for r in result.records),
        "eval_episodes": xcfg.eval_episodes,
        "t_max": env.t_max,
        "hypervolume": archive.hypervolume(),
        "front_size": len(archive.front()),
    }
    return inputs, frames, details


def summarize(archive: ParetoArchive, specialist_ids) -> dict:
    spec = ParetoArchive(archive.reference)
    for pid in specialist_ids:
        spec.add(pid, archive.returns(pid))
    return {
        "hypervolume": archive.hypervolume(),
        "sparsity": archive.sparsity(),
        "front_size": len(archive.front()),
        "specialist_hypervolume": spec.hypervolume(),
    }


def _stage_report(run: RunDirectory, tmp: Path):
    ext = run.require("extract", "extraction results")
    eval_dir = run.require("evaluate", "specialist evaluations")
    ref = json.loads((eval_dir / "reference.json").read_text())["reference"]
    entries = read_entries_csv((ext / "archive.csv").read_text())
    archive = ParetoArchive(np.asarray(ref, dtype=np.float64), list(entries))
    specialist_ids = [e.policy_id for e in read_entries_csv((eval_dir / "evaluations.csv").read_text())]
    summary = summarize(archive, specialist_ids)
    (tmp / "front.csv").write_text(archive.front_csv())
    keys = ["hypervolume", "sparsity", "front_size", "specialist_hypervolume"]
    _write_csv(tmp / "summary.csv", keys, [[_fmt(summary[k]) if isinstance(summary[k], float) else summary[k] for k in keys]])
    frames = frame_accounting(run.root)
    _write_csv(
        tmp / "frames.csv",
        ["stage", "training_frames", "evaluation_frames"],
        [[s, f["training"], f["evaluation"]] for s, f in frames.items()],
    )
    inputs = {"extract/archive.csv": sha256_file(ext / "archive.csv")}
    return inputs, {"training": 0, "evaluation": 0}, {"summary": summary}


_BODIES = {
    "train-specialists": _stage_train_specialists,
    "train-critics": _stage_train_critics,
    "evaluate": _stage_evaluate,
    "extract": _stage_extract,
    "report": _stage_report,
}


def _check_objectives(cfg: RunConfig, env) -> None:
    if env.n_objectives != cfg.run.n_objectives:
        raise ValueError(
            f"environment {cfg.run.env} has {env.n_objectives} objectives, config says {cfg.run.n_objectives}"
        )


def run_stage(stage: str, cfg: RunConfig, out=None, force: bool = False) -> dict:
    """Execute one stage into ``out`` (default ``cfg.run.out``); returns its manifest.

    A stage with a valid manifest is skipped unless ``force`` is set.
    """
    if stage not in _BODIES:
        raise ValueError(f"unknown stage {stage!r}; choose from {STAGES}")
    run = RunDirectory(out if out is not None else cfg.run.out, cfg)
    final = run.stage_dir(stage)
    if run.completed(stage) and not force:
        log.info("stage %s already complete in %s; skipping", stage, final)
        manifest = read_manifest(run.manifest_path(stage))
        if manifest.get("config_sha256") != cfg.sha256():
            log.warning("stage %s was produced under a different config; pass --force to recompute", stage)
        manifest["skipped"] = True
        return manifest

    run.root.mkdir(parents=True, exist_ok=True)
    config_mod.save(cfg, run.root / "config.ini")
    tmp = run.root / f".{final.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    started = time.perf_counter()
    try:
        inputs, frames, details = _BODIES[stage](run, tmp)
        body = {
            "stage": stage,
            "root_seed": cfg.run.seed,
            "config_sha256": cfg.sha256(),
            "env": cfg.run.env,
            "frames": frames,
            "wall_time_s": round(time.perf_counter() - started, 3),
            "inputs": {"config.ini": sha256_file(run.root / "config.ini"), **inputs},
            "outputs": _hash_tree(tmp, tmp),
            "details": details,
        }
        manifest = seal_manifest(body)
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        if final.exists():
            old = run.root / f".{final.name}.old-{os.getpid()}"
            final.rename(old)
            tmp.rename(final)
            shutil.rmtree(old)
        else:
            tmp.rename(final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    log.info("stage %s done in %.1fs", stage, manifest["wall_time_s"])
    return manifest


def run_all(cfg: RunConfig, out=None, force: bool = False) -> dict[str, dict]:
    stages = ["train-specialists"]
    if cfg.run.secondary_critics == "posthoc":
        stages.append("train-critics")
    stages += ["evaluate", "extract", "report"]
    return {s: run_stage(s, cfg, out, force) for s in stages}


def frame_accounting(run_dir) -> dict[str, dict[str, int]]:
    """Training/evaluation frames per completed stage, verifying every manifest checksum.

    Raises :class:`AccountingError` if extraction reports any training frames.
    """
    root = Path(run_dir)
    out = {}
    for stage in STAGES:
        path = root / STAGE_DIRS[stage] / "manifest.json"
        if not path.exists():
            continue
        m = read_manifest(path)
        try:
            out[stage] = {"training": int(m["frames"]["training"]), "evaluation": int(m["frames"]["evaluation"])}
        except (KeyError, TypeError, ValueError) as exc:
            raise ChecksumError(f"manifest {path} lacks frame counters: {exc}") from None
    if "extract" in out and out["extract"]["training"] != 0:
        raise AccountingError(f"extraction stage reports {out['extract']['training']} training frames")
    return out


__all__ = [
    "STAGES",
    "AccountingError",
    "derive_seed",
    "frame_accounting",
    "load_critic_family",
    "read_manifest",
    "run_all",
    "run_stage",
]
