"""Turn a resolved config into sampler runs, scored records and metric rows."""
from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass

import numpy as np

from .attention import AMConfig
from .errors import ConfigError
from .evaluation import SyntheticScorers, aggregate
from .guidance import GuidanceConfig
from .sampler import (
    Condition,
    GaussianTargets,
    NoiseSchedule,
    RunSpec,
    ToyParams,
    ToySpec,
    Trajectory,
    sample,
)


def guidance_from(cfg: dict) -> GuidanceConfig:
    return GuidanceConfig(**cfg["guidance"])


def am_from(cfg: dict) -> AMConfig:
    a = dict(cfg["attention"])
    a["softmask_sign"] = float(a["softmask_sign"])
    return AMConfig(**a)


def toy_spec_from(cfg: dict) -> ToySpec:
    t = dict(cfg["toy"])
    t["blocks"] = tuple(t["blocks"])
    return ToySpec(**t)


def embed_dim(cfg: dict) -> int:
    if cfg["sampler"]["backend"] == "toy":
        return toy_spec_from(cfg).embed_dim
    return cfg["eval"]["embed_dim"]


def unit_embedding(seed: int, kind: int, index: int, dim: int) -> np.ndarray:
    v = np.random.default_rng([seed, kind, index]).standard_normal(dim)
    return v / np.linalg.norm(v)


def pair_seed(seed: int, identity: int, prompt: int) -> int:
    return int(np.random.SeedSequence([seed, identity, prompt]).generate_state(1)[0])


def schedule_from(cfg: dict) -> NoiseSchedule:
    s = cfg["sampler"]
    return NoiseSchedule.linear(tuple(s["timesteps"]), s["beta_start"], s["beta_end"],
                                s["num_train_timesteps"])


def run_spec(cfg: dict, identity: int = 0, prompt: int = 0) -> RunSpec:
    schedule = schedule_from(cfg)
    backend = cfg["sampler"]["backend"]
    if backend == "gaussian":
        dim = cfg["sampler"]["dim"]
        slots = {}
        for name, kind in (("uu", "null"), ("text", "text"), ("id", "id"), ("full", "joint")):
            t = cfg["gaussian"][name]
            mu = np.broadcast_to(np.asarray(t["mu"], dtype=np.float64), (dim,)).copy() \
                if np.ndim(t["mu"]) == 0 or len(t["mu"]) == dim else None
            if mu is None:
                raise ConfigError(f"gaussian/{name}/mu has {len(t['mu'])} entries, sampler dim is {dim}")
            slots[name] = Condition(kind=kind, mu=mu, sigma=float(t["sigma"]))
        return RunSpec(backend="gaussian", schedule=schedule, dim=dim, gaussian=GaussianTargets(**slots))
    spec = toy_spec_from(cfg)
    seed = cfg["eval"]["embedding_seed"]
    return RunSpec(
        backend="toy",
        schedule=schedule,
        toy=ToyParams.build(spec, schedule),
        cond_text=Condition("text", embedding=unit_embedding(seed, 1, prompt, spec.embed_dim)),
        cond_id=Condition("id", embedding=unit_embedding(seed, 0, identity, spec.embed_dim)),
    )


def scorers_from(cfg: dict, image_dim: int) -> SyntheticScorers:
    e = cfg["eval"]
    return SyntheticScorers(image_dim=image_dim, embed_dim=embed_dim(cfg), seed=e["scorer_seed"],
                            face_energy=e["face_energy"])


@dataclass
class PairResult:
    identity: int
    prompt: int
    seed: int
    trajectory: Trajectory
    record: object


def run_pair(cfg: dict, seed: int, identity: int, prompt: int) -> PairResult:
    """Sample one (identity, prompt) pair and score the final state."""
    run = run_spec(cfg, identity, prompt)
    s = pair_seed(seed, identity, prompt)
    traj = sample(run, guidance_from(cfg), am_from(cfg), s)
    e = cfg["eval"]
    dim = embed_dim(cfg)
    id_emb = unit_embedding(e["embedding_seed"], 0, identity, dim)
    text_emb = unit_embedding(e["embedding_seed"], 1, prompt, dim)
    rec = scorers_from(cfg, run.dim).score(traj.final, f"id{identity:03d}", f"p{prompt:03d}",
                                           e["setting"], id_emb, text_emb)
    return PairResult(identity, prompt, s, traj, rec)


def run_cell(cfg: dict, seed: int) -> tuple:
    """Score the identities x prompts product of one configuration."""
    e = cfg["eval"]
    records = [run_pair(cfg, seed, i, j).record
               for i in range(e["n_identities"]) for j in range(e["n_prompts"])]
    return records, aggregate(records)


def metrics_row(cfg: dict, metrics: dict) -> dict:
    e = cfg["eval"]
    return {"model": e["model"], "config": e["config_label"], "lora_scale": e["lora_scale"],
            "adapter_scale": cfg["toy"]["adapter_scale"], **metrics}


def sweep_cells(cfg: dict) -> list:
    """Expand the sweep grid into per-cell configs, in grid iteration order."""
    grid = cfg.get("sweep") or {}
    cells = []
    if "adapter_scale" in grid and ("alpha" in grid or "beta" in grid):
        raise ConfigError("sweep: give either adapter_scale or alpha/beta, not both")
    if "adapter_scale" in grid:
        for lam in grid["adapter_scale"]:
            c = copy.deepcopy(cfg)
            c["toy"]["adapter_scale"] = float(lam)
            cells.append(({"adapter_scale": float(lam)}, c))
    elif "alpha" in grid or "beta" in grid:
        alphas = grid.get("alpha", [None])
        betas = grid.get("beta", [None])
        n = len(cfg["sampler"]["timesteps"])
        for a, b in itertools.product(alphas, betas):
            c = copy.deepcopy(cfg)
            g = c["guidance"]
            # grid values fill every intermediate step; boundary steps stay clamped anyway
            if a is not None:
                g["alpha_schedule"] = [1.0] + [float(a)] * (n - 2) + [1.0] if n > 1 else [float(a)]
            if b is not None:
                g["beta_schedule"] = [1.0] + [float(b)] * (n - 2) + [1.0] if n > 1 else [float(b)]
            cells.append(({"alpha": a, "beta": b}, c))
    if not cells:
        raise ConfigError("sweep grid is empty")
    return cells
