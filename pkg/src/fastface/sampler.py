"""Few-step variance-preserving sampler with two denoiser backends.

``gaussian``  exact posterior-mean noise prediction for Gaussian data, so
              every trajectory has a closed form.
``toy``       a seeded two-block network of self-attention, decoupled
              cross-attention and a pointwise MLP acting on the state
              reshaped into tokens.

The update is deterministic DDIM: predict the clean sample from the guided
noise estimate and re-noise it to the next timestep.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attention import AMConfig, DecoupledBlockParams, attention, decoupled_attention
from .errors import ConfigError, NumericError
from .guidance import GuidanceConfig, GuidanceInputs, scheduled_guidance

log = logging.getLogger(__name__)

DEFAULT_TIMESTEPS = (999, 749, 499, 249)
SLOT_CONDITIONS = {"uu": (False, False), "text": (True, False), "id": (False, True), "full": (True, True)}


@dataclass
class NoiseSchedule:
    """Cumulative signal coefficients ``a[t]`` with ``a[0] = 1`` (clean data)."""

    a: np.ndarray
    timesteps: tuple = DEFAULT_TIMESTEPS

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.timesteps = tuple(int(t) for t in self.timesteps)
        if np.any(self.a <= 0) or np.any(self.a > 1):
            raise ConfigError("signal coefficients must lie in (0, 1]")
        if np.any(np.diff(self.a) >= 0):
            raise ConfigError("signal coefficients must strictly decrease in t")
        if any(b >= a for a, b in zip(self.timesteps, self.timesteps[1:])):
            raise ConfigError(f"timesteps must be strictly descending, got {list(self.timesteps)}")
        for t in self.timesteps:
            self._check(t)

    @classmethod
    def linear(cls, timesteps=DEFAULT_TIMESTEPS, beta_start=1e-4, beta_end=2e-2,
               num_train_timesteps=1000) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, num_train_timesteps, dtype=np.float64)
        a = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(a=a, timesteps=timesteps)

    def _check(self, t: int) -> None:
        if not (isinstance(t, (int, np.integer)) and 0 <= t < len(self.a)):
            raise ValueError(f"timestep {t!r} not in schedule [0, {len(self.a) - 1}]")

    def alpha_bar(self, t: int) -> float:
        self._check(t)
        return float(self.a[t])

    def next_timestep(self, step_index: int) -> int:
        ts = self.timesteps
        return ts[step_index + 1] if step_index + 1 < len(ts) else 0

    @property
    def num_steps(self) -> int:
        return len(self.timesteps)


@dataclass
class Condition:
    """One conditioning input.

    ``kind`` is "null", "text", "id" or "joint". The toy backend reads
    ``embedding``; the gaussian backend reads the target ``mu``/``sigma``.
    """

    kind: str = "null"
    embedding: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("null", "text", "id", "joint"):
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if self.kind == "null" and self.embedding is not None:
            raise ValueError("null condition carries no embedding")


@dataclass
class SamplerState:
    x: np.ndarray
    t: int
    step_index: int
    rng_seed: int


def forward_noise(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    a = schedule.alpha_bar(t)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def predict_x0(x_t, eps_hat, a_t: float) -> np.ndarray:
    return (x_t - np.sqrt(1.0 - a_t) * eps_hat) / np.sqrt(a_t)


def ddim_step(state: SamplerState, eps_hat, t_next: int, schedule: NoiseSchedule) -> SamplerState:
    if not t_next < state.t:
        raise ValueError(f"t_next={t_next} must be below the current t={state.t}")
    a_t = schedule.alpha_bar(state.t)
    a_next = schedule.alpha_bar(t_next)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    x0 = predict_x0(state.x, eps_hat, a_t)
    if not np.all(np.isfinite(x0)):
        raise NumericError(f"non-finite clean-sample estimate at t={state.t}")
    x_next = np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * eps_hat
    return SamplerState(x=x_next, t=t_next, step_index=state.step_index + 1, rng_seed=state.rng_seed)


def gaussian_denoiser(x_t, t: int, cond: Condition, schedule: NoiseSchedule) -> np.ndarray:
    """Exact E[eps | x_t] when the data is ``Normal(mu, sigma^2 I)``."""
    a = schedule.alpha_bar(t)
    mu = np.asarray(cond.mu, dtype=np.float64)
    var = float(cond.sigma) ** 2
    return np.sqrt(1.0 - a) * (np.asarray(x_t, dtype=np.float64) - np.sqrt(a) * mu) / (a * var + 1.0 - a)


# ---------------------------------------------------------------- toy network


@dataclass
class ToySpec:
    tokens: int = 16
    width: int = 4
    ctx_tokens: int = 4
    ctx_dim: int = 8
    heads: int = 2
    head_dim: int = 4
    blocks: tuple = ("down", "up")
    weight_seed: int = 0
    adapter_scale: float = 0.8

    @property
    def dim(self) -> int:
        return self.tokens * self.width

    @property
    def embed_dim(self) -> int:
        return self.ctx_tokens * self.ctx_dim


@dataclass
class ToyBlock:
    group: str
    w_self: tuple
    cross: DecoupledBlockParams
    w_out: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class ToyParams:
    spec: ToySpec
    w_in: np.ndarray
    w_time: np.ndarray
    w_read: np.ndarray
    blocks: list = field(default_factory=list)
    schedule: Optional[NoiseSchedule] = None

    def schedule_a(self, t: int) -> float:
        return (self.schedule or NoiseSchedule.linear()).alpha_bar(t)

    @classmethod
    def build(cls, spec: ToySpec, schedule: Optional[NoiseSchedule] = None) -> "ToyParams":
        """Deterministic weights drawn from ``spec.weight_seed``."""
        rng = np.random.default_rng(spec.weight_seed)
        hidden = spec.heads * spec.head_dim

        def lin(n_in, n_out):
            return rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)

        w_in = lin(spec.width, hidden)
        w_time = lin(8, hidden)
        blocks = []
        for group in spec.blocks:
            w_self = (lin(hidden, hidden), lin(hidden, hidden), lin(hidden, hidden))
            cross = DecoupledBlockParams(
                wq=lin(hidden, hidden), wk=lin(spec.ctx_dim, hidden), wv=lin(spec.ctx_dim, hidden),
                wk_id=lin(spec.ctx_dim, hidden), wv_id=lin(spec.ctx_dim, hidden),
                head_dim=spec.head_dim, adapter_scale=spec.adapter_scale,
            )
            blocks.append(ToyBlock(group, w_self, cross, lin(hidden, hidden),
                                   lin(hidden, 2 * hidden), lin(2 * hidden, hidden)))
        w_read = lin(hidden, spec.width)
        return cls(spec, w_in, w_time, w_read, blocks, schedule)


def _time_features(t: int) -> np.ndarray:
    freqs = np.exp(-np.log(1000.0) * np.arange(4) / 4)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _rms(h: np.ndarray) -> np.ndarray:
    return h / np.sqrt(np.mean(h * h, axis=-1, keepdims=True) + 1e-6)


def _context(cond: Optional[Condition], spec: ToySpec) -> np.ndarray:
    if cond is None or cond.kind == "null" or cond.embedding is None:
        return np.zeros((spec.ctx_tokens, spec.ctx_dim))
    emb = np.asarray(cond.embedding, dtype=np.float64)
    if emb.size != spec.embed_dim:
        raise ValueError(f"condition embedding has {emb.size} values, toy network expects {spec.embed_dim}")
    return emb.reshape(spec.ctx_tokens, spec.ctx_dim)


def toy_denoiser(x_t, t: int, cond_text: Optional[Condition], cond_id: Optional[Condition],
                 params: ToyParams, am: AMConfig, step_index: int, total_steps: int,
                 use_id_branch: bool = True, maps_out: Optional[list] = None) -> np.ndarray:
    """Noise prediction of the seeded toy network.

    ``use_id_branch=False`` drops the identity attention entirely. When
    ``maps_out`` is a list, one dict per block with the identity-branch maps
    is appended to it.
    """
    spec = params.spec
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.size != spec.dim:
        raise ValueError(f"state has {x_t.size} values, toy network expects {spec.dim}")
    ctx_text = _context(cond_text, spec)
    ctx_id = _context(cond_id, spec)
    h = x_t.reshape(spec.tokens, spec.width) @ params.w_in + _time_features(t) @ params.w_time
    dh = spec.head_dim
    for i, blk in enumerate(params.blocks):
        u = _rms(h)
        wq, wk, wv = blk.w_self
        split = lambda m: m.reshape(len(m), -1, dh).transpose(1, 0, 2)
        sa, _ = attention(split(u @ wq), split(u @ wk), split(u @ wv))
        h = h + sa.transpose(1, 0, 2).reshape(len(u), -1)
        u = _rms(h)
        cross = blk.cross
        if use_id_branch:
            ca, maps = decoupled_attention(u, cross, ctx_text, ctx_id, am, step_index, total_steps,
                                           block_group=blk.group, return_maps=True)
        else:
            out, _ = attention(split(u @ cross.wq), split(ctx_text @ cross.wk), split(ctx_text @ cross.wv))
            ca, maps = out.transpose(1, 0, 2).reshape(len(u), -1), {"pre": None, "post": None}
        h = h + ca @ blk.w_out
        u = _rms(h)
        h = h + np.tanh(u @ blk.w1) @ blk.w2
        if maps_out is not None:
            maps_out.append({"block": i, "group": blk.group, **maps})
    # unit-variance prior term plus a residual that moves the clean-sample
    # estimate by O(1) at every noise level
    a = params.schedule_a(t)
    net = (_rms(h) @ params.w_read).reshape(x_t.shape)
    return np.sqrt(1.0 - a) * x_t + np.sqrt(a) * net


# ---------------------------------------------------------------- sampling loop


@dataclass
class GaussianTargets:
    """Data distribution behind each conditioning slot of the gaussian backend."""

    uu: Condition
    text: Condition
    id: Condition
    full: Condition

    def slot(self, name: str) -> Condition:
        return getattr(self, name)


@dataclass
class RunSpec:
    backend: str = "gaussian"
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule.linear)
    dim: int = 8
    gaussian: Optional[GaussianTargets] = None
    toy: Optional[ToyParams] = None
    cond_text: Optional[Condition] = None
    cond_id: Optional[Condition] = None

    def __post_init__(self):
        if self.backend not in ("gaussian", "toy"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "gaussian" and self.gaussian is None:
            raise ConfigError("gaussian backend needs per-slot targets")
        if self.backend == "toy":
            if self.toy is None:
                raise ConfigError("toy backend needs network parameters")
            self.dim = self.toy.spec.dim


@dataclass
class Trajectory:
    states: list
    eps: list
    slot_eps: list
    maps: list

    @property
    def final(self) -> np.ndarray:
        return self.states[-1].x


def initial_noise(dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(dim)


def _predict_slot(run: RunSpec, slot: str, state: SamplerState, am: AMConfig, maps: list) -> np.ndarray:
    if run.backend == "gaussian":
        return gaussian_denoiser(state.x, state.t, run.gaussian.slot(slot), run.schedule)
    with_text, with_id = SLOT_CONDITIONS[slot]
    block_maps: list = []
    eps = toy_denoiser(state.x, state.t, run.cond_text if with_text else None,
                       run.cond_id if with_id else None, run.toy, am,
                       state.step_index, run.schedule.num_steps, maps_out=block_maps)
    for m in block_maps:
        maps.append({"step": state.step_index, "t": state.t, "slot": slot, **m})
    return eps


def sample(run: RunSpec, guidance: GuidanceConfig, am: AMConfig, seed: int,
           x_init: Optional[np.ndarray] = None) -> Trajectory:
    """Run the guided few-step loop and keep every intermediate state."""
    n = run.schedule.num_steps
    if guidance.variant.value not in ("none", "CFG") and len(guidance.alpha_schedule) != n:
        raise ConfigError(
            f"guidance schedules have {len(guidance.alpha_schedule)} entries, sampler runs {n} steps"
        )
    x = initial_noise(run.dim, seed) if x_init is None else np.asarray(x_init, dtype=np.float64)
    if x.shape != (run.dim,):
        raise ConfigError(f"initial state has shape {x.shape}, expected ({run.dim},)")
    state = SamplerState(x=x, t=run.schedule.timesteps[0], step_index=0, rng_seed=seed)
    traj = Trajectory(states=[state], eps=[], slot_eps=[], maps=[])
    for i in range(n):
        slots = {s: _predict_slot(run, s, state, am, traj.maps) for s in guidance.required_slots}
        eps = scheduled_guidance(i, n, guidance, GuidanceInputs.from_slots(slots))
        state = ddim_step(state, eps, run.schedule.next_timestep(i), run.schedule)
        log.debug("step %d -> t=%d |x|=%.4g", i, state.t, float(np.linalg.norm(state.x)))
        traj.states.append(state)
        traj.eps.append(eps)
        traj.slot_eps.append(slots)
    return traj
