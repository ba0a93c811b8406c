"""Decoupled cross-attention and transforms of its attention maps.

A decoupled block adds a second attention branch over identity tokens to the
usual text cross-attention::

    z_new = Attn(z; Q, K, V) + adapter_scale * f(softmax(Q K'^T / sqrt(d))) V'

``f`` is one of

* identity (``kind="none"``),
* scale-power ``s * A**p``,
* scheduled softmask: a quantile-anchored double-sigmoid soft binarisation
  whose steepness ``d`` is larger on the first step, blended with a copy
  re-modulated to the original map statistics.

Maps are handled as arrays whose last two axes are (query, token); leading
axes (heads, batches) are independent maps. Statistics (min/max, quantile,
mean/std) are taken over a whole map, never per row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .numerics import adain_axes, minmax_norm, sigmoid, softmax_rows

MAP_AXES = (-2, -1)
GROUPS = ("down", "mid", "up")
KINDS = ("none", "scale_power", "scheduled_softmask")


@dataclass
class AttentionMap:
    probs: np.ndarray
    block_group: str
    step_index: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.block_group not in GROUPS:
            raise ValueError(f"unknown block group {self.block_group!r}")
        if self.probs.ndim < 2 or self.probs.shape[-1] < 1:
            raise ValueError(f"attention map needs shape (..., n_query, n_tokens), got {self.probs.shape}")
        if not np.allclose(self.probs.sum(axis=-1), 1.0, atol=1e-6, rtol=0):
            raise ValueError("attention map rows must sum to 1")


@dataclass
class AMConfig:
    kind: str = "none"
    s_down: float = 1.45
    s_up: float = 1.55
    p_power: float = 1.3
    quantile_p: float = 0.65
    d_first: float = 7.5
    d_rest: float = 5.0
    s_first: float = 1.0
    blend_w: float = 0.7
    target_groups: frozenset = field(default_factory=lambda: frozenset({"down", "up"}))
    invert_first_token: bool = True
    adain_output: bool = True
    # +1 pushes entries above the quantile up; -1 is the mirrored variant
    softmask_sign: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"attention kind must be one of {KINDS}, got {self.kind!r}")
        self.target_groups = frozenset(self.target_groups)
        unknown = self.target_groups - set(GROUPS)
        if unknown:
            raise ConfigError(f"unknown target groups {sorted(unknown)}")
        for name in ("quantile_p", "blend_w"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("s_down", "s_up", "s_first", "d_first", "d_rest"):
            v = getattr(self, name)
            if not v > 0:
                raise ConfigError(f"{name} must be > 0, got {v}")
        if self.softmask_sign not in (1.0, -1.0):
            raise ConfigError(f"softmask_sign must be +1 or -1, got {self.softmask_sign}")

    @classmethod
    def scale_power_defaults(cls, **kw) -> "AMConfig":
        return cls(**{"kind": "scale_power", "s_down": 1.45, "s_up": 1.55, "p_power": 1.3, **kw})

    @classmethod
    def scheduled_softmask_defaults(cls, **kw) -> "AMConfig":
        return cls(**{"kind": "scheduled_softmask", "s_down": 1.55, "s_up": 1.55, "quantile_p": 0.65,
                      "d_first": 7.5, "d_rest": 5.0, "blend_w": 0.7, **kw})

    def group_scale(self, group: str) -> float:
        # mid blocks reuse the up-block scale
        return self.s_down if group == "down" else self.s_up

    def active_for(self, group: str) -> bool:
        return self.kind != "none" and group in self.target_groups

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "s_down": self.s_down,
            "s_up": self.s_up,
            "p_power": self.p_power,
            "quantile_p": self.quantile_p,
            "d_first": self.d_first,
            "d_rest": self.d_rest,
            "s_first": self.s_first,
            "blend_w": self.blend_w,
            "target_groups": sorted(self.target_groups),
            "invert_first_token": self.invert_first_token,
            "adain_output": self.adain_output,
            "softmask_sign": self.softmask_sign,
        }


@dataclass
class DecoupledBlockParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wk_id: np.ndarray
    wv_id: np.ndarray
    head_dim: int
    adapter_scale: float = 1.0

    def __post_init__(self):
        if self.head_dim <= 0:
            raise ValueError(f"head_dim must be positive, got {self.head_dim}")
        if not np.isfinite(self.adapter_scale) or self.adapter_scale < 0:
            raise ValueError(f"adapter_scale must be finite and >= 0, got {self.adapter_scale}")
        inner = self.wq.shape[1]
        if inner % self.head_dim:
            raise ValueError(f"Wq inner dim {inner} is not a multiple of head_dim {self.head_dim}")
        for name in ("wk", "wv", "wk_id", "wv_id"):
            if getattr(self, name).shape[1] != inner:
                raise ValueError(
                    f"{name} projects to {getattr(self, name).shape[1]} dims, Wq to {inner}"
                )

    @property
    def n_heads(self) -> int:
        return self.wq.shape[1] // self.head_dim


def scale_power(a, s: float, p: float) -> np.ndarray:
    """Elementwise ``s * a**p``; rows are not renormalised."""
    return s * np.power(np.asarray(a, dtype=np.float64), p)


def softmask(a, d: float, p: float, s: float = 1.0, sign: float = 1.0) -> np.ndarray:
    """Soft binarisation of a map around its ``p``-quantile.

    ``s * sigmoid(norm(sigmoid(sign * d * (norm(a) - Q_p(norm(a))))))`` with
    min-max ``norm`` over each map. Entries above the quantile move toward
    the top of the output range when ``sign`` is +1.
    """
    if not d > 0:
        raise ValueError(f"softmask steepness must be > 0, got {d}")
    a = np.asarray(a, dtype=np.float64)
    n = minmax_norm(a, axis=MAP_AXES)
    q = np.quantile(n, p, axis=MAP_AXES, method="linear", keepdims=True)
    inner = sigmoid(sign * d * (n - q))
    return s * sigmoid(minmax_norm(inner, axis=MAP_AXES))


def invert_first_token(a) -> np.ndarray:
    """Reflect the first token column inside its own [min, max] range."""
    a = np.array(a, dtype=np.float64)
    col = a[..., 0]
    a[..., 0] = (col.max(axis=-1, keepdims=True) + col.min(axis=-1, keepdims=True)) - col
    return a


def _blend_adain(original, transformed, w: float) -> np.ndarray:
    mu = original.mean(axis=MAP_AXES, keepdims=True)
    sd = original.std(axis=MAP_AXES, keepdims=True)
    return w * transformed + (1.0 - w) * adain_axes(mu, sd, transformed, axis=MAP_AXES)


def adain_block_output(original, transformed, w: float) -> np.ndarray:
    original = np.asarray(original, dtype=np.float64)
    transformed = np.asarray(transformed, dtype=np.float64)
    if original.shape != transformed.shape:
        raise ValueError(f"shape mismatch: {original.shape} vs {transformed.shape}")
    return _blend_adain(original, transformed, w)


def softmask_params(config: AMConfig, step_index: int, group: str):
    """``(d, s)`` used by the scheduled softmask at this step."""
    if step_index == 0:
        return config.d_first, config.s_first
    return config.d_rest, config.group_scale(group)


def scheduled_softmask(a, config: AMConfig, step_index: int, group: str = "up",
                       d: Optional[float] = None, s: Optional[float] = None) -> np.ndarray:
    """Scheduled softmask with AdaIN blending toward the input statistics.

    ``d``/``s`` override the step schedule when given.
    """
    d_sched, s_sched = softmask_params(config, step_index, group)
    d = d_sched if d is None else d
    s = s_sched if s is None else s
    a = np.asarray(a, dtype=np.float64)
    src = invert_first_token(a) if config.invert_first_token else a
    m = softmask(src, d, config.quantile_p, s=s, sign=config.softmask_sign)
    out = _blend_adain(src, m, config.blend_w)
    return invert_first_token(out) if config.invert_first_token else out


def transform_map(a, config: AMConfig, step_index: int, group: str) -> np.ndarray:
    """Apply the configured map transform for a block in ``group``."""
    if not config.active_for(group):
        return np.asarray(a, dtype=np.float64)
    if config.kind == "scale_power":
        return scale_power(a, config.group_scale(group), config.p_power)
    return scheduled_softmask(a, config, step_index, group)


def _heads(x: np.ndarray, head_dim: int) -> np.ndarray:
    n, inner = x.shape
    return x.reshape(n, inner // head_dim, head_dim).transpose(1, 0, 2)


def _merge(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _check_proj(x, w, name, ctx_name):
    if x.ndim != 2:
        raise ValueError(f"{ctx_name} must be 2-D, got shape {x.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"{name} expects inputs of width {w.shape[0]}, {ctx_name} has width {x.shape[1]}")


def attention(q, k, v) -> tuple:
    """Multi-head scaled dot-product attention on (heads, n, d) arrays."""
    probs = softmax_rows(q @ k.transpose(0, 2, 1), scale=1.0 / np.sqrt(q.shape[-1]))
    return probs @ v, probs


def decoupled_attention(z, params: DecoupledBlockParams, context_text, context_id,
                        transform: AMConfig, step_index: int, total_steps: int,
                        block_group: str = "up", return_maps: bool = False):
    """Text cross-attention plus the scaled, transformed identity branch.

    Returns the merged-head output of shape (n_query, inner). With
    ``return_maps`` a dict with the identity-branch maps before ("pre") and
    after ("post") the transform is returned as well; "post" is ``None`` when
    the identity branch is off or the transform does not act on this block.
    """
    if not 0 <= step_index < total_steps:
        raise IndexError(f"step_index {step_index} outside [0, {total_steps})")
    z = np.asarray(z, dtype=np.float64)
    context_text = np.asarray(context_text, dtype=np.float64)
    context_id = np.asarray(context_id, dtype=np.float64)
    _check_proj(z, params.wq, "Wq", "z")
    _check_proj(context_text, params.wk, "Wk", "context_text")
    _check_proj(context_text, params.wv, "Wv", "context_text")
    _check_proj(context_id, params.wk_id, "Wk_id", "context_id")
    _check_proj(context_id, params.wv_id, "Wv_id", "context_id")

    dh = params.head_dim
    q = _heads(z @ params.wq, dh)
    out, _ = attention(q, _heads(context_text @ params.wk, dh), _heads(context_text @ params.wv, dh))
    maps = {"pre": None, "post": None}
    if params.adapter_scale == 0.0:
        merged = _merge(out)
        return (merged, maps) if return_maps else merged

    v_id = _heads(context_id @ params.wv_id, dh)
    probs = softmax_rows(q @ _heads(context_id @ params.wk_id, dh).transpose(0, 2, 1),
                         scale=1.0 / np.sqrt(dh))
    maps["pre"] = probs
    id_out = probs @ v_id
    if transform.active_for(block_group):
        new = transform_map(probs, transform, step_index, block_group)
        maps["post"] = new
        transformed = new @ v_id
        if transform.kind == "scheduled_softmask" and transform.adain_output:
            transformed = adain_block_output(id_out, transformed, transform.blend_w)
        id_out = transformed
    merged = _merge(out + params.adapter_scale * id_out)
    return (merged, maps) if return_maps else merged
