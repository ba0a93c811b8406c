"""Classifier-free guidance and its decoupled (text / identity) variants.

Noise predictions are plain ``numpy`` arrays; all predictions combined in one
call must share a shape. Four conditioning slots exist:

    uu    eps(null, null)
    text  eps(c_text, null)
    id    eps(null, c_id)
    full  eps(c_text, c_id)

Each decoupled variant writes its guided prediction as ``eps_uu + term_a +
term_b`` where the two terms are the separately weighted guidance deltas.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .numerics import EPS


class Variant(str, Enum):
    NONE = "none"
    CFG = "CFG"
    DCG1 = "DCG1"
    DCG2 = "DCG2"
    DCG3 = "DCG3"


# conditioning slots each variant evaluates, in evaluation order
REQUIRED_SLOTS = {
    Variant.NONE: ("full",),
    Variant.CFG: ("uu", "full"),
    Variant.DCG1: ("uu", "text", "full"),
    Variant.DCG2: ("uu", "id", "full"),
    Variant.DCG3: ("uu", "text", "id"),
}


RESCALE_REFERENCES = ("predictions", "deltas")
# conditional predictions whose stds anchor the rescale, per variant
RESCALE_SLOTS = {
    Variant.DCG1: ("text", "full"),
    Variant.DCG2: ("id", "full"),
    Variant.DCG3: ("text", "id"),
}


@dataclass
class GuidanceInputs:
    eps_uu: Optional[np.ndarray] = None
    eps_id: Optional[np.ndarray] = None
    eps_text: Optional[np.ndarray] = None
    eps_full: Optional[np.ndarray] = None

    @classmethod
    def from_slots(cls, slots: dict) -> "GuidanceInputs":
        return cls(
            eps_uu=slots.get("uu"),
            eps_id=slots.get("id"),
            eps_text=slots.get("text"),
            eps_full=slots.get("full"),
        )

    def slot(self, name: str) -> Optional[np.ndarray]:
        return getattr(self, f"eps_{name}")


@dataclass
class GuidanceConfig:
    variant: Variant = Variant.DCG2
    alpha_schedule: Sequence[float] = field(default_factory=lambda: [1.0, 1.5, 1.5, 1.0])
    beta_schedule: Sequence[float] = field(default_factory=lambda: [1.0, 3.0, 3.0, 1.0])
    w: float = 1.0
    phi: float = 0.75
    rescale_enabled: bool = True
    # which pair of tensors sets the target std: the conditional predictions
    # entering the two guidance terms, or the weighted deltas themselves
    rescale_reference: str = "predictions"

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.alpha_schedule = [float(a) for a in self.alpha_schedule]
        self.beta_schedule = [float(b) for b in self.beta_schedule]
        if len(self.alpha_schedule) != len(self.beta_schedule):
            raise ConfigError(
                f"alpha_schedule has {len(self.alpha_schedule)} entries, "
                f"beta_schedule has {len(self.beta_schedule)}"
            )
        if not 0.0 <= self.phi <= 1.0:
            raise ConfigError(f"phi must lie in [0, 1], got {self.phi}")
        if self.rescale_reference not in RESCALE_REFERENCES:
            raise ConfigError(
                f"rescale_reference must be one of {RESCALE_REFERENCES}, got {self.rescale_reference!r}"
            )
        if self.rescale_enabled and self.variant in (Variant.NONE, Variant.CFG):
            raise ConfigError(f"rescaling needs a decoupled variant, got {self.variant.value}")

    @property
    def required_slots(self) -> tuple:
        return REQUIRED_SLOTS[self.variant]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "alpha_schedule": list(self.alpha_schedule),
            "beta_schedule": list(self.beta_schedule),
            "w": self.w,
            "phi": self.phi,
            "rescale_enabled": self.rescale_enabled,
            "rescale_reference": self.rescale_reference,
        }


def _same_shape(*arrays: np.ndarray) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"noise predictions differ in shape: {sorted(shapes)}")


def cfg_combine(eps_uu, eps_full, w: float) -> np.ndarray:
    eps_uu = np.asarray(eps_uu, dtype=np.float64)
    eps_full = np.asarray(eps_full, dtype=np.float64)
    _same_shape(eps_uu, eps_full)
    # weight form keeps the w=0 and w=1 endpoints exact
    return (1.0 - w) * eps_uu + w * eps_full


def dcg_terms(variant, inputs: GuidanceInputs, alpha: float, beta: float):
    """Split a decoupled guidance into ``(eps_uu, term_a, term_b)``.

    DCG1: a = alpha (text - uu),  b = beta (full - text)
    DCG2: a = alpha (id - uu),    b = beta (full - id)
    DCG3: a = alpha (text - uu),  b = beta (id - uu)
    """
    variant = Variant(variant)
    if variant not in (Variant.DCG1, Variant.DCG2, Variant.DCG3):
        raise ValueError(f"{variant.value} is not a decoupled guidance variant")
    missing = [s for s in REQUIRED_SLOTS[variant] if inputs.slot(s) is None]
    if missing:
        raise ValueError(f"{variant.value} needs predictions for slots {missing}")
    uu = np.asarray(inputs.eps_uu, dtype=np.float64)
    if variant is Variant.DCG1:
        mid = np.asarray(inputs.eps_text, dtype=np.float64)
        top = np.asarray(inputs.eps_full, dtype=np.float64)
        _same_shape(uu, mid, top)
        return uu, alpha * (mid - uu), beta * (top - mid)
    if variant is Variant.DCG2:
        mid = np.asarray(inputs.eps_id, dtype=np.float64)
        top = np.asarray(inputs.eps_full, dtype=np.float64)
        _same_shape(uu, mid, top)
        return uu, alpha * (mid - uu), beta * (top - mid)
    text = np.asarray(inputs.eps_text, dtype=np.float64)
    ident = np.asarray(inputs.eps_id, dtype=np.float64)
    _same_shape(uu, text, ident)
    return uu, alpha * (text - uu), beta * (ident - uu)


def dcg_combine(variant, inputs: GuidanceInputs, alpha: float, beta: float) -> np.ndarray:
    """``eps_uu + term_a + term_b`` collected per prediction, so unit
    strengths return the telescoped prediction exactly."""
    dcg_terms(variant, inputs, alpha, beta)  # validates slots and shapes
    variant = Variant(variant)
    uu = np.asarray(inputs.eps_uu, dtype=np.float64)
    if variant is Variant.DCG3:
        text = np.asarray(inputs.eps_text, dtype=np.float64)
        ident = np.asarray(inputs.eps_id, dtype=np.float64)
        return (1.0 - alpha - beta) * uu + alpha * text + beta * ident
    mid = np.asarray(inputs.eps_text if variant is Variant.DCG1 else inputs.eps_id, dtype=np.float64)
    top = np.asarray(inputs.eps_full, dtype=np.float64)
    return (1.0 - alpha) * uu + (alpha - beta) * mid + beta * top


def dcg_rescale(eps_dcg, term_a, term_b, phi: float) -> np.ndarray:
    """Blend the guided prediction with a copy whose std is the mean term std.

    The scale factor is ``(std(a) + std(b)) / (2 std(eps_dcg))``; ``phi``
    interpolates between the rescaled (1) and raw (0) prediction.
    """
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi}")
    eps_dcg = np.asarray(eps_dcg, dtype=np.float64)
    term_a = np.asarray(term_a, dtype=np.float64)
    term_b = np.asarray(term_b, dtype=np.float64)
    _same_shape(eps_dcg, term_a, term_b)
    if phi == 0.0:
        return eps_dcg.copy()
    factor = (term_a.std() + term_b.std()) / max(2.0 * eps_dcg.std(), EPS)
    return phi * (factor * eps_dcg) + (1.0 - phi) * eps_dcg


def step_strengths(step_index: int, total_steps: int, config: GuidanceConfig):
    """Effective ``(alpha, beta, w)`` at one sampler step.

    First and last steps always run at unit strength; schedules and ``w``
    only act on the intermediate steps.
    """
    if not 0 <= step_index < total_steps:
        raise IndexError(f"step_index {step_index} outside [0, {total_steps})")
    if config.variant not in (Variant.NONE, Variant.CFG) and len(config.alpha_schedule) != total_steps:
        raise ConfigError(
            f"guidance schedules have {len(config.alpha_schedule)} entries, "
            f"sampler runs {total_steps} steps"
        )
    if step_index == 0 or step_index == total_steps - 1:
        return 1.0, 1.0, 1.0
    if config.variant in (Variant.NONE, Variant.CFG):
        return 1.0, 1.0, float(config.w)
    return config.alpha_schedule[step_index], config.beta_schedule[step_index], float(config.w)


def scheduled_guidance(step_index: int, total_steps: int, config: GuidanceConfig,
                       inputs: GuidanceInputs) -> np.ndarray:
    alpha, beta, w = step_strengths(step_index, total_steps, config)
    if config.variant is Variant.NONE:
        if inputs.eps_full is None:
            raise ValueError("unguided sampling needs the full conditional prediction")
        return np.asarray(inputs.eps_full, dtype=np.float64)
    if config.variant is Variant.CFG:
        return cfg_combine(inputs.eps_uu, inputs.eps_full, w)
    _, a, b = dcg_terms(config.variant, inputs, alpha, beta)
    eps = dcg_combine(config.variant, inputs, alpha, beta)
    if config.rescale_enabled:
        if config.rescale_reference == "predictions":
            a, b = (inputs.slot(s) for s in RESCALE_SLOTS[config.variant])
        eps = dcg_rescale(eps, a, b, config.phi)
    return eps
