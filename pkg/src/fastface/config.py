"""Run configuration: one JSON document, validated before any compute.

Missing sections and keys take the defaults below; unknown keys are errors.
The resolved (defaults-merged) document is what gets written to run
manifests.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError, DataIOError

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_frac = {"type": "number", "minimum": 0, "maximum": 1}
_int = {"type": "integer"}
_nums = {"type": "array", "items": _num}
_bool = {"type": "boolean"}
_group = {"enum": ["down", "mid", "up"]}


def _obj(props: dict, **extra) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, **extra}


_target = _obj({"mu": {"anyOf": [_num, {"type": "array", "items": _num, "minItems": 1}]},
                "sigma": {"type": "number", "minimum": 0}}, required=["mu", "sigma"])

SCHEMA = _obj({
    "sampler": _obj({
        "backend": {"enum": ["gaussian", "toy"]},
        "timesteps": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "beta_start": _pos,
        "beta_end": _pos,
        "num_train_timesteps": {"type": "integer", "minimum": 2},
        "dim": {"type": "integer", "minimum": 1},
    }),
    "guidance": _obj({
        "variant": {"enum": ["none", "CFG", "DCG1", "DCG2", "DCG3"]},
        "alpha_schedule": _nums,
        "beta_schedule": _nums,
        "w": _num,
        "phi": _frac,
        "rescale_enabled": _bool,
        "rescale_reference": {"enum": ["predictions", "deltas"]},
    }),
    "attention": _obj({
        "kind": {"enum": ["none", "scale_power", "scheduled_softmask"]},
        "s_down": _pos, "s_up": _pos, "p_power": _pos,
        "quantile_p": _frac,
        "d_first": _pos, "d_rest": _pos, "s_first": _pos,
        "blend_w": _frac,
        "target_groups": {"type": "array", "items": _group, "uniqueItems": True},
        "invert_first_token": _bool,
        "adain_output": _bool,
        "softmask_sign": {"enum": [1, -1, 1.0, -1.0]},
    }),
    "toy": _obj({
        "tokens": {"type": "integer", "minimum": 1},
        "width": {"type": "integer", "minimum": 1},
        "ctx_tokens": {"type": "integer", "minimum": 1},
        "ctx_dim": {"type": "integer", "minimum": 1},
        "heads": {"type": "integer", "minimum": 1},
        "head_dim": {"type": "integer", "minimum": 1},
        "blocks": {"type": "array", "items": _group, "minItems": 1},
        "weight_seed": {"type": "integer", "minimum": 0},
        "adapter_scale": {"type": "number", "minimum": 0},
    }),
    "gaussian": _obj({"uu": _target, "text": _target, "id": _target, "full": _target}),
    "eval": _obj({
        "model": {"type": "string"},
        "config_label": {"type": "string"},
        "lora_scale": _num,
        "setting": {"enum": ["realistic", "stylistic"]},
        "n_identities": {"type": "integer", "minimum": 1},
        "n_prompts": {"type": "integer", "minimum": 1},
        "identity_index": {"type": "integer", "minimum": 0},
        "prompt_index": {"type": "integer", "minimum": 0},
        "embedding_seed": {"type": "integer", "minimum": 0},
        "scorer_seed": {"type": "integer", "minimum": 0},
        "face_energy": {"type": "number", "minimum": 0},
        "embed_dim": {"type": "integer", "minimum": 1},
    }),
    "sweep": _obj({
        "adapter_scale": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "alpha": _nums,
        "beta": _nums,
    }),
})

DEFAULTS = {
    "sampler": {"backend": "toy", "timesteps": [999, 749, 499, 249], "beta_start": 1e-4,
                "beta_end": 2e-2, "num_train_timesteps": 1000, "dim": 8},
    "guidance": {"variant": "DCG2", "alpha_schedule": [1.0, 1.5, 1.5, 1.0],
                 "beta_schedule": [1.0, 3.0, 3.0, 1.0], "w": 1.0, "phi": 0.75,
                 "rescale_enabled": True, "rescale_reference": "predictions"},
    "attention": {"kind": "scale_power", "s_down": 1.45, "s_up": 1.55, "p_power": 1.3,
                  "quantile_p": 0.65, "d_first": 7.5, "d_rest": 5.0, "s_first": 1.0,
                  "blend_w": 0.7, "target_groups": ["down", "up"], "invert_first_token": True,
                  "adain_output": True, "softmask_sign": 1},
    "toy": {"tokens": 16, "width": 4, "ctx_tokens": 4, "ctx_dim": 8, "heads": 2, "head_dim": 4,
            "blocks": ["down", "up"], "weight_seed": 0, "adapter_scale": 0.8},
    "gaussian": {"uu": {"mu": 0.0, "sigma": 1.0}, "text": {"mu": 0.5, "sigma": 0.5},
                 "id": {"mu": -0.5, "sigma": 0.5}, "full": {"mu": 1.0, "sigma": 0.25}},
    "eval": {"model": "toy", "config_label": "FF_AM1", "lora_scale": 1.0, "setting": "realistic",
             "n_identities": 3, "n_prompts": 3, "identity_index": 0, "prompt_index": 0,
             "embedding_seed": 7, "scorer_seed": 1234, "face_energy": 0.05, "embed_dim": 32},
    "sweep": {"adapter_scale": [0.1, 0.35, 0.5, 0.65, 0.8, 0.95]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc, source: str = "<config>") -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            path = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{source}: {path}: {e.message}")
        raise ConfigError("\n".join(lines))


def resolve(doc: dict | None = None, source: str = "<config>") -> dict:
    """Validate ``doc`` and merge it over the defaults."""
    doc = {} if doc is None else doc
    validate(doc, source)
    # an explicit sweep grid replaces the default one rather than merging with it
    if "sweep" in doc:
        doc = dict(doc)
        merged = _merge({k: v for k, v in DEFAULTS.items() if k != "sweep"}, doc)
        merged["sweep"] = copy.deepcopy(doc["sweep"])
    else:
        merged = _merge(DEFAULTS, doc)
    validate(merged, source)
    return merged


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return resolve(doc, str(path))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"
