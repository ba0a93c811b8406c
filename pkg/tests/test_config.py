import json

import pytest

from fastface.config import DEFAULTS, canonical_json, load, resolve, validate
from fastface.errors import ConfigError, DataIOError
from fastface.runs import am_from, guidance_from, sweep_cells


def test_defaults_resolve_and_build():
    cfg = resolve()
    assert cfg == DEFAULTS
    g = guidance_from(cfg)
    assert g.variant.value == "DCG2" and list(g.alpha_schedule) == [1.0, 1.5, 1.5, 1.0]
    assert am_from(cfg).kind == "scale_power"


def test_partial_override_merges():
    cfg = resolve({"guidance": {"phi": 0.0}, "attention": {"kind": "none"}})
    assert cfg["guidance"]["phi"] == 0.0
    assert cfg["guidance"]["variant"] == "DCG2"
    assert cfg["attention"]["s_up"] == 1.55


def test_unknown_key_reports_path():
    with pytest.raises(ConfigError, match=r"guidance: Additional properties .*'gamma'"):
        resolve({"guidance": {"gamma": 1}})
    with pytest.raises(ConfigError, match="<root>"):
        resolve({"bogus": {}})


def test_bad_values_report_path():
    with pytest.raises(ConfigError, match="attention/quantile_p"):
        resolve({"attention": {"quantile_p": 1.5}})
    with pytest.raises(ConfigError, match="guidance/variant"):
        resolve({"guidance": {"variant": "DCG4"}})
    with pytest.raises(ConfigError, match="sampler/timesteps/1"):
        resolve({"sampler": {"timesteps": [999, 0]}})


def test_explicit_sweep_replaces_default():
    cfg = resolve({"sweep": {"alpha": [1.5, 2.0], "beta": [3.0, 4.0]}})
    assert "adapter_scale" not in cfg["sweep"]
    assert len(sweep_cells(cfg)) == 4
    assert len(sweep_cells(resolve())) == 6


def test_load(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"sampler": {"backend": "gaussian"}}))
    assert load(p)["sampler"]["backend"] == "gaussian"
    p.write_text("{\n  \"sampler\": oops}")
    with pytest.raises(ConfigError, match="line 2"):
        load(p)
    with pytest.raises(DataIOError):
        load(tmp_path / "missing.json")


def test_canonical_json_stable():
    a = canonical_json({"b": 1, "a": [1, 2]})
    assert a == canonical_json({"a": [1, 2], "b": 1})
    assert a.endswith("\n")


def test_validate_accepts_full_defaults():
    validate(DEFAULTS)
