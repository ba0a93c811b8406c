"""Reading and writing the on-disk artifacts: manifests, records, metric CSVs."""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, DataIOError
from .evaluation import (
    CSV_COLUMNS,
    METRIC_COLUMNS,
    EvalRecord,
    IdentityRecord,
    Manifest,
    ParetoPoint,
    Prompt,
    check_manifest,
)
from .tensorio import git_blob_hash, read_tensor

_embedding = {"anyOf": [{"type": "string"}, {"type": "array", "items": {"type": "number"}, "minItems": 1}]}

MANIFEST_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["identities", "prompts"],
    "properties": {
        "protocol": {"enum": ["custom", "full"]},
        "identities": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["id", "group", "embedding"],
            "properties": {
                "id": {"type": "string"},
                "group": {"type": "object", "additionalProperties": False,
                          "required": ["gender", "age"],
                          "properties": {"gender": {"type": "string"}, "age": {"type": "string"}}},
                "embedding": _embedding,
            }}},
        "prompts": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["id", "setting"],
            "properties": {
                "id": {"type": "string"},
                "setting": {"enum": ["realistic", "stylistic"]},
                "text": {"type": "string"},
                "embedding": _embedding,
            }}},
    },
}

RECORD_LABELS = ("model", "config", "lora_scale", "adapter_scale")


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _embedding(value, base: Path) -> np.ndarray:
    if isinstance(value, str):
        return read_tensor(base / value).astype(np.float64).ravel()
    return np.asarray(value, dtype=np.float64)


def load_manifest(path) -> Manifest:
    path = Path(path)
    doc = read_json(path)
    errors = sorted(jsonschema.Draft202012Validator(MANIFEST_SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("\n".join(
            f"{path}: {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors))
    base = path.parent
    try:
        identities = [IdentityRecord(i["id"], (i["group"]["gender"], i["group"]["age"]),
                                     _embedding(i["embedding"], base)) for i in doc["identities"]]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    prompts = [Prompt(p["id"], p["setting"],
                      _embedding(p["embedding"], base) if "embedding" in p else None,
                      p.get("text", "")) for p in doc["prompts"]]
    protocol = doc.get("protocol", "custom")
    check_manifest(identities, prompts, protocol)
    return Manifest(identities, prompts, protocol)


def record_to_dict(rec: EvalRecord, labels: dict) -> dict:
    return {**{k: labels[k] for k in RECORD_LABELS},
            "identity_id": rec.identity_id, "prompt_id": rec.prompt_id, "setting": rec.setting,
            "id_sim": rec.id_sim, "clip": rec.clip, "ae": rec.ae, "ir": rec.ir, "fsc": rec.fsc,
            "face_found": rec.face_found}


def dump_records(records, labels: dict) -> str:
    return "".join(json.dumps(record_to_dict(r, labels), sort_keys=True) + "\n" for r in records)


def load_records(records_dir) -> list:
    """All ``*.jsonl`` files in a directory, as ``(labels, EvalRecord)`` pairs."""
    records_dir = Path(records_dir)
    if not records_dir.is_dir():
        raise DataIOError(f"records directory {records_dir} does not exist")
    out = []
    for f in sorted(records_dir.glob("*.jsonl")):
        for n, line in enumerate(f.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                labels = tuple(d.pop(k) for k in RECORD_LABELS)
                out.append((labels, EvalRecord(**d)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{f}:{n}: bad record: {exc}") from exc
    if not out:
        raise DataIOError(f"no records found in {records_dir}")
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(rows: list, extra: tuple = ()) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = CSV_COLUMNS + tuple(extra)
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def read_metrics_csv(path) -> list:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.DictReader(_io.StringIO(text)))
    if not rows or any(c not in rows[0] for c in CSV_COLUMNS):
        raise ConfigError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
    out = []
    for r in rows:
        d = dict(r)
        for c in ("lora_scale", "adapter_scale") + METRIC_COLUMNS:
            d[c] = None if d[c] == "" else float(d[c])
        out.append(d)
    return out


def fronts_json(fronts: dict) -> str:
    return json.dumps({k: [p.to_dict() for p in v] for k, v in fronts.items()}, sort_keys=True, indent=2) + "\n"


def points_from_rows(rows, objectives: dict) -> list:
    pts = []
    for r in rows:
        coords = {k: r[k] for k in objectives}
        if any(v is None for v in coords.values()):
            continue
        pts.append(ParetoPoint(f"{r['model']}/{r['config']}/lora={r['lora_scale']}/adapter={r['adapter_scale']}",
                               coords, dict(objectives)))
    return pts


class ArtifactWriter:
    """Writes files under one directory and keeps their content hashes."""

    def __init__(self, root):
        self.root = Path(root)
        self.files: dict = {}
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataIOError(f"cannot create {self.root}: {exc}") from exc

    def write_bytes(self, rel: str, data: bytes) -> Path:
        p = self.root / rel
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_bytes(data)
        except OSError as exc:
            raise DataIOError(f"cannot write {p}: {exc}") from exc
        self.files[rel] = git_blob_hash(data)
        return p

    def write_text(self, rel: str, text: str) -> Path:
        return self.write_bytes(rel, text.encode())

    def figure(self, rel: str, fig) -> None:
        from .plotting import save

        buf = _io.BytesIO()
        save(fig, buf)
        self.write_bytes(rel, buf.getvalue())

    def manifest(self, extra: dict) -> None:
        listing = "".join(f"{h}  {name}\n" for name, h in sorted(self.files.items()))
        doc = {**extra, "files": dict(sorted(self.files.items())),
               "content_hash": git_blob_hash(listing.encode())}
        data = (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode()
        p = self.root / "manifest.json"
        try:
            p.write_bytes(data)
        except OSError as exc:
            raise DataIOError(f"cannot write {p}: {exc}") from exc
