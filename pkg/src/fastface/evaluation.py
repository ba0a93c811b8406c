"""Evaluation protocol: identity filtering, metric aggregation, Pareto fronts.

Scorers (face embedder, CLIP, aesthetic, ImageReward) are pluggable. The
synthetic scorers shipped here are deterministic functions of the sampled
state and the condition embeddings, good enough to drive the protocol logic
end to end without any real model.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .errors import ConfigError
from .numerics import mean_std

log = logging.getLogger(__name__)

SETTINGS = ("realistic", "stylistic")
# full protocol: 54 identities x 40 stylistic / 80 realistic prompts
PROTOCOL_IDENTITIES = 54
PROTOCOL_PROMPTS = {"stylistic": 40, "realistic": 80}
METRIC_COLUMNS = ("ID", "CLIP", "AE", "IR", "FSC", "FFC")
CSV_COLUMNS = ("model", "config", "lora_scale", "adapter_scale") + METRIC_COLUMNS


@dataclass
class IdentityRecord:
    id: str
    group: tuple
    embedding: np.ndarray

    def __post_init__(self):
        self.group = tuple(self.group)
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        norm = np.linalg.norm(self.embedding)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"identity {self.id}: embedding norm {norm:.8f} is not 1")


@dataclass
class EvalRecord:
    identity_id: str
    prompt_id: str
    setting: str
    id_sim: Optional[float]
    clip: float
    ae: float
    ir: float
    fsc: Optional[float]
    face_found: bool

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if (self.id_sim is None) == bool(self.face_found):
            raise ValueError(
                f"record {self.identity_id}/{self.prompt_id}: id_sim must be absent exactly when no face is found"
            )


@dataclass
class ParetoPoint:
    config_label: str
    coordinates: dict
    maximize: dict

    def __post_init__(self):
        if set(self.coordinates) != set(self.maximize):
            raise ValueError(f"{self.config_label}: coordinates and maximize flags name different metrics")
        for k, v in self.coordinates.items():
            if not math.isfinite(v):
                raise ValueError(f"{self.config_label}: coordinate {k} is not finite")

    def to_dict(self) -> dict:
        return {"config_label": self.config_label, "coordinates": dict(self.coordinates),
                "maximize": dict(self.maximize)}


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def filter_identities(group: Sequence[IdentityRecord], threshold: float = 0.3):
    """Greedy pruning of near-duplicate identities within one group.

    While some member's mean similarity to the other remaining members is
    above ``threshold``, drop the member with the largest mean. Returns
    ``(kept, discarded)`` with discarded in removal order.
    """
    members = list(group)
    if len(members) < 2:
        log.warning("identity group of size %d left unchanged", len(members))
        return members, []
    emb = np.stack([m.embedding / np.linalg.norm(m.embedding) for m in members])
    sim = emb @ emb.T
    # zero the diagonal rather than subtract it: (1 + s) - 1 is not always s
    np.fill_diagonal(sim, 0.0)
    alive = list(range(len(members)))
    discarded = []
    while len(alive) >= 2:
        sub = sim[np.ix_(alive, alive)]
        means = sub.sum(axis=1) / (len(alive) - 1)
        worst = int(np.argmax(means))
        if not means[worst] > threshold:
            break
        discarded.append(members[alive.pop(worst)])
    return [members[i] for i in alive], discarded


def _mean(values: list) -> Optional[float]:
    return float(np.mean(values)) if values else None


def aggregate(records: Sequence[EvalRecord], setting: Optional[str] = None) -> dict:
    """Metric row: ID over found faces, CLIP/AE/IR over all, FSC over
    stylistic records with a face, FFC = number of records without a face."""
    if setting is not None:
        records = [r for r in records if r.setting == setting]
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    found = [r for r in records if r.face_found]
    return {
        "ID": _mean([r.id_sim for r in found]),
        "CLIP": _mean([r.clip for r in records]),
        "AE": _mean([r.ae for r in records]),
        "IR": _mean([r.ir for r in records]),
        "FSC": _mean([r.fsc for r in found if r.setting == "stylistic" and r.fsc is not None]),
        "FFC": len(records) - len(found),
    }


def dominates(q: ParetoPoint, p: ParetoPoint) -> bool:
    better = False
    for k, up in q.maximize.items():
        a, b = (q.coordinates[k], p.coordinates[k]) if up else (p.coordinates[k], q.coordinates[k])
        if a < b:
            return False
        better = better or a > b
    return better


def pareto_front(points: Sequence[ParetoPoint]) -> list:
    """Non-dominated subset, in input order.

    Points are visited best-first on a lexicographic key so that nothing
    visited later can dominate an earlier front member; each point is then
    only compared against the current front.
    """
    points = list(points)
    if not points:
        return []
    names = set(points[0].coordinates)
    flags = dict(points[0].maximize)
    for p in points:
        if set(p.coordinates) != names or dict(p.maximize) != flags:
            raise ValueError(f"point {p.config_label!r} has a different coordinate set or maximize flags")
    keys = sorted(names)

    def key(i):
        p = points[i]
        return tuple(-p.coordinates[k] if flags[k] else p.coordinates[k] for k in keys)

    front: list = []
    for i in sorted(range(len(points)), key=key):
        if not any(dominates(points[j], points[i]) for j in front):
            front.append(i)
    return [points[i] for i in sorted(front)]


@dataclass
class DistributionStats:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    min: float
    max: float

    def to_dict(self) -> dict:
        return {"edges": [float(e) for e in self.edges], "counts": [int(c) for c in self.counts],
                "mean": self.mean, "std": self.std, "min": self.min, "max": self.max}


def distribution_stats(values, bins: int = 20) -> DistributionStats:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("distribution of an empty value list")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(v, bins=bins, range=(v.min(), v.max()))
    st = mean_std(v)
    return DistributionStats(edges, counts, st.mean, st.std, float(v.min()), float(v.max()))


# ---------------------------------------------------------------- scorers


class FaceScorer(Protocol):
    def __call__(self, image: np.ndarray, identity: np.ndarray) -> Optional[float]: ...


class TextScorer(Protocol):
    def __call__(self, image: np.ndarray, text: np.ndarray) -> float: ...


class QualityScorer(Protocol):
    def __call__(self, image: np.ndarray) -> float: ...


@dataclass
class SyntheticScorers:
    """Deterministic stand-ins for the face, CLIP, aesthetic and reward models.

    The "image" is the sampled state. Fixed random projections map it to
    face and text embedding spaces; a face counts as found when the face
    projection carries at least ``face_energy`` of the image energy.
    """

    image_dim: int
    embed_dim: int
    seed: int = 1234
    face_energy: float = 0.05
    face_fraction: float = 0.25
    _p_face: np.ndarray = field(init=False, repr=False)
    _p_text: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self._p_face = rng.standard_normal((self.embed_dim, self.image_dim)) / np.sqrt(self.image_dim)
        self._p_text = rng.standard_normal((self.embed_dim, self.image_dim)) / np.sqrt(self.image_dim)

    def _face_region(self, image):
        n = max(1, int(round(self.face_fraction * image.size)))
        crop = np.zeros_like(image)
        crop[:n] = image[:n]
        return crop

    def face(self, image, identity) -> Optional[float]:
        f = self._p_face @ image
        if f @ f < self.face_energy * (image @ image) or not np.any(f):
            return None
        return cosine_sim(f, identity)

    def clip(self, image, text) -> float:
        return cosine_sim(self._p_text @ image, text)

    def face_style(self, image, style) -> Optional[float]:
        crop = self._face_region(image)
        if not np.any(crop):
            return None
        return cosine_sim(self._p_text @ crop, style)

    def aesthetic(self, image) -> float:
        rough = np.mean(np.abs(np.diff(image)))
        return float(5.0 + 2.0 * np.tanh(1.0 - rough))

    def reward(self, image) -> float:
        return float(np.tanh(np.std(image) - 1.0))

    def score(self, image, identity_id: str, prompt_id: str, setting: str,
              id_embedding, text_embedding, style_embedding=None) -> EvalRecord:
        image = np.asarray(image, dtype=np.float64)
        sim = self.face(image, id_embedding)
        found = sim is not None
        fsc = None
        if setting == "stylistic" and found:
            fsc = self.face_style(image, text_embedding if style_embedding is None else style_embedding)
        return EvalRecord(identity_id, prompt_id, setting, sim, self.clip(image, text_embedding),
                          self.aesthetic(image), self.reward(image), fsc, found)


# ---------------------------------------------------------------- manifests


@dataclass
class Prompt:
    id: str
    setting: str
    embedding: np.ndarray
    text: str = ""


@dataclass
class Manifest:
    identities: list
    prompts: list
    protocol: str = "custom"

    def prompts_for(self, setting: str) -> list:
        return [p for p in self.prompts if p.setting == setting]

    def expected_count(self, setting: str) -> int:
        return len(self.identities) * len(self.prompts_for(setting))


def check_manifest(identities: Sequence[IdentityRecord], prompts: Sequence[Prompt],
                   protocol: str = "custom") -> None:
    """Uniqueness and, for the full protocol, the 54 x 40 / 54 x 80 product sizes."""
    for kind, ids in (("identity", [i.id for i in identities]), ("prompt", [p.id for p in prompts])):
        seen = set()
        for x in ids:
            if x in seen:
                raise ConfigError(f"duplicated {kind} id {x!r}")
            seen.add(x)
    for p in prompts:
        if p.setting not in SETTINGS:
            raise ConfigError(f"prompt {p.id!r}: unknown setting {p.setting!r}")
    if protocol == "full":
        n_id = len(identities)
        for setting, n_prompts in PROTOCOL_PROMPTS.items():
            got = sum(p.setting == setting for p in prompts)
            if n_id != PROTOCOL_IDENTITIES or got != n_prompts:
                raise ConfigError(
                    f"{setting} set is {n_id} x {got} = {n_id * got} examples; the full protocol "
                    f"expects {PROTOCOL_IDENTITIES} x {n_prompts} = {PROTOCOL_IDENTITIES * n_prompts}"
                )
    elif protocol != "custom":
        raise ConfigError(f"unknown protocol {protocol!r}")


def check_record_counts(records: Sequence[EvalRecord], manifest: Manifest) -> None:
    """Every (identity, prompt) pair of the manifest product appears exactly once."""
    id_set = {i.id for i in manifest.identities}
    by_setting: dict = {}
    for r in records:
        by_setting.setdefault(r.setting, []).append(r)
    for setting, recs in by_setting.items():
        prompts = {p.id for p in manifest.prompts_for(setting)}
        expected = manifest.expected_count(setting)
        if len(recs) != expected:
            raise ConfigError(
                f"{setting}: {len(recs)} records, expected {len(manifest.identities)} identities x "
                f"{len(prompts)} prompts = {expected} (full protocol: {PROTOCOL_IDENTITIES} x "
                f"{PROTOCOL_PROMPTS[setting]} = {PROTOCOL_IDENTITIES * PROTOCOL_PROMPTS[setting]})"
            )
        pairs = set()
        for r in recs:
            if r.identity_id not in id_set or r.prompt_id not in prompts:
                raise ConfigError(f"{setting}: record {r.identity_id}/{r.prompt_id} is not in the manifest")
            if (r.identity_id, r.prompt_id) in pairs:
                raise ConfigError(f"{setting}: duplicated record {r.identity_id}/{r.prompt_id}")
            pairs.add((r.identity_id, r.prompt_id))


def group_identities(identities: Iterable[IdentityRecord]) -> dict:
    groups: dict = {}
    for rec in identities:
        groups.setdefault(rec.group, []).append(rec)
    return groups
