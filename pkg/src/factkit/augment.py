"""Synthesize labeled consistency data from wizard datapoints.

Each datapoint yields one consistent record plus up to two corrupted records
per enabled method: random pairing (swap response or knowledge with another
datapoint's), negation (toggle the first auxiliary in response or knowledge),
and entity swapping (replace a context/knowledge entity that the response
relies on).  Corruption is always confined to the single named field.

Randomness is Python's Mersenne Twister, one stream per (datapoint, variant)
seeded from SHA-256 of ``seed|source_id|variant``, so outputs are independent
of input ordering and reproducible bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import textops
from .corpus import CORRUPTIONS, ConsistencyRecord, DataPoint
from .errors import FactkitError

METHODS = ("pairing", "negation", "entity")
_CORRUPTION_ORDER = {name: i for i, name in enumerate(CORRUPTIONS)}


@dataclass(frozen=True)
class AugmentConfig:
    methods: frozenset[str]
    seed: int
    entity_same_label_only: bool = True

    def __post_init__(self):
        if not self.methods:
            raise FactkitError("methods must be non-empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise FactkitError(f"unknown augmentation methods: {sorted(unknown)}")

    @classmethod
    def from_names(cls, names: Iterable[str], seed: int,
                   entity_same_label_only: bool = True) -> "AugmentConfig":
        return cls(frozenset(names), seed, entity_same_label_only)


@dataclass
class DatasetStats:
    n_consistent: int = 0
    n_pairing: int = 0
    n_negation: int = 0
    n_entity: int = 0
    n_skipped_negation: int = 0
    n_skipped_entity: int = 0

    def as_dict(self) -> dict[str, int]:
        return dataclasses.asdict(self)


def stream_seed(seed: int, source_id: str, variant: str) -> int:
    """Derive the 64-bit per-record RNG seed; also stored as seed_trace."""
    digest = hashlib.sha256(f"{seed}|{source_id}|{variant}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def random_pair(dataset: Sequence[DataPoint], i: int, target: str,
                rng: random.Random) -> ConsistencyRecord:
    """Replace datapoint i's response (or knowledge) with a uniformly drawn
    j != i from the same dataset.

    Draws are restricted to donors whose text actually differs so the
    corrupted field never equals the original; only a pathological dataset
    where every other text is identical falls back to any j != i.
    """
    if target not in ("response", "knowledge"):
        raise FactkitError(f"random_pair target must be response or knowledge, got {target!r}")
    if len(dataset) < 2:
        raise FactkitError("pairing requires >=2 datapoints")
    dp = dataset[i]
    own = getattr(dp, target)
    # Rejection sampling stays uniform over the differing-text donors and
    # avoids an O(n) scan per draw; the scan only runs for duplicate-heavy data.
    j = None
    for _ in range(32):
        draw = rng.randrange(len(dataset) - 1)
        if draw >= i:
            draw += 1
        if getattr(dataset[draw], target) != own:
            j = draw
            break
    if j is None:
        candidates = [c for c in range(len(dataset))
                      if c != i and getattr(dataset[c], target) != own]
        if not candidates:
            candidates = [c for c in range(len(dataset)) if c != i]
        j = candidates[rng.randrange(len(candidates))]
    donor = dataset[j]
    if target == "response":
        return ConsistencyRecord(dp.context, dp.knowledge, donor.response,
                                 "inconsistent", "pair_response", dp.source_id)
    return ConsistencyRecord(dp.context, donor.knowledge, dp.response,
                             "inconsistent", "pair_knowledge", dp.source_id)


def apply_negation(dp: DataPoint, target: str) -> ConsistencyRecord | None:
    """Negate the response or the knowledge; ``None`` when no auxiliary exists."""
    if target not in ("response", "knowledge"):
        raise FactkitError(f"negation target must be response or knowledge, got {target!r}")
    negated = textops.negate_sentence(getattr(dp, target))
    if negated is None:
        return None
    if target == "response":
        return ConsistencyRecord(dp.context, dp.knowledge, negated,
                                 "inconsistent", "negate_response", dp.source_id)
    return ConsistencyRecord(dp.context, negated, dp.response,
                             "inconsistent", "negate_knowledge", dp.source_id)


def _whole_word_sub(text: str, old: str, new: str) -> str:
    pattern = re.compile(rf"(?<!\w){re.escape(old)}(?!\w)")
    return pattern.sub(lambda _m: new, text)


def entity_swap(dp: DataPoint, target: str, rng: random.Random, *,
                same_label_only: bool = True,
                target_entities: list[textops.Entity] | None = None,
                response_entities: list[textops.Entity] | None = None,
                ) -> ConsistencyRecord | None:
    """Swap out an entity the response shares with the context or knowledge.

    The first common entity (in target-field order) that has a replacement
    candidate is chosen; the replacement is sampled uniformly from the
    target-side entity occurrences with a different surface (same label only,
    unless ``same_label_only`` is off).  Every whole-word occurrence of the
    common entity inside the target field is rewritten; the response is never
    touched.  ``None`` when no swap is possible.
    """
    if target not in ("context", "knowledge"):
        raise FactkitError(f"entity_swap target must be context or knowledge, got {target!r}")

    if target == "knowledge":
        ents = target_entities if target_entities is not None \
            else textops.tag_entities(dp.knowledge)
    else:
        if target_entities is not None:
            ents = target_entities
        else:
            ents = []
            for utt in dp.context:
                ents.extend(textops.tag_entities(utt))
    resp_ents = response_entities if response_entities is not None \
        else textops.tag_entities(dp.response)

    commons = textops.common_entities(ents, resp_ents)
    seen: set[str] = set()
    for common in commons:
        if common.surface in seen:
            continue
        seen.add(common.surface)
        candidates = [e for e in ents if e.surface != common.surface
                      and (not same_label_only or e.label == common.label)]
        if not candidates:
            continue
        chosen = candidates[rng.randrange(len(candidates))]
        if target == "knowledge":
            new_knowledge = _whole_word_sub(dp.knowledge, common.surface, chosen.surface)
            return ConsistencyRecord(dp.context, new_knowledge, dp.response,
                                     "inconsistent", "swap_knowledge", dp.source_id)
        new_context = tuple(_whole_word_sub(utt, common.surface, chosen.surface)
                            for utt in dp.context)
        return ConsistencyRecord(new_context, dp.knowledge, dp.response,
                                 "inconsistent", "swap_context", dp.source_id)
    return None


def _sidecar_entities(sidecar: Mapping[str, list[textops.Entity]] | None,
                      dp: DataPoint, field: str) -> list[textops.Entity] | None:
    if sidecar is None:
        return None
    if field == "context":
        keys = [f"{dp.source_id}#context:{i}" for i in range(len(dp.context))]
        if not any(k in sidecar for k in keys):
            return None
        ents: list[textops.Entity] = []
        for k in keys:
            ents.extend(sidecar.get(k, []))
        return ents
    return sidecar.get(f"{dp.source_id}#{field}")


def build_dataset(datapoints: Sequence[DataPoint], config: AugmentConfig, *,
                  entity_sidecar: Mapping[str, list[textops.Entity]] | None = None,
                  ) -> tuple[list[ConsistencyRecord], DatasetStats]:
    """Emit one consistent record per datapoint plus all applicable corruptions.

    Output order is canonical (source_id, then corruption order) and fully
    determined by (datapoints, config).
    """
    ordered = sorted(datapoints, key=lambda dp: dp.source_id)
    ids = [dp.source_id for dp in ordered]
    if len(set(ids)) != len(ids):
        dupes = sorted({sid for sid in ids if ids.count(sid) > 1})
        raise FactkitError(f"duplicate datapoint source_ids: {dupes[:5]}")

    records: list[ConsistencyRecord] = []
    stats = DatasetStats(n_consistent=len(ordered))

    for dp in ordered:
        records.append(ConsistencyRecord(dp.context, dp.knowledge, dp.response,
                                         "consistent", "none", dp.source_id))

    if "pairing" in config.methods and len(ordered) >= 2:
        for i, dp in enumerate(ordered):
            for target in ("response", "knowledge"):
                trace = stream_seed(config.seed, dp.source_id, f"pair_{target}")
                rec = random_pair(ordered, i, target, random.Random(trace))
                records.append(dataclasses.replace(rec, seed_trace=trace))
                stats.n_pairing += 1

    if "negation" in config.methods:
        for dp in ordered:
            for target in ("response", "knowledge"):
                rec = apply_negation(dp, target)
                if rec is None:
                    stats.n_skipped_negation += 1
                else:
                    records.append(rec)
                    stats.n_negation += 1

    if "entity" in config.methods:
        for dp in ordered:
            resp_ents = _sidecar_entities(entity_sidecar, dp, "response")
            for target in ("context", "knowledge"):
                trace = stream_seed(config.seed, dp.source_id, f"swap_{target}")
                rec = entity_swap(
                    dp, target, random.Random(trace),
                    same_label_only=config.entity_same_label_only,
                    target_entities=_sidecar_entities(entity_sidecar, dp, target),
                    response_entities=resp_ents,
                )
                if rec is None:
                    stats.n_skipped_entity += 1
                else:
                    records.append(dataclasses.replace(rec, seed_trace=trace))
                    stats.n_entity += 1

    records.sort(key=lambda r: (r.source_id, _CORRUPTION_ORDER[r.corruption]))
    return records, stats


def write_stats(stats: DatasetStats, records: Sequence[ConsistencyRecord],
                path: str | Path) -> None:
    """Stats JSON: the typed counters plus a per-corruption breakdown."""
    by_corruption: dict[str, int] = {name: 0 for name in CORRUPTIONS}
    for rec in records:
        by_corruption[rec.corruption] += 1
    payload = {**stats.as_dict(), "by_corruption": by_corruption}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
