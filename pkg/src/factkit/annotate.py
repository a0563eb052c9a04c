"""Two-stage annotation protocol: gating, aggregation, bucketing, agreement.

Stage 1 scores each response for appropriateness and verifiability on a 1-5
scale from the dialog context alone; items whose mean appropriateness or mean
verifiability falls below 3 are filtered out (appropriateness checked first
so the two filter outcomes stay distinguishable).  Stage 2 scores factual
consistency on {0, 0.5, 1} and hallucination as yes/no; the consistency mean
is bucketed at >= 0.5 and hallucination is majority-voted.  Agreement is
Krippendorff's alpha over a coincidence matrix, interval-distance for the
ordinal consistency scale and nominal for hallucination.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import FactkitError, SchemaError

STAGE1_SCALE = (1, 2, 3, 4, 5)
CONSISTENCY_VALUES = (0.0, 0.5, 1.0)
HALLUCINATION_VALUES = ("yes", "no")
CONFIG_TAG_KEYS = ("retriever", "model_size", "decoding")

GATE_PENDING = "pending"
GATE_FILTERED_INAPPROPRIATE = "filtered_inappropriate"
GATE_FILTERED_NONVERIFIABLE = "filtered_nonverifiable"
GATE_ADVANCED = "advanced"

JUDGMENTS_PER_ITEM = 3


@dataclass(frozen=True)
class AnnotationItem:
    id: str
    context: tuple[str, ...]
    knowledge: str
    response: str
    config_tags: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.config_tags) - set(CONFIG_TAG_KEYS)
        if unknown:
            raise SchemaError(f"item {self.id}: unknown config_tags keys {sorted(unknown)}")


@dataclass(frozen=True)
class AnnotationJudgment:
    item_id: str
    annotator_id: str
    stage: int
    appropriateness: int | None = None
    verifiability: int | None = None
    consistency: float | None = None
    hallucination: str | None = None
    timestamp: float | None = None


def validate_judgment(j: AnnotationJudgment) -> None:
    """Raise unless the judgment carries exactly its stage's fields, in range."""
    if not j.item_id:
        raise SchemaError("item_id must be non-empty")
    if not j.annotator_id:
        raise SchemaError("annotator_id must be non-empty")
    if j.stage == 1:
        if j.appropriateness not in STAGE1_SCALE:
            raise SchemaError(f"appropriateness must be an integer in 1..5, got {j.appropriateness!r}")
        if j.verifiability not in STAGE1_SCALE:
            raise SchemaError(f"verifiability must be an integer in 1..5, got {j.verifiability!r}")
        if j.consistency is not None or j.hallucination is not None:
            raise SchemaError("stage-1 judgments must not carry stage-2 fields")
    elif j.stage == 2:
        if j.consistency not in CONSISTENCY_VALUES:
            raise SchemaError(f"consistency must be one of {{0, 0.5, 1}}, got {j.consistency!r}")
        if j.hallucination not in HALLUCINATION_VALUES:
            raise SchemaError(f"hallucination must be yes or no, got {j.hallucination!r}")
        if j.appropriateness is not None or j.verifiability is not None:
            raise SchemaError("stage-2 judgments must not carry stage-1 fields")
    else:
        raise SchemaError(f"stage must be 1 or 2, got {j.stage!r}")


def _check_triple(judgments: Sequence[AnnotationJudgment], stage: int) -> None:
    if len(judgments) != JUDGMENTS_PER_ITEM:
        raise FactkitError(f"expected exactly {JUDGMENTS_PER_ITEM} stage-{stage} "
                           f"judgments, got {len(judgments)}")
    items = {j.item_id for j in judgments}
    if len(items) != 1:
        raise FactkitError(f"judgments span multiple items: {sorted(items)}")
    annotators = {j.annotator_id for j in judgments}
    if len(annotators) != JUDGMENTS_PER_ITEM:
        raise FactkitError("judgments must come from distinct annotators")
    for j in judgments:
        if j.stage != stage:
            raise FactkitError(f"expected stage-{stage} judgments, got stage {j.stage}")
        validate_judgment(j)


def stage1_gate(judgments: Sequence[AnnotationJudgment],
                per_annotator: bool = False) -> str:
    """Gate decision from exactly three stage-1 judgments.

    Default: mean appropriateness < 3 filters first, then mean verifiability
    < 3; a mean of exactly 3 advances.  ``per_annotator`` switches to the
    stricter variant that filters when any single score is below 3.
    """
    _check_triple(judgments, 1)
    appropriateness = [j.appropriateness for j in judgments]
    verifiability = [j.verifiability for j in judgments]
    if per_annotator:
        if min(appropriateness) < 3:
            return GATE_FILTERED_INAPPROPRIATE
        if min(verifiability) < 3:
            return GATE_FILTERED_NONVERIFIABLE
        return GATE_ADVANCED
    if sum(appropriateness) / len(appropriateness) < 3:
        return GATE_FILTERED_INAPPROPRIATE
    if sum(verifiability) / len(verifiability) < 3:
        return GATE_FILTERED_NONVERIFIABLE
    return GATE_ADVANCED


def aggregate_stage2(judgments: Sequence[AnnotationJudgment]) -> tuple[float, str]:
    """(mean consistency, majority hallucination) from three stage-2 judgments."""
    _check_triple(judgments, 2)
    mean = sum(j.consistency for j in judgments) / len(judgments)
    yes = sum(1 for j in judgments if j.hallucination == "yes")
    majority = "yes" if yes >= 2 else "no"
    return mean, majority


def bucket_consistency(mean: float) -> str:
    """Mean consistency >= 0.5 is consistent, below is inconsistent."""
    if not 0.0 <= mean <= 1.0:
        raise FactkitError(f"consistency mean out of range [0, 1]: {mean!r}")
    return "consistent" if mean >= 0.5 else "inconsistent"


def _nominal(a, b) -> float:
    return 0.0 if a == b else 1.0


def _interval(a, b) -> float:
    return (float(a) - float(b)) ** 2


_METRICS = {"nominal": _nominal, "interval": _interval}


def krippendorff_alpha(data: Sequence[Sequence], metric: str = "nominal") -> float:
    """alpha = 1 - D_o / D_e over the coincidence matrix.

    ``data`` is annotators x items with ``None`` marking a missing cell.
    Items with fewer than two values are unpairable and ignored; zero
    pairable values is an error.  Perfect agreement returns 1.0, including
    the degenerate single-value case where D_e is 0.
    """
    if metric not in _METRICS:
        raise FactkitError(f"metric must be one of {sorted(_METRICS)}")
    delta = _METRICS[metric]

    width = max((len(row) for row in data), default=0)
    units: list[list] = []
    for col in range(width):
        values = [row[col] for row in data if col < len(row) and row[col] is not None]
        if len(values) > 1:
            units.append(values)
    n = sum(len(values) for values in units)
    if n == 0:
        raise FactkitError("insufficient coincidences")

    observed = 0.0
    for values in units:
        m = len(values)
        pair_sum = sum(delta(a, b) for a in values for b in values)
        observed += pair_sum / (m - 1)
    observed /= n

    totals: dict = {}
    for values in units:
        for v in values:
            totals[v] = totals.get(v, 0) + 1
    expected = 0.0
    for v, nv in totals.items():
        for w, nw in totals.items():
            expected += nv * nw * delta(v, w)
    expected /= n * (n - 1)

    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


@dataclass(frozen=True)
class AggregatedItem:
    item_id: str
    mean_appropriateness: float | None
    mean_verifiability: float | None
    gate: str
    mean_consistency: float | None = None
    hallucination_majority: str | None = None
    bucket: str | None = None

    def as_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "mean_appropriateness": self.mean_appropriateness,
            "mean_verifiability": self.mean_verifiability,
            "gate": self.gate,
            "mean_consistency": self.mean_consistency,
            "hallucination_majority": self.hallucination_majority,
            "bucket": self.bucket,
        }


def aggregate_item(item_id: str, judgments: Sequence[AnnotationJudgment],
                   per_annotator_gate: bool = False) -> AggregatedItem:
    stage1 = [j for j in judgments if j.item_id == item_id and j.stage == 1]
    stage2 = [j for j in judgments if j.item_id == item_id and j.stage == 2]

    mean_app = sum(j.appropriateness for j in stage1) / len(stage1) if stage1 else None
    mean_ver = sum(j.verifiability for j in stage1) / len(stage1) if stage1 else None
    if len(stage1) == JUDGMENTS_PER_ITEM:
        gate = stage1_gate(stage1, per_annotator=per_annotator_gate)
    else:
        gate = GATE_PENDING

    mean_con = majority = bucket = None
    if gate == GATE_ADVANCED and len(stage2) == JUDGMENTS_PER_ITEM:
        mean_con, majority = aggregate_stage2(stage2)
        bucket = bucket_consistency(mean_con)
    return AggregatedItem(item_id, mean_app, mean_ver, gate, mean_con, majority, bucket)


def aggregate_items(item_ids: Iterable[str],
                    judgments: Sequence[AnnotationJudgment],
                    per_annotator_gate: bool = False) -> list[AggregatedItem]:
    by_item: dict[str, list[AnnotationJudgment]] = {}
    for j in judgments:
        by_item.setdefault(j.item_id, []).append(j)
    return [aggregate_item(item_id, by_item.get(item_id, []),
                           per_annotator_gate=per_annotator_gate)
            for item_id in item_ids]

QUESTION_FIELDS = {
    "appropriateness": (1, "appropriateness", "interval"),
    "verifiability": (1, "verifiability", "interval"),
    "consistency": (2, "consistency", "interval"),
    "hallucination": (2, "hallucination", "nominal"),
}


def judgment_matrix(judgments: Sequence[AnnotationJudgment],
                    question: str) -> list[list]:
    """Annotator x item matrix (None for missing) for one question."""
    if question not in QUESTION_FIELDS:
        raise FactkitError(f"unknown question {question!r}")
    stage, field_name, _ = QUESTION_FIELDS[question]
    relevant = [j for j in judgments if j.stage == stage]
    annotators = sorted({j.annotator_id for j in relevant})
    items = sorted({j.item_id for j in relevant})
    item_pos = {item: k for k, item in enumerate(items)}
    matrix = [[None] * len(items) for _ in annotators]
    for row, annotator in enumerate(annotators):
        for j in relevant:
            if j.annotator_id == annotator:
                matrix[row][item_pos[j.item_id]] = getattr(j, field_name)
    return matrix


def question_alpha(judgments: Sequence[AnnotationJudgment], question: str,
                   metric: str | None = None) -> float:
    default_metric = QUESTION_FIELDS[question][2] if question in QUESTION_FIELDS else None
    if metric is None:
        if default_metric is None:
            raise FactkitError(f"unknown question {question!r}")
        metric = default_metric
    matrix = judgment_matrix(judgments, question)
    if metric == "interval" and question == "hallucination":
        matrix = [[None if v is None else (1.0 if v == "yes" else 0.0) for v in row]
                  for row in matrix]
    return krippendorff_alpha(matrix, metric)


def write_judgments(judgments: Iterable[AnnotationJudgment], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for j in judgments:
            fh.write(json.dumps(judgment_to_dict(j), ensure_ascii=False) + "\n")
            count += 1
    return count


def judgment_to_dict(j: AnnotationJudgment) -> dict:
    out = {"item_id": j.item_id, "annotator_id": j.annotator_id, "stage": j.stage}
    for name in ("appropriateness", "verifiability", "consistency",
                 "hallucination", "timestamp"):
        value = getattr(j, name)
        if value is not None:
            out[name] = value
    return out


def judgment_from_dict(obj: Mapping, where: str = "judgment") -> AnnotationJudgment:
    for name in ("item_id", "annotator_id", "stage"):
        if name not in obj:
            raise SchemaError(f"{where}: missing field {name}")
    consistency = obj.get("consistency")
    j = AnnotationJudgment(
        item_id=str(obj["item_id"]),
        annotator_id=str(obj["annotator_id"]),
        stage=obj["stage"],
        appropriateness=obj.get("appropriateness"),
        verifiability=obj.get("verifiability"),
        consistency=None if consistency is None else float(consistency),
        hallucination=obj.get("hallucination"),
        timestamp=obj.get("timestamp"),
    )
    validate_judgment(j)
    return j


def read_judgments(path: str | Path) -> list[AnnotationJudgment]:
    judgments = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            judgments.append(judgment_from_dict(obj, where=f"line {lineno}"))
    return judgments


def read_items(path: str | Path) -> list[AnnotationItem]:
    items = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            for name in ("id", "context", "knowledge", "response"):
                if name not in obj:
                    raise SchemaError(f"line {lineno}: missing field {name}")
            item_id = str(obj["id"])
            if item_id in seen:
                raise SchemaError(f"line {lineno}: duplicate item id {item_id!r}")
            seen.add(item_id)
            items.append(AnnotationItem(
                id=item_id,
                context=tuple(obj["context"]),
                knowledge=str(obj["knowledge"]),
                response=str(obj["response"]),
                config_tags=dict(obj.get("config_tags", {})),
            ))
    return items


def build_report(items: Sequence[AnnotationItem],
                 judgments: Sequence[AnnotationJudgment]) -> dict:
    """Aggregates, funnel counts, per-question alphas, per-configuration means."""
    aggregated = aggregate_items([item.id for item in items], judgments)
    by_gate: dict[str, int] = {}
    for agg in aggregated:
        by_gate[agg.gate] = by_gate.get(agg.gate, 0) + 1

    funnel = {
        "items_total": len(items),
        "stage1_done": sum(1 for a in aggregated if a.gate != GATE_PENDING),
        "filtered_inappropriate": by_gate.get(GATE_FILTERED_INAPPROPRIATE, 0),
        "filtered_nonverifiable": by_gate.get(GATE_FILTERED_NONVERIFIABLE, 0),
        "advanced": by_gate.get(GATE_ADVANCED, 0),
        "stage2_done": sum(1 for a in aggregated if a.mean_consistency is not None),
        "bucket_consistent": sum(1 for a in aggregated if a.bucket == "consistent"),
        "bucket_inconsistent": sum(1 for a in aggregated if a.bucket == "inconsistent"),
    }

    alphas = {}
    for question in ("consistency", "hallucination"):
        try:
            alphas[question] = question_alpha(judgments, question)
        except FactkitError:
            alphas[question] = None

    by_config: dict[tuple, dict] = {}
    item_tags = {item.id: item.config_tags for item in items}
    for agg in aggregated:
        if agg.mean_consistency is None:
            continue
        tags = item_tags.get(agg.item_id, {})
        key = tuple(tags.get(k, "") for k in CONFIG_TAG_KEYS)
        bucket = by_config.setdefault(key, {
            "retriever": key[0], "model_size": key[1], "decoding": key[2],
            "n": 0, "sum_consistency": 0.0, "n_hallucinated": 0,
            "sum_appropriateness": 0.0,
        })
        bucket["n"] += 1
        bucket["sum_consistency"] += agg.mean_consistency
        bucket["n_hallucinated"] += 1 if agg.hallucination_majority == "yes" else 0
        bucket["sum_appropriateness"] += agg.mean_appropriateness or 0.0

    configurations = []
    for key in sorted(by_config):
        b = by_config[key]
        configurations.append({
            "retriever": b["retriever"],
            "model_size": b["model_size"],
            "decoding": b["decoding"],
            "n": b["n"],
            "mean_consistency": b["sum_consistency"] / b["n"],
            "hallucination_rate": b["n_hallucinated"] / b["n"],
            "mean_appropriateness": b["sum_appropriateness"] / b["n"],
        })

    return {
        "funnel": funnel,
        "alpha": alphas,
        "configurations": configurations,
        "items": [a.as_dict() for a in sorted(aggregated, key=lambda a: a.item_id)],
    }
