"""Ingestion of wizard-style dialog corpora and the canonical record formats.

The dialog input is a JSON array of dialogs, each with an optional ``id`` and
``topic`` and a ``turns`` (or ``dialog``) array of ``{speaker, text,
checked_sentence}`` objects.  Speaker strings only need to contain "wizard"
or "apprentice" (case-insensitive), and ``checked_sentence`` may be a string
or a Wizard-of-Wikipedia-style one-entry mapping; unknown fields are ignored.

Interchange files are line-delimited JSON, UTF-8, one object per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import ParseError, SchemaError

SPEAKERS = ("wizard", "apprentice")
LABELS = ("consistent", "inconsistent")
# Order doubles as the canonical sort order for emitted records.
CORRUPTIONS = (
    "none",
    "pair_response",
    "pair_knowledge",
    "negate_response",
    "negate_knowledge",
    "swap_context",
    "swap_knowledge",
)

RECORD_FIELDS = ("context", "knowledge", "response", "label", "corruption",
                 "source_id", "seed_trace")
DATAPOINT_FIELDS = ("context", "knowledge", "response", "source_dialog_id",
                    "turn_index")


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str
    checked_sentence: str | None = None


@dataclass(frozen=True)
class Dialog:
    id: str
    topic: str
    turns: tuple[Turn, ...]


@dataclass(frozen=True)
class DataPoint:
    context: tuple[str, ...]
    knowledge: str
    response: str
    source_dialog_id: str
    turn_index: int

    @property
    def source_id(self) -> str:
        return f"{self.source_dialog_id}:{self.turn_index}"


@dataclass(frozen=True)
class ConsistencyRecord:
    """A labeled (context, knowledge, response) triple with corruption provenance."""

    context: tuple[str, ...]
    knowledge: str
    response: str
    label: str
    corruption: str
    source_id: str
    seed_trace: int = 0

    def validate(self) -> None:
        if self.label not in LABELS:
            raise SchemaError(f"label: unknown value {self.label!r}")
        if self.corruption not in CORRUPTIONS:
            raise SchemaError(f"corruption: unknown value {self.corruption!r}")
        if (self.label == "consistent") != (self.corruption == "none"):
            raise SchemaError(
                "label/corruption mismatch: consistent records must have "
                f"corruption 'none' (got {self.label!r}/{self.corruption!r})"
            )


def _normalize_checked(value, where: str) -> str | None:
    if value is None:
        return None
    if isinstance(value, str):
        return value or None
    if isinstance(value, dict):
        if not value:
            return None
        sentence = next(iter(value.values()))
        if not isinstance(sentence, str) or sentence == "no_passages_used":
            return None
        return sentence or None
    raise SchemaError(f"{where}: expected string or mapping")


def load_wow(path: str | Path) -> list[Dialog]:
    """Parse a wizard-style dialog JSON file into :class:`Dialog` objects."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8 at byte {exc.start}", exc.start) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"invalid JSON at byte {offset}: {exc.msg}", offset) from exc

    if not isinstance(data, list):
        raise SchemaError("$: expected a list of dialogs")

    dialogs: list[Dialog] = []
    seen_ids: set[str] = set()
    for di, d in enumerate(data):
        where = f"$[{di}]"
        if not isinstance(d, dict):
            raise SchemaError(f"{where}: expected an object")
        dialog_id = d.get("id", f"dialog_{di:05d}")
        if not isinstance(dialog_id, str):
            raise SchemaError(f"{where}.id: expected string")
        if dialog_id in seen_ids:
            raise SchemaError(f"{where}.id: duplicate dialog id {dialog_id!r}")
        seen_ids.add(dialog_id)
        topic = d.get("topic", d.get("chosen_topic", ""))
        if not isinstance(topic, str):
            raise SchemaError(f"{where}.topic: expected string")

        turns_raw = d.get("turns", d.get("dialog"))
        if turns_raw is None:
            raise SchemaError(f"{where}: missing field turns")
        if not isinstance(turns_raw, list):
            raise SchemaError(f"{where}.turns: expected a list")

        turns: list[Turn] = []
        for ti, t in enumerate(turns_raw):
            twhere = f"{where}.turns[{ti}]"
            if not isinstance(t, dict):
                raise SchemaError(f"{twhere}: expected an object")
            if "speaker" not in t:
                raise SchemaError(f"{twhere}: missing field speaker")
            raw_speaker = t["speaker"]
            if not isinstance(raw_speaker, str):
                raise SchemaError(f"{twhere}.speaker: expected string")
            low = raw_speaker.lower()
            if "wizard" in low:
                speaker = "wizard"
            elif "apprentice" in low:
                speaker = "apprentice"
            else:
                raise SchemaError(f"{twhere}.speaker: unrecognized speaker {raw_speaker!r}")
            if "text" not in t:
                raise SchemaError(f"{twhere}: missing field text")
            if not isinstance(t["text"], str):
                raise SchemaError(f"{twhere}.text: expected string")
            checked = _normalize_checked(
                t.get("checked_sentence"), f"{twhere}.checked_sentence"
            )
            if speaker == "apprentice" and checked is not None:
                raise SchemaError(
                    f"{twhere}.checked_sentence: only wizard turns may carry knowledge"
                )
            if turns and turns[-1].speaker == speaker:
                raise SchemaError(f"{twhere}.speaker: turns must alternate speakers")
            turns.append(Turn(speaker, t["text"], checked))
        dialogs.append(Dialog(dialog_id, topic, tuple(turns)))
    return dialogs


def extract_datapoints(dialogs: Iterable[Dialog]) -> tuple[list[DataPoint], int]:
    """One datapoint per wizard turn with non-empty knowledge.

    The context is every preceding turn's text, in order.  Returns the
    datapoints plus the number of wizard turns skipped for lacking knowledge
    (or an empty response).
    """
    datapoints: list[DataPoint] = []
    skipped = 0
    for dialog in dialogs:
        context: list[str] = []
        for ti, turn in enumerate(dialog.turns):
            if turn.speaker == "wizard":
                if turn.checked_sentence and turn.text:
                    datapoints.append(
                        DataPoint(tuple(context), turn.checked_sentence,
                                  turn.text, dialog.id, ti)
                    )
                else:
                    skipped += 1
            context.append(turn.text)
    return datapoints, skipped


def _require(obj: dict, field: str, lineno: int):
    if field not in obj:
        raise SchemaError(f"line {lineno}: missing field {field}")
    return obj[field]


def _context_tuple(value, lineno: int) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(u, str) for u in value):
        raise SchemaError(f"line {lineno}: context must be a list of strings")
    return tuple(value)


def write_records(records: Iterable[ConsistencyRecord], path: str | Path) -> int:
    """Write records as JSONL (fixed field order); returns the count written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            rec.validate()
            obj = {
                "context": list(rec.context),
                "knowledge": rec.knowledge,
                "response": rec.response,
                "label": rec.label,
                "corruption": rec.corruption,
                "source_id": rec.source_id,
                "seed_trace": rec.seed_trace,
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_records(path: str | Path) -> list[ConsistencyRecord]:
    records: list[ConsistencyRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                raise SchemaError(f"line {lineno}: empty line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            values = {f: _require(obj, f, lineno) for f in RECORD_FIELDS}
            rec = ConsistencyRecord(
                context=_context_tuple(values["context"], lineno),
                knowledge=str(values["knowledge"]),
                response=str(values["response"]),
                label=values["label"],
                corruption=values["corruption"],
                source_id=str(values["source_id"]),
                seed_trace=int(values["seed_trace"]),
            )
            try:
                rec.validate()
            except SchemaError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from exc
            records.append(rec)
    return records


def write_datapoints(datapoints: Iterable[DataPoint], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for dp in datapoints:
            obj = {
                "context": list(dp.context),
                "knowledge": dp.knowledge,
                "response": dp.response,
                "source_dialog_id": dp.source_dialog_id,
                "turn_index": dp.turn_index,
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_datapoints(path: str | Path) -> list[DataPoint]:
    datapoints: list[DataPoint] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                raise SchemaError(f"line {lineno}: empty line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            values = {f: _require(obj, f, lineno) for f in DATAPOINT_FIELDS}
            if not values["knowledge"] or not values["response"]:
                raise SchemaError(
                    f"line {lineno}: knowledge and response must be non-empty"
                )
            datapoints.append(
                DataPoint(
                    context=_context_tuple(values["context"], lineno),
                    knowledge=str(values["knowledge"]),
                    response=str(values["response"]),
                    source_dialog_id=str(values["source_dialog_id"]),
                    turn_index=int(values["turn_index"]),
                )
            )
    return datapoints
