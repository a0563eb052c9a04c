"""Deterministic text primitives: tokenization, auxiliary-verb negation,
heuristic entity tagging, and entity-set intersection.

Everything here is a pure function of its input string, with no model or
external resource behind it.  Offsets are indices into the input ``str``, so
``text[start:end]`` always reproduces the covered surface.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from pathlib import Path

from .errors import SchemaError

_PUNCT = set(string.punctuation)

# Negatable auxiliaries.  "ca" is the clipped form some tokenizers produce for
# "can't"; with an attached "n't" it spells the full contraction again.
AUXILIARIES: tuple[str, ...] = (
    "are", "is", "was", "were", "have", "has", "had", "do", "does", "did",
    "can", "ca", "could", "may", "might", "must", "shall", "should", "will",
    "would",
)
_AUX_SET = frozenset(AUXILIARIES)

# Auxiliaries with a standard n't contraction; the rest ("may", "might",
# "shall", "ca") take a separate " not".
CONTRACTIONS: dict[str, str] = {
    "is": "isn't", "are": "aren't", "was": "wasn't", "were": "weren't",
    "have": "haven't", "has": "hasn't", "had": "hadn't",
    "do": "don't", "does": "doesn't", "did": "didn't",
    "could": "couldn't", "must": "mustn't", "should": "shouldn't",
    "will": "won't", "would": "wouldn't", "can": "can't",
}

# Recognized negated surface -> affirmative base.  Built from the auxiliary
# list plus the irregular "won't"; "can't" maps back to "can", not "ca".
NEGATED_TO_BASE: dict[str, str] = {aux + "n't": aux for aux in AUXILIARIES}
NEGATED_TO_BASE["won't"] = "will"
NEGATED_TO_BASE["can't"] = "can"

ENTITY_LABELS = ("PERSON", "DATE", "NUMBER", "PLACE_OR_ORG", "OTHER")

_YEAR_RE = re.compile(r"^[0-9]{4}$")
_NUMBER_RE = re.compile(r"^[0-9]+(?:[.,][0-9]+)*%?$")
_CAP_RE = re.compile(r"^[A-Z][A-Za-z0-9'\-]*$")
_SENTENCE_END = {".", "!", "?"}
# The pronoun "I" and its contractions are capitalized everywhere and never
# useful as entities.
_PRONOUN_I = {"i", "i'm", "i've", "i'd", "i'll"}
_ORG_PLACE_SUFFIX = {
    "inc", "inc.", "corp", "corp.", "ltd", "ltd.", "co.", "university",
    "institute", "city", "county", "republic", "kingdom", "states", "island",
    "islands", "mountains", "park", "club", "school", "company", "airlines",
    "church", "river", "lake", "street", "avenue",
}


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class Entity:
    surface: str
    label: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    """Split on whitespace, then peel leading/trailing punctuation into
    one-character tokens.

    Interior punctuation stays put, which is what keeps "n't" attached to its
    auxiliary ("weren't." -> ["weren't", "."]).
    """
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        s, e = i, j
        while s < e and text[s] in _PUNCT:
            tokens.append(Token(text[s], s, s + 1))
            s += 1
        trailing: list[Token] = []
        while e > s and text[e - 1] in _PUNCT:
            trailing.append(Token(text[e - 1], e - 1, e))
            e -= 1
        if s < e:
            tokens.append(Token(text[s:e], s, e))
        tokens.extend(reversed(trailing))
        i = j
    return tokens


def find_auxiliaries(tokens: list[Token]) -> list[int]:
    """Indices of tokens that are a listed auxiliary or its n't contraction."""
    out = []
    for i, tok in enumerate(tokens):
        low = tok.text.lower()
        if low in _AUX_SET or low in NEGATED_TO_BASE:
            out.append(i)
    return out


def _match_case(replacement: str, original: str) -> str:
    if len(original) > 1 and original.isupper():
        return replacement.upper()
    if original[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def negate_sentence(text: str) -> str | None:
    """Toggle negation at the first auxiliary; ``None`` when there is none.

    An already-negated auxiliary ("n't" attached, or followed by "not") is
    made affirmative; otherwise the contraction from :data:`CONTRACTIONS` is
    substituted, falling back to an appended " not" for auxiliaries without
    one.  All other characters are left untouched.
    """
    tokens = tokenize(text)
    indices = find_auxiliaries(tokens)
    if not indices:
        return None
    i = indices[0]
    tok = tokens[i]
    low = tok.text.lower()

    if low in NEGATED_TO_BASE:
        base = NEGATED_TO_BASE[low]
        return text[: tok.start] + _match_case(base, tok.text) + text[tok.end:]

    nxt = tokens[i + 1] if i + 1 < len(tokens) else None
    if nxt is not None and nxt.text.lower() == "not":
        return text[: tok.end] + text[nxt.end:]

    if low in CONTRACTIONS:
        contracted = _match_case(CONTRACTIONS[low], tok.text)
        return text[: tok.start] + contracted + text[tok.end:]
    return text[: tok.end] + " not" + text[tok.end:]


def contains_negation(text: str) -> bool:
    """True when any token is a negated auxiliary, "not", or a bare "n't"."""
    for tok in tokenize(text):
        low = tok.text.lower()
        if low in NEGATED_TO_BASE or low in ("not", "n't"):
            return True
    return False


def tag_entities(text: str) -> list[Entity]:
    """Heuristic, gazetteer-free entity tagger.

    Four-digit tokens are DATE, other numerals NUMBER.  Maximal runs of
    capitalized tokens become entities unless the run is a single
    sentence-initial token (ordinary sentence capitalization).  Labels for
    capitalized runs: a known org/place suffix word wins PLACE_OR_ORG,
    multi-token all-alphabetic runs are guessed PERSON, everything else is
    OTHER.  Spans never overlap.
    """
    tokens = tokenize(text)
    entities: list[Entity] = []

    capitalized = []
    for idx, tok in enumerate(tokens):
        if _YEAR_RE.match(tok.text):
            entities.append(Entity(tok.text, "DATE", tok.start, tok.end))
        elif _NUMBER_RE.match(tok.text):
            entities.append(Entity(tok.text, "NUMBER", tok.start, tok.end))
        elif _CAP_RE.match(tok.text) and tok.text.lower() not in _PRONOUN_I:
            capitalized.append(idx)

    runs: list[list[int]] = []
    for idx in capitalized:
        if runs and runs[-1][-1] == idx - 1:
            runs[-1].append(idx)
        else:
            runs.append([idx])

    def _sentence_initial(first: int) -> bool:
        # Walk back over punctuation (quotes, brackets); a sentence end or the
        # start of the text means ordinary sentence capitalization.
        prev = first - 1
        while prev >= 0 and tokens[prev].text in _PUNCT:
            if tokens[prev].text in _SENTENCE_END:
                return True
            prev -= 1
        return prev < 0

    for run in runs:
        if len(run) == 1 and _sentence_initial(run[0]):
            continue
        first = run[0]
        start = tokens[first].start
        end = tokens[run[-1]].end
        surface = text[start:end]
        words = [tokens[i].text for i in run]
        if any(w.lower() in _ORG_PLACE_SUFFIX for w in words):
            label = "PLACE_OR_ORG"
        elif len(run) >= 2 and all(w.isalpha() for w in words):
            label = "PERSON"
        else:
            label = "OTHER"
        entities.append(Entity(surface, label, start, end))

    entities.sort(key=lambda e: e.start)
    return entities


def common_entities(a: list[Entity], b: list[Entity]) -> list[Entity]:
    """Entities of ``a`` whose exact surface also occurs as a surface in ``b``."""
    surfaces_b = {e.surface for e in b}
    return [e for e in a if e.surface in surfaces_b]


def load_entity_sidecar(path: str | Path) -> dict[str, list[Entity]]:
    """Read externally supplied entity annotations.

    One JSON object per line: ``{"id": ..., "entities": [{"surface", "label",
    "start", "end"}, ...]}``.  Ids are free-form; the augmentation pipeline
    looks up "<source_id>#knowledge", "<source_id>#response" and
    "<source_id>#context:<utterance_index>".
    """
    out: dict[str, list[Entity]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            if "id" not in obj or "entities" not in obj:
                raise SchemaError(f"line {lineno}: missing field id or entities")
            ents = []
            for k, e in enumerate(obj["entities"]):
                for field in ("surface", "label", "start", "end"):
                    if field not in e:
                        raise SchemaError(
                            f"line {lineno}: entities[{k}]: missing field {field}"
                        )
                if e["label"] not in ENTITY_LABELS:
                    raise SchemaError(
                        f"line {lineno}: entities[{k}].label: unknown label {e['label']!r}"
                    )
                ents.append(Entity(e["surface"], e["label"], int(e["start"]), int(e["end"])))
            out[str(obj["id"])] = ents
    return out
