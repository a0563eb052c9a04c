"""Consistency detection: label mapping, a feature-based logistic baseline,
a remote-detector client, and per-class evaluation.

The native baseline exists to demonstrate the training signal in synthesized
data at desk scale; heavyweight pretrained detectors are mounted through
:func:`classify_remote` instead of being bundled.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import textops
from .errors import FactkitError, TransportError

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"
CONSISTENCY_LABELS = (CONSISTENT, INCONSISTENT)

NLI_LABELS = ("supports", "not_enough_info", "refutes")
_NLI_TO_CONSISTENCY = {
    "supports": CONSISTENT,
    "not_enough_info": INCONSISTENT,
    "refutes": INCONSISTENT,
}

FEATURE_NAMES = ("unigram_overlap", "bigram_overlap", "entity_coverage",
                 "negation_mismatch", "length_ratio", "bias")


def map_nli_label(label: str) -> str:
    """supports -> consistent; not_enough_info and refutes -> inconsistent."""
    try:
        return _NLI_TO_CONSISTENCY[label]
    except KeyError:
        raise FactkitError(f"unknown NLI label {label!r}") from None


def _lower_tokens(text: str) -> list[str]:
    return [t.text.lower() for t in textops.tokenize(text)]


def _multiset_overlap(a: list, b: list) -> float:
    if not a:
        return 0.0
    counts_b: dict = {}
    for item in b:
        counts_b[item] = counts_b.get(item, 0) + 1
    shared = 0
    for item in a:
        if counts_b.get(item, 0) > 0:
            shared += 1
            counts_b[item] -= 1
    return shared / len(a)


def featurize(record) -> np.ndarray:
    """Feature vector for a knowledge/response pair.

    unigram/bigram overlap are multiset-min ratios over the response length;
    entity_coverage is the fraction of response entities whose surface occurs
    in the knowledge (1.0 when the response has none); negation_mismatch is
    the XOR of negation presence; length_ratio is |tokens(R)| / |tokens(K)|.
    The context is carried by records but unused here.
    """
    response_tokens = _lower_tokens(record.response)
    knowledge_tokens = _lower_tokens(record.knowledge)
    if not response_tokens or not knowledge_tokens:
        raise FactkitError("featurize requires non-empty knowledge and response")

    unigram = _multiset_overlap(response_tokens, knowledge_tokens)
    response_bigrams = list(zip(response_tokens, response_tokens[1:]))
    knowledge_bigrams = list(zip(knowledge_tokens, knowledge_tokens[1:]))
    bigram = _multiset_overlap(response_bigrams, knowledge_bigrams)

    entities = textops.tag_entities(record.response)
    if entities:
        covered = sum(1 for e in entities if e.surface in record.knowledge)
        coverage = covered / len(entities)
    else:
        coverage = 1.0

    mismatch = float(textops.contains_negation(record.response)
                     != textops.contains_negation(record.knowledge))
    length_ratio = len(response_tokens) / len(knowledge_tokens)
    return np.array([unigram, bigram, coverage, mismatch, length_ratio, 1.0],
                    dtype=np.float64)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def logistic_loss(weights: np.ndarray, features: np.ndarray,
                  targets: np.ndarray) -> float:
    p = _sigmoid(features @ weights)
    eps = 1e-12
    return float(np.mean(-targets * np.log(p + eps)
                         - (1 - targets) * np.log(1 - p + eps)))


def loss_gradient(weights: np.ndarray, features: np.ndarray,
                  targets: np.ndarray) -> np.ndarray:
    p = _sigmoid(features @ weights)
    return features.T @ (p - targets) / len(targets)


def train_baseline(train: Sequence[tuple[np.ndarray, str]], epochs: int = 500,
                   learning_rate: float = 1.0, seed: int = 0) -> np.ndarray:
    """Full-batch gradient descent on the logistic loss.

    Targets are 1.0 for consistent, 0.0 for inconsistent; the data is
    shuffled once by ``seed``.  Raises when only one class is present.
    """
    if not train:
        raise FactkitError("training data is empty")
    labels = {label for _, label in train}
    if labels - set(CONSISTENCY_LABELS):
        raise FactkitError(f"unknown labels in training data: {sorted(labels - set(CONSISTENCY_LABELS))}")
    if len(labels) < 2:
        raise FactkitError("training data must contain both classes")
    features = np.stack([np.asarray(x, dtype=np.float64) for x, _ in train])
    targets = np.array([1.0 if label == CONSISTENT else 0.0 for _, label in train])
    perm = np.random.default_rng(seed).permutation(len(targets))
    features, targets = features[perm], targets[perm]

    weights = np.zeros(features.shape[1], dtype=np.float64)
    for _ in range(epochs):
        weights = weights - learning_rate * loss_gradient(weights, features, targets)
    return weights


def predict_features(weights: np.ndarray, features: np.ndarray) -> tuple[str, float]:
    weights = np.asarray(weights, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if weights.shape != features.shape:
        raise FactkitError(
            f"weight dimension {weights.shape} does not match features {features.shape}")
    score = float(_sigmoid(features @ weights))
    label = CONSISTENT if score >= 0.5 else INCONSISTENT
    return label, score


def predict(weights: np.ndarray, record) -> tuple[str, float]:
    """Label is consistent iff sigmoid(w . x) >= 0.5 (boundary inclusive)."""
    return predict_features(weights, featurize(record))


def classify_remote(endpoint: str, record, timeout: float = 10.0):
    """POST the pair to an external detector and map its label.

    Request: ``{"knowledge", "response", "context"}``.  Response:
    ``{"label": supports|not_enough_info|refutes|consistent|inconsistent,
    "score"?: number}``.  Ternary labels go through :func:`map_nli_label`;
    returns (binary label, raw label or score).  Transport problems raise
    :class:`TransportError`, never a silent default.
    """
    body = json.dumps({
        "knowledge": record.knowledge,
        "response": record.response,
        "context": list(record.context),
    }).encode("utf-8")
    request = urllib.request.Request(
        endpoint, data=body, headers={"Content-Type": "application/json"},
        method="POST")
    try:
        with urllib.request.urlopen(request, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        raise TransportError(f"detector returned HTTP {exc.code}") from exc
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise TransportError(f"detector unreachable: {exc}") from exc
    try:
        payload = json.loads(raw.decode("utf-8"))
        label = payload["label"]
    except (ValueError, KeyError) as exc:
        raise TransportError(f"detector response unparseable: {raw[:200]!r}") from exc
    if label in _NLI_TO_CONSISTENCY:
        return map_nli_label(label), label
    if label in CONSISTENCY_LABELS:
        return label, payload.get("score")
    raise TransportError(f"detector returned unknown label {label!r}")


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    per_class: dict[str, ClassMetrics]
    confusion: dict[tuple[str, str], int]
    total: int

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "per_class": {
                label: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
                for label, m in sorted(self.per_class.items())
            },
            "confusion": {f"{gold}->{pred}": n
                          for (gold, pred), n in sorted(self.confusion.items())},
        }


def evaluate_f1(preds: Sequence[str], gold: Sequence[str]) -> EvalReport:
    """Per-class precision/recall/F1 from the confusion matrix; 0/0 -> 0.0."""
    if len(preds) != len(gold):
        raise FactkitError(f"length mismatch: {len(preds)} predictions vs {len(gold)} gold")
    if not preds:
        raise FactkitError("cannot evaluate zero predictions")
    for value in list(preds) + list(gold):
        if value not in CONSISTENCY_LABELS:
            raise FactkitError(f"unknown label {value!r}")

    confusion: dict[tuple[str, str], int] = {}
    for p, g in zip(preds, gold):
        confusion[(g, p)] = confusion.get((g, p), 0) + 1

    per_class: dict[str, ClassMetrics] = {}
    for label in CONSISTENCY_LABELS:
        tp = confusion.get((label, label), 0)
        fp = sum(n for (g, p), n in confusion.items() if p == label and g != label)
        fn = sum(n for (g, p), n in confusion.items() if g == label and p != label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = ClassMetrics(precision, recall, f1)
    return EvalReport(per_class, confusion, len(preds))
