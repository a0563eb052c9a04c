"""Annotation task server: assignment, durable judgment log, aggregation.

Persistence is a single append-only JSONL log replayed at startup; every
acknowledged judgment is flushed and fsynced before the response goes out.
Writes are serialized by one lock and publish a fresh immutable snapshot that
read endpoints use lock-free.

Endpoints (JSON over HTTP/1.1):
  GET  /api/tasks/next?annotator={id}&stage={1|2} -> 200 TaskAssignment | 204
  POST /api/judgments                             -> 201 | 200 dup | 409 | 422
  GET  /api/items/{id}                            -> AggregatedItem | 404
  GET  /api/export?kind={judgments|report}        -> JSONL | JSON
  GET  /api/stats
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence
from urllib.parse import parse_qs, urlparse

from . import annotate
from .annotate import (
    GATE_ADVANCED,
    GATE_PENDING,
    JUDGMENTS_PER_ITEM,
    AnnotationItem,
    AnnotationJudgment,
)
from .errors import FactkitError, SchemaError

LOG_FILENAME = "judgments.jsonl"


class JudgmentRejected(FactkitError):
    def __init__(self, status: int, reason: str):
        super().__init__(reason)
        self.status = status
        self.reason = reason


@dataclass(frozen=True)
class Snapshot:
    """Immutable view the read endpoints work from."""
    judgments: tuple[AnnotationJudgment, ...]
    gates: dict[str, str]
    counts: dict[tuple[str, int], int]
    report: dict
    stats: dict


class AnnotationStore:
    def __init__(self, data_dir: str | Path, items: Sequence[AnnotationItem]):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / LOG_FILENAME
        self.items = list(items)
        self._items_by_id = {item.id: item for item in self.items}
        if len(self._items_by_id) != len(self.items):
            raise FactkitError("duplicate item ids")

        self._lock = threading.Lock()
        self._judgments: list[AnnotationJudgment] = []
        self._by_key: dict[tuple[str, int, str], AnnotationJudgment] = {}
        # Open assignments are soft state: (annotator, stage) -> item_id.
        self._assignments: dict[tuple[str, int], str] = {}
        if self.log_path.exists():
            self._replay()
        self._snapshot = self._build_snapshot()

    # -- state maintenance --

    def _replay(self) -> None:
        with open(self.log_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    judgment = annotate.judgment_from_dict(obj, where=f"log line {lineno}")
                except (json.JSONDecodeError, SchemaError) as exc:
                    raise FactkitError(
                        f"corrupt judgment log at line {lineno}: {exc}") from exc
                self._apply(judgment)

    def _apply(self, judgment: AnnotationJudgment) -> None:
        self._judgments.append(judgment)
        self._by_key[(judgment.item_id, judgment.stage, judgment.annotator_id)] = judgment

    def _count(self, item_id: str, stage: int) -> int:
        return sum(1 for key in self._by_key if key[0] == item_id and key[1] == stage)

    def _gate(self, item_id: str) -> str:
        stage1 = [j for j in self._judgments
                  if j.item_id == item_id and j.stage == 1]
        if len(stage1) < JUDGMENTS_PER_ITEM:
            return GATE_PENDING
        return annotate.stage1_gate(stage1[:JUDGMENTS_PER_ITEM])

    def _build_snapshot(self) -> Snapshot:
        judgments = tuple(self._judgments)
        gates = {item.id: self._gate(item.id) for item in self.items}
        counts: dict[tuple[str, int], int] = {}
        for item_id, stage, _ in self._by_key:
            counts[(item_id, stage)] = counts.get((item_id, stage), 0) + 1
        report = annotate.build_report(self.items, list(judgments))
        funnel = report["funnel"]
        stats = {
            "items_total": funnel["items_total"],
            "stage1_done": funnel["stage1_done"],
            "advanced": funnel["advanced"],
            "stage2_done": funnel["stage2_done"],
            "alpha_consistency": report["alpha"]["consistency"],
            "alpha_hallucination": report["alpha"]["hallucination"],
        }
        return Snapshot(judgments, gates, counts, report, stats)

    # -- operations --

    def record_judgment(self, payload: dict) -> str:
        """Validate, durably append, and apply one judgment.

        Returns "created" or "duplicate"; rejections raise
        :class:`JudgmentRejected` with the HTTP status to use.
        """
        try:
            judgment = annotate.judgment_from_dict(payload)
        except SchemaError as exc:
            raise JudgmentRejected(422, str(exc)) from exc
        if judgment.item_id not in self._items_by_id:
            raise JudgmentRejected(422, f"unknown item {judgment.item_id!r}")

        with self._lock:
            key = (judgment.item_id, judgment.stage, judgment.annotator_id)
            if key in self._by_key:
                return "duplicate"
            if judgment.stage == 2 and self._gate(judgment.item_id) != GATE_ADVANCED:
                raise JudgmentRejected(
                    409, f"item {judgment.item_id} has not advanced to stage 2")
            if self._count(judgment.item_id, judgment.stage) >= JUDGMENTS_PER_ITEM:
                raise JudgmentRejected(
                    409, f"item {judgment.item_id} already has "
                         f"{JUDGMENTS_PER_ITEM} stage-{judgment.stage} judgments")

            if judgment.timestamp is None:
                judgment = AnnotationJudgment(
                    judgment.item_id, judgment.annotator_id, judgment.stage,
                    judgment.appropriateness, judgment.verifiability,
                    judgment.consistency, judgment.hallucination, time.time())
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(annotate.judgment_to_dict(judgment),
                                    ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._apply(judgment)
            self._assignments.pop((judgment.annotator_id, judgment.stage), None)
            self._snapshot = self._build_snapshot()
        return "created"

    def _payload(self, item: AnnotationItem, stage: int) -> dict:
        view = {"id": item.id, "context": list(item.context), "response": item.response}
        if stage == 2:
            view["knowledge"] = item.knowledge
        return view

    def next_task(self, annotator_id: str, stage: int) -> dict | None:
        """Least-covered item the annotator has not judged, id as tie-break.

        A repeat call before the judgment lands returns the same assignment.
        """
        if not annotator_id:
            raise FactkitError("annotator id must be non-empty")
        if stage not in (1, 2):
            raise FactkitError("stage must be 1 or 2")
        with self._lock:
            snap = self._snapshot

            def eligible(item: AnnotationItem) -> bool:
                if (item.id, stage, annotator_id) in self._by_key:
                    return False
                if snap.counts.get((item.id, stage), 0) >= JUDGMENTS_PER_ITEM:
                    return False
                if stage == 2 and snap.gates.get(item.id) != GATE_ADVANCED:
                    return False
                return True

            open_id = self._assignments.get((annotator_id, stage))
            if open_id is not None:
                item = self._items_by_id.get(open_id)
                if item is not None and eligible(item):
                    return {"item_id": item.id, "stage": stage,
                            "annotator_id": annotator_id,
                            "payload": self._payload(item, stage)}
                self._assignments.pop((annotator_id, stage), None)

            candidates = [item for item in self.items if eligible(item)]
            if not candidates:
                return None
            candidates.sort(key=lambda it: (snap.counts.get((it.id, stage), 0), it.id))
            item = candidates[0]
            self._assignments[(annotator_id, stage)] = item.id
            return {"item_id": item.id, "stage": stage, "annotator_id": annotator_id,
                    "payload": self._payload(item, stage)}

    def aggregated_item(self, item_id: str) -> dict | None:
        if item_id not in self._items_by_id:
            return None
        snap = self._snapshot
        return annotate.aggregate_item(item_id, list(snap.judgments)).as_dict()

    def export_judgments(self) -> str:
        snap = self._snapshot
        return "".join(json.dumps(annotate.judgment_to_dict(j), ensure_ascii=False) + "\n"
                       for j in snap.judgments)

    def export_report(self) -> dict:
        return self._snapshot.report

    def stats(self) -> dict:
        return self._snapshot.stats


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "factkit"

    @property
    def store(self) -> AnnotationStore:
        return self.server.store  # type: ignore[attr-defined]

    def log_message(self, *args):  # keep test output quiet
        pass

    def _send_json(self, status: int, payload, *, jsonl: str | None = None) -> None:
        if jsonl is not None:
            body = jsonl.encode("utf-8")
            content_type = "application/x-ndjson; charset=utf-8"
        else:
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            content_type = "application/json; charset=utf-8"
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_empty(self, status: int) -> None:
        self.send_response(status)
        self.send_header("Content-Length", "0")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        query = parse_qs(url.query)
        if url.path == "/api/tasks/next":
            annotator = query.get("annotator", [""])[0]
            stage_raw = query.get("stage", [""])[0]
            if not annotator or stage_raw not in ("1", "2"):
                self._send_json(400, {"error": "annotator and stage={1|2} required"})
                return
            task = self.store.next_task(annotator, int(stage_raw))
            if task is None:
                self._send_empty(204)
            else:
                self._send_json(200, task)
        elif url.path.startswith("/api/items/"):
            item_id = url.path[len("/api/items/"):]
            aggregated = self.store.aggregated_item(item_id)
            if aggregated is None:
                self._send_json(404, {"error": f"unknown item {item_id!r}"})
            else:
                self._send_json(200, aggregated)
        elif url.path == "/api/export":
            kind = query.get("kind", ["judgments"])[0]
            if kind == "judgments":
                self._send_json(200, None, jsonl=self.store.export_judgments())
            elif kind == "report":
                self._send_json(200, self.store.export_report())
            else:
                self._send_json(400, {"error": "kind must be judgments or report"})
        elif url.path == "/api/stats":
            self._send_json(200, self.store.stats())
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/api/judgments":
            self._send_json(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw.decode("utf-8"))
            if not isinstance(payload, dict):
                raise ValueError("body must be a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            self._send_json(422, {"error": f"invalid JSON body: {exc}"})
            return
        try:
            outcome = self.store.record_judgment(payload)
        except JudgmentRejected as exc:
            self._send_json(exc.status, {"error": exc.reason})
            return
        if outcome == "duplicate":
            self._send_json(200, {"status": "duplicate"})
        else:
            self._send_json(201, {"status": "created"})


def make_server(store: AnnotationStore, port: int = 0,
                host: str = "127.0.0.1") -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _Handler)
    server.store = store  # type: ignore[attr-defined]
    return server


def serve(items_path: str | Path, data_dir: str | Path, port: int,
          host: str = "127.0.0.1") -> None:
    items = annotate.read_items(items_path)
    store = AnnotationStore(data_dir, items)
    server = make_server(store, port, host)
    print(f"serving {len(items)} items on http://{host}:{server.server_address[1]} "
          f"(log: {store.log_path})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
