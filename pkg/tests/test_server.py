import json
import os
import signal
import socket
import subprocess
import sys
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path

import pytest

from factkit.annotate import AnnotationItem
from factkit.server import AnnotationStore, JudgmentRejected, make_server


def items(n=3, with_tags=False):
    tags = {"retriever": "gt", "model_size": "small", "decoding": "beam"}
    return [AnnotationItem(f"item{i:03d}", ("ctx one", "ctx two"),
                           f"knowledge {i} NEVER_SHOW_{i}", f"response {i}",
                           tags if with_tags else {})
            for i in range(n)]


def j1(item, annotator, a=4, v=4):
    return {"item_id": item, "annotator_id": annotator, "stage": 1,
            "appropriateness": a, "verifiability": v}


def j2(item, annotator, c=1.0, h="no"):
    return {"item_id": item, "annotator_id": annotator, "stage": 2,
            "consistency": c, "hallucination": h}


class TestStore:
    def test_fresh_store_assigns_stage1(self, tmp_path):
        store = AnnotationStore(tmp_path, items(1))
        task = store.next_task("alice", 1)
        assert task["item_id"] == "item000"
        assert task["stage"] == 1
        assert "knowledge" not in task["payload"]
        assert task["payload"]["context"] == ["ctx one", "ctx two"]

    def test_repeat_fetch_returns_same_assignment(self, tmp_path):
        store = AnnotationStore(tmp_path, items(3))
        first = store.next_task("alice", 1)
        second = store.next_task("alice", 1)
        assert first == second

    def test_judged_item_not_reassigned(self, tmp_path):
        store = AnnotationStore(tmp_path, items(2))
        task = store.next_task("alice", 1)
        store.record_judgment(j1(task["item_id"], "alice"))
        follow_up = store.next_task("alice", 1)
        assert follow_up["item_id"] != task["item_id"]

    def test_least_covered_first_with_id_tie_break(self, tmp_path):
        store = AnnotationStore(tmp_path, items(3))
        store.record_judgment(j1("item000", "x"))
        task = store.next_task("alice", 1)
        assert task["item_id"] == "item001"

    def test_exhausted_returns_none(self, tmp_path):
        store = AnnotationStore(tmp_path, items(1))
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator))
        assert store.next_task("dave", 1) is None

    def test_stage2_requires_advanced(self, tmp_path):
        store = AnnotationStore(tmp_path, items(2))
        assert store.next_task("alice", 2) is None
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator))
        task = store.next_task("alice", 2)
        assert task["item_id"] == "item000"
        assert task["payload"]["knowledge"].startswith("knowledge 0")

    def test_gated_out_item_never_issued_for_stage2(self, tmp_path):
        store = AnnotationStore(tmp_path, items(1))
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator, a=1))
        assert store.next_task("alice", 2) is None

    def test_stage2_write_rejected_409_for_gated_item(self, tmp_path):
        store = AnnotationStore(tmp_path, items(1))
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator, a=1))
        with pytest.raises(JudgmentRejected) as err:
            store.record_judgment(j2("item000", "alice"))
        assert err.value.status == 409

    def test_duplicate_is_idempotent(self, tmp_path):
        store = AnnotationStore(tmp_path, items(1))
        assert store.record_judgment(j1("item000", "alice")) == "created"
        before = store.export_judgments()
        assert store.record_judgment(j1("item000", "alice", a=5)) == "duplicate"
        assert store.export_judgments() == before

    def test_invalid_consistency_value_422(self, tmp_path):
        store = AnnotationStore(tmp_path, items(1))
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator))
        with pytest.raises(JudgmentRejected) as err:
            store.record_judgment(j2("item000", "alice", c=0.7))
        assert err.value.status == 422

    def test_unknown_item_422(self, tmp_path):
        store = AnnotationStore(tmp_path, items(1))
        with pytest.raises(JudgmentRejected) as err:
            store.record_judgment(j1("nope", "alice"))
        assert err.value.status == 422

    def test_fourth_judgment_409(self, tmp_path):
        store = AnnotationStore(tmp_path, items(1))
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator))
        with pytest.raises(JudgmentRejected) as err:
            store.record_judgment(j1("item000", "dave"))
        assert err.value.status == 409

    def test_replay_restores_state(self, tmp_path):
        store = AnnotationStore(tmp_path, items(2))
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator))
        store.record_judgment(j2("item000", "a"))
        reborn = AnnotationStore(tmp_path, items(2))
        assert reborn.export_judgments() == store.export_judgments()
        assert reborn.stats() == store.stats()
        assert reborn.export_report() == store.export_report()

    def test_export_byte_stable(self, tmp_path):
        store = AnnotationStore(tmp_path, items(2))
        store.record_judgment(j1("item000", "a"))
        first = store.export_judgments()
        second = store.export_judgments()
        assert first == second
        assert json.dumps(store.export_report(), sort_keys=True) == \
            json.dumps(store.export_report(), sort_keys=True)

    def test_export_matches_annotate_recomputation(self, tmp_path):
        from factkit import annotate as annotate_mod
        store = AnnotationStore(tmp_path, items(2, with_tags=True))
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator))
        store.record_judgment(j2("item000", "a", c=0.5))
        raw = [annotate_mod.judgment_from_dict(json.loads(line))
               for line in store.export_judgments().splitlines()]
        recomputed = annotate_mod.build_report(items(2, with_tags=True), raw)
        assert store.export_report() == recomputed

    def test_concurrent_writers_keep_invariants(self, tmp_path):
        store = AnnotationStore(tmp_path, items(5))
        errors = []

        def annotator(name):
            try:
                while True:
                    task = store.next_task(name, 1)
                    if task is None:
                        return
                    try:
                        store.record_judgment(j1(task["item_id"], name))
                    except JudgmentRejected:
                        pass
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=annotator, args=(f"w{i}",))
                   for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        counts = {}
        for line in store.export_judgments().splitlines():
            obj = json.loads(line)
            key = (obj["item_id"], obj["stage"])
            counts[key] = counts.get(key, 0) + 1
        assert all(c <= 3 for c in counts.values())
        assert store.stats()["stage1_done"] == sum(1 for c in counts.values() if c == 3)


@pytest.fixture
def live_server(tmp_path):
    store = AnnotationStore(tmp_path, items(3))
    server = make_server(store, 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", store
    server.shutdown()
    server.server_close()


def http(method, url, body=None):
    data = json.dumps(body).encode() if body is not None else None
    request = urllib.request.Request(url, data=data, method=method,
                                     headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(request, timeout=5) as resp:
            raw = resp.read()
            return resp.status, json.loads(raw) if raw else None
    except urllib.error.HTTPError as exc:
        raw = exc.read()
        return exc.code, json.loads(raw) if raw else None


class TestHttpApi:
    def test_task_flow_and_codes(self, live_server):
        base, _ = live_server
        status, task = http("GET", f"{base}/api/tasks/next?annotator=alice&stage=1")
        assert status == 200
        assert "knowledge" not in task["payload"]
        assert "NEVER_SHOW" not in json.dumps(task)

        status, body = http("POST", f"{base}/api/judgments",
                            j1(task["item_id"], "alice"))
        assert status == 201 and body == {"status": "created"}

        status, body = http("POST", f"{base}/api/judgments",
                            j1(task["item_id"], "alice"))
        assert status == 200 and body == {"status": "duplicate"}

    def test_204_when_exhausted(self, live_server):
        base, store = live_server
        for item in items(3):
            for annotator in ("a", "b", "c"):
                store.record_judgment(j1(item.id, annotator))
        status, _ = http("GET", f"{base}/api/tasks/next?annotator=a&stage=1")
        assert status == 204

    def test_409_and_422_over_wire(self, live_server):
        base, store = live_server
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator, a=1))
        status, body = http("POST", f"{base}/api/judgments", j2("item000", "x"))
        assert status == 409 and "error" in body

        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item001", annotator))
        status, body = http("POST", f"{base}/api/judgments",
                            j2("item001", "x", c=0.7))
        assert status == 422 and "error" in body

    def test_item_aggregate_endpoint(self, live_server):
        base, store = live_server
        for annotator in ("a", "b", "c"):
            store.record_judgment(j1("item000", annotator))
        status, body = http("GET", f"{base}/api/items/item000")
        assert status == 200
        assert body["gate"] == "advanced"
        status, _ = http("GET", f"{base}/api/items/ghost")
        assert status == 404

    def test_export_and_stats(self, live_server):
        base, store = live_server
        store.record_judgment(j1("item000", "a"))
        request = urllib.request.Request(f"{base}/api/export?kind=judgments")
        with urllib.request.urlopen(request, timeout=5) as resp:
            lines = resp.read().decode().splitlines()
        assert len(lines) == 1
        status, stats = http("GET", f"{base}/api/stats")
        assert status == 200
        assert stats["items_total"] == 3
        assert set(stats) == {"items_total", "stage1_done", "advanced",
                              "stage2_done", "alpha_consistency",
                              "alpha_hallucination"}

    def test_bad_query_400(self, live_server):
        base, _ = live_server
        status, _ = http("GET", f"{base}/api/tasks/next?stage=9")
        assert status == 400


def wait_for(url, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            with urllib.request.urlopen(url, timeout=1):
                return
        except Exception:
            time.sleep(0.05)
    raise TimeoutError(f"server at {url} never came up")


def free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class TestDurabilityAcrossProcesses:
    def test_kill_dash_nine_loses_nothing(self, tmp_path):
        items_path = tmp_path / "items.jsonl"
        with open(items_path, "w") as fh:
            for i in range(4):
                fh.write(json.dumps({
                    "id": f"item{i:03d}", "context": ["c1"],
                    "knowledge": f"k{i}", "response": f"r{i}"}) + "\n")
        data_dir = tmp_path / "data"
        port = free_port()
        argv = [sys.executable, "-m", "factkit", "serve", "--port", str(port),
                "--data", str(data_dir), "--items", str(items_path)]

        proc = subprocess.Popen(argv, stdout=subprocess.DEVNULL,
                                stderr=subprocess.DEVNULL)
        try:
            base = f"http://127.0.0.1:{port}"
            wait_for(f"{base}/api/stats")
            sent = []
            for i in range(4):
                for annotator in ("a", "b", "c"):
                    if len(sent) == 10:
                        break
                    body = j1(f"item{i:03d}", annotator)
                    status, _ = http("POST", f"{base}/api/judgments", body)
                    assert status == 201
                    sent.append(body)
            assert len(sent) == 10
        finally:
            os.kill(proc.pid, signal.SIGKILL)
            proc.wait()

        proc = subprocess.Popen(argv, stdout=subprocess.DEVNULL,
                                stderr=subprocess.DEVNULL)
        try:
            base = f"http://127.0.0.1:{port}"
            wait_for(f"{base}/api/stats")
            request = urllib.request.Request(f"{base}/api/export?kind=judgments")
            with urllib.request.urlopen(request, timeout=5) as resp:
                lines = resp.read().decode().splitlines()
            recovered = [json.loads(line) for line in lines]
            assert len(recovered) == 10
            for before, after in zip(sent, recovered):
                for key, value in before.items():
                    assert after[key] == value
            # the gate state also survived: item000..item002 advanced
            status, stats = http("GET", f"{base}/api/stats")
            assert stats["stage1_done"] == 3
        finally:
            os.kill(proc.pid, signal.SIGKILL)
            proc.wait()
