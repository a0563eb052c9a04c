"""Acceptance suite: one test per release criterion, each printing a
pass/fail line.  Real-corpus checks are skipped unless the corresponding
environment variable points at local data:

  FACTKIT_WOW_TRAIN         wizard dialog JSON training split
  FACTKIT_EXPERT_JUDGMENTS  stage-2 judgment JSONL from the expert annotation

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import math
import os
import random
import signal
import socket
import subprocess
import sys
import time
import urllib.error
import urllib.request

import numpy as np
import pytest

from factkit import annotate, augment, corpus, decode, detect
from factkit.server import AnnotationStore, JudgmentRejected
from test_annotate import alpha_oracle
from test_decode import exhaustive_best, random_table
from wowgen import make_datapoints

WOW_TRAIN = os.environ.get("FACTKIT_WOW_TRAIN")
EXPERT_JUDGMENTS = os.environ.get("FACTKIT_EXPERT_JUDGMENTS")


def note(criterion, message):
    print(f"[acceptance] criterion {criterion}: PASS - {message}")


def all_methods(seed):
    return augment.AugmentConfig.from_names(["pairing", "negation", "entity"], seed)


class TestCriterion1PairingCountLaw:
    def test_fixture_law_and_budget(self):
        for n in (2, 3, 50):
            records, stats = augment.build_dataset(
                make_datapoints(n, seed=n), all_methods(seed=1))
            assert stats.n_pairing == 2 * n
            assert sum(1 for r in records if r.corruption.startswith("pair_")) == 2 * n

        start = time.monotonic()
        points = make_datapoints(10_000, seed=1)
        records, stats = augment.build_dataset(
            points, augment.AugmentConfig.from_names(["pairing"], seed=7))
        elapsed = time.monotonic() - start
        assert stats.n_consistent == 10_000
        assert stats.n_pairing == 20_000
        assert elapsed < 5.0, f"10k pairing fixture took {elapsed:.2f}s"
        note(1, f"2N pairing law holds (N=2,3,50,10000); 10k build {elapsed:.2f}s < 5s")

    @pytest.mark.skipif(WOW_TRAIN is None, reason="FACTKIT_WOW_TRAIN not set")
    def test_real_corpus_counts(self):
        dialogs = corpus.load_wow(WOW_TRAIN)
        datapoints, _ = corpus.extract_datapoints(dialogs)
        assert len(datapoints) == 68_957
        _, stats = augment.build_dataset(
            datapoints, augment.AugmentConfig.from_names(["pairing"], seed=7))
        assert stats.n_consistent == 68_957
        assert stats.n_pairing == 137_914
        note(1, "real corpus: 68,957 consistent / 137,914 pairing exactly")


class TestCriterion2NegationApplicability:
    def test_synthetic_all_auxiliary_count_exact(self):
        n = 500
        points = make_datapoints(n, seed=2)
        records, stats = augment.build_dataset(points, all_methods(seed=3))
        response_negations = sum(1 for r in records
                                 if r.corruption == "negate_response")
        assert response_negations == n
        # entity-swap counts are reported, not gated (heuristic tagger)
        note(2, f"response negation = N = {n} exactly on the auxiliary fixture; "
                f"entity swaps reported: {stats.n_entity} "
                f"(skipped {stats.n_skipped_entity})")

    @pytest.mark.skipif(WOW_TRAIN is None, reason="FACTKIT_WOW_TRAIN not set")
    def test_real_corpus_negation_tolerance(self):
        dialogs = corpus.load_wow(WOW_TRAIN)
        datapoints, _ = corpus.extract_datapoints(dialogs)
        records, stats = augment.build_dataset(
            datapoints, augment.AugmentConfig.from_names(["negation"], seed=7))
        response_negations = sum(1 for r in records
                                 if r.corruption == "negate_response")
        target = 53_900
        assert abs(response_negations - target) <= 0.05 * target
        note(2, f"real corpus response negations {response_negations} "
                f"within 5% of {target}")


class TestCriterion3CorruptionLocality:
    def test_thousand_records_all_local(self):
        points = make_datapoints(200, seed=5)
        records, _ = augment.build_dataset(points, all_methods(seed=11))
        sources = {r.source_id: r for r in records if r.corruption == "none"}
        corrupted = [r for r in records if r.corruption != "none"]
        assert len(corrupted) >= 1000
        field_of = {"pair_response": "response", "pair_knowledge": "knowledge",
                    "negate_response": "response", "negate_knowledge": "knowledge",
                    "swap_context": "context", "swap_knowledge": "knowledge"}
        failures = []
        for rec in corrupted[:1000] + corrupted[1000:]:
            src = sources[rec.source_id]
            diffs = {name for name in ("context", "knowledge", "response")
                     if getattr(rec, name) != getattr(src, name)}
            if diffs != {field_of[rec.corruption]}:
                failures.append((rec.source_id, rec.corruption, diffs))
        assert not failures, failures[:5]
        note(3, f"{len(corrupted)} corrupted records all differ from source in "
                "exactly the named field")


class TestCriterion4DecodingOracles:
    def test_oracle_equivalence_within_budget(self):
        start = time.monotonic()

        rng = random.Random(2024)
        for trial in range(100):
            vocab = rng.randrange(2, 6)
            max_len = rng.randrange(1, 5)
            scorer = random_table(vocab, max_len, rng)
            config = decode.DecodeConfig(beam_size=vocab ** max_len,
                                         max_len=max_len)
            tokens, logp = decode.beam_search(scorer, config)
            oracle_tokens, oracle_logp = exhaustive_best(scorer, max_len)
            assert tokens == oracle_tokens, f"table {trial}"
            assert logp == oracle_logp, f"table {trial}"

        for trial in range(25):
            scorer = random_table(4, 4, rng)
            config = decode.DecodeConfig(strategy="delayed_beam", delay_steps=0,
                                         beam_size=3, max_len=4)
            dbs = decode.delayed_beam_search(scorer, config, random.Random(trial))
            beam, _ = decode.beam_search(scorer, config)
            assert dbs == beam

        scorer = random_table(5, 3, rng)
        config = decode.DecodeConfig(strategy="nucleus", p=0.8, max_len=3)
        sampler = random.Random(7)
        draws = 0
        while draws < 10_000:
            out = decode.nucleus_sample(scorer, config, sampler)
            prefix = ()
            for tok in out:
                dist = scorer.distribution(prefix)
                order = sorted(range(5), key=lambda t: (-dist.probs[t], t))
                cumulative, nucleus = 0.0, []
                for t in order:
                    nucleus.append(t)
                    cumulative += dist.probs[t]
                    if cumulative >= 0.8 - 1e-12:
                        break
                assert tok in nucleus
                prefix += (tok,)
                draws += 1
            draws += 1  # EOS / empty draws count as a draw too

        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"decoding oracle suite took {elapsed:.2f}s"
        note(4, f"beam==exhaustive on 100 tables, DBS(delay=0)==beam, nucleus "
                f"membership over 10k draws; {elapsed:.1f}s < 30s")


class TestCriterion5KrippendorffAlpha:
    def test_oracle_and_perfect_agreement(self):
        rng = random.Random(501)
        checked = 0
        while checked < 20:
            annotators = rng.randrange(2, 5)
            width = rng.randrange(2, 7)
            metric = rng.choice(["nominal", "interval"])
            data = [[rng.choice([None, 0.0, 0.5, 1.0, 2.0]) for _ in range(width)]
                    for _ in range(annotators)]
            try:
                ours = annotate.krippendorff_alpha(data, metric)
            except Exception:
                continue
            theirs = alpha_oracle(data, metric)
            assert abs(ours - theirs) < 1e-9
            checked += 1

        perfect = [[0.0, 1.0, 0.5, 1.0], [0.0, 1.0, 0.5, 1.0], [0.0, 1.0, 0.5, 1.0]]
        assert annotate.krippendorff_alpha(perfect, "interval") == 1.0
        assert annotate.krippendorff_alpha(perfect, "nominal") == 1.0
        note(5, "alpha matches brute-force oracle to 1e-9 on 20 matrices; "
                "perfect agreement gives 1.0")

    @pytest.mark.skipif(EXPERT_JUDGMENTS is None,
                        reason="FACTKIT_EXPERT_JUDGMENTS not set")
    def test_released_expert_agreement(self):
        judgments = annotate.read_judgments(EXPERT_JUDGMENTS)
        alpha_consistency = annotate.question_alpha(judgments, "consistency")
        alpha_hallucination = annotate.question_alpha(judgments, "hallucination")
        assert abs(alpha_consistency - 0.80) <= 0.02
        assert abs(alpha_hallucination - 0.86) <= 0.02
        note(5, f"released expert annotations reproduce alpha "
                f"{alpha_consistency:.2f}/{alpha_hallucination:.2f}")


def funnel_judgments():
    """3600 items: 819 filtered inappropriate, 912 filtered non-verifiable,
    1869 advanced (the published funnel shape)."""
    judgments = []
    for i in range(3600):
        item = f"task{i:04d}"
        if i < 819:
            scores = [(2, 4), (2, 4), (2, 4)]
        elif i < 819 + 912:
            scores = [(4, 2), (4, 2), (4, 2)]
        else:
            scores = [(4, 4), (5, 3), (4, 5)]
        for annotator, (a, v) in zip("abc", scores):
            judgments.append(annotate.AnnotationJudgment(
                item, annotator, 1, appropriateness=a, verifiability=v))
    return judgments


def expert_judgments():
    """584 stage-2 items: 502 bucket consistent, 82 inconsistent."""
    consistent_patterns = [(1.0, 1.0, 1.0), (1.0, 1.0, 0.5), (0.5, 0.5, 1.0),
                           (1.0, 0.5, 0.5)]
    inconsistent_patterns = [(0.0, 0.0, 0.0), (0.0, 0.0, 0.5), (0.5, 0.0, 0.0)]
    judgments = []
    for i in range(584):
        item = f"expert{i:03d}"
        if i < 502:
            pattern = consistent_patterns[i % len(consistent_patterns)]
            hallucination = "no"
        else:
            pattern = inconsistent_patterns[i % len(inconsistent_patterns)]
            hallucination = "yes"
        for annotator, value in zip("abc", pattern):
            judgments.append(annotate.AnnotationJudgment(
                item, annotator, 2, consistency=value,
                hallucination=hallucination))
    return judgments


class TestCriterion6ProtocolReplay:
    def test_published_funnel_counts(self, tmp_path):
        log = tmp_path / "stage1.jsonl"
        annotate.write_judgments(funnel_judgments(), log)
        replayed = annotate.read_judgments(log)
        item_ids = [f"task{i:04d}" for i in range(3600)]
        aggregated = annotate.aggregate_items(item_ids, replayed)
        gates = [a.gate for a in aggregated]
        assert len(gates) == 3600
        survivors_appropriate = sum(
            1 for g in gates if g != annotate.GATE_FILTERED_INAPPROPRIATE)
        advanced = sum(1 for g in gates if g == annotate.GATE_ADVANCED)
        assert survivors_appropriate == 2781
        assert advanced == 1869
        note(6, "funnel replay: 3600 -> 2781 appropriate -> 1869 verifiable")

    def test_expert_bucket_split(self, tmp_path):
        log = tmp_path / "stage2.jsonl"
        stage2 = expert_judgments()
        # every expert item advanced through stage 1
        stage1 = [annotate.AnnotationJudgment(f"expert{i:03d}", a, 1,
                                              appropriateness=4, verifiability=4)
                  for i in range(584) for a in "abc"]
        annotate.write_judgments(stage1 + stage2, log)
        replayed = annotate.read_judgments(log)
        item_ids = [f"expert{i:03d}" for i in range(584)]
        aggregated = annotate.aggregate_items(item_ids, replayed)
        buckets = [a.bucket for a in aggregated]
        assert len(buckets) == 584
        assert buckets.count("consistent") == 502
        assert buckets.count("inconsistent") == 82
        note(6, "expert replay: 584 -> 502 consistent / 82 inconsistent at >=0.5")


class TestCriterion7BaselineSignal:
    def test_f1_on_pipeline_fixture(self):
        points = make_datapoints(1000, seed=11)
        records, _ = augment.build_dataset(points, all_methods(seed=7))
        assert len(records) >= 5000

        features = np.stack([detect.featurize(r) for r in records])
        labels = [r.label for r in records]
        perm = np.random.default_rng(7).permutation(len(records))
        cut = int(len(records) * 0.8)
        train = [(features[i], labels[i]) for i in perm[:cut]]
        test_idx = perm[cut:]

        weights = detect.train_baseline(train, epochs=400, learning_rate=2.0,
                                        seed=7)
        preds = [detect.predict_features(weights, features[i])[0]
                 for i in test_idx]
        gold = [labels[i] for i in test_idx]
        report = detect.evaluate_f1(preds, gold)
        trivial = detect.evaluate_f1(["consistent"] * len(gold), gold)

        def macro(r):
            return sum(m.f1 for m in r.per_class.values()) / len(r.per_class)

        f1_inconsistent = report.per_class["inconsistent"].f1
        assert f1_inconsistent >= 0.60
        assert macro(report) > macro(trivial)
        note(7, f"{len(records)} records, 80/20 seed 7: F1(IC)="
                f"{f1_inconsistent:.3f} >= 0.60, macro {macro(report):.3f} > "
                f"all-consistent {macro(trivial):.3f}")


class TestCriterion8MappingAndF1Conventions:
    def test_mapping_table_exact(self):
        assert detect.map_nli_label("supports") == "consistent"
        assert detect.map_nli_label("not_enough_info") == "inconsistent"
        assert detect.map_nli_label("refutes") == "inconsistent"

        # hand confusion: TP=8 FP=2 FN=2 TN=8 for the consistent class
        gold = ["consistent"] * 10 + ["inconsistent"] * 10
        preds = (["consistent"] * 8 + ["inconsistent"] * 2
                 + ["consistent"] * 2 + ["inconsistent"] * 8)
        report = detect.evaluate_f1(preds, gold)
        assert report.confusion == {
            ("consistent", "consistent"): 8,
            ("consistent", "inconsistent"): 2,
            ("inconsistent", "consistent"): 2,
            ("inconsistent", "inconsistent"): 8,
        }
        assert report.per_class["consistent"].precision == 0.8
        assert report.per_class["consistent"].recall == 0.8
        assert abs(report.per_class["consistent"].f1 - 0.8) < 1e-12

        # degenerate all-one-class prediction: F1 of the missing class is 0.0
        degenerate = detect.evaluate_f1(["consistent"] * 4,
                                        ["consistent", "consistent",
                                         "inconsistent", "inconsistent"])
        assert degenerate.per_class["inconsistent"].f1 == 0.0
        assert degenerate.per_class["inconsistent"].precision == 0.0
        assert degenerate.per_class["inconsistent"].recall == 0.0
        note(8, "NLI bucketing exact; hand confusion matrices and 0.0 "
                "degenerate convention reproduced")


class TestCriterion9GradientCheck:
    def test_relative_error_below_1e6(self):
        rng = np.random.default_rng(90)
        features = rng.normal(size=(60, 6))
        targets = (rng.random(60) < 0.5).astype(float)
        h = 1e-6
        worst = 0.0
        for _ in range(10):
            w = rng.normal(size=6)
            analytic = detect.loss_gradient(w, features, targets)
            numeric = np.empty(6)
            for d in range(6):
                step = np.zeros(6)
                step[d] = h
                numeric[d] = (detect.logistic_loss(w + step, features, targets)
                              - detect.logistic_loss(w - step, features, targets)
                              ) / (2 * h)
            rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
            worst = max(worst, float(rel.max()))
        assert worst < 1e-6
        note(9, f"analytic vs central-difference gradient: worst relative "
                f"error {worst:.2e} < 1e-6 at 10 random points")


def _free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def _wait_for(url, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            with urllib.request.urlopen(url, timeout=1):
                return
        except Exception:
            time.sleep(0.05)
    raise TimeoutError(url)


def _post(url, body):
    request = urllib.request.Request(
        url, data=json.dumps(body).encode(), method="POST",
        headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(request, timeout=5) as resp:
            return resp.status
    except urllib.error.HTTPError as exc:
        return exc.code


class TestCriterion10ServerDurability:
    def test_restart_preserves_and_gate_enforced(self, tmp_path):
        items_path = tmp_path / "items.jsonl"
        with open(items_path, "w") as fh:
            for i in range(5):
                fh.write(json.dumps({"id": f"item{i:03d}", "context": ["c"],
                                     "knowledge": f"k{i}",
                                     "response": f"r{i}"}) + "\n")
        data_dir = tmp_path / "state"
        port = _free_port()
        argv = [sys.executable, "-m", "factkit", "serve", "--port", str(port),
                "--data", str(data_dir), "--items", str(items_path)]
        base = f"http://127.0.0.1:{port}"

        proc = subprocess.Popen(argv, stdout=subprocess.DEVNULL,
                                stderr=subprocess.DEVNULL)
        try:
            _wait_for(f"{base}/api/stats")
            sent = 0
            # item000 advances; item001 is gated out on appropriateness
            for annotator in ("a", "b", "c"):
                assert _post(f"{base}/api/judgments",
                             {"item_id": "item000", "annotator_id": annotator,
                              "stage": 1, "appropriateness": 4,
                              "verifiability": 4}) == 201
                assert _post(f"{base}/api/judgments",
                             {"item_id": "item001", "annotator_id": annotator,
                              "stage": 1, "appropriateness": 1,
                              "verifiability": 4}) == 201
                sent += 2
            for annotator in ("a", "b", "c"):
                assert _post(f"{base}/api/judgments",
                             {"item_id": "item000", "annotator_id": annotator,
                              "stage": 2, "consistency": 1.0,
                              "hallucination": "no"}) == 201
                sent += 1
            assert _post(f"{base}/api/judgments",
                         {"item_id": "item002", "annotator_id": "a", "stage": 1,
                          "appropriateness": 3, "verifiability": 3}) == 201
            sent += 1
            assert sent == 10
        finally:
            os.kill(proc.pid, signal.SIGKILL)
            proc.wait()

        proc = subprocess.Popen(argv, stdout=subprocess.DEVNULL,
                                stderr=subprocess.DEVNULL)
        try:
            _wait_for(f"{base}/api/stats")
            with urllib.request.urlopen(f"{base}/api/export?kind=judgments",
                                        timeout=5) as resp:
                recovered = resp.read().decode().splitlines()
            assert len(recovered) == 10

            # stage-2 writes for the gated-out item stay impossible: 409
            assert _post(f"{base}/api/judgments",
                         {"item_id": "item001", "annotator_id": "z", "stage": 2,
                          "consistency": 1.0, "hallucination": "no"}) == 409
            note(10, "kill -9 after 10 acknowledged judgments lost nothing; "
                     "stage-2 on a gated-out item still 409")
        finally:
            os.kill(proc.pid, signal.SIGKILL)
            proc.wait()

    def test_stage2_issuance_blocked_in_process(self, tmp_path):
        store = AnnotationStore(tmp_path, [
            annotate.AnnotationItem("only", ("c",), "k", "r")])
        for annotator in ("a", "b", "c"):
            store.record_judgment({"item_id": "only", "annotator_id": annotator,
                                   "stage": 1, "appropriateness": 1,
                                   "verifiability": 5})
        assert store.next_task("anyone", 2) is None
        with pytest.raises(JudgmentRejected) as err:
            store.record_judgment({"item_id": "only", "annotator_id": "x",
                                   "stage": 2, "consistency": 0.5,
                                   "hallucination": "no"})
        assert err.value.status == 409
