"""Integration tests for the pipeline subcommands: fixture-driven mining,
pseudo-label bootstrap, and the loop command against a live service."""

from __future__ import annotations

import json
import threading
import time

import pytest

from secrev.cli import EXIT_OK, main
from secrev.extract import extract_all
from secrev.store import CorpusStore

import test_miner as miner_fixtures
from conftest import seed_pr_with_thread, seed_repo


def write_fixture_dir(tmp_path):
    """Recorded responses for one Go repository with 2 PRs, as JSON files."""
    transport = miner_fixtures.RecordedTransport()
    items = [miner_fixtures.repo_item("o/r", 9000, pr_count=1500)]
    transport.add(
        "GET",
        f"{miner_fixtures.BASE}/search/repositories?order=desc&page=1&per_page=100&q=language:Go&sort=stars",
        miner_fixtures.search_fixture(items),
    )
    miner_fixtures.crawl_fixture(transport, prs=2)
    fixture_dir = tmp_path / "recorded"
    fixture_dir.mkdir()
    for k, (key, rec) in enumerate(sorted(transport.responses.items())):
        method, url = key.split(" ", 1)
        (fixture_dir / f"r{k:03d}.json").write_text(json.dumps({
            "method": method,
            "url": miner_fixtures.BASE.replace("https://api.github.com", "") + url
                   if url.startswith("/") else url,
            "status": rec["status"],
            "headers": rec["headers"],
            "body": json.loads(rec["body"].decode()),
        }))
    return fixture_dir


def test_mine_from_fixture_dir(tmp_path, capsys):
    fixture_dir = write_fixture_dir(tmp_path)
    licenses = tmp_path / "licenses.txt"
    licenses.write_text("MIT\nApache-2.0\n")
    store_path = tmp_path / "mined.db"
    code = main([
        "mine", "--language", "Go", "--licenses", str(licenses),
        "--out", str(store_path), "--fixture", str(fixture_dir),
        "--base-url", "https://api.github.com",
    ])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "crawled o/r" in out
    store = CorpusStore.open(store_path)
    try:
        assert store.counts()["pull_requests"] == 2
        assert store.counts()["review_threads"] == 2
    finally:
        store.close()


def test_mine_parallel_equals_sequential(tmp_path):
    from secrev.miner import RestClient, crawl_many

    def build(width):
        transport = miner_fixtures.RecordedTransport()
        miner_fixtures.crawl_fixture(transport, full="o/a", prs=2)
        miner_fixtures.crawl_fixture(transport, full="o/b", prs=2)
        store = CorpusStore.in_memory()
        repos = [miner_fixtures.fixture_repo("o/a"), miner_fixtures.fixture_repo("o/b")]
        cursors = crawl_many(store, RestClient(transport), repos, width=width)
        dump = store.dump_rows()
        store.close()
        return cursors, dump

    seq_cursors, seq_dump = build(width=1)
    par_cursors, par_dump = build(width=2)
    assert seq_cursors == par_cursors
    assert seq_dump == par_dump


BOOTSTRAP_CONFIG = """
store_path = "{store}"
seed = 5

[loop]
bootstrap_size = 6
batch_size = 10
max_iterations = 2

[[backends]]
id = "kw-a"
kind = "keyword"

[[backends]]
id = "kw-b"
kind = "keyword"

[[backends]]
id = "expert-kw"
kind = "keyword"
"""


def build_labeled_corpus(store_path, n=14):
    store = CorpusStore.open(store_path)
    rid = seed_repo(store)
    for k in range(n):
        comment = (
            "possible buffer overflow in this index" if k % 3 == 0
            else "please rename this helper for clarity"
        )
        seed_pr_with_thread(store, rid, number=k + 1, external_key=f"t{k}",
                            comment=comment)
    extract_all(store)
    ids = [q.id for q in store.quintuples()]
    store.close()
    return ids


def test_bootstrap_cli_writes_pseudo_labels(tmp_path, capsys):
    store_path = tmp_path / "corpus.db"
    build_labeled_corpus(store_path)
    config = tmp_path / "pipeline.toml"
    config.write_text(BOOTSTRAP_CONFIG.format(store=store_path))
    assert main(["--config", str(config), "bootstrap"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["sampled_positive"] >= 1
    assert report["sampled_negative"] >= 1
    store = CorpusStore.open(store_path)
    try:
        labeled = store.quintuples("label IS NOT NULL")
        assert len(labeled) == report["sampled_positive"] + report["sampled_negative"]
        assert all(q.label_source == "expert_validated" for q in labeled)
    finally:
        store.close()


LOOP_CONFIG = """
store_path = "{store}"
seed = 5

[service]
url = "{url}"

[loop]
batch_size = 8
bootstrap_size = 6
max_iterations = 1
precision_threshold = 0.5
recall_threshold = 0.1

[[backends]]
id = "member-0"
kind = "local_trainable"
seed = 1

[[backends]]
id = "member-1"
kind = "local_trainable"
seed = 2

[[backends]]
id = "member-2"
kind = "local_trainable"
seed = 3
"""


def test_loop_cli_runs_an_iteration_against_live_service(tmp_path, capsys, monkeypatch):
    from secrev.annotation import AnnotationService
    from secrev.annotation_http import AnnotationServer
    from secrev.store import SOURCE_HUMAN

    monkeypatch.setenv("SECREV_LOOP_POLL_SECONDS", "0.05")
    store_path = tmp_path / "corpus.db"
    build_labeled_corpus(store_path, n=40)

    # seed training + human-labeled validation so the loop can start
    store = CorpusStore.open(store_path)
    truth = {}
    for q in store.quintuples():
        truth[q.id] = "positive" if "overflow" in q.first_reviewer_comment() else "negative"
    human = list(truth.items())[:12]
    for qid, label in human:
        store.set_label(qid, label, SOURCE_HUMAN, iteration=0)
    store.close()

    service_store = CorpusStore.open(store_path)
    server = AnnotationServer(AnnotationService(service_store))
    server.start()

    stop = threading.Event()

    def annotate():
        from secrev.annotation_http import AnnotationClient

        client = AnnotationClient(server.address)
        while not stop.is_set():
            worked = False
            for annotator in ("ann-1", "ann-2"):
                for purpose in ("binary_label", "positive_confirmation"):
                    task = client.claim_next(annotator, purpose)
                    if task is not None:
                        client.vote(task["id"], annotator, truth[task["instance_id"]])
                        worked = True
            if not worked:
                time.sleep(0.02)

    annotator_thread = threading.Thread(target=annotate, daemon=True)
    annotator_thread.start()
    try:
        config = tmp_path / "pipeline.toml"
        config.write_text(LOOP_CONFIG.format(store=store_path, url=server.address))
        assert main(["--config", str(config), "loop"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "iteration" in out
    finally:
        stop.set()
        annotator_thread.join(timeout=5)
        server.stop()
        service_store.close()

    store = CorpusStore.open(store_path)
    try:
        from secrev.loop import LoopState

        state = LoopState.load(store)
        assert state is not None
        assert state.iteration == 1
        assert state.reports and state.reports[0]["batch_size"] == 8
    finally:
        store.close()
