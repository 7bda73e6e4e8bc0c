from __future__ import annotations

import json

import pytest

from secrev.diffs import compute_diff, parse_unified
from secrev.errors import AnchorUnresolvable, ConflictingLabel, PathUnknown
from secrev.extract import extract_all, extract_quintuple, reconstruct_file_state
from secrev.store import (
    Comment,
    Commit,
    CorpusStore,
    PullRequest,
    ReviewThread,
    SOURCE_ENSEMBLE,
    SOURCE_HUMAN,
    quintuple_from_record,
    quintuple_to_record,
)

from conftest import seed_pr_with_thread, seed_repo


def test_commit_ordering_is_total(store):
    rid = seed_repo(store)
    pr_id = store.upsert_pull_request(PullRequest(None, rid, 1, "2024-01-01T00:00:00Z"))
    store.upsert_commit(Commit(None, pr_id, "bbb", "2024-01-01T02:00:00Z"))
    store.upsert_commit(Commit(None, pr_id, "aaa", "2024-01-01T02:00:00Z"))
    store.upsert_commit(Commit(None, pr_id, "zzz", "2024-01-01T01:00:00Z"))
    shas = [c.sha for c in store.commits_for_pr(pr_id)]
    assert shas == ["zzz", "aaa", "bbb"]  # timestamp first, sha breaks ties


def test_reconstruct_base_state(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid)
    pr = store.get_pull_request(pr_id)
    assert reconstruct_file_state(store, pr, "src/x.c", -1) == "a\nb\nc\nd\ne\n"


def test_reconstruct_after_commit(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid)
    pr = store.get_pull_request(pr_id)
    assert reconstruct_file_state(store, pr, "src/x.c", 0) == "a\nb\nC\nd\ne\n"


def test_reconstruct_unknown_path(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid)
    pr = store.get_pull_request(pr_id)
    with pytest.raises(PathUnknown):
        reconstruct_file_state(store, pr, "src/missing.c", 0)


def test_reconstruct_path_created_later(store):
    rid = seed_repo(store)
    pr_id = store.upsert_pull_request(PullRequest(None, rid, 9, "2024-01-01T00:00:00Z"))
    store.upsert_commit(Commit(None, pr_id, "c0", "2024-01-01T01:00:00Z",
                               (compute_diff("x\n", "x2\n", "old.c"),)))
    store.put_base_file(pr_id, "old.c", b"x\n")
    store.upsert_commit(Commit(None, pr_id, "c1", "2024-01-01T02:00:00Z",
                               (compute_diff(None, "fresh\n", "new.c"),)))
    pr = store.get_pull_request(pr_id)
    with pytest.raises(PathUnknown):
        reconstruct_file_state(store, pr, "new.c", 0)
    assert reconstruct_file_state(store, pr, "new.c", 1) == "fresh\n"


def test_rename_chain_followed(store):
    rid = seed_repo(store)
    pr_id = store.upsert_pull_request(PullRequest(None, rid, 3, "2024-01-01T00:00:00Z"))
    store.put_base_file(pr_id, "a.c", b"one\ntwo\n")
    store.upsert_commit(Commit(None, pr_id, "c0", "2024-01-01T01:00:00Z",
                               (compute_diff("one\ntwo\n", "one\ntwo!\n", "b.c",
                                             old_path="a.c"),)))
    pr = store.get_pull_request(pr_id)
    assert reconstruct_file_state(store, pr, "b.c", 0) == "one\ntwo!\n"
    with pytest.raises(PathUnknown):
        reconstruct_file_state(store, pr, "a.c", 0)


def test_extract_quintuple_no_followup_has_no_refinement(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid)
    q = extract_quintuple(store, thread)
    assert q.refinement is None
    assert q.file_old == "a\nb\nc\nd\ne\n"
    assert q.file_new == "a\nb\nC\nd\ne\n"
    assert "-c" in q.hunk_diff and "+C" in q.hunk_diff


def test_extract_quintuple_overlapping_followup(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid)
    # follow-up commit, after the comment, rewriting the reviewed line
    follow = compute_diff("a\nb\nC\nd\ne\n", "a\nb\nC3\nd\ne\n", "src/x.c")
    store.upsert_commit(Commit(None, pr_id, "sha-1-2", "2024-01-03T00:00:00Z", (follow,)))
    q = extract_quintuple(store, thread)
    assert q.refinement is not None
    assert "C3" in q.refinement


def test_extract_quintuple_followup_elsewhere_is_not_refinement(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid)
    store.put_base_file(pr_id, "src/other.c", b"zzz\n")
    follow = compute_diff("zzz\n", "zzz2\n", "src/other.c")
    store.upsert_commit(Commit(None, pr_id, "sha-1-2", "2024-01-03T00:00:00Z", (follow,)))
    q = extract_quintuple(store, thread)
    assert q.refinement is None


def test_extract_quintuple_followup_before_comment_ignored(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid, comment_at="2024-01-05T00:00:00Z")
    follow = compute_diff("a\nb\nC\nd\ne\n", "a\nb\nC3\nd\ne\n", "src/x.c")
    store.upsert_commit(Commit(None, pr_id, "sha-1-2", "2024-01-03T00:00:00Z", (follow,)))
    q = extract_quintuple(store, thread)
    assert q.refinement is None  # the change predates the review comment


def test_extract_unresolvable_anchor_skipped(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid)
    bad = ReviewThread(
        id=None, pr_id=pr_id, external_key="t-bad", anchor_path="src/x.c",
        anchor_lo=1, anchor_hi=2, anchor_sha="force-pushed-away",
        comments=(Comment("reviewer", "hm", "2024-01-02T00:00:00Z"),),
    )
    store.upsert_thread(bad)
    with pytest.raises(AnchorUnresolvable):
        extract_quintuple(store, next(t for t in store.threads_for_pr(pr_id)
                                      if t.external_key == "t-bad"))
    census = extract_all(store)
    assert census["extracted"] == 1
    assert census["skipped"] == 1
    assert census["skipped_AnchorUnresolvable"] == 1


def test_apply_diff_round_trip_invariant_on_fixtures(store):
    rid = seed_repo(store)
    pr_id, thread, sha = seed_pr_with_thread(store, rid)
    extract_all(store)
    from secrev.diffs import apply_diff

    for q in store.quintuples():
        rebuilt = apply_diff(q.file_old, parse_unified(q.hunk_diff))
        assert rebuilt == q.file_new


def test_export_empty_store(store, tmp_path):
    out = tmp_path / "empty.jsonl"
    assert store.export_dataset(out) == 0
    assert out.read_text() == ""


def test_export_round_trip(store, tmp_path):
    rid = seed_repo(store)
    for n in range(5):
        seed_pr_with_thread(store, rid, number=n + 1, external_key=f"t{n}")
    extract_all(store)
    out = tmp_path / "data.jsonl"
    assert store.export_dataset(out) == 5

    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == 5
    for record in lines:
        q = quintuple_from_record(record)
        assert quintuple_to_record(q) == record

    second = CorpusStore.in_memory()
    try:
        assert second.import_dataset(out) == 5
        assert len(second.quintuples()) == 5
        orig = {q.id: q for q in store.quintuples()}
        for q in second.quintuples():
            o = orig[q.id]
            assert (q.hunk_diff, q.file_old, q.file_new, q.comments) == (
                o.hunk_diff, o.file_old, o.file_new, o.comments)
    finally:
        second.close()


def test_export_filter_counts_labeled_only(store, tmp_path):
    rid = seed_repo(store)
    for n in range(4):
        seed_pr_with_thread(store, rid, number=n + 1, external_key=f"t{n}")
    extract_all(store)
    ids = [q.id for q in store.quintuples()]
    store.set_label(ids[0], "positive", SOURCE_ENSEMBLE)
    store.set_label(ids[1], "positive", SOURCE_ENSEMBLE)
    out = tmp_path / "sec.jsonl"
    count = store.export_dataset(out, lambda q: q.label == "positive")
    assert count == 2


def test_human_labels_immutable(store):
    rid = seed_repo(store)
    seed_pr_with_thread(store, rid)
    extract_all(store)
    qid = store.quintuples()[0].id
    store.set_label(qid, "positive", SOURCE_HUMAN, iteration=1)
    with pytest.raises(ConflictingLabel):
        store.set_label(qid, "negative", SOURCE_HUMAN, iteration=2)
    # non-human relabel of a human label is a silent no-op
    store.set_label(qid, "positive", SOURCE_ENSEMBLE)
    assert store.quintuples()[0].label_source == SOURCE_HUMAN


def test_upserts_are_idempotent(store):
    rid = seed_repo(store)
    seed_pr_with_thread(store, rid)
    first = store.dump_rows()
    rid2 = seed_repo(store)
    seed_pr_with_thread(store, rid2)
    assert rid == rid2
    assert store.dump_rows() == first


def test_binary_files_flagged_and_excluded(store):
    rid = seed_repo(store)
    pr_id = store.upsert_pull_request(PullRequest(None, rid, 77, "2024-01-01T00:00:00Z"))
    store.put_base_file(pr_id, "img.png", b"\x89PNG\x00\x01")
    store.put_base_file(pr_id, "ok.c", b"int x;\n")
    snapshot = store.base_snapshot(pr_id)
    assert "img.png" not in snapshot
    assert snapshot["ok.c"] == "int x;\n"


def test_line_endings_normalized_at_ingest(store):
    rid = seed_repo(store)
    pr_id = store.upsert_pull_request(PullRequest(None, rid, 78, "2024-01-01T00:00:00Z"))
    store.put_base_file(pr_id, "dos.c", b"a\r\nb\r\n")
    assert store.base_snapshot(pr_id)["dos.c"] == "a\nb\n"
    raw = store._conn.execute(
        "SELECT raw_blob FROM base_files WHERE path='dos.c'").fetchone()[0]
    assert raw == b"a\r\nb\r\n"  # original bytes retained for audit
