from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from secrev.diffs import compute_diff
from secrev.store import Commit, Comment, CorpusStore, PullRequest, Repository, ReviewThread


@pytest.fixture
def store():
    s = CorpusStore.in_memory()
    yield s
    s.close()


def seed_repo(store: CorpusStore, full_name="org/demo", language="C") -> int:
    return store.upsert_repository(Repository(
        id=None, full_name=full_name, language=language, stars=5000,
        pull_request_count=1200, license_id="MIT",
        crawled_at="2024-01-01T00:00:00Z",
    ))


def seed_pr_with_thread(
    store: CorpusStore,
    repo_id: int,
    number: int = 1,
    old: str = "a\nb\nc\nd\ne\n",
    new: str = "a\nb\nC\nd\ne\n",
    path: str = "src/x.c",
    comment: str = "possible buffer overflow here",
    comment_at: str = "2024-01-02T00:00:00Z",
    external_key: str = "t1",
):
    """One PR, one commit, one anchored thread; returns (pr_id, thread, sha)."""
    pr_id = store.upsert_pull_request(PullRequest(
        id=None, repo_id=repo_id, number=number, opened_at="2024-01-01T01:00:00Z",
    ))
    store.put_base_file(pr_id, path, old.encode())
    diff = compute_diff(old, new, path)
    sha = f"sha-{number}-1"
    store.upsert_commit(Commit(
        id=None, pr_id=pr_id, sha=sha, committed_at="2024-01-01T02:00:00Z",
        diffs=(diff,),
    ))
    lo, hi = diff.hunks[0].new_span()
    thread = ReviewThread(
        id=None, pr_id=pr_id, external_key=external_key, anchor_path=path,
        anchor_lo=lo, anchor_hi=hi, anchor_sha=sha,
        comments=(Comment("reviewer", comment, comment_at),),
    )
    thread_id = store.upsert_thread(thread)
    stored = next(t for t in store.threads_for_pr(pr_id) if t.id == thread_id)
    return pr_id, stored, sha
