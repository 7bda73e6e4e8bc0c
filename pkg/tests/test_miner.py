from __future__ import annotations

import base64
import json

import pytest

from secrev.errors import ApiAuthFailure, PartialData, RateLimited
from secrev.miner import (
    CrawlCursor,
    MiningCriteria,
    RecordedTransport,
    RestClient,
    count_pull_requests,
    crawl_repository,
    list_candidates,
)
from secrev.store import CorpusStore, Repository

BASE = "https://api.github.com"


def make_criteria(**kw):
    defaults = dict(language="Go", license_allowlist=frozenset({"MIT", "Apache-2.0"}))
    defaults.update(kw)
    return MiningCriteria(**defaults)


def test_empty_allowlist_rejected():
    with pytest.raises(ValueError):
        make_criteria(license_allowlist=frozenset())


def test_nonpositive_limits_rejected():
    with pytest.raises(ValueError):
        make_criteria(min_pull_requests=0)


def search_fixture(repos):
    return {"total_count": len(repos), "items": repos}


def repo_item(full_name, stars, license_id="MIT", pr_count=2000):
    return {
        "full_name": full_name,
        "stargazers_count": stars,
        "license": {"spdx_id": license_id},
        "pull_request_count": pr_count,
    }


def test_list_candidates_filters_pr_floor_and_license():
    transport = RecordedTransport()
    items = [repo_item(f"o/r{i}", 10_000 - i, pr_count=500 + i * 250) for i in range(10)]
    # pr counts: 500, 750, 1000, 1250, ... 2750 -> 8 pass the 1000 floor
    items[3]["license"] = {"spdx_id": "Proprietary"}  # one of the passing gets dropped
    transport.add(
        "GET", f"{BASE}/search/repositories?order=desc&page=1&per_page=100&q=language:Go&sort=stars",
        search_fixture(items),
    )
    client = RestClient(transport)
    repos = list_candidates(client, make_criteria())
    assert len(repos) == 7
    assert all(r.pull_request_count >= 1000 for r in repos)
    stars = [r.stars for r in repos]
    assert stars == sorted(stars, reverse=True)


def test_list_candidates_language_mismatch_is_empty():
    transport = RecordedTransport()
    transport.add(
        "GET", f"{BASE}/search/repositories?order=desc&page=1&per_page=100&q=language:Go&sort=stars",
        search_fixture([]),
    )
    client = RestClient(transport)
    assert list_candidates(client, make_criteria()) == []


def test_count_pull_requests_via_link_header():
    transport = RecordedTransport()
    transport.add(
        "GET", f"{BASE}/repos/o/r/pulls?page=1&per_page=1&state=all",
        [{"number": 1}],
        headers={"Link": f'<{BASE}/repos/o/r/pulls?state=all&per_page=1&page=1534>; rel="last"'},
    )
    assert count_pull_requests(RestClient(transport), "o/r") == 1534


def test_auth_failure_raises():
    transport = RecordedTransport()
    transport.add("GET", f"{BASE}/x", {"message": "bad"}, status=401)
    with pytest.raises(ApiAuthFailure):
        RestClient(transport).get("/x")


def test_rate_limit_honors_retry_after():
    class Flaky(RecordedTransport):
        def __init__(self):
            super().__init__()
            self.hits = 0

        def request(self, method, url, headers):
            self.hits += 1
            if self.hits < 3:
                return self._limited()
            return super().request(method, url, headers)

        @staticmethod
        def _limited():
            from secrev.miner import ApiResponse

            return ApiResponse(429, {"Retry-After": "7"}, b"{}")

    transport = Flaky()
    transport.add("GET", f"{BASE}/ok", {"fine": True})
    sleeps = []
    client = RestClient(transport, sleeper=sleeps.append)
    assert client.get_json("/ok") == {"fine": True}
    assert sleeps == [7.0, 7.0]


def test_rate_limit_exhaustion_raises():
    transport = RecordedTransport()

    class AlwaysLimited:
        def request(self, method, url, headers):
            from secrev.miner import ApiResponse

            return ApiResponse(403, {"Retry-After": "1"}, b"{}")

    client = RestClient(AlwaysLimited(), sleeper=lambda s: None, max_retries=2)
    with pytest.raises(RateLimited):
        client.get("/anything")


# --- crawl fixtures ------------------------------------------------------------


def crawl_fixture(transport, full="o/r", prs=3):
    """A repository with ``prs`` single-commit PRs, one review thread each."""
    pulls = []
    for n in range(1, prs + 1):
        pulls.append({
            "number": n,
            "created_at": f"2024-01-0{n}T00:00:00Z",
            "updated_at": f"2024-01-0{n}T06:00:00Z",
            "base": {"sha": f"base{n}"},
            "user": {"login": "author"},
        })
    transport.add(
        "GET", f"{BASE}/repos/{full}/pulls?direction=asc&page=1&per_page=100&sort=created&state=all",
        pulls,
    )
    for n in range(1, prs + 1):
        sha = f"c{n}"
        transport.add(
            "GET", f"{BASE}/repos/{full}/pulls/{n}/commits",
            [{"sha": sha, "commit": {"committer": {"date": f"2024-01-0{n}T01:00:00Z"}}}],
        )
        patch = "@@ -1,2 +1,2 @@\n line1\n-old\n+new"
        transport.add(
            "GET", f"{BASE}/repos/{full}/commits/{sha}",
            {"sha": sha, "files": [
                {"filename": "src/a.c", "status": "modified", "patch": patch},
            ]},
        )
        transport.add(
            "GET", f"{BASE}/repos/{full}/pulls/{n}/comments",
            [
                {
                    "id": n * 10,
                    "in_reply_to_id": None,
                    "user": {"login": "reviewer9"},
                    "body": "is this safe?",
                    "created_at": f"2024-01-0{n}T02:00:00Z",
                    "path": "src/a.c",
                    "line": 2,
                    "original_line": 2,
                    "original_commit_id": sha,
                    "commit_id": sha,
                },
                {
                    "id": n * 10 + 1,
                    "in_reply_to_id": n * 10,
                    "user": {"login": "author"},
                    "body": "fixed",
                    "created_at": f"2024-01-0{n}T03:00:00Z",
                    "path": "src/a.c",
                    "line": 2,
                    "original_commit_id": sha,
                    "commit_id": sha,
                },
            ],
        )
        transport.add(
            "GET", f"{BASE}/repos/{full}/contents/src/a.c?ref=base{n}",
            {"encoding": "base64",
             "content": base64.b64encode(b"line1\nold\n").decode()},
        )


def fixture_repo(full="o/r"):
    return Repository(None, full, "Go", 9000, 1500, "MIT", "2024-01-09T00:00:00Z")


def test_crawl_repository_persists_everything():
    transport = RecordedTransport()
    crawl_fixture(transport, prs=3)
    store = CorpusStore.in_memory()
    try:
        cursor = crawl_repository(store, RestClient(transport), fixture_repo())
        assert cursor.last_pr_number == 3
        counts = store.counts()
        assert counts["pull_requests"] == 3
        assert counts["commits"] == 3
        assert counts["review_threads"] == 3
        assert counts["comments"] == 6
        repo = store.get_repository("o/r")
        threads = store.threads_for_pr(store.pull_requests(repo.id)[0].id)
        assert threads[0].comments[0].author_role == "reviewer"
        assert threads[0].comments[1].author_role == "developer"
    finally:
        store.close()


def test_crawl_is_idempotent():
    transport = RecordedTransport()
    crawl_fixture(transport, prs=3)
    store = CorpusStore.in_memory()
    try:
        client = RestClient(transport)
        repo = fixture_repo()
        crawl_repository(store, client, repo)
        first = store.dump_rows()
        crawl_repository(store, client, repo)  # full re-run from scratch cursor
        assert store.dump_rows() == first
    finally:
        store.close()


def test_crawl_from_cursor_at_head_is_noop():
    transport = RecordedTransport()
    crawl_fixture(transport, prs=2)
    store = CorpusStore.in_memory()
    try:
        client = RestClient(transport)
        repo = fixture_repo()
        cursor = crawl_repository(store, client, repo)
        before = store.dump_rows()
        after_cursor = crawl_repository(store, client, repo, cursor)
        assert store.dump_rows() == before
        assert after_cursor.last_pr_number == cursor.last_pr_number
    finally:
        store.close()


def test_interrupted_crawl_resumes_to_identical_store():
    # uninterrupted reference run
    ref_transport = RecordedTransport()
    crawl_fixture(ref_transport, prs=3)
    ref_store = CorpusStore.in_memory()
    crawl_repository(ref_store, RestClient(ref_transport), fixture_repo())
    reference = ref_store.dump_rows()
    ref_store.close()

    class FailOnce(RecordedTransport):
        def __init__(self):
            super().__init__()
            self.fail_armed = True

        def request(self, method, url, headers):
            if self.fail_armed and "/pulls/3/comments" in url:
                self.fail_armed = False
                from secrev.miner import ApiResponse

                return ApiResponse(500, {}, b"{}")
            return super().request(method, url, headers)

    transport = FailOnce()
    crawl_fixture(transport, prs=3)
    store = CorpusStore.in_memory()
    try:
        client = RestClient(transport, sleeper=lambda s: None, max_retries=0)
        repo = fixture_repo()
        with pytest.raises(PartialData):
            crawl_repository(store, client, repo)
        # PRs 1-2 persisted, cursor stopped before the gap
        row = store._conn.execute("SELECT last_pr_number FROM cursors").fetchone()
        assert row[0] == 2
        assert store.counts()["pull_requests"] == 2

        resumed = crawl_repository(store, client, repo,
                                   CrawlCursor(1, row[0], "2024-01-02T06:00:00Z"))
        assert resumed.last_pr_number == 3
        assert store.dump_rows() == reference
    finally:
        store.close()


def test_cursor_never_regresses(store):
    rid = store.upsert_repository(fixture_repo())
    store.save_cursor(rid, 5, "2024-01-05T00:00:00Z")
    store.save_cursor(rid, 4, "2024-01-04T00:00:00Z")  # re-crawl of older PRs
    row = store._conn.execute(
        "SELECT last_pr_number, last_updated_at FROM cursors WHERE repo_id=?", (rid,)
    ).fetchone()
    assert row == (5, "2024-01-05T00:00:00Z")
