"""Crawler for repository and pull-request review data over a REST API.

The client speaks the hosting platform's v3-style JSON API through a
``Transport`` so tests replay recorded responses and live crawling is an
explicitly flagged mode.  Requests are paginated, retried with exponential
backoff, and rate limits are honored via Retry-After.  Crawls are resumable:
a per-repository cursor records the last fully persisted pull request and
re-runs are idempotent.
"""

from __future__ import annotations

import base64
import json
import logging
import re
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

from .errors import ApiAuthFailure, PartialData, RateLimited
from .store import LANGUAGES, Commit, CorpusStore, PullRequest, Repository, ReviewThread, Comment
from .diffs import parse_unified, FileDiff, ADD, DELETE, MODIFY, RENAME

log = logging.getLogger(__name__)

USER_AGENT = "secrev-miner/0.1"


@dataclass(frozen=True)
class MiningCriteria:
    language: str
    license_allowlist: frozenset[str]
    star_rank_limit: int = 10_000
    min_pull_requests: int = 1_000

    def __post_init__(self):
        if self.language not in LANGUAGES:
            raise ValueError(f"unsupported language {self.language!r}")
        if self.star_rank_limit <= 0 or self.min_pull_requests <= 0:
            raise ValueError("limits must be positive")
        if not self.license_allowlist:
            raise ValueError("license allowlist must be non-empty")


@dataclass(frozen=True)
class CrawlCursor:
    repo_id: int
    last_pr_number: int
    last_updated_at: str


@dataclass
class ApiResponse:
    status: int
    headers: dict[str, str]
    body: bytes

    def json(self):
        return json.loads(self.body.decode("utf-8"))

    def header(self, name: str, default: str | None = None) -> str | None:
        for k, v in self.headers.items():
            if k.lower() == name.lower():
                return v
        return default


class Transport(Protocol):
    def request(self, method: str, url: str, headers: dict[str, str]) -> ApiResponse: ...


class UrlTransport:
    """Live HTTP transport (urllib); only used when --live is passed."""

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout

    def request(self, method: str, url: str, headers: dict[str, str]) -> ApiResponse:
        req = urllib.request.Request(url, method=method, headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return ApiResponse(resp.status, dict(resp.headers.items()), resp.read())
        except urllib.error.HTTPError as exc:
            return ApiResponse(exc.code, dict(exc.headers.items()), exc.read())


class RecordedTransport:
    """Replays canned responses keyed by normalized ``METHOD url``."""

    def __init__(self, responses: dict[str, dict] | None = None):
        self.responses = dict(responses or {})
        self.calls: list[str] = []

    @staticmethod
    def key(method: str, url: str) -> str:
        parts = urllib.parse.urlsplit(url)
        query = urllib.parse.parse_qsl(parts.query)
        canon = urllib.parse.urlencode(sorted(query))
        return f"{method.upper()} {parts.path}" + (f"?{canon}" if canon else "")

    def add(self, method: str, url: str, body, status: int = 200,
            headers: dict[str, str] | None = None) -> None:
        payload = body if isinstance(body, bytes) else json.dumps(body).encode()
        self.responses[self.key(method, url)] = {
            "status": status, "headers": headers or {}, "body": payload,
        }

    def request(self, method: str, url: str, headers: dict[str, str]) -> ApiResponse:
        key = self.key(method, url)
        self.calls.append(key)
        if key not in self.responses:
            raise KeyError(f"no recorded response for {key}")
        rec = self.responses[key]
        return ApiResponse(rec["status"], dict(rec["headers"]), rec["body"])


class RestClient:
    """Paginated, rate-limit-aware JSON client."""

    def __init__(
        self,
        transport: Transport,
        base_url: str = "https://api.github.com",
        token: str | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        max_retries: int = 4,
        per_page: int = 100,
    ):
        self.transport = transport
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.sleeper = sleeper
        self.max_retries = max_retries
        self.per_page = per_page

    def _headers(self) -> dict[str, str]:
        headers = {"Accept": "application/vnd.github+json", "User-Agent": USER_AGENT}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def get(self, path: str, params: dict | None = None) -> ApiResponse:
        url = self.base_url + path
        if params:
            url += "?" + urllib.parse.urlencode(sorted(params.items()))
        delay = 1.0
        for attempt in range(self.max_retries + 1):
            resp = self.transport.request("GET", url, self._headers())
            if resp.status == 401:
                raise ApiAuthFailure(f"credentials rejected for {path}")
            if resp.status in (403, 429):
                retry_after = float(resp.header("Retry-After", "0") or 0)
                if attempt == self.max_retries:
                    raise RateLimited(retry_after, f"rate limited on {path}")
                self.sleeper(retry_after if retry_after > 0 else delay)
                delay *= 2
                continue
            if resp.status >= 500:
                if attempt == self.max_retries:
                    raise PartialData(f"{path}: server error {resp.status}")
                self.sleeper(delay)
                delay *= 2
                continue
            if resp.status >= 400:
                raise PartialData(f"{path}: unexpected status {resp.status}")
            return resp
        raise PartialData(f"{path}: retries exhausted")

    def get_json(self, path: str, params: dict | None = None):
        return self.get(path, params).json()

    def paginate(self, path: str, params: dict | None = None) -> Iterable[dict]:
        """Yield items across ``page=1..n`` until a short page."""
        page = 1
        while True:
            merged = dict(params or {})
            merged.update({"per_page": self.per_page, "page": page})
            items = self.get_json(path, merged)
            if isinstance(items, dict):  # search endpoints wrap items
                items = items.get("items", [])
            yield from items
            if len(items) < self.per_page:
                return
            page += 1


_LINK_LAST_RE = re.compile(r'[?&]page=(\d+)[^>]*>;\s*rel="last"')


def count_pull_requests(client: RestClient, full_name: str) -> int:
    """Total PRs (open + closed) via the page-count trick on per_page=1."""
    resp = client.get(f"/repos/{full_name}/pulls", {"state": "all", "per_page": 1, "page": 1})
    link = resp.header("Link")
    if link:
        m = _LINK_LAST_RE.search(link)
        if m:
            return int(m.group(1))
    return len(resp.json())


def list_candidates(client: RestClient, criteria: MiningCriteria,
                    now: Callable[[], str] | None = None) -> list[Repository]:
    """Repositories of the language within the star-rank limit that satisfy
    the PR-count floor and license allowlist, ordered by stars descending."""
    stamp = now() if now else time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    out: list[Repository] = []
    seen = 0
    for item in client.paginate(
        "/search/repositories",
        {"q": f"language:{criteria.language}", "sort": "stars", "order": "desc"},
    ):
        seen += 1
        if seen > criteria.star_rank_limit:
            break
        license_id = (item.get("license") or {}).get("spdx_id") or ""
        if license_id not in criteria.license_allowlist:
            continue
        pr_count = item.get("pull_request_count")
        if pr_count is None:
            pr_count = count_pull_requests(client, item["full_name"])
        if pr_count < criteria.min_pull_requests:
            continue
        out.append(Repository(
            id=None,
            full_name=item["full_name"],
            language=criteria.language,
            stars=int(item["stargazers_count"]),
            pull_request_count=int(pr_count),
            license_id=license_id,
            crawled_at=stamp,
        ))
    out.sort(key=lambda r: (-r.stars, r.full_name))
    return out


def _file_diff_from_api(entry: dict) -> FileDiff | None:
    """Convert one commit-files API entry to a FileDiff; None for binary."""
    patch = entry.get("patch")
    status = entry.get("status", "modified")
    path = entry["filename"]
    previous = entry.get("previous_filename")
    if patch is None:
        return None  # binary or oversized patch: flagged at ingest, excluded
    kind = {
        "added": ADD, "removed": DELETE, "modified": MODIFY, "renamed": RENAME,
    }.get(status, MODIFY)
    header = []
    if kind == ADD:
        header = ["--- /dev/null", f"+++ b/{path}"]
    elif kind == DELETE:
        header = [f"--- a/{path}", "+++ /dev/null"]
    else:
        header = [f"--- a/{previous or path}", f"+++ b/{path}"]
    return parse_unified("\n".join(header) + "\n" + patch + ("\n" if not patch.endswith("\n") else ""))


def _threads_from_comments(pr_id: int, pr_author: str, raw_comments: list[dict]) -> list[ReviewThread]:
    """Group review comments into threads by reply chains."""
    roots: dict[int, dict] = {}
    children: dict[int, list[dict]] = {}
    for c in sorted(raw_comments, key=lambda c: (c["created_at"], c["id"])):
        reply_to = c.get("in_reply_to_id")
        if reply_to is None:
            roots[c["id"]] = c
            children.setdefault(c["id"], [])
        else:
            children.setdefault(reply_to, []).append(c)
    threads = []
    for root_id, root in roots.items():
        chain = [root] + children.get(root_id, [])
        comments = tuple(
            Comment(
                author_role="developer" if c["user"]["login"] == pr_author else "reviewer",
                body=c["body"],
                posted_at=c["created_at"],
            )
            for c in chain
        )
        if not comments or comments[0].author_role != "reviewer":
            continue  # threads must start with a reviewer comment
        line = root.get("original_line") or root.get("line") or 1
        start = root.get("original_start_line") or root.get("start_line") or line
        threads.append(ReviewThread(
            id=None,
            pr_id=pr_id,
            external_key=str(root_id),
            anchor_path=root["path"],
            anchor_lo=min(start, line),
            anchor_hi=max(start, line),
            anchor_sha=root.get("original_commit_id") or root.get("commit_id"),
            comments=comments,
        ))
    return threads


def crawl_many(
    store: CorpusStore,
    client: RestClient,
    repos: list[Repository],
    width: int = 1,
) -> dict[str, CrawlCursor]:
    """Crawl repositories with bounded parallelism.

    Store writes serialize through the single-writer lock; within one
    repository the PR stream stays sequential.
    """
    import concurrent.futures

    if width <= 1:
        return {r.full_name: crawl_repository(store, client, r) for r in repos}
    cursors: dict[str, CrawlCursor] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=width) as pool:
        futures = {pool.submit(crawl_repository, store, client, r): r for r in repos}
        for future in concurrent.futures.as_completed(futures):
            cursors[futures[future].full_name] = future.result()
    return cursors


def crawl_repository(
    store: CorpusStore,
    client: RestClient,
    repo: Repository,
    cursor: CrawlCursor | None = None,
) -> CrawlCursor:
    """Persist all PR data newer than ``cursor``; returns the advanced cursor.

    Each PR is written in a single transaction, so an interrupted crawl
    leaves the store equal to a crawl of the fully-persisted prefix and the
    cursor never advances past a gap.
    """
    repo_id = store.upsert_repository(repo)
    last_number = cursor.last_pr_number if cursor else 0
    last_updated = cursor.last_updated_at if cursor else ""

    pulls = [
        p for p in client.paginate(
            f"/repos/{repo.full_name}/pulls",
            {"state": "all", "sort": "created", "direction": "asc"},
        )
        if p["number"] > last_number
    ]
    for pull in pulls:
        number = pull["number"]
        try:
            _crawl_pull(store, client, repo, repo_id, pull)
        except (RateLimited, ApiAuthFailure):
            raise
        except Exception as exc:
            raise PartialData(f"{repo.full_name}#{number}: {exc}") from exc
        last_number = number
        last_updated = max(last_updated, pull.get("updated_at") or pull["created_at"])
        store.save_cursor(repo_id, last_number, last_updated)

    return CrawlCursor(repo_id, last_number, last_updated or "1970-01-01T00:00:00Z")


def _crawl_pull(store: CorpusStore, client: RestClient, repo: Repository,
                repo_id: int, pull: dict) -> None:
    number = pull["number"]
    base_sha = pull["base"]["sha"]
    pr_author = pull["user"]["login"]

    raw_commits = client.get_json(f"/repos/{repo.full_name}/pulls/{number}/commits")
    commit_entries = []
    touched_old_paths: set[str] = set()
    introduced: set[str] = set()  # paths that do not exist at the base snapshot
    for rc in raw_commits:
        detail = client.get_json(f"/repos/{repo.full_name}/commits/{rc['sha']}")
        diffs = []
        for entry in detail.get("files", []):
            fd = _file_diff_from_api(entry)
            if fd is None:
                continue
            diffs.append(fd)
            if fd.change_kind == ADD:
                introduced.add(fd.path)
            else:
                if fd.source_path not in introduced:
                    touched_old_paths.add(fd.source_path)
                if fd.change_kind == RENAME:
                    introduced.add(fd.path)
        commit_entries.append((rc, tuple(diffs)))

    raw_comments = client.get_json(f"/repos/{repo.full_name}/pulls/{number}/comments")

    with store.transaction():
        pr_id = store.upsert_pull_request(PullRequest(
            id=None, repo_id=repo_id, number=number, opened_at=pull["created_at"],
        ))
        for path in sorted(touched_old_paths):
            quoted = urllib.parse.quote(path)
            blob = client.get_json(
                f"/repos/{repo.full_name}/contents/{quoted}", {"ref": base_sha}
            )
            if blob.get("encoding") == "base64":
                raw = base64.b64decode(blob["content"])
            else:
                raw = (blob.get("content") or "").encode()
            store.put_base_file(pr_id, path, raw)
        for rc, diffs in commit_entries:
            store.upsert_commit(Commit(
                id=None, pr_id=pr_id, sha=rc["sha"],
                committed_at=rc["commit"]["committer"]["date"], diffs=diffs,
            ))
        for thread in _threads_from_comments(pr_id, pr_author, raw_comments):
            store.upsert_thread(thread)
