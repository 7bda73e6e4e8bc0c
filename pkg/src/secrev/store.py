"""Single-file relational corpus store.

Holds mined repositories, pull requests, per-commit file diffs, base file
snapshots, review threads, and the extracted review records.  The store is
single-writer / multiple-reader: writers open with ``CorpusStore.open``,
readers may share the same file concurrently (WAL mode).  All write methods
are idempotent upserts keyed on natural identifiers so crawls can resume.

Line endings are normalized to ``"\\n"`` at ingest; the original bytes are
retained in a raw blob column for audit.  Binary files are flagged and
excluded from reconstruction.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

from .diffs import FileDiff, parse_unified, serialize_unified
from .errors import ConflictingLabel, IoFailure, StoreError

LANGUAGES = ("C", "C++", "C#", "Java", "Go")

LABEL_POSITIVE = "positive"
LABEL_NEGATIVE = "negative"

SOURCE_PSEUDO = "pseudo_lightweight"
SOURCE_EXPERT = "expert_validated"
SOURCE_HUMAN = "human"
SOURCE_ENSEMBLE = "ensemble"
LABEL_SOURCES = (SOURCE_PSEUDO, SOURCE_EXPERT, SOURCE_HUMAN, SOURCE_ENSEMBLE)

SCHEMA_VERSION = 1

SCHEMA_SQL = """
CREATE TABLE IF NOT EXISTS meta (
  key TEXT PRIMARY KEY,
  value TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS repositories (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  full_name TEXT NOT NULL UNIQUE,
  language TEXT NOT NULL,
  stars INTEGER NOT NULL,
  pull_request_count INTEGER NOT NULL,
  license_id TEXT NOT NULL,
  crawled_at TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS pull_requests (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  repo_id INTEGER NOT NULL REFERENCES repositories(id),
  number INTEGER NOT NULL,
  opened_at TEXT NOT NULL,
  UNIQUE(repo_id, number)
);

CREATE TABLE IF NOT EXISTS base_files (
  pr_id INTEGER NOT NULL REFERENCES pull_requests(id),
  path TEXT NOT NULL,
  content TEXT,
  raw_blob BLOB,
  is_binary INTEGER NOT NULL DEFAULT 0,
  PRIMARY KEY (pr_id, path)
);

CREATE TABLE IF NOT EXISTS commits (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  pr_id INTEGER NOT NULL REFERENCES pull_requests(id),
  sha TEXT NOT NULL,
  committed_at TEXT NOT NULL,
  UNIQUE(pr_id, sha)
);

CREATE TABLE IF NOT EXISTS file_diffs (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  commit_id INTEGER NOT NULL REFERENCES commits(id),
  position INTEGER NOT NULL,
  path TEXT NOT NULL,
  old_path TEXT,
  change_kind TEXT NOT NULL,
  diff_text TEXT NOT NULL,
  UNIQUE(commit_id, position)
);

CREATE TABLE IF NOT EXISTS review_threads (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  pr_id INTEGER NOT NULL REFERENCES pull_requests(id),
  external_key TEXT NOT NULL,
  anchor_path TEXT NOT NULL,
  anchor_lo INTEGER NOT NULL,
  anchor_hi INTEGER NOT NULL,
  anchor_sha TEXT NOT NULL,
  UNIQUE(pr_id, external_key)
);

CREATE TABLE IF NOT EXISTS comments (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  thread_id INTEGER NOT NULL REFERENCES review_threads(id),
  position INTEGER NOT NULL,
  author_role TEXT NOT NULL,
  body TEXT NOT NULL,
  posted_at TEXT NOT NULL,
  UNIQUE(thread_id, position)
);

CREATE TABLE IF NOT EXISTS quintuples (
  id TEXT PRIMARY KEY,
  thread_id INTEGER REFERENCES review_threads(id),
  repo TEXT NOT NULL,
  language TEXT NOT NULL,
  hunk_diff TEXT NOT NULL,
  file_old TEXT NOT NULL,
  file_new TEXT NOT NULL,
  comments_json TEXT NOT NULL,
  refinement TEXT,
  refinement_rule TEXT,
  label TEXT,
  category TEXT,
  label_source TEXT,
  iteration INTEGER
);

CREATE TABLE IF NOT EXISTS skipped_threads (
  thread_id INTEGER PRIMARY KEY REFERENCES review_threads(id),
  reason TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS cursors (
  repo_id INTEGER PRIMARY KEY REFERENCES repositories(id),
  last_pr_number INTEGER NOT NULL,
  last_updated_at TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS loop_state (
  id INTEGER PRIMARY KEY CHECK (id = 1),
  version INTEGER NOT NULL,
  payload TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS annotation_tasks (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  instance_id TEXT NOT NULL,
  purpose TEXT NOT NULL,
  required_votes INTEGER NOT NULL,
  status TEXT NOT NULL DEFAULT 'open',
  escalated INTEGER NOT NULL DEFAULT 0,
  payload_json TEXT NOT NULL,
  UNIQUE(instance_id, purpose)
);

CREATE TABLE IF NOT EXISTS annotation_votes (
  task_id INTEGER NOT NULL REFERENCES annotation_tasks(id),
  annotator_id TEXT NOT NULL,
  label TEXT NOT NULL,
  cast_at TEXT NOT NULL,
  PRIMARY KEY (task_id, annotator_id)
);

CREATE TABLE IF NOT EXISTS annotation_consensus (
  task_id INTEGER PRIMARY KEY REFERENCES annotation_tasks(id),
  final_label TEXT NOT NULL,
  method TEXT NOT NULL,
  note TEXT,
  resolved_at TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS annotation_events (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  at TEXT NOT NULL,
  kind TEXT NOT NULL,
  payload_json TEXT NOT NULL
);

CREATE INDEX IF NOT EXISTS idx_quintuples_label ON quintuples(label);
CREATE INDEX IF NOT EXISTS idx_tasks_status ON annotation_tasks(status, purpose);
"""


# --- domain records -----------------------------------------------------------


@dataclass(frozen=True)
class Repository:
    id: int | None
    full_name: str
    language: str
    stars: int
    pull_request_count: int
    license_id: str
    crawled_at: str

    def __post_init__(self):
        if self.language not in LANGUAGES:
            raise ValueError(f"unsupported language {self.language!r}")
        if self.stars < 0 or self.pull_request_count < 0:
            raise ValueError("counts must be non-negative")


@dataclass(frozen=True)
class PullRequest:
    id: int | None
    repo_id: int
    number: int
    opened_at: str

    def __post_init__(self):
        if self.number <= 0:
            raise ValueError("PR number must be positive")


@dataclass(frozen=True)
class Commit:
    id: int | None
    pr_id: int
    sha: str
    committed_at: str
    diffs: tuple[FileDiff, ...] = ()


@dataclass(frozen=True)
class Comment:
    author_role: str  # reviewer | developer
    body: str
    posted_at: str

    def __post_init__(self):
        if self.author_role not in ("reviewer", "developer"):
            raise ValueError(f"unknown author role {self.author_role!r}")
        if not self.body:
            raise ValueError("comment body must be non-empty")


@dataclass(frozen=True)
class ReviewThread:
    id: int | None
    pr_id: int
    external_key: str
    anchor_path: str
    anchor_lo: int
    anchor_hi: int
    anchor_sha: str
    comments: tuple[Comment, ...] = ()

    def __post_init__(self):
        if self.comments and self.comments[0].author_role != "reviewer":
            raise ValueError("first comment must come from a reviewer")
        stamps = [c.posted_at for c in self.comments]
        if stamps != sorted(stamps):
            raise ValueError("comments must be ordered by timestamp")


@dataclass(frozen=True)
class ReviewQuintuple:
    id: str
    repo: str
    language: str
    hunk_diff: str
    file_old: str
    file_new: str
    comments: tuple[Comment, ...]
    refinement: str | None = None
    refinement_rule: str | None = None
    label: str | None = None
    category: str | None = None
    label_source: str | None = None
    iteration: int | None = None
    thread_id: int | None = None

    def first_reviewer_comment(self) -> str:
        for c in self.comments:
            if c.author_role == "reviewer":
                return c.body
        return ""


def normalize_text(data: bytes) -> tuple[str | None, bool]:
    """Decode and newline-normalize raw file bytes.

    Returns ``(text, is_binary)``; binary content yields ``(None, True)``.
    """
    if b"\x00" in data:
        return None, True
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        return None, True
    return text.replace("\r\n", "\n").replace("\r", "\n"), False


# --- the store -----------------------------------------------------------------


class CorpusStore:
    """SQLite-backed corpus; safe for one writer and many readers."""

    def __init__(self, conn: sqlite3.Connection, path: str):
        self._conn = conn
        self._lock = threading.RLock()
        self._txn_depth = 0
        self.path = path

    def _commit(self) -> None:
        if self._txn_depth == 0:
            self._conn.commit()

    @classmethod
    def open(cls, path: str | Path) -> "CorpusStore":
        conn = sqlite3.connect(str(path), check_same_thread=False, isolation_level=None)
        conn.execute("PRAGMA journal_mode=WAL;")
        conn.execute("PRAGMA foreign_keys=ON;")
        conn.executescript(SCHEMA_SQL)
        conn.execute(
            "INSERT OR IGNORE INTO meta(key, value) VALUES ('schema_version', ?)",
            (str(SCHEMA_VERSION),),
        )
        conn.commit()
        return cls(conn, str(path))

    @classmethod
    def in_memory(cls) -> "CorpusStore":
        return cls.open(":memory:")

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "CorpusStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- write paths (single writer) -----------------------------------------

    def transaction(self):
        return _Txn(self)

    def upsert_repository(self, repo: Repository) -> int:
        with self._lock:
            cur = self._conn.execute(
                """
                INSERT INTO repositories(full_name, language, stars, pull_request_count,
                                         license_id, crawled_at)
                VALUES (?,?,?,?,?,?)
                ON CONFLICT(full_name) DO UPDATE SET
                  stars=excluded.stars,
                  pull_request_count=excluded.pull_request_count,
                  license_id=excluded.license_id,
                  crawled_at=excluded.crawled_at
                """,
                (repo.full_name, repo.language, repo.stars,
                 repo.pull_request_count, repo.license_id, repo.crawled_at),
            )
            self._commit()
            row = self._conn.execute(
                "SELECT id FROM repositories WHERE full_name=?", (repo.full_name,)
            ).fetchone()
            return int(row[0])

    def upsert_pull_request(self, pr: PullRequest) -> int:
        with self._lock:
            self._conn.execute(
                """
                INSERT INTO pull_requests(repo_id, number, opened_at)
                VALUES (?,?,?)
                ON CONFLICT(repo_id, number) DO UPDATE SET opened_at=excluded.opened_at
                """,
                (pr.repo_id, pr.number, pr.opened_at),
            )
            row = self._conn.execute(
                "SELECT id FROM pull_requests WHERE repo_id=? AND number=?",
                (pr.repo_id, pr.number),
            ).fetchone()
            return int(row[0])

    def put_base_file(self, pr_id: int, path: str, raw: bytes) -> None:
        text, is_binary = normalize_text(raw)
        with self._lock:
            self._conn.execute(
                """
                INSERT INTO base_files(pr_id, path, content, raw_blob, is_binary)
                VALUES (?,?,?,?,?)
                ON CONFLICT(pr_id, path) DO UPDATE SET
                  content=excluded.content, raw_blob=excluded.raw_blob,
                  is_binary=excluded.is_binary
                """,
                (pr_id, path, text, raw, int(is_binary)),
            )

    def upsert_commit(self, commit: Commit) -> int:
        with self._lock:
            self._conn.execute(
                """
                INSERT INTO commits(pr_id, sha, committed_at)
                VALUES (?,?,?)
                ON CONFLICT(pr_id, sha) DO UPDATE SET committed_at=excluded.committed_at
                """,
                (commit.pr_id, commit.sha, commit.committed_at),
            )
            row = self._conn.execute(
                "SELECT id FROM commits WHERE pr_id=? AND sha=?",
                (commit.pr_id, commit.sha),
            ).fetchone()
            commit_id = int(row[0])
            self._conn.execute("DELETE FROM file_diffs WHERE commit_id=?", (commit_id,))
            for pos, fd in enumerate(commit.diffs):
                self._conn.execute(
                    """
                    INSERT INTO file_diffs(commit_id, position, path, old_path,
                                           change_kind, diff_text)
                    VALUES (?,?,?,?,?,?)
                    """,
                    (commit_id, pos, fd.path, fd.old_path, fd.change_kind,
                     serialize_unified(fd)),
                )
            return commit_id

    def upsert_thread(self, thread: ReviewThread) -> int:
        with self._lock:
            self._conn.execute(
                """
                INSERT INTO review_threads(pr_id, external_key, anchor_path,
                                           anchor_lo, anchor_hi, anchor_sha)
                VALUES (?,?,?,?,?,?)
                ON CONFLICT(pr_id, external_key) DO UPDATE SET
                  anchor_path=excluded.anchor_path, anchor_lo=excluded.anchor_lo,
                  anchor_hi=excluded.anchor_hi, anchor_sha=excluded.anchor_sha
                """,
                (thread.pr_id, thread.external_key, thread.anchor_path,
                 thread.anchor_lo, thread.anchor_hi, thread.anchor_sha),
            )
            row = self._conn.execute(
                "SELECT id FROM review_threads WHERE pr_id=? AND external_key=?",
                (thread.pr_id, thread.external_key),
            ).fetchone()
            thread_id = int(row[0])
            self._conn.execute("DELETE FROM comments WHERE thread_id=?", (thread_id,))
            for pos, c in enumerate(thread.comments):
                self._conn.execute(
                    "INSERT INTO comments(thread_id, position, author_role, body, posted_at)"
                    " VALUES (?,?,?,?,?)",
                    (thread_id, pos, c.author_role, c.body, c.posted_at),
                )
            return thread_id

    def put_quintuple(self, q: ReviewQuintuple) -> None:
        with self._lock:
            self._conn.execute(
                """
                INSERT INTO quintuples(id, thread_id, repo, language, hunk_diff,
                                       file_old, file_new, comments_json, refinement,
                                       refinement_rule, label, category, label_source,
                                       iteration)
                VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?,?)
                ON CONFLICT(id) DO UPDATE SET
                  hunk_diff=excluded.hunk_diff, file_old=excluded.file_old,
                  file_new=excluded.file_new, comments_json=excluded.comments_json,
                  refinement=excluded.refinement, refinement_rule=excluded.refinement_rule
                """,
                (q.id, q.thread_id, q.repo, q.language, q.hunk_diff, q.file_old,
                 q.file_new, _comments_to_json(q.comments), q.refinement,
                 q.refinement_rule, q.label, q.category, q.label_source, q.iteration),
            )
            self._commit()

    def set_label(self, quintuple_id: str, label: str | None, source: str,
                  iteration: int | None = None, category: str | None = None) -> None:
        """Record a classification label; human labels are immutable."""
        with self._lock:
            row = self._conn.execute(
                "SELECT label, label_source FROM quintuples WHERE id=?",
                (quintuple_id,),
            ).fetchone()
            if row is None:
                raise StoreError(f"unknown quintuple {quintuple_id}")
            old_label, old_source = row
            if old_source == SOURCE_HUMAN and old_label is not None:
                if label != old_label:
                    raise ConflictingLabel(
                        f"{quintuple_id}: human label {old_label} is immutable"
                    )
                if source != SOURCE_HUMAN:
                    return  # keep the human label's provenance
            self._conn.execute(
                "UPDATE quintuples SET label=?, label_source=?, iteration=?,"
                " category=COALESCE(?, category) WHERE id=?",
                (label, source, iteration, category, quintuple_id),
            )
            self._commit()

    def mark_skipped(self, thread_id: int, reason: str) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO skipped_threads(thread_id, reason) VALUES (?,?)",
                (thread_id, reason),
            )
            self._commit()

    def save_cursor(self, repo_id: int, last_pr_number: int, last_updated_at: str) -> None:
        """Advance a crawl cursor; persisted cursors never regress, so values
        behind the stored one (a from-scratch re-crawl) are ignored."""
        with self._lock:
            row = self._conn.execute(
                "SELECT last_pr_number, last_updated_at FROM cursors WHERE repo_id=?",
                (repo_id,),
            ).fetchone()
            if row is not None:
                last_pr_number = max(last_pr_number, int(row[0]))
                last_updated_at = max(last_updated_at, row[1])
            self._conn.execute(
                "INSERT INTO cursors(repo_id, last_pr_number, last_updated_at)"
                " VALUES (?,?,?)"
                " ON CONFLICT(repo_id) DO UPDATE SET"
                "  last_pr_number=excluded.last_pr_number,"
                "  last_updated_at=excluded.last_updated_at",
                (repo_id, last_pr_number, last_updated_at),
            )
            self._commit()

    def save_loop_state(self, version: int, payload: dict) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO loop_state(id, version, payload) VALUES (1,?,?)"
                " ON CONFLICT(id) DO UPDATE SET version=excluded.version,"
                " payload=excluded.payload",
                (version, json.dumps(payload, sort_keys=True)),
            )
            self._commit()

    def load_loop_state(self) -> tuple[int, dict] | None:
        row = self._conn.execute("SELECT version, payload FROM loop_state WHERE id=1").fetchone()
        if row is None:
            return None
        return int(row[0]), json.loads(row[1])

    # -- read paths ------------------------------------------------------------

    def get_repository(self, full_name: str) -> Repository | None:
        row = self._conn.execute(
            "SELECT id, full_name, language, stars, pull_request_count, license_id,"
            " crawled_at FROM repositories WHERE full_name=?",
            (full_name,),
        ).fetchone()
        return Repository(*row) if row else None

    def repositories(self) -> list[Repository]:
        rows = self._conn.execute(
            "SELECT id, full_name, language, stars, pull_request_count, license_id,"
            " crawled_at FROM repositories ORDER BY id"
        ).fetchall()
        return [Repository(*r) for r in rows]

    def pull_requests(self, repo_id: int) -> list[PullRequest]:
        rows = self._conn.execute(
            "SELECT id, repo_id, number, opened_at FROM pull_requests"
            " WHERE repo_id=? ORDER BY number",
            (repo_id,),
        ).fetchall()
        return [PullRequest(*r) for r in rows]

    def get_pull_request(self, pr_id: int) -> PullRequest | None:
        row = self._conn.execute(
            "SELECT id, repo_id, number, opened_at FROM pull_requests WHERE id=?",
            (pr_id,),
        ).fetchone()
        return PullRequest(*row) if row else None

    def base_snapshot(self, pr_id: int) -> dict[str, str]:
        """Text base files of a PR (binary files excluded)."""
        rows = self._conn.execute(
            "SELECT path, content FROM base_files WHERE pr_id=? AND is_binary=0",
            (pr_id,),
        ).fetchall()
        return {path: content for path, content in rows}

    def commits_for_pr(self, pr_id: int) -> list[Commit]:
        """Commits of a PR in chronological order, ties broken by sha."""
        rows = self._conn.execute(
            "SELECT id, pr_id, sha, committed_at FROM commits WHERE pr_id=?"
            " ORDER BY committed_at, sha",
            (pr_id,),
        ).fetchall()
        out = []
        for cid, pr, sha, ts in rows:
            diffs = tuple(
                parse_unified(dtext)
                for (dtext,) in self._conn.execute(
                    "SELECT diff_text FROM file_diffs WHERE commit_id=? ORDER BY position",
                    (cid,),
                )
            )
            out.append(Commit(cid, pr, sha, ts, diffs))
        return out

    def threads_for_pr(self, pr_id: int) -> list[ReviewThread]:
        rows = self._conn.execute(
            "SELECT id, pr_id, external_key, anchor_path, anchor_lo, anchor_hi,"
            " anchor_sha FROM review_threads WHERE pr_id=? ORDER BY id",
            (pr_id,),
        ).fetchall()
        return [self._thread_from_row(r) for r in rows]

    def all_threads(self) -> Iterator[ReviewThread]:
        rows = self._conn.execute(
            "SELECT id, pr_id, external_key, anchor_path, anchor_lo, anchor_hi,"
            " anchor_sha FROM review_threads ORDER BY id"
        ).fetchall()
        for r in rows:
            yield self._thread_from_row(r)

    def _thread_from_row(self, row) -> ReviewThread:
        comments = tuple(
            Comment(role, body, at)
            for role, body, at in self._conn.execute(
                "SELECT author_role, body, posted_at FROM comments WHERE thread_id=?"
                " ORDER BY position",
                (row[0],),
            )
        )
        return ReviewThread(row[0], row[1], row[2], row[3], row[4], row[5], row[6], comments)

    def get_quintuple(self, quintuple_id: str) -> ReviewQuintuple | None:
        row = self._conn.execute(
            "SELECT id, thread_id, repo, language, hunk_diff, file_old, file_new,"
            " comments_json, refinement, refinement_rule, label, category,"
            " label_source, iteration FROM quintuples WHERE id=?",
            (quintuple_id,),
        ).fetchone()
        return _quintuple_from_row(row) if row else None

    def quintuples(self, where: str = "", params: tuple = ()) -> list[ReviewQuintuple]:
        sql = (
            "SELECT id, thread_id, repo, language, hunk_diff, file_old, file_new,"
            " comments_json, refinement, refinement_rule, label, category,"
            " label_source, iteration FROM quintuples"
        )
        if where:
            sql += " WHERE " + where
        sql += " ORDER BY id"
        return [_quintuple_from_row(r) for r in self._conn.execute(sql, params)]

    def counts(self) -> dict[str, int]:
        out = {}
        for table in ("repositories", "pull_requests", "commits", "review_threads",
                      "comments", "quintuples", "skipped_threads"):
            out[table] = self._conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0]
        return out

    def dump_rows(self) -> dict[str, list[tuple]]:
        """Deterministic full dump, used by idempotence tests."""
        out = {}
        for table, order in (
            ("repositories", "full_name"),
            ("pull_requests", "repo_id, number"),
            ("base_files", "pr_id, path"),
            ("commits", "pr_id, sha"),
            ("file_diffs", "commit_id, position"),
            ("review_threads", "pr_id, external_key"),
            ("comments", "thread_id, position"),
            ("quintuples", "id"),
        ):
            cols = [c[1] for c in self._conn.execute(f"PRAGMA table_info({table})")]
            keep = [c for c in cols if c != "id" or table == "quintuples"]
            sel = ", ".join(keep)
            out[table] = self._conn.execute(
                f"SELECT {sel} FROM {table} ORDER BY {order}"
            ).fetchall()
        return out

    # -- JSONL export / import --------------------------------------------------

    def export_dataset(
        self,
        out_path: str | Path,
        predicate: Callable[[ReviewQuintuple], bool] | None = None,
    ) -> int:
        """Write quintuples matching ``predicate`` as JSONL; returns the count."""
        count = 0
        try:
            with open(out_path, "w", encoding="utf-8") as fh:
                for q in self.quintuples():
                    if predicate is not None and not predicate(q):
                        continue
                    fh.write(json.dumps(quintuple_to_record(q), ensure_ascii=False,
                                        sort_keys=True))
                    fh.write("\n")
                    count += 1
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        return count

    def import_dataset(self, in_path: str | Path) -> int:
        count = 0
        try:
            with open(in_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    q = quintuple_from_record(json.loads(line))
                    self.put_quintuple(q)
                    if q.label is not None:
                        self._conn.execute(
                            "UPDATE quintuples SET label=?, category=?, label_source=?"
                            " WHERE id=?",
                            (q.label, q.category, q.label_source or SOURCE_HUMAN, q.id),
                        )
                    count += 1
            self._commit()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        return count


class _Txn:
    """Context manager wrapping a multi-statement write in one transaction."""

    def __init__(self, store: CorpusStore):
        self.store = store

    def __enter__(self):
        self.store._lock.acquire()
        if self.store._txn_depth == 0:
            self.store._conn.execute("BEGIN")
        self.store._txn_depth += 1
        return self.store

    def __exit__(self, exc_type, exc, tb):
        try:
            self.store._txn_depth -= 1
            if self.store._txn_depth == 0:
                if exc_type is None:
                    self.store._conn.commit()
                else:
                    self.store._conn.rollback()
        finally:
            self.store._lock.release()
        return False


# --- JSONL record schema ---------------------------------------------------------

def _comments_to_json(comments: tuple[Comment, ...]) -> str:
    return json.dumps(
        [{"role": c.author_role, "body": c.body, "posted_at": c.posted_at}
         for c in comments],
        ensure_ascii=False,
    )


def _comments_from_json(payload: str) -> tuple[Comment, ...]:
    return tuple(
        Comment(d["role"], d["body"], d["posted_at"]) for d in json.loads(payload)
    )


def _quintuple_from_row(row) -> ReviewQuintuple:
    (qid, thread_id, repo, language, hunk_diff, file_old, file_new, comments_json,
     refinement, refinement_rule, label, category, label_source, iteration) = row
    return ReviewQuintuple(
        id=qid, thread_id=thread_id, repo=repo, language=language,
        hunk_diff=hunk_diff, file_old=file_old, file_new=file_new,
        comments=_comments_from_json(comments_json), refinement=refinement,
        refinement_rule=refinement_rule, label=label, category=category,
        label_source=label_source, iteration=iteration,
    )


def quintuple_to_record(q: ReviewQuintuple) -> dict:
    """The one-line export schema; import accepts the same shape."""
    return {
        "id": q.id,
        "repo": q.repo,
        "language": q.language,
        "hunk_diff": q.hunk_diff,
        "file_old": q.file_old,
        "file_new": q.file_new,
        "comments": [
            {"role": c.author_role, "body": c.body, "posted_at": c.posted_at}
            for c in q.comments
        ],
        "refinement": q.refinement,
        "label": q.label,
        "category": q.category,
    }


def quintuple_from_record(rec: dict) -> ReviewQuintuple:
    return ReviewQuintuple(
        id=rec["id"],
        repo=rec["repo"],
        language=rec["language"],
        hunk_diff=rec["hunk_diff"],
        file_old=rec["file_old"],
        file_new=rec["file_new"],
        comments=tuple(
            Comment(c["role"], c["body"], c["posted_at"]) for c in rec["comments"]
        ),
        refinement=rec.get("refinement"),
        label=rec.get("label"),
        category=rec.get("category"),
    )
