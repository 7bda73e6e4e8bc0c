"""Annotation task queue, consensus resolution, and agreement statistics.

Tasks are persisted in the corpus store so annotators, the labeling loop,
and the audit tooling all see one queue.  Claim and vote operations take the
store's write lock and re-check task state inside it, which makes them
atomic under concurrent annotators.  Votes are immutable once a task
resolves, and every state change lands in an append-only audit log.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    DuplicateVote,
    NotInConflict,
    RaggedMatrix,
    TaskResolved,
    UnknownInstance,
)
from .store import CorpusStore

PURPOSES = ("binary_label", "positive_confirmation", "category_label", "precision_audit")

STATUS_OPEN = "open"
STATUS_AWAITING = "awaiting_consensus"
STATUS_RESOLVED = "resolved"

METHOD_UNANIMOUS = "unanimous"
METHOD_MAJORITY = "majority"  # escalation outcome: an extra voter broke the tie
METHOD_DISCUSSION = "discussion"

# The category taxonomy ships as configuration; these are the defaults.
DEFAULT_CATEGORIES = (
    "memory management",
    "concurrency and synchronization",
    "exception handling",
    "resource management",
    "input validation",
    "sensitive information management",
    "dangerous API usage",
    "undefined behavior",
    "permission and authentication",
    "formatting and string issues",
    "data protection",
    "arithmetic issues",
    "type confusion",
    "others",
)


def load_taxonomy(path) -> tuple[str, ...]:
    cats = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                cats.append(line)
    if not cats:
        raise ValueError(f"taxonomy file {path} lists no categories")
    return tuple(cats)


@dataclass(frozen=True)
class ConsensusRecord:
    task_id: int
    final_label: str
    method: str
    note: str | None
    resolved_at: str


class AnnotationService:
    """Queue operations over the store's annotation tables."""

    def __init__(
        self,
        store: CorpusStore,
        taxonomy: Sequence[str] = DEFAULT_CATEGORIES,
        escalate: bool = False,
        clock=None,
    ):
        self.store = store
        self.taxonomy = tuple(taxonomy)
        self.escalate = escalate
        self._clock = clock or (lambda: time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
        # claims are soft state used only to spread open tasks across annotators
        self._claims: dict[int, set[str]] = {}

    # -- helpers ---------------------------------------------------------------

    def _log(self, kind: str, payload: dict) -> None:
        conn = self.store._conn
        conn.execute(
            "INSERT INTO annotation_events(at, kind, payload_json) VALUES (?,?,?)",
            (self._clock(), kind, json.dumps(payload, sort_keys=True)),
        )

    def _task_row(self, task_id: int):
        return self.store._conn.execute(
            "SELECT id, instance_id, purpose, required_votes, status, payload_json,"
            " escalated FROM annotation_tasks WHERE id=?",
            (task_id,),
        ).fetchone()

    def _votes(self, task_id: int) -> list[tuple[str, str, str]]:
        return self.store._conn.execute(
            "SELECT annotator_id, label, cast_at FROM annotation_votes"
            " WHERE task_id=? ORDER BY cast_at, annotator_id",
            (task_id,),
        ).fetchall()

    def task_view(self, task_id: int) -> dict | None:
        row = self._task_row(task_id)
        if row is None:
            return None
        votes = [
            {"annotator": a, "label": l, "cast_at": at} for a, l, at in self._votes(task_id)
        ]
        consensus = self.store._conn.execute(
            "SELECT final_label, method, note, resolved_at FROM annotation_consensus"
            " WHERE task_id=?",
            (task_id,),
        ).fetchone()
        view = {
            "id": row[0],
            "instance_id": row[1],
            "purpose": row[2],
            "required_votes": row[3],
            "status": row[4],
            "payload": json.loads(row[5]),
            "votes": votes,
        }
        if consensus:
            view["consensus"] = {
                "final_label": consensus[0],
                "method": consensus[1],
                "note": consensus[2],
                "resolved_at": consensus[3],
            }
        return view

    # -- operations ---------------------------------------------------------------

    def enqueue(
        self,
        instance_ids: Sequence[str],
        purpose: str,
        required_votes: int = 2,
    ) -> list[int]:
        """Create open tasks, deduplicated by (instance, purpose)."""
        if purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {purpose!r}")
        if required_votes < 1:
            raise ValueError("required_votes must be >= 1")
        ids = []
        with self.store.transaction():
            for instance_id in instance_ids:
                q = self.store.get_quintuple(instance_id)
                if q is None:
                    raise UnknownInstance(instance_id)
                existing = self.store._conn.execute(
                    "SELECT id FROM annotation_tasks WHERE instance_id=? AND purpose=?",
                    (instance_id, purpose),
                ).fetchone()
                if existing:
                    ids.append(int(existing[0]))
                    continue
                payload = {
                    "hunk_diff": q.hunk_diff,
                    "comments": [
                        {"role": c.author_role, "body": c.body, "posted_at": c.posted_at}
                        for c in q.comments
                    ],
                    "repo": q.repo,
                    "language": q.language,
                }
                cur = self.store._conn.execute(
                    "INSERT INTO annotation_tasks(instance_id, purpose, required_votes,"
                    " status, payload_json) VALUES (?,?,?,?,?)",
                    (instance_id, purpose, required_votes, STATUS_OPEN,
                     json.dumps(payload, sort_keys=True)),
                )
                task_id = int(cur.lastrowid)
                ids.append(task_id)
                self._log("enqueue", {"task": task_id, "instance": instance_id,
                                      "purpose": purpose})
        return ids

    def claim_next(self, annotator_id: str, purpose: str) -> dict | None:
        """An open task this annotator has not voted on, least-claimed first."""
        with self.store._lock:
            rows = self.store._conn.execute(
                "SELECT t.id FROM annotation_tasks t WHERE t.status=? AND t.purpose=?"
                " AND NOT EXISTS (SELECT 1 FROM annotation_votes v"
                "                 WHERE v.task_id=t.id AND v.annotator_id=?)"
                " ORDER BY t.id",
                (STATUS_OPEN, purpose, annotator_id),
            ).fetchall()
            best = None
            best_load = None
            for (task_id,) in rows:
                votes = len(self._votes(task_id))
                claims = self._claims.get(task_id, set())
                if annotator_id in claims:
                    best = task_id  # already claimed by this annotator: hand it back
                    break
                load = votes + len(claims)
                if best_load is None or load < best_load:
                    best, best_load = task_id, load
            if best is None:
                return None
            self._claims.setdefault(best, set()).add(annotator_id)
            return self.task_view(best)

    def submit_vote(self, task_id: int, annotator_id: str, label: str) -> str:
        """Record a vote; returns the task status afterwards.

        When all required votes are in: unanimity auto-resolves; otherwise a
        split escalates once to one extra voter (when enabled), whose vote
        resolves by strict majority; failing that the task awaits discussion.
        """
        with self.store.transaction():
            row = self._task_row(task_id)
            if row is None:
                raise UnknownInstance(f"task {task_id}")
            _, instance_id, purpose, required, status, _payload, escalated = row
            if status != STATUS_OPEN:
                raise TaskResolved(f"task {task_id} is {status}")
            self._validate_label(purpose, label)
            if any(a == annotator_id for a, _, _ in self._votes(task_id)):
                raise DuplicateVote(f"{annotator_id} already voted on task {task_id}")
            self.store._conn.execute(
                "INSERT INTO annotation_votes(task_id, annotator_id, label, cast_at)"
                " VALUES (?,?,?,?)",
                (task_id, annotator_id, label, self._clock()),
            )
            self._log("vote", {"task": task_id, "annotator": annotator_id, "label": label})
            self._claims.get(task_id, set()).discard(annotator_id)

            votes = self._votes(task_id)
            if len(votes) < required:
                return STATUS_OPEN
            labels = {l for _, l, _ in votes}
            if len(labels) == 1:
                self._resolve(task_id, labels.pop(), METHOD_UNANIMOUS, None)
                return STATUS_RESOLVED
            if escalated:
                counts: dict[str, int] = {}
                for _, l, _ in votes:
                    counts[l] = counts.get(l, 0) + 1
                top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
                if top[0][1] > len(votes) / 2:
                    self._resolve(task_id, top[0][0], METHOD_MAJORITY, None)
                    return STATUS_RESOLVED
            elif self.escalate:
                self.store._conn.execute(
                    "UPDATE annotation_tasks SET required_votes=?, escalated=1"
                    " WHERE id=?",
                    (required + 1, task_id),
                )
                self._log("escalate", {"task": task_id, "required_votes": required + 1})
                return STATUS_OPEN
            self.store._conn.execute(
                "UPDATE annotation_tasks SET status=? WHERE id=?",
                (STATUS_AWAITING, task_id),
            )
            self._log("awaiting_consensus", {"task": task_id})
            return STATUS_AWAITING

    def _validate_label(self, purpose: str, label: str) -> None:
        if purpose == "category_label":
            if label not in self.taxonomy:
                raise ValueError(f"label {label!r} not in taxonomy")
        elif label not in ("positive", "negative"):
            raise ValueError(f"binary purposes take positive/negative, got {label!r}")

    def _resolve(self, task_id: int, label: str, method: str, note: str | None) -> None:
        self.store._conn.execute(
            "UPDATE annotation_tasks SET status=? WHERE id=?", (STATUS_RESOLVED, task_id)
        )
        self.store._conn.execute(
            "INSERT INTO annotation_consensus(task_id, final_label, method, note,"
            " resolved_at) VALUES (?,?,?,?,?)",
            (task_id, label, method, note, self._clock()),
        )
        self._log("resolve", {"task": task_id, "label": label, "method": method})
        self._claims.pop(task_id, None)

    def resolve_conflict(self, task_id: int, final_label: str, note: str) -> ConsensusRecord:
        """Adjudicate a split task; requires a non-empty resolution note."""
        if not note or not note.strip():
            raise ValueError("resolution note must be non-empty")
        with self.store.transaction():
            row = self._task_row(task_id)
            if row is None:
                raise UnknownInstance(f"task {task_id}")
            if row[4] != STATUS_AWAITING:
                raise NotInConflict(f"task {task_id} is {row[4]}")
            self._validate_label(row[2], final_label)
            self._resolve(task_id, final_label, METHOD_DISCUSSION, note)
        view = self.task_view(task_id)
        c = view["consensus"]
        return ConsensusRecord(task_id, c["final_label"], METHOD_DISCUSSION, note,
                               c["resolved_at"])

    # -- queries ---------------------------------------------------------------------

    def open_tasks(self, purpose: str | None = None) -> list[int]:
        sql = "SELECT id FROM annotation_tasks WHERE status != ?"
        params: list = [STATUS_RESOLVED]
        if purpose:
            sql += " AND purpose=?"
            params.append(purpose)
        return [r[0] for r in self.store._conn.execute(sql + " ORDER BY id", params)]

    def resolutions(self, task_ids: Iterable[int]) -> dict[str, str]:
        """instance_id -> final label for every resolved task in the set."""
        out = {}
        for task_id in task_ids:
            row = self.store._conn.execute(
                "SELECT t.instance_id, c.final_label FROM annotation_tasks t"
                " JOIN annotation_consensus c ON c.task_id = t.id WHERE t.id=?",
                (task_id,),
            ).fetchone()
            if row:
                out[row[0]] = row[1]
        return out

    def audit_log(self, limit: int = 100) -> list[dict]:
        rows = self.store._conn.execute(
            "SELECT seq, at, kind, payload_json FROM annotation_events"
            " ORDER BY seq DESC LIMIT ?",
            (limit,),
        ).fetchall()
        return [
            {"seq": s, "at": at, "kind": kind, **json.loads(p)}
            for s, at, kind, p in rows
        ]

    def vote_matrix(self, purpose: str) -> list[list[str]]:
        """Rows of per-item labels for resolved tasks with uniform vote counts."""
        task_ids = [
            r[0] for r in self.store._conn.execute(
                "SELECT id FROM annotation_tasks WHERE purpose=? AND status=?"
                " ORDER BY id",
                (purpose, STATUS_RESOLVED),
            )
        ]
        return [[l for _, l, _ in self._votes(t)] for t in task_ids]


# --- Fleiss' kappa -----------------------------------------------------------------


def fleiss_kappa(matrix: Sequence[Sequence[str]]) -> float:
    """Chance-corrected multi-rater agreement.

    ``matrix`` holds one row per item, one label per rater; every row must
    carry the same number of votes (>= 2).  Returns 1.0 for perfect
    agreement even when expected agreement is 1 (single category in use).
    """
    if not matrix:
        raise RaggedMatrix("empty matrix")
    n = len(matrix[0])
    if n < 2:
        raise RaggedMatrix("need at least two raters per item")
    if any(len(row) != n for row in matrix):
        raise RaggedMatrix("vote counts differ between items")

    categories = sorted({label for row in matrix for label in row})
    n_items = len(matrix)
    total = n_items * n

    p_j = {c: 0 for c in categories}
    p_bar_sum = 0.0
    for row in matrix:
        counts: dict[str, int] = {}
        for label in row:
            counts[label] = counts.get(label, 0) + 1
            p_j[label] += 1
        p_i = (sum(c * c for c in counts.values()) - n) / (n * (n - 1))
        p_bar_sum += p_i
    p_bar = p_bar_sum / n_items
    p_e = sum((cnt / total) ** 2 for cnt in p_j.values())
    if p_e == 1.0:
        return 1.0 if p_bar == 1.0 else 0.0
    return (p_bar - p_e) / (1 - p_e)
