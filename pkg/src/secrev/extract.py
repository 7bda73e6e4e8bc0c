"""Chronological file-state reconstruction and review-record extraction.

A pull request's file states are derived by replaying each commit's diffs,
in commit order, on top of the base snapshot.  Review threads anchored to a
commit yield one record each: the diff fragment under review, the file
before and after the anchored commit, the full comment dialogue, and the
later follow-up change (if any) that touched the reviewed fragment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .diffs import (
    ADD,
    DELETE,
    FileDiff,
    RENAME,
    apply_diff,
    hunks_intersecting_new_range,
    map_range_through_diff,
    serialize_hunks,
)
from .errors import AnchorUnresolvable, HunkMismatch, PathUnknown
from .store import Commit, CorpusStore, PullRequest, ReviewQuintuple, ReviewThread

log = logging.getLogger(__name__)

# Overlap rule recorded on every extracted record so stricter variants can be
# re-run later: a follow-up counts as refinement when its diff's old-side line
# range intersects the reviewed fragment's tracked range.
REFINEMENT_RULE = "new-range-intersection"


def _replay_commit(files: dict[str, str], commit: Commit) -> None:
    """Apply one commit's diffs to the path->content map, in diff order."""
    for fd in commit.diffs:
        src = fd.source_path
        if fd.change_kind == ADD:
            files[fd.path] = apply_diff(None, fd) or ""
            continue
        if src not in files:
            raise PathUnknown(f"{commit.sha}: diff targets unknown path {src!r}")
        content = files.pop(src) if fd.change_kind in (RENAME, DELETE) else files[src]
        result = apply_diff(content, fd)
        if fd.change_kind == DELETE:
            continue  # tombstoned by the pop above
        files[fd.path] = result if result is not None else ""


def file_states(pr_snapshot: dict[str, str], commits: list[Commit], upto: int) -> dict[str, str]:
    """All text file states after ``commits[0..=upto]``; ``upto=-1`` is the base."""
    files = dict(pr_snapshot)
    for idx in range(0, upto + 1):
        _replay_commit(files, commits[idx])
    return files


def reconstruct_file_state(
    store: CorpusStore, pr: PullRequest, path: str, upto: int
) -> str:
    """Content of ``path`` after the first ``upto + 1`` commits of the PR.

    Raises ``PathUnknown`` when the path does not exist at that point and
    propagates ``HunkMismatch`` from inconsistent diffs.
    """
    commits = store.commits_for_pr(pr.id)
    if upto >= len(commits):
        raise PathUnknown(f"PR #{pr.number} has only {len(commits)} commits")
    files = file_states(store.base_snapshot(pr.id), commits, upto)
    if path not in files:
        raise PathUnknown(f"{path!r} absent after commit index {upto}")
    return files[path]


@dataclass(frozen=True)
class _Anchor:
    commit_index: int
    file_diff: FileDiff
    lo: int
    hi: int


def _resolve_anchor(thread: ReviewThread, commits: list[Commit]) -> _Anchor:
    for idx, commit in enumerate(commits):
        if commit.sha != thread.anchor_sha:
            continue
        for fd in commit.diffs:
            if fd.path != thread.anchor_path:
                continue
            hunks = hunks_intersecting_new_range(fd, thread.anchor_lo, thread.anchor_hi)
            if not hunks:
                raise AnchorUnresolvable(
                    f"thread {thread.external_key}: no hunk covers lines "
                    f"{thread.anchor_lo}-{thread.anchor_hi} of {fd.path}"
                )
            return _Anchor(idx, fd, thread.anchor_lo, thread.anchor_hi)
        raise AnchorUnresolvable(
            f"thread {thread.external_key}: commit {thread.anchor_sha} does not "
            f"touch {thread.anchor_path}"
        )
    raise AnchorUnresolvable(
        f"thread {thread.external_key}: commit {thread.anchor_sha} not in PR"
    )


def _find_refinement(
    anchor: _Anchor,
    thread: ReviewThread,
    commits: list[Commit],
) -> str | None:
    """Post-image text of the reviewed fragment in the latest overlapping
    same-PR commit that postdates the first reviewer comment."""
    if not thread.comments:
        return None
    first_comment_at = thread.comments[0].posted_at

    hunks = hunks_intersecting_new_range(anchor.file_diff, anchor.lo, anchor.hi)
    lo = min(h.new_span()[0] for h in hunks)
    hi = max(h.new_span()[1] for h in hunks)
    lo, hi = min(lo, hi), max(lo, hi)
    path = anchor.file_diff.path

    refinement: str | None = None
    for commit in commits[anchor.commit_index + 1:]:
        fd = next((d for d in commit.diffs if d.source_path == path), None)
        if fd is None:
            continue
        if fd.change_kind == DELETE:
            break  # fragment gone; later commits cannot refine it
        new_lo, new_hi, touched = map_range_through_diff(lo, hi, fd)
        if touched and commit.committed_at > first_comment_at:
            overlapping = [
                h for h in fd.hunks
                if _old_span_intersects(h, lo, hi)
            ]
            refinement = "\n".join(h.new_text() for h in overlapping)
        lo, hi = new_lo, new_hi
        path = fd.path
    return refinement


def _old_span_intersects(hunk, lo: int, hi: int) -> bool:
    if hunk.old_len == 0:
        return lo <= hunk.old_start < hi
    o_lo, o_hi = hunk.old_span()
    return o_lo <= hi and lo <= o_hi


def extract_quintuple(store: CorpusStore, thread: ReviewThread) -> ReviewQuintuple:
    """Build the review record for one thread.

    Raises ``AnchorUnresolvable`` when the anchored commit or hunk cannot be
    found (e.g. force-pushed history) and ``HunkMismatch``/``PathUnknown``
    when reconstruction fails; callers skip and log those threads.
    """
    pr = store.get_pull_request(thread.pr_id)
    repo = next(r for r in store.repositories() if r.id == pr.repo_id)
    commits = store.commits_for_pr(pr.id)
    anchor = _resolve_anchor(thread, commits)

    base = store.base_snapshot(pr.id)
    before = file_states(base, commits, anchor.commit_index - 1)
    after = file_states(base, commits, anchor.commit_index)

    fd = anchor.file_diff
    if fd.path not in after:
        raise AnchorUnresolvable(f"{fd.path!r} absent after anchored commit")
    file_new = after[fd.path]
    file_old = "" if fd.change_kind == ADD else before.get(fd.source_path, "")

    hunks = hunks_intersecting_new_range(fd, anchor.lo, anchor.hi)
    hunk_diff = serialize_hunks(fd, hunks)

    return ReviewQuintuple(
        id=f"{repo.full_name}#{pr.number}#{thread.external_key}",
        thread_id=thread.id,
        repo=repo.full_name,
        language=repo.language,
        hunk_diff=hunk_diff,
        file_old=file_old,
        file_new=file_new,
        comments=thread.comments,
        refinement=_find_refinement(anchor, thread, commits),
        refinement_rule=REFINEMENT_RULE,
    )


def extract_all(store: CorpusStore) -> dict[str, int]:
    """Extract records for every stored thread; skipped threads are counted
    by reason.  Returns the census."""
    census = {"extracted": 0, "skipped": 0}
    reasons: dict[str, int] = {}
    with store.transaction():
        for thread in list(store.all_threads()):
            try:
                q = extract_quintuple(store, thread)
            except (AnchorUnresolvable, HunkMismatch, PathUnknown) as exc:
                store.mark_skipped(thread.id, f"{type(exc).__name__}: {exc}")
                reason = type(exc).__name__
                reasons[reason] = reasons.get(reason, 0) + 1
                census["skipped"] += 1
                log.info("skipping thread %s: %s", thread.external_key, exc)
                continue
            store.put_quintuple(q)
            census["extracted"] += 1
    census.update({f"skipped_{k}": v for k, v in reasons.items()})
    return census
