"""Unified-diff model: parse, serialize, generate, and apply.

The corpus stores one serialized diff per (commit, file).  Everything in the
pipeline that needs file states reconstructs them by replaying these diffs,
so this module is deliberately strict: a context or removed line that does
not match the target content raises ``HunkMismatch`` instead of guessing.

Conventions follow ordinary unified diffs as produced by git and consumed by
patch(1): hunk headers are 1-based, a zero-length old side means "insert
after line ``old_start``", and ``\\ No newline at end of file`` markers are
honored on both sides.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, replace
from typing import Iterable

from .errors import HunkMismatch

CONTEXT = "context"
ADDED = "added"
REMOVED = "removed"

_MARKER = {" ": CONTEXT, "+": ADDED, "-": REMOVED}
_PREFIX = {CONTEXT: " ", ADDED: "+", REMOVED: "-"}

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")

ADD = "add"
MODIFY = "modify"
DELETE = "delete"
RENAME = "rename"
CHANGE_KINDS = (ADD, MODIFY, DELETE, RENAME)


@dataclass(frozen=True)
class DiffLine:
    kind: str  # context | added | removed
    text: str


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: tuple[DiffLine, ...]

    def __post_init__(self):
        n_ctx = sum(1 for l in self.lines if l.kind == CONTEXT)
        n_add = sum(1 for l in self.lines if l.kind == ADDED)
        n_rem = sum(1 for l in self.lines if l.kind == REMOVED)
        if n_ctx + n_rem != self.old_len or n_ctx + n_add != self.new_len:
            raise ValueError(
                f"hunk length mismatch: header -{self.old_start},{self.old_len} "
                f"+{self.new_start},{self.new_len} vs lines "
                f"ctx={n_ctx} add={n_add} rem={n_rem}"
            )

    def old_span(self) -> tuple[int, int]:
        """Closed 1-based line range on the old side; empty spans are (s+1, s)."""
        if self.old_len == 0:
            return (self.old_start + 1, self.old_start)
        return (self.old_start, self.old_start + self.old_len - 1)

    def new_span(self) -> tuple[int, int]:
        if self.new_len == 0:
            return (self.new_start + 1, self.new_start)
        return (self.new_start, self.new_start + self.new_len - 1)

    def new_text(self) -> str:
        """Post-image text of this hunk (context + added lines)."""
        return "\n".join(l.text for l in self.lines if l.kind != REMOVED)


@dataclass(frozen=True)
class FileDiff:
    path: str
    old_path: str | None = None
    change_kind: str = MODIFY
    hunks: tuple[Hunk, ...] = ()
    old_noeol: bool = False  # old side lacked a trailing newline
    new_noeol: bool = False

    def __post_init__(self):
        if self.change_kind not in CHANGE_KINDS:
            raise ValueError(f"unknown change kind {self.change_kind!r}")
        if self.change_kind == ADD and self.old_path is not None:
            raise ValueError("add diff must not carry an old_path")
        if self.change_kind == RENAME and not self.old_path:
            raise ValueError("rename diff requires old_path")
        spans = [h.old_span() for h in self.hunks]
        for (lo_a, hi_a), (lo_b, hi_b) in zip(spans, spans[1:]):
            if lo_b <= hi_a:
                raise ValueError("hunks overlap or are out of order")

    @property
    def source_path(self) -> str:
        return self.old_path if self.old_path is not None else self.path


# --- parsing ----------------------------------------------------------------

def _strip_git_prefix(path: str) -> str:
    if path in ("/dev/null",):
        return path
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def parse_unified(text: str) -> FileDiff:
    """Parse a single-file unified diff (git or plain ``diff -u`` output)."""
    old_name = None
    new_name = None
    explicit_kind: str | None = None
    hunks: list[Hunk] = []
    old_noeol = False
    new_noeol = False

    lines = text.split("\n")
    i = 0
    cur_header: tuple[int, int, int, int] | None = None
    cur_lines: list[DiffLine] = []

    def flush():
        nonlocal cur_header, cur_lines
        if cur_header is not None:
            os_, ol, ns, nl = cur_header
            hunks.append(Hunk(os_, ol, ns, nl, tuple(cur_lines)))
        cur_header = None
        cur_lines = []

    while i < len(lines):
        line = lines[i]
        i += 1
        if line.startswith("--- "):
            old_name = _strip_git_prefix(line[4:].split("\t")[0])
            continue
        if line.startswith("+++ "):
            new_name = _strip_git_prefix(line[4:].split("\t")[0])
            continue
        if line.startswith("diff ") or line.startswith("index "):
            continue
        if line.startswith("new file"):
            explicit_kind = ADD
            continue
        if line.startswith("deleted file"):
            explicit_kind = DELETE
            continue
        if line.startswith("rename from "):
            old_name = line[len("rename from "):]
            explicit_kind = RENAME
            continue
        if line.startswith("rename to "):
            new_name = line[len("rename to "):]
            continue
        if line.startswith("similarity index") or line.startswith("old mode") or line.startswith("new mode"):
            continue
        m = _HUNK_RE.match(line)
        if m:
            flush()
            old_start = int(m.group(1))
            old_len = int(m.group(2)) if m.group(2) is not None else 1
            new_start = int(m.group(3))
            new_len = int(m.group(4)) if m.group(4) is not None else 1
            cur_header = (old_start, old_len, new_start, new_len)
            continue
        if cur_header is not None:
            if line.startswith("\\"):
                # "\ No newline at end of file" refers to the previous line's side.
                if cur_lines:
                    prev = cur_lines[-1].kind
                    if prev in (REMOVED, CONTEXT):
                        old_noeol = True
                    if prev in (ADDED, CONTEXT):
                        new_noeol = True
                continue
            if line == "" and i == len(lines):
                break  # trailing newline of the diff text itself
            marker, payload = (line[:1], line[1:]) if line else (" ", "")
            kind = _MARKER.get(marker)
            if kind is None:
                raise HunkMismatch(f"unparseable diff line: {line!r}")
            cur_lines.append(DiffLine(kind, payload))
    flush()

    old_name = old_name if old_name not in (None, "/dev/null") else None
    new_name = new_name if new_name not in (None, "/dev/null") else None

    if explicit_kind == ADD or (old_name is None and new_name is not None):
        kind = ADD
        path, old = new_name, None
    elif explicit_kind == DELETE or (new_name is None and old_name is not None):
        kind = DELETE
        path, old = old_name, old_name
    elif explicit_kind == RENAME or (old_name and new_name and old_name != new_name):
        kind = RENAME
        path, old = new_name, old_name
    else:
        kind = MODIFY
        path, old = new_name or old_name, old_name
    if path is None:
        raise HunkMismatch("diff names neither an old nor a new file")
    if kind == ADD:
        old = None
    elif kind == MODIFY:
        old = path

    return FileDiff(
        path=path,
        old_path=None if kind == ADD else old,
        change_kind=kind,
        hunks=tuple(hunks),
        old_noeol=old_noeol,
        new_noeol=new_noeol,
    )


# --- serialization -----------------------------------------------------------

def parse_multi(text: str) -> list[FileDiff]:
    """Split a multi-file patch (e.g. one commit's full diff) into FileDiffs."""
    chunks: list[list[str]] = []
    current: list[str] = []
    for line in text.split("\n"):
        if line.startswith("diff --git") and current:
            chunks.append(current)
            current = []
        current.append(line)
    if current and any(l.strip() for l in current):
        chunks.append(current)
    return [parse_unified("\n".join(c)) for c in chunks]


def serialize_unified(diff: FileDiff) -> str:
    """Render a FileDiff back to unified-diff text. parse(serialize(d)) == d."""
    out: list[str] = []
    if diff.change_kind == ADD:
        out.append("--- /dev/null")
        out.append(f"+++ b/{diff.path}")
    elif diff.change_kind == DELETE:
        out.append(f"--- a/{diff.source_path}")
        out.append("+++ /dev/null")
    else:
        out.append(f"--- a/{diff.source_path}")
        out.append(f"+++ b/{diff.path}")

    last_old_idx = _last_index(diff.hunks, (CONTEXT, REMOVED))
    last_new_idx = _last_index(diff.hunks, (CONTEXT, ADDED))

    for hi, hunk in enumerate(diff.hunks):
        out.append(
            f"@@ -{hunk.old_start},{hunk.old_len} +{hunk.new_start},{hunk.new_len} @@"
        )
        for li, line in enumerate(hunk.lines):
            out.append(_PREFIX[line.kind] + line.text)
            emit_old = diff.old_noeol and (hi, li) == last_old_idx and line.kind in (CONTEXT, REMOVED)
            emit_new = diff.new_noeol and (hi, li) == last_new_idx and line.kind in (CONTEXT, ADDED)
            if emit_old or emit_new:
                out.append("\\ No newline at end of file")
    return "\n".join(out) + "\n"


def _last_index(hunks: tuple[Hunk, ...], kinds: tuple[str, ...]) -> tuple[int, int] | None:
    for hi in range(len(hunks) - 1, -1, -1):
        for li in range(len(hunks[hi].lines) - 1, -1, -1):
            if hunks[hi].lines[li].kind in kinds:
                return (hi, li)
    return None


def serialize_hunks(diff: FileDiff, hunks: Iterable[Hunk]) -> str:
    """Serialize a contiguous subset of a diff's hunks (sub-diff at an anchor)."""
    sub = replace(diff, hunks=tuple(hunks), old_noeol=False, new_noeol=False)
    return serialize_unified(sub)


# --- generation ---------------------------------------------------------------

def _split_lines(content: str) -> tuple[list[str], bool]:
    """Split normalized content into lines plus a had-trailing-newline flag."""
    if content == "":
        return [], True
    lines = content.split("\n")
    if lines and lines[-1] == "":
        return lines[:-1], True
    return lines, False


def compute_diff(
    old: str | None,
    new: str | None,
    path: str,
    old_path: str | None = None,
    context: int = 3,
) -> FileDiff:
    """Build a FileDiff between two file states using difflib.

    ``old is None`` means the file did not exist (add); ``new is None`` means
    it is deleted.  A differing ``old_path`` produces a rename diff.
    """
    if old is None and new is None:
        raise ValueError("nothing to diff")
    if old is None:
        kind = ADD
    elif new is None:
        kind = DELETE
    elif old_path is not None and old_path != path:
        kind = RENAME
    else:
        kind = MODIFY

    old_lines, old_eol = _split_lines(old or "")
    new_lines, new_eol = _split_lines(new or "")

    hunks: list[Hunk] = []
    matcher = difflib.SequenceMatcher(a=old_lines, b=new_lines, autojunk=False)
    for group in matcher.get_grouped_opcodes(context):
        lines: list[DiffLine] = []
        first_old = group[0][1] + 1
        first_new = group[0][3] + 1
        old_count = 0
        new_count = 0
        for tag, i1, i2, j1, j2 in group:
            if tag == "equal":
                for line in old_lines[i1:i2]:
                    lines.append(DiffLine(CONTEXT, line))
                old_count += i2 - i1
                new_count += i2 - i1
                continue
            for line in old_lines[i1:i2]:
                lines.append(DiffLine(REMOVED, line))
                old_count += 1
            for line in new_lines[j1:j2]:
                lines.append(DiffLine(ADDED, line))
                new_count += 1
        old_start = first_old if old_count else group[0][1]
        new_start = first_new if new_count else group[0][3]
        hunks.append(Hunk(old_start, old_count, new_start, new_count, tuple(lines)))

    return FileDiff(
        path=path,
        old_path=None if kind == ADD else (old_path or path),
        change_kind=kind,
        hunks=tuple(hunks),
        old_noeol=not old_eol and old is not None and old != "",
        new_noeol=not new_eol and new is not None and new != "",
    )


# --- application ---------------------------------------------------------------

def apply_diff(content: str | None, diff: FileDiff) -> str | None:
    """Apply a FileDiff to file content; returns the post-image.

    ``None`` denotes an absent file: the pre-image for adds, and the returned
    post-image for deletes (the caller tombstones the path).  Context and
    removed lines are verified against the pre-image; any disagreement raises
    ``HunkMismatch`` so the instance can be flagged unreconstructable.
    """
    if diff.change_kind == ADD:
        if content not in (None, ""):
            raise HunkMismatch(f"add diff for existing file {diff.path}")
        old_lines: list[str] = []
    else:
        if content is None:
            raise HunkMismatch(f"{diff.change_kind} diff for absent file {diff.source_path}")
        old_lines, _ = _split_lines(content)

    out: list[str] = []
    cursor = 0  # 0-based index into old_lines
    for hunk in diff.hunks:
        start = hunk.old_start - 1 if hunk.old_len > 0 else hunk.old_start
        if start < cursor or start > len(old_lines):
            raise HunkMismatch(
                f"hunk at -{hunk.old_start},{hunk.old_len} out of range for {diff.path}"
            )
        out.extend(old_lines[cursor:start])
        cursor = start
        for line in hunk.lines:
            if line.kind == ADDED:
                out.append(line.text)
                continue
            if cursor >= len(old_lines) or old_lines[cursor] != line.text:
                got = old_lines[cursor] if cursor < len(old_lines) else "<eof>"
                raise HunkMismatch(
                    f"{diff.path}:{cursor + 1}: expected {line.text!r}, found {got!r}"
                )
            if line.kind == CONTEXT:
                out.append(line.text)
            cursor += 1
    out.extend(old_lines[cursor:])

    if diff.change_kind == DELETE:
        if out:
            raise HunkMismatch(f"delete diff for {diff.path} leaves content behind")
        return None
    if not out:
        return ""
    return "\n".join(out) + ("" if diff.new_noeol else "\n")


# --- range tracking -------------------------------------------------------------

def _spans_intersect(a_lo: int, a_hi: int, b_lo: int, b_hi: int) -> bool:
    return a_lo <= b_hi and b_lo <= a_hi


def hunks_intersecting_new_range(diff: FileDiff, lo: int, hi: int) -> list[Hunk]:
    """Hunks whose new-file span intersects the closed range [lo, hi]."""
    picked = []
    for hunk in diff.hunks:
        h_lo, h_hi = hunk.new_span()
        if h_lo > h_hi:  # pure deletion has an empty new span at its position
            h_lo, h_hi = h_hi, h_lo
        if _spans_intersect(lo, hi, h_lo, h_hi):
            picked.append(hunk)
    return picked


def map_range_through_diff(lo: int, hi: int, diff: FileDiff) -> tuple[int, int, bool]:
    """Track a closed 1-based line range across one file revision.

    Returns ``(lo', hi', touched)`` where ``touched`` says at least one hunk
    modified lines inside the range.  Hunks entirely above the range shift it
    by their size delta; touching hunks additionally widen the result to
    cover their new-side span.  Pure insertions exactly at the range
    boundaries count as outside (weakest overlap reading).
    """
    if lo > hi:
        raise ValueError("empty range")
    delta_lo = 0
    delta_hi = 0
    touched = False
    widen_lo: int | None = None
    widen_hi: int | None = None
    for hunk in diff.hunks:
        size_delta = hunk.new_len - hunk.old_len
        if hunk.old_len == 0:
            ins_after = hunk.old_start
            if ins_after < lo:
                delta_lo += size_delta
                delta_hi += size_delta
            elif ins_after < hi:
                touched = True
                s_lo, s_hi = hunk.new_span()
                widen_lo = s_lo if widen_lo is None else min(widen_lo, s_lo)
                widen_hi = s_hi if widen_hi is None else max(widen_hi, s_hi)
                delta_hi += size_delta
            continue
        o_lo, o_hi = hunk.old_span()
        if o_hi < lo:
            delta_lo += size_delta
            delta_hi += size_delta
        elif o_lo > hi:
            continue
        else:
            touched = True
            s_lo, s_hi = hunk.new_span()
            if s_lo <= s_hi:
                widen_lo = s_lo if widen_lo is None else min(widen_lo, s_lo)
                widen_hi = s_hi if widen_hi is None else max(widen_hi, s_hi)
            if o_hi <= hi:
                delta_hi += size_delta
    new_lo = lo + delta_lo
    new_hi = hi + delta_hi
    if widen_lo is not None:
        new_lo = min(new_lo, widen_lo)
        new_hi = max(new_hi, widen_hi)
    if new_lo > new_hi:
        new_lo = new_hi = max(1, min(new_lo, new_hi))
    return new_lo, new_hi, touched
