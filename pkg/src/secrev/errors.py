"""Exception hierarchy shared across the pipeline.

Every error that callers are expected to catch lives here so that the CLI
can map error classes to distinct exit codes in one place.
"""

from __future__ import annotations


class SecrevError(Exception):
    """Base class for all pipeline errors."""


# --- corpus store / diff engine -------------------------------------------

class HunkMismatch(SecrevError):
    """A hunk's context or removed lines do not match the target content."""


class PathUnknown(SecrevError):
    """Requested path does not exist at the requested point in history."""


class AnchorUnresolvable(SecrevError):
    """A review thread's anchor cannot be resolved against stored commits."""


class IoFailure(SecrevError):
    """Filesystem error while importing or exporting datasets."""


class StoreError(SecrevError):
    """Integrity violation inside the corpus store."""


# --- mining ----------------------------------------------------------------

class ApiAuthFailure(SecrevError):
    """The hosting platform rejected our credentials."""


class RateLimited(SecrevError):
    """Rate limit hit; carries the server-requested wait in seconds."""

    def __init__(self, retry_after: float, message: str = "rate limited"):
        super().__init__(message)
        self.retry_after = retry_after


class PartialData(SecrevError):
    """A crawl aborted mid-entity; persisted data is consistent, cursor kept back."""


# --- classification --------------------------------------------------------

class ArityMismatch(SecrevError):
    """Prediction list does not match the voting scheme or instance."""


class UnparseableReply(SecrevError):
    """A model reply could not be mapped to a label; never silently defaulted."""


class EndpointUnreachable(SecrevError):
    """Remote classification/generation/embedding endpoint failed."""


class DegenerateTraining(SecrevError):
    """Training data contains a single class."""


# --- loop / metrics --------------------------------------------------------

class DomainError(SecrevError):
    """A numeric argument is outside its documented domain."""


class EmptyEvalSet(SecrevError):
    """Evaluation requested on an empty instance set."""


class ConflictingLabel(SecrevError):
    """An instance would receive a second, conflicting human label."""


class QueueUnavailable(SecrevError):
    """Annotation queue unreachable; the iteration suspends and is resumable."""


# --- annotation ------------------------------------------------------------

class UnknownInstance(SecrevError):
    """Tried to enqueue an instance that is not in the store."""


class DuplicateVote(SecrevError):
    """Annotator already voted on this task."""


class TaskResolved(SecrevError):
    """Vote or claim arrived after the task was resolved."""


class NotInConflict(SecrevError):
    """Conflict resolution requested for a task that is not awaiting consensus."""


class RaggedMatrix(SecrevError):
    """Agreement matrix rows carry unequal vote counts."""


# --- statistics ------------------------------------------------------------

class EmptyCategorySet(SecrevError):
    """Bias analysis needs at least one category-labeled item on each side."""


# --- benchmark --------------------------------------------------------------

class ExemplarFromSameRepo(SecrevError):
    """Few-shot exemplar drawn from the instance's own repository."""


class EmbedderUnavailable(SecrevError):
    """Embedding backend unreachable or missing vectors for a text."""


# --- configuration ----------------------------------------------------------

class ConfigError(SecrevError):
    """Configuration file missing, malformed, or referencing absent files."""
