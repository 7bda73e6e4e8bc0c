"""Classifier backends and ensemble aggregation.

A backend maps a classification instance (a diff plus the first reviewer
comment of its thread) to a binary security-relevance prediction.  Three
kinds exist behind one contract: a keyword matcher, a remote chat-completion
endpoint, and a locally trainable text model (``secrev.locmodel``).  On top
of the backends sit the k-of-n voting rule and the three-way triage used by
the labeling loop.
"""

from __future__ import annotations

import json
import re
import unicodedata
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from .errors import ArityMismatch, EndpointUnreachable, UnparseableReply

POSITIVE = "positive"
NEGATIVE = "negative"

ALL_POSITIVE = "AllPositive"
MIXED = "Mixed"
ALL_NEGATIVE = "AllNegative"


@dataclass(frozen=True)
class ClassificationInstance:
    """Classification input: only the first reviewer comment with its diff."""

    id: str
    hunk_diff: str
    first_reviewer_comment: str


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    backend_id: str
    label: str
    confidence: float | None = None

    def __post_init__(self):
        if self.label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad label {self.label!r}")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0,1]")


@dataclass(frozen=True)
class BackendDescriptor:
    id: str
    kind: str  # keyword | remote_chat | local_trainable
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("keyword", "remote_chat", "local_trainable"):
            raise ValueError(f"unknown backend kind {self.kind!r}")


class Backend(Protocol):
    id: str

    def classify(self, instance: ClassificationInstance) -> Prediction: ...


# --- keyword matching ---------------------------------------------------------

_TOKEN_RE = re.compile(r"[\w]+", re.UNICODE)


def _fold_tokens(text: str) -> list[str]:
    return [t.casefold() for t in _TOKEN_RE.findall(unicodedata.normalize("NFKC", text))]


def load_keywords(path) -> frozenset[str]:
    """One keyword per line; '#' starts a comment; blanks ignored."""
    keywords = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                keywords.add(line)
    return frozenset(keywords)


def default_keywords() -> frozenset[str]:
    from importlib.resources import files

    return frozenset(
        line.split("#", 1)[0].strip()
        for line in files("secrev.data").joinpath("keywords.txt").read_text().splitlines()
        if line.split("#", 1)[0].strip()
    )


def classify_keyword(
    instance: ClassificationInstance, keywords: Iterable[str], backend_id: str = "keyword"
) -> Prediction:
    """Positive iff any keyword occurs in the comment, case-folded and
    anchored at word boundaries; multiword keywords must appear as a
    contiguous token sequence."""
    kws = list(keywords)
    if not kws:
        raise ValueError("keyword set must be non-empty")
    tokens = _fold_tokens(instance.first_reviewer_comment)
    hit = False
    for kw in kws:
        needle = _fold_tokens(kw)
        if not needle:
            continue
        n = len(needle)
        if any(tokens[i:i + n] == needle for i in range(len(tokens) - n + 1)):
            hit = True
            break
    return Prediction(instance.id, backend_id, POSITIVE if hit else NEGATIVE)


class KeywordBackend:
    def __init__(self, backend_id: str, keywords: Iterable[str]):
        self.id = backend_id
        self.keywords = frozenset(keywords)
        if not self.keywords:
            raise ValueError("keyword set must be non-empty")

    def classify(self, instance: ClassificationInstance) -> Prediction:
        return classify_keyword(instance, self.keywords, self.id)


# --- prompt + remote chat backend ----------------------------------------------

# The instruction names security without defining it; the model's own notion
# of the concept is what we want to elicit.
DEFAULT_INSTRUCTION = (
    "You will be shown a code change and the first review comment it received.\n"
    "Does the review comment identify a security risk in the code or recommend "
    "improving the security of the code?\n"
    "Answer with exactly one word: yes or no."
)

_YES_RE = re.compile(r"^[\s\"'*`]*yes\b", re.IGNORECASE)
_NO_RE = re.compile(r"^[\s\"'*`]*no\b", re.IGNORECASE)


def parse_yes_no(reply: str) -> str:
    """Total parser from a model reply to a label; anything ambiguous raises."""
    if _YES_RE.match(reply):
        return POSITIVE
    if _NO_RE.match(reply):
        return NEGATIVE
    raise UnparseableReply(f"cannot map reply to yes/no: {reply[:80]!r}")


@dataclass(frozen=True)
class PromptTemplate:
    instruction_text: str = DEFAULT_INSTRUCTION

    def render(self, instance: ClassificationInstance) -> str:
        return (
            f"{self.instruction_text}\n\n"
            f"Code change:\n{instance.hunk_diff}\n\n"
            f"Review comment:\n{instance.first_reviewer_comment}\n"
        )

    def parse(self, reply: str) -> str:
        return parse_yes_no(reply)


class RemoteChatBackend:
    """Chat-completion-style HTTP backend.

    Wire shape: POST ``{model, messages: [{role, content}]}``; the reply text
    is read from the first message content of the response.
    """

    def __init__(
        self,
        backend_id: str,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        template: PromptTemplate | None = None,
        post_json=None,
        timeout: float = 60.0,
        max_in_flight: int = 4,
    ):
        import threading

        self.id = backend_id
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.template = template or PromptTemplate()
        self.timeout = timeout
        self._post_json = post_json or self._default_post
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def _default_post(self, url: str, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError) as exc:
            raise EndpointUnreachable(f"{url}: {exc}") from exc

    @staticmethod
    def _reply_text(response: dict) -> str:
        choices = response.get("choices")
        if choices:
            return choices[0].get("message", {}).get("content", "")
        messages = response.get("messages")
        if messages:
            return messages[0].get("content", "")
        raise UnparseableReply("response carries no message content")

    def classify(self, instance: ClassificationInstance) -> Prediction:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": self.template.render(instance)}],
        }
        with self._gate:  # bounded in-flight requests under parallel callers
            response = self._post_json(self.endpoint, payload)
        label = self.template.parse(self._reply_text(response))
        return Prediction(instance.id, self.id, label)


# --- voting and triage -----------------------------------------------------------

@dataclass(frozen=True)
class VotingScheme:
    k: int = 4
    n: int = 5

    def __post_init__(self):
        if not (1 <= self.k <= self.n):
            raise ValueError(f"require 1 <= k <= n, got ({self.k}, {self.n})")


def _check_same_instance(predictions: Sequence[Prediction]) -> None:
    ids = {p.instance_id for p in predictions}
    if len(ids) > 1:
        raise ArityMismatch(f"predictions span several instances: {sorted(ids)}")


def vote(predictions: Sequence[Prediction], scheme: VotingScheme) -> str:
    """Positive iff at least ``k`` of the ``n`` backends said positive."""
    if len(predictions) != scheme.n:
        raise ArityMismatch(f"expected {scheme.n} predictions, got {len(predictions)}")
    _check_same_instance(predictions)
    positives = sum(1 for p in predictions if p.label == POSITIVE)
    return POSITIVE if positives >= scheme.k else NEGATIVE


def triage(predictions: Sequence[Prediction]) -> str:
    """Route to AllPositive / Mixed / AllNegative; needs >= 2 predictions."""
    if len(predictions) < 2:
        raise ArityMismatch("triage needs at least two predictions")
    _check_same_instance(predictions)
    labels = {p.label for p in predictions}
    if labels == {POSITIVE}:
        return ALL_POSITIVE
    if labels == {NEGATIVE}:
        return ALL_NEGATIVE
    return MIXED


def instance_from_quintuple(q) -> ClassificationInstance:
    return ClassificationInstance(
        id=q.id, hunk_diff=q.hunk_diff,
        first_reviewer_comment=q.first_reviewer_comment(),
    )
