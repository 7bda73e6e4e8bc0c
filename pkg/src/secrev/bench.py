"""Benchmark for review-comment generators on the curated dataset.

Preprocessing mirrors the dataset curation conventions: keep only the first
reviewer comment, drop non-English comments (Latin-letter fraction
heuristic), replace links with a ``<LINK>`` token, and drop instances whose
diff or context exceed the token caps.  Every drop is counted by reason so
``retained + sum(dropped) == input``.

Generation backends are pluggable; lexical metrics come from
``secrev.textmetrics`` and the semantic metric needs an embedder (absent
embedder: the metric is reported absent, the run continues).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .errors import EmbedderUnavailable, ExemplarFromSameRepo
from .store import ReviewQuintuple
from .textmetrics import (
    Embedder,
    bleu,
    exact_match,
    meteor_lite,
    rouge_l,
    semantic_similarity,
    tokenize,
)

MAX_DIFF_TOKENS = 2048
MAX_CONTEXT_TOKENS = 10000
LINK_TOKEN = "<LINK>"

_URL_RE = re.compile(r"https?://\S+")
_LETTER_RE = re.compile(r"[^\W\d_]", re.UNICODE)
_LATIN_RE = re.compile(r"[A-Za-z]")

ZERO_SHOT = "zero_shot"
FEW_SHOT = "few_shot"
MODES = (ZERO_SHOT, FEW_SHOT)

DROP_NON_ENGLISH = "non_english"
DROP_DIFF_CAP = "token_cap_diff"
DROP_CONTEXT_CAP = "token_cap_context"
DROP_EMPTY_COMMENT = "empty_comment"


@dataclass(frozen=True)
class BenchmarkInstance:
    id: str
    repo: str
    language: str
    hunk_diff: str
    context: str  # the pre-change file
    reference_comment: str


@dataclass
class PreprocessCensus:
    input: int = 0
    retained: int = 0
    dropped: dict[str, int] = field(default_factory=dict)

    def drop(self, reason: str) -> None:
        self.dropped[reason] = self.dropped.get(reason, 0) + 1

    def as_dict(self) -> dict:
        return {"input": self.input, "retained": self.retained, "dropped": dict(self.dropped)}


def is_english(text: str, threshold: float = 0.6) -> bool:
    """Latin-letter fraction heuristic; texts with no letters count as
    non-English (nothing for a generator to learn from)."""
    letters = _LETTER_RE.findall(text)
    if not letters:
        return False
    latin = sum(1 for ch in letters if _LATIN_RE.match(ch))
    return latin / len(letters) >= threshold


def replace_links(text: str) -> str:
    return _URL_RE.sub(LINK_TOKEN, text)


def preprocess(
    quintuples: Sequence[ReviewQuintuple],
    max_diff_tokens: int = MAX_DIFF_TOKENS,
    max_context_tokens: int = MAX_CONTEXT_TOKENS,
    english_threshold: float = 0.6,
) -> tuple[list[BenchmarkInstance], PreprocessCensus]:
    census = PreprocessCensus()
    instances: list[BenchmarkInstance] = []
    for q in quintuples:
        census.input += 1
        comment = q.first_reviewer_comment()
        if not comment.strip():
            census.drop(DROP_EMPTY_COMMENT)
            continue
        if not is_english(comment, english_threshold):
            census.drop(DROP_NON_ENGLISH)
            continue
        if len(tokenize(q.hunk_diff)) > max_diff_tokens:
            census.drop(DROP_DIFF_CAP)
            continue
        if len(tokenize(q.file_old)) > max_context_tokens:
            census.drop(DROP_CONTEXT_CAP)
            continue
        instances.append(BenchmarkInstance(
            id=q.id,
            repo=q.repo,
            language=q.language,
            hunk_diff=q.hunk_diff,
            context=q.file_old,
            reference_comment=replace_links(comment),
        ))
        census.retained += 1
    return instances, census


# --- prompts --------------------------------------------------------------------


@dataclass(frozen=True)
class Exemplar:
    repo: str
    hunk_diff: str
    reference_comment: str


ZERO_SHOT_HEADER = (
    "You are an experienced code reviewer. Read the code change and its "
    "surrounding file, then write a single concise review comment for the "
    "change."
)

FEW_SHOT_HEADER = (
    "You are an experienced code reviewer. Two example reviews follow; then "
    "write a single concise review comment for the final code change."
)


def build_prompt(
    instance: BenchmarkInstance,
    mode: str,
    exemplars: Sequence[Exemplar] = (),
) -> str:
    """Deterministic prompt rendering.

    Few-shot mode requires exactly two exemplars from repositories other
    than the instance's own; exemplars carry no file context.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == ZERO_SHOT:
        return (
            f"{ZERO_SHOT_HEADER}\n\n"
            f"Code change:\n{instance.hunk_diff}\n\n"
            f"File before the change:\n{instance.context}\n\n"
            "Review comment:"
        )
    if len(exemplars) != 2:
        raise ValueError(f"few-shot mode takes exactly 2 exemplars, got {len(exemplars)}")
    for ex in exemplars:
        if ex.repo == instance.repo:
            raise ExemplarFromSameRepo(
                f"exemplar from {ex.repo} matches instance repository"
            )
    blocks = [FEW_SHOT_HEADER, ""]
    for i, ex in enumerate(exemplars, 1):
        blocks.append(f"Example {i} code change:\n{ex.hunk_diff}")
        blocks.append(f"Example {i} review comment:\n{ex.reference_comment}")
        blocks.append("")
    blocks.append(f"Code change:\n{instance.hunk_diff}")
    blocks.append(f"File before the change:\n{instance.context}")
    blocks.append("")
    blocks.append("Review comment:")
    return "\n".join(blocks)


def pick_exemplars(
    instance: BenchmarkInstance,
    pool: Sequence[BenchmarkInstance],
    rng,
) -> list[Exemplar]:
    foreign = [p for p in pool if p.repo != instance.repo]
    if len(foreign) < 2:
        raise ExemplarFromSameRepo("exemplar pool has fewer than 2 foreign-repo items")
    picks = rng.sample(foreign, 2)
    return [Exemplar(p.repo, p.hunk_diff, p.reference_comment) for p in picks]


# --- generation backends -----------------------------------------------------------


class GeneratorBackend(Protocol):
    id: str

    def generate(self, instance: BenchmarkInstance, prompt: str) -> str: ...


class EchoBackend:
    """Returns the reference comment; the oracle row for metrics wiring."""

    def __init__(self, backend_id: str = "echo"):
        self.id = backend_id

    def generate(self, instance: BenchmarkInstance, prompt: str) -> str:
        return instance.reference_comment


class ConstantBackend:
    def __init__(self, backend_id: str, text: str = ""):
        self.id = backend_id
        self.text = text

    def generate(self, instance: BenchmarkInstance, prompt: str) -> str:
        return self.text


class RecordedBackend:
    """Replays generations from an ``{instance_id: text}`` mapping or JSONL
    file with ``{"id", "output"}`` rows (how baseline model outputs connect)."""

    def __init__(self, backend_id: str, outputs: dict[str, str]):
        self.id = backend_id
        self.outputs = outputs

    @classmethod
    def from_jsonl(cls, backend_id: str, path) -> "RecordedBackend":
        outputs = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    outputs[rec["id"]] = rec["output"]
        return cls(backend_id, outputs)

    def generate(self, instance: BenchmarkInstance, prompt: str) -> str:
        if instance.id not in self.outputs:
            raise KeyError(f"no recorded output for {instance.id}")
        return self.outputs[instance.id]


class RemoteChatGenerator:
    """Chat-completion endpoint as a generator backend."""

    def __init__(self, backend_id: str, endpoint: str, model: str,
                 api_key: str | None = None, post_json=None, timeout: float = 120.0):
        from .classify import RemoteChatBackend

        self.id = backend_id
        self._chat = RemoteChatBackend(backend_id, endpoint, model, api_key,
                                       post_json=post_json, timeout=timeout)

    def generate(self, instance: BenchmarkInstance, prompt: str) -> str:
        payload = {
            "model": self._chat.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        response = self._chat._post_json(self._chat.endpoint, payload)
        return self._chat._reply_text(response)


# --- the run ------------------------------------------------------------------------

METRIC_NAMES = ("bleu", "rouge_l", "meteor_lite", "exact_match", "semantic_similarity")


@dataclass
class BenchmarkRow:
    backend_id: str
    mode: str
    instances: int
    complete: bool
    means: dict[str, float | None]
    per_instance: list[dict]

    def as_dict(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "mode": self.mode,
            "instances": self.instances,
            "complete": self.complete,
            "means": self.means,
        }


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow]
    census: dict | None = None

    def as_dict(self) -> dict:
        return {
            "rows": [r.as_dict() for r in self.rows],
            "census": self.census,
        }

    def render_table(self) -> str:
        headers = ["Approach", "BLEU", "ROUGE-L", "METEOR-lite", "Exact Match",
                   "Semantic Similarity"]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, _COLS))]
        lines.append("-" * len(lines[0]))
        for row in self.rows:
            label = f"{row.backend_id}[{row.mode}]"
            cells = [label.ljust(_COLS[0])]
            for name in METRIC_NAMES:
                value = row.means.get(name)
                cells.append(("-" if value is None else f"{value:.4f}").ljust(
                    _COLS[1 + METRIC_NAMES.index(name)]))
            lines.append("  ".join(cells))
        return "\n".join(lines)


_COLS = (28, 8, 8, 12, 12, 20)


def score_pair(candidate: str, reference: str, embedder: Embedder | None) -> dict:
    scores: dict[str, float | None] = {
        "bleu": bleu(candidate, reference),
        "rouge_l": rouge_l(candidate, reference),
        "meteor_lite": meteor_lite(candidate, reference),
        "exact_match": float(exact_match(candidate, reference)),
    }
    if embedder is None:
        scores["semantic_similarity"] = None
    else:
        try:
            scores["semantic_similarity"] = semantic_similarity(candidate, reference, embedder)
        except EmbedderUnavailable:
            scores["semantic_similarity"] = None
    return scores


def run_benchmark(
    backends: Sequence[GeneratorBackend],
    instances: Sequence[BenchmarkInstance],
    modes: Sequence[str] = (ZERO_SHOT,),
    embedder: Embedder | None = None,
    exemplar_pool: Sequence[BenchmarkInstance] | None = None,
    rng=None,
    out_dir: str | Path | None = None,
    census: dict | None = None,
) -> BenchmarkReport:
    """Score every backend/mode combination; a failing backend marks its row
    incomplete without affecting the others.  Raw generations are persisted
    when ``out_dir`` is given."""
    import random as _random

    rng = rng or _random.Random(0)
    pool = exemplar_pool if exemplar_pool is not None else instances
    rows: list[BenchmarkRow] = []
    for backend in backends:
        for mode in modes:
            per_instance: list[dict] = []
            complete = True
            for instance in instances:
                try:
                    exemplars = (
                        pick_exemplars(instance, pool, rng) if mode == FEW_SHOT else ()
                    )
                    prompt = build_prompt(instance, mode, exemplars)
                    output = backend.generate(instance, prompt)
                except Exception:
                    complete = False
                    break
                scores = score_pair(output, instance.reference_comment, embedder)
                per_instance.append({"id": instance.id, "output": output, **scores})
            means: dict[str, float | None] = {}
            for name in METRIC_NAMES:
                values = [r[name] for r in per_instance if r.get(name) is not None]
                means[name] = sum(values) / len(values) if values else None
            rows.append(BenchmarkRow(
                backend_id=backend.id, mode=mode, instances=len(per_instance),
                complete=complete, means=means, per_instance=per_instance,
            ))
    report = BenchmarkReport(rows=rows, census=census)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for row in rows:
            raw = out / f"generations_{row.backend_id}_{row.mode}.jsonl"
            with open(raw, "w", encoding="utf-8") as fh:
                for rec in row.per_instance:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
    return report
