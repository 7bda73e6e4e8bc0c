"""Lexical and semantic similarity metrics for generated review comments.

One frozen tokenizer feeds every metric and both preprocessing token caps:
lowercase, split on whitespace and punctuation, keep word characters.  The
n-gram overlap metric is order-4 with brevity penalty and additive
(epsilon-numerator) smoothing of zero counts; the subsequence metric is the
LCS F-measure; the alignment metric runs exact and stemmed unigram stages
with the classic fragmentation penalty, with no synonym stage (scores are
labeled "-lite" in reports and are not comparable to synonym-aware ones).
"""

from __future__ import annotations

import json
import math
import urllib.error
import urllib.request
from collections import Counter
from typing import Protocol, Sequence

import re

from .errors import DomainError, EmbedderUnavailable

_TOKEN_RE = re.compile(r"[\w<>]+")

BLEU_EPSILON = 1e-9  # additive count for zero n-gram matches


def tokenize(text: str) -> list[str]:
    """Whitespace+punctuation splitting, lowercased; angle brackets survive so
    placeholder tokens like ``<LINK>`` stay atomic."""
    return [t for t in _TOKEN_RE.findall(text.lower())]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_order: int = 4) -> float:
    """Order-4 n-gram precision score in [0, 1]; empty candidates score 0.

    Sentence-level effective ordering: orders beyond the candidate's length
    are skipped, so identical short pairs still score 1.0.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, max_order + 1):
        possible = len(cand) - n + 1
        if possible <= 0:
            break
        cand_counts = _ngrams(cand, n)
        ref_counts = _ngrams(ref, n)
        matches = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        p = matches / possible if matches > 0 else BLEU_EPSILON / possible
        log_sum += math.log(p)
        orders += 1
    geo = math.exp(log_sum / orders)
    c_len, r_len = len(cand), len(ref)
    bp = 1.0 if c_len >= r_len else math.exp(1 - r_len / c_len)
    return bp * geo


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F-measure: 2PR/(P+R) with P=LCS/|cand|, R=LCS/|ref|."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


def exact_match(candidate: str, reference: str) -> int:
    """1 iff equal after trimming and collapsing whitespace runs.  Case is
    preserved: review comments are case-meaningful."""
    return int(" ".join(candidate.split()) == " ".join(reference.split()))


# --- unigram-alignment metric (exact + stem stages) -------------------------------


def meteor_lite(candidate: str, reference: str) -> float:
    """Alignment score with exact and stemmed matching stages.

    Classic scoring: Fmean = 10PR/(R+9P), penalty = 0.5*(chunks/matches)^3,
    score = Fmean*(1-penalty).  No synonym/paraphrase stage is applied.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0

    pairs: list[tuple[int, int]] = []
    cand_used = [False] * len(cand)
    ref_used = [False] * len(ref)

    def run_stage(key) -> None:
        ref_keys = [key(t) for t in ref]
        for i, tok in enumerate(cand):
            if cand_used[i]:
                continue
            want = key(tok)
            for j, have in enumerate(ref_keys):
                if not ref_used[j] and have == want:
                    cand_used[i] = True
                    ref_used[j] = True
                    pairs.append((i, j))
                    break

    run_stage(lambda t: t)
    run_stage(porter_stem)

    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(cand)
    recall = m / len(ref)
    fmean = 10 * precision * recall / (recall + 9 * precision)
    pairs.sort()
    chunks = 1
    for (c0, r0), (c1, r1) in zip(pairs, pairs[1:]):
        if not (c1 == c0 + 1 and r1 == r0 + 1):
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1 - penalty)


# --- Porter stemmer (original 1980 algorithm) --------------------------------------

_VOWELS = "aeiou"


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Count of vowel→consonant transitions (the m in [C](VC)^m[V])."""
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        if _is_consonant(stem, i):
            if prev_vowel:
                m += 1
            prev_vowel = False
        else:
            prev_vowel = True
    return m


def _has_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    if not (_is_consonant(word, len(word) - 3)
            and not _is_consonant(word, len(word) - 2)
            and _is_consonant(word, len(word) - 1)):
        return False
    return word[-1] not in "wxy"


def _replace_suffix(word: str, suffix: str, repl: str, min_measure: int) -> str | None:
    if not word.endswith(suffix):
        return None
    stem = word[: len(word) - len(suffix)]
    if _measure(stem) > min_measure - 1:
        return stem + repl
    return word


def porter_stem(word: str) -> str:
    """Deterministic stem of a lowercase token."""
    w = word
    if len(w) <= 2:
        return w

    # step 1a
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    # step 1b
    flag = False
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    elif w.endswith("ed") and _has_vowel(w[:-2]):
        w = w[:-2]
        flag = True
    elif w.endswith("ing") and _has_vowel(w[:-3]):
        w = w[:-3]
        flag = True
    if flag:
        if w.endswith(("at", "bl", "iz")):
            w += "e"
        elif _ends_double_consonant(w) and not w.endswith(("l", "s", "z")):
            w = w[:-1]
        elif _measure(w) == 1 and _ends_cvc(w):
            w += "e"

    # step 1c
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    # step 2
    for suffix, repl in (
        ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
        ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
        ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
        ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
        ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
    ):
        result = _replace_suffix(w, suffix, repl, 1)
        if result is not None:
            w = result
            break

    # step 3
    for suffix, repl in (
        ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
        ("ical", "ic"), ("ful", ""), ("ness", ""),
    ):
        result = _replace_suffix(w, suffix, repl, 1)
        if result is not None:
            w = result
            break

    # step 4
    for suffix in (
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
        "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    ):
        if w.endswith(suffix):
            stem = w[: len(w) - len(suffix)]
            if suffix == "ion" and not stem.endswith(("s", "t")):
                continue
            if _measure(stem) > 1:
                w = stem
            break

    # step 5a
    if w.endswith("e"):
        stem = w[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            w = stem

    # step 5b
    if _measure(w) > 1 and _ends_double_consonant(w) and w.endswith("l"):
        w = w[:-1]

    return w


# --- embeddings ----------------------------------------------------------------------


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise DomainError("vector lengths differ")
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0 or nv == 0:
        return 0.0
    return dot / (nu * nv)


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class SidecarEmbedder:
    """Embeddings from a precomputed ``{text: vector}`` JSON sidecar file."""

    def __init__(self, vectors: dict[str, list[float]]):
        self.vectors = vectors

    @classmethod
    def load(cls, path) -> "SidecarEmbedder":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for t in texts:
            if t not in self.vectors:
                raise EmbedderUnavailable(f"no precomputed vector for {t[:60]!r}")
            out.append(self.vectors[t])
        return out


class RemoteEmbedder:
    """Embedding endpoint speaking ``POST {model, input: [...]}``."""

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0, post_json=None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self._post_json = post_json or self._default_post

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
            raise EmbedderUnavailable(f"{url}: {exc}") from exc

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        response = self._post_json(self.endpoint, {"model": self.model, "input": list(texts)})
        data = response.get("data")
        if not isinstance(data, list) or len(data) != len(texts):
            raise EmbedderUnavailable("embedding response shape mismatch")
        return [row["embedding"] for row in data]


def semantic_similarity(candidate: str, reference: str, embedder: Embedder) -> float:
    """Cosine similarity of the two texts' embeddings, in [-1, 1]."""
    vectors = embedder.embed([candidate, reference])
    return cosine(vectors[0], vectors[1])
