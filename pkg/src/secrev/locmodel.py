"""Desk-scale trainable text classifier used as the loop's local backend.

TF-IDF features over comment and diff tokens feed a logistic model trained
by plain gradient descent.  Everything is deterministic under a fixed seed:
the vocabulary is sorted, epochs shuffle with a seeded generator, and the
artifact serializes to canonical JSON, so retraining on identical data
yields a byte-identical file.

Ensemble members diversify through their seed: each member drops a seeded
subset of the vocabulary, which keeps disagreement alive on borderline
instances instead of collapsing the ensemble into five copies of one model.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass

from .classify import ClassificationInstance, NEGATIVE, POSITIVE, Prediction
from .errors import DegenerateTraining

_WORD_RE = re.compile(r"[\w]+")


def _features(comment: str, diff: str) -> list[str]:
    toks = [t.lower() for t in _WORD_RE.findall(comment)]
    toks += ["d:" + t.lower() for t in _WORD_RE.findall(diff)[:200]]
    return toks


def _keep_token(token: str, seed: int, keep_ratio: float) -> bool:
    digest = hashlib.sha256(f"{seed}:{token}".encode()).digest()
    return (int.from_bytes(digest[:4], "big") / 2**32) < keep_ratio


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 20
    learning_rate: float = 0.5
    l2: float = 1e-4
    keep_ratio: float = 0.7  # seeded vocabulary subsample per ensemble member
    min_df: int = 1
    max_pos_weight: float = 8.0  # cap on the minority-class gradient weight


class LocalTextClassifier:
    """Bag-of-words / TF-IDF linear classifier behind the backend contract."""

    def __init__(self, backend_id: str, config: TrainConfig | None = None):
        self.id = backend_id
        self.config = config or TrainConfig()
        self.idf: dict[str, float] = {}
        self.weights: dict[str, float] = {}
        self.bias = 0.0
        self.trained = False

    # -- training ---------------------------------------------------------------

    def train(self, instances: list[ClassificationInstance], labels: list[str]) -> None:
        """Fit on parallel instance/label lists; both classes required."""
        if len(instances) != len(labels):
            raise ValueError("instances and labels must be parallel")
        label_set = set(labels)
        if label_set != {POSITIVE, NEGATIVE}:
            raise DegenerateTraining(f"training labels cover {sorted(label_set)}")

        cfg = self.config
        docs = [_features(i.first_reviewer_comment, i.hunk_diff) for i in instances]
        df: dict[str, int] = {}
        for toks in docs:
            for t in set(toks):
                df[t] = df.get(t, 0) + 1
        n_docs = len(docs)
        vocab = sorted(
            t for t, c in df.items()
            if c >= cfg.min_df and _keep_token(t, cfg.seed, cfg.keep_ratio)
        )
        self.idf = {t: math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in vocab}

        vectors = [self._vectorize(toks) for toks in docs]
        targets = [1.0 if l == POSITIVE else 0.0 for l in labels]

        # class weighting keeps the rare positive class from being drowned
        # by the mostly-negative human-labeled batches
        n_pos = sum(1 for t in targets if t == 1.0)
        n_neg = n_docs - n_pos
        pos_weight = min(cfg.max_pos_weight, max(1.0, n_neg / n_pos))

        self.weights = {t: 0.0 for t in vocab}
        self.bias = 0.0
        rng = random.Random(cfg.seed)
        order = list(range(n_docs))
        for _ in range(cfg.epochs):
            rng.shuffle(order)
            for i in order:
                vec = vectors[i]
                z = self.bias + sum(self.weights[t] * v for t, v in vec.items())
                p = 1.0 / (1.0 + math.exp(-max(-35.0, min(35.0, z))))
                g = (p - targets[i]) * (pos_weight if targets[i] == 1.0 else 1.0)
                self.bias -= cfg.learning_rate * g
                for t, v in vec.items():
                    w = self.weights[t]
                    self.weights[t] = w - cfg.learning_rate * (g * v + cfg.l2 * w)
        self.trained = True

    def _vectorize(self, toks: list[str]) -> dict[str, float]:
        counts: dict[str, int] = {}
        for t in toks:
            if t in self.idf:
                counts[t] = counts.get(t, 0) + 1
        if not counts:
            return {}
        norm = math.sqrt(sum(c * c for c in counts.values()))
        return {t: (c / norm) * self.idf[t] for t, c in counts.items()}

    # -- inference ---------------------------------------------------------------

    def predict_proba(self, instance: ClassificationInstance) -> float:
        vec = self._vectorize(_features(instance.first_reviewer_comment, instance.hunk_diff))
        z = self.bias + sum(self.weights.get(t, 0.0) * v for t, v in vec.items())
        return 1.0 / (1.0 + math.exp(-max(-35.0, min(35.0, z))))

    def classify(self, instance: ClassificationInstance) -> Prediction:
        if not self.trained:
            raise RuntimeError(f"backend {self.id} used before training")
        p = self.predict_proba(instance)
        label = POSITIVE if p >= 0.5 else NEGATIVE
        return Prediction(instance.id, self.id, label, confidence=p if label == POSITIVE else 1 - p)

    # -- artifact ----------------------------------------------------------------

    def to_artifact(self) -> str:
        payload = {
            "kind": "local-tfidf-logistic",
            "backend_id": self.id,
            "config": {
                "seed": self.config.seed,
                "epochs": self.config.epochs,
                "learning_rate": self.config.learning_rate,
                "l2": self.config.l2,
                "keep_ratio": self.config.keep_ratio,
                "min_df": self.config.min_df,
            },
            "idf": self.idf,
            "weights": self.weights,
            "bias": self.bias,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_artifact())

    @classmethod
    def from_artifact(cls, text: str) -> "LocalTextClassifier":
        payload = json.loads(text)
        cfg = TrainConfig(**payload["config"])
        model = cls(payload["backend_id"], cfg)
        model.idf = dict(payload["idf"])
        model.weights = dict(payload["weights"])
        model.bias = payload["bias"]
        model.trained = True
        return model

    @classmethod
    def load(cls, path) -> "LocalTextClassifier":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_artifact(fh.read())
