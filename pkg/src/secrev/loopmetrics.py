"""Evaluation metrics, the precision-biased selection score, Cochran's
sample-size formula, and balanced sampling for the labeling loop."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .classify import POSITIVE, ClassificationInstance
from .errors import DomainError, EmptyEvalSet


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate_precision: bool = False  # no positive predictions were made

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "degenerate_precision": self.degenerate_precision,
        }


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def evaluate(
    predict: Callable[[ClassificationInstance], str],
    eval_set: Sequence[tuple[ClassificationInstance, str]],
) -> Metrics:
    """Confusion-matrix metrics over the positive class.

    Precision with zero positive predictions is reported as 0 with the
    degenerate flag set, keeping iteration reports total.
    """
    if not eval_set:
        raise EmptyEvalSet("evaluation set is empty")
    tp = fp = tn = fn = 0
    for instance, truth in eval_set:
        predicted = predict(instance)
        if predicted == POSITIVE and truth == POSITIVE:
            tp += 1
        elif predicted == POSITIVE:
            fp += 1
        elif truth == POSITIVE:
            fn += 1
        else:
            tn += 1
    total = tp + fp + tn + fn
    degenerate = (tp + fp) == 0
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return Metrics(
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        degenerate_precision=degenerate,
    )


def dynamic_f1(
    precision: float,
    recall: float,
    alpha: float = 2.0,
    w_p: float = 1.0,
    w_r: float = 1.0,
) -> float:
    """Precision-biased selection score:
    ``(1+a) * (w_p*P) * (w_r*R) / (w_p*P + a*w_r*R)``, 0 on a zero denominator.

    With ``alpha=1`` and unit weights this is exactly the harmonic-mean F1.
    """
    for name, value in (("precision", precision), ("recall", recall)):
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"{name} outside [0,1]: {value}")
    if alpha <= 0:
        raise DomainError(f"alpha must be positive: {alpha}")
    if w_p <= 0 or w_r <= 0:
        raise DomainError("weights must be positive")
    denom = w_p * precision + alpha * w_r * recall
    if denom == 0:
        return 0.0
    return (1 + alpha) * (w_p * precision) * (w_r * recall) / denom


def penalty_weight(value: float, threshold: float) -> float:
    """Threshold penalty: 1 at or above target, linear shortfall below it."""
    if not 0 < threshold <= 1:
        raise DomainError(f"threshold outside (0,1]: {threshold}")
    return 1.0 if value >= threshold else max(value, 0.0) / threshold


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str | None  # thresholds_met | budget | None


def should_stop(
    metrics: Metrics,
    precision_threshold: float,
    recall_threshold: float,
    iteration: int,
    max_iterations: int,
) -> StopDecision:
    if metrics.precision >= precision_threshold and metrics.recall >= recall_threshold:
        return StopDecision(True, "thresholds_met")
    if iteration >= max_iterations:
        return StopDecision(True, "budget")
    return StopDecision(False, None)


def cochran_sample_size(population: int, z: float = 1.96, p: float = 0.5, e: float = 0.05) -> int:
    """Finite-population sample size:
    ``ceil(N*z^2*p*(1-p) / (e^2*(N-1) + z^2*p*(1-p)))``."""
    if population < 1:
        raise DomainError(f"population must be >= 1, got {population}")
    if not 0 < p < 1:
        raise DomainError(f"p outside (0,1): {p}")
    if not 0 < e < 1:
        raise DomainError(f"e outside (0,1): {e}")
    if z <= 0:
        raise DomainError(f"z must be positive: {z}")
    core = z * z * p * (1 - p)
    n = population * core / (e * e * (population - 1) + core)
    return min(population, math.ceil(n))


def balanced_sample(
    positives: list,
    negatives: list,
    target_size: int,
    ratio: float,
    rng: random.Random,
) -> tuple[list, list, bool]:
    """Draw a positives:negatives ~ ratio:1 sample of up to ``target_size``.

    Returns ``(picked_pos, picked_neg, exhausted)`` where ``exhausted`` flags
    that the positive pool ran out before the target was reached.
    """
    if target_size <= 0 or ratio <= 0:
        raise DomainError("target size and ratio must be positive")
    want_pos = round(target_size * ratio / (1 + ratio))
    n_pos = min(len(positives), want_pos)
    n_neg = min(len(negatives), min(target_size - n_pos, round(n_pos / ratio)))
    exhausted = n_pos < want_pos
    picked_pos = rng.sample(positives, n_pos) if n_pos else []
    picked_neg = rng.sample(negatives, n_neg) if n_neg else []
    return picked_pos, picked_neg, exhausted
