from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from secrev.classify import ClassificationInstance, NEGATIVE, POSITIVE
from secrev.errors import DomainError, EmptyEvalSet
from secrev.loopmetrics import (
    Metrics,
    balanced_sample,
    cochran_sample_size,
    dynamic_f1,
    evaluate,
    f1_score,
    penalty_weight,
    should_stop,
)


# --- Cochran ---------------------------------------------------------------------


def cochran_oracle(n_pop, z, p, e):
    """Direct evaluation of the finite-population formula, kept separate from
    the implementation under test."""
    core = z * z * p * (1 - p)
    return math.ceil(n_pop * core / (e * e * (n_pop - 1) + core))


def test_cochran_population_of_one():
    assert cochran_sample_size(1, 1.96, 0.5, 0.05) == 1


def test_cochran_batch_size_fixed_point():
    assert cochran_sample_size(3776, 1.96, 0.5, 0.05) == 349
    assert cochran_sample_size(3776) == cochran_oracle(3776, 1.96, 0.5, 0.05)


def test_cochran_infinite_limit():
    assert cochran_sample_size(10**9, 1.96, 0.5, 0.05) == 385
    assert math.isclose(1.96**2 * 0.25 / 0.05**2, 384.16)


def test_cochran_domain_errors():
    for bad in (dict(p=0.0), dict(p=1.0), dict(e=0.0), dict(e=1.0), dict(z=0.0)):
        with pytest.raises(DomainError):
            cochran_sample_size(100, **{"z": 1.96, "p": 0.5, "e": 0.05, **bad})
    with pytest.raises(DomainError):
        cochran_sample_size(0)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=1, max_value=10**7))
def test_cochran_bounded_and_monotone(n):
    s = cochran_sample_size(n)
    assert 1 <= s <= n
    assert s <= cochran_sample_size(n + 1)


# --- dynamic F1 --------------------------------------------------------------------


def test_dynamic_f1_perfect():
    assert dynamic_f1(1.0, 1.0, 2.0, 1.0, 1.0) == pytest.approx(1.0)


def test_dynamic_f1_zero_recall():
    assert dynamic_f1(1.0, 0.0, 2.0, 1.0, 1.0) == 0.0


def test_dynamic_f1_table_row_inputs():
    assert dynamic_f1(0.9275, 0.4238, 2.0, 1.0, 1.0) == pytest.approx(0.6643, abs=1e-4)


def test_dynamic_f1_reduces_to_f1_at_alpha_one():
    for i in range(0, 101, 7):
        for j in range(0, 101, 7):
            p, r = i / 100, j / 100
            assert abs(dynamic_f1(p, r, 1.0, 1.0, 1.0) - f1_score(p, r)) < 1e-12


def test_dynamic_f1_domain_errors():
    with pytest.raises(DomainError):
        dynamic_f1(1.2, 0.5)
    with pytest.raises(DomainError):
        dynamic_f1(0.5, 0.5, alpha=0)
    with pytest.raises(DomainError):
        dynamic_f1(0.5, 0.5, w_p=0)


def test_penalty_weight():
    assert penalty_weight(0.95, 0.9) == 1.0
    assert penalty_weight(0.45, 0.9) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        penalty_weight(0.5, 0.0)


# --- evaluate ------------------------------------------------------------------------


def eval_set(pairs):
    return [(ClassificationInstance(f"i{k}", "", text), label)
            for k, (text, label) in enumerate(pairs)]


def test_evaluate_all_correct():
    data = eval_set([("sec", POSITIVE), ("plain", NEGATIVE), ("sec2", POSITIVE)])
    metrics = evaluate(lambda i: POSITIVE if "sec" in i.first_reviewer_comment else NEGATIVE, data)
    assert (metrics.accuracy, metrics.precision, metrics.recall, metrics.f1) == (1, 1, 1, 1)


def test_evaluate_f1_fixed_point():
    # confusion counts chosen to land exactly on P=0.9275, R=0.4238:
    # tp=3931, fp=307, fn=5345 (scaled integers)
    tp, fp, fn, tn = 9275 * 4238, 725 * 4238, 9275 * 5762, 10_000
    data = []
    predictions = {}
    k = 0
    for count, predicted, truth in ((tp, POSITIVE, POSITIVE), (fp, POSITIVE, NEGATIVE),
                                    (fn, NEGATIVE, POSITIVE), (tn, NEGATIVE, NEGATIVE)):
        for _ in range(count // 4238):
            predictions[f"i{k}"] = predicted
            data.append((ClassificationInstance(f"i{k}", "", ""), truth))
            k += 1
    metrics = evaluate(lambda i: predictions[i.id], data)
    assert metrics.precision == pytest.approx(0.9275, abs=2e-4)
    assert metrics.recall == pytest.approx(0.4238, abs=2e-4)
    assert metrics.f1 == pytest.approx(0.5818, abs=1e-4)


def test_evaluate_degenerate_precision_flagged():
    data = eval_set([("a", POSITIVE), ("b", NEGATIVE)])
    metrics = evaluate(lambda i: NEGATIVE, data)
    assert metrics.recall == 0.0
    assert metrics.precision == 0.0
    assert metrics.degenerate_precision


def test_evaluate_empty_set():
    with pytest.raises(EmptyEvalSet):
        evaluate(lambda i: POSITIVE, [])


# --- stopping ------------------------------------------------------------------------


def m(p, r):
    return Metrics(accuracy=0.9, precision=p, recall=r, f1=f1_score(p, r))


def test_should_stop_thresholds_met():
    decision = should_stop(m(0.93, 0.43), 0.90, 0.40, iteration=2, max_iterations=15)
    assert decision.stop and decision.reason == "thresholds_met"


def test_should_stop_continue():
    decision = should_stop(m(0.99, 0.10), 0.90, 0.40, iteration=2, max_iterations=15)
    assert not decision.stop


def test_should_stop_budget():
    decision = should_stop(m(0.5, 0.1), 0.90, 0.40, iteration=15, max_iterations=15)
    assert decision.stop and decision.reason == "budget"


# --- balanced sampling -----------------------------------------------------------------


def test_balanced_sample_exact():
    rng = random.Random(0)
    pos, neg, exhausted = balanced_sample(list(range(100)), list(range(900)), 200, 1.0, rng)
    assert len(pos) == 100 and len(neg) == 100 and not exhausted


def test_balanced_sample_insufficient_positives():
    rng = random.Random(0)
    pos, neg, exhausted = balanced_sample(list(range(30)), list(range(900)), 200, 1.0, rng)
    assert len(pos) == 30 and len(neg) == 30 and exhausted
