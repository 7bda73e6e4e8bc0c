from __future__ import annotations

import random

import pytest

from secrev.classify import (
    ClassificationInstance,
    NEGATIVE,
    POSITIVE,
    Prediction,
    VotingScheme,
)
from secrev.errors import ConflictingLabel
from secrev.loop import (
    LabelLedger,
    LabeledInstance,
    LoopConfig,
    LoopState,
    PURPOSE_BINARY,
    PURPOSE_CONFIRM,
    generate_pseudo_labels,
    run_iteration,
)
from secrev.loopmetrics import cochran_sample_size
from secrev.store import CorpusStore


class ScriptedBackend:
    def __init__(self, backend_id, labeler):
        self.id = backend_id
        self.labeler = labeler

    def classify(self, instance):
        return Prediction(instance.id, self.id, self.labeler(instance))


def instances(n, prefix="i"):
    return [ClassificationInstance(f"{prefix}{k:04d}", "@@", f"comment {k}")
            for k in range(n)]


def truth_by_index(pool, positive_indices):
    ids = {inst.id for k, inst in enumerate(pool) if k in positive_indices}
    return {inst.id: (POSITIVE if inst.id in ids else NEGATIVE) for inst in pool}


# --- pseudo labels ------------------------------------------------------------------


def test_pseudo_labels_disagreeing_backends_yield_nothing():
    pool = instances(50)
    a = ScriptedBackend("a", lambda i: POSITIVE)
    b = ScriptedBackend("b", lambda i: NEGATIVE)
    expert = ScriptedBackend("expert", lambda i: POSITIVE)
    labeled, report = generate_pseudo_labels(pool, [a, b], expert, LoopConfig(seed=1),
                                             random.Random(1))
    assert labeled == []
    assert report.stage1_unanimous_positive == 0
    assert report.stage1_unanimous_negative == 0


def test_pseudo_labels_balanced_sampling():
    pool = instances(1000)
    truth = truth_by_index(pool, set(range(100)))  # 100 positives, 900 negatives
    backends = [ScriptedBackend(f"b{k}", lambda i: truth[i.id]) for k in range(3)]
    expert = ScriptedBackend("expert", lambda i: truth[i.id])
    cfg = LoopConfig(seed=2, bootstrap_size=200, bootstrap_ratio=1.0)
    labeled, report = generate_pseudo_labels(pool, backends, expert, cfg, random.Random(2))
    pos = [l for l in labeled if l.label == POSITIVE]
    neg = [l for l in labeled if l.label == NEGATIVE]
    assert len(pos) == 100 and len(neg) == 100
    assert not report.insufficient_positives
    assert all(l.source == "expert_validated" and l.iteration == 0 for l in labeled)


def test_pseudo_labels_expert_rejects_all_positives():
    pool = instances(300)
    truth = truth_by_index(pool, set(range(40)))
    backends = [ScriptedBackend(f"b{k}", lambda i: truth[i.id]) for k in range(3)]
    expert = ScriptedBackend("expert", lambda i: NEGATIVE)  # refuses every positive
    cfg = LoopConfig(seed=3, bootstrap_size=100)
    labeled, report = generate_pseudo_labels(pool, backends, expert, cfg, random.Random(3))
    assert all(l.label == NEGATIVE for l in labeled)
    assert report.stage2_confirmed_positive == 0
    assert report.insufficient_positives


def test_pseudo_labels_needs_two_lightweights_and_distinct_expert():
    pool = instances(5)
    b = ScriptedBackend("b", lambda i: POSITIVE)
    with pytest.raises(ValueError):
        generate_pseudo_labels(pool, [b], b, LoopConfig(), random.Random(0))
    c = ScriptedBackend("b", lambda i: POSITIVE)  # same id as a lightweight
    with pytest.raises(ValueError):
        generate_pseudo_labels(pool, [b, c], c, LoopConfig(), random.Random(0))


# --- ledger ---------------------------------------------------------------------------


def test_ledger_append_only_and_conflicts():
    ledger = LabelLedger()
    assert ledger.add(LabeledInstance("a", POSITIVE, "expert_validated", 0))
    # human overrides machine
    assert ledger.add(LabeledInstance("a", NEGATIVE, "human", 1))
    # machine never overrides human
    assert not ledger.add(LabeledInstance("a", POSITIVE, "expert_validated", 2))
    assert ledger.items()[0].label == NEGATIVE
    # duplicate human relabel with the same label is a no-op, conflicting raises
    assert not ledger.add(LabeledInstance("a", NEGATIVE, "human", 3))
    with pytest.raises(ConflictingLabel):
        ledger.add(LabeledInstance("a", POSITIVE, "human", 3))


# --- run_iteration ---------------------------------------------------------------------


class DirectQueue:
    """In-process queue answering from a truth table; records submissions."""

    def __init__(self, truth):
        self.truth = truth
        self.submitted = {PURPOSE_BINARY: [], PURPOSE_CONFIRM: []}
        self._tasks = {}
        self._next = 1

    def submit(self, instance_ids, purpose):
        self.submitted[purpose].extend(instance_ids)
        ids = []
        for instance_id in instance_ids:
            self._tasks[self._next] = instance_id
            ids.append(self._next)
            self._next += 1
        return ids

    def wait_results(self, task_ids):
        return {self._tasks[t]: self.truth[self._tasks[t]] for t in task_ids}


def validation_set(truth, pool):
    return [(inst, truth[inst.id]) for inst in pool[:50]]


def test_iteration_all_unanimous_negative():
    batch = instances(200)
    truth = {i.id: NEGATIVE for i in batch}
    backends = [ScriptedBackend(f"b{k}", lambda i: NEGATIVE) for k in range(5)]
    queue = DirectQueue(truth)
    ledger = LabelLedger()
    report = run_iteration(
        iteration=1, batch=batch, backends=backends, scheme=VotingScheme(4, 5),
        queue=queue, cfg=LoopConfig(seed=1), ledger=ledger, rng=random.Random(1),
        validation=[(batch[0], NEGATIVE), (batch[1], NEGATIVE)],
        retrain=lambda led: (_ for _ in ()).throw(AssertionError("no retrain expected")),
    )
    assert (report.bucket_all_positive, report.bucket_mixed,
            report.bucket_all_negative) == (0, 0, 200)
    assert report.sampled_for_annotation == 0
    assert report.new_human_labels == 0
    assert report.discarded == 200
    assert queue.submitted[PURPOSE_BINARY] == []


def test_iteration_cochran_sampling_of_mixed():
    batch = instances(1000)
    mixed_ids = {i.id for i in batch[:120]}
    truth = {i.id: NEGATIVE for i in batch}

    def make_labeler(k):
        # backends disagree exactly on the mixed 120
        return lambda i: (POSITIVE if (i.id in mixed_ids and k % 2 == 0) else NEGATIVE)

    backends = [ScriptedBackend(f"b{k}", make_labeler(k)) for k in range(5)]
    queue = DirectQueue(truth)
    ledger = LabelLedger()
    report = run_iteration(
        iteration=1, batch=batch, backends=backends, scheme=VotingScheme(4, 5),
        queue=queue, cfg=LoopConfig(seed=4), ledger=ledger, rng=random.Random(4),
        validation=[(batch[-1], NEGATIVE), (batch[-2], NEGATIVE)],
    )
    expected = cochran_sample_size(120, 1.96, 0.5, 0.05)  # the formula oracle fixes it
    assert report.bucket_mixed == 120
    assert len(queue.submitted[PURPOSE_BINARY]) == expected
    assert report.sampled_for_annotation == expected  # no AllPositive in this batch
    assert report.deferred == 120 - expected
    assert report.bucket_all_positive + report.bucket_mixed + report.bucket_all_negative \
        == len(batch)


def test_iteration_confirms_and_rejects_all_positives():
    batch = instances(50)
    truth = {i.id: (POSITIVE if k < 5 else NEGATIVE) for k, i in enumerate(batch)}
    flagged = {i.id for k, i in enumerate(batch) if k < 8}  # 5 true + 3 false positives
    backends = [ScriptedBackend(f"b{k}", lambda i: POSITIVE if i.id in flagged else NEGATIVE)
                for k in range(5)]
    queue = DirectQueue(truth)
    ledger = LabelLedger()
    report = run_iteration(
        iteration=2, batch=batch, backends=backends, scheme=VotingScheme(4, 5),
        queue=queue, cfg=LoopConfig(seed=5), ledger=ledger, rng=random.Random(5),
        validation=[(batch[0], POSITIVE), (batch[-1], NEGATIVE)],
    )
    assert report.bucket_all_positive == 8
    assert report.confirmed_positives == 5
    assert report.rejected_positives == 3
    # rejected positives entered the ledger as human negatives
    rejected = [l for l in ledger.items() if l.label == NEGATIVE]
    assert len(rejected) == 3 and all(l.source == "human" for l in rejected)
    assert all(l.iteration == 2 for l in ledger.items())


def test_iteration_deterministic_replay():
    batch = instances(400)
    truth = {i.id: (POSITIVE if k % 29 == 0 else NEGATIVE) for k, i in enumerate(batch)}

    def noisy(k):
        return lambda i: POSITIVE if (hash((k, i.id)) % 5 == 0 or truth[i.id] == POSITIVE) else NEGATIVE

    def run_once():
        backends = [ScriptedBackend(f"b{k}", noisy(k)) for k in range(5)]
        queue = DirectQueue(truth)
        ledger = LabelLedger()
        return run_iteration(
            iteration=1, batch=batch, backends=backends, scheme=VotingScheme(4, 5),
            queue=queue, cfg=LoopConfig(seed=6), ledger=ledger, rng=random.Random(6),
            validation=[(batch[0], truth[batch[0].id]), (batch[1], truth[batch[1].id])],
        ).as_dict()

    assert run_once() == run_once()


# --- state persistence -------------------------------------------------------------------


def test_loop_state_round_trip():
    store = CorpusStore.in_memory()
    try:
        state = LoopState(config=LoopConfig(seed=11, batch_size=100))
        state.ledger.add(LabeledInstance("x", POSITIVE, "human", 1))
        state.consumed_ids = ["x", "y"]
        rng = state.make_rng()
        rng.random()
        state.capture_rng(rng)
        state.iteration = 3
        state.reports.append({"iteration": 3})
        state.save(store)

        loaded = LoopState.load(store)
        assert loaded.iteration == 3
        assert loaded.config == state.config
        assert loaded.consumed_ids == ["x", "y"]
        assert loaded.ledger.items() == state.ledger.items()
        # rng continues identically
        assert loaded.make_rng().random() == rng.random()
    finally:
        store.close()


def test_loop_config_validation():
    with pytest.raises(Exception):
        LoopConfig(e=0.0)
    with pytest.raises(Exception):
        LoopConfig(precision_threshold=0.0)
    cfg = LoopConfig()
    assert cfg.batch_size == 3776
    assert cfg.n_batches_train == 15
    assert cfg.alpha == 2.0
    assert cfg.z == 1.96 and cfg.p == 0.5 and cfg.e == 0.05
    assert cfg.bootstrap_size == 3000 and cfg.bootstrap_ratio == 1.0
