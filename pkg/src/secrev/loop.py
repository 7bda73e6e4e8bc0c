"""Pseudo-label bootstrapping and the iterative labeling loop.

The loop drives one seeded random stream for every sampling site, so a run
is a pure function of (store contents, config, scripted backend behavior,
annotation outcomes).  Human labels are append-only: once an instance has a
human label it is never relabeled, and a conflicting relabel attempt is an
error rather than a silent overwrite.

Per iteration: a fresh batch is triaged by the ensemble; instances with
mixed predictions are subsampled (Cochran) for human labeling; unanimous
positives go to human confirmation (rejections become human-labeled
negatives); unanimous negatives are discarded.  New human labels extend the
training set and the local backends are retrained before the next batch.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .classify import (
    ALL_NEGATIVE,
    ALL_POSITIVE,
    MIXED,
    NEGATIVE,
    POSITIVE,
    Backend,
    ClassificationInstance,
    VotingScheme,
    triage,
    vote,
)
from .errors import ConflictingLabel, DomainError, QueueUnavailable
from .loopmetrics import (
    balanced_sample,
    cochran_sample_size,
    dynamic_f1,
    evaluate,
    penalty_weight,
    should_stop,
)

LOOP_STATE_VERSION = 1

PURPOSE_BINARY = "binary_label"
PURPOSE_CONFIRM = "positive_confirmation"


@dataclass(frozen=True)
class LabeledInstance:
    instance_id: str
    label: str
    source: str  # pseudo_lightweight | expert_validated | human
    iteration: int = 0

    def __post_init__(self):
        if self.label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad label {self.label!r}")
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")


@dataclass(frozen=True)
class LoopConfig:
    batch_size: int = 3776
    n_batches_train: int = 15
    alpha: float = 2.0
    z: float = 1.96
    p: float = 0.5
    e: float = 0.05
    precision_threshold: float = 0.90
    recall_threshold: float = 0.40
    bootstrap_size: int = 3000
    bootstrap_ratio: float = 1.0
    seed: int = 0
    max_iterations: int = 15

    def __post_init__(self):
        if not 0 < self.e < 1 or not 0 < self.p < 1:
            raise DomainError("p and e must lie in (0,1)")
        for name in ("precision_threshold", "recall_threshold"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DomainError(f"{name} outside (0,1]: {v}")
        if self.batch_size <= 0 or self.bootstrap_size <= 0:
            raise DomainError("sizes must be positive")
        if self.alpha <= 0 or self.bootstrap_ratio <= 0:
            raise DomainError("alpha and bootstrap_ratio must be positive")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "LoopConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class AnnotationQueue(Protocol):
    """What the loop needs from the annotation side."""

    def submit(self, instance_ids: Sequence[str], purpose: str) -> list[int]: ...

    def wait_results(self, task_ids: Sequence[int]) -> dict[str, str]:
        """Blocks until all tasks resolve; returns instance_id -> final label."""


# --- pseudo-label generation ------------------------------------------------------


@dataclass
class PseudoLabelReport:
    pool_size: int
    stage1_unanimous_positive: int
    stage1_unanimous_negative: int
    stage2_confirmed_positive: int
    stage2_confirmed_negative: int
    sampled_positive: int
    sampled_negative: int
    insufficient_positives: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def generate_pseudo_labels(
    pool: Sequence[ClassificationInstance],
    lightweight: Sequence[Backend],
    expert: Backend,
    cfg: LoopConfig,
    rng: random.Random,
) -> tuple[list[LabeledInstance], PseudoLabelReport]:
    """Two-stage bootstrap labeling.

    Stage 1 keeps instances all lightweight backends agree on; stage 2 keeps
    those whose unanimous label the expert confirms.  The survivors are
    balanced-sampled toward ``bootstrap_ratio`` up to ``bootstrap_size``.
    """
    if len(lightweight) < 2:
        raise ValueError("need at least two lightweight backends")
    if any(b.id == expert.id for b in lightweight):
        raise ValueError("expert must be distinct from the lightweight set")

    stage1: dict[str, tuple[ClassificationInstance, str]] = {}
    s1_pos = s1_neg = 0
    for inst in pool:
        labels = {b.classify(inst).label for b in lightweight}
        if len(labels) != 1:
            continue
        label = labels.pop()
        stage1[inst.id] = (inst, label)
        if label == POSITIVE:
            s1_pos += 1
        else:
            s1_neg += 1

    confirmed_pos: list[ClassificationInstance] = []
    confirmed_neg: list[ClassificationInstance] = []
    for inst, label in stage1.values():
        if expert.classify(inst).label != label:
            continue  # expert verdict wins: unconfirmed instances are dropped
        (confirmed_pos if label == POSITIVE else confirmed_neg).append(inst)

    picked_pos, picked_neg, exhausted = balanced_sample(
        confirmed_pos, confirmed_neg, cfg.bootstrap_size, cfg.bootstrap_ratio, rng
    )
    labeled = [
        LabeledInstance(i.id, POSITIVE, "expert_validated", iteration=0)
        for i in picked_pos
    ] + [
        LabeledInstance(i.id, NEGATIVE, "expert_validated", iteration=0)
        for i in picked_neg
    ]
    labeled.sort(key=lambda l: l.instance_id)
    report = PseudoLabelReport(
        pool_size=len(pool),
        stage1_unanimous_positive=s1_pos,
        stage1_unanimous_negative=s1_neg,
        stage2_confirmed_positive=len(confirmed_pos),
        stage2_confirmed_negative=len(confirmed_neg),
        sampled_positive=len(picked_pos),
        sampled_negative=len(picked_neg),
        insufficient_positives=exhausted,
    )
    return labeled, report


# --- iteration engine ---------------------------------------------------------------


@dataclass
class IterationReport:
    iteration: int
    batch_size: int
    bucket_all_positive: int
    bucket_mixed: int
    bucket_all_negative: int
    sampled_for_annotation: int
    confirmed_positives: int
    rejected_positives: int
    new_human_labels: int
    discarded: int
    deferred: int
    backend_metrics: dict[str, dict]
    ensemble_metrics: dict
    dynamic_f1: float
    stop: bool
    stop_reason: str | None

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def render_table(self) -> str:
        rows = [
            ("iteration", self.iteration),
            ("batch size", self.batch_size),
            ("all-positive", self.bucket_all_positive),
            ("mixed", self.bucket_mixed),
            ("all-negative", self.bucket_all_negative),
            ("sampled for annotation", self.sampled_for_annotation),
            ("confirmed positives", self.confirmed_positives),
            ("new human labels", self.new_human_labels),
            ("discarded", self.discarded),
            ("deferred", self.deferred),
            ("ensemble precision", f"{self.ensemble_metrics['precision']:.4f}"),
            ("ensemble recall", f"{self.ensemble_metrics['recall']:.4f}"),
            ("dynamic F1", f"{self.dynamic_f1:.4f}"),
            ("stop", f"{self.stop} ({self.stop_reason})"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


class LabelLedger:
    """Append-only record of loop labels keyed by instance id."""

    def __init__(self):
        self._by_id: dict[str, LabeledInstance] = {}

    def add(self, item: LabeledInstance) -> bool:
        """Returns True if the label was newly recorded."""
        existing = self._by_id.get(item.instance_id)
        if existing is not None:
            if existing.source == "human" and existing.label != item.label:
                if item.source == "human":
                    raise ConflictingLabel(
                        f"{item.instance_id}: human-labeled {existing.label}, "
                        f"got {item.label}"
                    )
                return False
            if existing.source == "human":
                return False
            if item.source != "human":
                return False
        self._by_id[item.instance_id] = item
        return True

    def items(self) -> list[LabeledInstance]:
        return sorted(self._by_id.values(), key=lambda l: l.instance_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, instance_id: str) -> bool:
        return instance_id in self._by_id

    def as_dict_list(self) -> list[dict]:
        return [l.__dict__ for l in self.items()]

    @classmethod
    def from_dict_list(cls, rows: list[dict]) -> "LabelLedger":
        ledger = cls()
        for row in rows:
            ledger._by_id[row["instance_id"]] = LabeledInstance(**row)
        return ledger


def run_iteration(
    iteration: int,
    batch: Sequence[ClassificationInstance],
    backends: Sequence[Backend],
    scheme: VotingScheme,
    queue: AnnotationQueue,
    cfg: LoopConfig,
    ledger: LabelLedger,
    rng: random.Random,
    validation: Sequence[tuple[ClassificationInstance, str]],
    retrain=None,
) -> IterationReport:
    """Run one triage/annotate/retrain cycle over a batch.

    ``retrain`` is called with the updated ledger after queue resolution;
    the caller owns how backend training data is assembled from it.
    """
    by_bucket: dict[str, list[ClassificationInstance]] = {
        ALL_POSITIVE: [], MIXED: [], ALL_NEGATIVE: [],
    }
    for inst in batch:
        predictions = [b.classify(inst) for b in backends]
        by_bucket[triage(predictions)].append(inst)

    mixed = by_bucket[MIXED]
    sample_size = cochran_sample_size(len(mixed), cfg.z, cfg.p, cfg.e) if mixed else 0
    mixed_sample = sorted(rng.sample(mixed, sample_size), key=lambda i: i.id) if mixed else []
    deferred = len(mixed) - len(mixed_sample)

    try:
        binary_tasks = queue.submit([i.id for i in mixed_sample], PURPOSE_BINARY)
        confirm_tasks = queue.submit(
            [i.id for i in by_bucket[ALL_POSITIVE]], PURPOSE_CONFIRM
        )
        resolutions = queue.wait_results(binary_tasks + confirm_tasks)
    except QueueUnavailable:
        raise

    confirmed = rejected = new_labels = 0
    confirm_ids = {i.id for i in by_bucket[ALL_POSITIVE]}
    for instance_id, label in sorted(resolutions.items()):
        if instance_id in confirm_ids:
            if label == POSITIVE:
                confirmed += 1
            else:
                rejected += 1  # human-rejected positives enter as negatives
        if ledger.add(LabeledInstance(instance_id, label, "human", iteration)):
            new_labels += 1

    if retrain is not None and new_labels:
        retrain(ledger)

    ensemble = lambda inst: vote([b.classify(inst) for b in backends], scheme)
    ensemble_metrics = evaluate(ensemble, validation)
    backend_metrics = {
        b.id: evaluate(lambda i, _b=b: _b.classify(i).label, validation).as_dict()
        for b in backends
    }
    if ensemble_metrics.precision > 0 and ensemble_metrics.recall > 0:
        w_p = penalty_weight(ensemble_metrics.precision, cfg.precision_threshold)
        w_r = penalty_weight(ensemble_metrics.recall, cfg.recall_threshold)
        dyn = dynamic_f1(ensemble_metrics.precision, ensemble_metrics.recall, cfg.alpha, w_p, w_r)
    else:
        dyn = 0.0  # zero product regardless of weights
    decision = should_stop(
        ensemble_metrics, cfg.precision_threshold, cfg.recall_threshold,
        iteration, cfg.max_iterations,
    )

    return IterationReport(
        iteration=iteration,
        batch_size=len(batch),
        bucket_all_positive=len(by_bucket[ALL_POSITIVE]),
        bucket_mixed=len(mixed),
        bucket_all_negative=len(by_bucket[ALL_NEGATIVE]),
        sampled_for_annotation=len(mixed_sample) + len(by_bucket[ALL_POSITIVE]),
        confirmed_positives=confirmed,
        rejected_positives=rejected,
        new_human_labels=new_labels,
        discarded=len(by_bucket[ALL_NEGATIVE]),
        deferred=deferred,
        backend_metrics=backend_metrics,
        ensemble_metrics=ensemble_metrics.as_dict(),
        dynamic_f1=dyn,
        stop=decision.stop,
        stop_reason=decision.reason,
    )


# --- persisted loop state --------------------------------------------------------


@dataclass
class LoopState:
    config: LoopConfig
    iteration: int = 0
    ledger: LabelLedger = field(default_factory=LabelLedger)
    consumed_ids: list[str] = field(default_factory=list)
    rng_state: list | None = None
    reports: list[dict] = field(default_factory=list)
    bootstrap: dict | None = None
    stopped: bool = False
    stop_reason: str | None = None

    def make_rng(self) -> random.Random:
        rng = random.Random(self.config.seed)
        if self.rng_state is not None:
            rng.setstate(_untuple(self.rng_state))
        return rng

    def capture_rng(self, rng: random.Random) -> None:
        self.rng_state = _entuple(rng.getstate())

    def to_payload(self) -> dict:
        return {
            "config": self.config.as_dict(),
            "iteration": self.iteration,
            "labels": self.ledger.as_dict_list(),
            "consumed_ids": self.consumed_ids,
            "rng_state": self.rng_state,
            "reports": self.reports,
            "bootstrap": self.bootstrap,
            "stopped": self.stopped,
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "LoopState":
        return cls(
            config=LoopConfig.from_dict(payload["config"]),
            iteration=payload["iteration"],
            ledger=LabelLedger.from_dict_list(payload["labels"]),
            consumed_ids=list(payload["consumed_ids"]),
            rng_state=payload.get("rng_state"),
            reports=list(payload.get("reports", [])),
            bootstrap=payload.get("bootstrap"),
            stopped=payload.get("stopped", False),
            stop_reason=payload.get("stop_reason"),
        )

    def save(self, store) -> None:
        store.save_loop_state(LOOP_STATE_VERSION, self.to_payload())

    @classmethod
    def load(cls, store) -> "LoopState | None":
        found = store.load_loop_state()
        if found is None:
            return None
        version, payload = found
        if version != LOOP_STATE_VERSION:
            raise ValueError(f"unsupported loop state version {version}")
        return cls.from_payload(payload)


def _entuple(state):
    if isinstance(state, tuple):
        return ["__t__", [_entuple(x) for x in state]]
    return state


def _untuple(state):
    if isinstance(state, list) and len(state) == 2 and state[0] == "__t__":
        return tuple(_untuple(x) for x in state[1])
    return state
