"""Synthetic end-to-end scenario: corpus, noisy scripted backends, scripted
annotators, the full labeling loop, export, and a precision audit.

Everything is driven by one seed and a logical clock, so two runs with the
same seed produce byte-identical transcripts.  The scripted annotators vote
the planted ground truth over the real annotation HTTP API, which makes the
simulation exercise the same surface human annotators would use.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

from .annotation import AnnotationService
from .annotation_http import AnnotationClient, AnnotationServer
from .classify import (
    NEGATIVE,
    POSITIVE,
    ClassificationInstance,
    Prediction,
    VotingScheme,
    instance_from_quintuple,
    vote,
)
from .extract import extract_all
from .loop import (
    IterationReport,
    LabelLedger,
    LoopConfig,
    PURPOSE_BINARY,
    PURPOSE_CONFIRM,
    generate_pseudo_labels,
    run_iteration,
)
from .locmodel import LocalTextClassifier, TrainConfig
from .stats import distribution_report, precision_audit
from .store import (
    Commit,
    Comment,
    CorpusStore,
    PullRequest,
    Repository,
    ReviewThread,
    SOURCE_ENSEMBLE,
    SOURCE_HUMAN,
)
from .diffs import compute_diff

LANG_CYCLE = ("C", "C++", "C#", "Java", "Go")

SECURITY_PHRASES = (
    "this can overflow the buffer when the input is larger than the array",
    "possible use after free if the callback runs after close",
    "race condition on the shared counter without holding the lock",
    "integer overflow when multiplying these two sizes",
    "null pointer dereference when the lookup misses",
    "this query is vulnerable to sql injection",
    "command injection through the unquoted shell argument",
    "path traversal lets callers escape the root directory",
    "format string vulnerability because user input reaches the format",
    "missing bounds check before indexing into the slice",
    "the password is stored in plaintext here",
    "hardcoded secret should come from the environment",
    "weak hash md5 is not collision resistant",
    "insecure random source for the session token",
    "privilege escalation because the check happens after the write",
    "authentication bypass when the header is empty",
    "resource leak the file handle is never closed on error",
    "double free when both branches release the pointer",
    "memory leak the allocation escapes on the early return",
    "unvalidated input flows straight into the parser",
    "deserialization of untrusted data is dangerous here",
    "uninitialized memory is read when the flag is false",
    "dangling pointer survives the container reallocation",
    "sensitive information is logged at info level",
    "denial of service the loop never terminates on crafted input",
    "the temp file is world writable before the rename",
)

RARE_SECURITY_TOKENS = (
    "toctou", "redos", "xxe", "ssrf", "csrf", "clickjacking", "typosquatting",
    "smuggling",
)

NEUTRAL_PHRASES = (
    "please rename this variable to something clearer",
    "typo in the comment above",
    "extract this block into a helper function",
    "this import is unused now",
    "prefer a constant for this magic number",
    "wrap this line it exceeds the column limit",
    "the docstring is out of date",
    "consider using the builtin helper here",
    "this test could use a parametrized fixture",
    "move this to the utilities module",
    "indentation is off by one level",
    "missing a trailing comma for cleaner diffs",
    "the log message has a stray period",
    "this condition reads better inverted",
    "dead code left over from the refactor",
    "alphabetize the imports please",
    "add a changelog entry for this",
    "this getter could be a property",
    "shorten the function name",
    "duplicate of the branch above consider merging",
    "let us cache this lookup outside the loop",
    "the error message should mention the file name",
    "use early return to flatten this nesting",
    "this comment repeats the code",
    "inline this single-use variable",
    "the benchmark numbers belong in the PR description",
    "swap the argument order to match the other overloads",
    "this loop can be a comprehension",
    "the default argument is mutable move it inside",
    "missing unit test for the empty case",
    "update the example in the readme",
    "prefer the narrower type for this field",
    "group these related constants in an enum",
    "the fixture name shadows the module",
    "this method is long consider splitting it",
    "capitalize the first word of the comment",
)

# negatives that share surface tokens with the security vocabulary
CONFUSER_PHRASES = (
    "the overflow menu icon is misaligned on small screens",
    "feel free to drop this parameter it is unused",
    "the race in the progress bar animation looks glitchy",
    "this lock icon asset needs a retina version",
    "double the timeout in this flaky test",
)

FILLER = (
    "also note the style guide", "see the earlier discussion", "minor point",
    "while you are here", "not blocking", "just a thought", "for consistency",
    "as discussed offline",
)

DEFAULT_LIGHTWEIGHT_FLIPS = (0.06, 0.08, 0.10, 0.12, 0.14)


@dataclass
class SimulateConfig:
    seed: int = 7
    corpus_threads: int = 5200
    prevalence: float = 0.04
    batch_size: int = 600
    iterations: int = 3
    bootstrap_pool: int = 2000
    bootstrap_size: int = 200
    validation_size: int = 400
    expert_flip: float = 0.02
    audit_target: int = 447
    required_votes: int = 2

    def scaled(self) -> "SimulateConfig":
        """Clamp split sizes so small corpora still exercise every stage."""
        from dataclasses import replace

        n = self.corpus_threads
        validation = min(self.validation_size, max(20, n // 6))
        pool = min(self.bootstrap_pool, max(40, (n - validation) // 2))
        bootstrap = min(self.bootstrap_size, max(10, pool // 4))
        per_batch = max(10, (n - validation - pool) // max(1, self.iterations))
        batch = min(self.batch_size, per_batch)
        return replace(self, validation_size=validation, bootstrap_pool=pool,
                       bootstrap_size=bootstrap, batch_size=batch)

    def loop_config(self) -> LoopConfig:
        return LoopConfig(
            batch_size=self.batch_size,
            alpha=2.0,
            z=1.96,
            p=0.5,
            e=0.05,
            bootstrap_size=self.bootstrap_size,
            bootstrap_ratio=1.0,
            seed=self.seed,
            max_iterations=self.iterations,
        )


# --- synthetic corpus ---------------------------------------------------------------


def _stamp(minute: int) -> str:
    day, rem = divmod(minute, 1440)
    hour, mins = divmod(rem, 60)
    return f"2024-01-{(day % 27) + 1:02d}T{hour:02d}:{mins:02d}:00Z"


def _make_comment_body(rng: random.Random, positive: bool) -> str:
    if positive:
        if rng.random() < 0.15:
            body = f"potential {rng.choice(RARE_SECURITY_TOKENS)} issue in this handler"
        else:
            body = rng.choice(SECURITY_PHRASES)
    else:
        if rng.random() < 0.03:
            body = rng.choice(CONFUSER_PHRASES)
        else:
            body = rng.choice(NEUTRAL_PHRASES)
    # filler attaches at the same rate for both classes: it carries no signal
    if rng.random() < 0.3:
        body += ", " + rng.choice(FILLER)
    return body


def build_synthetic_corpus(
    store: CorpusStore, cfg: SimulateConfig
) -> tuple[dict[str, str], dict]:
    """Populate the store with PRs, commits, diffs, and review threads.

    Returns (truth, census): ``truth`` maps quintuple id -> planted label.
    """
    rng = random.Random(cfg.seed * 1_000_003 + 1)
    repo_ids = {}
    repos = []
    for i, lang in enumerate(LANG_CYCLE):
        for j in range(2):
            name = f"org/{lang.lower().replace('+', 'p').replace('#', 's')}-proj-{j}"
            repo = Repository(
                id=None, full_name=name, language=lang, stars=12_000 - 100 * i - j,
                pull_request_count=1_500, license_id="MIT",
                crawled_at="2024-01-01T00:00:00Z",
            )
            repos.append(repo)
            repo_ids[name] = store.upsert_repository(repo)

    truth: dict[str, str] = {}
    n_pos = 0
    with store.transaction():
        for idx in range(cfg.corpus_threads):
            repo = repos[idx % len(repos)]
            rid = repo_ids[repo.full_name]
            number = idx // len(repos) + 1
            positive = rng.random() < cfg.prevalence
            body = _make_comment_body(rng, positive)
            n_pos += int(positive)

            pr_id = store.upsert_pull_request(PullRequest(
                id=None, repo_id=rid, number=number, opened_at=_stamp(idx),
            ))
            path = f"src/module_{idx % 17}.c"
            old = "".join(f"int field_{k} = {k};\n" for k in range(10))
            new_lines = old.split("\n")
            new_lines[4] = f"int field_4 = compute({idx});"
            new_lines[5] = f"int field_5 = adjust({idx});"
            new = "\n".join(new_lines)
            store.put_base_file(pr_id, path, old.encode())
            diff = compute_diff(old, new, path)
            sha = hashlib.sha1(f"{repo.full_name}#{number}".encode()).hexdigest()[:12]
            store.upsert_commit(Commit(
                id=None, pr_id=pr_id, sha=sha, committed_at=_stamp(idx) , diffs=(diff,),
            ))
            comment_at = _stamp(idx + 1)
            comments = [Comment("reviewer", body, comment_at)]
            if rng.random() < 0.25:
                comments.append(Comment("developer", "fixed in the next commit",
                                        _stamp(idx + 2)))
            anchor_lo, anchor_hi = diff.hunks[0].new_span()
            key = f"t{idx}"
            store.upsert_thread(ReviewThread(
                id=None, pr_id=pr_id, external_key=key, anchor_path=path,
                anchor_lo=anchor_lo, anchor_hi=anchor_hi, anchor_sha=sha,
                comments=tuple(comments),
            ))
            if rng.random() < 0.15:
                follow_lines = new.split("\n")
                follow_lines[5] = f"int field_5 = clamp_adjust({idx});"
                follow = "\n".join(follow_lines)
                store.upsert_commit(Commit(
                    id=None, pr_id=pr_id, sha="f" + sha[:11],
                    committed_at=_stamp(idx + 3),
                    diffs=(compute_diff(new, follow, path),),
                ))
            truth[f"{repo.full_name}#{number}#{key}"] = POSITIVE if positive else NEGATIVE

    census = {"threads": cfg.corpus_threads, "planted_positives": n_pos,
              "prevalence": n_pos / cfg.corpus_threads}
    return truth, census


# --- scripted participants -------------------------------------------------------------


def _flip(salt: str, instance_id: str, rate: float) -> bool:
    digest = hashlib.sha256(f"{salt}:{instance_id}".encode()).digest()
    return (int.from_bytes(digest[:8], "big") / 2**64) < rate


class ScriptedNoisyBackend:
    """Ground truth XOR a deterministic per-instance flip."""

    def __init__(self, backend_id: str, truth: dict[str, str], flip_rate: float):
        self.id = backend_id
        self.truth = truth
        self.flip_rate = flip_rate

    def classify(self, instance: ClassificationInstance) -> Prediction:
        label = self.truth[instance.id]
        if _flip(self.id, instance.id, self.flip_rate):
            label = POSITIVE if label == NEGATIVE else NEGATIVE
        return Prediction(instance.id, self.id, label)


class ScriptedHttpAnnotators:
    """Annotators that vote the planted truth through the HTTP API."""

    def __init__(self, client: AnnotationClient, truth: dict[str, str],
                 annotator_ids=("ann-1", "ann-2")):
        self.client = client
        self.truth = truth
        self.annotator_ids = tuple(annotator_ids)

    def pump(self, purposes=(PURPOSE_BINARY, PURPOSE_CONFIRM, "precision_audit")) -> int:
        """Claim and vote until every queue is drained; returns votes cast."""
        cast = 0
        for purpose in purposes:
            progress = True
            while progress:
                progress = False
                for annotator in self.annotator_ids:
                    task = self.client.claim_next(annotator, purpose)
                    if task is None:
                        continue
                    label = self.truth[task["instance_id"]]
                    self.client.vote(task["id"], annotator, label)
                    cast += 1
                    progress = True
        return cast


class PumpingQueue:
    """Annotation queue whose wait loop drives the scripted annotators."""

    def __init__(self, service: AnnotationService, pump, required_votes: int = 2):
        self.service = service
        self.pump = pump
        self.required_votes = required_votes

    def submit(self, instance_ids, purpose):
        return self.service.enqueue(instance_ids, purpose, self.required_votes)

    def wait_results(self, task_ids):
        for _ in range(1000):
            resolutions = self.service.resolutions(task_ids)
            if len(resolutions) >= len(set(task_ids)):
                break
            self.pump()
        return self.service.resolutions(task_ids)


# --- the simulation ---------------------------------------------------------------------


def _train_members(
    members: list[LocalTextClassifier],
    ledger_items,
    instances_by_id: dict[str, ClassificationInstance],
) -> None:
    pairs = [
        (instances_by_id[l.instance_id], l.label)
        for l in ledger_items
        if l.instance_id in instances_by_id
    ]
    texts = [p[0] for p in pairs]
    labels = [p[1] for p in pairs]
    for member in members:
        member.train(texts, labels)


def run_simulation(cfg: SimulateConfig, out_dir: str | Path, store_path: str | None = None):
    """Run the full scenario; writes transcript.json and dataset.jsonl.

    Returns the transcript dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg.scaled()
    store = CorpusStore.open(store_path or ":memory:")
    transcript: dict = {"config": cfg.__dict__.copy()}

    truth, corpus_census = build_synthetic_corpus(store, cfg)
    extraction = extract_all(store)
    transcript["corpus"] = {**corpus_census, **extraction}

    quintuples = store.quintuples()
    instances = [instance_from_quintuple(q) for q in quintuples]
    instances_by_id = {i.id: i for i in instances}

    rng = random.Random(cfg.seed)
    shuffled = sorted(instances, key=lambda i: i.id)
    rng.shuffle(shuffled)
    validation = [(i, truth[i.id]) for i in shuffled[: cfg.validation_size]]
    remainder = shuffled[cfg.validation_size:]
    bootstrap_pool = remainder[: cfg.bootstrap_pool]
    batch_stream = remainder[cfg.bootstrap_pool:]

    lightweights = [
        ScriptedNoisyBackend(f"lw-{k}", truth, rate)
        for k, rate in enumerate(DEFAULT_LIGHTWEIGHT_FLIPS)
    ]
    expert = ScriptedNoisyBackend("expert", truth, cfg.expert_flip)

    loop_cfg = cfg.loop_config()
    labeled, pseudo_report = generate_pseudo_labels(
        bootstrap_pool, lightweights, expert, loop_cfg, rng
    )
    transcript["bootstrap"] = pseudo_report.as_dict()

    ledger = LabelLedger()
    for item in labeled:
        ledger.add(item)

    members = [
        LocalTextClassifier(f"member-{k}", TrainConfig(seed=cfg.seed * 31 + k))
        for k in range(5)
    ]
    _train_members(members, ledger.items(), instances_by_id)

    service = AnnotationService(store)
    server = AnnotationServer(service)
    server.start()
    try:
        client = AnnotationClient(server.address)
        annotators = ScriptedHttpAnnotators(client, truth)
        queue = PumpingQueue(service, annotators.pump, cfg.required_votes)
        scheme = VotingScheme(4, 5)

        # fixed batch schedule (the dataset-construction protocol trains over a
        # preset number of batches); per-iteration stop decisions stay in the
        # reports as advisory signals
        reports: list[IterationReport] = []
        cursor = 0
        for iteration in range(1, cfg.iterations + 1):
            batch = batch_stream[cursor: cursor + cfg.batch_size]
            cursor += cfg.batch_size
            if not batch:
                break
            report = run_iteration(
                iteration=iteration,
                batch=batch,
                backends=members,
                scheme=scheme,
                queue=queue,
                cfg=loop_cfg,
                ledger=ledger,
                rng=rng,
                validation=validation,
                retrain=lambda led: _train_members(members, led.items(), instances_by_id),
            )
            reports.append(report)
        transcript["iterations"] = [r.as_dict() for r in reports]

        # final sweep: human labels win, the ensemble labels the rest
        with store.transaction():
            for item in ledger.items():
                if item.source == SOURCE_HUMAN:
                    store.set_label(item.instance_id, item.label, SOURCE_HUMAN,
                                    item.iteration)
            for inst in instances:
                if inst.id in ledger:
                    continue
                label = vote([m.classify(inst) for m in members], scheme)
                if label == POSITIVE:
                    store.set_label(inst.id, POSITIVE, SOURCE_ENSEMBLE)

        dataset_path = out / "dataset.jsonl"
        exported = store.export_dataset(dataset_path, lambda q: q.label == POSITIVE)

        positives = [q.id for q in store.quintuples("label='positive'")]
        if positives:
            audit_n = min(cfg.audit_target, len(positives))
            audit = precision_audit(
                positives, audit_n, cfg.seed,
                enqueue=lambda ids, purpose: queue.submit(ids, purpose),
                wait_results=queue.wait_results,
            ).as_dict()
        else:
            audit = None  # nothing labeled positive at this scale
        kappa_stats = client.kappa(PURPOSE_BINARY)
        transcript["final"] = {
            "exported": exported,
            "audit": audit,
            "kappa": kappa_stats,
            "training_labels": len(ledger),
        }
        transcript["distribution"] = distribution_report(store).as_dict()
    finally:
        server.stop()
        store.close()

    transcript_path = out / "transcript.json"
    with open(transcript_path, "w", encoding="utf-8") as fh:
        json.dump(transcript, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return transcript
