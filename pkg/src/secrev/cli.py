"""Command-line entry point wiring all pipeline stages.

Subcommands: mine, extract, bootstrap, loop, serve, analyze, export, bench,
simulate.  Exit codes: 0 success, 2 usage, 3 configuration, 4 data/store,
5 network, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path

from . import __version__
from .errors import (
    ApiAuthFailure,
    ConfigError,
    EndpointUnreachable,
    HunkMismatch,
    IoFailure,
    PathUnknown,
    QueueUnavailable,
    RateLimited,
    SecrevError,
    StoreError,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NETWORK = 5

_EXIT_BY_ERROR = (
    (ConfigError, EXIT_CONFIG),
    ((HunkMismatch, PathUnknown, StoreError, IoFailure), EXIT_DATA),
    ((RateLimited, ApiAuthFailure, EndpointUnreachable, QueueUnavailable), EXIT_NETWORK),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="secrev",
        description="Mine code-review data and curate a security-related review dataset.",
    )
    parser.add_argument("--version", action="version", version=f"secrev {__version__}")
    parser.add_argument("--config", help="pipeline config file (TOML or JSON)")
    parser.add_argument("--store", help="corpus store path (overrides config)")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="crawl repositories into the corpus store")
    p.add_argument("--language", required=True)
    p.add_argument("--min-prs", type=int, default=1000)
    p.add_argument("--star-rank-limit", type=int, default=10_000)
    p.add_argument("--licenses", required=True, help="file with one license id per line")
    p.add_argument("--out", required=True, help="store path")
    p.add_argument("--live", action="store_true",
                   help="hit the real API (credentials from SECREV_API_TOKEN)")
    p.add_argument("--fixture", help="directory of recorded responses")
    p.add_argument("--base-url", default="https://api.github.com")
    p.add_argument("--max-repos", type=int, default=0, help="crawl at most N candidates")
    p.add_argument("--parallel", type=int, default=1,
                   help="bounded-parallel fetch width across repositories")

    p = sub.add_parser("extract", help="build review records from stored threads")

    p = sub.add_parser("bootstrap", help="two-stage pseudo-label bootstrap")
    p.add_argument("--pool-size", type=int, default=3000)

    p = sub.add_parser("loop", help="run labeling-loop iterations")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--ui", help="directory of built UI assets to serve")
    p.add_argument("--seed-demo", type=int, default=0,
                   help="create N demo tasks in an empty store (UI development)")

    p = sub.add_parser("analyze", help="statistical reports")
    asub = p.add_subparsers(dest="analysis", required=True)
    pb = asub.add_parser("bias", help="per-category Fisher tests against a reference")
    pb.add_argument("--rounds", type=int, default=3)
    pb.add_argument("--reference", required=True,
                    help="JSON file: {id: category} for the representative set")
    pd = asub.add_parser("distribution", help="per-language raw vs filtered table")
    pa = asub.add_parser("audit", help="sampling-based precision audit")
    pa.add_argument("--n", type=int, default=0, help="0 = Cochran default")
    pa.add_argument("--service-url", default=None)

    p = sub.add_parser("export", help="write the dataset as JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--security-only", action="store_true")

    p = sub.add_parser("bench", help="benchmark comment generators")
    bsub = p.add_subparsers(dest="bench_command", required=True)
    pr = bsub.add_parser("run")
    pr.add_argument("--dataset", required=True, help="JSONL dataset file")
    pr.add_argument("--backend", action="append", default=[],
                    help="recorded backend: NAME=generations.jsonl (repeatable)")
    pr.add_argument("--mode", choices=["0shot", "2shot"], default="0shot")
    pr.add_argument("--vectors", help="precomputed embedding sidecar JSON")
    pr.add_argument("--out", default="bench-out")
    pr.add_argument("--echo", action="store_true", help="include the echo oracle backend")

    p = sub.add_parser("simulate", help="synthetic end-to-end scenario")
    p.add_argument("--out", default="simulate-out")
    p.add_argument("--threads", type=int, default=5200)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=600)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SecrevError as exc:
        for classes, code in _EXIT_BY_ERROR:
            if isinstance(exc, classes):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _load_pipeline(args):
    from .config import PipelineConfig, load_config

    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.store:
        cfg.store_path = args.store
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _open_store(cfg):
    from .store import CorpusStore

    return CorpusStore.open(cfg.store_path)


def _dispatch(args) -> int:
    if args.command == "mine":
        return _cmd_mine(args)
    if args.command == "extract":
        return _cmd_extract(args)
    if args.command == "bootstrap":
        return _cmd_bootstrap(args)
    if args.command == "loop":
        return _cmd_loop(args)
    if args.command == "serve":
        return _cmd_serve(args)
    if args.command == "analyze":
        return _cmd_analyze(args)
    if args.command == "export":
        return _cmd_export(args)
    if args.command == "bench":
        return _cmd_bench(args)
    if args.command == "simulate":
        return _cmd_simulate(args)
    raise AssertionError(f"unhandled command {args.command}")


_LANGUAGE_ALIASES = {
    "c": "C", "c++": "C++", "cpp": "C++", "c#": "C#", "csharp": "C#",
    "java": "Java", "go": "Go",
}


def _cmd_mine(args) -> int:
    from .miner import MiningCriteria, RestClient, UrlTransport
    from .miner import crawl_many, list_candidates
    from .store import CorpusStore

    licenses = frozenset(
        line.split("#", 1)[0].strip()
        for line in Path(args.licenses).read_text().splitlines()
        if line.split("#", 1)[0].strip()
    )
    criteria = MiningCriteria(
        language=_LANGUAGE_ALIASES.get(args.language.lower(), args.language),
        license_allowlist=licenses,
        star_rank_limit=args.star_rank_limit,
        min_pull_requests=args.min_prs,
    )
    if args.live:
        transport = UrlTransport()
        token = os.environ.get("SECREV_API_TOKEN")
    elif args.fixture:
        transport = _recorded_transport_from_dir(args.fixture)
        token = None
    else:
        raise ConfigError("mine needs --live or --fixture DIR")
    client = RestClient(transport, base_url=args.base_url, token=token)
    store = CorpusStore.open(args.out)
    candidates = list_candidates(client, criteria)
    if args.max_repos:
        candidates = candidates[: args.max_repos]
    cursors = crawl_many(store, client, candidates, width=args.parallel)
    for full_name in sorted(cursors):
        print(f"crawled {full_name}: up to PR #{cursors[full_name].last_pr_number}")
    print(f"{len(candidates)} repositories crawled into {args.out}")
    return EXIT_OK


def _recorded_transport_from_dir(path):
    from .miner import RecordedTransport

    transport = RecordedTransport()
    for rec_file in sorted(Path(path).glob("*.json")):
        rec = json.loads(rec_file.read_text())
        transport.add(
            rec.get("method", "GET"), rec["url"], rec["body"],
            status=rec.get("status", 200), headers=rec.get("headers"),
        )
    return transport


def _cmd_extract(args) -> int:
    from .extract import extract_all

    cfg = _load_pipeline(args)
    with _open_store(cfg) as store:
        census = extract_all(store)
    print(json.dumps(census, indent=2, sort_keys=True))
    return EXIT_OK


def _build_backends(cfg):
    from .classify import KeywordBackend, RemoteChatBackend, load_keywords, default_keywords
    from .config import api_key_from_env
    from .locmodel import LocalTextClassifier, TrainConfig

    backends = []
    for desc in cfg.backends:
        if desc.kind == "keyword":
            keywords = (
                load_keywords(desc.config["keywords_path"])
                if desc.config.get("keywords_path")
                else (load_keywords(cfg.keywords_path) if cfg.keywords_path else default_keywords())
            )
            backends.append(KeywordBackend(desc.id, keywords))
        elif desc.kind == "remote_chat":
            backends.append(RemoteChatBackend(
                desc.id,
                endpoint=desc.config["endpoint"],
                model=desc.config.get("model", desc.id),
                api_key=api_key_from_env(desc.config),
            ))
        elif desc.kind == "local_trainable":
            backends.append(LocalTextClassifier(
                desc.id, TrainConfig(seed=int(desc.config.get("seed", cfg.seed))),
            ))
    return backends


def _cmd_bootstrap(args) -> int:
    from .classify import instance_from_quintuple
    from .loop import generate_pseudo_labels

    cfg = _load_pipeline(args)
    backends = _build_backends(cfg)
    lightweight = [b for b in backends if not b.id.startswith("expert")]
    experts = [b for b in backends if b.id.startswith("expert")]
    if len(lightweight) < 2 or not experts:
        raise ConfigError(
            "bootstrap needs >= 2 lightweight backends and one backend whose id "
            "starts with 'expert'"
        )
    rng = random.Random(cfg.seed)
    with _open_store(cfg) as store:
        pool = [instance_from_quintuple(q) for q in store.quintuples("label IS NULL")]
        rng.shuffle(pool)
        pool = pool[: args.pool_size]
        labeled, report = generate_pseudo_labels(pool, lightweight, experts[0], cfg.loop, rng)
        with store.transaction():
            for item in labeled:
                store.set_label(item.instance_id, item.label, item.source, item.iteration)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


class SharedStoreQueue:
    """Annotation queue for the CLI loop: tasks live in the shared store, a
    human-facing service answers them, the loop polls for resolutions.

    The service is health-checked while waiting; if it goes away the wait
    raises ``QueueUnavailable`` so the iteration suspends resumably
    (enqueue is deduplicated, so a resumed run re-joins its own tasks).
    """

    def __init__(self, service, client, required_votes: int = 2,
                 poll_seconds: float = 2.0, max_polls: int = 0):
        self.service = service
        self.client = client
        self.required_votes = required_votes
        self.poll_seconds = poll_seconds
        self.max_polls = max_polls  # 0 = wait forever while the service is up

    def submit(self, instance_ids, purpose):
        return self.service.enqueue(instance_ids, purpose, self.required_votes)

    def wait_results(self, task_ids):
        import time as _time

        polls = 0
        while True:
            resolved = self.service.resolutions(task_ids)
            if len(resolved) >= len(set(task_ids)):
                return resolved
            self.client.current_iteration()  # raises QueueUnavailable when down
            polls += 1
            if self.max_polls and polls >= self.max_polls:
                raise QueueUnavailable("annotation queue did not drain in time")
            _time.sleep(self.poll_seconds)


def _cmd_loop(args) -> int:
    from .annotation import AnnotationService
    from .annotation_http import AnnotationClient
    from .classify import VotingScheme, instance_from_quintuple
    from .loop import LoopState, run_iteration
    from .store import SOURCE_HUMAN

    cfg = _load_pipeline(args)
    if not cfg.service_url:
        raise ConfigError("loop needs service.url in the config (run `secrev serve`)")
    client = AnnotationClient(cfg.service_url)

    with _open_store(cfg) as store:
        state = LoopState.load(store) if args.resume else None
        if state is None:
            state = LoopState(config=cfg.loop)
            for q in store.quintuples("label IS NOT NULL"):
                state.ledger.add(_ledger_item_from_quintuple(q))
        rng = state.make_rng()
        backends = [b for b in _build_backends(cfg) if hasattr(b, "train")]
        if len(backends) < 2:
            raise ConfigError("loop needs >= 2 local_trainable backends")
        scheme = VotingScheme(4, 5) if len(backends) == 5 else VotingScheme(
            max(1, len(backends) - 1), len(backends))

        instances = {q.id: instance_from_quintuple(q) for q in store.quintuples()}
        validation = []  # human-labeled holdout, when present
        for q in store.quintuples("label IS NOT NULL AND label_source='human'"):
            validation.append((instances[q.id], q.label))
        if not validation:
            raise ConfigError("loop needs human-labeled validation records in the store")

        def retrain(ledger):
            pairs = [(instances[l.instance_id], l.label) for l in ledger.items()
                     if l.instance_id in instances]
            for b in backends:
                b.train([p[0] for p in pairs], [p[1] for p in pairs])

        retrain(state.ledger)
        poll = float(os.environ.get("SECREV_LOOP_POLL_SECONDS", "2.0"))
        queue = SharedStoreQueue(AnnotationService(store), client, poll_seconds=poll)
        max_iter = args.iterations or cfg.loop.max_iterations
        unlabeled = [i for qid, i in sorted(instances.items())
                     if qid not in state.ledger and qid not in set(state.consumed_ids)]
        rng.shuffle(unlabeled)
        cursor = 0
        while state.iteration < max_iter and not state.stopped:
            batch = unlabeled[cursor: cursor + cfg.loop.batch_size]
            cursor += cfg.loop.batch_size
            if not batch:
                break
            try:
                report = run_iteration(
                    iteration=state.iteration + 1, batch=batch, backends=backends,
                    scheme=scheme, queue=queue, cfg=cfg.loop, ledger=state.ledger,
                    rng=rng, validation=validation, retrain=retrain,
                )
            except QueueUnavailable:
                state.save(store)
                print("annotation service unreachable; state saved, resume with "
                      "`secrev loop --resume`", file=sys.stderr)
                raise
            state.iteration += 1
            state.consumed_ids.extend(i.id for i in batch)
            state.reports.append(report.as_dict())
            state.stopped = report.stop
            state.stop_reason = report.stop_reason
            state.capture_rng(rng)
            state.save(store)
            print(report.render_table())
            print()
            if report.stop:
                break
        with store.transaction():
            for item in state.ledger.items():
                if item.source == SOURCE_HUMAN:
                    store.set_label(item.instance_id, item.label, SOURCE_HUMAN,
                                    item.iteration)
    return EXIT_OK


def _ledger_item_from_quintuple(q):
    from .loop import LabeledInstance

    source = q.label_source or "expert_validated"
    return LabeledInstance(q.id, q.label, source, q.iteration or 0)


class _HttpQueue:
    """Loop-side queue over the annotation HTTP API."""

    def __init__(self, client, required_votes: int = 2, poll_seconds: float = 2.0):
        self.client = client
        self.required_votes = required_votes
        self.poll_seconds = poll_seconds

    def submit(self, instance_ids, purpose):
        # enqueue happens through the shared store; the service exposes reads
        raise NotImplementedError(
            "HTTP queue submit goes through the shared store; use ServiceQueue"
        )

    def wait_results(self, task_ids):
        raise NotImplementedError


def _cmd_serve(args) -> int:
    from .annotation import AnnotationService, load_taxonomy, DEFAULT_CATEGORIES
    from .annotation_http import AnnotationServer
    from .loop import LoopState

    cfg = _load_pipeline(args)
    store = _open_store(cfg)
    taxonomy = load_taxonomy(cfg.taxonomy_path) if cfg.taxonomy_path else DEFAULT_CATEGORIES
    service = AnnotationService(store, taxonomy=taxonomy)
    if args.seed_demo:
        _seed_demo_tasks(store, service, args.seed_demo)

    def report_provider():
        state = LoopState.load(store)
        if state is None or not state.reports:
            return None
        return state.reports[-1]

    port = args.port if args.port is not None else cfg.service_port
    server = AnnotationServer(service, host=cfg.service_host, port=port,
                              report_provider=report_provider, static_dir=args.ui)
    print(f"annotation service listening on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


def _seed_demo_tasks(store, service, n: int) -> None:
    from .loop import LoopState, LoopConfig
    from .simulate import SimulateConfig, build_synthetic_corpus
    from .extract import extract_all

    if store.counts()["quintuples"] == 0:
        sim = SimulateConfig(seed=11, corpus_threads=max(n * 3, 30))
        build_synthetic_corpus(store, sim)
        extract_all(store)
    ids = [q.id for q in store.quintuples()][:n]
    service.enqueue(ids, "binary_label", required_votes=2)
    state = LoopState(config=LoopConfig(batch_size=max(n, 1), max_iterations=3))
    state.reports.append({
        "iteration": 1,
        "batch_size": n,
        "bucket_all_positive": max(1, n // 10),
        "bucket_mixed": max(1, n // 3),
        "bucket_all_negative": n - max(1, n // 10) - max(1, n // 3),
        "sampled_for_annotation": n,
        "confirmed_positives": 0,
        "rejected_positives": 0,
        "new_human_labels": 0,
        "discarded": 0,
        "deferred": 0,
        "backend_metrics": {},
        "ensemble_metrics": {"accuracy": 0.97, "precision": 0.91, "recall": 0.42,
                             "f1": 0.57, "degenerate_precision": False},
        "dynamic_f1": 0.61,
        "stop": False,
        "stop_reason": None,
    })
    state.save(store)


def _cmd_analyze(args) -> int:
    cfg = _load_pipeline(args)
    if args.analysis == "bias":
        return _cmd_analyze_bias(args, cfg)
    if args.analysis == "distribution":
        from .stats import distribution_report

        with _open_store(cfg) as store:
            report = distribution_report(store)
        print(report.render_table())
        print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    if args.analysis == "audit":
        return _cmd_analyze_audit(args, cfg)
    raise ConfigError(f"unknown analysis {args.analysis!r}")


def _cmd_analyze_bias(args, cfg) -> int:
    from .annotation import DEFAULT_CATEGORIES, load_taxonomy
    from .stats import bias_report

    taxonomy = load_taxonomy(cfg.taxonomy_path) if cfg.taxonomy_path else DEFAULT_CATEGORIES
    reference = json.loads(Path(args.reference).read_text())
    with _open_store(cfg) as store:
        labeled = [q.category for q in store.quintuples(
            "label='positive' AND category IS NOT NULL")]
    report = bias_report(labeled, list(reference.values()), taxonomy,
                         rounds=args.rounds, seed=cfg.seed)
    print(report.render_table())
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_analyze_audit(args, cfg) -> int:
    from .annotation import AnnotationService
    from .stats import audit_sample_size, precision_audit

    with _open_store(cfg) as store:
        service = AnnotationService(store)
        positives = [q.id for q in store.quintuples("label='positive'")]
        if not positives:
            print("no security-labeled records to audit", file=sys.stderr)
            return EXIT_DATA
        n = args.n or min(audit_sample_size(len(positives)), len(positives))

        def wait(task_ids):
            resolved = service.resolutions(task_ids)
            missing = len(set(task_ids)) - len(resolved)
            if missing:
                raise QueueUnavailable(
                    f"{missing} audit tasks still open; annotate via the service "
                    "and re-run"
                )
            return resolved

        audit = precision_audit(
            positives, n, cfg.seed,
            enqueue=lambda ids, purpose: service.enqueue(ids, purpose, 2),
            wait_results=wait,
        )
    print(json.dumps(audit.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_export(args) -> int:
    cfg = _load_pipeline(args)
    with _open_store(cfg) as store:
        predicate = (lambda q: q.label == "positive") if args.security_only else None
        count = store.export_dataset(args.out, predicate)
    print(f"wrote {count} records to {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .bench import (
        EchoBackend,
        FEW_SHOT,
        RecordedBackend,
        ZERO_SHOT,
        preprocess,
        run_benchmark,
    )
    from .store import quintuple_from_record
    from .textmetrics import SidecarEmbedder

    cfg = _load_pipeline(args)
    quintuples = []
    with open(args.dataset, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                quintuples.append(quintuple_from_record(json.loads(line)))
    instances, census = preprocess(quintuples)
    backends = []
    if args.echo or not args.backend:
        backends.append(EchoBackend())
    for spec in args.backend:
        name, _, path = spec.partition("=")
        if not path:
            raise ConfigError(f"--backend takes NAME=generations.jsonl, got {spec!r}")
        backends.append(RecordedBackend.from_jsonl(name, path))
    embedder = SidecarEmbedder.load(args.vectors) if args.vectors else None
    mode = ZERO_SHOT if args.mode == "0shot" else FEW_SHOT
    report = run_benchmark(
        backends, instances, modes=(mode,), embedder=embedder,
        rng=random.Random(cfg.seed), out_dir=args.out, census=census.as_dict(),
    )
    print(report.render_table())
    print(f"raw generations and report.json written to {args.out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    from .simulate import SimulateConfig, run_simulation

    cfg = _load_pipeline(args)
    sim = SimulateConfig(
        seed=cfg.seed if args.seed is None else args.seed,
        corpus_threads=args.threads,
        iterations=args.iterations,
        batch_size=args.batch_size,
    )
    transcript = run_simulation(sim, args.out)
    final = transcript["final"]
    print(f"transcript written to {Path(args.out) / 'transcript.json'}")
    print(f"exported {final['exported']} security-labeled records")
    if final["audit"] is None:
        print("audited precision: n/a (no records labeled positive)")
    else:
        print(f"audited precision {final['audit']['precision']:.4f} "
              f"[{final['audit']['interval_low']:.4f}, {final['audit']['interval_high']:.4f}]")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
