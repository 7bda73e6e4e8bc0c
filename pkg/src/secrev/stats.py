"""Statistical validation of the constructed dataset.

Fisher's exact test uses the probability-mass two-sided convention (sum of
outcomes no more likely than the observed table).  For small totals the
p-value is computed in exact integer arithmetic; larger tables switch to
log-space factorials with a relative tie tolerance, which avoids overflow
without changing small-table results.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import DomainError, EmptyCategorySet
from .loopmetrics import cochran_sample_size

_EXACT_TOTAL_CUTOFF = 500
_LOG_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class ContingencyTable:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise DomainError("counts must be non-negative")


def fisher_exact_two_sided(table: ContingencyTable) -> float:
    """Two-sided Fisher p-value for a 2x2 table.

    Degenerate margins (an empty row or column) admit a single table, so the
    p-value is 1 by convention.
    """
    a, b, c, d = table.a, table.b, table.c, table.d
    r1, r2 = a + b, c + d
    c1, c2 = a + c, b + d
    n = r1 + r2
    if r1 == 0 or r2 == 0 or c1 == 0 or c2 == 0:
        return 1.0
    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    if n <= _EXACT_TOTAL_CUTOFF:
        # numerators share the common denominator C(n, c1)
        weights = [math.comb(r1, x) * math.comb(r2, c1 - x) for x in range(lo, hi + 1)]
        observed = weights[a - lo]
        total = sum(weights)
        tail = sum(w for w in weights if w <= observed)
        return tail / total
    logs = [_log_hyper(x, r1, r2, c1) for x in range(lo, hi + 1)]
    observed_log = logs[a - lo]
    cutoff = observed_log + math.log1p(_LOG_TIE_RTOL)
    p = sum(math.exp(l) for l in logs if l <= cutoff)
    return min(1.0, p)


def _log_hyper(x: int, r1: int, r2: int, c1: int) -> float:
    n = r1 + r2
    return (
        _lchoose(r1, x) + _lchoose(r2, c1 - x) - _lchoose(n, c1)
    )


def _lchoose(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


# --- per-category bias analysis ------------------------------------------------


@dataclass
class BiasReport:
    categories: tuple[str, ...]
    rounds: int
    alpha: float
    p_values: dict[str, list[float]]  # category -> one p per round
    verdicts: dict[str, str]  # "no significant difference" | "significant difference"
    sample_size: int

    def as_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "rounds": self.rounds,
            "alpha": self.alpha,
            "p_values": self.p_values,
            "verdicts": self.verdicts,
            "sample_size": self.sample_size,
        }

    def render_table(self) -> str:
        width = max(len(c) for c in self.categories) + 2
        header = "Category".ljust(width) + "".join(
            f"S.{i + 1}".rjust(8) for i in range(self.rounds)
        )
        lines = [header, "-" * len(header)]
        for cat in self.categories:
            cells = "".join(f"{p:.2f}".rjust(8) for p in self.p_values[cat])
            lines.append(cat.ljust(width) + cells)
        return "\n".join(lines)


def bias_report(
    dataset_categories: Sequence[str],
    representative_categories: Sequence[str],
    taxonomy: Sequence[str],
    rounds: int = 3,
    seed: int = 0,
    alpha: float = 0.05,
) -> BiasReport:
    """Per-category Fisher tests between seeded samples of the dataset and
    the representative set.  Rounds draw independently."""
    if not dataset_categories or not representative_categories:
        raise EmptyCategorySet("both labeled sets must be non-empty")
    if rounds < 1:
        raise DomainError("rounds must be >= 1")
    rng = random.Random(seed)
    size = min(len(representative_categories), len(dataset_categories))
    rep_counts = {c: 0 for c in taxonomy}
    for c in representative_categories:
        rep_counts[c] = rep_counts.get(c, 0) + 1
    n_rep = len(representative_categories)

    p_values: dict[str, list[float]] = {c: [] for c in taxonomy}
    for _ in range(rounds):
        draw = rng.sample(list(dataset_categories), size)
        draw_counts = {c: 0 for c in taxonomy}
        for c in draw:
            draw_counts[c] = draw_counts.get(c, 0) + 1
        for cat in taxonomy:
            t = ContingencyTable(
                a=draw_counts.get(cat, 0), b=size - draw_counts.get(cat, 0),
                c=rep_counts.get(cat, 0), d=n_rep - rep_counts.get(cat, 0),
            )
            p_values[cat].append(fisher_exact_two_sided(t))

    verdicts = {
        cat: ("no significant difference" if min(ps) >= alpha else "significant difference")
        for cat, ps in p_values.items()
    }
    return BiasReport(
        categories=tuple(taxonomy), rounds=rounds, alpha=alpha,
        p_values=p_values, verdicts=verdicts, sample_size=size,
    )


# --- sampling-based precision audit ----------------------------------------------


@dataclass
class PrecisionAudit:
    sampled: int
    confirmed_positive: int
    precision: float
    interval_low: float
    interval_high: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    phat = successes / trials
    denom = 1 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    margin = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, center - margin), min(1.0, center + margin))


def precision_audit(
    instance_ids: Sequence[str],
    n: int,
    seed: int,
    enqueue: Callable[[Sequence[str], str], list[int]],
    wait_results: Callable[[Sequence[int]], dict[str, str]],
) -> PrecisionAudit:
    """Audit a uniform sample of labeled positives through human annotation.

    ``enqueue``/``wait_results`` follow the annotation-queue contract; the
    reported precision is the confirmed fraction with a 95% Wilson interval.
    """
    if not instance_ids:
        raise DomainError("dataset must be non-empty")
    if n > len(instance_ids):
        raise DomainError(f"sample size {n} exceeds dataset size {len(instance_ids)}")
    rng = random.Random(seed)
    sample = sorted(rng.sample(list(instance_ids), n))
    tasks = enqueue(sample, "precision_audit")
    results = wait_results(tasks)
    confirmed = sum(1 for v in results.values() if v == "positive")
    low, high = wilson_interval(confirmed, n)
    return PrecisionAudit(
        sampled=n, confirmed_positive=confirmed, precision=confirmed / n,
        interval_low=low, interval_high=high,
    )


def audit_sample_size(population: int, z: float = 1.96, p: float = 0.5, e: float = 0.05) -> int:
    """Default audit size: Cochran at 95% confidence (447 for the full-scale run)."""
    return cochran_sample_size(population, z, p, e)


# --- distribution table -------------------------------------------------------------


@dataclass
class DistributionRow:
    language: str
    repos_raw: int
    repos_filtered: int
    reviews_raw: int
    reviews_filtered: int
    comments_raw: int
    comments_filtered: int


@dataclass
class DistributionReport:
    rows: list[DistributionRow]
    total: DistributionRow

    def as_dict(self) -> dict:
        return {
            "rows": [r.__dict__ for r in self.rows],
            "total": self.total.__dict__,
        }

    def render_table(self) -> str:
        header = (
            f"{'Lang.':8} {'Repos raw':>10} {'filt.':>7} "
            f"{'Reviews raw':>12} {'filt.':>7} {'Comments raw':>13} {'filt.':>7}"
        )
        lines = [header, "-" * len(header)]
        for r in self.rows + [self.total]:
            lines.append(
                f"{r.language:8} {r.repos_raw:>10,} {r.repos_filtered:>7,} "
                f"{r.reviews_raw:>12,} {r.reviews_filtered:>7,} "
                f"{r.comments_raw:>13,} {r.comments_filtered:>7,}"
            )
        return "\n".join(lines)


def distribution_report(store, languages: Sequence[str] | None = None) -> DistributionReport:
    """Per-language repository/review/comment counts, raw vs security-filtered."""
    conn = store._conn
    langs = list(languages) if languages else sorted(
        r[0] for r in conn.execute("SELECT DISTINCT language FROM quintuples")
    )
    rows = []
    for lang in langs:
        raw = conn.execute(
            "SELECT COUNT(DISTINCT repo), COUNT(*), "
            " COALESCE(SUM(json_array_length(comments_json)), 0)"
            " FROM quintuples WHERE language=?",
            (lang,),
        ).fetchone()
        filt = conn.execute(
            "SELECT COUNT(DISTINCT repo), COUNT(*),"
            " COALESCE(SUM(json_array_length(comments_json)), 0)"
            " FROM quintuples WHERE language=? AND label='positive'",
            (lang,),
        ).fetchone()
        rows.append(DistributionRow(lang, raw[0], filt[0], raw[1], filt[1], raw[2], filt[2]))
    total = DistributionRow(
        "Total",
        sum(r.repos_raw for r in rows), sum(r.repos_filtered for r in rows),
        sum(r.reviews_raw for r in rows), sum(r.reviews_filtered for r in rows),
        sum(r.comments_raw for r in rows), sum(r.comments_filtered for r in rows),
    )
    return DistributionReport(rows, total)


def render_distribution_from_counts(rows: list[dict]) -> str:
    """Render the Raw/Filtered layout from externally supplied counts."""
    report = DistributionReport(
        rows=[DistributionRow(**r) for r in rows],
        total=DistributionRow(
            "Total",
            sum(r["repos_raw"] for r in rows), sum(r["repos_filtered"] for r in rows),
            sum(r["reviews_raw"] for r in rows), sum(r["reviews_filtered"] for r in rows),
            sum(r["comments_raw"] for r in rows), sum(r["comments_filtered"] for r in rows),
        ),
    )
    return report.render_table()
