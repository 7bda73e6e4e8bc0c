from __future__ import annotations

import json
import random

import pytest

from secrev.bench import (
    BenchmarkInstance,
    ConstantBackend,
    DROP_CONTEXT_CAP,
    DROP_DIFF_CAP,
    DROP_NON_ENGLISH,
    EchoBackend,
    Exemplar,
    FEW_SHOT,
    RecordedBackend,
    ZERO_SHOT,
    build_prompt,
    is_english,
    pick_exemplars,
    preprocess,
    replace_links,
    run_benchmark,
)
from secrev.errors import ExemplarFromSameRepo
from secrev.store import Comment, ReviewQuintuple
from secrev.textmetrics import SidecarEmbedder


def quintuple(idx="q1", comment="this looks wrong, check the bounds", repo="org/a",
              diff="@@ -1 +1 @@\n-a\n+b", context="int main() {}\n", language="C"):
    return ReviewQuintuple(
        id=idx, repo=repo, language=language, hunk_diff=diff, file_old=context,
        file_new=context, comments=(Comment("reviewer", comment, "2024-01-01T00:00:00Z"),),
    )


def instance(idx="q1", repo="org/a", comment="check the bounds"):
    return BenchmarkInstance(
        id=idx, repo=repo, language="C", hunk_diff="@@ -1 +1 @@\n-a\n+b",
        context="ctx\n", reference_comment=comment,
    )


# --- preprocessing ------------------------------------------------------------------


def test_preprocess_retains_small_english():
    instances, census = preprocess([quintuple()])
    assert len(instances) == 1
    assert census.retained == 1 and census.input == 1


def test_preprocess_drops_oversized_diff():
    big_diff = " ".join(f"tok{k}" for k in range(2049))
    instances, census = preprocess([quintuple(diff=big_diff)])
    assert instances == []
    assert census.dropped == {DROP_DIFF_CAP: 1}


def test_preprocess_drops_oversized_context():
    big_context = " ".join(f"tok{k}" for k in range(10_001))
    instances, census = preprocess([quintuple(context=big_context)])
    assert census.dropped == {DROP_CONTEXT_CAP: 1}


def test_preprocess_drops_non_english():
    instances, census = preprocess([quintuple(comment="это небезопасно")])
    assert census.dropped == {DROP_NON_ENGLISH: 1}


def test_preprocess_replaces_links():
    instances, _ = preprocess([quintuple(comment="see https://x.y/z for details")])
    assert instances[0].reference_comment == "see <LINK> for details"


def test_preprocess_keeps_first_reviewer_comment_only():
    q = ReviewQuintuple(
        id="q9", repo="org/a", language="C", hunk_diff="@@", file_old="",
        file_new="",
        comments=(
            Comment("reviewer", "first comment wins", "2024-01-01T00:00:00Z"),
            Comment("developer", "reply", "2024-01-01T01:00:00Z"),
            Comment("reviewer", "second reviewer note", "2024-01-01T02:00:00Z"),
        ),
    )
    instances, _ = preprocess([q])
    assert instances[0].reference_comment == "first comment wins"


def test_preprocess_census_conservation():
    rng = random.Random(0)
    quintuples = []
    for k in range(400):
        roll = rng.random()
        if roll < 0.1:
            quintuples.append(quintuple(idx=f"q{k}", comment="привет мир"))
        elif roll < 0.2:
            quintuples.append(quintuple(idx=f"q{k}", diff=" ".join(["t"] * 3000)))
        elif roll < 0.25:
            quintuples.append(quintuple(idx=f"q{k}", comment="  "))
        else:
            quintuples.append(quintuple(idx=f"q{k}"))
    instances, census = preprocess(quintuples)
    assert census.input == 400
    assert census.retained == len(instances)
    assert census.retained + sum(census.dropped.values()) == census.input


def test_is_english_heuristic():
    assert is_english("check the bounds here")
    assert not is_english("проверка границ")
    assert not is_english("!!! ???")  # no letters at all


def test_replace_links_multiple():
    assert replace_links("a https://x.io b http://y.z/w c") == "a <LINK> b <LINK> c"


# --- prompts --------------------------------------------------------------------------


def test_zero_shot_prompt_golden():
    prompt = build_prompt(instance(), ZERO_SHOT)
    assert prompt == (
        "You are an experienced code reviewer. Read the code change and its "
        "surrounding file, then write a single concise review comment for the "
        "change.\n\n"
        "Code change:\n@@ -1 +1 @@\n-a\n+b\n\n"
        "File before the change:\nctx\n\n\n"
        "Review comment:"
    )


def test_prompt_deterministic():
    a = build_prompt(instance(), ZERO_SHOT)
    assert a == build_prompt(instance(), ZERO_SHOT)


def test_few_shot_requires_foreign_exemplars():
    ex_same = Exemplar("org/a", "@@", "text")
    ex_other = Exemplar("org/b", "@@", "text")
    with pytest.raises(ExemplarFromSameRepo):
        build_prompt(instance(), FEW_SHOT, [ex_same, ex_other])


def test_few_shot_prompt_contains_exemplars_without_context():
    exemplars = [Exemplar("org/b", "@@ex1", "comment one"),
                 Exemplar("org/c", "@@ex2", "comment two")]
    prompt = build_prompt(instance(), FEW_SHOT, exemplars)
    assert "@@ex1" in prompt and "comment two" in prompt
    assert prompt.count("File before the change:") == 1  # only the target has context


def test_few_shot_needs_exactly_two():
    with pytest.raises(ValueError):
        build_prompt(instance(), FEW_SHOT, [Exemplar("org/b", "@@", "x")])


def test_pick_exemplars_avoids_own_repo():
    pool = [instance(f"q{k}", repo=f"org/r{k % 3}") for k in range(9)]
    rng = random.Random(1)
    for target in pool:
        exemplars = pick_exemplars(target, pool, rng)
        assert len(exemplars) == 2
        assert all(e.repo != target.repo for e in exemplars)


# --- run ------------------------------------------------------------------------------


def make_instances(n=6):
    return [instance(f"q{k}", repo=f"org/r{k % 3}", comment=f"fix the bounds in case {k}")
            for k in range(n)]


def test_echo_backend_scores_one():
    report = run_benchmark([EchoBackend()], make_instances(), modes=(ZERO_SHOT,))
    row = report.rows[0]
    assert row.complete
    assert row.means["bleu"] == pytest.approx(1.0)
    assert row.means["rouge_l"] == pytest.approx(1.0)
    assert row.means["exact_match"] == pytest.approx(1.0)
    assert row.means["semantic_similarity"] is None  # no embedder wired


def test_empty_backend_scores_zero():
    report = run_benchmark([ConstantBackend("empty", "")], make_instances())
    row = report.rows[0]
    assert row.means["bleu"] == 0.0
    assert row.means["rouge_l"] == 0.0
    assert row.means["exact_match"] == 0.0


def test_aggregates_equal_recomputed_means():
    instances = make_instances(5)
    outputs = {i.id: ("fix the bounds" if k % 2 else i.reference_comment)
               for k, i in enumerate(instances)}
    backend = RecordedBackend("recorded", outputs)
    report = run_benchmark([backend], instances)
    row = report.rows[0]
    for name in ("bleu", "rouge_l", "meteor_lite", "exact_match"):
        values = [r[name] for r in row.per_instance]
        assert row.means[name] == pytest.approx(sum(values) / len(values), abs=1e-9)


def test_partial_backend_failure_isolated():
    class Exploding:
        id = "boom"

        def generate(self, instance, prompt):
            raise RuntimeError("backend crashed")

    report = run_benchmark([Exploding(), EchoBackend()], make_instances())
    by_id = {r.backend_id: r for r in report.rows}
    assert not by_id["boom"].complete
    assert by_id["echo"].complete
    assert by_id["echo"].means["bleu"] == pytest.approx(1.0)


def test_semantic_metric_with_sidecar():
    instances = make_instances(2)
    vectors = {i.reference_comment: [1.0, 2.0] for i in instances}
    report = run_benchmark([EchoBackend()], instances,
                           embedder=SidecarEmbedder(vectors))
    assert report.rows[0].means["semantic_similarity"] == pytest.approx(1.0)


def test_embedder_missing_vector_reports_absent_metric():
    instances = make_instances(2)
    report = run_benchmark([ConstantBackend("c", "unseen text")], instances,
                           embedder=SidecarEmbedder({}))
    row = report.rows[0]
    assert row.means["semantic_similarity"] is None
    assert row.means["bleu"] is not None  # lexical metrics unaffected


def test_few_shot_run_uses_foreign_pool():
    instances = make_instances(6)
    report = run_benchmark([EchoBackend()], instances, modes=(FEW_SHOT,),
                           rng=random.Random(3))
    assert report.rows[0].complete


def test_raw_generations_persisted(tmp_path):
    instances = make_instances(3)
    run_benchmark([EchoBackend()], instances, out_dir=tmp_path)
    raw = (tmp_path / "generations_echo_zero_shot.jsonl").read_text().splitlines()
    assert len(raw) == 3
    assert json.loads(raw[0])["output"] == instances[0].reference_comment
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["rows"][0]["means"]["bleu"] == pytest.approx(1.0)


def test_report_table_layout():
    report = run_benchmark([EchoBackend()], make_instances(2))
    table = report.render_table()
    header = table.splitlines()[0]
    for column in ("BLEU", "ROUGE-L", "METEOR-lite", "Exact Match", "Semantic Similarity"):
        assert column in header
    assert "echo[zero_shot]" in table
