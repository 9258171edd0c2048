import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from oracles import lcs_oracle
from quadmerge.metrics import (
    PRF,
    CorpusFormatError,
    DuplicateSampleError,
    Quadruple,
    SampleExtraction,
    exact_first_greedy_match,
    greedy_match,
    hard_match,
    lcs_length,
    max_bipartite_match,
    parse_quadruples,
    read_jsonl,
    score,
    similarity,
    soft_match,
)


def q(t, a="arg", g="G", h="hate"):
    return Quadruple(t, a, g, h)


def sample(sid, raw):
    return SampleExtraction.from_raw(sid, raw)


class TestParse:
    def test_single(self):
        assert parse_quadruples("A | B | Racism | hate [END]") == [Quadruple("A", "B", "Racism", "hate")]

    def test_sep_keeps_order(self):
        out = parse_quadruples("A | B | Racism | hate [SEP] C | D | Sexism | hate [END]")
        assert out == [Quadruple("A", "B", "Racism", "hate"), Quadruple("C", "D", "Sexism", "hate")]

    def test_malformed_skipped_with_warning(self):
        warnings = []
        assert parse_quadruples("garbage with two | pipes", warnings) == []
        assert len(warnings) == 1 and "expected 4 fields" in warnings[0]

    def test_mixed_segments(self):
        warnings = []
        out = parse_quadruples("a|b|c [SEP] a|b|c|d [SEP] 1|2|3|4|5", warnings)
        assert out == [Quadruple("a", "b", "c", "d")] and len(warnings) == 2

    def test_empty_and_none(self):
        assert parse_quadruples("") == [] and parse_quadruples("  [END] ") == []
        assert parse_quadruples(None) == []

    def test_fields_trimmed_and_empty_allowed(self):
        assert parse_quadruples("  NULL |  | Others |non-hate  ") == [Quadruple("NULL", "", "Others", "non-hate")]


class TestLcsAndSimilarity:
    def test_examples(self):
        assert lcs_length("abc", "abd") == 2
        assert lcs_length("x", "") == 0 and lcs_length("", "") == 0
        assert lcs_length("上海人", "上海") == 2

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=30))
    def test_self(self, s):
        assert lcs_length(s, s) == len(s)

    @settings(max_examples=300, deadline=None)
    @given(st.text("abc", max_size=12), st.text("abc", max_size=12))
    def test_against_oracle(self, a, b):
        assert lcs_length(a, b) == lcs_oracle(a, b)

    def test_long_strings(self):
        rnd = random.Random(4)
        a = "".join(rnd.choice("acgt") for _ in range(150))
        b = "".join(rnd.choice("acgt") for _ in range(90))
        assert lcs_length(a, b) == lcs_oracle(a, b)

    def test_similarity_values(self):
        assert similarity("张三", "张三") == 1.0
        assert similarity("abc", "abd") == pytest.approx(4 / 6, abs=1e-15)
        assert similarity("", "x") == 0.0
        assert similarity("", "") == 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.text("ab字", max_size=10), st.text("ab字", max_size=10))
    def test_similarity_properties(self, a, b):
        s = similarity(a, b)
        assert s == similarity(b, a)
        assert 0.0 <= s <= 1.0
        assert (s == 1.0) == (a == b)


class TestMatching:
    def test_hard(self):
        assert hard_match(q("A"), q("A"))
        assert not hard_match(q("A", h="hate"), q("A", h="non-hate"))
        assert hard_match(Quadruple("张三 ", "B", "G", "hate"), Quadruple("张三", "B", "G", "hate"))

    def test_soft(self):
        assert soft_match(q("A"), q("A"))
        assert soft_match(q("abc"), q("abd"))
        # 2 * 1 / (1 + 3) is exactly 0.5, which does not exceed 0.5
        assert similarity("a", "abc") == 0.5
        assert not soft_match(q("a"), q("abc"))
        assert not soft_match(q("abc", g="Racism"), q("abc", g="racism"))
        assert not soft_match(q("abc", a="abcd"), q("abc", a="wxyz"))

    @settings(max_examples=300, deadline=None)
    @given(st.tuples(*[st.text(" ab", max_size=4)] * 4), st.tuples(*[st.text(" ab", max_size=4)] * 4), st.booleans())
    def test_hard_implies_soft(self, pf, gf, same):
        p = Quadruple(*pf)
        g = Quadruple(*(pf if same else gf))
        if hard_match(p, g):
            assert soft_match(p, g)

    def test_plain_greedy_can_starve_exact_duplicates(self):
        golds = [q("abc"), q("abz"), q("ybc")]
        preds = [q("ybc"), q("abc"), q("abz")]
        assert greedy_match(preds, golds, hard_match) == 3
        assert greedy_match(preds, golds, soft_match) == 2
        assert exact_first_greedy_match(preds, golds, soft_match) == 3
        assert max_bipartite_match(preds, golds, soft_match) == 3

    def test_one_to_one(self):
        assert exact_first_greedy_match([q("A"), q("A")], [q("A")], hard_match) == 1
        assert max_bipartite_match([q("A")], [q("A"), q("A")], hard_match) == 1


class TestScore:
    def test_perfect(self):
        raws = ["A | B | G | hate [END]", "C | D | G2 | non-hate [SEP] E | F | G | hate [END]"]
        preds = [sample(str(i), r) for i, r in enumerate(raws)]
        golds = [sample(str(i), r) for i, r in enumerate(raws)]
        rep = score(preds, golds)
        assert rep.hard == PRF(1.0, 1.0, 1.0) and rep.soft == PRF(1.0, 1.0, 1.0)
        assert rep.average_score == 1.0 and rep.summary() == "hard=1.0000 soft=1.0000 avg=1.0000"

    def test_one_of_two(self):
        rep = score(
            [sample("1", "A | B | G | hate [SEP] X | Y | G | hate")],
            [sample("1", "A | B | G | hate [SEP] C | D | H | hate")],
        )
        assert (rep.hard.precision, rep.hard.recall, rep.hard.f1) == (0.5, 0.5, 0.5)

    def test_f1_third(self):
        # 1 correct of 2 predicted and 4 gold: P = 0.5, R = 0.25, F1 = 1/3
        rep = score(
            [sample("1", "A | B | G | hate [SEP] Z | Z | Z | Z")],
            [sample("1", "A | B | G | hate [SEP] C | D | G | hate [SEP] E | F | G | hate [SEP] H | I | G | hate")],
        )
        assert rep.hard.precision == 0.5 and rep.hard.recall == 0.25
        assert rep.hard.f1 == pytest.approx(1 / 3, abs=1e-12)

    def test_zero_counts(self):
        rep = score([], [])
        assert rep.hard == PRF(0.0, 0.0, 0.0) and rep.average_score == 0.0

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DuplicateSampleError):
            score([sample("1", ""), sample("1", "")], [sample("1", "")])
        with pytest.raises(DuplicateSampleError):
            score([], [sample("1", ""), sample("1", "")])

    def test_missing_prediction_counts_as_empty(self):
        rep = score([], [sample("1", "A | B | G | hate")])
        assert rep.gold_total == 1 and rep.predicted_total == 0 and rep.hard.recall == 0.0

    def test_report_dict(self):
        d = score([sample("1", "A | B | G | hate")], [sample("1", "A | B | G | hate")]).to_dict()
        assert set(d) == {"hard", "soft", "average_score", "counts"}
        assert d["counts"] == {"predicted_total": 1, "gold_total": 1, "hard_correct": 1, "soft_correct": 1}
        json.dumps(d)

    def test_golden_per_sample(self):
        data = json.loads((FIXTURES / "golden_corpus.json").read_text(encoding="utf-8"))
        for s in data["samples"]:
            preds = [] if s["pred"] is None else [sample(s["id"], s["pred"])]
            rep = score(preds, [sample(s["id"], s["gold"])])
            got = (rep.predicted_total, rep.gold_total, rep.hard_correct, rep.soft_correct)
            assert got == (s["n_pred"], s["n_gold"], s["hard"], s["soft"]), s["id"]

    def test_sample_order_irrelevant(self):
        data = json.loads((FIXTURES / "golden_corpus.json").read_text(encoding="utf-8"))
        preds = [sample(s["id"], s["pred"]) for s in data["samples"] if s["pred"] is not None]
        golds = [sample(s["id"], s["gold"]) for s in data["samples"]]
        a = score(preds, golds)
        b = score(list(reversed(preds)), golds[::2] + golds[1::2])
        assert a == b


def test_read_jsonl(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(
        json.dumps({"id": "1", "output": "A | B | G | hate [END]"}, ensure_ascii=False) + "\n\n"
        + json.dumps({"id": "2", "output": "bad"}) + "\n",
        encoding="utf-8",
    )
    samples = read_jsonl(path)
    assert [s.sample_id for s in samples] == ["1", "2"]
    assert samples[0].quads == [Quadruple("A", "B", "G", "hate")]
    assert samples[1].quads == [] and len(samples[1].warnings) == 1


@pytest.mark.parametrize("line", ["{not json", json.dumps({"output": "x"}), json.dumps({"id": "1", "output": 3})])
def test_read_jsonl_rejects(tmp_path, line):
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError):
        read_jsonl(path)
