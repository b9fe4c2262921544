import pytest

from nuggetgen.core import (
    ClusterSummary,
    FacetCluster,
    GroundedResponse,
    InformationNugget,
    Passage,
    Query,
    ResponseBudget,
    Sentence,
    citations_of,
    count_words,
)
from nuggetgen.provider import ScriptedProvider, ScriptRule
from nuggetgen.synthesis import (
    assemble_response,
    build_baseline_prompt,
    build_summary_prompt,
    generate_baseline,
    parse_marked_text,
    render_with_markers,
    rewrite_fluency,
    summarize_cluster,
    summarize_top,
    truncate_to_sentences,
)

Q = Query("q1", "when was X born")


def cluster(cid, texts_pids):
    ns = tuple(InformationNugget(pid, 0, len(t), t, rank) for rank, (t, pid) in enumerate(texts_pids, 1))
    return FacetCluster(cid, ns)


BIRTH = cluster(0, [("X was born in 1901", "p1"), ("born 1901 in Y", "p3")])

RAMBLE = " ".join(f"Sentence {i} adds words to ramble on." for i in range(10))  # 70 words


class TestSummarize:
    def test_scripted(self):
        p = ScriptedProvider([ScriptRule("- X was born in 1901", "X was born in 1901.", purpose="summarize")])
        s = summarize_cluster(Q, BIRTH, p)
        assert s.text == "X was born in 1901."
        assert s.citations == {"p1", "p3"}
        assert s.word_count == 5

    def test_prompt_contents(self):
        prompt = build_summary_prompt(Q, BIRTH, 35)
        assert "35" in prompt and "- X was born in 1901\n- born 1901 in Y" in prompt and Q.text in prompt

    def test_overlong_retry_then_truncate(self):
        assert count_words(RAMBLE) == 70
        p = ScriptedProvider([ScriptRule("", RAMBLE, purpose="summarize")])
        s = summarize_cluster(Q, BIRTH, p, word_budget=35)
        assert len(p.calls) == 2
        assert "Your previous summary had 70 words" in p.calls[1].prompt
        assert s.word_count <= 52
        # whole sentences only: 7 sentences of 7 words = 49 <= 52
        assert s.text == " ".join(f"Sentence {i} adds words to ramble on." for i in range(7))

    def test_retry_fixes_length(self):
        p = ScriptedProvider([
            ScriptRule("Your previous summary had", "X was born in 1901.", purpose="summarize"),
            ScriptRule("", RAMBLE, purpose="summarize"),
        ])
        assert summarize_cluster(Q, BIRTH, p).text == "X was born in 1901."

    def test_within_overshoot_accepted(self):
        text = " ".join(["word"] * 50) + "."
        p = ScriptedProvider([ScriptRule("", text, purpose="summarize")])
        s = summarize_cluster(Q, BIRTH, p, word_budget=35)
        assert len(p.calls) == 1 and s.word_count == 50

    def test_singleton_cites_one(self):
        c = cluster(3, [("alone", "p7")])
        s = summarize_cluster(Q, c, ScriptedProvider([ScriptRule("", "Alone.")]))
        assert s.citations == {"p7"}

    def test_empty_output_fails(self):
        from nuggetgen.synthesis import SummaryFailed

        with pytest.raises(SummaryFailed):
            summarize_cluster(Q, BIRTH, ScriptedProvider([ScriptRule("", "   ")]))

    def test_skip_and_promote(self):
        cs = [cluster(0, [("alpha fact", "p1")]), cluster(1, [("beta fact", "p2")]),
              cluster(2, [("gamma fact", "p3")]), cluster(3, [("delta fact", "p4")])]
        p = ScriptedProvider([
            ScriptRule("- beta fact", error="transport"),
            ScriptRule("- alpha fact", "Alpha."), ScriptRule("- gamma fact", "Gamma."), ScriptRule("- delta fact", "Delta."),
        ])
        out = summarize_top(Q, cs, 3, p)
        assert [s.cluster_id for s in out] == [0, 2, 3]


class TestTruncate:
    def test_sentence_boundary(self):
        assert truncate_to_sentences("One two. Three four five. Six.", 5) == "One two. Three four five."

    def test_no_boundary_cuts_words(self):
        assert truncate_to_sentences("a b c d e f", 3) == "a b c"


def summaries(word_counts):
    return [ClusterSummary(i, " ".join(["w"] * n) + ".", {f"p{i}"}) for i, n in enumerate(word_counts)]


class TestAssemble:
    def test_sentence_limit(self):
        r = assemble_response(Q, summaries([10, 10, 10]), ResponseBudget(sentences=3))
        assert len(r.sentences) == 3 and not r.rewritten

    def test_sentence_limit_drops_tail(self):
        r = assemble_response(Q, summaries([5, 5, 5, 5]), ResponseBudget(sentences=3))
        assert [s.citations for s in r.sentences] == [{"p0"}, {"p1"}, {"p2"}]

    def test_word_limit_prefix(self):
        r = assemble_response(Q, summaries([200, 150, 120]), ResponseBudget(words=400))
        assert len(r.sentences) == 2 and r.word_count == 350

    def test_word_limit_stops_at_first_overflow(self):
        # a later short summary is not pulled forward past a dropped one
        r = assemble_response(Q, summaries([300, 150, 10]), ResponseBudget(words=400))
        assert len(r.sentences) == 1

    def test_empty(self):
        r = assemble_response(Q, [], ResponseBudget(sentences=3))
        assert r.no_answer and r.sentences == ()

    @pytest.mark.parametrize("limit", range(1, 60, 7))
    def test_monotone_order(self, limit):
        ss = summaries([5, 9, 3, 12, 4])
        full = assemble_response(Q, ss, ResponseBudget(words=1000))
        cut = assemble_response(Q, ss, ResponseBudget(words=limit))
        assert list(cut.sentences) == list(full.sentences[: len(cut.sentences)])
        assert cut.word_count <= limit


RESP = GroundedResponse("q1", (
    Sentence("X was born in 1901.", {"p1", "p3"}),
    Sentence("X was a chemist.", {"p2"}),
), run_tag="t")
MARKED = "X was born in 1901. [1][2] X was a chemist. [3]"


class TestMarkers:
    def test_render(self):
        assert render_with_markers(RESP) == MARKED

    def test_round_trip(self):
        numbers = {"p1": 1, "p3": 2, "p2": 3}
        sents = parse_marked_text(MARKED, numbers)
        assert [(s.text, s.citations) for s in sents] == [(s.text, s.citations) for s in RESP.sentences]

    def test_marker_before_period(self):
        sents = parse_marked_text("Born in 1901 [1]. Chemist [2][1].", {"a": 1, "b": 2})
        assert [(s.text, set(s.citations)) for s in sents] == [("Born in 1901.", {"a"}), ("Chemist.", {"a", "b"})]

    @pytest.mark.parametrize("bad", ["No markers here.", "Good [1]. Trailing text.", "Unknown [9].", "[1]"])
    def test_rejects(self, bad):
        assert parse_marked_text(bad, {"a": 1}) is None


def rewrite_provider(text):
    return ScriptedProvider([ScriptRule(f"Answer: {MARKED}", text, purpose="rewrite")])


class TestRewrite:
    def test_accepted(self):
        p = rewrite_provider("X was born in 1901 [1][2], and he worked as a chemist [3].")
        out = rewrite_fluency(Q, RESP, p, ResponseBudget(words=400))
        assert out.rewritten
        assert citations_of(out) == citations_of(RESP)
        assert out.sentences[1].text == ", and he worked as a chemist."  # unit after the first marker run

    def test_dropped_marker_falls_back(self):
        p = rewrite_provider("X was born in 1901 [1], and he was a chemist [3].")
        out = rewrite_fluency(Q, RESP, p, ResponseBudget(words=400))
        assert out is RESP and not out.rewritten
        assert len(p.calls) == 2

    def test_retry_succeeds(self):
        good = "Born in 1901 [1][2], X became a chemist [3]."
        p = ScriptedProvider([
            ScriptRule("Your previous rewrite", good, purpose="rewrite"),
            ScriptRule("", "X was born and was a chemist.", purpose="rewrite"),
        ])
        out = rewrite_fluency(Q, RESP, p, ResponseBudget(words=400))
        assert out.rewritten and citations_of(out) == citations_of(RESP)

    def test_budget_gate(self):
        too_long = "X was born in 1901 [1][2]. He was a chemist [3]. Really [3]. Truly [1]."
        out = rewrite_fluency(Q, RESP, rewrite_provider(too_long), ResponseBudget(sentences=3))
        assert out is RESP

    def test_provider_failure_falls_back(self):
        p = ScriptedProvider([ScriptRule("", error="transport", purpose="rewrite")])
        assert rewrite_fluency(Q, RESP, p, ResponseBudget(words=400)) is RESP

    def test_single_sentence(self):
        one = GroundedResponse("q1", (Sentence("Only fact.", {"p9"}),))
        p = ScriptedProvider([ScriptRule("Answer: Only fact. [1]", "The only fact. [1]")])
        out = rewrite_fluency(Q, one, p, ResponseBudget(sentences=3))
        assert out.rewritten and out.sentences[0].citations == {"p9"}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rewrite_fluency(Q, GroundedResponse("q1"), ScriptedProvider(), ResponseBudget(words=10))


FIVE = [Passage(f"d{i}", f"Passage {i} text.", i) for i in range(1, 6)]


class TestBaseline:
    def test_plain(self):
        p = ScriptedProvider([ScriptRule("", "X was born in 1901. He was a chemist.", purpose="baseline")])
        r = generate_baseline(Q, FIVE, p)
        assert len(r.sentences) == 2
        assert all(s.citations == {"d1", "d2", "d3", "d4", "d5"} for s in r.sentences)

    def test_wrong_count(self):
        with pytest.raises(ValueError):
            generate_baseline(Q, FIVE[:4], ScriptedProvider())

    def test_cot_prompt_has_demo(self):
        prompt = build_baseline_prompt(Q, FIVE, "cot")
        assert "Great Barrier Reef" in prompt and "step by step" in prompt
        assert "[5] Passage 5 text." in prompt
        assert "Great Barrier Reef" not in build_baseline_prompt(Q, FIVE, "plain")

    def test_cot_final_answer_extracted(self):
        out = "Relevant passages: [1].\nFacts: born 1901.\nFinal answer: X was born in 1901."
        r = generate_baseline(Q, FIVE, ScriptedProvider([ScriptRule("", out)]), mode="cot")
        assert [s.text for s in r.sentences] == ["X was born in 1901."]

    def test_sentence_cap(self):
        out = "One. Two. Three. Four."
        r = generate_baseline(Q, FIVE, ScriptedProvider([ScriptRule("", out)]))
        assert [s.text for s in r.sentences] == ["One.", "Two.", "Three."]

    def test_provider_failure_propagates(self):
        from nuggetgen.provider import ProviderError

        with pytest.raises(ProviderError):
            generate_baseline(Q, FIVE, ScriptedProvider([ScriptRule("", error="transport")]))
