from __future__ import annotations

import re

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from viewgraph.dataset import Idea
from viewgraph.llm import (
    RELATION_TEMPLATE,
    VIEWPOINT_TEMPLATE,
    LlmBackend,
    LlmParseError,
    LlmTransportError,
    PromptTemplate,
    TokenUsage,
    extract_corpus,
    extract_relations,
    extract_viewpoints,
    parse_relation_response,
    parse_viewpoint_response,
    render_viewpoint_response,
    token_cost,
)

CLIP_SENTENCE = (
    "State-of-the-art computer vision systems are trained to predict a fixed set "
    "of predetermined object categories."
)


def idea(text, idea_id="i0", title="A title"):
    return Idea(id=idea_id, title=title, text=text, timestamp=0)


class TestParse:
    def test_single_item(self):
        raw = "[Sentence 1]\nA.\n[Extracted Viewpoints in Sentence 1]\n[A is true.]"
        assert parse_viewpoint_response(raw) == ["A is true."]

    def test_two_sentences_two_plus_one(self):
        raw = (
            "[Sentence 1]\nFirst sentence.\n"
            "[Extracted Viewpoints in Sentence 1]\n[s1v1]\n[s1v2]\n"
            "[Sentence 2]\nSecond sentence.\n"
            "[Extracted Viewpoints in Sentence 2]\n[s2v1]\n"
        )
        assert parse_viewpoint_response(raw) == ["s1v1", "s1v2", "s2v1"]

    def test_trailing_prose_ignored(self):
        raw = "[Extracted Viewpoints in Sentence 1]\n[only claim]\nI hope this helps!"
        assert parse_viewpoint_response(raw) == ["only claim"]

    def test_no_marker_is_parse_error(self):
        with pytest.raises(LlmParseError) as err:
            parse_viewpoint_response("Sure! The viewpoints are: one, two.")
        assert err.value.raw.startswith("Sure!")

    def test_nested_brackets_rejected(self):
        raw = "[Extracted Viewpoints in Sentence 1]\n[a [nested] claim]"
        with pytest.raises(LlmParseError):
            parse_viewpoint_response(raw)

    def test_markers_case_insensitive(self):
        raw = "[EXTRACTED VIEWPOINTS IN SENTENCE 1]\n[shouting works]"
        assert parse_viewpoint_response(raw) == ["shouting works"]

    def test_unclosed_bracket_is_trailing_prose(self):
        raw = "[Extracted Viewpoints in Sentence 1]\n[kept]\n[never closed"
        assert parse_viewpoint_response(raw) == ["kept"]


_marker = re.compile(r"^sentence\b", re.IGNORECASE)
viewpoint_text = (
    st.text(
        alphabet=st.characters(
            whitelist_categories=("L", "N", "P", "Zs"), blacklist_characters="[]{}"
        ),
        min_size=1,
        max_size=60,
    )
    .map(lambda s: " ".join(s.split()))
    .filter(lambda s: s and not _marker.match(s))
)


class TestRoundTrip:
    @given(st.lists(viewpoint_text, min_size=1, max_size=10))
    @settings(max_examples=200, deadline=None)
    def test_render_parse_round_trip(self, texts):
        raw = render_viewpoint_response([("Some sentence.", texts)])
        assert parse_viewpoint_response(raw) == texts

    def test_renderer_rejects_brackets(self):
        with pytest.raises(ValueError):
            render_viewpoint_response([("s", ["bad [claim]"])])

    def test_renderer_rejects_marker_collision(self):
        with pytest.raises(ValueError):
            render_viewpoint_response([("s", ["Sentence 3"])])


class TestMockBackend:
    def test_deterministic_over_100_calls(self):
        backend = LlmBackend(kind="mock", seed=4)
        first = extract_viewpoints(idea("One claim. Another claim."), backend)
        for _ in range(99):
            assert extract_viewpoints(idea("One claim. Another claim."), backend) == first

    def test_sentence_becomes_viewpoint_verbatim(self):
        backend = LlmBackend(kind="mock")
        texts, usage = extract_viewpoints(idea(CLIP_SENTENCE + " It also does more."), backend)
        assert texts[0] == CLIP_SENTENCE
        assert usage.total == usage.prompt_tokens + usage.completion_tokens
        assert usage.prompt_tokens > 0

    def test_empty_text_rejected_at_idea_boundary(self):
        with pytest.raises(ValueError):
            Idea(id="x", title="", text="", timestamp=0)


class TestRelations:
    def test_pair_with_however_opposing(self):
        views = ["Systems predict fixed categories.", "Fixed categories limit generality."]
        raw = (
            "{[Systems predict fixed categories.], [however], [opposing], "
            "[Fixed categories limit generality.]}"
        )
        pairs, dropped = parse_relation_response(raw, views)
        assert dropped == 0
        assert len(pairs) == 1
        assert pairs[0].polarity == "opposing"
        assert pairs[0].connector == "however"
        assert pairs[0].left == views[0] and pairs[0].right == views[1]

    def test_unmatched_endpoint_dropped_and_counted(self):
        views = ["alpha beta", "gamma delta"]
        raw = "{[alpha beta], [so], [supporting], [made up claim]}"
        pairs, dropped = parse_relation_response(raw, views)
        assert pairs == []
        assert dropped == 1

    def test_endpoint_matching_is_case_and_space_insensitive(self):
        views = ["Alpha  Beta", "Gamma Delta"]
        raw = "{[alpha beta], [thus], [supporting], [GAMMA   DELTA]}"
        pairs, _ = parse_relation_response(raw, views)
        assert len(pairs) == 1
        assert pairs[0].left == "Alpha  Beta"

    def test_duplicates_collapsed(self):
        views = ["a claim", "b claim"]
        raw = (
            "{[a claim], [so], [supporting], [b claim]}\n"
            "{[b claim], [thus], [supporting], [a claim]}"
        )
        pairs, _ = parse_relation_response(raw, views)
        assert len(pairs) == 1

    def test_empty_completion_is_empty_result(self):
        result = extract_relations(
            ["first claim", "second claim"],
            idea("First claim. Second claim."),
            LlmBackend(kind="mock", seed=0),
            template=PromptTemplate(name="relation_extraction", body="{title}{abstract}{viewpoints}"),
        )
        assert isinstance(result.pairs, list)

    def test_needs_two_viewpoints(self):
        with pytest.raises(ValueError):
            extract_relations(["only one"], idea("One."), LlmBackend(kind="mock"))

    def test_mock_relations_deterministic(self):
        backend = LlmBackend(kind="mock", seed=9)
        the_idea = idea("A one. B two. C three. D four.")
        views, _ = extract_viewpoints(the_idea, backend)
        first = extract_relations(views, the_idea, backend)
        second = extract_relations(views, the_idea, backend)
        assert first.pairs == second.pairs
        assert first.pairs  # consecutive pairing yields at least one pair


class TestTokenCost:
    def test_paper_scale_price(self):
        usage = TokenUsage(prompt_tokens=1000, completion_tokens=968, price_per_million=0.20)
        avg_tokens, avg_cost = token_cost([usage])
        assert avg_tokens == 1968
        assert avg_cost == pytest.approx(0.000394, abs=1e-6)

    def test_zero_price_zero_cost(self):
        _, cost = token_cost([TokenUsage(10, 10, 0.0)])
        assert cost == 0.0

    def test_mean_of_totals(self):
        usages = [TokenUsage(60, 40, 1.0), TokenUsage(200, 100, 1.0)]
        avg_tokens, _ = token_cost(usages)
        assert avg_tokens == 200

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            token_cost([])

    @given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=50, deadline=None)
    def test_total_is_sum(self, p, c):
        assert TokenUsage(p, c).total == p + c


class TestTemplates:
    def test_render_binds_all_placeholders(self):
        out = VIEWPOINT_TEMPLATE.render(title="T", abstract="A")
        assert "{title}" not in out and "{abstract}" not in out

    def test_unbound_placeholder_rejected(self):
        with pytest.raises(ValueError, match="viewpoints"):
            RELATION_TEMPLATE.render(title="T", abstract="A")


class TestRemoteBackend:
    def _response(self, payload, status=200):
        class Resp:
            status_code = status
            text = str(payload)

            def raise_for_status(self):
                if status >= 400:
                    raise requests.HTTPError(f"{status}")

            def json(self):
                return payload

        return Resp()

    def test_retries_then_succeeds(self, monkeypatch):
        calls = {"n": 0}
        good = {
            "choices": [{"message": {"content": "[Extracted Viewpoints in Sentence 1]\n[ok]"}}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 7},
        }

        def fake_post(url, **kw):
            calls["n"] += 1
            if calls["n"] < 3:
                raise requests.ConnectionError("down")
            return self._response(good)

        monkeypatch.setattr(requests, "post", fake_post)
        backend = LlmBackend(kind="remote", endpoint="http://x", model="m", backoff=0.0)
        texts, usage = extract_viewpoints(idea("Anything."), backend)
        assert texts == ["ok"]
        assert calls["n"] == 3
        assert (usage.prompt_tokens, usage.completion_tokens) == (5, 7)

    def test_transport_error_carries_attempts(self, monkeypatch):
        def fake_post(url, **kw):
            raise requests.ConnectionError("down")

        monkeypatch.setattr(requests, "post", fake_post)
        backend = LlmBackend(kind="remote", endpoint="http://x", model="m", backoff=0.0, max_retries=3)
        with pytest.raises(LlmTransportError) as err:
            extract_viewpoints(idea("Anything."), backend)
        assert err.value.attempts == 3

    def test_usage_fallback_counts_words(self, monkeypatch):
        good = {"choices": [{"message": {"content": "[Extracted Viewpoints in Sentence 1]\n[a b c]"}}]}
        monkeypatch.setattr(requests, "post", lambda url, **kw: self._response(good))
        backend = LlmBackend(kind="remote", endpoint="http://x", model="m", backoff=0.0)
        _, usage = extract_viewpoints(idea("Three words here."), backend)
        assert usage.completion_tokens == len(good["choices"][0]["message"]["content"].split())
        assert usage.prompt_tokens > 0


class TestExtractCorpus:
    def test_summary_reports_aggregates(self):
        ideas = [
            idea("One claim. Two claim. Three claim.", "a"),
            idea("Only claim here.", "b"),
        ]
        records, summary = extract_corpus(ideas, LlmBackend(kind="mock"), relations=True)
        assert [r.idea_id for r in records] == ["a", "b"]
        assert summary["avg_viewpoints_per_idea"] == pytest.approx(2.0)
        assert summary["avg_words_per_viewpoint"] > 0
        assert "avg_tokens_per_evaluation" in summary
        assert "total_pairs" in summary and "avg_edge_density" in summary

    def test_density_definition(self):
        # 3 viewpoints, mock pairs consecutive (0-1): 1 pair over C(3,2)=3
        records, summary = extract_corpus(
            [idea("A one. B two. C three.", "a")], LlmBackend(kind="mock"), relations=True
        )
        assert len(records[0].viewpoints) == 3
        assert summary["avg_edge_density"] == pytest.approx(len(records[0].pairs) / 3)
