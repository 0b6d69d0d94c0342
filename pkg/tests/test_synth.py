import itertools

import pytest
from hypothesis import given, strategies as st

from pivotdecode.corpus import ConflictSample
from pivotdecode.errors import ArityError, ClientError, NoCandidate, RangeError, ValidationError
from pivotdecode.synth import (
    DEFAULT_DEMONSTRATIONS,
    MockRewriter,
    MockScorer,
    Rejection,
    RemoteRewriter,
    RemoteScorer,
    RewriteRequest,
    build_sample,
    plan_substitutions,
    render_score_prompt,
    rewrite_passage,
    select_counterfactual,
    vote_of_confidence,
)


class FixedScorer:
    def __init__(self, value):
        self.value = value
        self.seeds = []

    def score(self, sample, seed):
        self.seeds.append(seed)
        return self.value


class EchoRewriter:
    def rewrite(self, req):
        return req.original


# -- counterfactual selection -------------------------------------------------------


def test_select_same_category_candidate():
    cands = [("Big Ben", "clock tower"), ("Statue of Liberty", "landmark"), ("Louvre", "museum")]
    assert select_counterfactual(("Eiffel Tower", "landmark"), cands, seed=3) == "Statue of Liberty"


def test_select_without_feasible_candidate():
    with pytest.raises(NoCandidate):
        select_counterfactual(("Eiffel Tower", "landmark"), [("Louvre", "museum"), ("eiffel tower", "landmark")])


@given(st.integers(0, 2**64 - 1))
def test_singleton_is_chosen_for_any_seed(seed):
    cands = [("Rome", "city"), ("Lisbon", "city"), ("Spain", "country")]
    assert select_counterfactual(("Rome", "city"), cands, seed) == "Lisbon"


def test_selection_is_seeded():
    cands = [(c, "city") for c in ("Lisbon", "Madrid", "Oslo", "Vienna", "Prague")]
    picks = {select_counterfactual(("Rome", "city"), cands, s) for s in range(40)}
    assert len(picks) > 1
    assert select_counterfactual(("Rome", "city"), cands, 7) == select_counterfactual(("Rome", "city"), cands, 7)


# -- rewrite ------------------------------------------------------------------------


def paris_request():
    return RewriteRequest("X stands in Paris", "Paris", "New York", "The statue stands in New York. It opened in 1886.")


def test_request_preconditions():
    with pytest.raises(ValidationError):
        RewriteRequest("X stands in Lyon", "Paris", "New York", "ref")
    with pytest.raises(ValidationError):
        RewriteRequest("X stands in Paris", "Paris", "New York", "   ")
    with pytest.raises(ValidationError):
        RewriteRequest("X stands in Paris", "Paris", " paris", "ref")


def test_request_defaults_to_three_demonstrations():
    req = paris_request()
    assert len(req.demonstrations) == 3 == len(DEFAULT_DEMONSTRATIONS)
    prompt = req.render()
    for needle in ("Paris", "New York", "The statue stands in New York.", "X stands in Paris"):
        assert needle in prompt
    assert prompt.count("Example input:") == 3


def test_mock_rewriter():
    out = rewrite_passage(paris_request(), MockRewriter())
    assert "New York" in out and "Paris" not in out
    assert out == "X stands in New York The statue stands in New York."


def test_echo_rewriter_fails_validation():
    with pytest.raises(ValidationError):
        rewrite_passage(paris_request(), EchoRewriter())


def test_remote_rewriter_echo_fails_validation(http_server):
    http_server.respond = lambda path, req: (200, {"text": req["request"]["original"]})
    client = RemoteRewriter(http_server.url)
    try:
        with pytest.raises(ValidationError):
            rewrite_passage(paris_request(), client)
    finally:
        client.close()
    path, body = http_server.requests[0]
    assert path == "/v1/rewrite"
    assert body["request"]["p_neg"] == "New York"
    assert "New York" in body["prompt"]


def test_remote_rewriter_success_and_errors(http_server):
    client = RemoteRewriter(http_server.url)
    try:
        http_server.respond = lambda path, req: (200, {"text": "X stands in New York."})
        assert rewrite_passage(paris_request(), client) == "X stands in New York."
        http_server.respond = lambda path, req: (200, {"txt": "x"})
        with pytest.raises(ClientError):
            client.rewrite(paris_request())
        http_server.respond = lambda path, req: (503, {"error": "busy"})
        with pytest.raises(ClientError):
            client.rewrite(paris_request())
    finally:
        client.close()


def test_remote_scorer(http_server, sample):
    http_server.respond = lambda path, req: (200, {"score": 7 if req["seed"] % 2 else 8})
    scorer = RemoteScorer(http_server.url)
    try:
        assert scorer.score(sample, 3) == 7
        assert scorer.score(sample, 4) == 8
        http_server.respond = lambda path, req: (200, {"score": "8"})
        with pytest.raises(ClientError):
            scorer.score(sample, 1)
    finally:
        scorer.close()
    assert http_server.requests[0][1]["prompt"] == render_score_prompt(sample)


def test_mock_scorer_range_and_determinism(sample):
    scorer = MockScorer(base=9, spread=2)
    scores = [scorer.score(sample, s) for s in range(200)]
    assert set(scores) == {7, 8, 9}
    assert scores == [scorer.score(sample, s) for s in range(200)]
    assert MockScorer(base=12, spread=0).score(sample, 0) == 10


# -- vote of confidence ---------------------------------------------------------------


def test_vote_examples():
    assert vote_of_confidence([8] * 10)
    assert not vote_of_confidence([9] * 9 + [5])
    assert not vote_of_confidence([7] * 10)


def test_vote_errors():
    with pytest.raises(ArityError):
        vote_of_confidence([8] * 9)
    with pytest.raises(RangeError):
        vote_of_confidence([8] * 9 + [11])
    with pytest.raises(RangeError):
        vote_of_confidence([8] * 9 + [-1])
    with pytest.raises(RangeError):
        vote_of_confidence([8] * 9 + [8.5])


def test_vote_boundary_sweep():
    # Every (lowest score, value of the other nine) pair on the 0..10 grid.
    for low, rest in itertools.product(range(11), range(11)):
        scores = [low] + [rest] * 9
        assert vote_of_confidence(scores) == (low + 9 * rest >= 80 and min(low, rest) >= 6)


@given(st.lists(st.integers(0, 10), min_size=10, max_size=10))
def test_vote_rule(scores):
    assert vote_of_confidence(scores) == (sum(scores) >= 80 and min(scores) >= 6)


# -- pipeline -------------------------------------------------------------------------


def planned(sample, pivot="nationality", passage=1):
    entry = {
        "passage": passage,
        "pivot_id": pivot,
        "category": "nationality",
        "candidates": [["Portuguese", "nationality"], ["Paris", "city"]],
        "references": {"Portuguese": "The painter was widely described as Portuguese. More text."},
    }
    return sample.replace(extra={"substitutions": [entry]}, conflict_label="no-conflict", spans=sample.spans)


def test_zero_substitutions_keep_sample(sample):
    out = build_sample(sample, [], MockRewriter(), MockScorer(10, 0))
    assert isinstance(out, ConflictSample)
    assert out.conflict_label == "no-conflict"
    assert out.passages == sample.passages
    assert out.extra["quality_scores"] == [10] * 10


def test_answer_pivot_substitution_is_high_conflict(sample):
    base = planned(sample)
    subs = plan_substitutions(base, seed=1)
    out = build_sample(base, subs, MockRewriter(), MockScorer(9, 1), seed=1)
    assert out.conflict_label == "high-conflict"
    assert "Portuguese" in out.passages[1] and "Spanish" not in out.passages[1]
    moved = [s for s in out.spans if s.passage_id == 1]
    assert [s.surface for s in moved] == ["Portuguese"]
    out.validate()
    assert "substitutions" not in out.extra


def test_non_answer_substitution_is_subtle(sample):
    req = RewriteRequest(sample.passages[2], "Paris", "Madrid", "The painting hangs in Madrid.", pivot_id="painting")
    out = build_sample(sample, [(2, req)], MockRewriter(), MockScorer(10, 0))
    assert out.conflict_label == "subtle-conflict"


def test_low_scores_reject_with_stored_scores(sample):
    scorer = FixedScorer(5)
    out = build_sample(sample, [], MockRewriter(), scorer)
    assert isinstance(out, Rejection)
    assert out.scores == (5,) * 10
    assert out.to_dict() == {"sample_id": "s1", "scores": [5] * 10, "reason": "vote-of-confidence"}
    assert len(set(scorer.seeds)) == 10


def test_substitution_index_checks(sample):
    req = RewriteRequest(sample.passages[0], "Italian", "Greek", "He was Greek.")
    with pytest.raises(ValidationError):
        build_sample(sample, [(0, req), (0, req)], MockRewriter(), MockScorer())
    with pytest.raises(ValidationError):
        build_sample(sample, [(5, req)], MockRewriter(), MockScorer())
    with pytest.raises(ValidationError):
        build_sample(sample, [(1, req)], MockRewriter(), MockScorer())


def test_pipeline_is_deterministic(sample):
    base = planned(sample)
    a = build_sample(base, plan_substitutions(base, 4), MockRewriter(), MockScorer(9, 2), seed=4)
    b = build_sample(base, plan_substitutions(base, 4), MockRewriter(), MockScorer(9, 2), seed=4)
    assert a == b
    assert a.extra == b.extra


def test_plan_errors(sample):
    base = planned(sample, passage=2)
    with pytest.raises(ValidationError):
        plan_substitutions(base)
    entry = dict(planned(sample).extra["substitutions"][0], references={})
    with pytest.raises(ValidationError):
        plan_substitutions(sample.replace(extra={"substitutions": [entry]}))
