import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alpo import codec
from alpo.prefs import (
    ExtractionStats,
    PreferenceRecord,
    betas_normalised,
    extract_preferences,
    read_records,
    write_records,
)
from alpo.sampling import SampledLine, SampledPrompt, select_chosen

DEMO_SCORES = [70, 85, 88, 82, 92]
PROMPT = codec.render_translation_prompt(
    type("B", (), {"lines": ["s0", "s1", "s2"], "context_header": ""})()
).text


def sampled(score_rows, chosen=None, pid="p#0", seed=0):
    rng = random.Random(seed)
    lines, prefix = [], []
    for i, scores in enumerate(score_rows):
        cands = [f"cand {i} {j}" for j in range(len(scores))]
        c = select_chosen(scores, rng) if chosen is None else chosen[i]
        lines.append(SampledLine(f"s{i}", cands, list(scores), c, False, list(prefix)))
        prefix.append(cands[c])
    return SampledPrompt(pid, PROMPT, lines, seed)


@pytest.mark.parametrize("chosen", [1, 2, 4])
def test_demo_segment(chosen):
    stats = ExtractionStats()
    recs = extract_preferences(sampled([DEMO_SCORES], chosen=[chosen]), stats=stats)
    assert len(recs) == 1
    r = recs[0]
    assert r.r_rejected == 85
    assert r.r_chosen in (88, 92)
    assert r.beta == 1.0 and r.w == 1.0
    assert (r.n_candidates, r.score_range) == (5, 22)
    # picking the 85 itself collides with the rejected candidate and forces a redraw
    assert stats.collisions == (1 if chosen == 1 else 0)


def test_identical_scores_give_no_records():
    stats = ExtractionStats()
    assert extract_preferences(sampled([[60] * 6, [60] * 6]), stats=stats) == []
    assert stats.gated == 2 and stats.active == 0


def test_collision_without_better_candidate_is_gated():
    # rejected is the third-lowest 80; only one candidate scores above it
    stats = ExtractionStats()
    recs = extract_preferences(sampled([[10, 80, 80, 80, 95]], chosen=[1]), stats=stats)
    assert len(recs) == 1 and recs[0].r_chosen == 95
    stats = ExtractionStats()
    assert extract_preferences(sampled([[10, 80, 80, 80, 80]], chosen=[1]), stats=stats) == []
    assert stats.gated == 1


def test_prefix_and_pool_follow_earlier_lines():
    sp = sampled([DEMO_SCORES, DEMO_SCORES, DEMO_SCORES])
    recs = extract_preferences(sp)
    assert [r.line for r in recs] == [0, 1, 2]
    for r in recs:
        assert r.prefix == codec.continuation_prefix(PROMPT, sp.lines[r.line].prefix)
        assert r.prefix_pool == [sp.lines[j].candidates for j in range(r.line)]
        assert r.materialize_prefix(1.0, random.Random(0)) == r.prefix
        assert r.materialize_prefix(0.3) == r.prefix
    mixed = recs[2].materialize_prefix(0.0, random.Random(3))
    assert mixed.startswith(PROMPT) and mixed.endswith("\n3.")


def test_weights_count_gated_segments():
    recs = extract_preferences(sampled([DEMO_SCORES, [1, 2, 3]]))
    # importance normalises over both segments: 5 / (5 + 3)
    assert len(recs) == 1 and recs[0].w == pytest.approx(5 / 8)


def test_extraction_is_seeded():
    sp = sampled([DEMO_SCORES] * 4, chosen=[1] * 4)
    a = [r.to_dict() for r in extract_preferences(sp, seed=5)]
    b = [r.to_dict() for r in extract_preferences(sp, seed=5)]
    assert a == b


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.integers(0, 100), min_size=1, max_size=12), min_size=1, max_size=8),
       st.integers(0, 1000))
def test_record_properties(rows, seed):
    recs = extract_preferences(sampled(rows, seed=seed), seed=seed)
    assert betas_normalised(recs) or not recs
    for r in recs:
        assert r.r_chosen > r.r_rejected
        assert r.n_candidates > 3 and r.score_range > 5
        assert 0 < r.w <= 1


def test_jsonl_roundtrip_and_errors():
    recs = extract_preferences(sampled([DEMO_SCORES, DEMO_SCORES]))
    buf = io.StringIO()
    assert write_records(recs, buf) == 2
    buf.seek(0)
    back = read_records(buf)
    assert back == recs
    first = recs[0].to_dict()
    assert first["schema"] == "alpo/v1"
    for key in ("prefix", "chosen", "rejected", "w", "beta", "n_candidates", "score_range", "r_chosen", "r_rejected"):
        assert key in first
    with pytest.raises(ValueError, match="line 2"):
        read_records(io.StringIO(buf.getvalue().splitlines()[0] + "\n{not json}\n"))


def test_from_dict_ignores_unknown_keys():
    d = extract_preferences(sampled([DEMO_SCORES]))[0].to_dict()
    d["extra"] = 1
    assert isinstance(PreferenceRecord.from_dict(d), PreferenceRecord)
