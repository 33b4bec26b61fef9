import pytest
from hypothesis import given
from hypothesis import strategies as st

from lsalign.core import Vocabulary
from lsalign.scorer import (
    Direction,
    DuplicateKey,
    PosteriorRow,
    ProtocolError,
    ScorerRequest,
    ScriptedScorer,
    UnknownKey,
    UnknownSegment,
    dump_scripted_rows,
    expand_sparse_row,
    load_scripted_scorer,
    vocab_digest,
)


def test_posterior_row_validates_sum():
    PosteriorRow((0.5, 0.3, 0.2))
    with pytest.raises(ValueError):
        PosteriorRow((0.5, 0.3, 0.18))  # sums to 0.98
    with pytest.raises(ValueError):
        PosteriorRow((0.7, 0.5, -0.2))


def test_posterior_row_accessors():
    row = PosteriorRow((0.81, 0.12, 0.07))
    assert row.vocab_size == 2
    assert row.eos_mass == 0.07
    assert row.mass(0) == 0.81
    assert not row.eos_is_argmax()
    assert PosteriorRow((0.2, 0.2, 0.6)).eos_is_argmax()


def test_eos_argmax_tie_does_not_fire():
    assert not PosteriorRow((0.5, 0.0, 0.5)).eos_is_argmax()


def test_expand_sparse_row_spreads_remainder_uniformly():
    row = expand_sparse_row({"1": 0.8, "eos": 0.1}, 0.1, 5)
    assert row.probs[1] == 0.8
    assert row.eos_mass == 0.1
    for i in (0, 2, 3, 4):
        assert row.probs[i] == pytest.approx(0.1 / 4)


def test_expand_sparse_row_requires_eos():
    with pytest.raises(ProtocolError, match="eos"):
        expand_sparse_row({"0": 0.9}, 0.1, 3)


def test_row_summing_below_one_is_protocol_error():
    # a scorer answering with total mass 0.98 violates the row contract
    with pytest.raises(ProtocolError):
        expand_sparse_row({"0": 0.88, "eos": 0.1}, 0.0, 1)


def test_expand_sparse_row_rejects_bad_keys_and_masses():
    with pytest.raises(ProtocolError):
        expand_sparse_row({"x": 0.9, "eos": 0.1}, 0.0, 3)
    with pytest.raises(ProtocolError):
        expand_sparse_row({"7": 0.9, "eos": 0.1}, 0.0, 3)
    with pytest.raises(ProtocolError):
        expand_sparse_row({"0": 0.9, "eos": 0.2}, 0.0, 3)  # sums to 1.1
    with pytest.raises(ProtocolError):
        expand_sparse_row({"0": 0.5, "eos": 0.1}, -0.4, 3)


@given(
    st.integers(min_value=1, max_value=12),
    st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=6),
    st.floats(min_value=0.0, max_value=0.5),
)
def test_expand_sparse_row_always_normalized(vocab_size, weights, eos_w):
    listed = {str(i): w for i, w in enumerate(weights[:vocab_size])}
    total = sum(listed.values()) + eos_w
    listed = {k: v / total for k, v in listed.items()}
    listed["eos"] = eos_w / total
    remainder = max(0.0, 1.0 - sum(listed.values()))
    if remainder > 1e-9 and len(listed) - 1 == vocab_size:
        return  # nothing to spread onto
    row = expand_sparse_row(listed, remainder, vocab_size)
    assert abs(sum(row.probs) - 1.0) <= 1e-6


def test_scripted_scorer_lookup_and_strict_mode():
    row = expand_sparse_row({"1": 0.8, "eos": 0.1}, 0.1, 3)
    scorer = ScriptedScorer({("s1", Direction.FORWARD, (0,)): row}, vocab_size=3)
    got = scorer.next_posterior(ScorerRequest("s1", Direction.FORWARD, (0,)))
    assert got == row
    with pytest.raises(UnknownKey):
        scorer.next_posterior(ScorerRequest("s1", Direction.FORWARD, (0, 1)))
    with pytest.raises(UnknownSegment):
        scorer.next_posterior(ScorerRequest("nope", Direction.FORWARD, (0,)))


def test_scripted_scorer_default_row():
    row = expand_sparse_row({"1": 0.8, "eos": 0.1}, 0.1, 3)
    default = expand_sparse_row({"eos": 1.0}, 0.0, 3)
    scorer = ScriptedScorer({("s1", Direction.FORWARD, (0,)): row}, 3, default_row=default)
    assert scorer.next_posterior(ScorerRequest("s1", Direction.BACKWARD, ())) == default


def test_scripted_scorer_is_deterministic():
    row = expand_sparse_row({"0": 0.6, "eos": 0.4}, 0.0, 2)
    scorer = ScriptedScorer({("s1", Direction.FORWARD, (1,)): row}, 2)
    req = ScorerRequest("s1", Direction.FORWARD, (1,))
    assert scorer.next_posterior(req) == scorer.next_posterior(req)


def test_load_scripted_scorer_roundtrip(tmp_path):
    rows = {
        ("s1", Direction.FORWARD, (0, 1)): expand_sparse_row({"2": 0.7, "eos": 0.2}, 0.1, 4),
        ("s1", Direction.BACKWARD, ()): expand_sparse_row({"eos": 1.0}, 0.0, 4),
    }
    path = tmp_path / "rows.tsv"
    dump_scripted_rows(rows, path)
    scorer = load_scripted_scorer(path, 4)
    for (sid, direction, prefix), row in rows.items():
        got = scorer.next_posterior(ScorerRequest(sid, direction, prefix))
        assert got.probs == pytest.approx(row.probs, abs=1e-12)


def test_load_scripted_scorer_duplicate_key(tmp_path):
    path = tmp_path / "dup.tsv"
    path.write_text(
        "s1\tforward\t0\t1:0.9,eos:0.1\ns1\tforward\t0\t1:0.8,eos:0.2\n", encoding="utf-8"
    )
    with pytest.raises(DuplicateKey):
        load_scripted_scorer(path, 2)


@pytest.mark.parametrize(
    "line",
    [
        "s1\tforward\t0",  # wrong field count
        "s1\tsideways\t0\t1:0.9,eos:0.1",  # bad direction
        "s1\tforward\tzero\t1:0.9,eos:0.1",  # bad prefix ids
        "s1\tforward\t0\t1:0.9",  # no eos entry
        "s1\tforward\t0\t1:high,eos:0.1",  # bad probability
        "s1\tforward\t0\t1:0.9,1:0.05,eos:0.05",  # token listed twice
    ],
)
def test_load_scripted_scorer_parse_errors_carry_line_numbers(tmp_path, line):
    path = tmp_path / "bad.tsv"
    path.write_text("# comment\n" + line + "\n", encoding="utf-8")
    with pytest.raises(ProtocolError, match=":2"):
        load_scripted_scorer(path, 2)


def test_vocab_digest_tracks_token_list():
    a = vocab_digest(Vocabulary(("a", "b")))
    assert a == vocab_digest(Vocabulary(("a", "b")))
    assert a != vocab_digest(Vocabulary(("b", "a")))
    assert a != vocab_digest(Vocabulary(("a", "b", "c")))
