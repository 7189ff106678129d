from __future__ import annotations

import itertools
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from intentclar.metrics import (
    EmptyInput,
    SessionTally,
    aggregate,
    aggregate_values,
    f1_sets,
    format_table,
    harmonic,
    normalize_value,
)

items = st.lists(st.sampled_from("abcd"), max_size=6)


def brute_f1(pred, gold):
    """Best one-to-one matching of equal items, found by trying every pairing."""
    if not pred and not gold:
        return 1.0
    small, big = (pred, gold) if len(pred) <= len(gold) else (gold, pred)
    best = 0
    for perm in itertools.permutations(range(len(big)), len(small)):
        best = max(best, sum(small[i] == big[j] for i, j in enumerate(perm)))
    return float(Fraction(2 * best, len(pred) + len(gold)))


def test_f1_examples():
    assert f1_sets([], []) == 1.0
    assert f1_sets(["a"], []) == 0.0
    assert f1_sets(["a", "b"], ["a", "c"]) == 0.5
    assert f1_sets(["a", "a"], ["a"]) == pytest.approx(2 / 3)


@given(items, items)
def test_f1_matches_brute_force_and_is_symmetric(p, g):
    v = f1_sets(p, g)
    assert 0.0 <= v <= 1.0
    assert v == f1_sets(g, p)
    assert v == pytest.approx(brute_f1(p, g))


@pytest.mark.parametrize("icr,ce,cps", [(83.82, 70.66, 76.68), (89.63, 64.36, 74.92)])
def test_reference_cps_rows(icr, ce, cps):
    assert abs(harmonic(icr, ce) - cps) <= 0.01


def tally(rid="r", level=1, clarified=1, unspecified=1, questions=1, solved=True, apis=("f",), triples=(("f", "a", "1"),)):
    return SessionTally(
        rid, level, clarified, unspecified, questions, solved,
        list(apis) if solved else [], list(apis), list(triples) if solved else [], list(triples),
    )


tallies = st.builds(
    lambda u, c, extra, solved, level: tally(
        clarified=min(c, u), unspecified=u, questions=min(c, u) + extra, solved=solved, level=level
    ),
    st.integers(0, 5), st.integers(0, 5), st.integers(0, 5), st.booleans(), st.integers(1, 3),
)


@given(st.lists(tallies, min_size=1, max_size=8))
def test_cps_identity_and_ranges(ts):
    r = aggregate(ts)
    for rep in [r, *r.by_level.values()]:
        if rep.icr + rep.ce > 0:
            assert abs(rep.cps - 2 * rep.icr * rep.ce / (rep.icr + rep.ce)) < 1e-9
        for m in ("icr", "ce", "cps", "scr", "tss", "prs"):
            assert 0.0 <= getattr(rep, m) <= 1.0


@given(st.lists(tallies, min_size=1, max_size=8), st.integers(1, 4))
def test_perfect_session_never_lowers_scores(ts, n):
    before = aggregate(ts)
    after = aggregate(ts + [tally(clarified=n, unspecified=n, questions=n)])
    for m in ("icr", "scr", "tss", "prs"):
        assert getattr(after, m) >= getattr(before, m) - 1e-12


def test_single_oracle_session():
    r = aggregate([tally(clarified=3, unspecified=3, questions=3)])
    assert (r.icr, r.ce, r.cps, r.scr, r.tss, r.prs) == (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert r.ir == 3


def test_unsolved_sessions_score_zero():
    r = aggregate([tally(solved=False)])
    assert r.scr == r.tss == r.prs == 0.0


def test_ce_edge_cases():
    assert aggregate_values(0, 0, 0).ce == 1.0
    assert aggregate_values(0, 2, 0).ce == 0.0
    assert aggregate_values(0, 0, 0).icr == 1.0


def test_micro_mode_differs_from_macro():
    ts = [tally(apis=("f",)), tally(apis=("f", "g", "h", "i"), solved=False)]
    assert aggregate(ts).tss == 0.5
    assert aggregate(ts, tss_mode="micro").tss == pytest.approx(2 / 6)


def test_empty_input_raises():
    with pytest.raises(EmptyInput):
        aggregate([])


def test_format_table_layout():
    r = aggregate([tally(level=1), tally(level=3, clarified=0, questions=2)])
    lines = format_table(r).splitlines()
    assert lines[0].split() == ["Level", "ICR", "CE", "CPS", "IR", "SCR", "TSS", "PRS"]
    assert [l.split()[0:2] for l in lines[1:3]] == [["Level", "I"], ["Level", "III"]]
    assert lines[-1].split()[0] == "Overall" and lines[1].split()[2] == "100.00"


def test_tally_round_trip():
    t = tally()
    assert SessionTally.from_dict(t.to_dict()) == t


def test_normalize_value():
    assert normalize_value("  New   York\t") == "new york"
