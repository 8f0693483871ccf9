import random
from fractions import Fraction

from hypothesis import given, settings
from hypothesis import strategies as st

from generators import random_window
from helpers import ALICE, BOB, dep, join_problem_fixture, wd

from swaptrace.matchmaker import (MatchKind, MatchParams, check_interleaving, round1_intra_tx, round3_classify,
                                  run_matchmaker, within_tolerance)
from swaptrace.trace_model import DepositRecord, ViolationKind

K = ViolationKind


def names(recs, fixture):
    rev = {id(v): k for k, v in fixture.items()}
    return sorted(rev[id(r)] for r in recs)


def kinds(report):
    return [v.kind for v in report.violations]


def test_tolerance_predicate():
    assert within_tolerance(100, 95, Fraction(10))
    assert within_tolerance(100, 90, Fraction(10))
    assert not within_tolerance(100, 89, Fraction(10))
    assert within_tolerance(0, 0, Fraction(0))
    assert not within_tolerance(1, 0, Fraction(0))


def test_params_validation():
    import pytest
    for bad in ({"tolerance_pct": 100}, {"tolerance_pct": -1}, {"max_group": 0}, {"timeout_blocks": -1}):
        with pytest.raises(ValueError):
            MatchParams(**bad)


def test_intra_tx_exact_and_within_tolerance():
    for d, w in ((10, 10), (100, 95)):
        r = run_matchmaker([dep(d, "t", 1, seq="0")], [wd(w, "t", 1, seq="1")])
        assert not r.violations
        (m,) = r.matches
        assert m.kind is MatchKind.ATOMIC_SWAP and m.intra_tx


def test_intra_tx_disagreement_is_merged():
    matches, res_d, res_w = round1_intra_tx([dep(5, "t", 1, seq="0")], [wd(8, "t", 1, seq="1")])
    assert matches == []
    (merged,) = res_d + res_w
    assert merged.net == -3
    r = run_matchmaker([dep(5, "t", 1, seq="0")], [wd(8, "t", 1, seq="1")])
    (v,) = r.violations
    assert v.kind is K.IV_LOWER_VALUE_DEPOSIT and v.value_gap == -3 and len(v.records) == 2


def test_cross_tx_match_and_block_gap():
    r = run_matchmaker([dep(10, "a", 5), dep(30, "c", 9)], [wd(10, "b", 6)])
    (m,) = r.matches
    assert not m.intra_tx and m.block_gap == 1
    assert kinds(r) == [K.II_STANDALONE_DEPOSIT]


def test_account_mismatch_is_kind_three():
    r = run_matchmaker([dep(10, "a", 1, account=ALICE)], [wd(10, "b", 2, account=BOB)])
    assert r.matches == [] and kinds(r) == [K.III_ACCOUNT_MISMATCH]


def test_one_deposit_two_withdrawals():
    r = run_matchmaker([dep(50, "a", 1), dep(99, "z", 9)], [wd(40, "b", 2), wd(10, "c", 5)])
    (m,) = r.matches
    assert len(m.records) == 3


def test_timeout_caps_cross_tx_gap():
    params = MatchParams(timeout_blocks=3)
    r = run_matchmaker([dep(10, "a", 1)], [wd(10, "b", 9)], params)
    assert r.matches == []
    assert sorted(kinds(r), key=str) == sorted([K.I_STANDALONE_WITHDRAWAL, K.II_STANDALONE_DEPOSIT], key=str)


def test_join_problem_fixture():
    f = join_problem_fixture()
    deps = [v for v in f.values() if isinstance(v, DepositRecord)]
    wds = [v for v in f.values() if not isinstance(v, DepositRecord)]
    r = run_matchmaker(deps, wds)
    assert sorted(names(m.records, f) for m in r.matches) == [["mint1", "tf2", "tf3"], ["swap1", "tff1"]]
    got = sorted((v.kind.value, tuple(names(v.records, f))) for v in r.violations)
    assert got == sorted([(K.II_STANDALONE_DEPOSIT.value, ("tf1",)), (K.I_STANDALONE_WITHDRAWAL.value, ("swap2",)),
                          (K.IV_LOWER_VALUE_DEPOSIT.value, ("swap3", "tf4"))])
    (iv,) = [v for v in r.violations if v.kind is K.IV_LOWER_VALUE_DEPOSIT]
    assert iv.value_gap == -20


def test_interleaving_automaton():
    seq = [dep(10, "t", 1, seq="0"), wd(10, "t", 1, seq="1"), dep(7, "t", 1, seq="2"), wd(7, "t", 1, seq="3")]
    assert check_interleaving(seq) == []
    inter = [dep(10, "t", 1, seq="0"), dep(7, "t", 1, seq="1"), wd(7, "t", 1, seq="2"), wd(10, "t", 1, seq="3")]
    assert check_interleaving(inter) == [inter[2]]
    assert check_interleaving([wd(9, "t", 1, seq="0")]) == []


def test_interleaving_reaches_the_report():
    inter = [dep(10, "t", 1, seq="0"), dep(20, "t", 1, seq="1"), wd(10, "t", 1, seq="2"), wd(20, "t", 1, seq="3")]
    r = run_matchmaker(inter[:2], inter[2:])
    assert K.INTERLEAVED in kinds(r)
    seq = [dep(10, "t", 1, seq="0"), wd(10, "t", 1, seq="1"), dep(20, "t", 1, seq="2"), wd(20, "t", 1, seq="3")]
    r = run_matchmaker([seq[0], seq[2]], [seq[1], seq[3]])
    assert r.violations == []


def test_round3_edges():
    assert round3_classify([]) == []
    (v,) = run_matchmaker([dep(10, "a", 1)], []).violations
    assert v.kind is K.II_STANDALONE_DEPOSIT


def check_report(deps, wds, report, params):
    ids = [id(r) for r in deps + wds]
    out = [id(r) for g in report.matches + report.violations for r in g.records]
    assert sorted(ids) == sorted(out)
    pos = {id(r): r.key for r in deps + wds}
    for m in report.matches:
        assert within_tolerance(sum(d.value for d in m.deposits), sum(w.expected_value_in for w in m.withdrawals),
                                params.tolerance_pct)
        if m.intra_tx:
            continue
        accts = {d.depositor for d in m.deposits} | {w.withdrawer for w in m.withdrawals}
        assert len(accts) == 1
        # temporal: every withdrawal of a cross-tx match follows all its deposits
        assert min(pos[id(w)] for w in m.withdrawals) > max(pos[id(d)] for d in m.deposits)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_partition_and_soundness(seed):
    deps, wds = random_window(random.Random(seed), max_side=6)
    params = MatchParams()
    check_report(deps, wds, run_matchmaker(deps, wds, params), params)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**9))
def test_deterministic(seed):
    deps, wds = random_window(random.Random(seed))
    assert run_matchmaker(deps, wds).to_dict() == run_matchmaker(list(deps), list(wds)).to_dict()
