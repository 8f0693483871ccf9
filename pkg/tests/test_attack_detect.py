import math
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from generators import POOL, T0, T1, _call
from indicator_fixtures import ground_truth_vectors, held_out_vectors

from swaptrace.amm_sim import random_scenario, simulate, strategy_scenario
from swaptrace.attack_detect import (INF, AccountLabel, DepositPattern, DetectionParams, IndicatorVector, Label,
                                     NoPositives, attribute_pattern, calibrate, classify_account, compute_indicators,
                                     detect_frontrunning, expand_attempts, fmt_num, fired, indicator_csv,
                                     indicators_for_report, parse_num, spearman, theft_cases)
from swaptrace.ingest import PoolInfo, PoolRegistry
from swaptrace.pipeline import detect
from swaptrace.trace_model import ViolationKind

THIEF = "0x00000000000000000000000000000000000000e1"
RIVAL = "0x00000000000000000000000000000000000000e2"
OWNER = "0x00000000000000000000000000000000000000e3"
REG = PoolRegistry([PoolInfo(POOL, T0, T1)])


def swap(txid, block, who, amount_in=100, success=True, idx=0):
    return _call(txid, block, "0", who, POOL, "swap",
                 {"amountIn": amount_in, "amountOut": 90, "to": who, "tokenIn": T0}, success=success, tx_index=idx)


def rebase_then_claim(rival_block=None):
    calls = [_call("0xr", 1, "0", OWNER, T0, "rebase", {"factor": "11/10"}), swap("0xw", 2, THIEF)]
    if rival_block is not None:
        calls.append(swap("0xc", rival_block, RIVAL, success=False))
    return calls


def thefts(calls):
    report = detect(calls, REG)
    return report, [v for v in report.violations if v.kind is ViolationKind.I_STANDALONE_WITHDRAWAL]


def test_rebase_claim_is_p1():
    calls = rebase_then_claim()
    _, (v,) = thefts(calls)
    att = attribute_pattern(v, calls)
    assert (att.pattern, att.source_block, att.gap) == (DepositPattern.P1_NON_STANDARD_BALANCE, 1, 1)
    assert not detect_frontrunning(v, calls)


def test_interest_claim_is_p2():
    calls = [swap("0xs", 3, RIVAL, idx=0),
             _call("0xw", 40, "0", THIEF, T0, "accrueInterest", {}),
             _call("0xw", 40, "1", THIEF, POOL, "swap", {"amountIn": 5, "amountOut": 4, "to": THIEF, "tokenIn": T0})]
    # the rival's lone swap is itself a standalone withdrawal; only the thief's claim is P2
    report, vs = thefts(calls)
    (v,) = [v for v in vs if v.withdrawals[0].withdrawer == THIEF]
    att = attribute_pattern(v, calls)
    assert (att.pattern, att.gap) == (DepositPattern.P2_INTEREST, 37)


def test_external_transfer_is_p3():
    calls = [_call("0xd", 1, "0", OWNER, T0, "transfer", {"to": POOL, "amount": 100}), swap("0xw", 4, THIEF)]
    report = detect(calls, REG)
    (v,) = report.violations
    assert v.kind is ViolationKind.III_ACCOUNT_MISMATCH
    att = attribute_pattern(v, calls)
    assert (att.pattern, att.gap) == (DepositPattern.P3_EXTERNAL_TRANSFER, 3)


@pytest.mark.parametrize("rival_block,expected", [(12, True), (13, False)])
def test_frontrunning_window(rival_block, expected):
    # the withdrawal sits in block 2; rivals count up to ten blocks after it
    calls = rebase_then_claim(rival_block)
    _, (v,) = thefts(calls)
    assert detect_frontrunning(v, calls) is expected


def test_expand_attempts():
    calls = [_call("0xd", 1, "0", OWNER, T0, "transfer", {"to": POOL, "amount": 100}),
             swap("0xf", 2, RIVAL, success=False), swap("0xw", 3, THIEF),
             _call("0xn", 9, "0", OWNER, T0, "transfer", {"to": POOL, "amount": 5})]
    report = detect(calls, REG)
    (v,) = [v for v in report.violations if v.kind is ViolationKind.III_ACCOUNT_MISMATCH]
    attempts = expand_attempts(v, calls)
    failed = [c for cs in attempts.values() for c in cs if not c.success]
    assert len(failed) == 1 and failed[0].txid == "0xf"
    assert set(attempts) == {RIVAL, THIEF}
    cases = theft_cases(report, calls)
    assert any(c.attempt and c.account == RIVAL for c in cases)


def test_no_calls_no_attempts():
    calls = rebase_then_claim()
    _, (v,) = thefts(calls)
    assert set(expand_attempts(v, calls)) == {THIEF}


def test_compute_indicators_on_hand_trace():
    calls = rebase_then_claim(rival_block=5)
    report, vs = thefts(calls)
    v = compute_indicators(THIEF, vs, calls)
    assert (v.i1, v.i2, v.i3, v.i4, v.i6, v.i7, v.swap_count) == (1, None, None, 0, 1, True, 1)
    assert classify_account(v).label is Label.ATTACKER_A1
    with pytest.raises(ValueError):
        compute_indicators(OWNER, vs, calls)


def test_ratio():
    assert IndicatorVector.profile("0x1", i1=F("0.5"), i2=686).i3 == 1372
    assert IndicatorVector.profile("0x1", i1=0, i2=5).i3 == INF
    assert IndicatorVector.profile("0x1", i1=3).i3 is None
    with pytest.raises(ValueError):
        IndicatorVector.profile("0x1", i4=F(3, 2))


def test_classification_examples():
    a = classify_account(IndicatorVector.profile("0x2a2e", i1=F("0.03"), i4=1))
    assert a.label is Label.ATTACKER_A1 and {"i1", "i4"} <= a.fired_indicators
    assert classify_account(IndicatorVector.profile("0xa32d", i2=942, i4=1)).label is Label.ATTACKER_A2
    b = classify_account(IndicatorVector.profile("0x9799", i1=422, i2=371, i6=F("0.86")))
    assert b.label is Label.ATTACKER_GENERIC and b.fired_indicators == {"i6"}
    assert classify_account(IndicatorVector.profile("0x1", i1=500)).label is Label.BENIGN
    assert classify_account(IndicatorVector.profile("0x1", i1=500, gap_std=300.0)).label is Label.SCAVENGER_A3
    with pytest.raises(ValueError):
        AccountLabel(Label.ATTACKER_A1)


def test_calibration_recovers_the_table():
    p = calibrate([(v, True) for v in ground_truth_vectors()])
    assert (p.x1, p.x2, p.x3, p.x4, p.x6) == (2, 617, F("19.28"), F("0.975"), F("0.692"))
    assert p == DetectionParams()
    for v in held_out_vectors():
        assert classify_account(v, p).label.is_attacker


def test_calibration_edges():
    p = calibrate([(IndicatorVector.profile("0x1", i1=0), True)])
    assert p.x1 == 0 and p.x2 == p.x3 == p.x4 == p.x6 == INF
    with pytest.raises(NoPositives):
        calibrate([])
    with pytest.raises(NoPositives):
        calibrate([(IndicatorVector.profile("0x1", i1=0), False)])


def test_params_json_round_trip():
    p = DetectionParams(x1=-INF)
    assert DetectionParams.from_json(p.to_json()) == p
    assert DetectionParams.from_json(DetectionParams().to_json()) == DetectionParams()
    with pytest.raises(ValueError):
        DetectionParams(x2=-1)
    for x in (None, INF, -INF, F(1, 3), F("0.975"), F(2)):
        assert parse_num(fmt_num(x)) == x


gaps = st.one_of(st.none(), st.fractions(0, 2000))
shares = st.fractions(0, 1)


@settings(max_examples=200, deadline=None)
@given(gaps, gaps, shares, shares, st.fractions(0, 10), st.fractions(0, 100))
def test_label_monotone_in_thresholds(i1, i2, i4, i6, dx1, dx2):
    # loosening the thresholds never turns an attacker benign
    v = IndicatorVector.profile("0x1", i1=i1, i2=i2, i4=i4, i6=i6)
    base = DetectionParams()
    loose = DetectionParams(x1=base.x1 + dx1, x2=max(base.x2 - dx2, 0), x3=base.x3, x4=base.x4, x6=base.x6)
    assert fired(v, base) <= fired(v, loose)
    if classify_account(v, base).label.is_attacker:
        assert classify_account(v, loose).label.is_attacker


def test_strategies_on_the_simulator():
    sim = simulate(strategy_scenario(0))
    report = detect(sim.records, sim.registry)
    vecs = indicators_for_report(report, sim.records)
    for lb in sim.labels:
        if not lb.attacker:
            continue
        hits = fired(vecs[lb.attacker], DetectionParams())
        if lb.strategy == "A1":
            assert "i1" in hits
        elif lb.pattern == "P2":
            assert "i2" in hits
        else:
            assert not hits & {"i1", "i2", "i3", "i4"}
    csv_text = indicator_csv(vecs)
    assert csv_text.splitlines()[0].startswith("account,i1")


def test_competition_shortens_the_gap():
    xs, ys = [], []
    for seed in range(4):
        sim = simulate(random_scenario(seed, target_events=10_000))
        report = detect(sim.records, sim.registry)
        for c in theft_cases(report, sim.records):
            if c.gap is not None and not c.attempt:
                xs.append(len(c.competitors))
                ys.append(c.gap)
    assert len(xs) > 30
    assert spearman(xs, ys) < 0


def test_spearman_basics():
    assert math.isclose(spearman([1, 2, 3], [3, 2, 1]), -1.0)
    assert math.isclose(spearman([1, 2, 2, 3], [1, 2, 2, 3]), 1.0)
    assert spearman([1], [2]) == 0.0
