from hypothesis import given
from hypothesis import strategies as st

import pytest

from swaptrace.trace_model import (ANOMALY_OF_KIND, AnomalyClass, CallRecord, CallSeq, DepositRecord, Ordering,
                                   Transfer, ViolationKind, WithdrawalRecord, decode, encode, is_prefix_call,
                                   normalize_account, stream_order)

seqs = st.lists(st.integers(0, 12), min_size=1, max_size=5).map(lambda s: CallSeq(tuple(s)))


def rec(block, idx, seq, txid="0xaa"):
    return CallRecord(txid=txid, block=block, tx_index=idx, call_seq=CallSeq.parse(seq), caller="0x1",
                      callee_contract="0x2", callee_func="transfer")


records = st.builds(rec, st.integers(0, 3), st.integers(0, 3), seqs)


def test_prefix_examples():
    assert is_prefix_call(CallSeq.parse("032"), CallSeq.parse("0320"))
    assert not is_prefix_call(CallSeq.parse("032"), CallSeq.parse("032"))
    assert not is_prefix_call(CallSeq.parse([0, 3]), CallSeq.parse([0, 4, 1]))


def test_digit_and_dotted_forms_agree():
    assert CallSeq.parse("032") == CallSeq.parse("0.3.2") == CallSeq((0, 3, 2))
    assert str(CallSeq.parse("0.12.3")) == "0.12.3"
    assert CallSeq.parse(str(CallSeq((10,)))) == CallSeq((10,))
    with pytest.raises(ValueError):
        CallSeq.parse("")
    with pytest.raises(ValueError):
        CallSeq(())


def test_stream_order_examples():
    assert stream_order(rec(5, 0, "1"), rec(5, 1, "0")) is Ordering.LESS
    assert stream_order(rec(5, 1, "0"), rec(5, 1, "0")) is Ordering.EQUAL
    assert stream_order(rec(4, 9, "9"), rec(5, 0, "0")) is Ordering.LESS


@given(records, records, records)
def test_stream_order_is_a_total_order(a, b, c):
    ab, ba = stream_order(a, b), stream_order(b, a)
    assert ab == -ba
    assert (ab is Ordering.EQUAL) == (a.key == b.key)
    if ab <= 0 and stream_order(b, c) <= 0:
        assert stream_order(a, c) <= 0


@given(seqs, seqs, seqs)
def test_prefix_is_transitive(p, c, d):
    if is_prefix_call(p, c) and is_prefix_call(c, d):
        assert is_prefix_call(p, d)


@given(seqs, st.integers(0, 20))
def test_child_is_prefixed(p, i):
    assert is_prefix_call(p, p.child(i))


def test_normalize_account():
    assert normalize_account("0xABcd") == "0xabcd"
    assert normalize_account("abcd") == "0xabcd"
    for bad in ("", "  ", "0x"):
        with pytest.raises(ValueError):
            normalize_account(bad)


def test_kind_letters():
    assert ANOMALY_OF_KIND[ViolationKind.I_STANDALONE_WITHDRAWAL] is AnomalyClass.F_FREERIDER
    assert ANOMALY_OF_KIND[ViolationKind.II_STANDALONE_DEPOSIT] is AnomalyClass.U_UNDERWATER
    assert ANOMALY_OF_KIND[ViolationKind.IV_LOWER_VALUE_DEPOSIT] is AnomalyClass.D_DISCOUNT
    assert ANOMALY_OF_KIND[ViolationKind.V_HIGHER_VALUE_DEPOSIT] is AnomalyClass.O_OVERCHARGE
    assert ANOMALY_OF_KIND[ViolationKind.III_ACCOUNT_MISMATCH] is None
    assert ANOMALY_OF_KIND[ViolationKind.INTERLEAVED] is None


def test_transfer_invariants():
    with pytest.raises(ValueError):
        Transfer("0x1", "0x2", "0x3", -1, "eth", b"", "0xaa")
    with pytest.raises(ValueError):
        Transfer("0x1", "0x2", "0x3", 1, "eth", b"", "")


addr = st.integers(1, 2**40).map(lambda x: f"0x{x:040x}")


@given(addr, addr, st.integers(1, 10**30), st.integers(0, 10**8), st.integers(0, 500), seqs)
def test_serialization_round_trip(a, b, v, block, idx, seq):
    d = DepositRecord(depositor=a, pool=b, token=a, value=v, txid="0x1", block=block, tx_index=idx,
                      call_seq=seq, origin_func="transfer")
    w = WithdrawalRecord(withdrawer=a, pool=b, token_out=a, value_out=v, expected_value_in=v, txid="0x1",
                         block=block, tx_index=idx, call_seq=seq, origin_func="swap", token_in=b)
    c = CallRecord(txid="0x1", block=block, tx_index=idx, call_seq=seq, caller=a, callee_contract=b,
                   callee_func="swap", args={"amountIn": v}, gas=1, gas_price=2, success=False, timestamp=7)
    t = Transfer(a, b, a, v, "eth", b"\x01\x02", "0x1")
    for obj in (d, w, c, t):
        back = decode(encode(obj))
        assert back == obj
        if isinstance(obj, CallRecord):
            assert back.args == obj.args
