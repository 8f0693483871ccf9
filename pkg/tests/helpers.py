"""Record builders shared by the test modules."""

from swaptrace.trace_model import CallSeq, DepositRecord, WithdrawalRecord

POOL = "0x00000000000000000000000000000000000000aa"
TOKEN = "0x00000000000000000000000000000000000000t0"
TOKEN_OUT = "0x00000000000000000000000000000000000000t1"
ALICE = "0x00000000000000000000000000000000000a11ce"
BOB = "0x0000000000000000000000000000000000000b0b"


def dep(value, txid, block, tx_index=0, seq="0", account=ALICE, func="transfer"):
    return DepositRecord(depositor=account, pool=POOL, token=TOKEN, value=value, txid=txid,
                         block=block, tx_index=tx_index, call_seq=CallSeq.parse(seq), origin_func=func)


def wd(expected_in, txid, block, tx_index=0, seq="1", account=ALICE, func="swap", value_out=None):
    return WithdrawalRecord(withdrawer=account, pool=POOL, token_out=TOKEN_OUT,
                            value_out=expected_in if value_out is None else value_out,
                            expected_value_in=expected_in, txid=txid, block=block, tx_index=tx_index,
                            call_seq=CallSeq.parse(seq), origin_func=func, token_in=TOKEN)


def join_problem_fixture():
    """Deposits/withdrawals in the shape of the worked matchmaking example."""
    recs = {
        "tf1": dep(5, "tx1", 1),
        "tff1": dep(10, "tx2", 2, seq="0", func="transferFrom"),
        "swap1": wd(10, "tx2", 2, seq="1"),
        "tf2": dep(20, "tx3", 3),
        "tf3": dep(30, "tx4", 4),
        "mint1": wd(50, "tx5", 5, func="mint"),
        "swap2": wd(7, "tx6", 6),
        "tf4": dep(40, "tx7", 7),
        "swap3": wd(60, "tx8", 8),
    }
    return recs
