"""Per-account indicator profiles of confirmed attackers, and held-out test profiles."""

from fractions import Fraction as F

from swaptrace.attack_detect import IndicatorVector

# (account, i1, i2, i4, i6, pattern counts)
GROUND_TRUTH = [
    ("0x9799", F(422), F(371), F(0), F("0.86"), {}),
    ("0x0c08", F("1.5"), None, F(0), F("0.75"), {}),
    ("0x5617", F(13), F(1574), F(0), F("0.93"), {}),
    ("0x7f15", None, F(96), F(15, 15), F(1), {}),
    ("0x7c65", F(68), None, F(0), F(1), {}),
    ("0xe84f", F("1.1"), None, F(0), F(9, 13), {}),
    ("0xca85", F("1.4"), None, F(39, 40), F(0), {}),
    ("0x17e8", F(3061), None, F(0), F(1), {}),
    ("0xf90e", F(1402), None, F(0), F(1), {}),
    ("0x42d0", F(0), None, F(1, 1), F(0), {}),
    ("0xea67", F("0.5"), F(686), F(6, 7), F(1), {"P1": 2, "P2": 5}),
    ("0x25d4", F(38), None, F(1, 1), F(1), {}),
    ("0xd224", F(32), F(617), F(4, 4), F("0.75"), {}),
    ("0xb8aa", F(351), None, F(0), F(1), {}),
    ("0x829b", None, F(696), F(5, 5), F(1), {}),
]

# (account, i1, i2, i4, i6); i3 is derived from i1 and i2
TEST_ROWS = [
    ("0x2a2e", F("0.03"), None, F(32, 32), F(0)),
    ("0xdb40", F("2.5"), F(665), F(17, 17), F(0)),
    ("0xb6bf", F(224), F(600), F(1231, 1231), F(0)),
    ("0xc762", F("3.0"), F("5.3"), F(83, 83), F(0)),
    ("0xa32d", None, F(942), F(208, 208), F(0)),
]


def ground_truth_vectors():
    return [IndicatorVector.profile(a, i1=i1, i2=i2, i4=i4, i6=i6, pattern_counts=pc)
            for a, i1, i2, i4, i6, pc in GROUND_TRUTH]


def held_out_vectors():
    return [IndicatorVector.profile(a, i1=i1, i2=i2, i4=i4, i6=i6) for a, i1, i2, i4, i6 in TEST_ROWS]
