import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vquant.exceptions import EncodingError, ParameterError
from vquant.packing import pack_codes, packed_size, unpack_codes


def pack_reference(codes, bits):
    # Bit accumulator: element i occupies stream bits [i*bits, (i+1)*bits), LSB first.
    acc = 0
    for i, c in enumerate(codes):
        acc |= int(c) << (i * bits)
    return acc.to_bytes(packed_size(len(codes), bits), "little")


def test_three_two_bit_codes():
    assert pack_codes([1, 2, 3], 2) == bytes([0b00111001])


def test_empty():
    assert pack_codes([], 3) == b""
    assert unpack_codes(b"", 3, 0).size == 0


@pytest.mark.parametrize("bits", range(1, 9))
def test_random_roundtrip(bits):
    codes = np.random.default_rng(bits).integers(0, 1 << bits, size=100_000)
    buf = pack_codes(codes, bits)
    assert len(buf) == packed_size(codes.size, bits)
    assert np.array_equal(unpack_codes(buf, bits, codes.size), codes)


@given(st.integers(1, 8).flatmap(lambda b: st.tuples(st.just(b), st.lists(st.integers(0, (1 << b) - 1), max_size=64))))
def test_matches_bit_accumulator(case):
    bits, codes = case
    assert pack_codes(codes, bits) == pack_reference(codes, bits)


@pytest.mark.parametrize("codes,bits", [([4], 2), ([-1], 3), ([256], 8), ([2], 1)])
def test_out_of_range(codes, bits):
    with pytest.raises(EncodingError):
        pack_codes(codes, bits)


@pytest.mark.parametrize("bits", [0, 9])
def test_bad_bit_width(bits):
    with pytest.raises(ParameterError):
        pack_codes([0], bits)


def test_short_buffer():
    with pytest.raises(EncodingError):
        unpack_codes(b"\x00", 3, 4)
