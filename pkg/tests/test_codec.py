import hashlib
import os
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TINY_POINTER, random_asset, tiny_asset
from fedchain import codec
from fedchain.codec import (FRAGMENT_SIZE, AssetFragment, BadMagic, FragmentError, MissingFragment, TrailingBytes,
                            Truncated, decode, defragment, digest, encode, encoded_size, fragment, fragment_count)
from fedchain.nn import WeightVector

# SHA-256 of the tiny asset's body, computed with the coreutils sha256sum tool over
# bytes written out by hand from the documented layout (see docs/formats.md)
TINY_BODY_HEX = (
    "50465431" "07000000" "01" "0300000000000000" "02000000"
    "02000000" "02000000" "02000000" "00"
    "fca9f1d24d62503f" "20000000" "02000000" "00" "cdccccccccccec3f" "2b8716d9cef7ef3f" "3a8c30e28e79453e"
    "2a00000000000000" "00"
    "20000000" + TINY_POINTER.encode().hex() +
    "000000000000e83f" "000000000000e03f"
    "0600000000000000" "0000003f" "000080bf" "0000803e" "00000040" "00000000" "000000bf"
)
TINY_DIGEST = "9696238777ade5262790af5cd157714add5e7399555a2ebb26b31cd8b083161a"


def test_tiny_asset_layout_and_reference_digest():
    raw = encode(tiny_asset())
    assert raw.hex() == TINY_BODY_HEX + "00000000"
    assert digest(tiny_asset()).hex() == TINY_DIGEST


def test_encode_canonical_and_injective(rng):
    a = random_asset(rng, n_sigs=2)
    assert encode(a) == encode(a)
    values = a.weights.values.copy()
    values[0] = np.nextafter(values[0], np.float32(np.inf))
    b = type(a)(**{**a.__dict__, "weights": WeightVector(a.spec, values)})
    assert encode(b) != encode(a)
    assert digest(b) != digest(a)


def test_encoded_size_accounting(rng):
    for _ in range(20):
        a = random_asset(rng, n_sigs=int(rng.integers(0, 4)))
        lengths = [len(s) for _, s in a.signatures]
        assert len(encode(a)) == encoded_size(a.spec, a.validation_pointer, lengths)
        # hand accounting: fixed header + 4 bytes per width + pointer + 4 per weight + signature section
        widths = len(a.spec.layer_widths)
        fixed = 4 + 17 + 4 + 4 * widths + 1 + 41 + 9 + 4 + len(a.validation_pointer.encode()) + 16 + 8
        assert len(encode(a)) == fixed + 4 * a.spec.param_count + 4 + sum(8 + n for n in lengths)


def test_digest_ignores_signatures(rng):
    a = random_asset(rng)
    assert digest(a) == digest(a.with_signatures([(1, b"x" * 96), (2, b"y")]))
    assert digest(a) == hashlib.sha256(encode(a)[:-4]).digest()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_decode_roundtrip(seed):
    a = random_asset(np.random.default_rng(seed), n_sigs=seed % 3)
    assert decode(encode(a)) == a


def test_decode_errors():
    raw = encode(tiny_asset([(4, b"sig")]))
    with pytest.raises(BadMagic):
        decode(b"X" + raw[1:])
    with pytest.raises(TrailingBytes):
        decode(raw + b"\0")
    for cut in range(len(raw)):
        with pytest.raises(Truncated):
            decode(raw[:cut])


def test_decode_rejects_invariant_violations():
    raw = bytearray(encode(tiny_asset()))
    acc_at = len(TINY_BODY_HEX) // 2 - (8 + 24 + 16)
    raw[acc_at:acc_at + 8] = np.float64(1.5).tobytes()
    with pytest.raises(codec.CodecError):
        decode(bytes(raw))


def test_describe_lists_fields():
    text = codec.describe(tiny_asset())
    assert "network_id: 7" in text and "validation_pointer: " + TINY_POINTER in text


@pytest.mark.parametrize("size,count", [(1, 1), (800_000, 1), (800_001, 2), (4_000_000, 5)])
def test_fragment_count_law(size, count):
    data = os.urandom(size)
    frags = fragment(data, bytes(32))
    assert len(frags) == count == fragment_count(size)
    assert [f.fragment_number for f in frags] == list(range(count))
    assert all(len(f.payload) == FRAGMENT_SIZE for f in frags[:-1])
    assert defragment(frags) == data


def test_fragment_errors():
    with pytest.raises(FragmentError):
        fragment(b"", bytes(32))
    with pytest.raises(FragmentError):
        defragment([])


def test_defragment_shuffled_and_missing():
    data = os.urandom(4_000_000)
    frags = fragment(data, b"\1" * 32)
    shuffled = frags[:]
    random.Random(3).shuffle(shuffled)
    assert defragment(shuffled) == data
    with pytest.raises(MissingFragment) as err:
        defragment(frags[:2] + frags[3:])
    assert err.value.indices == [2]


def test_defragment_inconsistent_sets():
    frags = fragment(os.urandom(1_700_000), b"\1" * 32)
    other = fragment(os.urandom(1_700_000), b"\2" * 32)
    with pytest.raises(FragmentError):
        defragment(frags[:2] + other[2:])
    bad_total = AssetFragment(frags[2].asset_id, 2, 4, frags[2].payload)
    with pytest.raises(FragmentError):
        defragment(frags[:2] + [bad_total])
    conflict = AssetFragment(frags[1].asset_id, 1, 3, bytes(FRAGMENT_SIZE))
    with pytest.raises(FragmentError):
        defragment(frags + [conflict])
    # an exact duplicate is harmless
    assert defragment(frags + [frags[1]]) == b"".join(f.payload for f in frags)


def test_fragment_wire_roundtrip():
    f = fragment(os.urandom(900_000), b"\7" * 32)[1]
    raw = f.to_bytes()
    assert len(raw) == 44 + len(f.payload)
    assert AssetFragment.from_bytes(raw) == f
    with pytest.raises(codec.CodecError):
        AssetFragment.from_bytes(raw[:-1])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5_000_000), st.integers(0, 2**32 - 1))
def test_fragment_roundtrip_property(size, seed):
    data = np.random.default_rng(seed).bytes(size)
    assert defragment(fragment(data, bytes(32))) == data
