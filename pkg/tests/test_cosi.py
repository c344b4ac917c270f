import hashlib
import itertools

import pytest

from fedchain import cosi
from fedchain.cosi import (CollectiveSignature, Cosigner, InsufficientShares, UnknownSet, aggregate, keygen,
                           set_id_of, threshold, verify_collective)

ark = pytest.importorskip("py_arkworks_bls12381")
py_ecc_h2c = pytest.importorskip("py_ecc.bls.hash_to_curve")
from py_ecc.bls.point_compression import compress_G2  # noqa: E402

POP_DST = b"BLS_SIG_BLS12381G2_XMD:SHA-256_SSWU_RO_POP_"
DIGEST = hashlib.sha256(b"an asset").digest()


def hash_to_g2(message: bytes):
    """H(m) computed with py_ecc, converted to an arkworks point."""
    z1, z2 = compress_G2(py_ecc_h2c.hash_to_G2(message, POP_DST, hashlib.sha256))
    return ark.G2Point.from_compressed_bytes(z1.to_bytes(48, "big") + z2.to_bytes(48, "big"))


def pairing_oracle(pubkeys, aggregate_sig: bytes, message: bytes) -> bool:
    """e(sum pk, H(m)) == e(g1, sig), checked with libraries independent of the signer."""
    pks = [ark.G1Point.from_compressed_bytes(pk) for pk in pubkeys]
    total = pks[0]
    for pk in pks[1:]:
        total = total + pk
    sig = ark.G2Point.from_compressed_bytes(aggregate_sig)
    return ark.GT.pairing(total, hash_to_g2(message)) == ark.GT.pairing(ark.G1Point(), sig)


@pytest.fixture(scope="module")
def five():
    keys = [keygen(100 + i, i) for i in range(5)]
    return keys, set_id_of([k.public for k in keys])


def test_keygen_deterministic_and_valid():
    assert keygen(5).public == keygen(5).public
    assert len(keygen(5).public) == 48 and cosi.valid_pubkey(keygen(5).public)
    assert not cosi.valid_pubkey(b"\x00" * 48)


def test_keygen_distinct_over_1000_seeds():
    assert len({keygen(s).public for s in range(1000)}) == 1000


def test_share_sign_verify(five):
    keys, _ = five
    share = keys[0].sign(DIGEST)
    assert len(share) == 96
    assert cosi.verify_share(keys[0].public, DIGEST, share)
    assert not cosi.verify_share(keys[1].public, DIGEST, share)
    assert share == keys[0].sign(DIGEST)


def test_possession_proofs(five):
    keys, _ = five
    proof = cosi.prove_possession(keys[0].secret)
    assert cosi.verify_possession(keys[0].public, proof)
    assert not cosi.verify_possession(keys[1].public, proof)
    assert not cosi.verify_possession(keys[0].public, keys[0].sign(DIGEST))


def test_threshold_is_strict_majority():
    assert [threshold(n) for n in (1, 2, 3, 4, 5, 16)] == [1, 2, 2, 3, 3, 9]


def test_bitmap_big_endian():
    assert cosi.bitmap_from_indices([0], 5) == b"\x80"
    assert cosi.bitmap_from_indices([0, 4, 8], 9) == b"\x88\x80"
    assert cosi.bitmap_indices(b"\x88\x80", 9) == [0, 4, 8]


def test_single_share_aggregate(five):
    keys, sid = five
    share = keys[2].sign(DIGEST)
    sig = aggregate([(2, share)], 5, sid)
    assert sig.aggregate == share and sig.signers(5) == [2]


def test_aggregation_order_independent(five):
    keys, sid = five
    shares = [(i, k.sign(DIGEST)) for i, k in enumerate(keys)]
    a = aggregate(shares, 5, sid)
    b = aggregate(list(reversed(shares)), 5, sid)
    c = aggregate([shares[3], shares[0], shares[4], shares[1], shares[2]], 5, sid)
    assert a == b == c


def test_aggregate_errors(five):
    keys, sid = five
    with pytest.raises(cosi.CoSiError):
        aggregate([], 5, sid)
    with pytest.raises(cosi.CoSiError):
        aggregate([(1, keys[1].sign(DIGEST)), (1, keys[1].sign(DIGEST))], 5, sid)
    with pytest.raises(cosi.CoSiError):
        aggregate([(5, keys[0].sign(DIGEST))], 5, sid)


def test_three_of_five_matches_pairing_oracle(five):
    keys, sid = five
    signers = [0, 2, 4]
    sig = aggregate([(i, keys[i].sign(DIGEST)) for i in signers], 5, sid)
    assert pairing_oracle([keys[i].public for i in signers], sig.aggregate, DIGEST)
    assert not pairing_oracle([keys[i].public for i in (0, 1, 2)], sig.aggregate, DIGEST)
    assert verify_collective([k.public for k in keys], sig, DIGEST, sid).ok


def test_verify_reasons(five):
    keys, sid = five
    pubs = [k.public for k in keys]
    full = aggregate([(i, k.sign(DIGEST)) for i, k in enumerate(keys)], 5, sid)
    assert verify_collective(pubs, full, DIGEST, sid).ok
    two = aggregate([(i, keys[i].sign(DIGEST)) for i in (0, 1)], 5, sid)
    v = verify_collective(pubs, two, DIGEST, sid)
    assert not v.ok and v.reason == cosi.BELOW_THRESHOLD and v.needed == 3
    lying = CollectiveSignature(full.aggregate, cosi.bitmap_from_indices([0, 1, 2], 5), sid)
    assert verify_collective(pubs, lying, DIGEST, sid).reason == cosi.BAD_AGGREGATE
    junk = CollectiveSignature(b"\x01" * 96, full.bitmap, sid)
    assert verify_collective(pubs, junk, DIGEST, sid).reason == cosi.MALFORMED
    wide = CollectiveSignature(full.aggregate, b"\xff", sid)
    assert verify_collective(pubs, wide, DIGEST, sid).reason == cosi.MALFORMED
    with pytest.raises(UnknownSet):
        verify_collective(pubs, full, DIGEST, bytes(32))


@pytest.mark.parametrize("n", [7, 16])
def test_randomized_soundness_larger_sets(n):
    import random
    r = random.Random(n)
    keys = [keygen(500 + i, i) for i in range(n)]
    pubs = [k.public for k in keys]
    sid = set_id_of(pubs)
    other = hashlib.sha256(b"other").digest()
    for _ in range(6):
        subset = sorted(r.sample(range(n), r.randint(1, n)))
        sig = aggregate([(i, keys[i].sign(DIGEST)) for i in subset], n, sid)
        assert verify_collective(pubs, sig, DIGEST).ok == (len(subset) >= threshold(n))
        forged = aggregate([(i, keys[i].sign(other)) for i in subset], n, sid)
        assert not verify_collective(pubs, forged, DIGEST).ok


def _cosigners(keys, views):
    return [Cosigner(i, k, (lambda sel, v=views[i]: v)) for i, k in enumerate(keys)]


def test_cosi_round_all_honest(five):
    keys, sid = five
    sig, stats = cosi.cosi_round(_cosigners(keys, [DIGEST] * 5), sid, None, DIGEST)
    assert sig.signers(5) == [0, 1, 2, 3, 4] and stats.dissenters == ()
    assert verify_collective([k.public for k in keys], sig, DIGEST, sid).ok


def test_cosi_round_two_tampered_copies(five):
    keys, sid = five
    bad = hashlib.sha256(b"tampered").digest()
    views = [DIGEST, bad, DIGEST, bad, DIGEST]
    sig, stats = cosi.cosi_round(_cosigners(keys, views), sid, None, DIGEST, concurrent=False)
    assert sig.signers(5) == [0, 2, 4] and stats.dissenters == (1, 3)
    assert verify_collective([k.public for k in keys], sig, DIGEST, sid).ok


def test_cosi_round_three_tampered_copies(five):
    keys, sid = five
    bad = hashlib.sha256(b"tampered").digest()
    with pytest.raises(InsufficientShares) as err:
        cosi.cosi_round(_cosigners(keys, [bad, bad, DIGEST, bad, DIGEST]), sid, None, DIGEST)
    assert (err.value.got, err.value.needed) == (2, 3)
    assert list(err.value.dissenters) == [0, 1, 3]


def test_cosigner_lookup_failure_counts_as_dissent(five):
    keys, sid = five

    def broken(sel):
        raise KeyError(sel)

    cos = _cosigners(keys, [DIGEST] * 5)
    cos[0] = Cosigner(0, keys[0], broken)
    sig, stats = cosi.cosi_round(cos, sid, None, DIGEST)
    assert stats.dissenters == (0,) and stats.shares == 4


def test_exhaustive_subsets_small(five):
    """Every subset of five: only majorities over the true digest verify."""
    keys, sid = five
    pubs = [k.public for k in keys]
    shares = {i: k.sign(DIGEST) for i, k in enumerate(keys)}
    accepted = 0
    for r in range(1, 6):
        for subset in itertools.combinations(range(5), r):
            sig = aggregate([(i, shares[i]) for i in subset], 5, sid)
            ok = verify_collective(pubs, sig, DIGEST).ok
            assert ok == (r >= 3)
            accepted += ok
    assert accepted == 16
