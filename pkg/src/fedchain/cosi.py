"""BLS12-381 keys and the collective-signing (CoSi) round.

Public keys are compressed G1 points (48 bytes), signatures compressed G2
points (96 bytes), using the proof-of-possession ciphersuite so that
aggregate verification over a common message is safe against rogue keys.
"""
from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field

from blspy import G1Element, G2Element, PopSchemeMPL, PrivateKey

PUBKEY_SIZE = 48
SIGNATURE_SIZE = 96


class CoSiError(Exception):
    pass


class InsufficientShares(CoSiError):
    def __init__(self, got, needed, dissenters=()):
        self.got, self.needed, self.dissenters = got, needed, list(dissenters)
        super().__init__(f"only {got} of {needed} required shares "
                         f"(dissenting cosigners: {self.dissenters})")


class UnknownSet(CoSiError):
    pass


@dataclass(frozen=True)
class KeyPair:
    owner_id: int
    secret: PrivateKey = field(repr=False)
    public: bytes

    def sign(self, message: bytes) -> bytes:
        return sign_share(self.secret, message)


def keygen(seed: int, owner_id: int = 0) -> KeyPair:
    ikm = hashlib.sha256(b"fedchain/keygen/v1" + int(seed).to_bytes(8, "little", signed=False)).digest()
    sk = PopSchemeMPL.key_gen(ikm)
    return KeyPair(owner_id, sk, bytes(sk.get_g1()))


def threshold(n: int) -> int:
    """Strict majority of ``n`` cosigners."""
    return n // 2 + 1


def sign_share(sk: PrivateKey, message: bytes) -> bytes:
    return bytes(PopSchemeMPL.sign(sk, message))


def prove_possession(sk: PrivateKey) -> bytes:
    return bytes(PopSchemeMPL.pop_prove(sk))


def verify_possession(public: bytes, proof: bytes) -> bool:
    try:
        return PopSchemeMPL.pop_verify(G1Element.from_bytes(public), G2Element.from_bytes(proof))
    except (ValueError, RuntimeError):
        return False


def verify_share(public: bytes, message: bytes, share: bytes) -> bool:
    try:
        return PopSchemeMPL.verify(G1Element.from_bytes(public), message, G2Element.from_bytes(share))
    except (ValueError, RuntimeError):
        return False


def valid_pubkey(public: bytes) -> bool:
    try:
        G1Element.from_bytes(public)
    except (ValueError, RuntimeError):
        return False
    return len(public) == PUBKEY_SIZE


def set_id_of(pubkeys) -> bytes:
    """Binds a bitmap to one ordered cosigner list."""
    h = hashlib.sha256(b"fedchain/cosigner-set/v1")
    h.update(len(pubkeys).to_bytes(4, "little"))
    for pk in pubkeys:
        h.update(pk)
    return h.digest()


def bitmap_from_indices(indices, n: int) -> bytes:
    bits = bytearray((n + 7) // 8)
    for i in indices:
        bits[i // 8] |= 0x80 >> (i % 8)
    return bytes(bits)


def bitmap_indices(bitmap: bytes, n: int) -> list[int]:
    return [i for i in range(min(n, 8 * len(bitmap))) if bitmap[i // 8] & (0x80 >> (i % 8))]


@dataclass(frozen=True)
class CollectiveSignature:
    aggregate: bytes
    bitmap: bytes
    set_id: bytes

    def signers(self, n: int) -> list[int]:
        return bitmap_indices(self.bitmap, n)


def aggregate(shares, set_size: int, set_id: bytes) -> CollectiveSignature:
    """Sum ``(index, share)`` pairs into one signature plus a signer bitmap."""
    shares = list(shares)
    if not shares:
        raise CoSiError("nothing to aggregate")
    indices = [i for i, _ in shares]
    if len(set(indices)) != len(indices):
        raise CoSiError(f"duplicate signer index in {sorted(indices)}")
    if any(not 0 <= i < set_size for i in indices):
        raise CoSiError(f"signer index outside 0..{set_size - 1}")
    agg = PopSchemeMPL.aggregate([G2Element.from_bytes(s) for _, s in shares])
    return CollectiveSignature(bytes(agg), bitmap_from_indices(indices, set_size), set_id)


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str
    signers: tuple[int, ...] = ()
    needed: int = 0

    def __bool__(self):
        return self.ok


BELOW_THRESHOLD = "below-threshold"
BAD_AGGREGATE = "bad-aggregate"
MALFORMED = "malformed"


def verify_collective(pubkeys, sig: CollectiveSignature, message: bytes,
                      set_id: bytes | None = None, min_signers: int | None = None) -> Verdict:
    """Accept iff a strict majority signed and the pairing check holds.

    ``set_id``, when given, must match the signature's set id; a mismatch is
    an error rather than a rejection because the caller supplied the wrong keys.
    """
    pubkeys = list(pubkeys)
    n = len(pubkeys)
    if set_id is not None and sig.set_id != set_id:
        raise UnknownSet(f"signature names set {sig.set_id.hex()[:16]}, keys are for {set_id.hex()[:16]}")
    needed = threshold(n) if min_signers is None else min_signers
    if len(sig.bitmap) != (n + 7) // 8 or any(sig.bitmap[i // 8] & (0x80 >> (i % 8))
                                             for i in range(n, 8 * len(sig.bitmap))):
        return Verdict(False, MALFORMED, (), needed)
    signers = tuple(bitmap_indices(sig.bitmap, n))
    if len(signers) < needed:
        return Verdict(False, BELOW_THRESHOLD, signers, needed)
    try:
        pks = [G1Element.from_bytes(pubkeys[i]) for i in signers]
        agg = G2Element.from_bytes(sig.aggregate)
    except (ValueError, RuntimeError):
        return Verdict(False, MALFORMED, signers, needed)
    if not PopSchemeMPL.fast_aggregate_verify(pks, message, agg):
        return Verdict(False, BAD_AGGREGATE, signers, needed)
    return Verdict(True, "ok", signers, needed)


@dataclass
class Cosigner:
    """A network peer that signs an announced digest only if its own copy agrees.

    ``lookup(selector)`` returns this peer's view of the asset digest for a
    selector; by default it reads the peer's ledger.
    """

    index: int
    keys: KeyPair
    lookup: object

    def respond(self, selector, announced: bytes):
        try:
            own = self.lookup(selector)
        except Exception:
            return None
        if own != announced:
            return None
        return sign_share(self.keys.secret, announced)


@dataclass(frozen=True)
class CoSiStats:
    duration: float
    shares: int
    dissenters: tuple[int, ...]


def cosi_round(cosigners, set_id: bytes, selector, announced: bytes,
               deadline: float = 30.0, concurrent: bool = True) -> tuple[CollectiveSignature, CoSiStats]:
    """Announce a digest, gather shares from agreeing cosigners and aggregate them."""
    t0 = time.perf_counter()
    cosigners = sorted(cosigners, key=lambda c: c.index)
    n = len(cosigners)
    if concurrent and n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            futures = {pool.submit(c.respond, selector, announced): c for c in cosigners}
            done, _ = wait(futures, timeout=deadline)
            replies = {futures[f].index: (f.result() if f in done else None) for f in futures}
    else:
        replies = {c.index: c.respond(selector, announced) for c in cosigners}
    shares = [(i, s) for i, s in sorted(replies.items()) if s is not None]
    dissenters = tuple(i for i, s in sorted(replies.items()) if s is None)
    if len(shares) < threshold(n):
        raise InsufficientShares(len(shares), threshold(n), dissenters)
    sig = aggregate(shares, n, set_id)
    return sig, CoSiStats(time.perf_counter() - t0, len(shares), dissenters)
