"""
Collective signing
==================

Five cosigners each hold a BLS key registered with a proof of possession.
To endorse an asset, every cosigner re-reads its own copy and signs the
digest only if it matches the one announced. Shares add up to one
96-byte aggregate plus a bitmap of who signed. A strict majority is needed.
"""

import hashlib

from fedchain import cosi

keys = [cosi.keygen(100 + i, i) for i in range(5)]
pubs = [k.public for k in keys]
set_id = cosi.set_id_of(pubs)
digest = hashlib.sha256(b"some asset").digest()
print("threshold for 5 cosigners:", cosi.threshold(5))


def cosigners(views):
    # each cosigner's lookup returns the digest of the copy it holds
    return [cosi.Cosigner(i, k, lambda sel, v=views[i]: v) for i, k in enumerate(keys)]


sig, stats = cosi.cosi_round(cosigners([digest] * 5), set_id, None, digest)
print(f"all honest: signers {sig.signers(5)}, {len(sig.aggregate)}-byte aggregate,",
      cosi.verify_collective(pubs, sig, digest).ok)

# two cosigners hold a tampered copy: they refuse, the majority still endorses
bad = hashlib.sha256(b"tampered").digest()
sig, stats = cosi.cosi_round(cosigners([digest, bad, digest, bad, digest]), set_id, None, digest)
print("two dissent:", sig.signers(5), "dissenters", stats.dissenters)

# three tampered copies: no majority, no signature
try:
    cosi.cosi_round(cosigners([bad, bad, digest, bad, digest]), set_id, None, digest)
except cosi.InsufficientShares as exc:
    print("three dissent:", exc)

# a signature over a different message never verifies
print("wrong message:", cosi.verify_collective(pubs, sig, bad).reason)
