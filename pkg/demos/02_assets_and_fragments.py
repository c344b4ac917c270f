"""
Learning assets, digests and fragments
======================================

An asset bundles weights with everything needed to check them: the model
spec, hyperparameters, seed, a pointer to public validation data and the
metrics the producer claims. Its canonical encoding is hashed for an id,
then split into fragments that fit under the ledger's transaction cap.
"""

import numpy as np

from fedchain import codec
from fedchain.codec import AssetKind, LearningAsset
from fedchain.ledger import TX_CAP, Latest, Ledger
from fedchain.nn import Hyperparameters, Metrics, ModelSpec, init_weights

spec = ModelSpec((64, 4000, 10))
asset = LearningAsset(1, AssetKind.GlobalModel, 1, 0, spec, Hyperparameters(), 7, "adam",
                      "synth://seed=1&n=200&d=64&classes=10", Metrics(0.5, 1.2), init_weights(spec, 7))

raw = codec.encode(asset)
print(f"{spec.param_count} parameters -> {len(raw)} bytes, magic {raw[:4]!r}")
print("asset id:", codec.digest(asset).hex())

# the id ignores attached signatures, so signing does not change what is signed
signed = asset.with_signatures([(0, b"\x01" * 96)])
assert codec.digest(signed) == codec.digest(asset)

frags = codec.fragment(raw, codec.digest(asset))
print(f"{len(frags)} fragments of at most {codec.FRAGMENT_SIZE} bytes; tx cap {TX_CAP}")

# the ledger stores the fragments in order, then an index record that makes the asset visible
led = Ledger(1)
stats = led.put_asset(asset)
back, rstats = led.get_asset(Latest())
print(f"entered in {1000 * stats.duration:.1f} ms, retrieved in {1000 * rstats.duration:.1f} ms")
assert back == asset

# the fragment-count law at a few reference sizes
for size in (4.0e6, 19.5e6, 67.3e6, 232.1e6):
    print(f"{size / 1e6:6.1f} MB -> {codec.fragment_count(int(size))} fragments")

# a truncated encoding is rejected, never half-decoded
try:
    codec.decode(raw[:-1])
except codec.CodecError as exc:
    print("truncated:", type(exc).__name__)
print("weights equal after round trip:", np.array_equal(back.weights.values, asset.weights.values))
