"""
Federated training on one network
=================================

Eight clients train a small MLP on their own shards of a synthetic blobs
task. Each round, the contract averages their updates and enters a new
global model in the ledger. Every local update and global model is stored
as a fragmented, signed asset.
"""

from fedchain.fl import DataConfig, Network, RoundConfig
from fedchain.iin import IdentityRegistry
from fedchain.nn import ModelSpec

# a registry shared by every network; it holds keys and the validation-data pointer
iin = IdentityRegistry()

cfg = RoundConfig(client_count=8, global_rounds=6, spec=ModelSpec((8, 64, 4)),
                  data=DataConfig(seed=0, n=1200, d=8, classes=4), deterministic=True)
net = Network(1, cfg, iin)
print("clients:", [c.client_id for c in net.clients])
print("validation data:", iin.lookup_validation_pointer(1))

reports = net.run()
print("\nround  version  pre-test  post-test")
for r in reports:
    print(f"{r.round:5d}  {r.version:7d}  {r.pre_test.accuracy:8.3f}  {r.post_test.accuracy:9.3f}")

# pre-test scores the new global model; post-test averages the clients' own models.
# Averaging tends to regularize, so pre-test is usually the higher of the two.

led = net.ledger
print(f"\nledger height {led.height}, latest global version {led.latest_global_version}")
print("hash chain intact:", led.audit().ok)
