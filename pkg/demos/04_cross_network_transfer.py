"""
Moving a model between networks
===============================

Network 2 asks network 1 for its latest global model. Network 1's relay
reads the asset from its ledger and has its cosigners endorse it. The
receiving relay runs two checks before committing anything:

1. the collective signature, against keys looked up in the shared registry;
2. reproducibility: it re-evaluates the weights on the public validation
   data and rejects the asset if the reported accuracy is too high.

The registry itself is trusted. Everything below assumes it serves the true
keys for each network.
"""

from fedchain import adversary, codec
from fedchain.fl import DataConfig, Network, RoundConfig
from fedchain.iin import IdentityRegistry
from fedchain.nn import ModelSpec
from fedchain.relay import TransferRejected, transfer

iin = IdentityRegistry()
small = dict(client_count=4, spec=ModelSpec((4, 16, 3)), deterministic=True)
source = Network(1, RoundConfig(global_rounds=3, data=DataConfig(seed=0, n=400, d=4, classes=3), **small), iin)
source.run()
target = Network(2, RoundConfig(global_rounds=1, data=DataConfig(seed=5, n=400, d=4, classes=3), **small), iin)

asset, stats = transfer(target.relay, source.relay, client_id=1)
print(f"committed v{asset.version} from network {asset.network_id}: {stats.report.signature.detail}; "
      f"{stats.report.reproducibility.detail}")
print("provenance on receiver:", sorted(target.ledger.provenance(codec.digest(asset))))

attacks = {
    "flip one weight bit in flight": adversary.flip_weight,
    "inflate accuracy in flight": adversary.inflate_metrics,
    "inflate accuracy, majority and producer re-sign": lambda r: adversary.collude_resign(
        adversary.inflate_metrics(r), source),
}
for name, tamper in attacks.items():
    before = target.ledger.state_fingerprint()
    try:
        transfer(target.relay, source.relay, 1, tamper=tamper)
        print(f"{name}: accepted")
    except TransferRejected as exc:
        print(f"{name}: rejected at {exc.stage}")
    assert target.ledger.state_fingerprint() == before  # nothing committed on rejection

# a relay that lies about the asset cannot get its own cosigners to sign it
liar = adversary.SubstitutingRelay(source, adversary.inflated)
try:
    transfer(target.relay, liar, 1)
except Exception as exc:
    print("substituting relay:", type(exc).__name__, exc)
