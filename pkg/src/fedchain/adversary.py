"""Fault injection for transfer scenarios: in-flight tampering, colluding re-signers, a lying relay."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import codec, cosi
from .nn import Metrics, WeightVector
from .relay import Relay, TransferResponse


def flip_weight(resp: TransferResponse, index: int = 0) -> TransferResponse:
    """Flip the lowest mantissa bit of one weight; the asset still decodes."""
    asset = codec.decode(resp.asset_bytes)
    values = asset.weights.values.copy()
    values.view(np.uint32)[index] ^= 1
    tampered = replace(asset, weights=WeightVector(asset.spec, values))
    return replace(resp, asset_bytes=codec.encode(tampered))


def inflate_metrics(resp: TransferResponse, delta: float = 0.05) -> TransferResponse:
    asset = codec.decode(resp.asset_bytes)
    acc = min(1.0, asset.reported.accuracy + delta)
    tampered = replace(asset, reported=Metrics(acc, asset.reported.loss))
    return replace(resp, asset_bytes=codec.encode(tampered))


def producer_resign(asset, network):
    """Refresh retained producer signatures over the asset's current digest, as a colluding producer would."""
    message = codec.digest(asset)
    return asset.with_signatures([(pid, network.client_keys[pid].sign(message)) for pid, _ in asset.signatures])


def collude_resign(resp: TransferResponse, network, count: int | None = None) -> TransferResponse:
    """Have ``count`` (default: a bare majority) of the source cosigners, and the
    asset's producer, sign whatever is in ``resp``."""
    signers = sorted(network.cosigners, key=lambda c: c.index)
    count = cosi.threshold(len(signers)) if count is None else count
    asset = producer_resign(codec.decode(resp.asset_bytes), network)
    message = codec.digest(asset)
    shares = [(c.index, cosi.sign_share(c.keys.secret, message)) for c in signers[:count]]
    sig = cosi.aggregate(shares, len(signers), resp.signature.set_id)
    return replace(resp, asset_bytes=codec.encode(asset), signature=sig)


class SubstitutingRelay(Relay):
    """Serves a different asset than the ledger holds, e.g. one with inflated metrics."""

    def __init__(self, network, substitute, **kwargs):
        super().__init__(network, **kwargs)
        self.substitute = substitute

    def _asset_for_signing(self, asset_id, asset, raw):
        fake = self.substitute(asset)
        return fake, codec.encode(fake)


def inflated(asset, delta: float = 0.05):
    return replace(asset, reported=Metrics(min(1.0, asset.reported.accuracy + delta), asset.reported.loss))
