"""Receiver-side checks on a transferred asset: endorsement, then reproducibility."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

from . import codec, cosi
from .codec import LearningAsset
from .data import resolve_pointer
from .iin import RegistryError
from .nn import Metrics, evaluate

log = logging.getLogger(__name__)

BELOW_THRESHOLD = "BelowThreshold"
BAD_AGGREGATE = "BadAggregate"
IRREPRODUCIBLE = "Irreproducible"
DECODE_ERROR = "DecodeError"

DEFAULT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class StageResult:
    ok: bool
    reason: str
    duration: float = 0.0
    detail: str = ""


@dataclass(frozen=True)
class VerificationReport:
    signature: StageResult
    reproducibility: StageResult | None = None
    computed: Metrics | None = None
    reported: Metrics | None = None
    total_duration: float = 0.0

    @property
    def accepted(self) -> bool:
        return self.signature.ok and self.reproducibility is not None and self.reproducibility.ok

    @property
    def failure(self) -> str | None:
        if not self.signature.ok:
            return self.signature.reason
        if self.reproducibility is None or not self.reproducibility.ok:
            return self.reproducibility.reason if self.reproducibility else IRREPRODUCIBLE
        return None

    @property
    def signature_ms(self) -> float:
        return 1000.0 * self.signature.duration

    @property
    def reproducibility_ms(self) -> float:
        return 1000.0 * (self.reproducibility.duration if self.reproducibility else 0.0)


def verify_signature(asset: LearningAsset, sig: cosi.CollectiveSignature, source_network: int,
                     iin) -> StageResult:
    """Check the collective signature against the source network's registered cosigners.

    Registry lookup failures propagate as exceptions; they are not rejections.
    """
    t0 = time.perf_counter()
    keys, set_id = iin.lookup_network_keys(source_network)
    n = len(keys)
    if sig.set_id != set_id:
        return StageResult(False, BAD_AGGREGATE, time.perf_counter() - t0,
                           f"signature set {sig.set_id.hex()[:16]} is not network {source_network}'s cosigner set")
    digest = codec.digest(asset)
    verdict = cosi.verify_collective(keys, sig, digest, set_id)
    detail = f"{len(verdict.signers)} of {n} signed, {verdict.needed} required"
    if verdict.ok:
        # the digest leaves out the signatures section, so retained producer
        # signatures are checked on their own against registered keys
        bad = _bad_producer_signature(asset, digest, iin)
        if bad:
            return StageResult(False, BAD_AGGREGATE, time.perf_counter() - t0, bad)
        return StageResult(True, "ok", time.perf_counter() - t0, detail)
    reason = BELOW_THRESHOLD if verdict.reason == cosi.BELOW_THRESHOLD else BAD_AGGREGATE
    return StageResult(False, reason, time.perf_counter() - t0, f"{verdict.reason}: {detail}")


def _bad_producer_signature(asset: LearningAsset, digest: bytes, iin) -> str:
    for signer, sig in asset.signatures:
        try:
            key = iin.lookup(asset.network_id, signer).public_key
        except RegistryError:
            return f"producer signature from unregistered signer {signer}"
        if not cosi.verify_share(key, digest, sig):
            return f"producer signature from signer {signer} does not verify"
    return ""


def verify_reproducibility(asset: LearningAsset, tol: float = DEFAULT_TOLERANCE,
                           resolver=resolve_pointer) -> tuple[StageResult, Metrics]:
    """Evaluate the weights on the public validation data.

    Only under-performance is rejected: the asset fails when the computed
    accuracy is below the reported accuracy by more than ``tol``.
    """
    t0 = time.perf_counter()
    dataset = resolver(asset.validation_pointer)
    computed = evaluate(asset.weights, dataset)
    gap = asset.reported.accuracy - computed.accuracy
    if abs(computed.loss - asset.reported.loss) > 1e-6:
        log.info("loss differs from reported: computed %.6f, reported %.6f", computed.loss, asset.reported.loss)
    detail = f"computed accuracy {computed.accuracy:.6f}, reported {asset.reported.accuracy:.6f}"
    if gap > tol:
        return StageResult(False, IRREPRODUCIBLE, time.perf_counter() - t0,
                           detail + f", gap {gap:.6f}"), computed
    return StageResult(True, "ok", time.perf_counter() - t0, detail), computed


def verify_asset(asset: LearningAsset, sig: cosi.CollectiveSignature, source_network: int, iin,
                 tol: float = DEFAULT_TOLERANCE, resolver=resolve_pointer) -> VerificationReport:
    t0 = time.perf_counter()
    stage1 = verify_signature(asset, sig, source_network, iin)
    if not stage1.ok:
        return VerificationReport(stage1, None, None, asset.reported, time.perf_counter() - t0)
    stage2, computed = verify_reproducibility(asset, tol, resolver)
    return VerificationReport(stage1, stage2, computed, asset.reported, time.perf_counter() - t0)


def decode_failure(exc: Exception, duration: float = 0.0) -> VerificationReport:
    return VerificationReport(StageResult(False, DECODE_ERROR, duration, str(exc)))
