"""In-process permissioned ledger: a hash-chained, append-only transaction log.

One sequencer orders all submissions. Each transaction becomes its own block.
Assets are stored as fragment transactions followed by one control
transaction that indexes them; an asset is only visible once that index
record lands, so a failed entry never shows up in version queries.
"""
from __future__ import annotations

import enum
import hashlib
import json
import struct
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import codec
from .codec import AssetFragment, AssetKind, LearningAsset

TX_CAP = 1_200_000
CONTROL_MAGIC = b"PFTC"
LOG_MAGIC = b"PFTL"
GENESIS_HASH = bytes(32)


class LedgerError(Exception):
    pass


class OversizePayload(LedgerError):
    def __init__(self, size, limit):
        self.size, self.limit = size, limit
        super().__init__(f"payload of {size} bytes exceeds the {limit}-byte transaction cap")


class DuplicateVersion(LedgerError):
    pass


class UnknownAsset(LedgerError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown asset"


class IncompleteAsset(LedgerError):
    def __init__(self, asset_id, missing):
        self.asset_id, self.missing = asset_id, list(missing)
        super().__init__(f"asset {asset_id.hex()[:16]} is missing fragment(s) {self.missing}")


class CorruptAsset(LedgerError):
    pass


class PayloadKind(enum.IntEnum):
    Fragment = 0
    Control = 1


_TX_HEADER = struct.Struct("<QIBdI")


@dataclass(frozen=True)
class Transaction:
    tx_id: int
    submitter_id: int
    payload: bytes
    payload_kind: PayloadKind
    timestamp: float

    def to_bytes(self) -> bytes:
        return _TX_HEADER.pack(self.tx_id, self.submitter_id, int(self.payload_kind),
                               self.timestamp, len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> Transaction:
        tx_id, submitter, kind, ts, n = _TX_HEADER.unpack_from(raw)
        payload = bytes(raw[_TX_HEADER.size:])
        if len(payload) != n:
            raise LedgerError("transaction frame length mismatch")
        return cls(tx_id, submitter, payload, PayloadKind(kind), ts)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]
    block_hash: bytes


def block_hash(height: int, prev_hash: bytes, txs) -> bytes:
    h = hashlib.sha256(prev_hash)
    h.update(struct.pack("<QI", height, len(txs)))
    for tx in txs:
        h.update(tx.to_bytes())
    return h.digest()


@dataclass(frozen=True)
class Receipt:
    tx_id: int
    height: int


@dataclass(frozen=True)
class EntryStats:
    asset_id: bytes
    fragment_count: int
    asset_bytes: int
    duration: float


@dataclass(frozen=True)
class RetrievalStats:
    asset_id: bytes
    fragment_count: int
    asset_bytes: int
    duration: float


@dataclass(frozen=True)
class Latest:
    network_id: int | None = None


@dataclass(frozen=True)
class Version:
    version: int
    network_id: int | None = None


@dataclass(frozen=True)
class ById:
    asset_id: bytes


@dataclass(frozen=True)
class AuditResult:
    blocks: list
    ok: bool
    broken_at: int | None = None


@dataclass(frozen=True)
class IndexRecord:
    asset_id: bytes
    network_id: int
    kind: AssetKind
    version: int
    producer_id: int
    fragments: int
    size: int
    provenance: dict


def control_payload(record: dict) -> bytes:
    return CONTROL_MAGIC + json.dumps(record, sort_keys=True, separators=(",", ":")).encode()


def parse_control(payload: bytes) -> dict | None:
    if not payload.startswith(CONTROL_MAGIC):
        return None
    return json.loads(payload[len(CONTROL_MAGIC):])


class Ledger:
    """One network's chain plus its fragment and version indexes."""

    def __init__(self, network_id: int, tx_cap: int = TX_CAP, clock=time.time, log_path=None):
        self.network_id = network_id
        self.tx_cap = tx_cap
        self.clock = clock
        self._lock = threading.RLock()
        self._blocks: list[Block] = []
        self._txs: list[Transaction] = []
        self._fragments: dict[tuple[bytes, int], int] = {}
        self._assets: dict[bytes, IndexRecord] = {}
        self._versions: dict[tuple, bytes] = {}
        self._latest: dict[int, int] = {}
        self._log = None
        if log_path is not None:
            self._log = open(log_path, "ab")

    # -- chain -------------------------------------------------------------

    @property
    def height(self) -> int:
        return len(self._blocks)

    @property
    def latest_global_version(self) -> int | None:
        return self._latest.get(self.network_id)

    def latest_version(self, network_id: int | None = None) -> int | None:
        return self._latest.get(self.network_id if network_id is None else network_id)

    def submit(self, submitter_id: int, payload: bytes,
               kind: PayloadKind = PayloadKind.Control) -> Receipt:
        if len(payload) > self.tx_cap:
            raise OversizePayload(len(payload), self.tx_cap)
        with self._lock:
            tx = Transaction(len(self._txs), submitter_id, bytes(payload), kind, float(self.clock()))
            return self._append(tx)

    def _append(self, tx: Transaction) -> Receipt:
        height = len(self._blocks)
        prev = self._blocks[-1].block_hash if self._blocks else GENESIS_HASH
        block = Block(height, prev, (tx,), block_hash(height, prev, (tx,)))
        self._blocks.append(block)
        self._txs.append(tx)
        self._apply(tx)
        if self._log is not None:
            raw = tx.to_bytes()
            self._log.write(LOG_MAGIC + struct.pack("<Q", len(raw)) + raw)
            self._log.flush()
        return Receipt(tx.tx_id, height)

    def _apply(self, tx: Transaction):
        if tx.payload_kind == PayloadKind.Fragment:
            frag = AssetFragment.from_bytes(tx.payload)
            self._fragments[(frag.asset_id, frag.fragment_number)] = tx.tx_id
            return
        record = parse_control(tx.payload)
        if record is None or record.get("op") != "index":
            return
        rec = IndexRecord(bytes.fromhex(record["asset_id"]), record["network_id"],
                          AssetKind(record["kind"]), record["version"], record["producer_id"],
                          record["fragments"], record["size"], record.get("provenance", {}))
        self._assets[rec.asset_id] = rec
        self._versions[self._version_key(rec.network_id, rec.kind, rec.version, rec.producer_id)] = rec.asset_id
        if rec.kind == AssetKind.GlobalModel:
            self._latest[rec.network_id] = max(self._latest.get(rec.network_id, rec.version), rec.version)

    @staticmethod
    def _version_key(network_id, kind, version, producer_id):
        # several clients publish a local update per round, one global model per version
        if kind == AssetKind.GlobalModel:
            return (network_id, int(kind), version)
        return (network_id, int(kind), version, producer_id)

    def close(self):
        if self._log is not None:
            self._log.close()
            self._log = None

    @classmethod
    def replay(cls, path, network_id: int, **kwargs) -> Ledger:
        """Rebuild a ledger from its append-only log file."""
        ledger = cls(network_id, **kwargs)
        data = Path(path).read_bytes()
        pos = 0
        while pos < len(data):
            if data[pos:pos + 4] != LOG_MAGIC or pos + 12 > len(data):
                raise LedgerError(f"corrupt log frame at byte {pos}")
            (n,) = struct.unpack_from("<Q", data, pos + 4)
            raw = data[pos + 12:pos + 12 + n]
            if len(raw) != n:
                raise LedgerError(f"truncated log frame at byte {pos}")
            ledger._append(Transaction.from_bytes(raw))
            pos += 12 + n
        return ledger

    def blocks(self) -> list[Block]:
        with self._lock:
            return list(self._blocks)

    def audit(self, start: int = 0, stop: int | None = None) -> AuditResult:
        with self._lock:
            blocks = list(self._blocks)
        stop = len(blocks) if stop is None else stop
        if not 0 <= start <= stop <= len(blocks):
            raise IndexError(f"audit range [{start}, {stop}) outside height {len(blocks)}")
        prev = blocks[start - 1].block_hash if start > 0 else GENESIS_HASH
        for b in blocks[start:stop]:
            if b.prev_hash != prev or block_hash(b.height, b.prev_hash, b.txs) != b.block_hash:
                return AuditResult(blocks[start:stop], False, b.height)
            prev = b.block_hash
        return AuditResult(blocks[start:stop], True, None)

    # -- assets ------------------------------------------------------------

    def put_asset(self, asset: LearningAsset, submitter_id: int | None = None,
                  provenance: dict | None = None) -> EntryStats:
        t0 = time.perf_counter()
        submitter = asset.producer_id if submitter_id is None else submitter_id
        key = self._version_key(asset.network_id, asset.kind, asset.version, asset.producer_id)
        raw = codec.encode(asset)
        asset_id = codec.digest(asset)
        frags = codec.fragment(raw, asset_id)
        with self._lock:
            if key in self._versions:
                raise DuplicateVersion(
                    f"{asset.kind.name} version {asset.version} of network {asset.network_id} already stored")
            for frag in frags:
                self.submit(submitter, frag.to_bytes(), PayloadKind.Fragment)
            self.submit(submitter, control_payload({
                "op": "index", "asset_id": asset_id.hex(), "network_id": asset.network_id,
                "kind": int(asset.kind), "version": asset.version, "producer_id": asset.producer_id,
                "fragments": len(frags), "size": len(raw), "provenance": provenance or {},
            }))
        return EntryStats(asset_id, len(frags), len(raw), time.perf_counter() - t0)

    def resolve(self, selector) -> bytes:
        with self._lock:
            if isinstance(selector, ById):
                if selector.asset_id not in self._assets:
                    raise UnknownAsset(f"no asset with id {selector.asset_id.hex()[:16]}")
                return selector.asset_id
            net = self.network_id if selector.network_id is None else selector.network_id
            if isinstance(selector, Latest):
                version = self._latest.get(net)
                if version is None:
                    raise UnknownAsset(f"network {net} has no global model yet")
            elif isinstance(selector, Version):
                version = selector.version
            else:
                raise TypeError(f"unsupported selector {selector!r}")
            key = (net, int(AssetKind.GlobalModel), version)
            if key not in self._versions:
                raise UnknownAsset(f"network {net} has no global model version {version}")
            return self._versions[key]

    def local_update_id(self, network_id: int, version: int, producer_id: int) -> bytes:
        key = (network_id, int(AssetKind.LocalUpdate), version, producer_id)
        try:
            return self._versions[key]
        except KeyError:
            raise UnknownAsset(f"no local update v{version} from client {producer_id}") from None

    def index_record(self, asset_id: bytes) -> IndexRecord:
        try:
            return self._assets[asset_id]
        except KeyError:
            raise UnknownAsset(f"no asset with id {asset_id.hex()[:16]}") from None

    def fetch_bytes(self, asset_id: bytes) -> bytes:
        """Gather and stitch an asset's fragments."""
        with self._lock:
            rec = self.index_record(asset_id)
            found, missing = [], []
            for i in range(rec.fragments):
                tx_id = self._fragments.get((asset_id, i))
                if tx_id is None:
                    missing.append(i)
                else:
                    found.append(self._txs[tx_id])
        if missing:
            raise IncompleteAsset(asset_id, missing)
        return codec.defragment(AssetFragment.from_bytes(tx.payload) for tx in found)

    def get_asset(self, selector) -> tuple[LearningAsset, RetrievalStats]:
        t0 = time.perf_counter()
        asset_id = self.resolve(selector)
        raw = self.fetch_bytes(asset_id)
        try:
            asset = codec.decode(raw)
        except codec.CodecError as exc:
            raise CorruptAsset(f"stored asset {asset_id.hex()[:16]} does not decode: {exc}") from exc
        if codec.digest(asset) != asset_id:
            raise CorruptAsset(f"stored asset {asset_id.hex()[:16]} fails its digest check")
        rec = self._assets[asset_id]
        return asset, RetrievalStats(asset_id, rec.fragments, len(raw), time.perf_counter() - t0)

    def provenance(self, asset_id: bytes) -> dict:
        return dict(self.index_record(asset_id).provenance)

    def state_fingerprint(self) -> tuple:
        """Comparable summary of height and version index, for no-commit checks."""
        with self._lock:
            return (len(self._blocks), tuple(sorted(self._versions.items())), dict(self._latest))

    # -- fault-injection hooks (tests and adversarial scenarios) -----------

    def _drop_fragment(self, asset_id: bytes, fragment_number: int):
        with self._lock:
            del self._fragments[(asset_id, fragment_number)]

    def _tamper(self, height: int, byte_offset: int = 0):
        """Flip one payload byte of the block at ``height`` without rehashing."""
        with self._lock:
            b = self._blocks[height]
            tx = b.txs[0]
            payload = bytearray(tx.payload)
            payload[byte_offset] ^= 0xFF
            new_tx = replace(tx, payload=bytes(payload))
            self._blocks[height] = replace(b, txs=(new_tx,))
            self._txs[tx.tx_id] = new_tx
