"""Canonical PFT1 encoding of learning assets, digests and fragmentation.

Byte layout (little-endian throughout, see docs/formats.md)::

    "PFT1"
    u32 network_id | u8 kind | u64 version | u32 producer_id
    u32 n_widths | u32 width * n_widths | u8 activation
    f64 lr | u32 batch_size | u32 local_iterations | u8 optimizer | f64 beta1 | f64 beta2 | f64 eps
    u64 seed | u8 optimizer_id
    u32 len | utf-8 validation pointer
    f64 accuracy | f64 loss
    u64 n_weights | f32 * n_weights
    u32 n_sigs | (u32 signer_id | u32 len | bytes) * n_sigs

The digest is SHA-256 over everything before the signature section.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from .nn import ACTIVATIONS, OPTIMIZERS, Hyperparameters, Metrics, ModelSpec, WeightVector

MAGIC = b"PFT1"
FRAGMENT_SIZE = 800_000


class CodecError(ValueError):
    pass


class BadMagic(CodecError):
    pass


class Truncated(CodecError):
    pass


class TrailingBytes(CodecError):
    pass


class InvalidAsset(CodecError):
    pass


class FragmentError(ValueError):
    pass


class MissingFragment(FragmentError):
    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"missing fragment(s) {self.indices}")


class AssetKind(enum.IntEnum):
    LocalUpdate = 0
    GlobalModel = 1


@dataclass(frozen=True)
class LearningAsset:
    network_id: int
    kind: AssetKind
    version: int
    producer_id: int
    spec: ModelSpec
    hp: Hyperparameters
    seed: int
    optimizer_id: str
    validation_pointer: str
    reported: Metrics
    weights: WeightVector
    signatures: tuple[tuple[int, bytes], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", AssetKind(self.kind))
        object.__setattr__(self, "signatures",
                           tuple((int(i), bytes(s)) for i, s in self.signatures))
        if self.weights.spec != self.spec:
            raise InvalidAsset("weights do not match the asset's model spec")
        for name, bits in (("network_id", 32), ("producer_id", 32), ("version", 64), ("seed", 64)):
            value = getattr(self, name)
            if not 0 <= value < 2 ** bits:
                raise InvalidAsset(f"{name}={value} does not fit in u{bits}")
        if self.optimizer_id not in OPTIMIZERS:
            raise InvalidAsset(f"unknown optimizer {self.optimizer_id!r}")

    @property
    def asset_id(self) -> bytes:
        return digest(self)

    def with_signatures(self, signatures) -> LearningAsset:
        return replace(self, signatures=tuple(signatures))

    def unsigned(self) -> LearningAsset:
        return replace(self, signatures=())


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _encode_body(a: LearningAsset) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<IBQI", a.network_id, int(a.kind), a.version, a.producer_id),
        struct.pack("<I", len(a.spec.layer_widths)),
        struct.pack(f"<{len(a.spec.layer_widths)}I", *a.spec.layer_widths),
        struct.pack("<B", ACTIVATIONS.index(a.spec.hidden_activation)),
        struct.pack("<dIIBddd", a.hp.learning_rate, a.hp.batch_size, a.hp.local_iterations,
                    OPTIMIZERS.index(a.hp.optimizer_id), a.hp.beta1, a.hp.beta2, a.hp.epsilon),
        struct.pack("<QB", a.seed, OPTIMIZERS.index(a.optimizer_id)),
        _pack_str(a.validation_pointer),
        struct.pack("<dd", a.reported.accuracy, a.reported.loss),
        struct.pack("<Q", len(a.weights)),
        a.weights.values.astype("<f4").tobytes(),
    ]
    return b"".join(parts)


def _encode_signatures(sigs) -> bytes:
    parts = [struct.pack("<I", len(sigs))]
    for signer, sig in sigs:
        parts.append(struct.pack("<II", signer, len(sig)))
        parts.append(sig)
    return b"".join(parts)


def encode(a: LearningAsset) -> bytes:
    return _encode_body(a) + _encode_signatures(a.signatures)


def digest(a: LearningAsset) -> bytes:
    return hashlib.sha256(_encode_body(a)).digest()


def encoded_size(spec: ModelSpec, pointer: str, signature_lengths=()) -> int:
    """Length of :func:`encode` output without building it."""
    header = 4 + 17 + 4 + 4 * len(spec.layer_widths) + 1 + 41 + 9
    header += 4 + len(pointer.encode("utf-8")) + 16 + 8
    return header + 4 * spec.param_count + 4 + sum(8 + n for n in signature_lengths)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise Truncated(f"need {n} bytes at offset {self.pos}, only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidAsset("validation pointer is not utf-8") from exc


def _enum_at(table, code, what):
    if code >= len(table):
        raise InvalidAsset(f"unknown {what} code {code}")
    return table[code]


def decode(buf) -> LearningAsset:
    r = _Reader(buf)
    if bytes(r.take(4)) != MAGIC:
        raise BadMagic("not a PFT1 asset")
    network_id, kind, version, producer_id = r.unpack("<IBQI")
    if kind not in (0, 1):
        raise InvalidAsset(f"unknown asset kind {kind}")
    (n_widths,) = r.unpack("<I")
    if n_widths * 4 > len(r.buf) - r.pos:
        raise Truncated(f"layer widths need {n_widths * 4} bytes")
    widths = r.unpack(f"<{n_widths}I")
    (act,) = r.unpack("<B")
    lr, batch, local_it, opt, b1, b2, eps = r.unpack("<dIIBddd")
    seed, opt_id = r.unpack("<QB")
    pointer = r.string()
    acc, loss = r.unpack("<dd")
    (n_weights,) = r.unpack("<Q")
    if n_weights * 4 > len(r.buf) - r.pos:
        raise Truncated(f"weight section needs {n_weights * 4} bytes")
    values = np.frombuffer(r.take(4 * n_weights), dtype="<f4")
    (n_sigs,) = r.unpack("<I")
    sigs = []
    for _ in range(n_sigs):
        signer, n = r.unpack("<II")
        sigs.append((signer, bytes(r.take(n))))
    if r.pos != len(r.buf):
        raise TrailingBytes(f"{len(r.buf) - r.pos} bytes after the signature section")
    try:
        spec = ModelSpec(tuple(widths), _enum_at(ACTIVATIONS, act, "activation"))
        hp = Hyperparameters(lr, batch, local_it, _enum_at(OPTIMIZERS, opt, "optimizer"), b1, b2, eps)
        reported = Metrics(acc, loss)
        weights = WeightVector(spec, values)
        return LearningAsset(network_id, AssetKind(kind), version, producer_id, spec, hp, seed,
                             _enum_at(OPTIMIZERS, opt_id, "optimizer"), pointer, reported,
                             weights, tuple(sigs))
    except InvalidAsset:
        raise
    except ValueError as exc:
        raise InvalidAsset(str(exc)) from exc


def describe(a: LearningAsset) -> str:
    """Human-readable dump, one field per line. Not a stable format."""
    w = a.weights.values
    lines = [
        f"asset_id: {digest(a).hex()}",
        f"network_id: {a.network_id}",
        f"kind: {a.kind.name}",
        f"version: {a.version}",
        f"producer_id: {a.producer_id}",
        f"layer_widths: {list(a.spec.layer_widths)}",
        f"hidden_activation: {a.spec.hidden_activation}",
        f"hyperparameters: {a.hp}",
        f"seed: {a.seed}",
        f"optimizer_id: {a.optimizer_id}",
        f"validation_pointer: {a.validation_pointer}",
        f"reported_accuracy: {a.reported.accuracy!r}",
        f"reported_loss: {a.reported.loss!r}",
        f"n_weights: {w.size}",
        f"weights_head: {w[:8].tolist()}",
        f"signatures: {[(i, s.hex()[:16] + '...') for i, s in a.signatures]}",
        f"encoded_bytes: {len(encode(a))}",
    ]
    return "\n".join(lines)


@dataclass(frozen=True)
class AssetFragment:
    asset_id: bytes
    fragment_number: int
    total_fragments: int
    payload: bytes

    HEADER = struct.Struct("<32sIII")

    def __post_init__(self):
        if len(self.asset_id) != 32:
            raise FragmentError("asset_id must be 32 bytes")
        if not 0 <= self.fragment_number < self.total_fragments:
            raise FragmentError(f"fragment {self.fragment_number} outside 0..{self.total_fragments - 1}")
        if len(self.payload) > FRAGMENT_SIZE:
            raise FragmentError(f"payload of {len(self.payload)} bytes exceeds {FRAGMENT_SIZE}")

    def to_bytes(self) -> bytes:
        """Ledger transaction payload: 44-byte header then the chunk."""
        return self.HEADER.pack(self.asset_id, self.fragment_number, self.total_fragments,
                                len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, raw) -> AssetFragment:
        raw = memoryview(raw)
        if len(raw) < cls.HEADER.size:
            raise Truncated("fragment header truncated")
        asset_id, number, total, n = cls.HEADER.unpack(raw[:cls.HEADER.size])
        if len(raw) != cls.HEADER.size + n:
            raise CodecError("fragment payload length mismatch")
        return cls(asset_id, number, total, bytes(raw[cls.HEADER.size:]))


def fragment_count(n_bytes: int) -> int:
    return -(-n_bytes // FRAGMENT_SIZE)


def fragment(data: bytes, asset_id: bytes) -> list[AssetFragment]:
    if not data:
        raise FragmentError("cannot fragment empty input")
    total = fragment_count(len(data))
    return [AssetFragment(asset_id, i, total, data[i * FRAGMENT_SIZE:(i + 1) * FRAGMENT_SIZE])
            for i in range(total)]


def defragment(frags) -> bytes:
    frags = list(frags)
    if not frags:
        raise FragmentError("no fragments given")
    ids = {f.asset_id for f in frags}
    if len(ids) != 1:
        raise FragmentError(f"fragments from {len(ids)} different assets")
    totals = {f.total_fragments for f in frags}
    if len(totals) != 1:
        raise FragmentError(f"inconsistent total_fragments {sorted(totals)}")
    total = totals.pop()
    by_number = {}
    for f in frags:
        seen = by_number.get(f.fragment_number)
        if seen is not None and seen.payload != f.payload:
            raise FragmentError(f"conflicting duplicates of fragment {f.fragment_number}")
        by_number[f.fragment_number] = f
    missing = [i for i in range(total) if i not in by_number]
    if missing:
        raise MissingFragment(missing)
    for i in range(total - 1):
        if len(by_number[i].payload) != FRAGMENT_SIZE:
            raise FragmentError(f"fragment {i} is short ({len(by_number[i].payload)} bytes)")
    return b"".join(by_number[i].payload for i in range(total))
