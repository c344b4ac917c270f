"""Cross-network relay: request, serve (retrieve + collectively sign), verify and commit.

Wire frames (``PFTR``) are transport-agnostic. :func:`transfer` runs one
exchange in-process; :func:`serve_http` / :func:`http_exchange` carry the same
frames as HTTP POST bodies.
"""
from __future__ import annotations

import hashlib
import secrets
import struct
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import codec, cosi
from .ledger import ById, Latest, Version, control_payload
from .verifier import BAD_AGGREGATE, StageResult, VerificationReport, decode_failure, verify_asset

WIRE_MAGIC = b"PFTR"
TAG_REQUEST = 1
TAG_RESPONSE = 2
SEL_LATEST = 0
SEL_VERSION = 1


class RelayError(Exception):
    pass


class WireError(RelayError):
    pass


class BadRequest(RelayError):
    pass


class ReplayedRequest(RelayError):
    pass


class TransferRejected(RelayError):
    def __init__(self, report: VerificationReport):
        self.report = report
        self.stage = report.failure
        detail = report.signature.detail if not report.signature.ok else (
            report.reproducibility.detail if report.reproducibility else "")
        super().__init__(f"{self.stage}: {detail}")


@dataclass(frozen=True)
class TransferRequest:
    requester_network: int
    requester_client: int
    source_network: int
    selector: Latest | Version
    nonce: int
    signature: bytes = b""

    def body(self) -> bytes:
        if isinstance(self.selector, Latest):
            sel = struct.pack("<BQ", SEL_LATEST, 0)
        elif isinstance(self.selector, Version):
            sel = struct.pack("<BQ", SEL_VERSION, self.selector.version)
        else:
            raise TypeError(f"unsupported selector {self.selector!r}")
        return struct.pack("<III", self.requester_network, self.requester_client,
                           self.source_network) + sel + struct.pack("<Q", self.nonce)

    def signed_digest(self) -> bytes:
        return hashlib.sha256(b"fedchain/transfer-request/v1" + self.body()).digest()


@dataclass(frozen=True)
class TransferResponse:
    nonce: int
    source_network: int
    asset_bytes: bytes
    signature: cosi.CollectiveSignature

    @property
    def set_id(self) -> bytes:
        return self.signature.set_id


def _frame(tag: int, body: bytes) -> bytes:
    return WIRE_MAGIC + struct.pack("<BQ", tag, len(body)) + body


def _blob(b: bytes, fmt="<I") -> bytes:
    return struct.pack(fmt, len(b)) + b


def wire_encode(msg) -> bytes:
    if isinstance(msg, TransferRequest):
        return _frame(TAG_REQUEST, msg.body() + _blob(msg.signature))
    if isinstance(msg, TransferResponse):
        sig = msg.signature
        if len(sig.set_id) != 32:
            raise WireError("set_id must be 32 bytes")
        body = b"".join([struct.pack("<QI", msg.nonce, msg.source_network), _blob(msg.asset_bytes, "<Q"),
                         _blob(sig.aggregate), _blob(sig.bitmap), sig.set_id])
        return _frame(TAG_RESPONSE, body)
    raise TypeError(f"cannot encode {type(msg).__name__}")


class _Cursor:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n):
        if n > len(self.buf) - self.pos:
            raise WireError(f"frame truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return bytes(out)

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self, fmt="<I"):
        (n,) = self.unpack(fmt)
        return self.take(n)


def wire_decode(frame) -> TransferRequest | TransferResponse:
    c = _Cursor(frame)
    if c.take(4) != WIRE_MAGIC:
        raise WireError("bad frame magic")
    tag, n = c.unpack("<BQ")
    if n != len(c.buf) - c.pos:
        raise WireError(f"frame declares {n} body bytes, has {len(c.buf) - c.pos}")
    if tag == TAG_REQUEST:
        req_net, req_client, src, sel_tag, version, nonce = c.unpack("<IIIBQQ")
        if sel_tag == SEL_LATEST:
            selector = Latest()
        elif sel_tag == SEL_VERSION:
            selector = Version(version)
        else:
            raise WireError(f"unknown selector tag {sel_tag}")
        sig = c.blob()
        msg = TransferRequest(req_net, req_client, src, selector, nonce, sig)
    elif tag == TAG_RESPONSE:
        nonce, src = c.unpack("<QI")
        asset = c.blob("<Q")
        agg = c.blob()
        bitmap = c.blob()
        set_id = c.take(32)
        msg = TransferResponse(nonce, src, asset, cosi.CollectiveSignature(agg, bitmap, set_id))
    else:
        raise WireError(f"unknown frame type {tag}")
    if c.pos != len(c.buf):
        raise WireError("trailing bytes in frame")
    return msg


@dataclass
class ServeStats:
    retrieval: object = None
    cosi: cosi.CoSiStats | None = None
    duration: float = 0.0


class Relay:
    """One network's relay service.

    ``network`` supplies ``network_id``, ``ledger``, ``iin``, ``cosigners``,
    ``client_keys`` and ``relay_id``.
    """

    def __init__(self, network, concurrent_cosi: bool = True):
        self.network = network
        self.concurrent_cosi = concurrent_cosi
        self._lock = threading.Lock()
        self._pending: dict[int, TransferRequest] = {}
        self._seen: set[tuple[int, int, int]] = set()
        self.last_serve: ServeStats | None = None

    # -- requesting side -------------------------------------------------

    def request_asset(self, client_id: int, source_network: int, selector=None,
                      nonce: int | None = None) -> TransferRequest:
        keys = self.network.client_keys.get(client_id)
        if keys is None:
            raise BadRequest(f"client {client_id} has no identity on network {self.network.network_id}")
        self.network.iin.lookup(self.network.network_id, client_id)
        nonce = secrets.randbits(64) if nonce is None else nonce
        req = TransferRequest(self.network.network_id, client_id, source_network,
                              selector or Latest(), nonce)
        req = TransferRequest(req.requester_network, req.requester_client, req.source_network,
                              req.selector, req.nonce, keys.sign(req.signed_digest()))
        with self._lock:
            self._pending[nonce] = req
        return req

    def receive_and_commit(self, resp: TransferResponse, expected_source: int):
        """Verify a response and, only on success, enter the asset into the local ledger."""
        with self._lock:
            req = self._pending.pop(resp.nonce, None)
        if req is None:
            raise RelayError(f"no pending request with nonce {resp.nonce}")
        t0 = time.perf_counter()
        try:
            asset = codec.decode(resp.asset_bytes)
        except codec.CodecError as exc:
            raise TransferRejected(decode_failure(exc, time.perf_counter() - t0)) from exc
        if resp.source_network != expected_source or asset.network_id != expected_source:
            raise TransferRejected(VerificationReport(StageResult(
                False, BAD_AGGREGATE, time.perf_counter() - t0,
                f"asset claims network {asset.network_id}, expected {expected_source}")))
        report = verify_asset(asset, resp.signature, expected_source, self.network.iin)
        if not report.accepted:
            raise TransferRejected(report)
        ledger = self.network.ledger
        asset_id = codec.digest(asset)
        try:
            ledger.index_record(asset_id)
        except KeyError:
            ledger.put_asset(asset, submitter_id=self.network.relay_id, provenance={
                "source_network": expected_source, "set_id": resp.set_id.hex(),
                "aggregate": resp.signature.aggregate.hex(), "bitmap": resp.signature.bitmap.hex(),
            })
        return asset, report

    # -- serving side ----------------------------------------------------

    def _check_request(self, req: TransferRequest):
        if req.source_network != self.network.network_id:
            raise BadRequest(f"request addressed to network {req.source_network}")
        try:
            record = self.network.iin.lookup(req.requester_network, req.requester_client)
        except Exception as exc:
            raise BadRequest(f"unknown requester: {exc}") from exc
        if not cosi.verify_share(record.public_key, req.signed_digest(), req.signature):
            raise BadRequest("request signature does not verify")
        key = (req.requester_network, req.requester_client, req.nonce)
        with self._lock:
            if key in self._seen:
                raise ReplayedRequest(f"nonce {req.nonce} already served")
            self._seen.add(key)

    def _selector(self, req):
        if isinstance(req.selector, Version):
            return Version(req.selector.version, self.network.network_id)
        return Latest(self.network.network_id)

    def _asset_for_signing(self, asset_id: bytes, asset, raw: bytes):
        """The bytes put up for collective signing. Adversarial doubles override this."""
        return asset, raw

    def serve_request(self, req: TransferRequest) -> TransferResponse:
        t0 = time.perf_counter()
        self._check_request(req)
        ledger = self.network.ledger
        selector = self._selector(req)
        # the lookup goes through the ordered log, not a side read
        ledger.submit(self.network.relay_id, control_payload({
            "op": "query", "requester_network": req.requester_network,
            "requester_client": req.requester_client, "nonce": req.nonce,
            "selector": type(selector).__name__, "version": getattr(selector, "version", None),
        }))
        asset, retrieval = ledger.get_asset(ById(ledger.resolve(selector)))
        asset, raw = self._asset_for_signing(retrieval.asset_id, asset, codec.encode(asset))
        keys, set_id = self.network.iin.lookup_network_keys(self.network.network_id)
        sig, cstats = cosi.cosi_round(self.network.cosigners, set_id, selector, codec.digest(asset),
                                      concurrent=self.concurrent_cosi)
        self.last_serve = ServeStats(retrieval, cstats, time.perf_counter() - t0)
        return TransferResponse(req.nonce, self.network.network_id, raw, sig)

    def handle_frame(self, frame: bytes) -> bytes:
        msg = wire_decode(frame)
        if not isinstance(msg, TransferRequest):
            raise WireError("expected a request frame")
        return wire_encode(self.serve_request(msg))


@dataclass
class TransferStats:
    request_bytes: int = 0
    response_bytes: int = 0
    retrieval_s: float = 0.0
    cosi_s: float = 0.0
    verify_s: float = 0.0
    total_s: float = 0.0
    report: VerificationReport | None = None


def transfer(requester: Relay, source: Relay, client_id: int, selector=None, tamper=None,
             exchange=None):
    """Run one request/response exchange and commit on the requesting side.

    ``tamper(response) -> response`` models an in-flight adversary. ``exchange``
    replaces the in-process call with a transport (e.g. :func:`http_exchange`).
    Returns ``(asset, stats)``; rejections raise :class:`TransferRejected`.
    """
    t0 = time.perf_counter()
    stats = TransferStats()
    req = requester.request_asset(client_id, source.network.network_id, selector)
    frame = wire_encode(req)
    stats.request_bytes = len(frame)
    reply = exchange(frame) if exchange is not None else source.handle_frame(frame)
    stats.response_bytes = len(reply)
    if source.last_serve is not None:
        stats.retrieval_s = source.last_serve.retrieval.duration
        stats.cosi_s = source.last_serve.cosi.duration
    resp = wire_decode(reply)
    if tamper is not None:
        resp = tamper(resp)
    try:
        asset, report = requester.receive_and_commit(resp, source.network.network_id)
    except TransferRejected as exc:
        stats.report = exc.report
        stats.verify_s = exc.report.total_duration
        stats.total_s = time.perf_counter() - t0
        exc.stats = stats
        raise
    stats.report = report
    stats.verify_s = report.total_duration
    stats.total_s = time.perf_counter() - t0
    return asset, stats


class _Handler(BaseHTTPRequestHandler):
    relay: Relay = None

    def do_POST(self):
        n = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(n)
        try:
            out = self.relay.handle_frame(body)
            status = 200
        except RelayError as exc:
            out, status = str(exc).encode(), 400
        except Exception as exc:
            out, status = f"{type(exc).__name__}: {exc}".encode(), 500
        self.send_response(status)
        self.send_header("Content-Type", "application/octet-stream")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


def serve_http(relay: Relay, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Start a background HTTP endpoint for ``relay``; POST a request frame, receive a response frame."""
    handler = type("RelayHandler", (_Handler,), {"relay": relay})
    server = ThreadingHTTPServer((host, port), handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def http_exchange(url: str, frame: bytes, timeout: float = 120.0) -> bytes:
    req = urllib.request.Request(url, data=frame, method="POST",
                                 headers={"Content-Type": "application/octet-stream"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.read()
    except urllib.error.HTTPError as exc:
        raise RelayError(f"relay answered {exc.code}: {exc.read().decode(errors='replace')}") from exc
