"""Federated training over one simulated network.

A :class:`Network` bundles a ledger, an event stream, FL clients with i.i.d
data shards, an aggregation contract and a set of cosigning peers, all
registered with a shared identity registry. Each global round: clients pull
the latest global asset, train locally, enter and announce a signed local
update; the contract waits for a quorum, averages, and enters the next global
version.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import codec, cosi
from .codec import AssetKind, LearningAsset
from .data import Dataset, make_blobs, partition_iid, resolve_pointer, split, synth_uri
from .iin import IdentityRecord, Role
from .ledger import ById, Ledger
from .nn import Hyperparameters, Metrics, ModelSpec, WeightVector, evaluate, init_weights, train_local
from .relay import Relay
from .stream import EventStream, MessageKind, StreamMessage

CONTRACT_ID = 0
RELAY_ID = 900
COSIGNER_BASE = 1000
LOCAL_TOPIC = "local-updates"
GLOBAL_TOPIC = "global-models"
VALIDATION_SEED_OFFSET = 7919
_U63 = (1 << 63) - 1


def derive_seed(*parts: int) -> int:
    """Independent 63-bit seed for a tuple of integers."""
    state = np.random.SeedSequence([int(p) & _U63 for p in parts]).generate_state(1, np.uint64)
    return int(state[0]) & _U63


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    n: int = 2000
    d: int = 8
    classes: int = 4
    rot: float = 0.0
    shift: float = 0.0
    validation_n: int = 500
    test_fraction: float = 0.1

    @property
    def validation_pointer(self) -> str:
        return synth_uri(self.seed + VALIDATION_SEED_OFFSET, self.validation_n, self.d, self.classes,
                         self.rot, self.shift)


@dataclass(frozen=True)
class RoundConfig:
    client_count: int = 8
    quorum: int | None = None
    local_iterations: int = 2
    batch_size: int = 32
    hp: Hyperparameters = Hyperparameters()
    global_rounds: int = 20
    spec: ModelSpec = ModelSpec((8, 128, 128, 4))
    data: DataConfig = DataConfig()
    seed: int = 0
    cosigners: int = 5
    deterministic: bool = True
    quorum_timeout: float = 30.0

    def __post_init__(self):
        k = self.client_count if self.quorum is None else self.quorum
        if not 1 <= k <= self.client_count:
            raise ValueError(f"quorum {k} must lie in 1..{self.client_count}")
        if self.local_iterations < 1:
            raise ValueError("local_iterations must be >= 1")
        if self.cosigners < 1:
            raise ValueError("a network needs at least one cosigner")

    @property
    def k(self) -> int:
        return self.client_count if self.quorum is None else self.quorum

    @property
    def effective_hp(self) -> Hyperparameters:
        return replace(self.hp, batch_size=self.batch_size, local_iterations=self.local_iterations)


@dataclass(frozen=True)
class RoundReport:
    round: int
    version: int
    pre_test: Metrics
    pre_val: Metrics
    post_test: Metrics
    post_val: Metrics
    round_duration: float


CSV_COLUMNS = ["round", "version", "pre_test_acc", "pre_test_loss", "pre_val_acc", "pre_val_loss",
               "post_test_acc", "post_test_loss", "post_val_acc", "post_val_loss", "round_ms"]


def report_row(r: RoundReport) -> list:
    row = [r.round, r.version]
    for m in (r.pre_test, r.pre_val, r.post_test, r.post_val):
        row += [repr(m.accuracy), repr(m.loss)]
    return row + [f"{1000.0 * r.round_duration:.3f}"]


def write_reports_csv(reports, path, include_timing: bool = True):
    cols = CSV_COLUMNS if include_timing else CSV_COLUMNS[:-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in reports:
            w.writerow(report_row(r)[:len(cols)])


def aggregate_fedavg(locals_) -> WeightVector:
    """Sample-weighted mean of weight vectors, accumulated in float64."""
    locals_ = list(locals_)
    if not locals_:
        raise ValueError("nothing to aggregate")
    spec = locals_[0][0].spec
    if any(w.spec != spec for w, _ in locals_):
        raise ValueError("cannot average models with different specs")
    if any(n < 1 for _, n in locals_):
        raise ValueError("sample counts must be >= 1")
    total = float(sum(n for _, n in locals_))
    acc = np.zeros(spec.param_count, dtype=np.float64)
    for w, n in locals_:
        acc += (n / total) * w.values.astype(np.float64)
    return WeightVector(spec, acc)


def _mean(metrics) -> Metrics:
    metrics = list(metrics)
    return Metrics(float(np.mean([m.accuracy for m in metrics])), float(np.mean([m.loss for m in metrics])))


def compute_metrics(global_w: WeightVector, client_ws, global_test: Dataset, client_tests):
    """(pre_test, pre_val, post_test, post_val); client averages are unweighted."""
    client_ws = list(client_ws)
    client_tests = list(client_tests)
    if len(global_test) == 0 or not client_tests or any(len(t) == 0 for t in client_tests):
        raise ValueError("test sets must be non-empty")
    if len(client_ws) != len(client_tests):
        raise ValueError("need one test set per client model")
    pre_test = evaluate(global_w, global_test)
    pre_val = _mean(evaluate(global_w, t) for t in client_tests)
    post_test = _mean(evaluate(w, global_test) for w in client_ws)
    post_val = _mean(evaluate(w, t) for w, t in zip(client_ws, client_tests))
    return pre_test, pre_val, post_test, post_val


def init_from_asset(asset: LearningAsset, target_spec: ModelSpec, seed: int) -> tuple[WeightVector, int]:
    """Copy every leading layer whose shape matches, initialise the rest fresh.

    Returns the new weights and the number of copied layers.
    """
    src_shapes = asset.spec.layer_shapes
    dst_shapes = target_spec.layer_shapes
    if asset.spec.input_dim != target_spec.input_dim:
        raise ValueError(f"input dims differ: {asset.spec.input_dim} vs {target_spec.input_dim}")
    fresh = init_weights(target_spec, seed).layers()
    src = asset.weights.layers()
    out, copied = [], 0
    for i, shape in enumerate(dst_shapes):
        if copied == i and i < len(src_shapes) and src_shapes[i] == shape:
            out.append(src[i])
            copied += 1
        else:
            out.append(fresh[i])
    flat = np.concatenate([np.concatenate([w.reshape(-1), b]) for w, b in out])
    return WeightVector(target_spec, flat), copied


@dataclass
class Client:
    client_id: int
    keys: cosi.KeyPair
    train: Dataset
    test: Dataset


@dataclass
class LocalResult:
    client_id: int
    weights: WeightVector
    asset_id: bytes


class Network:
    """One permissioned network running federated training."""

    def __init__(self, network_id: int, config: RoundConfig, iin, initial_weights: WeightVector | None = None,
                 with_clients: bool = True, ledger: Ledger | None = None):
        self.network_id = network_id
        self.config = config
        self.iin = iin
        self.ledger = ledger if ledger is not None else Ledger(network_id)
        self.stream = EventStream(config.quorum_timeout)
        self.relay_id = RELAY_ID
        self.client_keys: dict[int, cosi.KeyPair] = {}
        self.clients: list[Client] = []
        self.sample_counts: dict[int, int] = {}
        self.reports: list[RoundReport] = []
        self.round = 0

        self.contract_keys = self._enroll(CONTRACT_ID, Role.CLIENT)
        self._enroll(RELAY_ID, Role.RELAY)
        self.stream.register(CONTRACT_ID)

        self.cosigners = []
        for i in range(config.cosigners):
            keys = self._enroll(COSIGNER_BASE + i, Role.COSIGNER)
            self.cosigners.append(cosi.Cosigner(i, keys, self._ledger_digest))

        cfg = config.data
        iin.set_validation_pointer(network_id, cfg.validation_pointer)
        self.validation_pointer = cfg.validation_pointer
        self.global_test = resolve_pointer(self.validation_pointer)
        if with_clients:
            full = make_blobs(cfg.seed, cfg.n, cfg.d, cfg.classes, cfg.rot, cfg.shift)
            shards = partition_iid(full, config.client_count, derive_seed(config.seed, network_id, 1))
            for j, shard in enumerate(shards):
                cid = j + 1
                keys = self._enroll(cid, Role.CLIENT)
                train, test = split(shard, cfg.test_fraction, derive_seed(config.seed, network_id, 2, cid))
                self.clients.append(Client(cid, keys, train, test))
                self.sample_counts[cid] = len(train)
                self.stream.register(cid)

        self.relay = Relay(self, concurrent_cosi=not config.deterministic)
        weights = initial_weights if initial_weights is not None else init_weights(
            config.spec, derive_seed(config.seed, network_id, 0))
        self._enter_global(0, weights, round=0)

    def _enroll(self, client_id: int, roles: Role) -> cosi.KeyPair:
        keys = cosi.keygen(derive_seed(self.config.seed, self.network_id, 3, client_id), client_id)
        self.iin.register(IdentityRecord(self.network_id, client_id, keys.public,
                                         cosi.prove_possession(keys.secret), roles))
        self.client_keys[client_id] = keys
        return keys

    def _ledger_digest(self, selector) -> bytes:
        """A cosigner's own view: re-read the asset from the ledger and hash it."""
        asset_id = self.ledger.resolve(selector)
        return codec.digest(codec.decode(self.ledger.fetch_bytes(asset_id)))

    # -- assets ------------------------------------------------------------

    def make_asset(self, kind: AssetKind, version: int, producer: int, weights: WeightVector,
                   reported: Metrics, seed: int) -> LearningAsset:
        hp = self.config.effective_hp
        asset = LearningAsset(self.network_id, kind, version, producer, weights.spec, hp, seed,
                              hp.optimizer_id, self.validation_pointer, reported, weights)
        keys = self.client_keys[producer]
        return asset.with_signatures([(producer, keys.sign(codec.digest(asset)))])

    def _enter_global(self, version: int, weights: WeightVector, round: int) -> LearningAsset:
        reported = evaluate(weights, self.global_test)
        asset = self.make_asset(AssetKind.GlobalModel, version, CONTRACT_ID, weights, reported,
                                derive_seed(self.config.seed, self.network_id, 0))
        stats = self.ledger.put_asset(asset)
        self.last_entry = stats
        self.stream.publish(GLOBAL_TOPIC, StreamMessage(round, MessageKind.GlobalUpdate, CONTRACT_ID,
                                                        stats.asset_id, version))
        return asset

    @property
    def version(self) -> int:
        return self.ledger.latest_global_version

    def latest_global(self) -> LearningAsset:
        msg = self.stream.read_from(GLOBAL_TOPIC, 0)[-1]
        return self.ledger.get_asset(ById(msg.asset_id))[0]

    def adopt(self, weights: WeightVector) -> LearningAsset:
        """Enter ``weights`` as the next global version (e.g. from a transferred asset)."""
        return self._enter_global(self.version + 1, weights, self.round)

    # -- training ----------------------------------------------------------

    def client_update(self, client: Client, round: int) -> LocalResult:
        msgs = self.stream.read_from(GLOBAL_TOPIC, 0)
        base, _ = self.ledger.get_asset(ById(msgs[-1].asset_id))
        seed = derive_seed(self.config.seed, self.network_id, 4, round, client.client_id)
        weights, _ = train_local(base.weights, client.train, self.config.effective_hp,
                                 self.config.local_iterations, seed)
        # reported metrics are taken on the public validation set so they can be re-checked
        reported = evaluate(weights, self.global_test)
        asset = self.make_asset(AssetKind.LocalUpdate, base.version + 1, client.client_id, weights,
                                reported, seed)
        stats = self.ledger.put_asset(asset)
        self.stream.publish(LOCAL_TOPIC, StreamMessage(round, MessageKind.LocalUpdate, client.client_id,
                                                       stats.asset_id, base.version + 1))
        return LocalResult(client.client_id, weights, stats.asset_id)

    def _verified_local(self, msg: StreamMessage) -> WeightVector:
        asset, _ = self.ledger.get_asset(ById(msg.asset_id))
        pk = self.iin.lookup(self.network_id, asset.producer_id).public_key
        sigs = dict(asset.signatures)
        if asset.producer_id != msg.sender_id or not cosi.verify_share(
                pk, codec.digest(asset), sigs.get(asset.producer_id, b"")):
            raise ValueError(f"local update from client {msg.sender_id} is not signed by its producer")
        return asset.weights

    def run_global_round(self) -> RoundReport:
        t0 = time.perf_counter()
        self.round += 1
        r = self.round
        cfg = self.config
        if cfg.deterministic:
            for c in self.clients:
                self.client_update(c, r)
        else:
            pool = ThreadPoolExecutor(max_workers=len(self.clients))
            futures = [pool.submit(self.client_update, c, r) for c in self.clients]
        try:
            quorum = self.stream.await_quorum(LOCAL_TOPIC, r, cfg.k, cfg.quorum_timeout)
        finally:
            if not cfg.deterministic:
                pool.shutdown(wait=True)
                for f in futures:
                    f.result()
        quorum = sorted(quorum, key=lambda m: m.sender_id)
        local_ws = [self._verified_local(m) for m in quorum]
        new = aggregate_fedavg((w, self.sample_counts[m.sender_id]) for w, m in zip(local_ws, quorum))
        version = self.version + 1
        self._enter_global(version, new, r)

        by_id = {c.client_id: c for c in self.clients}
        pre_test, pre_val, post_test, post_val = compute_metrics(
            new, local_ws, self.global_test, [by_id[m.sender_id].test for m in quorum])
        report = RoundReport(r, version, pre_test, pre_val, post_test, post_val, time.perf_counter() - t0)
        self.reports.append(report)
        return report

    def run(self, rounds: int | None = None) -> list[RoundReport]:
        rounds = self.config.global_rounds if rounds is None else rounds
        return [self.run_global_round() for _ in range(rounds)]


TRANSFERRED = "transferred"
SCRATCH = "scratch"


@dataclass
class TransferOutcome:
    mode: str
    seed: int
    metrics: Metrics
    copied_layers: int = 0
    initial: Metrics | None = None


def _with_seed(config: RoundConfig, seed: int) -> RoundConfig:
    return replace(config, seed=seed, data=replace(config.data, seed=seed))


def train_source(config_a: RoundConfig, seed: int, iin=None, source_id: int = 1):
    from .iin import IdentityRegistry
    iin = iin if iin is not None else IdentityRegistry()
    net = Network(source_id, _with_seed(config_a, seed), iin)
    net.run()
    return net


def run_transfer_experiment(config_a: RoundConfig, config_b: RoundConfig, mode: str, seeds,
                            sources: dict | None = None) -> list[TransferOutcome]:
    """Train network A, move its latest global model to B, then train B.

    ``mode`` is :data:`TRANSFERRED` (B starts from A's weights, copying matching
    layers) or :data:`SCRATCH`. ``sources`` caches trained A networks by seed.
    """
    if mode not in (TRANSFERRED, SCRATCH):
        raise ValueError(f"unknown mode {mode!r}")
    from .iin import IdentityRegistry
    from .relay import transfer
    outcomes = []
    for seed in seeds:
        if mode == SCRATCH:
            b = Network(2, _with_seed(config_b, seed), IdentityRegistry())
            initial = evaluate(b.latest_global().weights, b.global_test)
            copied = 0
        else:
            if sources is not None and seed in sources:
                a = sources[seed]
            else:
                a = train_source(config_a, seed)
                if sources is not None:
                    sources[seed] = a
            b = Network(max(a.iin.networks()) + 1, _with_seed(config_b, seed), a.iin)
            b_client = b.clients[0].client_id if b.clients else CONTRACT_ID
            asset, _ = transfer(b.relay, a.relay, b_client)
            weights, copied = init_from_asset(asset, config_b.spec, derive_seed(seed, 2, 5))
            b.adopt(weights)
            initial = evaluate(weights, b.global_test)
        b.run()
        final = evaluate(b.latest_global().weights, b.global_test)
        outcomes.append(TransferOutcome(mode, seed, final, copied, initial))
    return outcomes
