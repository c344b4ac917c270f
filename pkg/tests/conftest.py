import numpy as np
import pytest

from fedchain.codec import AssetKind, LearningAsset
from fedchain.fl import DataConfig, RoundConfig
from fedchain.nn import Hyperparameters, Metrics, ModelSpec, WeightVector

TINY_POINTER = "synth://seed=1&n=4&d=2&classes=2"


def tiny_asset(signatures=()):
    spec = ModelSpec((2, 2))
    w = WeightVector(spec, np.array([0.5, -1.0, 0.25, 2.0, 0.0, -0.5], dtype=np.float32))
    return LearningAsset(7, AssetKind.GlobalModel, 3, 2, spec, Hyperparameters(), 42, "adam",
                         TINY_POINTER, Metrics(0.75, 0.5), w, signatures)


def random_asset(rng, widths=None, version=1, network_id=1, kind=AssetKind.GlobalModel, producer=0, n_sigs=0):
    if widths is None:
        widths = tuple(int(x) for x in rng.integers(1, 9, size=int(rng.integers(2, 5))))
    spec = ModelSpec(widths)
    values = rng.standard_normal(spec.param_count).astype(np.float32)
    sigs = [(int(i), rng.bytes(int(rng.integers(0, 100)))) for i in range(n_sigs)]
    return LearningAsset(network_id, kind, version, producer, spec,
                         Hyperparameters(float(rng.uniform(1e-4, 1e-1)), int(rng.integers(1, 64))),
                         int(rng.integers(0, 2**63)), "adam", "synth://seed=3&n=20&d=2&classes=2",
                         Metrics(float(rng.uniform()), float(rng.uniform(0, 5))), WeightVector(spec, values), sigs)


def small_config(**kw):
    """A fast network config: 4 clients, 2 rounds on a small blobs task."""
    data = kw.pop("data", DataConfig(n=400, d=4, classes=3, validation_n=120))
    base = dict(client_count=4, global_rounds=2, spec=ModelSpec((data.d, 16, data.classes)), data=data,
                cosigners=5, deterministic=True)
    base.update(kw)
    return RoundConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
