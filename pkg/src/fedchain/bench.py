"""Scenario runners behind the CLI: overhead benches and transfer-learning comparisons."""
from __future__ import annotations

import csv
import gc
from dataclasses import dataclass, replace

import numpy as np

from .fl import (CONTRACT_ID, SCRATCH, TRANSFERRED, DataConfig, Network, RoundConfig,
                 run_transfer_experiment)
from .iin import IdentityRegistry
from .nn import ModelSpec, init_weights
from .relay import transfer

# parameter counts of the four benchmark model sizes
REFERENCE_PARAM_COUNTS = (171_682, 814_122, 3_239_114, 11_192_019)


def spec_for_param_count(params: int, input_hint: int = 64) -> ModelSpec:
    """A one-hidden-layer MLP with exactly ``params`` parameters.

    Searches class counts 10, 20, 100 and input widths near ``input_hint``.
    """
    for classes in (10, 20, 100):
        candidates = []
        for d in range(2, 4096):
            rest = params - classes
            if rest > 0 and rest % (d + 1 + classes) == 0 and rest // (d + 1 + classes) >= 8:
                candidates.append((abs(d - input_hint), d, rest // (d + 1 + classes)))
        if candidates:
            _, d, h = min(candidates)
            return ModelSpec((d, h, classes))
    raise ValueError(f"no single-hidden-layer MLP has exactly {params} parameters")


@dataclass
class OverheadRow:
    param_count: int
    layer_widths: tuple
    asset_bytes: int
    n_fragments: int
    entry_ms: float
    retrieval_ms: float
    cosi_ms: float
    verify_ms: float
    runs: int


OVERHEAD_COLUMNS = ["model", "param_count", "layer_widths", "asset_bytes", "n_fragments",
                    "entry_ms", "retrieval_ms", "cosi_ms", "verify_ms", "runs"]


def _bench_networks(spec: ModelSpec, run: int, cosigners: int, validation_n: int, seed: int):
    iin = IdentityRegistry()
    data = DataConfig(seed=seed + run, n=spec.num_classes, d=spec.input_dim, classes=spec.num_classes,
                      validation_n=validation_n)
    cfg = RoundConfig(client_count=1, spec=spec, data=data, seed=seed + run, cosigners=cosigners)
    weights = init_weights(spec, seed + run)
    source = Network(1, cfg, iin, initial_weights=weights, with_clients=False)
    small = ModelSpec((spec.input_dim, 2, spec.num_classes))
    receiver = Network(2, replace(cfg, spec=small), iin, with_clients=False)
    return source, receiver


def bench_one(spec: ModelSpec, runs: int = 5, cosigners: int = 5, validation_n: int = 200,
              seed: int = 0) -> OverheadRow:
    entry, retrieval, cosi_t, verify = [], [], [], []
    size = frags = 0
    for run in range(runs):
        source, receiver = _bench_networks(spec, run, cosigners, validation_n, seed)
        stats = source.last_entry
        size, frags = stats.asset_bytes, stats.fragment_count
        entry.append(stats.duration)
        _, tstats = transfer(receiver.relay, source.relay, CONTRACT_ID)
        retrieval.append(tstats.retrieval_s)
        cosi_t.append(tstats.cosi_s)
        verify.append(tstats.verify_s)
        del source, receiver
        gc.collect()
    ms = lambda xs: 1000.0 * float(np.mean(xs))
    return OverheadRow(spec.param_count, spec.layer_widths, size, frags, ms(entry), ms(retrieval),
                       ms(cosi_t), ms(verify), runs)


def bench_overhead(param_counts=REFERENCE_PARAM_COUNTS, runs: int = 5, cosigners: int = 5,
                   validation_n: int = 200, seed: int = 0, specs=None) -> list[OverheadRow]:
    specs = list(specs) if specs is not None else [spec_for_param_count(p) for p in param_counts]
    return [bench_one(s, runs, cosigners, validation_n, seed) for s in specs]


def write_overhead_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OVERHEAD_COLUMNS)
        for r in rows:
            w.writerow([f"mlp-{r.param_count}", r.param_count, "-".join(map(str, r.layer_widths)),
                        r.asset_bytes, r.n_fragments, f"{r.entry_ms:.3f}", f"{r.retrieval_ms:.3f}",
                        f"{r.cosi_ms:.3f}", f"{r.verify_ms:.3f}", r.runs])


def linear_r2(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = ((y - y.mean()) ** 2).sum()
    return 1.0 - float((resid ** 2).sum() / total) if total > 0 else 1.0


# -- transfer learning ---------------------------------------------------------

def transfer_learning_configs(seed: int = 0):
    """Source task, and two targets (same body, augmented head) on a rotated, shifted, coarser task."""
    source = RoundConfig(client_count=8, global_rounds=10, spec=ModelSpec((8, 128, 128, 8)),
                         data=DataConfig(seed=seed, n=2000, d=8, classes=8), seed=seed)
    target_data = DataConfig(seed=seed, n=240, d=8, classes=4, rot=0.2, shift=0.3)
    same = RoundConfig(client_count=4, global_rounds=2, spec=ModelSpec((8, 128, 128, 4)),
                       data=target_data, seed=seed)
    augmented = replace(same, spec=ModelSpec((8, 128, 128, 64, 4)))
    return source, same, augmented


TRANSFER_COLUMNS = ["target", "mode", "seed", "final_acc", "final_loss", "copied_layers"]


def run_transfer_learning(source: RoundConfig, targets: dict, seeds) -> list[dict]:
    cache = {}
    rows = []
    for target_name, cfg in targets.items():
        for mode in (TRANSFERRED, SCRATCH):
            for o in run_transfer_experiment(source, cfg, mode, seeds, cache):
                rows.append({"target": target_name, "mode": mode, "seed": o.seed,
                             "final_acc": o.metrics.accuracy, "final_loss": o.metrics.loss,
                             "copied_layers": o.copied_layers})
    return rows


def write_rows_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
