import numpy as np
import pytest

from fedchain import codec
from fedchain.bench import (OVERHEAD_COLUMNS, REFERENCE_PARAM_COUNTS, bench_one, linear_r2, spec_for_param_count,
                            write_overhead_csv)
from fedchain.nn import ModelSpec


@pytest.mark.parametrize("params", REFERENCE_PARAM_COUNTS)
def test_spec_for_param_count_exact(params):
    spec = spec_for_param_count(params)
    assert spec.param_count == params and len(spec.layer_widths) == 3


def test_reference_sizes_fragment_law():
    sizes = [codec.encoded_size(spec_for_param_count(p), "synth://seed=0&n=200&d=64&classes=10")
             for p in REFERENCE_PARAM_COUNTS]
    assert [codec.fragment_count(s) for s in sizes] == [1, 5, 17, 56]
    assert all(-(-s // codec.FRAGMENT_SIZE) == codec.fragment_count(s) for s in sizes)


def test_linear_r2():
    x = np.arange(10.0)
    assert linear_r2(x, 3 * x + 1) == pytest.approx(1.0)
    noisy = 3 * x + np.random.default_rng(0).normal(0, 0.5, 10)
    assert 0.9 < linear_r2(x, noisy) < 1.0
    assert linear_r2([1, 2, 3], [5, 5, 5]) == 1.0


def test_bench_one_small(tmp_path):
    row = bench_one(ModelSpec((8, 16, 4)), runs=2, cosigners=3, validation_n=50)
    assert row.n_fragments == 1 and row.runs == 2
    assert min(row.entry_ms, row.retrieval_ms, row.cosi_ms, row.verify_ms) > 0
    write_overhead_csv([row], tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == ",".join(OVERHEAD_COLUMNS) and len(lines) == 2
