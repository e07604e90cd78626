import numpy as np
import pytest

from slimmatch.bench import (
    BenchRow,
    ComplexityViolation,
    _check_ratios,
    bench_attention_scaling,
    rows_to_csv,
    vanilla_attention,
    _init_vanilla,
)
from slimmatch.rng import Xorshift64Star
from slimmatch.tensor import DiffTensor, FlopLedger, record_flops


class TestMacCounts:
    def test_vector_ratio_exactly_two(self):
        rows = bench_attention_scaling([512, 1024], channels=64,
                                       kinds=("vector",), repeats=1)
        macs = {r.tokens: r.macs for r in rows}
        assert macs[1024] == 2 * macs[512]

    def test_vanilla_ratio_in_quadratic_band(self):
        rows = bench_attention_scaling([512, 1024], channels=64,
                                       kinds=("vanilla",), repeats=1)
        macs = {r.tokens: r.macs for r in rows}
        ratio = macs[1024] / macs[512]
        assert 3.5 < ratio <= 4.0

    def test_vanilla_macs_track_analytic_formula(self):
        # projections contribute 4NC^2, the two quadratic products 2N^2C,
        # and the score scaling N^2
        c = 32
        for n in (64, 128):
            tok = DiffTensor(np.random.default_rng(0).standard_normal((n, c)))
            params = _init_vanilla(c, Xorshift64Star(0))
            led = FlopLedger()
            with record_flops(led):
                vanilla_attention(tok, params)
            assert led.total() == 4 * n * c * c + 2 * n * n * c + n * n

    def test_check_ratios_rejects_superlinear_vector(self):
        rows = [BenchRow("vector", 64, 1000, 0.0), BenchRow("vector", 128, 2001, 0.0)]
        with pytest.raises(ComplexityViolation):
            _check_ratios(rows)

    def test_check_ratios_rejects_supraquadratic_vanilla(self):
        rows = [BenchRow("vanilla", 64, 1000, 0.0), BenchRow("vanilla", 128, 4100, 0.0)]
        with pytest.raises(ComplexityViolation):
            _check_ratios(rows)


class TestCsv:
    def test_header_and_rows(self):
        rows = [BenchRow("vector", 64, 1234, 0.00125)]
        csv = rows_to_csv(rows)
        lines = csv.strip().splitlines()
        assert lines[0] == "kind,N,macs,seconds"
        assert lines[1].startswith("vector,64,1234,")

    def test_deterministic_macs_across_runs(self):
        a = bench_attention_scaling([128, 256], channels=16, repeats=1)
        b = bench_attention_scaling([128, 256], channels=16, repeats=1)
        assert [(r.kind, r.tokens, r.macs) for r in a] == \
               [(r.kind, r.tokens, r.macs) for r in b]
