#!/usr/bin/env python3
# Why vector attention scales: MAC counts double with the token count while
# the quadratic reference quadruples. Equivalent to `slimmatch bench`.

from slimmatch.bench import bench_attention_scaling, rows_to_csv

rows = bench_attention_scaling([256, 512, 1024], channels=64, repeats=5)
print(rows_to_csv(rows))

by_kind = {}
for row in rows:
    by_kind.setdefault(row.kind, []).append(row)

for kind, series in by_kind.items():
    series.sort(key=lambda r: r.tokens)
    for small, big in zip(series, series[1:]):
        print(f"{kind:8s} {small.tokens:5d} -> {big.tokens:5d}: "
              f"MAC ratio {big.macs / small.macs:.3f}")
