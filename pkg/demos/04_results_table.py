"""Desk-scale results table: both benchmarks, both optimizer families.

Reproduces the shape of a benchmark summary table at a fraction of the
budget: each cell aggregates two seeded replicates of a shortened run
(full presets train for 100-2500 epochs; here 100-300 suffice to rank
the columns).  EKI reaches comparable training accuracy to the gradient
baselines without ever materializing a gradient.  Test error on the
spiral is seed-sensitive for every optimizer: a field that nails the
observation windows can still drift once integrated over the full
horizon, so read the min_test column (the best-of-seeds view) alongside
the median.

Run from the repository root:  python demos/04_results_table.py
Equivalent CLI:  eki-node table --configs <file.json> --replicates 2
"""

import dataclasses
import os
import sys
import time

from ekinode import runner

out_root = sys.argv[1] if len(sys.argv) > 1 else os.path.join("runs", "demo-table")

cells = []
for preset_name, epochs in (
    ("spiral-eki", 100),
    ("spiral-adam-0.01", 300),
    ("spiral-sgd-0.01", 300),
    ("pendulum-eki", 60),
    ("pendulum-adam-0.01", 300),
):
    config = dataclasses.replace(runner.preset(preset_name), epochs=epochs)
    cells.append({"name": f"{preset_name}@{epochs}", **runner.config_to_dict(config)})

started = time.perf_counter()
summary = runner.table(cells, replicates=2, out_dir=out_root)
print(runner.format_table(summary))
print(f"\n{time.perf_counter() - started:.0f}s total; full artifacts under {out_root}/")
