"""
Does a transferred model help?
==============================

Network 1 trains on an 8-class task. Network 2 has a related but harder
problem: its data is rotated and shifted, and it has 4 classes and far less
data. We compare network 2 starting from network 1's weights against
starting from scratch. Layers whose shapes match are copied. The rest, at
least the output head, start fresh.
"""

import numpy as np

from fedchain.bench import run_transfer_learning, transfer_learning_configs

source, same, augmented = transfer_learning_configs(seed=0)
print("source model:", source.spec.layer_widths)
print("targets:", same.spec.layer_widths, "and", augmented.spec.layer_widths)

rows = run_transfer_learning(source, {"same": same, "augmented": augmented}, seeds=[0, 1])
for target in ("same", "augmented"):
    for mode in ("transferred", "scratch"):
        picked = [r for r in rows if r["target"] == target and r["mode"] == mode]
        acc = np.mean([r["final_acc"] for r in picked])
        print(f"{target:>9s} {mode:>11s}: accuracy {acc:.3f}  (layers copied: {picked[0]['copied_layers']})")
