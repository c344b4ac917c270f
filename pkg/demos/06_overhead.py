"""
What does the machinery cost?
=============================

Entry, retrieval, collective signing and verification times grow with
asset size. Here are two model sizes with one run each. The CLI command
``fedchain bench-overhead`` runs the full four-size table.
"""

from fedchain.bench import bench_overhead, linear_r2

rows = bench_overhead([171_682, 814_122, 3_239_114], runs=1)
for r in rows:
    print(f"{r.param_count:>9d} params  {r.asset_bytes:>9d} B  {r.n_fragments:>3d} fragments  "
          f"entry {r.entry_ms:6.1f} ms  retrieval {r.retrieval_ms:6.1f} ms  "
          f"cosi {r.cosi_ms:6.1f} ms  verify {r.verify_ms:6.1f} ms")
print("R^2 of entry time vs bytes:", round(linear_r2([r.asset_bytes for r in rows], [r.entry_ms for r in rows]), 4))
