"""Recompute best-alpha improvements from the bundled ImageNet means table.

The table holds mean L2 distances per attack/network column for a baseline
and for alpha in {1, 0.8, ..., 0}; the improvement of a column is the drop
from the baseline to its best alpha, in percent.
"""
from chromashape.harness import improvement_table, load_table_fixture

baseline, per_alpha = load_table_fixture()
table, mean = improvement_table(baseline, per_alpha)
for col in table:
    print(f"{col.column:14s} {col.baseline:8.4f} -> {col.best_mean:8.4f} at alpha {col.best_alpha:g}  ({col.improvement:5.2f}%)")
print(f"average improvement: {mean:.2f}%")
