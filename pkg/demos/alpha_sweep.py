"""A small alpha sweep over all three attacks, printed as a table.

The full reference sweep uses 64 images; eight are enough to see the trend
and finish in well under a minute.  Set CHROMASHAPE_WORKERS to use more
processes.

    python demos/alpha_sweep.py
"""
from chromashape import SweepConfig, run_sweep

cfg = SweepConfig(toy_count=8, toy_seed=1)
report = run_sweep(cfg, keep_images=False)
agg = report.aggregates()

print(f"{'attack':6s} {'alpha':>5s} {'mean L2':>9s} {'improved':>9s} {'fallback':>9s}")
for attack, entry in agg["attacks"].items():
    print(f"{attack:6s} {'base':>5s} {entry['baseline_mean_l2']:9.4f}")
    for alpha, cell in entry["alphas"].items():
        mark = " <" if float(alpha) == entry.get("best_alpha") else ""
        print(f"{'':6s} {alpha:>5s} {cell['mean_l2']:9.4f} {cell['improved_fraction']:9.2f} {cell['fallback_rate']:9.2f}{mark}")
    print(f"{'':6s} best alpha {entry['best_alpha']:g}: {entry['improvement_percent']:.2f}% lower mean L2\n")
print(f"mean improvement over attacks: {agg['mean_improvement_percent']:.2f}%")

# report.to_csv() / report.to_json() give the same data for further analysis
