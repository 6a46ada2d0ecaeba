"""
A small incomplete-label sweep
==============================

Run every (rate, model, seed) cell, print the per-rate table, and show
that a second run gives byte-identical output. Set HMLC_THREADS to use
several worker processes; the output does not change.
"""

from hmlc.experiments import Recipe, SweepSpec, run_sweep, sweep_table, sweep_to_csv
from hmlc.taxonomy import load_taxonomy

t = load_taxonomy("synthetic7")
spec = SweepSpec(betas=(0.0, 0.3, 0.7), seeds=(0, 1),
                 models=("br_leaf", "br_all", "hlup_finetune"), n=2000, d=20, bootstrap_rounds=200,
                 recipe=Recipe(hidden=16, stage1_epochs=10, stage2_epochs=10))

rows = run_sweep(t, spec)
print(sweep_table(rows, spec))

for r in rows:
    if r["seed"] == "mean":
        print(f"beta={r['beta']:.1f} {r['model']:14s} AUC {r['mean_leaf_auc']:.4f} "
              f"CI [{r['auc_lo']:.4f}, {r['auc_hi']:.4f}]")

print("identical on rerun:", sweep_to_csv(rows) == sweep_to_csv(run_sweep(t, spec)))
