"""
Simulating incomplete labels
============================

Start from fully labelled synthetic data and hide labels level by level.
The same instance keeps the same random draws for every deletion rate, so
a larger rate always hides a superset of labels.
"""

import numpy as np

from hmlc.data import (UNK, DeletionConfig, default_deletion_levels, delete_labels,
                       synth_generate)
from hmlc.taxonomy import load_taxonomy

t = load_taxonomy("plco")
ds = synth_generate(t, 5000, 20, seed=0)
print(ds.n, "instances,", ds.d, "features,", "consistent:", ds.check(t) == [])

groups, mid = default_deletion_levels(t)
print("finest groups:", [t.name(g) for g in groups], " mid level:", t.name(mid))

train = ds.mask("train")
previous = None
for beta in (0.0, 0.1, 0.3, 0.5, 0.7):
    cfg = DeletionConfig(beta, groups, mid, root=t.root, seed=0)
    unknown = delete_labels(ds, t, cfg).labels == UNK
    nested = previous is None or not (previous & ~unknown).any()
    print(f"beta={beta:.1f}  unknown train cells {unknown[train].mean():.3f}  "
          f"held-out untouched {not unknown[~train].any()}  nested {nested}")
    previous = unknown
