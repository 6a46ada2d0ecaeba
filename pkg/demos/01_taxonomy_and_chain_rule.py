"""
Taxonomies and chain-rule probabilities
=======================================

Load the bundled chest X-ray taxonomy, look at its structure, and turn
per-node logits into conditional and unconditional probabilities.
"""

import numpy as np

from hmlc.inference import predict
from hmlc.taxonomy import load_taxonomy

t = load_taxonomy("plco")
print(t)

# every node knows its path from the root
scar = t.index("Scarring")
print("path to Scarring:", " > ".join(t.name(m) for m in t.ancestors(scar)))
print("leaves:", sorted(t.name(m) for m in t.leaves()))

# a model outputs one logit per node, read as P(node | parent)
rng = np.random.default_rng(0)
y = rng.normal(size=t.k)
p = predict(t, y)

# the unconditional probability multiplies conditionals down the path,
# so a child can never be more likely than its parent
for m in t.ancestors(t.index("Nodule")):
    print(f"{t.name(m):32s} P(m|parent)={p.conditional[m]:.3f}  P(m)={p.unconditional[m]:.4f}")

parents = np.asarray(t.parent_array)
edges = parents >= 0
print("parent >= child on every edge:",
      bool(np.all(p.unconditional[parents[edges]] >= p.unconditional[edges])))
