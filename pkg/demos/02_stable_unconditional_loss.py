"""
A cross entropy on chained probabilities that does not underflow
=================================================================

The literal product of sigmoids along a deep path underflows to zero, and
its log becomes infinite. The decomposed loss adds per-node binary cross
entropies plus a log-sum-exp correction and stays finite.
"""

import numpy as np

from hmlc.losses import GammaMode, gamma, hlup_naive, hlup_stable
from hmlc.oracles import brute_force_gamma
from hmlc.taxonomy import chain

# a ten-node path, every logit strongly negative, every label positive
t = chain(10)
y = np.full(10, -80.0)
z = np.ones(10, dtype=int)

with np.errstate(all="ignore"):
    print("naive :", hlup_naive(t, y, z).value)
print("stable:", hlup_stable(t, y, z).value)  # 55 * 80

# on moderate logits the two agree
y = np.random.default_rng(1).uniform(-3, 3, size=10)
z = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
a, b = hlup_stable(t, y, z), hlup_naive(t, y, z)
print("moderate logits:", a.value, b.value, "max grad diff", np.abs(a.grad - b.grad).max())

# the correction term, exactly and by its max approximation
chain_logits = [0.5, -1.0, 2.0]
exact, _ = gamma(chain_logits, 0)
approx, _ = gamma(chain_logits, 0, GammaMode.MAX_APPROX)
print("gamma exact", exact, "enumerated", brute_force_gamma(chain_logits, 0))
print("gamma max-approx", approx, "gap", approx - exact, "<= ln 7 =", np.log(7))
