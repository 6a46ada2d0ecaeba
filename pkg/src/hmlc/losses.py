"""Training losses over taxonomy logits, with hand-derived gradients.

Every loss accepts logits ``y`` and tri-state labels ``z`` of shape ``(k,)``
for a single instance or ``(n, k)`` for a batch. A single instance returns
the sum of its per-label terms; a batch returns the mean over instances of
that sum, and ``grad`` is always the derivative of the returned ``value``
with respect to ``y``. Unknown labels (``-1``) contribute nothing, so their
gradient entries are exactly zero unless a chained term reaches them.

The unconditional (chain-rule) loss is available three ways:

* `hlup_naive` multiplies the sigmoids and takes logs of the product. It
  underflows on deep chains and is kept as an oracle and as an exhibit.
* `hlup_stable` rewrites the loss as a sum of per-logit binary cross
  entropies plus a correction ``gamma`` that is a log-sum-exp over all
  non-empty subsets of the ancestor chain (exact) or its max (approximate).
* `hlup_rescale` squeezes every sigmoid into ``[floor, 1]`` first.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import expit, log_expit

from .taxonomy import Taxonomy

DEFAULT_POWERSET_CAP = 20
# rows * 2**|A| processed at once by the exact gamma
_EXACT_CHUNK = 1 << 22


class GammaMode(enum.Enum):
    EXACT = "exact"
    MAX_APPROX = "max"


class GammaCapError(ValueError):
    """Exact powerset enumeration requested for a chain longer than the cap."""


@dataclass(frozen=True)
class LossResult:
    value: float
    grad: np.ndarray


# elementwise building blocks ------------------------------------------------

def stable_bce(y, z):
    """Binary cross entropy on a logit and its derivative.

    ``max(y, 0) - y*z + log1p(exp(-|y|))``; never overflows. Works
    elementwise on arrays.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    value = np.maximum(y, 0.0) - y * z + np.log1p(np.exp(-np.abs(y)))
    grad = expit(y) - z
    if value.ndim == 0:
        return float(value), float(grad)
    return value, grad


def logsumexp_with_weights(s: np.ndarray, axis: int = -1):
    """Log-sum-exp along ``axis`` and its softmax weights (the gradient)."""
    mx = np.max(s, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(s - mx)
    tot = e.sum(axis=axis, keepdims=True)
    lse = np.log(tot) + mx
    return np.squeeze(lse, axis=axis), e / tot


def subset_sums(v: np.ndarray) -> np.ndarray:
    """All ``2**a`` subset sums of the last axis of ``v``.

    Entry ``s`` is the sum over the elements whose bit is set in ``s``
    (bit ``j`` for element ``j``); entry 0 is the empty sum.
    """
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (1,))
    for j in range(v.shape[-1]):
        out = np.concatenate([out, out + v[..., j:j + 1]], axis=-1)
    return out


def _membership_totals(w: np.ndarray, a: int) -> np.ndarray:
    """``out[..., j] = sum of w[..., s] over subsets s containing j``."""
    lead = w.shape[:-1]
    out = np.empty(lead + (a,))
    for j in range(a):
        blocks = w.reshape(lead + (1 << (a - 1 - j), 2, 1 << j))
        out[..., j] = blocks[..., 1, :].sum(axis=(-2, -1))
    return out


# gamma ----------------------------------------------------------------------

def _gamma_batch(ya: np.ndarray, z: np.ndarray, mode: GammaMode, cap: int):
    """Vectorised gamma for rows of ancestor logits ``ya`` (n, a), targets ``z`` (n,)."""
    n, a = ya.shape
    neg = -ya
    total = neg.sum(axis=1)
    if mode is GammaMode.EXACT:
        if a > cap:
            raise GammaCapError(
                f"exact gamma needs 2**{a}-1 subsets, above the cap of |A| <= {cap}; "
                "request GammaMode.MAX_APPROX explicitly")
        lse = np.empty(n)
        member = np.empty((n, a))
        step = max(1, _EXACT_CHUNK >> a)
        for lo in range(0, n, step):
            sums = subset_sums(neg[lo:lo + step])
            sums[:, 0] = -np.inf
            l, w = logsumexp_with_weights(sums)
            lse[lo:lo + step] = l
            member[lo:lo + step] = _membership_totals(w, a)
        reduced, sel = lse, member
    elif mode is GammaMode.MAX_APPROX:
        pos = neg > 0
        anyneg = pos.any(axis=1)
        first = np.zeros((n, a))
        first[np.arange(n), np.argmax(neg, axis=1)] = 1.0
        reduced = np.where(anyneg, np.where(pos, neg, 0.0).sum(axis=1), neg.max(axis=1))
        sel = np.where(anyneg[:, None], pos.astype(np.float64), first)
    else:
        raise ValueError(f"unknown gamma mode {mode!r}")
    keep = 1.0 - z
    value = keep * (total - reduced)
    grad = keep[:, None] * (sel - 1.0)
    return value, grad


def gamma(y_ancestors, z: int, mode: GammaMode = GammaMode.EXACT,
          cap: int = DEFAULT_POWERSET_CAP) -> tuple[float, np.ndarray]:
    """Correction term of the decomposed unconditional cross entropy.

    ``y_ancestors`` are the logits on the chain from the root to the label
    and ``z`` the label's target. Returns the value and its gradient with
    respect to each of those logits.
    """
    ya = np.atleast_1d(np.asarray(y_ancestors, dtype=np.float64))
    if ya.ndim != 1 or ya.size < 1:
        raise ValueError("gamma needs a non-empty 1-D chain of logits")
    value, grad = _gamma_batch(ya[None, :], np.array([float(z)]), GammaMode(mode), cap)
    return float(value[0]), grad[0]


# helpers --------------------------------------------------------------------

def _prepare(t: Taxonomy, y, z):
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    z2 = np.atleast_2d(z).astype(np.int8)
    if y2.ndim != 2 or y2.shape[1] != t.k:
        raise ValueError(f"logits must have shape (k,) or (n, k) with k={t.k}, got {y.shape}")
    if z2.shape != y2.shape:
        raise ValueError(f"labels shape {z.shape} does not match logits shape {y.shape}")
    return y2, z2, single


def _finish(per_sample: np.ndarray, grad: np.ndarray, single: bool) -> LossResult:
    if single:
        return LossResult(float(per_sample[0]), grad[0])
    n = per_sample.shape[0]
    return LossResult(float(per_sample.mean()), grad / n)


@lru_cache(maxsize=64)
def _ancestor_index(t: Taxonomy) -> tuple[np.ndarray, ...]:
    return tuple(np.asarray(t.ancestors(m), dtype=np.intp) for m in range(t.k))


def _parents(t: Taxonomy) -> np.ndarray:
    return np.asarray(t.parent_array, dtype=np.intp)


# flat losses ----------------------------------------------------------------

class BRScope(enum.Enum):
    LEAF_ONLY = "leaf"
    ALL_NODES = "all"


def br_loss(t: Taxonomy, y, z, scope: BRScope = BRScope.ALL_NODES) -> LossResult:
    """Independent per-label cross entropy (binary relevance)."""
    y2, z2, single = _prepare(t, y, z)
    in_scope = np.zeros(t.k, dtype=bool)
    nodes = sorted(t.leaves()) if BRScope(scope) is BRScope.LEAF_ONLY else range(t.k)
    in_scope[list(nodes)] = True
    mask = (z2 >= 0) & in_scope
    v, g = stable_bce(y2, np.where(mask, z2, 0))
    return _finish(np.where(mask, v, 0.0).sum(axis=1), np.where(mask, g, 0.0), single)


def hlcp_mask(t: Taxonomy, z: np.ndarray) -> np.ndarray:
    """Which labels the conditional loss trains: known, with a positive parent (root always)."""
    z = np.atleast_2d(z)
    parents = _parents(t)
    parent_pos = np.ones(z.shape, dtype=bool)
    nonroot = parents >= 0
    parent_pos[:, nonroot] = z[:, parents[nonroot]] == 1
    return (z >= 0) & parent_pos


def hlcp_loss(t: Taxonomy, y, z) -> LossResult:
    """Conditional cross entropy, each label trained only where its parent is positive."""
    y2, z2, single = _prepare(t, y, z)
    mask = hlcp_mask(t, z2)
    v, g = stable_bce(y2, np.where(mask, z2, 0))
    return _finish(np.where(mask, v, 0.0).sum(axis=1), np.where(mask, g, 0.0), single)


# chained losses -------------------------------------------------------------

def unconditional_prob(t: Taxonomy, y, m: int) -> float:
    """Chain-rule probability of label ``m``: product of ancestor sigmoids."""
    y = np.asarray(y, dtype=np.float64)
    return float(np.exp(log_expit(y[list(t.ancestors(m))]).sum()))


def hlup_naive_terms(t: Taxonomy, y, z):
    """Per-label naive terms ``(n, k)`` (0 where unknown) and the summed gradient ``(n, k)``."""
    y2, z2, _ = _prepare(t, y, z)
    n = y2.shape[0]
    sig = expit(y2)
    terms = np.zeros((n, t.k))
    grad = np.zeros((n, t.k))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for m, anc in enumerate(_ancestor_index(t)):
            known = z2[:, m] >= 0
            if not known.any():
                continue
            zm = z2[:, m].astype(np.float64)
            p = np.prod(sig[:, anc], axis=1)
            ce = np.where(zm == 1, -np.log(p), -np.log(1.0 - p))
            dce_dp = np.where(zm == 1, -1.0 / p, 1.0 / (1.0 - p))
            dp_dy = p[:, None] * (1.0 - sig[:, anc])
            terms[:, m] = np.where(known, ce, 0.0)
            grad[:, anc] += np.where(known[:, None], dce_dp[:, None] * dp_dy, 0.0)
    return terms, grad


def hlup_naive(t: Taxonomy, y, z) -> LossResult:
    """Unconditional cross entropy computed literally from the sigmoid product.

    Deep chains of small probabilities underflow to 0 and the value becomes
    ``inf`` (or ``nan`` in the gradient); that is the documented outcome.
    """
    _, _, single = _prepare(t, y, z)
    terms, grad = hlup_naive_terms(t, y, z)
    return _finish(terms.sum(axis=1), grad, single)


def hlup_stable_terms(t: Taxonomy, y, z, mode: GammaMode = GammaMode.EXACT,
                      cap: int = DEFAULT_POWERSET_CAP):
    """Per-label stable terms ``(n, k)`` and the summed gradient ``(n, k)``."""
    y2, z2, _ = _prepare(t, y, z)
    mode = GammaMode(mode)
    n = y2.shape[0]
    terms = np.zeros((n, t.k))
    grad = np.zeros((n, t.k))
    for m, anc in enumerate(_ancestor_index(t)):
        known = np.flatnonzero(z2[:, m] >= 0)
        if known.size == 0:
            continue
        ya = y2[np.ix_(known, anc)]
        zm = z2[known, m].astype(np.float64)
        v, g = stable_bce(ya, zm[:, None])
        gv, gg = _gamma_batch(ya, zm, mode, cap)
        terms[known, m] = v.sum(axis=1) + gv
        grad[np.ix_(known, anc)] += g + gg
    return terms, grad


def hlup_stable(t: Taxonomy, y, z, mode: GammaMode = GammaMode.EXACT,
                cap: int = DEFAULT_POWERSET_CAP) -> LossResult:
    """Numerically stable unconditional cross entropy.

    Each known label ``m`` contributes ``sum_j bce(y_j, z_m) + gamma`` over
    ``j`` in its root path. Finite for any finite logits.
    """
    _, _, single = _prepare(t, y, z)
    terms, grad = hlup_stable_terms(t, y, z, mode, cap)
    return _finish(terms.sum(axis=1), grad, single)


def rescale_floor(max_depth: int, min_product: float = 1e-7) -> float:
    """Smallest one-significant-digit floor keeping a depth-``max_depth`` product above ``min_product``.

    Depth 4 gives 0.02.
    """
    x = min_product ** (1.0 / max_depth)
    e = math.floor(math.log10(x))
    digit = math.ceil(x / 10.0**e - 1e-9)
    return float(f"{digit}e{e}")


def hlup_rescale(t: Taxonomy, y, z, floor: float | None = None) -> LossResult:
    """Unconditional cross entropy with each sigmoid mapped affinely onto ``[floor, 1]``.

    ``floor=None`` picks `rescale_floor` for the taxonomy depth.
    """
    y2, z2, single = _prepare(t, y, z)
    if floor is None:
        floor = rescale_floor(t.max_depth())
    if not 0.0 <= floor < 1.0:
        raise ValueError("floor must lie in [0, 1)")
    n = y2.shape[0]
    sig = expit(y2)
    q = floor + (1.0 - floor) * sig
    with np.errstate(divide="ignore", invalid="ignore"):
        logq = np.log(q)
        dlogq = (1.0 - floor) * sig * (1.0 - sig) / q
        per = np.zeros(n)
        grad = np.zeros((n, t.k))
        for m, anc in enumerate(_ancestor_index(t)):
            known = z2[:, m] >= 0
            if not known.any():
                continue
            zm = z2[:, m]
            logp = logq[:, anc].sum(axis=1)
            one_minus = -np.expm1(logp)
            ce = np.where(zm == 1, -logp, -np.log(one_minus))
            dce_dlogp = np.where(zm == 1, -1.0, np.exp(logp) / one_minus)
            per += np.where(known, ce, 0.0)
            grad[:, anc] += np.where(known[:, None], dce_dlogp[:, None] * dlogq[:, anc], 0.0)
    return _finish(per, grad, single)


# verification ---------------------------------------------------------------

class GradCheckError(ArithmeticError):
    pass


def grad_check(loss: Callable[..., LossResult], t: Taxonomy, y, z, eps: float = 1e-5) -> float:
    """Worst relative error between the analytic gradient and central differences.

    The relative error of each entry uses ``max(1, |analytic|)`` as its
    denominator.
    """
    if not 1e-8 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-8, 1e-3]")
    y = np.array(y, dtype=np.float64)
    res = loss(t, y, z)
    analytic = np.asarray(res.grad, dtype=np.float64)
    if not np.isfinite(res.value) or not np.all(np.isfinite(analytic)):
        raise GradCheckError("loss or gradient is not finite at the check point")
    worst = 0.0
    flat = y.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss(t, y, z).value
        flat[i] = orig - eps
        down = loss(t, y, z).value
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise GradCheckError(f"loss is not finite within eps of coordinate {i}")
        numeric = (up - down) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(numeric - a) / max(1.0, abs(a)))
    return worst
