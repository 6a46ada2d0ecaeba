"""A small numpy MLP producing one logit per taxonomy node, and its trainers.

The network maps feature vectors to ``k`` logits through an optional ReLU
hidden layer. Training is plain minibatch SGD or Adam on the losses in
`hmlc.losses`, selecting the checkpoint with the best mean validation leaf
AUC. Everything is deterministic in the configured seed.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses
from .data import Dataset
from .inference import scores_for
from .losses import BRScope, GammaMode, LossResult
from .metrics import DegenerateLabelsError, mean_auc
from .taxonomy import Taxonomy

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class LossKind(enum.Enum):
    BR_LEAF = "br_leaf"
    BR_ALL = "br_all"
    HLCP = "hlcp"
    HLUP = "hlup"
    HLUP_NAIVE = "hlup_naive"
    HLUP_RESCALE = "hlup_rescale"

    @property
    def chained(self) -> bool:
        """Whether outputs are conditionals that must be chained for scoring."""
        return self not in (LossKind.BR_LEAF, LossKind.BR_ALL)


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        self.epoch, self.batch = epoch, batch
        super().__init__(message)


@dataclass
class MlpModel:
    """Parameters ``W1, b1, W2, b2`` (hidden > 0) or ``W, b`` (linear)."""

    params: dict[str, np.ndarray]
    hidden: int
    seed: int

    @property
    def d(self) -> int:
        return (self.params["W1"] if self.hidden else self.params["W"]).shape[0]

    @property
    def k(self) -> int:
        return (self.params["b2"] if self.hidden else self.params["b"]).shape[0]

    def copy(self) -> "MlpModel":
        return MlpModel({n: p.copy() for n, p in self.params.items()}, self.hidden, self.seed)

    def same_as(self, other: "MlpModel") -> bool:
        return (self.hidden == other.hidden and self.params.keys() == other.params.keys()
                and all(np.array_equal(self.params[n], other.params[n]) for n in self.params))


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(d: int, h: int, k: int, seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases. ``h=0`` gives a linear model."""
    if d < 1 or k < 1 or h < 0:
        raise ValueError("need d >= 1, k >= 1 and h >= 0")
    rng = np.random.default_rng(seed)
    if h == 0:
        params = {"W": _glorot(rng, d, k), "b": np.zeros(k)}
    else:
        params = {"W1": _glorot(rng, d, h), "b1": np.zeros(h),
                  "W2": _glorot(rng, h, k), "b2": np.zeros(k)}
    return MlpModel(params, h, seed)


def forward(model: MlpModel, features) -> np.ndarray:
    logits, _ = _forward(model, features)
    return logits


def _forward(model: MlpModel, features):
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != model.d:
        raise ValueError(f"model expects {model.d} features, got {x2.shape[1]}")
    p = model.params
    if model.hidden:
        pre = x2 @ p["W1"] + p["b1"]
        hid = np.maximum(pre, 0.0)
        out = hid @ p["W2"] + p["b2"]
        cache = (x2, pre, hid)
    else:
        out = x2 @ p["W"] + p["b"]
        cache = (x2,)
    return (out[0] if single else out), cache


def backward(model: MlpModel, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given the gradient w.r.t. the (batch) logits."""
    g = np.atleast_2d(dlogits)
    p = model.params
    if model.hidden:
        x, pre, hid = cache
        dhid = (g @ p["W2"].T) * (pre > 0)
        return {"W2": hid.T @ g, "b2": g.sum(axis=0), "W1": x.T @ dhid, "b1": dhid.sum(axis=0)}
    (x,) = cache
    return {"W": x.T @ g, "b": g.sum(axis=0)}


# optimisers -----------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(v) for n, v in params.items()}
        self.v = {n: np.zeros_like(v) for n, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for n in sorted(params):
            g = grads[n]
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            params[n] -= self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-2, momentum=0.0):
        self.lr, self.momentum = lr, momentum
        self.vel = {n: np.zeros_like(v) for n, v in params.items()}

    def step(self, params, grads):
        for n in sorted(params):
            self.vel[n] = self.momentum * self.vel[n] + grads[n]
            params[n] -= self.lr * self.vel[n]


# training -------------------------------------------------------------------

@dataclass
class TrainConfig:
    loss: LossKind = LossKind.HLUP
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    seed: int = 0
    gamma_mode: GammaMode = GammaMode.EXACT
    rescale_floor: float | None = None
    exclude: tuple[int, ...] = ()

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        self.gamma_mode = GammaMode(self.gamma_mode)
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1 and lr >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def loss_fn(cfg: TrainConfig):
    """The batch loss ``f(t, y, z) -> LossResult`` selected by ``cfg``."""
    kind = cfg.loss
    if kind is LossKind.BR_LEAF:
        return lambda t, y, z: losses.br_loss(t, y, z, BRScope.LEAF_ONLY)
    if kind is LossKind.BR_ALL:
        return lambda t, y, z: losses.br_loss(t, y, z, BRScope.ALL_NODES)
    if kind is LossKind.HLCP:
        return losses.hlcp_loss
    if kind is LossKind.HLUP:
        return lambda t, y, z: losses.hlup_stable(t, y, z, cfg.gamma_mode)
    if kind is LossKind.HLUP_NAIVE:
        return losses.hlup_naive
    if kind is LossKind.HLUP_RESCALE:
        return lambda t, y, z: losses.hlup_rescale(t, y, z, cfg.rescale_floor)
    raise ValueError(kind)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float | None] = field(default_factory=list)
    initial_val_metric: float | None = None
    best_epoch: int = 0  # 0 is the starting point

    def __len__(self) -> int:
        return len(self.train_loss)


def validation_metric(model: MlpModel, ds: Dataset, t: Taxonomy, chained: bool,
                      exclude=()) -> float | None:
    """Mean leaf AUC on ``ds`` (``None`` when no leaf has both classes)."""
    scores = scores_for(t, forward(model, ds.features), chained)
    leaves = [m for m in sorted(t.leaves()) if m not in set(exclude)]
    try:
        return mean_auc(scores, ds.labels, leaves)
    except DegenerateLabelsError:
        return None


def _better(a: float | None, b: float | None) -> bool:
    if a is None:
        return False
    return b is None or a > b


def train(model: MlpModel, ds: Dataset, t: Taxonomy, cfg: TrainConfig) -> tuple[MlpModel, History]:
    """Minibatch training on the train split, model selection on the val split.

    The starting parameters count as a candidate, so zero epochs return
    the input model unchanged. Returns a new model; ``model`` is untouched.
    """
    if ds.split is None:
        raise ValueError("training needs a dataset with train/val split assignments")
    train_ds, val_ds = ds.take("train"), ds.take("val")
    if train_ds.n == 0 or val_ds.n == 0:
        raise ValueError("train and val splits must both be non-empty")
    if model.k != t.k:
        raise ValueError(f"model has {model.k} outputs, taxonomy has {t.k} nodes")

    f = loss_fn(cfg)
    chained = cfg.loss.chained
    work = model.copy()
    if cfg.optimizer == "adam":
        opt = Adam(work.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    else:
        opt = SGD(work.params, cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    labels = train_ds.labels.copy()
    if cfg.exclude:
        labels[:, list(cfg.exclude)] = -1

    hist = History()
    best = work.copy()
    best_val = hist.initial_val_metric = validation_metric(work, val_ds, t, chained, cfg.exclude)
    n = train_ds.n
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            logits, cache = _forward(work, train_ds.features[idx])
            res: LossResult = f(t, logits, labels[idx])
            if not np.isfinite(res.value) or not np.all(np.isfinite(res.grad)):
                raise TrainingError(
                    f"non-finite {cfg.loss.value} loss at epoch {epoch}, batch {b}",
                    epoch=epoch, batch=b)
            opt.step(work.params, backward(work, cache, res.grad))
        full = f(t, forward(work, train_ds.features), labels).value
        val = validation_metric(work, val_ds, t, chained, cfg.exclude)
        hist.train_loss.append(float(full))
        hist.val_metric.append(val)
        if _better(val, best_val):
            best_val, best, hist.best_epoch = val, work.copy(), epoch
        log.debug("epoch %d loss %.6f val %s", epoch, full, val)
    return best, hist


def train_two_stage(ds: Dataset, t: Taxonomy, cfg_hlcp: TrainConfig, cfg_hlup: TrainConfig,
                    hidden: int = 32) -> tuple[MlpModel, tuple[History, History]]:
    """Conditional training from scratch, then unconditional fine-tuning.

    Stage two starts from the best stage-one checkpoint and uses the
    stable unconditional loss whatever ``cfg_hlup.loss`` says, unless that
    is one of the other chained losses.
    """
    if cfg_hlcp.loss is not LossKind.HLCP:
        cfg_hlcp = replace(cfg_hlcp, loss=LossKind.HLCP)
    if cfg_hlup.loss not in (LossKind.HLUP, LossKind.HLUP_NAIVE, LossKind.HLUP_RESCALE):
        cfg_hlup = replace(cfg_hlup, loss=LossKind.HLUP)
    model = init_model(ds.d, hidden, t.k, cfg_hlcp.seed)
    stage1, h1 = train(model, ds, t, cfg_hlcp)
    stage2, h2 = train(stage1, ds, t, cfg_hlup)
    return stage2, (h1, h2)


# checkpoints ----------------------------------------------------------------

def save_checkpoint(model: MlpModel, path: str | Path) -> None:
    arrays = {f"param_{n}": v for n, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, format_version=np.int64(CHECKPOINT_VERSION), hidden=np.int64(model.hidden),
                 seed=np.int64(model.seed), **arrays)


def load_checkpoint(path: str | Path) -> MlpModel:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = {key[len("param_"):]: z[key].copy() for key in z.files if key.startswith("param_")}
        model = MlpModel(params, int(z["hidden"]), int(z["seed"]))
    expected = {"W1", "b1", "W2", "b2"} if model.hidden else {"W", "b"}
    if set(params) != expected:
        raise ValueError(f"checkpoint parameters {sorted(params)} do not match hidden={model.hidden}")
    return model

