"""Model recipes, the loss self-check and the incomplete-label sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import losses, oracles
from .data import Dataset, DeletionConfig, default_deletion_levels, delete_labels, synth_generate
from .inference import scores_for
from .losses import BRScope, GammaCapError, GammaMode, grad_check
from .metrics import full_report
from .model import LossKind, MlpModel, TrainConfig, TrainingError, forward, init_model, train, train_two_stage
from .taxonomy import Taxonomy, random_taxonomy

log = logging.getLogger(__name__)

BETA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
DEFAULT_MODELS = ("br_leaf", "br_all", "hlup_finetune")
MODELS = ("br_leaf", "br_all", "hlcp", "hlup", "hlup_rescale", "hlup_naive", "hlup_finetune")


@dataclass(frozen=True)
class Recipe:
    """Shared training hyper-parameters.

    Single-stage models train for ``stage1_epochs + stage2_epochs`` so they
    see as many updates as the two-stage model.
    """

    hidden: int = 32
    stage1_epochs: int = 20
    stage2_epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    gamma_mode: str = "exact"

    def config(self, loss: LossKind, epochs: int, seed: int, exclude=()) -> TrainConfig:
        return TrainConfig(loss=loss, epochs=epochs, batch_size=self.batch_size, lr=self.lr,
                           optimizer=self.optimizer, seed=seed,
                           gamma_mode=GammaMode(self.gamma_mode), exclude=tuple(exclude))


def chained_scores(name: str) -> bool:
    return name not in ("br_leaf", "br_all")


def fit_model(name: str, ds: Dataset, t: Taxonomy, recipe: Recipe, seed: int,
              exclude=()) -> MlpModel:
    """Train one of `MODELS` on ``ds`` with the given seed."""
    if name not in MODELS:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")
    total = recipe.stage1_epochs + recipe.stage2_epochs
    if name == "hlup_finetune":
        model, _ = train_two_stage(
            ds, t,
            recipe.config(LossKind.HLCP, recipe.stage1_epochs, seed, exclude),
            recipe.config(LossKind.HLUP, recipe.stage2_epochs, seed, exclude),
            hidden=recipe.hidden)
        return model
    epochs = recipe.stage1_epochs if name == "hlcp" else total
    cfg = recipe.config(LossKind(name), epochs, seed, exclude)
    model, _ = train(init_model(ds.d, recipe.hidden, t.k, seed), ds, t, cfg)
    return model


# loss self-check ------------------------------------------------------------

@dataclass
class CheckLine:
    name: str
    trials: int
    worst: float
    tolerance: float
    skipped: int = 0

    @property
    def ok(self) -> bool:
        return self.trials > 0 and self.worst <= self.tolerance

    def render(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        extra = f" skipped={self.skipped}" if self.skipped else ""
        return (f"{status} {self.name}: trials={self.trials} worst={self.worst:.3e} "
                f"tol={self.tolerance:.0e}{extra}")


def _random_labels(rng, t: Taxonomy, p_unknown: float = 0.1) -> np.ndarray:
    """Hierarchy-consistent tri-state labels with occasional unknown subtrees."""
    z = np.zeros(t.k, dtype=np.int8)
    for m in t.topological_order:
        p = t.parent(m)
        if p is not None and z[p] != 1:
            z[m] = -1 if z[p] == -1 else 0
            continue
        if rng.random() < p_unknown:
            z[m] = -1
        else:
            z[m] = 1 if rng.random() < 0.5 else 0
    return z


def loss_checks(t: Taxonomy | None, seeds: Sequence[int], trials: int,
                mode: GammaMode = GammaMode.EXACT, grad_trials: int | None = None,
                max_depth: int = 5) -> list[CheckLine]:
    """Cross-check every loss against its oracle.

    With ``t=None`` a fresh random taxonomy (depth <= ``max_depth``) is drawn
    per trial. Raises `GammaCapError` when exact mode meets a chain above the
    cap.
    """
    mode = GammaMode(mode)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    grad_trials = trials if grad_trials is None else grad_trials
    if t is not None and mode is GammaMode.EXACT and t.max_depth() > losses.DEFAULT_POWERSET_CAP:
        raise GammaCapError(
            f"taxonomy depth {t.max_depth()} exceeds the exact-gamma cap "
            f"{losses.DEFAULT_POWERSET_CAP}; rerun with --mode max")

    eq_val = CheckLine("stable-vs-naive value", 0, 0.0, 1e-9)
    eq_grad = CheckLine("stable-vs-naive gradient", 0, 0.0, 1e-7)
    gam = CheckLine("gamma exact-vs-enumeration", 0, 0.0, 1e-12)
    sand = CheckLine("gamma max-approx sandwich violation", 0, 0.0, 0.0)
    grads = {name: CheckLine(f"gradcheck {name}", 0, 0.0, 1e-5) for name in
             ("br_leaf", "br_all", "hlcp", "hlup_naive", f"hlup_stable[{mode.value}]", "hlup_rescale")}

    for seed in seeds:
        rng = np.random.default_rng(seed)
        for trial in range(trials):
            tt = t if t is not None else random_taxonomy(
                rng, int(rng.integers(1, 9)), max_depth=max_depth)
            y = rng.uniform(-8.0, 8.0, size=tt.k)
            z = _random_labels(rng, tt)

            # oracle equivalence, only where the literal product is representable
            prods = [oracles.chain_product(y[list(tt.ancestors(m))]) for m in range(tt.k)]
            if all(1e-12 <= p <= 1 - 1e-12 for p in prods):
                st = losses.hlup_stable(tt, y, z, GammaMode.EXACT)
                nv = losses.hlup_naive(tt, y, z)
                eq_val.worst = max(eq_val.worst, abs(st.value - nv.value) / (1.0 + abs(st.value)))
                eq_grad.worst = max(eq_grad.worst, float(np.max(
                    np.abs(st.grad - nv.grad) / np.maximum(1.0, np.abs(nv.grad)))))
                eq_val.trials += 1
                eq_grad.trials += 1
            else:
                eq_val.skipped += 1
                eq_grad.skipped += 1

            m = int(rng.integers(tt.k))
            anc = list(tt.ancestors(m))
            zm = int(rng.integers(2))
            if len(anc) <= 12:
                exact, _ = losses.gamma(y[anc], zm, GammaMode.EXACT)
                ref = oracles.brute_force_gamma(y[anc], zm)
                gam.worst = max(gam.worst, abs(exact - ref))
                gam.trials += 1
                approx, _ = losses.gamma(y[anc], zm, GammaMode.MAX_APPROX)
                gap = approx - exact
                bound = (1 - zm) * math.log(2 ** len(anc) - 1)
                sand.worst = max(sand.worst, max(0.0, -gap - 1e-12, gap - bound - 1e-12))
                sand.trials += 1

            if trial < grad_trials:
                # keep max-approx away from its kinks at y = 0
                yg = np.where(np.abs(y) < 1e-3, 1e-3, y)
                fns = {
                    "br_leaf": lambda a, b, c: losses.br_loss(a, b, c, BRScope.LEAF_ONLY),
                    "br_all": lambda a, b, c: losses.br_loss(a, b, c, BRScope.ALL_NODES),
                    "hlcp": losses.hlcp_loss,
                    "hlup_naive": losses.hlup_naive,
                    f"hlup_stable[{mode.value}]": lambda a, b, c: losses.hlup_stable(a, b, c, mode),
                    "hlup_rescale": losses.hlup_rescale,
                }
                for name, fn in fns.items():
                    try:
                        err = grad_check(fn, tt, yg, z, eps=1e-5)
                    except losses.GradCheckError:
                        grads[name].skipped += 1
                        continue
                    grads[name].worst = max(grads[name].worst, err)
                    grads[name].trials += 1
    return [eq_val, eq_grad, gam, sand, *grads.values()]


# sweep ----------------------------------------------------------------------

SWEEP_COLUMNS = ("beta", "model", "seed", "status", "mean_leaf_auc", "auc_lo", "auc_hi",
                 "mean_leaf_ap", "mean_nonleaf_auc", "cond_mean_leaf_auc")


@dataclass(frozen=True)
class SweepSpec:
    betas: tuple[float, ...] = BETA_GRID
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    models: tuple[str, ...] = DEFAULT_MODELS
    n: int = 5000
    d: int = 20
    ratio: float = 0.3
    group_parents: tuple[str, ...] | None = None
    mid_parent: str | None = None
    exclude: tuple[str, ...] = ()
    bootstrap_rounds: int = 1000
    recipe: Recipe = field(default_factory=Recipe)

    def __post_init__(self):
        if list(self.betas) != sorted(self.betas):
            raise ValueError("beta list must be sorted ascending")
        for b in self.betas:
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"beta {b} outside [0, 1]")
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise ValueError(f"unknown model(s) {bad}; choose from {', '.join(MODELS)}")


def deletion_config(t: Taxonomy, spec: SweepSpec, beta: float, seed: int) -> DeletionConfig:
    groups, mid = default_deletion_levels(t)
    if spec.group_parents is not None:
        groups = tuple(t.indices(spec.group_parents))
    if spec.mid_parent is not None:
        mid = t.index(spec.mid_parent)
    return DeletionConfig(beta=beta, group_parents=groups, mid_parent=mid, root=t.root,
                          ratio=spec.ratio, seed=seed, excluded=frozenset(t.indices(spec.exclude)))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _run_cell(args):
    t, base, spec, beta, model_name, seed = args
    exclude = t.indices(spec.exclude)
    row = {"beta": beta, "model": model_name, "seed": seed}
    try:
        ds = delete_labels(base, t, deletion_config(t, spec, beta, seed))
        model = fit_model(model_name, ds, t, spec.recipe, seed, exclude)
        test = ds.take("test")
        scores = scores_for(t, forward(model, test.features), chained_scores(model_name))
        rep = full_report(t, scores, test.labels, exclude=exclude,
                          bootstrap_rounds=spec.bootstrap_rounds, seed=seed)
    except (TrainingError, ValueError, FloatingPointError) as exc:
        log.warning("cell beta=%s model=%s seed=%s failed: %s", beta, model_name, seed, exc)
        row.update(status=f"failed: {exc}")
        return row
    lo, hi = rep.summary_ci.get("mean_leaf", (None, None))
    row.update(status="ok", mean_leaf_auc=rep.mean_leaf_auc, auc_lo=lo, auc_hi=hi,
               mean_leaf_ap=rep.mean_leaf_ap, mean_nonleaf_auc=rep.mean_nonleaf_auc,
               cond_mean_leaf_auc=rep.cond_mean_leaf_auc)
    return row


def worker_count() -> int:
    raw = os.environ.get("HMLC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"HMLC_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def run_sweep(t: Taxonomy, spec: SweepSpec, data: Dataset | None = None) -> list[dict]:
    """Train and score every (beta, model, seed) cell.

    The base dataset for a seed is ``data`` if given, else freshly
    generated from that seed; deletions for all betas of one seed share
    their keyed uniforms, so the unknown sets are nested. Rows come back
    in (beta, model, seed) order followed by per-(beta, model) means.
    """
    bases = {s: data if data is not None else synth_generate(t, spec.n, spec.d, s)
             for s in spec.seeds}
    jobs = [(t, bases[s], spec, b, m, s) for b in spec.betas for m in spec.models
            for s in spec.seeds]
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    summary = []
    for b in spec.betas:
        for m in spec.models:
            cell = [r for r in rows if r["beta"] == b and r["model"] == m and r["status"] == "ok"]
            out = {"beta": b, "model": m, "seed": "mean", "status": f"ok {len(cell)}/{len(spec.seeds)}"}
            for key in ("mean_leaf_auc", "auc_lo", "auc_hi", "mean_leaf_ap",
                        "mean_nonleaf_auc", "cond_mean_leaf_auc"):
                vals = [r[key] for r in cell if r.get(key) is not None]
                out[key] = float(np.mean(vals)) if vals else None
            summary.append(out)
    return rows + summary


def sweep_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def sweep_to_jsonl(rows: list[dict]) -> str:
    return "".join(json.dumps({c: r.get(c) for c in SWEEP_COLUMNS}) + "\n" for r in rows)


def sweep_table(rows: list[dict], spec: SweepSpec) -> str:
    """Mean leaf AUC per beta (rows) and model (columns), averaged over seeds."""
    means = {(r["beta"], r["model"]): r.get("mean_leaf_auc") for r in rows if r["seed"] == "mean"}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", *spec.models])
    for b in spec.betas:
        w.writerow([_fmt(float(b)), *(_fmt(means.get((b, m))) for m in spec.models)])
    return buf.getvalue()

