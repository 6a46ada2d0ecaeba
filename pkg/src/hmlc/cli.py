"""Command line entry point: ``hmlc <command> [options]``.

Commands: validate, generate, delete, train, eval, losscheck, sweep.
Options may also come from ``--config FILE`` (``key = value`` lines, keys
spelled like the long flags with dashes or underscores); flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments
from .data import (DatasetFormatError, DeletionConfig, default_deletion_levels, delete_labels,
                   read_dataset, synth_generate, write_dataset)
from .inference import scores_for, write_predictions
from .losses import GammaCapError, GammaMode
from .metrics import full_report, report_to_csv, report_to_jsonl
from .model import forward, load_checkpoint, save_checkpoint
from .taxonomy import TaxonomyError, load_taxonomy

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Missing or unreadable input; exits with status 2."""


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _names(text: str | None) -> list[str]:
    if not text:
        return []
    return [x.strip() for x in str(text).split(",") if x.strip()]


def read_config(path: str) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _taxonomy(args):
    if not args.taxonomy:
        raise InputError("--taxonomy is required")
    try:
        return load_taxonomy(args.taxonomy)
    except FileNotFoundError as exc:
        raise InputError(f"taxonomy file not found: {args.taxonomy}") from exc


def _dataset(path):
    if not path:
        raise InputError("--data is required")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from exc
    return read_dataset(text)


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _recipe(args) -> experiments.Recipe:
    return experiments.Recipe(hidden=int(args.hidden), stage1_epochs=int(args.epochs),
                              stage2_epochs=int(args.stage2_epochs),
                              batch_size=int(args.batch_size), lr=float(args.lr),
                              optimizer=args.optimizer, gamma_mode=args.mode)


# commands -------------------------------------------------------------------

def cmd_validate(args) -> int:
    t = _taxonomy(args)
    print(f"OK, k={t.k}, depth={t.max_depth()}, leaves={len(t.leaves())}")
    if not args.data:
        return EXIT_OK
    ds = _dataset(args.data)
    if ds.label_names != t.names:
        print("label columns do not match the taxonomy node order", file=sys.stderr)
        return EXIT_FAIL
    problems = ds.check(t)
    for v in problems:
        print(f"row {v.row + 2} ({ds.ids[v.row]}): {v.describe(t).split(': ', 1)[-1]}",
              file=sys.stderr)
    if problems:
        print(f"{len(problems)} violation(s)", file=sys.stderr)
        return EXIT_FAIL
    print(f"OK, {ds.n} rows consistent")
    return EXIT_OK


def cmd_generate(args) -> int:
    t = _taxonomy(args)
    ds = synth_generate(t, int(args.n), int(args.d), int(args.seed))
    path = _outdir(args) / "data.csv"
    path.write_text(write_dataset(ds), encoding="utf-8")
    print(f"wrote {ds.n} rows to {path}")
    return EXIT_OK


def _deletion_config(args, t, beta: float) -> DeletionConfig:
    groups, mid = default_deletion_levels(t)
    if args.group_parents:
        groups = tuple(t.indices(_names(args.group_parents)))
    if args.mid_parent:
        mid = t.index(args.mid_parent)
    return DeletionConfig(beta=beta, group_parents=groups, mid_parent=mid, root=t.root,
                          ratio=float(args.ratio), seed=int(args.seed),
                          excluded=frozenset(t.indices(_names(args.exclude))))


def cmd_delete(args) -> int:
    t = _taxonomy(args)
    ds = _dataset(args.data)
    out = delete_labels(ds, t, _deletion_config(args, t, float(args.beta)))
    path = _outdir(args) / "data.csv"
    path.write_text(write_dataset(out), encoding="utf-8")
    before = int((ds.labels < 0).sum())
    after = int((out.labels < 0).sum())
    print(f"unknown cells {before} -> {after}; wrote {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    t = _taxonomy(args)
    ds = _dataset(args.data)
    exclude = t.indices(_names(args.exclude))
    model = experiments.fit_model(args.model, ds, t, _recipe(args), int(args.seed), exclude)
    out = _outdir(args)
    save_checkpoint(model, out / "model.npz")
    (out / "model.json").write_text(json.dumps(
        {"model": args.model, "chained": experiments.chained_scores(args.model),
         "seed": int(args.seed)}, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out / 'model.npz'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    t = _taxonomy(args)
    ds = _dataset(args.data)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise InputError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    meta_path = ckpt.with_name("model.json")
    chained = True
    if args.model:
        chained = experiments.chained_scores(args.model)
    elif meta_path.exists():
        chained = json.loads(meta_path.read_text())["chained"]
    if ds.split is not None and args.split != "all":
        ds = ds.take(args.split)
    scores = scores_for(t, forward(model, ds.features), chained)
    rep = full_report(t, scores, ds.labels, exclude=t.indices(_names(args.exclude)),
                      bootstrap_rounds=int(args.bootstrap), seed=int(args.seed))
    out = _outdir(args)
    (out / "report.csv").write_text(report_to_csv(rep), encoding="utf-8")
    (out / "report.jsonl").write_text(report_to_jsonl(rep), encoding="utf-8")
    (out / "predictions.csv").write_text(write_predictions(t, ds.ids, scores), encoding="utf-8")
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"
    print(f"mean leaf AUC {fmt(rep.mean_leaf_auc)}  AP {fmt(rep.mean_leaf_ap)}  "
          f"non-leaf AUC {fmt(rep.mean_nonleaf_auc)}  conditional leaf AUC "
          f"{fmt(rep.cond_mean_leaf_auc)}")
    return EXIT_OK


def cmd_losscheck(args) -> int:
    t = load_taxonomy(args.taxonomy) if args.taxonomy else None
    try:
        lines = experiments.loss_checks(t, _ints(args.seeds), int(args.trials),
                                        GammaMode(args.mode),
                                        grad_trials=int(args.grad_trials)
                                        if args.grad_trials is not None else None)
    except GammaCapError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for line in lines:
        print(line.render())
    worst_grad = max(l.worst for l in lines if l.name.startswith("gradcheck"))
    print(f"max gradient check error {worst_grad:.3e}")
    return EXIT_OK if all(l.ok for l in lines) else EXIT_FAIL


def cmd_sweep(args) -> int:
    t = _taxonomy(args)
    data = _dataset(args.data) if args.data else None
    spec = experiments.SweepSpec(
        betas=tuple(_floats(args.betas)), seeds=tuple(_ints(args.seeds)),
        models=tuple(_names(args.models)), n=int(args.n), d=int(args.d),
        ratio=float(args.ratio),
        group_parents=tuple(_names(args.group_parents)) if args.group_parents else None,
        mid_parent=args.mid_parent or None, exclude=tuple(_names(args.exclude)),
        bootstrap_rounds=int(args.bootstrap), recipe=_recipe(args))
    rows = experiments.run_sweep(t, spec, data)
    out = _outdir(args)
    (out / "sweep.csv").write_text(experiments.sweep_to_csv(rows), encoding="utf-8")
    (out / "sweep.jsonl").write_text(experiments.sweep_to_jsonl(rows), encoding="utf-8")
    table = experiments.sweep_table(rows, spec)
    (out / "table.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    failed = [r for r in rows if str(r["status"]).startswith("failed")]
    if failed:
        print(f"{len(failed)} cell(s) failed; see sweep.csv", file=sys.stderr)
    return EXIT_OK


# parser ---------------------------------------------------------------------

def _shared(p: argparse.ArgumentParser, seed_default="0"):
    p.add_argument("--config", help="key = value file with option defaults")
    p.add_argument("--taxonomy", help="taxonomy file, or builtin: plco, padchest, synthetic7")
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--seed", default=seed_default, help="unsigned 64-bit seed")
    p.add_argument("--out", default=".", help="output directory")


def _deletion_flags(p):
    p.add_argument("--ratio", default="0.3", help="per-level probability ratio")
    p.add_argument("--exclude", default="", help="comma-separated labels to drop")
    p.add_argument("--group-parents", default="", help="comma-separated finest-level parents")
    p.add_argument("--mid-parent", default="", help="mid-level parent")


def _training_flags(p):
    p.add_argument("--hidden", default="32")
    p.add_argument("--epochs", default="20", help="epochs (stage one for two-stage models)")
    p.add_argument("--stage2-epochs", default="20")
    p.add_argument("--batch-size", default="64")
    p.add_argument("--lr", default="1e-3")
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--mode", default="exact", choices=("exact", "max"), help="gamma mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmlc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a taxonomy and optionally a dataset")
    _shared(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="write a synthetic hierarchy-consistent dataset")
    _shared(p)
    p.add_argument("--n", default="5000")
    p.add_argument("--d", default="20")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("delete", help="delete training labels at one beta")
    _shared(p)
    p.add_argument("--beta", required=False, default=None)
    _deletion_flags(p)
    p.set_defaults(func=cmd_delete)

    p = sub.add_parser("train", help="train one model variant")
    _shared(p)
    p.add_argument("--model", default="hlup_finetune", choices=experiments.MODELS)
    p.add_argument("--exclude", default="")
    _training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint and write metric reports")
    _shared(p)
    p.add_argument("--checkpoint", required=False, default=None)
    p.add_argument("--model", default=None, choices=experiments.MODELS,
                   help="overrides the score semantics stored next to the checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--exclude", default="")
    p.add_argument("--bootstrap", default="0", help="bootstrap rounds for CIs (0 = none)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("losscheck", help="verify losses and gradients against oracles")
    _shared(p)
    p.add_argument("--seeds", default="0")
    p.add_argument("--trials", default="200")
    p.add_argument("--grad-trials", default=None)
    p.add_argument("--mode", default="exact", choices=("exact", "max"))
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("sweep", help="incomplete-label sweep over betas, models and seeds")
    _shared(p)
    p.add_argument("--betas", default=",".join(str(b) for b in experiments.BETA_GRID))
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--models", default=",".join(experiments.DEFAULT_MODELS))
    p.add_argument("--n", default="5000")
    p.add_argument("--d", default="20")
    p.add_argument("--bootstrap", default="1000")
    _deletion_flags(p)
    _training_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        config = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(config) - known)
        if unknown:
            raise InputError(f"unknown config key(s): {', '.join(unknown)}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "delete" and args.beta is None:
            raise InputError("--beta is required")
        if args.command == "eval" and not args.checkpoint:
            raise InputError("--checkpoint is required")
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TaxonomyError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
