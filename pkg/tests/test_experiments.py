import pytest

from hmlc.experiments import (Recipe, SweepSpec, fit_model, loss_checks, run_sweep, sweep_table,
                              sweep_to_csv, worker_count)
from hmlc.losses import GammaCapError
from hmlc.taxonomy import chain, load_taxonomy

TINY = Recipe(hidden=4, stage1_epochs=1, stage2_epochs=1, batch_size=128)


def test_loss_checks_pass():
    lines = loss_checks(None, seeds=[0, 1], trials=30)
    assert all(line.ok for line in lines), [line.render() for line in lines]
    assert {line.name for line in lines} >= {"stable-vs-naive value", "gamma exact-vs-enumeration"}


def test_loss_checks_on_fixed_taxonomy():
    lines = loss_checks(load_taxonomy("plco"), seeds=[2], trials=5, mode="max")
    assert all(line.ok for line in lines)


def test_loss_checks_refuse_deep_exact():
    with pytest.raises(GammaCapError):
        loss_checks(chain(25), seeds=[0], trials=1)


def test_fit_model_rejects_unknown_name():
    t = load_taxonomy("synthetic7")
    with pytest.raises(ValueError):
        fit_model("svm", None, t, TINY, 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(betas=(0.5, 0.1))
    with pytest.raises(ValueError):
        SweepSpec(betas=(1.5,))
    with pytest.raises(ValueError):
        SweepSpec(models=("svm",))


def test_worker_count(monkeypatch):
    monkeypatch.setenv("HMLC_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("HMLC_THREADS", "0")
    assert worker_count() == 1
    monkeypatch.setenv("HMLC_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count()


def test_parallel_sweep_matches_serial(monkeypatch):
    t = load_taxonomy("synthetic7")
    spec = SweepSpec(betas=(0.0, 0.4), seeds=(0, 1), models=("br_leaf", "hlup_finetune"),
                     n=300, d=3, bootstrap_rounds=5, recipe=TINY)
    monkeypatch.setenv("HMLC_THREADS", "1")
    serial = run_sweep(t, spec)
    monkeypatch.setenv("HMLC_THREADS", "2")
    parallel = run_sweep(t, spec)
    assert sweep_to_csv(serial) == sweep_to_csv(parallel)
    table = sweep_table(serial, spec).splitlines()
    assert table[0] == "beta,br_leaf,hlup_finetune"
    assert len(table) == 3


def test_failed_cell_is_recorded():
    # naive chained loss on a saturating linear model cannot train; the sweep keeps going
    t = chain(12)
    spec = SweepSpec(betas=(0.0,), seeds=(0,), models=("hlup_naive", "hlup"), n=200, d=2,
                     bootstrap_rounds=0,
                     recipe=Recipe(hidden=0, stage1_epochs=2, stage2_epochs=2, lr=50.0))
    rows = run_sweep(t, spec)
    status = {r["model"]: r["status"] for r in rows if r["seed"] == 0}
    assert status["hlup_naive"].startswith("failed")
    assert status["hlup"] == "ok"
    summary = {r["model"]: r["status"] for r in rows if r["seed"] == "mean"}
    assert summary == {"hlup_naive": "ok 0/1", "hlup": "ok 1/1"}
