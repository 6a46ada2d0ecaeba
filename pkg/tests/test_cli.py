import csv
import json

import pytest

from hmlc.cli import main
from hmlc.data import read_dataset

SMALL_TRAIN = ["--hidden", "4", "--epochs", "1", "--stage2-epochs", "1", "--batch-size", "128"]


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def generated(tmp_path, capsys):
    code, _, _ = _run(capsys, "generate", "--taxonomy", "synthetic7", "--n", 400, "--d", 4,
                      "--seed", 1, "--out", tmp_path / "gen")
    assert code == 0
    return tmp_path / "gen" / "data.csv"


class TestValidate:
    def test_builtin_taxonomy(self, capsys):
        code, out, _ = _run(capsys, "validate", "--taxonomy", "plco")
        assert code == 0
        assert out.splitlines()[0] == "OK, k=19, depth=4, leaves=14"

    def test_dataset_ok(self, capsys, generated):
        code, out, _ = _run(capsys, "validate", "--taxonomy", "synthetic7", "--data", generated)
        assert code == 0 and "400 rows consistent" in out

    def test_violation(self, capsys, tmp_path):
        tax = tmp_path / "t.tsv"
        tax.write_text("r\t-\nc\tr\n")
        data = tmp_path / "d.csv"
        data.write_text("id,f0,r,c\nok,0.1,1,1\nbad,0.2,0,1\n")
        code, _, err = _run(capsys, "validate", "--taxonomy", tax, "--data", data)
        assert code == 1
        assert "bad" in err and "1 violation" in err

    def test_malformed_taxonomy(self, capsys, tmp_path):
        tax = tmp_path / "t.tsv"
        tax.write_text("a\t-\nb\t-\n")
        code, _, err = _run(capsys, "validate", "--taxonomy", tax)
        assert code == 1 and "multiple roots" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = _run(capsys, "validate", "--taxonomy", tmp_path / "nope.tsv")
        assert code == 2 and "not found" in err
        code, _, _ = _run(capsys, "validate", "--taxonomy", "plco", "--data", tmp_path / "x.csv")
        assert code == 2


class TestPipeline:
    def test_generate_is_deterministic(self, capsys, tmp_path, generated):
        _run(capsys, "generate", "--taxonomy", "synthetic7", "--n", 400, "--d", 4, "--seed", 1,
             "--out", tmp_path / "again")
        assert (tmp_path / "again" / "data.csv").read_bytes() == generated.read_bytes()

    def test_delete(self, capsys, tmp_path, generated):
        code, out, _ = _run(capsys, "delete", "--taxonomy", "synthetic7", "--data", generated,
                            "--beta", 0.5, "--out", tmp_path / "del")
        assert code == 0 and "unknown cells 0 ->" in out
        ds = read_dataset((tmp_path / "del" / "data.csv").read_text())
        assert (ds.labels < 0).any()

    def test_delete_requires_beta(self, capsys, generated):
        code, _, err = _run(capsys, "delete", "--taxonomy", "synthetic7", "--data", generated)
        assert code == 2 and "--beta" in err

    def test_train_then_eval(self, capsys, tmp_path, generated):
        out = tmp_path / "run"
        code, _, _ = _run(capsys, "train", "--taxonomy", "synthetic7", "--data", generated,
                          "--model", "hlup_finetune", "--out", out, *SMALL_TRAIN)
        assert code == 0
        assert json.loads((out / "model.json").read_text())["chained"] is True
        code, text, _ = _run(capsys, "eval", "--taxonomy", "synthetic7", "--data", generated,
                             "--checkpoint", out / "model.npz", "--bootstrap", 20, "--out", out)
        assert code == 0 and "mean leaf AUC" in text
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0].startswith("# ap_estimator")
        rows = list(csv.DictReader(lines[1:]))
        assert [r["label"] for r in rows][-3:] == ["mean_leaf", "mean_nonleaf", "cond_mean_leaf"]
        assert (out / "predictions.csv").exists() and (out / "report.jsonl").exists()

    def test_eval_missing_checkpoint(self, capsys, tmp_path, generated):
        code, _, _ = _run(capsys, "eval", "--taxonomy", "synthetic7", "--data", generated,
                          "--checkpoint", tmp_path / "none.npz")
        assert code == 2


class TestLosscheck:
    def test_default_passes(self, capsys):
        code, out, _ = _run(capsys, "losscheck", "--trials", 20)
        assert code == 0
        worst = float(out.strip().splitlines()[-1].split()[-1])
        assert worst < 1e-5

    def test_reproducible(self, capsys):
        a = _run(capsys, "losscheck", "--trials", 10, "--seeds", "3")
        b = _run(capsys, "losscheck", "--trials", 10, "--seeds", "3")
        assert a == b

    def test_cap_refusal(self, capsys, tmp_path):
        tax = tmp_path / "deep.tsv"
        tax.write_text("n0\t-\n" + "".join(f"n{i}\tn{i - 1}\n" for i in range(1, 22)))
        code, _, err = _run(capsys, "losscheck", "--taxonomy", tax, "--trials", 1)
        assert code == 1 and "refused" in err


class TestSweep:
    ARGS = ["--taxonomy", "synthetic7", "--betas", "0,0.5", "--seeds", "0,1",
            "--n", 300, "--d", 4, "--bootstrap", 10, *SMALL_TRAIN]

    def test_row_count_and_determinism(self, capsys, tmp_path):
        code, _, _ = _run(capsys, "sweep", *self.ARGS, "--out", tmp_path / "a")
        assert code == 0
        rows = list(csv.DictReader((tmp_path / "a" / "sweep.csv").read_text().splitlines()))
        cells = [r for r in rows if r["seed"] != "mean"]
        assert len(cells) == 2 * 3 * 2
        assert len(rows) == len(cells) + 2 * 3
        assert all(r["status"] == "ok" for r in cells)
        _run(capsys, "sweep", *self.ARGS, "--out", tmp_path / "b")
        for name in ("sweep.csv", "sweep.jsonl", "table.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_config_file_with_flag_override(self, capsys, tmp_path):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text("# small run\nbetas = 0.3\nseeds = 0\nmodels = br_leaf,hlcp\nn = 300\n"
                       "d = 4\nbootstrap = 10\nhidden = 4\nepochs = 1\nstage2_epochs = 1\n")
        code, _, _ = _run(capsys, "sweep", "--taxonomy", "synthetic7", "--config", cfg,
                          "--models", "br_leaf", "--out", tmp_path)
        assert code == 0
        rows = list(csv.DictReader((tmp_path / "sweep.csv").read_text().splitlines()))
        assert {r["model"] for r in rows} == {"br_leaf"}
        assert {r["beta"] for r in rows} == {"0.300000"}

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        code, _, err = _run(capsys, "sweep", "--taxonomy", "synthetic7", "--config", cfg)
        assert code == 2 and "colour" in err
