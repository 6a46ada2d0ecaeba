import numpy as np
import pytest

from hmlc.data import Dataset, synth_generate
from hmlc.losses import br_loss, BRScope, hlup_stable
from hmlc.metrics import auc
from hmlc.model import (LossKind, TrainConfig, TrainingError, _forward, backward, forward,
                        init_model, load_checkpoint, save_checkpoint, train, train_two_stage)
from hmlc.taxonomy import chain, load_taxonomy


def _dataset(features, labels, t, splits=None):
    n = len(features)
    if splits is None:
        splits = tuple("train" if i % 5 else "val" for i in range(n))
    return Dataset(ids=tuple(f"r{i}" for i in range(n)), features=np.asarray(features, float),
                   labels=np.asarray(labels, dtype=np.int8), label_names=t.names, split=splits)


@pytest.fixture(scope="module")
def synth():
    t = load_taxonomy("synthetic7")
    return t, synth_generate(t, 800, 6, seed=0)


class TestInit:
    def test_deterministic(self):
        a, b = init_model(5, 8, 3, seed=1), init_model(5, 8, 3, seed=1)
        assert a.same_as(b)
        assert not a.same_as(init_model(5, 8, 3, seed=2))

    def test_shapes_and_zero_biases(self):
        m = init_model(5, 8, 3, seed=0)
        assert m.params["W1"].shape == (5, 8) and m.params["W2"].shape == (8, 3)
        assert not m.params["b1"].any() and not m.params["b2"].any()
        assert m.d == 5 and m.k == 3
        limit = np.sqrt(6 / 13)
        assert np.abs(m.params["W1"]).max() <= limit

    def test_linear(self):
        m = init_model(4, 0, 2, seed=0)
        assert set(m.params) == {"W", "b"}
        x = np.arange(4.0)
        np.testing.assert_allclose(forward(m, x), x @ m.params["W"])

    def test_invalid(self):
        with pytest.raises(ValueError):
            init_model(0, 3, 2, seed=0)
        with pytest.raises(ValueError):
            init_model(3, -1, 2, seed=0)


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        m = init_model(3, 4, 2, seed=0)
        for p in m.params.values():
            p[...] = 0.0
        np.testing.assert_array_equal(forward(m, np.ones((5, 3))), np.zeros((5, 2)))

    def test_batch_equals_rows(self):
        m = init_model(3, 4, 2, seed=0)
        x = np.random.default_rng(0).normal(size=(6, 3))
        batch = forward(m, x)
        for i in range(6):
            np.testing.assert_allclose(batch[i], forward(m, x[i]), rtol=1e-15)

    def test_feature_count_checked(self):
        with pytest.raises(ValueError):
            forward(init_model(3, 4, 2, seed=0), np.ones(4))

    @pytest.mark.parametrize("h", [0, 5])
    def test_backward_matches_finite_differences(self, h):
        t = load_taxonomy("synthetic7")
        rng = np.random.default_rng(1)
        m = init_model(4, h, t.k, seed=3)
        x = rng.normal(size=(8, 4))
        z = rng.integers(0, 2, size=(8, t.k))

        def value():
            return hlup_stable(t, forward(m, x), z).value

        logits, cache = _forward(m, x)
        grads = backward(m, cache, hlup_stable(t, logits, z).grad)
        eps = 1e-6
        for name, p in m.params.items():
            flat = p.reshape(-1)
            for i in range(0, flat.size, max(1, flat.size // 7)):
                orig = flat[i]
                flat[i] = orig + eps
                up = value()
                flat[i] = orig - eps
                down = value()
                flat[i] = orig
                assert (up - down) / (2 * eps) == pytest.approx(grads[name].reshape(-1)[i],
                                                                rel=1e-5, abs=1e-8)

    def test_unknown_node_gets_no_gradient(self):
        t = load_taxonomy("synthetic7")
        m = init_model(4, 5, t.k, seed=0)
        x = np.random.default_rng(0).normal(size=(6, 4))
        z = np.ones((6, t.k), dtype=int)
        leaf = t.index("B2")
        z[:, leaf] = -1
        logits, cache = _forward(m, x)
        g = backward(m, cache, hlup_stable(t, logits, z).grad)
        assert not g["W2"][:, leaf].any() and g["b2"][leaf] == 0.0

    def test_br_leaf_leaves_internal_outputs_alone(self):
        t = load_taxonomy("synthetic7")
        m = init_model(4, 5, t.k, seed=0)
        x = np.random.default_rng(0).normal(size=(6, 4))
        logits, cache = _forward(m, x)
        g = backward(m, cache, br_loss(t, logits, np.ones((6, t.k)), BRScope.LEAF_ONLY).grad)
        inner = sorted(t.non_leaves())
        assert not g["W2"][:, inner].any() and not g["b2"][inner].any()


class TestTrain:
    def test_zero_learning_rate_changes_nothing(self, synth):
        t, ds = synth
        m = init_model(ds.d, 8, t.k, seed=0)
        best, hist = train(m, ds, t, TrainConfig(loss="hlup", epochs=2, lr=0.0))
        assert best.same_as(m)
        assert len(hist) == 2
        assert hist.train_loss[0] == hist.train_loss[1]

    def test_separable_single_node(self):
        t = chain(1)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(500, 2))
        y = (x[:, 0] + x[:, 1] > 0).astype(int)[:, None]
        ds = _dataset(x, y, t)
        m = init_model(2, 0, 1, seed=0)
        best, hist = train(m, ds, t, TrainConfig(loss="hlup", epochs=30, lr=0.05, batch_size=32))
        drops = np.diff(hist.train_loss) < 0
        assert drops.mean() >= 0.9
        assert auc(forward(best, x)[:, 0], y[:, 0]) > 0.95

    def test_same_config_same_history(self, synth):
        t, ds = synth
        cfg = TrainConfig(loss="hlcp", epochs=3)
        runs = [train(init_model(ds.d, 8, t.k, seed=0), ds, t, cfg) for _ in range(2)]
        assert runs[0][1].train_loss == runs[1][1].train_loss
        assert runs[0][1].val_metric == runs[1][1].val_metric
        assert runs[0][0].same_as(runs[1][0])

    def test_input_model_untouched(self, synth):
        t, ds = synth
        m = init_model(ds.d, 8, t.k, seed=0)
        before = m.copy()
        train(m, ds, t, TrainConfig(epochs=2, lr=0.1))
        assert m.same_as(before)

    def test_history_length_and_selection(self, synth):
        t, ds = synth
        _, hist = train(init_model(ds.d, 8, t.k, seed=0), ds, t,
                        TrainConfig(loss="br_all", epochs=4, lr=0.01))
        assert len(hist) == len(hist.val_metric) == 4
        vals = [hist.initial_val_metric] + hist.val_metric
        assert hist.best_epoch == int(np.argmax(vals))

    def test_sgd(self, synth):
        t, ds = synth
        _, hist = train(init_model(ds.d, 8, t.k, seed=0), ds, t,
                        TrainConfig(loss="br_leaf", epochs=3, lr=0.1, optimizer="sgd",
                                    momentum=0.9))
        assert hist.train_loss[-1] < hist.train_loss[0] * 1.5

    def test_two_stage_with_empty_second_stage(self, synth):
        t, ds = synth
        c1 = TrainConfig(loss="hlcp", epochs=3, seed=4)
        model, (h1, h2) = train_two_stage(ds, t, c1, TrainConfig(epochs=0), hidden=8)
        stage1, _ = train(init_model(ds.d, 8, t.k, seed=4), ds, t, c1)
        assert model.same_as(stage1)
        assert len(h1) == 3 and len(h2) == 0

    def test_requires_splits(self, synth):
        t, ds = synth
        bare = Dataset(ds.ids, ds.features, ds.labels, ds.label_names, None)
        with pytest.raises(ValueError):
            train(init_model(ds.d, 4, t.k, seed=0), bare, t, TrainConfig(epochs=1))

    def test_naive_loss_blows_up_on_saturated_logits(self):
        t = chain(10)
        n = 50
        x = np.full((n, 1), -1.0)
        ds = _dataset(x, np.ones((n, 10)), t)
        m = init_model(1, 0, 10, seed=0)
        m.params["W"][...] = 100.0
        with np.errstate(all="ignore"), pytest.raises(TrainingError) as info:
            train(m, ds, t, TrainConfig(loss=LossKind.HLUP_NAIVE, epochs=1))
        assert info.value.epoch == 1 and info.value.batch == 0
        # the stable loss trains through the same start
        train(m, ds, t, TrainConfig(loss=LossKind.HLUP, epochs=1))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="rmsprop")
        with pytest.raises(ValueError):
            TrainConfig(loss="focal")


class TestCheckpoint:
    @pytest.mark.parametrize("h", [0, 6])
    def test_round_trip(self, tmp_path, h):
        m = init_model(3, h, 4, seed=2)
        path = tmp_path / "m.npz"
        save_checkpoint(m, path)
        back = load_checkpoint(path)
        assert back.same_as(m) and back.hidden == h and back.seed == 2

    def test_rejects_other_versions(self, tmp_path):
        path = tmp_path / "m.npz"
        np.savez(path, format_version=np.int64(99), hidden=np.int64(0), seed=np.int64(0))
        with pytest.raises(ValueError):
            load_checkpoint(path)
