from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heog.cnn.data import WindowDataset, split
from heog.cnn.evaluate import EvalResult, confusion_counts, evaluate
from heog.cnn.model import ModelArch, forward, init_weights, loss_and_grads
from heog.cnn.train import TrainConfig, accuracy, mean_loss, train
from heog.errors import EmptyClass, ShapeMismatch
from heog.signal import ChannelSubset, LabelSet, MovementClass

from oracles import GRAD_ARCH, STRIDED_ARCH, finite_difference_errors, naive_forward, random_arch, random_store

TOY = ModelArch(
    n_points=10, n_channels=2, n_classes=3, conv_filters=(4, 4), conv_strides=(2, 1), tconv_channels=(4, 3)
)

# --- architecture ------------------------------------------------------------


def test_default_parameter_count_by_hand():
    # lengths 100 -> 50 -> 25 -> 13 -> 7 (stride 2, same), then 13 -> 19 (valid tconv)
    conv = (7 * 5 * 64 + 64) + 3 * (7 * 64 * 64 + 64)
    tconv = (7 * 64 * 64 + 64) + (7 * 7 * 64 + 7)
    dense = 19 * 7 * 10 + 10
    arch = ModelArch()
    assert arch.parameter_count == conv + tconv + dense == 121_731
    assert init_weights(arch).parameter_count == arch.parameter_count
    assert [s.out_len for s in arch.layers[:6]] == [50, 25, 13, 7, 13, 19]
    assert ModelArch(n_classes=6).parameter_count == 121_731 - 19 * 7 * 4 - 4


def test_arch_json_round_trip(tmp_path):
    arch = ModelArch(n_points=25, n_channels=3, n_classes=6)
    arch.save(tmp_path / "a.json")
    assert ModelArch.load(tmp_path / "a.json") == arch


def test_too_short_window_is_rejected():
    with pytest.raises(ValueError):
        ModelArch(n_points=3, conv_padding="valid")


def test_store_shape_check():
    store = init_weights(TOY)
    store.layers[0].weights = store.layers[0].weights[:, :1]
    with pytest.raises(ShapeMismatch):
        store.check(TOY)


# --- forward -----------------------------------------------------------------


def test_forward_matches_direct_loops_on_toy():
    rng = np.random.default_rng(0)
    store = random_store(TOY, rng)
    x = rng.normal(size=(10, 2))
    np.testing.assert_allclose(forward(TOY, store, x)[0], naive_forward(TOY, store, x), atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_forward_matches_direct_loops_random_models(seed):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng)
    store = random_store(arch, rng)
    x = rng.normal(size=(arch.n_points, arch.n_channels))
    np.testing.assert_allclose(forward(arch, store, x)[0], naive_forward(arch, store, x), atol=1e-6)


def test_zero_weights_give_uniform_output():
    arch = ModelArch()
    store = init_weights(arch)
    for r in store.layers:
        r.weights[:] = 0
    p = forward(arch, store, np.random.default_rng(0).normal(size=(3, 100, 5)))
    np.testing.assert_allclose(p, 0.1, atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_softmax_normalized_and_shift_invariant(seed, c):
    rng = np.random.default_rng(seed)
    store = random_store(TOY, rng, 1.0)
    x = rng.normal(size=(4, 10, 2)) * 3
    p = forward(TOY, store, x)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    shifted = store.copy()
    shifted.layers[-1].bias += c
    np.testing.assert_allclose(forward(TOY, shifted, x), p, atol=1e-9)
    assert np.array_equal(forward(TOY, shifted, x).argmax(1), p.argmax(1))


def test_forward_is_deterministic_and_checks_shape():
    store = init_weights(TOY, 3)
    x = np.random.default_rng(1).normal(size=(5, 10, 2)).astype(np.float32)
    assert np.array_equal(forward(TOY, store, x), forward(TOY, store, x))
    with pytest.raises(ShapeMismatch):
        forward(TOY, store, np.zeros((10, 3)))


# --- backward ----------------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_gradients_match_finite_differences(seed):
    worst, _ = finite_difference_errors(GRAD_ARCH, seed)
    assert all(v < 1e-4 for v in worst.values()), worst


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences_strided_tconv(seed):
    worst, _ = finite_difference_errors(STRIDED_ARCH, seed)
    assert all(v < 1e-4 for v in worst.values()), worst


def test_zero_input_gives_zero_conv_weight_gradients():
    rng = np.random.default_rng(2)
    x = np.zeros((3, GRAD_ARCH.n_points, GRAD_ARCH.n_channels))
    y = np.array([0, 1, 2])
    # default init: zero biases keep every hidden activation at zero
    _, g = loss_and_grads(GRAD_ARCH, init_weights(GRAD_ARCH, 0, np.float64), x, y)
    for r in g.layers[:-1]:
        assert not r.weights.any()
    # with nonzero biases the first layer still sees no input
    _, g = loss_and_grads(GRAD_ARCH, random_store(GRAD_ARCH, rng), x, y)
    assert not g.layers[0].weights.any()


def test_duplicated_sample_doubles_gradient_under_sum():
    rng = np.random.default_rng(3)
    store = random_store(GRAD_ARCH, rng)
    x = rng.normal(size=(1, GRAD_ARCH.n_points, GRAD_ARCH.n_channels))
    y = np.array([1])
    l1, g1 = loss_and_grads(GRAD_ARCH, store, x, y, reduction="sum")
    l2, g2 = loss_and_grads(GRAD_ARCH, store, np.concatenate([x, x]), np.array([1, 1]), reduction="sum")
    assert l2 == pytest.approx(2 * l1, rel=1e-14)
    # identical up to float summation order inside the matrix products
    np.testing.assert_allclose(g2.flat(), 2 * g1.flat(), rtol=1e-12, atol=1e-15)


def test_empty_batch_is_rejected():
    with pytest.raises(ShapeMismatch):
        loss_and_grads(TOY, init_weights(TOY), np.zeros((0, 10, 2)), np.zeros(0, int))


# --- training ----------------------------------------------------------------

TWO = SimpleNamespace(size=2, classes=(MovementClass.LEFT, MovementClass.RIGHT))


def _separable(n_per=40, seed=0):
    """Class 0 has a positive bump on channel 0, class 1 a negative one."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 0.3, size=(2 * n_per, 24, 2))
    y = np.repeat([0, 1], n_per)
    bump = np.exp(-0.5 * ((np.arange(24) - 12) / 3.0) ** 2)
    X[:, :, 0] += np.where(y == 0, 1.0, -1.0)[:, None] * bump
    groups = np.arange(2 * n_per) % 8
    return WindowDataset(X.astype(np.float32), y, groups, np.array([f"a{g}" for g in groups]), TWO, ChannelSubset.ALL)


def _arch2():
    return ModelArch(
        n_points=24, n_channels=2, n_classes=2, conv_filters=(4, 4), conv_strides=(2, 2), tconv_channels=(4, 2)
    )


def test_separable_toy_reaches_full_train_accuracy():
    ds = _separable()
    arch = _arch2()
    store, tlog = train(arch, ds, TrainConfig(epochs=50, batch_size=16, val_fraction=0.0, lr=3e-3))
    assert accuracy(arch, store, ds) == 1.0
    assert len(tlog.epochs) == 50


def test_first_epoch_lowers_loss():
    ds = _separable(seed=1)
    arch = _arch2()
    store, tlog = train(arch, ds, TrainConfig(epochs=1, batch_size=16, val_fraction=0.0))
    assert mean_loss(arch, store, ds) < tlog.initial_loss


def test_training_is_bitwise_deterministic():
    ds = _separable(seed=2)
    arch = _arch2()
    cfg = TrainConfig(epochs=3, batch_size=16, val_fraction=0.25)
    a, _ = train(arch, ds, cfg)
    b, _ = train(arch, ds, cfg)
    assert a.flat().tobytes() == b.flat().tobytes()


def test_sgd_momentum_also_learns():
    ds = _separable(seed=3)
    arch = _arch2()
    store, tlog = train(arch, ds, TrainConfig(optimizer="sgd", lr=0.02, epochs=10, batch_size=16, val_fraction=0.0))
    assert mean_loss(arch, store, ds) < tlog.initial_loss


def test_missing_class_raises():
    ds = _separable()
    with pytest.raises(EmptyClass):
        train(_arch2(), ds.take(ds.y == 0), TrainConfig(epochs=1))


def test_train_log_csv(tmp_path):
    ds = _separable()
    _, tlog = train(_arch2(), ds, TrainConfig(epochs=2, val_fraction=0.0))
    tlog.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,train_acc,val_acc" and len(lines) == 4


# --- evaluation and splits ---------------------------------------------------


def test_perfect_predictor_gives_identity_confusion():
    y = np.array([0, 1, 2, 2, 5, 9, 9])
    res = EvalResult(1.0, confusion_counts(y, y, 10), LabelSet.FULL10)
    present = np.unique(y)
    np.testing.assert_array_equal(res.confusion[np.ix_(present, present)], np.eye(len(present)))
    assert res.confusion.sum() == len(present)


def test_evaluate_accuracy_is_trace_over_total():
    ds = _separable()
    arch = _arch2()
    store = init_weights(arch, 5)
    ds.label_set = TWO
    res = evaluate(arch, store, ds)
    assert res.accuracy == pytest.approx(np.trace(res.counts) / res.counts.sum())
    assert res.counts.sum() == len(ds)
    wrong = WindowDataset(ds.X[:, :20], ds.y, ds.subject, ds.acquisition, TWO, ds.subset)
    with pytest.raises(ShapeMismatch):
        evaluate(arch, store, wrong)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["subject", "acquisition"]))
def test_split_never_shares_groups(seed, mode):
    ds = _separable(seed=seed % 7)
    tr, te = split(ds, mode, 0.25, seed)
    key = "subject" if mode == "subject" else "acquisition"
    assert not set(getattr(tr, key).tolist()) & set(getattr(te, key).tolist())
    assert len(tr) + len(te) == len(ds)
