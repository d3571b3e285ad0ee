import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgdnn import model as M
from ecgdnn import train as T
from ecgdnn.errors import InvalidSplit

# -- Adam ----------------------------------------------------------------------------------


def test_adam_first_step_by_hand():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([1.0, -4.0, 0.5])}
    T.adam_step(params, grads, T.AdamState(), lr=0.01)
    # m_hat = g and v_hat = g^2 on the first step, so each coordinate moves by lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 3.0]) - 0.01 * grads["w"] / (np.abs(grads["w"]) + 1e-8)
    np.testing.assert_allclose(params["w"], expected, rtol=0, atol=1e-15)
    assert params["w"][0] == pytest.approx(1 - 0.01 / (1 + 1e-8), abs=1e-15)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    p = {"w": rng.normal(size=4)}
    ref = p["w"].copy()
    m = v = np.zeros(4)
    state = T.AdamState()
    for t in range(1, 6):
        g = rng.normal(size=4)
        T.adam_step(p, {"w": g}, state, 1e-3)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"], ref, rtol=1e-12)
    assert state.t == 5


def test_adam_minimises_quadratic():
    p = {"x": np.array([3.0, -5.0])}
    state = T.AdamState()
    for _ in range(3000):
        T.adam_step(p, {"x": 2 * p["x"]}, state, 0.05)
    assert np.abs(p["x"]).max() < 1e-2


def test_adam_zero_grad_is_noop():
    p = {"w": np.array([0.3, 0.7])}
    T.adam_step(p, {"w": np.zeros(2)}, T.AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [0.3, 0.7])


# -- plateau schedule ------------------------------------------------------------------------

def lr_trace(losses, lr0=1e-3, patience=7):
    lrs, lr = [], lr0
    for e in range(len(losses)):
        lrs.append(lr)
        lr = T.lr_schedule(losses[:e + 1], lr, patience)
    return lrs


def test_plateau_scripted_sequence():
    losses = [1.0, 0.9, 0.8, 0.7, 0.6] + [0.6] * 7 + [0.5] + [0.5] * 7 + [0.5] * 3
    lrs = lr_trace(losses)
    assert lrs[:12] == [1e-3] * 12
    assert lrs[12:20] == [1e-3 * 0.1] * 8
    assert lrs[20:] == [1e-3 * 0.1 * 0.1] * 3


def test_plateau_counter_resets_after_decay():
    lrs = lr_trace([1.0] + [2.0] * 15)
    assert lrs[7] == 1e-3 and lrs[8] == pytest.approx(1e-4)
    # the second decay needs 7 more flat epochs
    assert lrs[14] == pytest.approx(1e-4) and lrs[15] == pytest.approx(1e-5)
    assert T.lr_schedule([], 0.1) == 0.1


# -- splits ----------------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=200), st.integers(0, 5),
       st.sampled_from(T.SPLIT_MODES))
def test_split_partitions_indices(pids, seed, mode):
    parts = T.split_dataset(pids, mode, (0.8, 0.1, 0.1), seed=seed)
    allidx = np.concatenate(parts)
    assert sorted(allidx.tolist()) == list(range(len(pids)))
    if mode == "by_patient":
        owners = [set(np.asarray(pids)[p].tolist()) for p in parts]
        assert not (owners[0] & owners[1] or owners[0] & owners[2] or owners[1] & owners[2])


def test_split_exact_sizes_with_single_exam_patients():
    parts = T.split_dataset([f"p{i}" for i in range(2400)], "by_patient", (2000 / 2400, 200 / 2400, 200 / 2400))
    assert [len(p) for p in parts] == [2000, 200, 200]


def test_split_deterministic_and_seeded():
    pids = np.arange(100) // 2
    a = T.split_dataset(pids, seed=1)
    b = T.split_dataset(pids, seed=1)
    c = T.split_dataset(pids, seed=2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_split_chronological():
    order = [5, 1, 4, 2, 3, 0, 9, 8, 7, 6]
    tr, va, te = T.split_dataset(range(10), "chronological", (0.6, 0.2, 0.2), order=order)
    assert sorted(order[i] for i in tr) == [0, 1, 2, 3, 4, 5]
    assert sorted(order[i] for i in te) == [8, 9]


@pytest.mark.parametrize("kw", [dict(mode="alphabetical"), dict(fractions=(0.5, 0.6)),
                                dict(fractions=(1.2, -0.2))])
def test_split_errors(kw):
    with pytest.raises(InvalidSplit):
        T.split_dataset(range(10), **kw)


# -- fit ---------------------------------------------------------------------------------------

TINY = M.ArchitectureConfig(n_residual_blocks=2, kernel_length=3, initial_filters=4, filter_growth=4,
                            input_length=64, n_leads=2, dropout_rate=0.2)


def tiny_data(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.random((n, 6)) < 0.5
    x = rng.normal(size=(n, 2, 64)).astype(np.float32)
    x[:, 0, :6] += 2.0 * y  # linearly recoverable signal
    return T.Split(x, y, [f"e{seed}-{i}" for i in range(n)])


def test_fit_deterministic_and_log(tmp_path):
    cfg = T.TrainConfig(max_epochs=3, batch_size=8, rng_seed=4)
    runs = []
    for _ in range(2):
        model = M.build(TINY, rng_seed=1)
        model, log = T.fit(model, tiny_data(40, 0), tiny_data(16, 1), cfg)
        runs.append((model, log))
    (a, la), (b, lb) = runs
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert la.val_losses == lb.val_losses and len(la.epochs) == 3
    assert a.meta["epoch"] == la.best_epoch
    assert a.thresholds.shape == (6,)
    la.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr,seconds" and len(lines) == 4


def test_fit_learns_and_restores_best():
    model, log = T.fit(M.build(TINY, rng_seed=2), tiny_data(64, 2), tiny_data(32, 3),
                       T.TrainConfig(max_epochs=6, batch_size=16))
    assert log.epochs[-1]["train_loss"] < log.epochs[0]["train_loss"]
    loss, _ = T.evaluate_loss(model, tiny_data(32, 3))
    assert loss == pytest.approx(min(log.val_losses), rel=1e-5)


def test_fit_callback_stops_early():
    seen = []
    _, log = T.fit(M.build(TINY), tiny_data(20, 0), tiny_data(8, 1), T.TrainConfig(max_epochs=5),
                   on_epoch=lambda e, m: seen.append(e["epoch"]) or e["epoch"] == 1)
    assert seen == [0, 1] and len(log.epochs) == 2


def test_fit_rejects_overlap_and_empty():
    d = tiny_data(10, 0)
    with pytest.raises(InvalidSplit):
        T.fit(M.build(TINY), d, d, T.TrainConfig(max_epochs=1))
    T.fit(M.build(TINY), d, d, T.TrainConfig(max_epochs=1, allow_overlap=True))
    empty = T.Split(np.zeros((0, 2, 64), np.float32), np.zeros((0, 6), bool), [])
    with pytest.raises(InvalidSplit):
        T.fit(M.build(TINY), d, empty, T.TrainConfig(max_epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        T.TrainConfig(lr0=0).validate()
    with pytest.raises(ValueError):
        T.TrainConfig(lr_decay_factor=1.0).validate()
    assert math.isclose(T.TrainConfig().lr0, 1e-3)
