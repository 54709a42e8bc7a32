import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qlstmkit.data import DatasetTable, make_separable_dataset
from qlstmkit.errors import ConfigError, NumericalError, UsageError
from qlstmkit.model import QlstmConfig
from qlstmkit.noise import NoiseConfig
from qlstmkit.training import (AdamState, RunReport, TrainConfig, accuracy, adam_step, bce_batch,
                               bce_loss, read_report_csv, split_dataset, train_model)

import _oracles as orc

TOY = QlstmConfig(n_qubits=2, seq_len=4, chunk_dim=16, fp_bits=64)


# -- config -------------------------------------------------------------------

@pytest.mark.parametrize("field,value", [("lr", 0), ("lr", -0.1), ("lr", float("nan")),
                                         ("val_fraction", 0.0), ("val_fraction", 1.0),
                                         ("batch_size", 0), ("split_seeds", ())])
def test_train_config_validation(field, value):
    with pytest.raises(ConfigError) as info:
        TrainConfig(**{field: value})
    assert field.split("_")[0] in str(info.value)


def test_noise_requires_quantum_model():
    with pytest.raises(ConfigError):
        TrainConfig(model="lstm", noise={"bit_flip_p": 0.01})


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.batch_size, c.epochs, len(c.split_seeds), c.val_fraction) == (256, 100, 3, 0.2)


# -- loss ---------------------------------------------------------------------

def test_bce_zero_logit_positive():
    loss, grad = bce_loss([0.0], [1.0])
    assert loss == pytest.approx(0.693147, abs=1e-6) and grad[0] == pytest.approx(-0.5)


def test_bce_large_logit():
    loss, _ = bce_loss([20.0], [1.0])
    assert loss == pytest.approx(2.061153622438558e-09, rel=1e-6)


def test_bce_three_tasks():
    loss, grad = bce_loss(np.zeros(3), [1, 0, 1])
    assert loss == pytest.approx(math.log(2))
    assert np.allclose(grad, np.array([-0.5, 0.5, -0.5]) / 3)


def test_bce_all_masked():
    loss, grad = bce_loss([3.0, -1.0], [1, 0], mask=[False, False])
    assert loss == 0.0 and not np.any(grad)


def test_bce_mask_ignores_entry():
    full, _ = bce_loss([0.3], [1])
    masked, grad = bce_loss([0.3, 99.0], [1, 0], mask=[True, False])
    assert masked == pytest.approx(full) and grad[1] == 0


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.sampled_from([0.0, 1.0]))
def test_property_bce_gradient_matches_fd(z, y):
    _, grad = bce_loss([z], [y])
    fd = orc.central_diff(lambda v: bce_loss(v, [y])[0], np.array([z]), 1e-5)
    assert grad[0] == pytest.approx(fd[0], rel=1e-6, abs=1e-9)


def test_bce_batch_averages_counted_samples():
    z = np.array([[0.0], [2.0], [5.0]])
    y = np.array([[1.0], [0.0], [1.0]])
    mask = np.array([[True], [True], [False]])
    loss, grad, counted = bce_batch(z, y, mask)
    expected = (bce_loss([0.0], [1.0])[0] + bce_loss([2.0], [0.0])[0]) / 2
    assert counted == 2 and loss == pytest.approx(expected)
    assert grad[2, 0] == 0


# -- accuracy -----------------------------------------------------------------

def test_accuracy_perfect():
    y = np.array([[1.0], [0.0], [1.0]])
    assert accuracy(np.where(y > 0, 20.0, -20.0), y) == 1.0


def test_accuracy_tie_predicts_positive():
    y = np.array([1, 0, 1, 0], dtype=float)
    assert accuracy(np.zeros(4), y) == 0.5


def test_accuracy_inverted():
    y = np.array([[1.0], [0.0]])
    assert accuracy(np.where(y > 0, -20.0, 20.0), y) == 0.0


def test_accuracy_no_valid_entries():
    with pytest.raises(UsageError):
        accuracy(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 1), dtype=bool))


def test_accuracy_pools_valid_entries():
    z = np.array([[5.0, -5.0], [5.0, 0.0]])
    y = np.array([[1.0, 1.0], [0.0, 0.0]])
    mask = np.array([[True, True], [True, False]])
    assert accuracy(z, y, mask) == pytest.approx(1 / 3)
    # task 0: 1 of 2 right; task 1: 0 of 1 right
    assert accuracy(z, y, mask, average="tasks") == pytest.approx(0.25)


def test_accuracy_task_average_skips_empty_tasks():
    z = np.array([[5.0, 5.0], [-5.0, 5.0]])
    y = np.array([[1.0, 0.0], [0.0, 0.0]])
    mask = np.array([[True, False], [True, False]])
    assert accuracy(z, y, mask, average="tasks") == 1.0
    with pytest.raises(UsageError):
        accuracy(z, y, mask, average="macro")


# -- adam ---------------------------------------------------------------------

def test_adam_zero_gradient_no_move():
    p = {"w": np.array([0.3, -0.2])}
    state = AdamState.zeros_like(p)
    _, new = adam_step(state, p, {"w": np.zeros(2)}, 0.1)
    assert np.array_equal(new["w"], p["w"])


def test_adam_first_step_value():
    p = {"w": np.array([1.0])}
    state = AdamState.zeros_like(p)
    _, new = adam_step(state, p, {"w": np.array([0.1])}, 0.01)
    assert new["w"][0] - 1.0 == pytest.approx(-0.01 * 0.1 / (0.1 + 1e-8), rel=1e-12)
    assert new["w"][0] - 1.0 == pytest.approx(-0.00999999, abs=1e-8)


def test_adam_counter_and_second_step():
    p = {"w": np.array([1.0])}
    state = AdamState.zeros_like(p)
    state, p1 = adam_step(state, p, {"w": np.array([0.1])}, 0.01)
    state, p2 = adam_step(state, p1, {"w": np.array([0.1])}, 0.01)
    assert state.t == 2 and abs(p2["w"][0] - p1["w"][0]) >= 0
    assert np.all(state.v["w"] >= 0)


def test_adam_rejects_nonfinite_gradient():
    p = {"w": np.array([1.0])}
    state = AdamState.zeros_like(p)
    with pytest.raises(NumericalError):
        adam_step(state, p, {"w": np.array([np.nan])}, 0.01)
    assert state.t == 0


def test_adam_permutation_invariance():
    rng = np.random.default_rng(0)
    p = {"w": rng.normal(size=6)}
    grads = [rng.normal(size=6) for _ in range(4)]
    perm = rng.permutation(6)
    inv = np.argsort(perm)
    s1, s2 = AdamState.zeros_like(p), AdamState.zeros_like(p)
    a, b = dict(p), {"w": p["w"][perm]}
    for g in grads:
        s1, a = adam_step(s1, a, {"w": g}, 0.05)
        s2, b = adam_step(s2, b, {"w": g[perm]}, 0.05)
    assert np.array_equal(a["w"], b["w"][inv])


# -- splits -------------------------------------------------------------------

def test_split_ten_samples():
    tr, va = split_dataset(10, 0, 0.2)
    assert len(tr) == 8 and len(va) == 2
    assert set(tr).isdisjoint(va) and set(tr) | set(va) == set(range(10))


def test_split_same_seed_same_result():
    a = split_dataset(50, 3, 0.2)
    b = split_dataset(50, 3, 0.2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_split_seeds_differ():
    assert not np.array_equal(split_dataset(100, 1, 0.2)[1], split_dataset(100, 2, 0.2)[1])


def test_split_too_small():
    with pytest.raises(ConfigError):
        split_dataset(1, 0, 0.2)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 500), st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_property_split_disjoint_exhaustive(n, seed, vf):
    tr, va = split_dataset(n, seed, vf)
    assert set(tr).isdisjoint(va)
    assert sorted(np.concatenate([tr, va])) == list(range(n))
    assert len(va) == min(max(round(n * vf), 1), n - 1)
    again = split_dataset(n, seed, vf)
    assert np.array_equal(again[0], tr) and np.array_equal(again[1], va)


# -- training loop ------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_data():
    return make_separable_dataset(n_samples=60, n_bits=64, seed=1)


def test_lstm_learns_separable_set():
    data = make_separable_dataset(n_samples=200, n_bits=256, seed=0)
    cfg = QlstmConfig(n_qubits=2, seq_len=4, chunk_dim=64, fp_bits=256)
    report = train_model(TrainConfig(model="lstm", batch_size=32, epochs=30, lr=0.05, split_seeds=(0,)),
                         cfg, data)
    assert report.records[-1].train_accuracy >= 0.95


def test_task_averaged_final_accuracy_reproduces_last_pass(toy_data):
    # two identical label columns: task and entry averages must agree, so the
    # regenerated noisy validation pass has to match the recorded one exactly
    two = DatasetTable(toy_data.ids, toy_data.fingerprints, np.repeat(toy_data.labels, 2, axis=1),
                       np.ones((len(toy_data), 2), dtype=bool), ["a", "b"])
    cfg = QlstmConfig(n_qubits=2, seq_len=4, chunk_dim=16, fp_bits=64, n_tasks=2)
    tc = TrainConfig(model="qlstm", batch_size=16, epochs=2, lr=0.05, split_seeds=(0, 1),
                     noise=NoiseConfig(0.1, trajectories=4, eval_trajectories=8))
    report = train_model(tc, cfg, two, seed=1)
    assert report.final_val_accuracy_by_task == report.final_val_accuracy
    assert report.summary()["mean_val_accuracy_by_task"] == report.mean_val_accuracy


@pytest.mark.parametrize("kind", ["lstm", "qlstm"])
def test_training_deterministic(toy_data, kind):
    tc = TrainConfig(model=kind, batch_size=16, epochs=2, lr=0.05, split_seeds=(0, 1))
    a = train_model(tc, TOY, toy_data, seed=3)
    b = train_model(tc, TOY, toy_data, seed=3)
    strip = lambda r: [(x.seed, x.epoch, x.train_loss, x.train_accuracy, x.val_accuracy) for x in r.records]
    assert strip(a) == strip(b)
    assert a.final_val_accuracy == b.final_val_accuracy


def test_noisy_training_deterministic(toy_data):
    tc = TrainConfig(model="qlstm", batch_size=16, epochs=1, lr=0.05, split_seeds=(0,),
                     noise=NoiseConfig(0.05, trajectories=4, eval_trajectories=8, rng_seed=2))
    a = train_model(tc, TOY, toy_data)
    b = train_model(tc, TOY, toy_data)
    assert a.records[0].train_loss == b.records[0].train_loss
    assert all(np.array_equal(a.final_params[0][k], b.final_params[0][k]) for k in a.final_params[0])


def test_global_seed_changes_noise_draws(toy_data):
    tc = TrainConfig(model="qlstm", batch_size=16, epochs=1, lr=0.05, split_seeds=(0,),
                     noise=NoiseConfig(0.2, trajectories=4, eval_trajectories=8))
    a = train_model(tc, TOY, toy_data, seed=0)
    b = train_model(tc, TOY, toy_data, seed=1)
    assert a.records[0].train_loss != b.records[0].train_loss


def test_zero_epochs_reports_untrained_accuracy(toy_data):
    tc = TrainConfig(model="lstm", epochs=0, split_seeds=(0, 1))
    report = train_model(tc, TOY, toy_data)
    assert report.records == []
    assert set(report.final_val_accuracy) == {0, 1}
    assert all(0 <= v <= 1 for v in report.final_val_accuracy.values())


def test_final_partial_batch_is_used(toy_data, monkeypatch):
    import qlstmkit.training as tr
    sizes = []
    real = tr.sequence_forward

    def spy(kind, params, cfg, X, *a, **k):
        sizes.append(len(X))
        return real(kind, params, cfg, X, *a, **k)

    monkeypatch.setattr(tr, "sequence_forward", spy)
    monkeypatch.setattr(tr, "predict_logits", lambda *a, **k: np.zeros((len(a[3]), 1)))
    train_model(TrainConfig(model="lstm", batch_size=20, epochs=1, split_seeds=(0,)), TOY, toy_data)
    # 60 rows, 12 held out: 48 training rows -> 20 + 20 + 8
    assert sizes == [20, 20, 8]


def test_nonfinite_loss_names_batch(toy_data, monkeypatch):
    import qlstmkit.training as tr
    monkeypatch.setattr(tr, "bce_batch", lambda *a: (float("nan"), np.zeros((len(a[0]), 1)), 1))
    with pytest.raises(NumericalError, match="batch 0"):
        train_model(TrainConfig(model="lstm", batch_size=16, epochs=1, split_seeds=(0,)), TOY, toy_data)


def test_report_csv_roundtrip(tmp_path, toy_data):
    report = train_model(TrainConfig(model="lstm", batch_size=16, epochs=2, split_seeds=(0,)), TOY, toy_data)
    path = tmp_path / "r.csv"
    report.write_csv(path)
    rows = read_report_csv(path)
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert float(rows[-1]["val_accuracy"]) == report.records[-1].val_accuracy
    report.write_csv(path, include_timing=False)
    assert "epoch_seconds" not in read_report_csv(path)[0]
    summary = report.summary()
    assert summary["mean_val_accuracy"] == pytest.approx(report.mean_val_accuracy)


def test_report_bounds(toy_data):
    report = train_model(TrainConfig(model="lstm", batch_size=16, epochs=3, split_seeds=(0, 1)), TOY, toy_data)
    for r in report.records:
        assert r.train_loss >= 0 and 0 <= r.val_accuracy <= 1 and 0 <= r.train_accuracy <= 1
    assert isinstance(report, RunReport)
