import math

import numpy as np
import pytest

import graphcf as g
from graphcf.data import dataset_from_records, synthetic_ratings
from graphcf.gradcheck import random_instance, relu_margin
from graphcf.model import ModelKind, init_params, load_params
from graphcf.optim import Adam, make_optimizer
from graphcf.sampling import FeedbackTables
from graphcf.trainer import (
    Batch,
    LossReport,
    TrainConfig,
    TrainingDiverged,
    finite_diff_check,
    gradients,
    new_params,
    objective,
    train,
)
from graphcf.weighting import ConfigError


def test_objective_trivial_cases():
    p = init_params("MF", 2, 2, 3, init_scale=0.0)
    cfg = TrainConfig("MF", K=3, l2=0.0, l2_weight=0.0)
    assert objective(Batch(np.array([0, 1]), np.array([1, 0]), np.array([0.5, 0.5])), p, cfg) == 0.0
    assert objective(Batch(np.array([0]), np.array([0]), np.array([0.8])), p, cfg) == pytest.approx((0.5 - 0.8) ** 2)


def test_objective_term_by_term_oracle(rng):
    p = init_params("W_GCF", 3, 4, 2, k=2, seed=1, init_scale=0.5)
    tables = FeedbackTables(
        g.FeedbackTable("user", 1, np.array([[0, 1], [2, -1], [3, 3]])),
        g.FeedbackTable("item", 1, np.array([[0, 1], [1, 2], [-1, -1], [0, 0]])),
    )
    cfg = TrainConfig("W_GCF", K=2, k=2, l2=0.1, l2_weight=0.03)
    users, items, r = np.array([0, 2, 1]), np.array([1, 3, 0]), np.array([0.25, 1.0, 0.0])
    B = p.blocks
    total = 0.0
    for u, i, t in zip(users, items, r):
        urow = [j if j >= 0 else 4 for j in tables.user.rows[u]]
        irow = [v if v >= 0 else 3 for v in tables.item.rows[i]]
        pu = B["P"][u] + sum((B["alpha"][u] @ B["beta"][j]) * B["Y"][j] for j in urow)
        qi = B["Q"][i] + sum((B["alpha"][v] @ B["beta"][i]) * B["X"][v] for v in irow)
        pred = 1 / (1 + math.exp(-(pu @ qi + B["bu"][u] + B["bi"][i] + B["b"][0])))
        total += (pred - t) ** 2
        total += 0.1 * (B["P"][u] @ B["P"][u] + B["Q"][i] @ B["Q"][i])
        total += 0.1 * sum(B["Y"][j] @ B["Y"][j] for j in urow) + 0.1 * sum(B["X"][v] @ B["X"][v] for v in irow)
        total += 0.03 * (B["alpha"][u] @ B["alpha"][u] + sum(B["beta"][j] @ B["beta"][j] for j in urow))
        total += 0.03 * (sum(B["alpha"][v] @ B["alpha"][v] for v in irow) + B["beta"][i] @ B["beta"][i])
    assert objective(Batch(users, items, r), p, cfg, tables) == pytest.approx(total, rel=1e-12)


def test_zero_residual_gives_zero_gradients():
    p = init_params("A_GCF", 3, 3, 2, k=2, init_scale=0.0)
    inst_tables = FeedbackTables(g.FeedbackTable("user", 1, np.zeros((3, 2))), g.FeedbackTable("item", 1, np.zeros((3, 2))))
    cfg = TrainConfig("A_GCF", K=2, k=2, l2=0.0, l2_weight=0.0)
    grads = gradients(Batch(np.array([0, 1]), np.array([2, 0]), np.array([0.5, 0.5])), p, cfg, inst_tables)
    assert all(not v.any() for v in grads.values())


def test_mf_bias_gradient_closed_form():
    p = init_params("MF", 1, 1, 2, init_scale=0.0)
    p.blocks["P"][0] = [0.3, -0.1]
    p.blocks["Q"][0] = [0.2, 0.4]
    p.blocks["b"][0] = 0.1
    cfg = TrainConfig("MF", K=2, l2=0.0)
    r = 0.9
    z = 0.3 * 0.2 - 0.1 * 0.4 + 0.1
    y = 1 / (1 + math.exp(-z))
    grads = gradients(Batch(np.array([0]), np.array([0]), np.array([r])), p, cfg)
    assert grads["b"][0] == pytest.approx(2 * (y - r) * y * (1 - y), rel=1e-12)
    assert grads["bu"][0] == grads["bi"][0] == grads["b"][0]
    assert grads["bu"][1] == 0.0 and not grads["P"][1].any()


def test_finite_difference_check_zero_batch():
    p = init_params("MF", 2, 2, 2, init_scale=0.0)
    cfg = TrainConfig("MF", K=2, l2=0.0)
    assert finite_diff_check(p, Batch(np.array([0]), np.array([0]), np.array([0.5])), cfg) < 1e-6


@pytest.mark.parametrize("kind", [k.value for k in ModelKind])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(7)
    for _ in range(2):
        inst = random_instance(kind, rng)
        err, per_block = finite_diff_check(inst.params, inst.batch, inst.cfg, inst.tables, per_block=True)
        assert err < 1e-4, per_block


def test_instances_keep_clear_of_relu_kinks():
    rng = np.random.default_rng(0)
    inst = random_instance("A_GCF2", rng)
    assert relu_margin(inst.params, inst.batch, inst.tables) >= 1e-3
    assert np.isinf(relu_margin(random_instance("GCF", rng).params, inst.batch, inst.tables))


def test_untouched_rows_get_zero_gradient():
    rng = np.random.default_rng(3)
    inst = random_instance("GCF", rng)
    grads = gradients(inst.batch, inst.params, inst.cfg, inst.tables)
    unused = sorted(set(range(12)) - set(inst.batch.users.tolist()))
    assert unused and not grads["P"][unused].any() and not grads["bu"][unused].any()


def test_objective_permutation_invariant_and_gradients_decompose():
    rng = np.random.default_rng(5)
    inst = random_instance("A_GCF", rng)
    b = inst.batch
    perm = rng.permutation(len(b.users))
    shuffled = Batch(b.users[perm], b.items[perm], b.targets[perm])
    f = objective(b, inst.params, inst.cfg, inst.tables)
    assert objective(shuffled, inst.params, inst.cfg, inst.tables) == pytest.approx(f, rel=1e-13)
    full = gradients(b, inst.params, inst.cfg, inst.tables)
    parts = [gradients(Batch(b.users[[n]], b.items[[n]], b.targets[[n]]), inst.params, inst.cfg, inst.tables)
             for n in range(len(b.users))]
    for name in full:
        assert np.allclose(full[name], sum(p[name] for p in parts), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("kind", ["MF", "GCF", "A_GCF2"])
def test_single_record_descent(kind):
    rng = np.random.default_rng(11)
    inst = random_instance(kind, rng, n_records=1, l2=0.0, l2_weight=0.0)
    before = objective(inst.batch, inst.params, inst.cfg, inst.tables)
    p = inst.params.copy()
    from graphcf.trainer import forward_backward

    _, grads, _ = forward_backward(inst.batch, p, inst.cfg, inst.tables)
    grads.apply(p, 1e-4)
    assert objective(inst.batch, p, inst.cfg, inst.tables) < before


def test_kind_mismatch_rejected():
    p = init_params("MF", 2, 2, 2)
    with pytest.raises(ConfigError):
        objective(Batch(np.array([0]), np.array([0]), np.array([0.5])), p, TrainConfig("GCF", K=2))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig("MF", learning_rate=-1)
    with pytest.raises(ConfigError):
        TrainConfig("MF", epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig("MF", temperature=0)
    with pytest.raises(ConfigError):
        TrainConfig("MF", optimizer="rmsprop")
    with pytest.raises(ConfigError):
        TrainConfig("XX")
    assert TrainConfig("GCF", K=8).Kp == 8


def test_zero_epochs_returns_initialization():
    ds = synthetic_ratings(20, 20, 150, seed=0)
    cfg = TrainConfig("GCF", K=4, epochs=0)
    tables = _tables(ds, 4)
    params, report = train(ds, tables, cfg)
    assert params.equal(new_params(ds, cfg)) and len(report) == 0


def _tables(ds, k):
    from graphcf.sampling import SamplePolicy, sample_random, step_two_tables

    gr = g.build_graph(ds)
    pol = SamplePolicy("random", 0, k)
    u, i = sample_random(gr, "user", pol), sample_random(gr, "item", pol)
    u2, i2 = step_two_tables(gr, u, i, k, 0)
    return FeedbackTables(u, i, u2, i2, gr.user_degree, gr.item_degree)


def test_mf_training_reduces_train_rmse():
    ds = synthetic_ratings(50, 60, 1000, seed=1, noise=0.2)
    cfg = TrainConfig("MF", K=8, epochs=50, learning_rate=0.1, batch_size=32, l2=1e-4)
    params, report = train(ds, None, cfg)
    init = new_params(ds, cfg)
    rmse0 = g.evaluation.rmse(g.predict_batch(init, None, ds.users, ds.items), ds.score)
    rmse1 = g.evaluation.rmse(g.predict_batch(params, None, ds.users, ds.items), ds.score)
    assert rmse1 < 0.8 * rmse0
    assert len(report.train_rmse) == len(report.test_rmse) == len(report.objective) == len(report.seconds) == 50


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_training_is_deterministic(small_split, small_tables, optimizer):
    cfg = TrainConfig("A_GCF2", K=4, epochs=2, learning_rate=0.01, optimizer=optimizer, mlp_init="he")
    p1, r1 = train(small_split, small_tables, cfg)
    p2, r2 = train(small_split, small_tables, cfg)
    assert p1.equal(p2)
    assert r1.train_rmse == r2.train_rmse and r1.test_rmse == r2.test_rmse and r1.objective == r2.objective


def test_training_requires_tables(small_split):
    with pytest.raises(ConfigError, match="feedback tables"):
        train(small_split, FeedbackTables(), TrainConfig("GCF", K=4, epochs=1))


def test_divergence_is_reported(small_split, small_tables):
    cfg = TrainConfig("W_GCF", K=4, epochs=5, learning_rate=1e6, weight_init="sqrt_k")
    with pytest.raises(TrainingDiverged) as info:
        train(small_split, small_tables, cfg)
    assert info.value.epoch >= 1 and "epoch" in str(info.value)


def test_checkpointing(tmp_path, small_split, small_tables):
    path = tmp_path / "ck.bin"
    cfg = TrainConfig("SVDPP", K=4, epochs=2, checkpoint_every=1, checkpoint_path=str(path))
    params, _ = train(small_split, small_tables, cfg)
    assert load_params(path).equal(params)


def test_loss_report_csv_roundtrip(tmp_path):
    rep = LossReport([0.3, 0.2], [0.31, 0.25], [10.0, 8.5], [1.0, 1.1])
    rep.to_csv(tmp_path / "c.csv")
    back = LossReport.from_csv(tmp_path / "c.csv")
    assert back.train_rmse == rep.train_rmse and back.test_rmse == rep.test_rmse
    rep.to_csv(tmp_path / "n.csv", with_time=False)
    assert "seconds" not in (tmp_path / "n.csv").read_text()


def test_adam_step_direction():
    p = init_params("MF", 1, 1, 2, init_scale=0.0)
    cfg = TrainConfig("MF", K=2, l2=0.0)
    from graphcf.trainer import forward_backward

    _, grads, _ = forward_backward(Batch(np.array([0]), np.array([0]), np.array([1.0])), p, cfg)
    opt = make_optimizer("adam", 0.01)
    assert isinstance(opt, Adam)
    opt.step(p, grads)
    # first Adam step moves every touched scalar by about lr against its gradient sign
    assert p.blocks["b"][0] == pytest.approx(0.01, rel=1e-4)
    with pytest.raises(ConfigError):
        make_optimizer("lbfgs", 0.1)


def test_wrong_gradient_is_detected(monkeypatch):
    import graphcf.trainer as tr

    inst = random_instance("A_GCF", np.random.default_rng(1))
    true = tr.gradients(inst.batch, inst.params, inst.cfg, inst.tables)
    zeroed = {k: np.zeros_like(v) for k, v in true.items()}
    monkeypatch.setattr(tr, "gradients", lambda *a, **k: zeroed)
    assert finite_diff_check(inst.params, inst.batch, inst.cfg, inst.tables) == 1.0
    broken = {k: v.copy() for k, v in true.items()}
    broken["Y"][broken["Y"] != 0] *= 1.001
    monkeypatch.setattr(tr, "gradients", lambda *a, **k: broken)
    err, per_block = finite_diff_check(inst.params, inst.batch, inst.cfg, inst.tables, per_block=True)
    assert per_block["Y"] > 1e-4 and per_block["P"] < 1e-4
