import math

import numpy as np
import pytest

from graphcf.model import (
    ModelKind,
    ModelParams,
    aggregate_uniform,
    apply_output,
    block_layout,
    init_params,
    load_params,
    save_params,
    scale,
)
from graphcf.predict import predict, predict_batch, predict_gcf, predict_mf, predict_svdpp
from graphcf.sampling import PAD, FeedbackTable, FeedbackTables
from graphcf.weighting import ConfigError


def logistic(z):
    return 1.0 / (1.0 + math.exp(-z))


def zero_params(kind, nu=2, ni=2, K=2, k=1):
    p = init_params(kind, nu, ni, K, K, k, init_scale=0.0)
    return p


def test_scale_values():
    assert scale(0.0) == 0.5
    assert scale(2.0) == pytest.approx(0.880797, abs=1e-6)
    assert scale(800.0) == 1.0 and scale(-800.0) == 0.0
    z = np.linspace(-30, 30, 301)
    assert np.all(np.diff(scale(z)) > 0)


def test_clamp_output():
    y, dy = apply_output(np.array([-0.5, 0.3, 1.2]), "clamp")
    assert y.tolist() == [0.0, 0.3, 1.0] and dy.tolist() == [0.0, 1.0, 0.0]
    with pytest.raises(ConfigError):
        apply_output(0.0, "tanh")


def test_predict_mf_examples():
    p = zero_params("MF")
    assert predict_mf(p, 0, 1) == 0.5
    p.blocks["P"][0] = [1.0, 0.0]
    p.blocks["Q"][1] = [2.0, 0.0]
    assert predict_mf(p, 0, 1) == pytest.approx(0.880797, abs=1e-6)
    p = zero_params("MF")
    p.blocks["bu"][0], p.blocks["bi"][1] = 1.0, -1.0
    assert predict_mf(p, 0, 1) == 0.5


def test_predict_ids_and_kind_checked():
    p = zero_params("MF")
    with pytest.raises(IndexError):
        predict_mf(p, 2, 0)
    with pytest.raises(ConfigError):
        predict_gcf(p, 0, 0, [0], [0])


def test_aggregate_uniform_examples(rng):
    table = np.zeros((5, 3))
    assert aggregate_uniform([0, 1, 2, 3], table).tolist() == [0.0, 0.0, 0.0]
    e = rng.normal(size=(5, 3))
    assert np.array_equal(aggregate_uniform([2], e), e[2])
    row = [0, 1, 3, 3]
    oracle = [0.5 * sum(e[j][d] for j in row) for d in range(3)]
    assert np.allclose(aggregate_uniform(row, e), oracle, rtol=0, atol=1e-15)
    with pytest.raises(ConfigError):
        aggregate_uniform([], e)


def test_aggregate_degree_and_mean_norms(rng):
    e = rng.normal(size=(4, 2))
    assert np.allclose(aggregate_uniform([0, 1], e, "mean"), (e[0] + e[1]) / 2)
    assert np.allclose(aggregate_uniform([0, 1], e, "degree", 9), (e[0] + e[1]) / 3)


def test_svdpp_examples(rng):
    p = init_params("SVDPP", 3, 3, 2, k=1, seed=1, init_scale=0.5)
    mf = init_params("MF", 3, 3, 2, k=1, init_scale=0.0)
    for name in ("P", "Q", "bu", "bi", "b"):
        mf.blocks[name] = p.blocks[name].copy()
    p.blocks["Y"][:] = 0.0
    assert predict_svdpp(p, 1, 2, [0]) == predict_mf(mf, 1, 2)
    assert predict_svdpp(p, 1, 2, [PAD]) == predict_mf(mf, 1, 2)
    # one feedback entry whose embedding equals p_u, k=1
    p.blocks["Y"][0] = p.blocks["P"][1]
    z = 2 * p.blocks["P"][1] @ p.blocks["Q"][2] + p.blocks["bu"][1] + p.blocks["bi"][2] + p.blocks["b"][0]
    assert predict_svdpp(p, 1, 2, [0]) == pytest.approx(logistic(z), abs=1e-15)


def test_gcf_toy_oracle():
    p = init_params("GCF", 2, 2, 2, k=2, init_scale=0.0)
    p.blocks["P"][:] = [[0.1, -0.2], [0.3, 0.4], [0.0, 0.0]]
    p.blocks["Q"][:] = [[0.5, 0.1], [-0.3, 0.2], [0.0, 0.0]]
    p.blocks["Y"][:] = [[1.0, 0.0], [0.0, 1.0], [0.2, 0.2]]
    p.blocks["X"][:] = [[0.1, 0.1], [-0.1, 0.3], [0.0, 0.5]]
    p.blocks["bu"][:] = [0.1, -0.1, 0.0]
    p.blocks["bi"][:] = [0.05, 0.2, 0.0]
    p.blocks["b"][:] = [0.3]
    u, i, urow, irow = 1, 0, [0, PAD], [1, 0]
    c = 2**-0.5
    pu = [0.3 + c * (1.0 + 0.2), 0.4 + c * (0.0 + 0.2)]
    qi = [0.5 + c * (-0.1 + 0.1), 0.1 + c * (0.3 + 0.1)]
    z = pu[0] * qi[0] + pu[1] * qi[1] - 0.1 + 0.05 + 0.3
    assert predict_gcf(p, u, i, urow, irow) == pytest.approx(logistic(z), abs=1e-15)


def test_gcf_reductions(rng):
    p = init_params("GCF", 4, 5, 3, k=3, seed=2, init_scale=0.5)
    svd = init_params("SVDPP", 4, 5, 3, k=3, init_scale=0.0)
    for name in svd.blocks:
        svd.blocks[name] = p.blocks[name].copy()
    p.blocks["X"][:] = 0.0
    for u in range(4):
        for i in range(5):
            urow, irow = rng.integers(-1, 5, 3), rng.integers(-1, 4, 3)
            assert predict_gcf(p, u, i, urow, irow) == predict_svdpp(svd, u, i, urow)


def test_row_order_invariance(rng):
    p = init_params("GCF", 4, 5, 3, k=4, seed=2, init_scale=0.5)
    urow, irow = np.array([0, 3, 3, PAD]), np.array([1, 2, 0, 0])
    a = predict_gcf(p, 1, 2, urow, irow)
    b = predict_gcf(p, 1, 2, urow[::-1], irow[[2, 0, 3, 1]])
    assert a == pytest.approx(b, abs=1e-15)


def test_model_kind_parse():
    assert ModelKind.parse("A-GCF") is ModelKind.A_GCF
    assert ModelKind.parse("svd++") is ModelKind.SVDPP
    with pytest.raises(ConfigError, match="valid kinds: MF"):
        ModelKind.parse("NCF")
    assert ModelKind.A_GCF2.feedback_slots == ["user", "item", "user2", "item2"]
    assert ModelKind.W_SVDPP.feedback_slots == ["user"]


def test_layout_dims_and_pad_rows():
    lay = block_layout("W_GCF", 5, 7, 4, 4)
    assert lay["P"] == (6, 4) and lay["Q"] == (8, 4)
    assert lay["Y"] == (8, 4) and lay["X"] == (6, 4)
    assert lay["alpha"] == (6, 4) and lay["beta"] == (8, 4)
    assert "Y2" not in lay and "mlp_user.W0" not in lay
    lay = block_layout("A_GCF2", 5, 7, 4, 4, (8,))
    assert lay["Y2"] == (6, 4) and lay["X2"] == (8, 4)
    assert lay["mlp_item2.W0"] == (8, 8) and lay["mlp_item2.W1"] == (8, 1)


def test_feedback_width_must_match():
    with pytest.raises(ConfigError, match="K'"):
        ModelParams(ModelKind.GCF, 2, 2, 4, 3)


def test_init_ranges():
    p = init_params("A_GCF", 10, 10, 4, seed=0)
    for name, arr in p.blocks.items():
        if name in ("bu", "bi", "b") or ".c" in name:
            assert not arr.any()
        else:
            assert np.abs(arr).max() <= 0.01
    he = init_params("A_GCF", 10, 10, 4, seed=0, mlp_init="he")
    assert np.abs(he.blocks["mlp_user.W0"]).max() > 0.1
    w = init_params("W_GCF", 10, 10, 4, k=16, weight_init="sqrt_k")
    phi = w.blocks["alpha"] @ w.blocks["beta"].T
    assert np.allclose(phi, 16**-0.5, atol=0.01)


def test_snapshot_roundtrip(tmp_path):
    p = init_params("A_GCF2", 6, 7, 4, seed=3, hidden=(5,), temperature=0.2, norm="mean", mask_pad=True)
    save_params(p, tmp_path / "m.bin")
    back = load_params(tmp_path / "m.bin")
    assert back.equal(p)
    data = (tmp_path / "m.bin").read_bytes()
    header, body = data.split(b"\n", 1)
    assert header.startswith(b"GCFSNAP1 kind=A_GCF2")
    assert len(body) == 8 * p.n_parameters()


def test_snapshot_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_params(tmp_path / "missing.bin")
    p = init_params("MF", 2, 2, 2)
    save_params(p, tmp_path / "m.bin")
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_params(tmp_path / "cut.bin")
    (tmp_path / "junk.bin").write_bytes(b"hello\n")
    with pytest.raises(ValueError):
        load_params(tmp_path / "junk.bin")


def test_predict_batch_matches_single_predictions(rng):
    p = init_params("A_GCF2", 5, 6, 3, k=4, seed=4, init_scale=0.5)
    tables = FeedbackTables(
        FeedbackTable("user", 1, rng.integers(-1, 6, (5, 4))),
        FeedbackTable("item", 1, rng.integers(-1, 5, (6, 4))),
        FeedbackTable("user", 2, rng.integers(-1, 5, (5, 4))),
        FeedbackTable("item", 2, rng.integers(-1, 6, (6, 4))),
    )
    users, items = rng.integers(0, 5, 30), rng.integers(0, 6, 30)
    batch = predict_batch(p, tables, users, items, batch_size=7)
    for b, (u, i) in enumerate(zip(users, items)):
        rows = {s: getattr(tables, s).rows[u if s.startswith("user") else i] for s in p.kind.feedback_slots}
        assert batch[b] == pytest.approx(predict(p, u, i, rows), abs=1e-15)
    assert np.all((batch > 0) & (batch < 1))


def test_missing_table_is_config_error():
    p = init_params("GCF", 2, 2, 2)
    with pytest.raises(ConfigError):
        predict_batch(p, FeedbackTables(), [0], [0])
