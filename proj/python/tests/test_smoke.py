import json
import struct

import numpy as np
import pytest

import taskgraph as tg


def stochastic(rng, rows, cols):
    m = rng.random((rows, cols)) + 0.05
    return m / m.sum(axis=1, keepdims=True)


def test_version():
    assert tg.__version__.count(".") == 2


def test_self_and_garbled_deficiency_vanish():
    rng = np.random.default_rng(0)
    k = stochastic(rng, 3, 4)
    garble = stochastic(rng, 4, 5)
    assert tg.deficiency(k, k)["delta"] < 1e-8
    result = tg.deficiency(k, k @ garble)
    assert result["delta"] < 1e-8
    assert result["witness"].shape == (4, 5)
    np.testing.assert_allclose(result["witness"].sum(axis=1), 1.0, atol=1e-9)


def test_risk_transfer_bound():
    rng = np.random.default_rng(1)
    for _ in range(20):
        prior = rng.dirichlet(np.ones(3))
        s, t = stochastic(rng, 3, 4), stochastic(rng, 3, 2)
        delta = tg.deficiency(s, t)["delta"]
        assert tg.bayes_risk_01(prior, s) - delta <= tg.bayes_risk_01(prior, t) + 1e-8


def test_invalid_kernel_raises_value_error():
    with pytest.raises(tg.ValidationError):
        tg.deficiency(np.array([[0.5, 0.6]]), np.array([[1.0]]))
    assert issubclass(tg.ValidationError, ValueError)


def test_discrete_mi_of_independent_table_is_zero():
    joint = np.outer([0.2, 0.8], [0.5, 0.3, 0.2])
    assert abs(tg.discrete_mi(joint)) < 1e-12


def test_grassmann_invariant_to_column_mixing():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((6, 3))
    g = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    assert tg.grassmann_distance(w, w @ g) < 1e-9


def test_predictive_power_sums_to_zero():
    rng = np.random.default_rng(3)
    out = tg.predictive_power(["a", "b", "c", "d"], rng.random((4, 4)))
    assert abs(sum(out["pp"])) < 1e-9
    assert sorted(out["rank"]) == [0, 1, 2, 3]
    assert tg.kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_information_sufficiency_of_correlated_pair():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((1500, 1))
    b = 0.9 * a + np.sqrt(1 - 0.81) * rng.standard_normal((1500, 1))
    est = tg.information_sufficiency(a, b, seed=5, marginal_epochs=20, conditional_epochs=20)
    assert est["is"] > 0.4


def write_emb1(path, values):
    n, d = values.shape
    with open(path, "wb") as f:
        f.write(b"EMB1" + struct.pack("<III", 1, n, d))
        f.write(values.astype("<f4").tobytes())


def write_lbl1(path, labels):
    with open(path, "wb") as f:
        f.write(b"LBL1" + struct.pack("<I", len(labels)))
        f.write(np.asarray(labels, dtype="<u4").tobytes())


def test_externally_written_store_is_readable(tmp_path):
    rng = np.random.default_rng(5)
    values = rng.standard_normal((7, 3)).astype(np.float32)
    write_emb1(tmp_path / "layer-0.emb", values)
    write_lbl1(tmp_path / "labels.lbl", [0, 1, 1, 0, 2, 2, 1])
    manifest = {
        "schema": "taskgraph-embstore/1",
        "model_id": "m",
        "task_id": "t",
        "layer_count": 1,
        "dim": 3,
        "example_count": 7,
        "dtype": "f32-le",
        "layers": [0],
        "layer_files": ["layer-0.emb"],
        "labels_file": "labels.lbl",
    }
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    assert tg.validate_store(tmp_path)["ok"]
    (layer,) = tg.read_store(tmp_path)
    np.testing.assert_array_equal(layer["values"], values.astype(float))
    assert layer["labels"] == [0, 1, 1, 0, 2, 2, 1]


def test_store_round_trip_and_corruption(tmp_path):
    rng = np.random.default_rng(6)
    layers = {0: rng.standard_normal((5, 4)), 2: rng.standard_normal((5, 4))}
    manifest = tg.write_store(tmp_path, "model", "task", layers, labels=[0, 1, 0, 1, 1])
    assert manifest["layers"] == [0, 2]
    back = tg.read_store(tmp_path)
    np.testing.assert_allclose(back[1]["values"], layers[2], atol=1e-6)

    path = tmp_path / "layer-2.emb"
    path.write_bytes(path.read_bytes()[:-4])
    report = tg.validate_store(tmp_path)
    assert not report["ok"]
    assert [f["ok"] for f in report["files"] if f["file"].startswith("layer")] == [True, False]
    with pytest.raises(tg.IoError):
        tg.read_store(tmp_path)


def test_lra1_block_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    b, a = rng.standard_normal((6, 2)), rng.standard_normal((2, 5))
    tg.write_block(tmp_path / "q.lra", b, a)
    with open(tmp_path / "q.lra", "rb") as f:
        assert f.read(4) == b"LRA1"
    b2, a2 = tg.read_block(tmp_path / "q.lra")
    np.testing.assert_allclose(b2, b, atol=1e-6)
    np.testing.assert_allclose(a2, a, atol=1e-6)
