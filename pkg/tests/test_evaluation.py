import json

import numpy as np
import pytest

from hvfae import evaluation as ev
from hvfae.data import synth_fair

from conftest import tiny_model


def test_ds_closed_form_and_properties():
    probs = np.array([1.0, 0.0, 1.0, 1.0])
    s = np.array([0, 0, 1, 1])
    assert ev.discrimination_score(probs, s) == pytest.approx(50.0, abs=1e-6)
    assert ev.discrimination_score(np.array([0.3, 0.3, 0.3]), np.array([0, 1, 1])) == 0.0
    assert ev.discrimination_score(probs, 1 - s) == ev.discrimination_score(probs, s)
    assert ev.discrimination_score(probs[[1, 0, 3, 2]], s[[1, 0, 3, 2]]) == ev.discrimination_score(probs, s)


def test_ds_errors():
    with pytest.raises(ValueError):
        ev.discrimination_score(np.array([0.5, 0.5]), np.array([1, 1]))
    with pytest.raises(ValueError):
        ev.discrimination_score(np.array([1.5, 0.5]), np.array([0, 1]))


def test_probe_separable_toy():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [3.0, 3.0], [3.0, 4.0]])
    t = np.array([0, 0, 1, 1])
    probe = ev.train_probe(X, t)
    assert probe.accuracy(X, t) == 1.0


def test_probe_zero_iterations_is_constant():
    X = np.random.Generator(np.random.PCG64(0)).standard_normal((50, 3))
    t = np.array([1] * 35 + [0] * 15)
    probe = ev.train_probe(X, t, max_iter=0)
    assert np.allclose(probe.predict_proba(X), 0.5)
    assert probe.iterations == 0


def test_probe_permuted_labels_near_majority():
    rng = np.random.Generator(np.random.PCG64(1))
    X = rng.standard_normal((2000, 5))
    t = (rng.uniform(size=2000) < 0.7).astype(int)
    probe = ev.train_probe(X[:1000], t[:1000])
    acc = 100 * probe.accuracy(X[1000:], t[1000:])
    assert abs(acc - ev.majority_rate(t[1000:])) <= 3


def test_probe_converges_and_is_deterministic():
    rng = np.random.Generator(np.random.PCG64(2))
    X = rng.standard_normal((300, 2))
    t = (X[:, 0] + 0.5 * rng.standard_normal(300) > 0).astype(int)
    a, b = ev.train_probe(X, t), ev.train_probe(X, t)
    assert a.converged
    assert np.array_equal(a.w, b.w) and a.b == b.b


def test_extract_z1_deterministic_and_shaped():
    ds = synth_fair(n=100, d=6, seed=0)
    model = tiny_model(D=6, M=2)
    a = ev.extract_z1(model, ds, "test")
    assert a.shape == (int(np.sum(ds.split == "test")), 2)
    assert np.array_equal(a, ev.extract_z1(model, ds, "test"))
    for k in model.params.names():
        if k.startswith("enc_z1.w"):
            model.params[k] = np.zeros_like(model.params[k])
    z = ev.extract_z1(model, ds, "test")
    assert np.allclose(z, z[0])


def test_evaluate_report_fields():
    ds = synth_fair(n=300, d=6, leak=0.0, seed=0)
    model = tiny_model(D=6, M=2)
    rep = ev.evaluate(model, ds, "test", config={"lambda_reg": 0.0})
    d = rep.to_dict()
    for k in ("y_acc", "s_audit_acc", "ds", "y_majority", "s_majority"):
        assert 0 <= d[k] <= 100
    assert d["s_audit_acc"] >= d["s_majority"] - 3
    assert json.loads(rep.to_json())["config"]["lambda_reg"] == 0.0
    header, row = rep.to_csv_row(header=True).strip().splitlines()
    assert header.split(",")[:3] == ["model", "dataset", "split"]
    assert ev.evaluate(model, ds, "test").to_dict() == {**d, "config": {}}
