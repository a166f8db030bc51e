import math

import numpy as np
import pytest

from hvfae import distributions as dist
from hvfae import models as M
from hvfae import nn
from hvfae import tensor as T
from hvfae.models import ConfigError, FairModel, ModelConfig

from conftest import param_fd_check, tiny_batch, tiny_model

SIG_ONE = math.log(math.expm1(1.0 - nn.SIGMA_FLOOR))  # softplus^-1 so that sigma == 1


def test_encode_z1_zero_noise_is_mean(rng):
    model = tiny_model()
    x, _, s = tiny_batch()
    q, z = M.encode_z1(model, x, M.one_hot(s, 2), np.zeros((4, 2)))
    assert np.array_equal(z.data, q.mean.data)
    q0, _ = M.encode_z1(model, x, M.one_hot(np.zeros(4, int), 2), np.zeros((4, 2)))
    q1, _ = M.encode_z1(model, x, M.one_hot(np.ones(4, int), 2), np.zeros((4, 2)))
    assert not np.allclose(q0.mean.data, q1.mean.data)


def test_encode_z1_hand_oracle():
    cfg = ModelConfig(x_dim=2, z1_dim=1, z2_dim=1, hidden=())
    model = FairModel.create(cfg, nn.seeded_rng(0))
    model.params["enc_z1.w_mu"] = np.array([[0.1], [0.2], [0.3], [0.4]])
    model.params["enc_z1.b_mu"] = np.array([0.05])
    q, _ = M.encode_z1(model, np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), np.zeros((1, 1)))
    # [x, s] = [1, 0, 1, 0]
    assert q.mean.data[0, 0] == pytest.approx(0.1 + 0.3 + 0.05, abs=1e-15)


def test_classify_y_closed_forms():
    model = tiny_model()
    model.params["cls_y.w_out"] = np.zeros_like(model.params["cls_y.w_out"])
    model.params["cls_y.b_out"] = np.zeros(2)
    assert np.allclose(M.classify_y(model, np.ones((3, 2))).probs.data, 0.5)
    model.params["cls_y.b_out"] = np.array([math.log(3.0), 0.0])
    assert np.allclose(M.classify_y(model, np.ones((1, 2))).probs.data, [[0.75, 0.25]])


def test_decode_zero_weights_gives_log_half():
    model = tiny_model()
    for k in model.params.names():
        if k.startswith("dec_x."):
            model.params[k] = np.zeros_like(model.params[k])
    logits = M.decode_x(model, np.ones((2, 2)), M.one_hot([0, 1], 2))
    assert logits.shape == (2, 6)
    x = np.array([[1, 0, 1, 0, 1, 1.0]] * 2)
    assert np.allclose(dist.bernoulli_loglik(x, logits).data, 6 * math.log(0.5))


def test_vampprior_single_component_at_mean():
    model = tiny_model(K=1)
    comps = M.vampprior_components(model)
    mu, sig = comps.means.data[0], comps.sigmas.data[0]
    val = float(M.vampprior_logpdf(model, mu[None]).data[0])
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi) * 2 - np.sum(np.log(sig)), abs=1e-12)


def test_vampprior_duplicate_inputs_and_linear_oracle(rng):
    m1 = tiny_model(K=1)
    m2 = tiny_model(K=2)
    for k in m1.params.names():
        if k != "pseudo_inputs":
            m2.params[k] = m1.params[k]
    m2.params["pseudo_inputs"] = np.repeat(m1.params["pseudo_inputs"], 2, axis=0)
    z = rng.standard_normal((5, 2))
    assert np.allclose(M.vampprior_logpdf(m1, z).data, M.vampprior_logpdf(m2, z).data, atol=1e-12)

    m3 = tiny_model(K=3)
    comps = M.vampprior_components(m3)
    mu, sig = comps.means.data, comps.sigmas.data
    dens = np.zeros(5)
    for k in range(3):
        dens += np.prod(np.exp(-0.5 * ((z - mu[k]) / sig[k]) ** 2) / (np.sqrt(2 * np.pi) * sig[k]), axis=1)
    assert np.allclose(M.vampprior_logpdf(m3, z).data, np.log(dens / 3), atol=1e-10)


def test_vampprior_on_plain_model_errors():
    with pytest.raises(ConfigError):
        M.vampprior_logpdf(tiny_model(prior="standard_gaussian"), np.zeros((1, 2)))


def test_vampprior_requires_hierarchical_variant():
    with pytest.raises(ConfigError):
        ModelConfig(x_dim=3, variant="vfae", prior="vampprior")


@pytest.mark.parametrize("variant,prior", [("vfae", "standard_gaussian"),
                                           ("hvfae", "standard_gaussian"),
                                           ("hvfae", "vampprior")])
def test_elbo_terms_and_gradient(variant, prior):
    model = tiny_model(variant, prior, D=5, M=2, hidden=(3,))
    x, y, s = tiny_batch(D=5)
    terms = M.elbo_rows(model, x, y, s, nn.seeded_rng(3))
    assert np.all(terms.z1_term.data >= 0)
    if prior == "standard_gaussian":
        assert np.all(terms.kl_z2.data >= 0)
    elbo = (M.vfae_elbo if variant == "vfae" else M.hvfae_elbo)(model, x, y, s, nn.seeded_rng(3))
    assert elbo.total == pytest.approx(elbo.recon - elbo.kl_z2 - elbo.z1_term + elbo.class_term)

    def objective(P):
        return T.tmean(M.elbo_rows(model, x, y, s, nn.seeded_rng(3), P).total)

    assert param_fd_check(model, objective) < 1e-4


def test_alpha_is_linear_in_total():
    m1 = tiny_model(alpha=1.0)
    m2 = tiny_model(alpha=3.0)
    x, y, s = tiny_batch()
    a = M.hvfae_elbo(m1, x, y, s, nn.seeded_rng(0))
    b = M.hvfae_elbo(m2, x, y, s, nn.seeded_rng(0))
    assert b.total - a.total == pytest.approx(2.0 * a.class_term, abs=1e-12)


def _unit_z2_encoder(model):
    for k in ("w_mu", "w_sig"):
        model.params[f"enc_z2.{k}"] = np.zeros_like(model.params[f"enc_z2.{k}"])
    model.params["enc_z2.b_mu"] = np.zeros(model.config.z2_dim)
    model.params["enc_z2.b_sig"] = np.full(model.config.z2_dim, SIG_ONE)


def test_vampprior_of_unit_gaussians_matches_standard_prior():
    vp = tiny_model("hvfae", "vampprior", K=4)
    sg = tiny_model("hvfae", "standard_gaussian")
    for k in sg.params.names():
        sg.params[k] = vp.params[k]
    _unit_z2_encoder(vp)
    _unit_z2_encoder(sg)
    comps = M.vampprior_components(vp)
    assert np.allclose(comps.means.data, 0) and np.allclose(comps.sigmas.data, 1, atol=1e-15)
    x, y, s = tiny_batch()
    for seed in range(5):
        a = M.elbo_rows(vp, x, y, s, nn.seeded_rng(seed))
        b = M.elbo_rows(sg, x, y, s, nn.seeded_rng(seed))
        assert np.max(np.abs(a.total.data - b.total.data)) < 1e-8


def test_vampprior_kl_estimate_is_unbiased_for_unit_components():
    # components N(0, I), data encoder arbitrary: MC estimate averages to the closed-form KL
    vp = tiny_model("hvfae", "vampprior", K=2)
    vp.params["pseudo_inputs"] = np.zeros_like(vp.params["pseudo_inputs"])
    x = np.ones((1, 6))
    q2 = M.encode_z2(vp, x=x)
    mix = dist.MixtureGaussian(np.zeros((2, 2)), np.ones((2, 2)))
    eps = nn.seeded_rng(0).standard_normal((100_000, 2))
    qb = dist.DiagGaussian(np.repeat(q2.mean.data, len(eps), 0), np.repeat(q2.sigma.data, len(eps), 0))
    z = dist.gaussian_sample(qb, eps)
    est = dist.gaussian_logpdf(z, qb).data - dist.mixture_logpdf(z, mix).data
    exact = float(dist.kl_standard_normal(q2).data[0])
    assert abs(est.mean() - exact) < 4 * est.std() / math.sqrt(len(est))


def test_elbo_estimator_unbiased_under_resampling():
    model = tiny_model("hvfae", "vampprior")
    x, y, s = tiny_batch()
    rng = nn.seeded_rng(11)
    vals = np.array([M.hvfae_elbo(model, x, y, s, rng).total for _ in range(400)])
    first, second = vals[:200], vals[200:]
    se = math.sqrt(first.var(ddof=1) / 200 + second.var(ddof=1) / 200)
    assert abs(first.mean() - second.mean()) < 4 * se


def test_active_units_bounds():
    model = tiny_model()
    x, y, s = tiny_batch(n=8)
    assert M.active_units(model, x, s, y, threshold=np.inf) == {"z1": 0, "z2": 0}
    assert M.active_units(model, x, s, y, threshold=0.0) == {"z1": 2, "z2": 2}
    for k in model.params.names():
        if k.startswith(("enc_z1.w", "enc_z2.w")):
            model.params[k] = np.zeros_like(model.params[k])
    assert M.active_units(model, x, s, y) == {"z1": 0, "z2": 0}


def test_checkpoint_round_trip(tmp_path):
    model = tiny_model()
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(model, path)
    back = M.load_checkpoint(path)
    assert back.config == model.config
    assert back.params.names() == model.params.names()
    for k in model.params.names():
        assert np.array_equal(back.params[k], model.params[k])
    x, y, s = tiny_batch()
    a = M.hvfae_elbo(model, x, y, s, nn.seeded_rng(0))
    b = M.hvfae_elbo(back, x, y, s, nn.seeded_rng(0))
    assert a == b
    raw = path.read_bytes()
    assert raw[:8] == b"HVFAECK1"


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        M.load_checkpoint(p)


def test_nonfinite_term_is_named():
    model = tiny_model()
    P = dict(model.params.entries)
    P["dec_x.b_out"] = np.full(6, np.nan)
    x, y, s = tiny_batch()
    with pytest.raises(T.NonFiniteError, match="recon"):
        M.elbo_rows(model, x, y, s, nn.seeded_rng(0), P)


def test_training_improves_elbo_on_separable_data():
    from hvfae.data import synth_fair
    ds = synth_fair(n=400, d=8, leak=0.0, seed=0)
    X, y, s = ds.part("train")
    cfg = ModelConfig(x_dim=8, z1_dim=3, z2_dim=3, variant="hvfae", hidden=(16,))
    model = FairModel.create(cfg, nn.seeded_rng(0), init_x=X)
    adam = nn.AdamState(lr=3e-3)
    rng = nn.seeded_rng(1)
    history = []
    for epoch in range(40):
        vals = []
        for start in range(0, len(X), 60):
            sl = slice(start, start + 60)
            v, _ = nn.grad(lambda P: -T.tmean(M.elbo_rows(model, X[sl], y[sl], s[sl], rng, P).total),
                           model.params)
            nn.adam_step(model.params, adam)
            vals.append(-v)
        history.append(np.mean(vals))
    smooth = np.convolve(history, np.ones(10) / 10, mode="valid")
    assert smooth[-1] > smooth[0]
    assert np.all(np.diff(smooth) > -0.05)
