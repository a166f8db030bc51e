"""VFAE and hierarchical VFAE (optionally with a VampPrior) and their
supervised evidence lower bounds.

Both models share the generative part

    y ~ Cat(y),  z2 ~ p(z2),  z1 ~ p(z1 | z2, y),  x ~ Bern(f(z1, s))

and differ in how z2 is inferred: from ``(z1, y)`` for the VFAE and directly
from ``x`` for the hierarchical model. With ``prior="vampprior"`` the prior on
z2 is the uniform mixture of ``q(z2 | u_k)`` over learnable pseudo-inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from hvfae import distributions as dist
from hvfae import tensor as T
from hvfae.nn import MlpSpec, ParamStore, init_mlp, mlp_forward
from hvfae.tensor import NonFiniteError

VARIANTS = ("vfae", "hvfae")
PRIORS = ("standard_gaussian", "vampprior")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    x_dim: int
    z1_dim: int = 50
    z2_dim: int = 50
    variant: str = "vfae"
    prior: str = "standard_gaussian"
    y_dim: int = 2
    s_dim: int = 2
    hidden: tuple = (100,)
    classifier_hidden: tuple = ()
    activation: str = "softplus"
    alpha: float = 1.0
    n_pseudo: int = 50
    pseudo_init: str = "data"
    pseudo_noise: float = 0.01
    kl_samples: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.classifier_hidden = tuple(int(h) for h in self.classifier_hidden)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.prior not in PRIORS:
            raise ConfigError(f"prior must be one of {PRIORS}")
        if self.prior == "vampprior" and self.variant != "hvfae":
            raise ConfigError("the VampPrior needs variant='hvfae' (q(z2|x) encoder)")
        if min(self.x_dim, self.z1_dim, self.z2_dim) < 1:
            raise ConfigError("x_dim, z1_dim and z2_dim must be >= 1")
        if min(self.y_dim, self.s_dim) < 2:
            raise ConfigError("y and s need at least two classes")
        if not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if self.prior == "vampprior" and self.n_pseudo < 1:
            raise ConfigError("n_pseudo must be >= 1")
        if self.pseudo_init not in ("data", "uniform"):
            raise ConfigError("pseudo_init must be 'data' or 'uniform'")
        if self.kl_samples < 1:
            raise ConfigError("kl_samples must be >= 1")

    @property
    def label(self):
        name = "VFAE" if self.variant == "vfae" else "H-VFAE"
        return name + (" + VP" if self.prior == "vampprior" else "")

    def networks(self):
        D, M1, M2, Y, S = self.x_dim, self.z1_dim, self.z2_dim, self.y_dim, self.s_dim
        act = self.activation
        z2_in = M1 + Y if self.variant == "vfae" else D
        return {
            "enc_z1": MlpSpec(D + S, self.hidden, M1, act, "gaussian_params"),
            "cls_y": MlpSpec(M1, self.classifier_hidden, Y, act, "logits"),
            "enc_z2": MlpSpec(z2_in, self.hidden, M2, act, "gaussian_params"),
            "prior_z1": MlpSpec(M2 + Y, self.hidden, M1, act, "gaussian_params"),
            "dec_x": MlpSpec(M1 + S, self.hidden, D, act, "logits"),
            "cls_s": MlpSpec(D, self.classifier_hidden, S, act, "logits"),
        }

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["classifier_hidden"] = list(self.classifier_hidden)
        return d


@dataclass
class FairModel:
    config: ModelConfig
    params: ParamStore
    specs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.specs:
            self.specs = self.config.networks()

    @classmethod
    def create(cls, config, rng, init_x=None):
        """Randomly initialized model; ``init_x`` seeds the pseudo-inputs."""
        params = ParamStore()
        specs = config.networks()
        for name, spec in specs.items():
            init_mlp(spec, name, params, rng)
        if config.prior == "vampprior":
            K, D = config.n_pseudo, config.x_dim
            if config.pseudo_init == "data" and init_x is not None and len(init_x) > 0:
                idx = rng.choice(len(init_x), size=K, replace=len(init_x) < K)
                u = np.asarray(init_x, dtype=np.float64)[idx]
                u = u + config.pseudo_noise * rng.standard_normal((K, D))
            else:
                u = rng.uniform(0.0, 1.0, size=(K, D))
            params.add("pseudo_inputs", u)
        return cls(config, params, specs)

    def net(self, name, inputs, P=None):
        return mlp_forward(self.specs[name], self._p(P), name, inputs)

    def _p(self, P):
        return self.params.entries if P is None else P


def one_hot(labels, n):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n:
        raise ValueError(f"labels outside [0, {n})")
    out = np.zeros((labels.size, n))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _as_onehot(v, n):
    if isinstance(v, T.Tensor):
        return v
    a = np.asarray(v)
    if a.ndim == 2:
        return a.astype(np.float64)
    return one_hot(a, n)


def encode_z1(model, x, s_onehot, eps, P=None):
    """``q(z1 | x, s)`` and its reparameterized sample."""
    mean, sigma = model.net("enc_z1", T.concat([T.tensor(x), T.tensor(s_onehot)], axis=1), P)
    q = dist.DiagGaussian(mean, sigma)
    return q, dist.gaussian_sample(q, eps)


def classify_y(model, z1, P=None):
    return dist.CategoricalDist.from_logits(model.net("cls_y", z1, P))


def classify_s(model, x, P=None):
    return dist.CategoricalDist.from_logits(model.net("cls_s", x, P))


def encode_z2(model, x=None, z1=None, y_onehot=None, P=None):
    """``q(z2 | z1, y)`` for the VFAE, ``q(z2 | x)`` for the hierarchical model."""
    if model.config.variant == "vfae":
        inputs = T.concat([T.tensor(z1), T.tensor(y_onehot)], axis=1)
    else:
        inputs = x
    return dist.DiagGaussian(*model.net("enc_z2", inputs, P))


def prior_z1(model, z2, y_onehot, P=None):
    """Conditional prior ``p(z1 | z2, y)``."""
    return dist.DiagGaussian(*model.net("prior_z1", T.concat([T.tensor(z2), T.tensor(y_onehot)], axis=1), P))


def decode_x(model, z1, s_onehot, P=None):
    """Bernoulli logits of ``p(x | z1, s)``."""
    return model.net("dec_x", T.concat([T.tensor(z1), T.tensor(s_onehot)], axis=1), P)


def vampprior_components(model, P=None):
    if model.config.prior != "vampprior":
        raise ConfigError("model has no VampPrior")
    u = model._p(P)["pseudo_inputs"]
    g = dist.DiagGaussian(*model.net("enc_z2", u, P))
    return dist.MixtureGaussian(g.mean, g.sigma)


def vampprior_logpdf(model, z2, P=None):
    """``log (1/K) sum_k q(z2 | u_k)`` for each row of ``z2``."""
    return dist.mixture_logpdf(z2, vampprior_components(model, P))


@dataclass
class RowTerms:
    """Per-row pieces of the supervised bound plus what the regularizers reuse."""

    recon: object
    kl_z2: object
    z1_term: object
    class_term: object
    z1: object
    q_z1: object
    alpha: float

    @property
    def total(self):
        return self.recon - self.kl_z2 - self.z1_term + self.alpha * self.class_term


@dataclass
class ElboTerms:
    """Batch means; ``total = recon - kl_z2 - z1_term + alpha * class_term``."""

    recon: float
    kl_z2: float
    z1_term: float
    class_term: float
    total: float

    @classmethod
    def from_rows(cls, rows, weights=None):
        def avg(t):
            d = t.data
            return float(d.mean() if weights is None else (d * weights).sum() / weights.sum())
        return cls(avg(rows.recon), avg(rows.kl_z2), avg(rows.z1_term),
                   avg(rows.class_term), avg(rows.total))


def check_terms(rows, where="elbo"):
    for name in ("recon", "kl_z2", "z1_term", "class_term"):
        bad = ~np.isfinite(getattr(rows, name).data)
        if np.any(bad):
            raise NonFiniteError(f"{where}: term {name!r} non-finite at rows {np.flatnonzero(bad)[:5]}")


def elbo_rows(model, x, y, s, rng, P=None):
    """Single-sample supervised bound for every row of the batch.

    ``s`` may be integer labels, a one-hot array, or a soft one-hot Tensor.
    Noise is drawn in a fixed order: z1 then z2 (then extra KL samples).
    """
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    B = x.shape[0]
    y_oh = _as_onehot(y, cfg.y_dim)
    s_oh = _as_onehot(s, cfg.s_dim)
    eps1 = rng.standard_normal((B, cfg.z1_dim))
    eps2 = rng.standard_normal((B, cfg.z2_dim))

    q1, z1 = encode_z1(model, x, s_oh, eps1, P)
    recon = dist.bernoulli_loglik(x, decode_x(model, z1, s_oh, P))
    class_term = dist.categorical_logpdf(y_oh, classify_y(model, z1, P))

    if cfg.variant == "vfae":
        q2 = encode_z2(model, z1=z1, y_onehot=y_oh, P=P)
    else:
        q2 = encode_z2(model, x=x, P=P)
    z2 = dist.gaussian_sample(q2, eps2)

    if cfg.prior == "vampprior":
        mix = vampprior_components(model, P)
        kl_z2 = dist.gaussian_logpdf(z2, q2) - dist.mixture_logpdf(z2, mix)
        for _ in range(cfg.kl_samples - 1):
            zk = dist.gaussian_sample(q2, rng.standard_normal((B, cfg.z2_dim)))
            kl_z2 = kl_z2 + dist.gaussian_logpdf(zk, q2) - dist.mixture_logpdf(zk, mix)
        if cfg.kl_samples > 1:
            kl_z2 = kl_z2 * (1.0 / cfg.kl_samples)
    else:
        kl_z2 = dist.kl_standard_normal(q2)

    z1_term = dist.kl_diag_gaussians(q1, prior_z1(model, z2, y_oh, P))
    rows = RowTerms(recon, kl_z2, z1_term, class_term, z1, q1, cfg.alpha)
    check_terms(rows)
    return rows


def vfae_elbo(model, x, y, s, rng, P=None):
    if model.config.variant != "vfae":
        raise ConfigError("vfae_elbo called on a hierarchical model")
    return ElboTerms.from_rows(elbo_rows(model, x, y, s, rng, P))


def hvfae_elbo(model, x, y, s, rng, P=None):
    if model.config.variant != "hvfae":
        raise ConfigError("hvfae_elbo called on a VFAE")
    return ElboTerms.from_rows(elbo_rows(model, x, y, s, rng, P))


def posterior_means(model, x, s, y=None):
    """Deterministic posterior means ``(z1, z2)`` used for evaluation."""
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    s_oh = _as_onehot(s, cfg.s_dim)
    q1, _ = encode_z1(model, x, s_oh, np.zeros((len(x), cfg.z1_dim)))
    z1 = q1.mean.data
    if cfg.variant == "vfae":
        if y is None:
            y_oh = classify_y(model, z1).probs.data
        else:
            y_oh = _as_onehot(y, cfg.y_dim)
        q2 = encode_z2(model, z1=z1, y_onehot=y_oh)
    else:
        q2 = encode_z2(model, x=x)
    return z1, q2.mean.data


def active_units(model, x, s, y=None, threshold=0.01):
    """Latent dimensions whose posterior mean varies across the data by more
    than ``threshold`` (variance)."""
    z1, z2 = posterior_means(model, x, s, y)
    return {"z1": int(np.sum(z1.var(axis=0) > threshold)),
            "z2": int(np.sum(z2.var(axis=0) > threshold))}


# checkpoint container

_MAGIC = b"HVFAECK1"


def save_checkpoint(model, path):
    """Write ``model`` as: magic, config JSON, then per parameter
    (name length u32, name utf-8, rank u32, dims u64 each, float64 LE values)."""
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<I", len(model.params)))
        for name, arr in model.params.items():
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        (n,) = struct.unpack("<I", f.read(4))
        config = ModelConfig(**json.loads(f.read(n)))
        (count,) = struct.unpack("<I", f.read(4))
        params = ParamStore()
        for _ in range(count):
            (n,) = struct.unpack("<I", f.read(4))
            name = f.read(n).decode()
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
            size = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape)
            params.add(name, values)
    return FairModel(config, params)
