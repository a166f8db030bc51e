"""Diagonal Gaussians, Bernoulli and categorical likelihoods, concrete samples
and uniform Gaussian mixtures.

Every function works on batches: the last axis is the event axis and is
summed out, leading axes are kept. Inputs may be Tensors or arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hvfae import tensor as T
from hvfae.tensor import LOG_2PI, DimensionError

PROB_FLOOR = 1e-12
LOGIT_CLAMP = 500.0


@dataclass
class DiagGaussian:
    mean: object
    sigma: object

    def __post_init__(self):
        self.mean = T.tensor(self.mean)
        self.sigma = T.tensor(self.sigma)
        if self.mean.shape != self.sigma.shape:
            raise DimensionError(f"mean {self.mean.shape} vs sigma {self.sigma.shape}")
        if np.any(self.sigma.data <= 0):
            raise ValueError("sigma must be strictly positive")

    @property
    def dim(self):
        return self.mean.shape[-1]

    @classmethod
    def standard(cls, shape):
        return cls(np.zeros(shape), np.ones(shape))


@dataclass
class CategoricalDist:
    """Categorical over the last axis, stored as normalized log-probabilities."""

    log_probs: object

    def __post_init__(self):
        self.log_probs = T.tensor(self.log_probs)

    @classmethod
    def from_logits(cls, logits):
        return cls(T.log_softmax(T.tensor(logits), axis=-1))

    @classmethod
    def from_probs(cls, probs):
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
            raise ValueError("probabilities must be non-negative and sum to 1")
        return cls(np.log(np.maximum(p, PROB_FLOOR)))

    @property
    def probs(self):
        return T.exp(self.log_probs)

    @property
    def num_classes(self):
        return self.log_probs.shape[-1]


@dataclass
class MixtureGaussian:
    """Uniformly weighted mixture; ``means``/``sigmas`` are K x M."""

    means: object
    sigmas: object

    def __post_init__(self):
        self.means = T.tensor(self.means)
        self.sigmas = T.tensor(self.sigmas)
        if self.means.ndim != 2 or self.means.shape != self.sigmas.shape:
            raise DimensionError("mixture components must be K x M with matching sigmas")
        if self.means.shape[0] < 1:
            raise ValueError("mixture needs at least one component")

    @classmethod
    def from_components(cls, components):
        return cls(T.stack([c.mean for c in components]),
                   T.stack([c.sigma for c in components]))

    @property
    def num_components(self):
        return self.means.shape[0]


def gaussian_sample(g, eps):
    """Reparameterized draw ``mean + sigma * eps``."""
    eps = T.tensor(eps)
    if eps.shape[-1] != g.dim:
        raise DimensionError(f"eps width {eps.shape[-1]} != gaussian dim {g.dim}")
    return g.mean + g.sigma * eps


def gaussian_logpdf(z, g):
    z = T.tensor(z)
    if z.shape[-1] != g.dim:
        raise DimensionError(f"z width {z.shape[-1]} != gaussian dim {g.dim}")
    u = (z - g.mean) / g.sigma
    return T.tsum(-0.5 * LOG_2PI - T.log(g.sigma) - 0.5 * T.square(u), axis=-1)


def kl_diag_gaussians(q, p):
    if q.dim != p.dim:
        raise DimensionError(f"KL between dims {q.dim} and {p.dim}")
    ratio = q.sigma / p.sigma
    shift = (q.mean - p.mean) / p.sigma
    return T.tsum(-T.log(ratio) + 0.5 * (T.square(ratio) + T.square(shift)) - 0.5, axis=-1)


def kl_standard_normal(q):
    """KL(q || N(0, I)) in closed form."""
    return T.tsum(-T.log(q.sigma) + 0.5 * (T.square(q.sigma) + T.square(q.mean)) - 0.5,
                  axis=-1)


def bernoulli_loglik(x, logits):
    """``sum_d x log sigmoid(l) + (1 - x) log(1 - sigmoid(l))`` in logit form."""
    xa = np.asarray(x, dtype=np.float64)
    if not np.all((xa == 0.0) | (xa == 1.0)):
        raise ValueError("bernoulli_loglik expects binary x")
    logits = T.tensor(logits)
    if logits.shape != xa.shape:
        raise DimensionError(f"x {xa.shape} vs logits {logits.shape}")
    if np.any(np.abs(logits.data) > LOGIT_CLAMP):
        logits = T.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    return T.tsum(xa * logits - T.softplus(logits), axis=-1)


def categorical_logpdf(y, c):
    """Log-probability of a (possibly soft) one-hot ``y``."""
    y = T.tensor(y)
    if y.shape[-1] != c.num_classes:
        raise DimensionError(f"{y.shape[-1]} classes vs {c.num_classes}")
    return T.tsum(y * c.log_probs, axis=-1)


def kl_categorical(q, p):
    if q.num_classes != p.num_classes:
        raise DimensionError(f"{q.num_classes} classes vs {p.num_classes}")
    return T.tsum(q.probs * (q.log_probs - p.log_probs), axis=-1)


def gumbel_noise(rng, shape):
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def concrete_sample(logits, temperature, gumbel):
    """Relaxed one-hot ``softmax((logits + gumbel) / temperature)``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return T.softmax((T.tensor(logits) + gumbel) * (1.0 / temperature), axis=-1)


def mixture_logpdf(z, m):
    """``log (1/K) sum_k N(z | mean_k, sigma_k)`` for each row of ``z``."""
    z = T.tensor(z)
    squeeze = z.ndim == 1
    if squeeze:
        z = T.reshape(z, (1, z.shape[0]))
    comp = T.pairwise_gauss_logpdf(z, m.means, m.sigmas)
    out = T.logsumexp(comp, axis=1) - np.log(m.num_components)
    return T.reshape(out, ()) if squeeze else out
