"""Fairness penalties on z1: unbiased kernel MMD, random-feature (fast) MMD
and the conditional mutual information between z1 and s given x."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from hvfae import distributions as dist
from hvfae import tensor as T
from hvfae.models import classify_s, encode_z1, one_hot
from hvfae.tensor import DimensionError, NonFiniteError

log = logging.getLogger(__name__)


@dataclass
class KernelSpec:
    kind: str = "rbf"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError("only the rbf kernel is supported")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def gamma(self):
        # k(a, b) = exp(-||a - b||^2 / gamma)
        return 2.0 * self.bandwidth ** 2

    @classmethod
    def matching_rff(cls, z_dim):
        """The RBF kernel implied by :meth:`RffProjection.sample` defaults."""
        return cls("rbf", float(np.sqrt(z_dim)))


@dataclass
class RffProjection:
    W: np.ndarray
    b: np.ndarray
    gamma: float

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise DimensionError(f"W {self.W.shape} and b {self.b.shape} do not match")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def n_features(self):
        return self.W.shape[1]

    @classmethod
    def sample(cls, z_dim, n_features, rng, gamma=None):
        """Standard-normal W, phases uniform on [0, 2pi], ``gamma = 2 * z_dim``."""
        W = rng.standard_normal((z_dim, n_features))
        b = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
        return cls(W, b, 2.0 * z_dim if gamma is None else gamma)


def rff_expand(z, proj):
    """``sqrt(2/K) cos(sqrt(2/gamma) z W + b)``; approximates exp(-||dz||^2/gamma)."""
    z = T.tensor(z)
    if z.shape[-1] != proj.W.shape[0]:
        raise DimensionError(f"z width {z.shape[-1]} != projection rows {proj.W.shape[0]}")
    squeeze = z.ndim == 1
    if squeeze:
        z = T.reshape(z, (1, z.shape[0]))
    scale = np.sqrt(2.0 / proj.gamma)
    phi = np.sqrt(2.0 / proj.n_features) * T.cos((z * scale) @ proj.W + proj.b)
    return T.reshape(phi, (proj.n_features,)) if squeeze else phi


def _weighted_mean_rows(x, w):
    if w is None:
        return T.tmean(x, axis=0)
    w = np.asarray(w, dtype=np.float64)
    return T.tsum(x * (w / w.sum())[:, None], axis=0)


def mmd_fast(z0, z1, proj, w0=None, w1=None):
    """Squared distance between the group means of the random features.

    Optional non-negative row weights ``w0``/``w1`` give weighted means. An
    empty (or zero-weight) group yields 0 with a warning.
    """
    z0, z1 = T.tensor(z0), T.tensor(z1)
    empty = [len(z) == 0 or (w is not None and np.sum(w) <= 0)
             for z, w in ((z0, w0), (z1, w1))]
    if any(empty):
        log.warning("mmd_fast: a sensitive group is empty in this batch; penalty skipped")
        return T.Tensor(0.0)
    diff = _weighted_mean_rows(rff_expand(z0, proj), w0) - _weighted_mean_rows(rff_expand(z1, proj), w1)
    return T.tsum(T.square(diff))


def _offdiag_mean(kmat, w_row, w_col, same):
    if w_row is None:
        w_row = np.ones(kmat.shape[0])
    if w_col is None:
        w_col = np.ones(kmat.shape[1])
    ww = np.outer(w_row, w_col)
    if same:
        np.fill_diagonal(ww, 0.0)
    return T.tsum(kmat * (ww / ww.sum()))


def mmd_unbiased(z0, z1, kernel, w0=None, w1=None):
    """Unbiased MMD^2: within-group kernel means over distinct pairs plus the
    cross term. Weights generalize the pair averages (unit weights recover
    the standard U-statistic)."""
    z0, z1 = T.tensor(z0), T.tensor(z1)
    if len(z0) < 2 or len(z1) < 2:
        raise ValueError("mmd_unbiased needs >= 2 samples per group; use mmd_fast for tiny groups")
    g = kernel.gamma
    k00 = _offdiag_mean(T.rbf_gram(z0, z0, g), w0, w0, True)
    k11 = _offdiag_mean(T.rbf_gram(z1, z1, g), w1, w1, True)
    k01 = _offdiag_mean(T.rbf_gram(z0, z1, g), w0, w1, False)
    return k00 + k11 - 2.0 * k01


def mi_rows(q_used, q_by_s, z1, qs_probs):
    """Per-row ``log q(z1|x,s) - log sum_s' q(s'|x) q(z1|x,s')``.

    ``q_used`` is the conditional ``z1`` was drawn from, ``q_by_s`` lists
    ``q(z1|x, s')`` for every class and ``qs_probs`` is ``q(s|x)``, held
    constant so the penalty only moves the encoder.
    """
    log_q = T.stack([dist.gaussian_logpdf(z1, q) for q in q_by_s], axis=1)
    log_pi = np.log(np.maximum(np.asarray(qs_probs, dtype=np.float64), dist.PROB_FLOOR))
    out = dist.gaussian_logpdf(z1, q_used) - T.logsumexp(log_q + log_pi, axis=1)
    bad = ~np.isfinite(out.data)
    if np.any(bad):
        raise NonFiniteError(f"mi penalty non-finite at rows {np.flatnonzero(bad)[:5]}")
    return out


def conditionals_z1(model, x, P=None):
    """``q(z1 | x, s')`` for each class s' (no sampling)."""
    n, S, M1 = len(x), model.config.s_dim, model.config.z1_dim
    zeros = np.zeros((n, M1))
    return [encode_z1(model, x, one_hot(np.full(n, k), S), zeros, P)[0] for k in range(S)]


def mi_penalty(x, model, rng, s=None, P=None):
    """Monte-Carlo conditional MI between z1 and s given x, averaged over rows.

    With observed ``s`` one z1 is drawn from ``q(z1|x,s)``; otherwise the outer
    expectation over ``q(s|x)`` is enumerated with one z1 draw per class.
    """
    x = np.asarray(x, dtype=np.float64)
    n, S, M1 = len(x), model.config.s_dim, model.config.z1_dim
    qs = classify_s(model, x, P).probs.data
    conds = conditionals_z1(model, x, P)
    if s is not None:
        q_used, z1 = encode_z1(model, x, one_hot(s, S), rng.standard_normal((n, M1)), P)
        return T.tmean(mi_rows(q_used, conds, z1, qs))
    total = 0.0
    for k in range(S):
        z1 = dist.gaussian_sample(conds[k], rng.standard_normal((n, M1)))
        total = total + mi_rows(conds[k], conds, z1, qs) * qs[:, k]
    return T.tmean(total)
