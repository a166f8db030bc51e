"""Training objective with partially observed sensitive variables.

Rows whose ``s`` is observed contribute the supervised bound plus the
log-likelihood of the s-classifier ``q(s|x)``; the remaining rows contribute
the unsupervised bound, where ``s`` is marginalized under ``q(s|x)``. The
fairness penalty is subtracted, computed on the z1 samples already drawn
for the bounds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from hvfae import distributions as dist
from hvfae import regularizers as reg
from hvfae import tensor as T
from hvfae.models import ElboTerms, classify_s, elbo_rows, one_hot

log = logging.getLogger(__name__)

PENALTIES = ("none", "mmd", "mi")


@dataclass
class SupervisionMask:
    observed: np.ndarray
    fraction: float
    seed: int

    @property
    def n_observed(self):
        return int(self.observed.sum())


def make_mask(n, fraction, s, seed):
    """Stratified choice of rows whose ``s`` is revealed.

    ``floor(n * fraction)`` rows are observed; each class gets the floor of
    its proportional share, leftovers go to the largest remainders, and every
    class keeps at least one observed row.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    s = np.asarray(s, dtype=np.int64)
    if len(s) != n:
        raise ValueError("s must have n entries")
    classes, counts = np.unique(s, return_counts=True)
    total = math.floor(n * fraction + 1e-9)
    if total < len(classes):
        raise ValueError(f"fraction * n = {n * fraction:g} is smaller than the number of s classes")
    if total == n:
        return SupervisionMask(np.ones(n, dtype=bool), float(fraction), seed)
    share = counts * total / n
    per_class = np.maximum(np.floor(share).astype(int), 1)
    while per_class.sum() > total:
        per_class[np.argmax(per_class - share)] -= 1
    remainder = share - per_class
    for i in np.argsort(-remainder, kind="stable")[: total - per_class.sum()]:
        per_class[i] += 1
    rng = np.random.Generator(np.random.PCG64(seed))
    observed = np.zeros(n, dtype=bool)
    for c, k in zip(classes, per_class):
        rows = np.flatnonzero(s == c)
        observed[rng.choice(rows, size=k, replace=False)] = True
    return SupervisionMask(observed, float(fraction), seed)


@dataclass
class ObjectiveConfig:
    lambda_reg: float = 0.0
    penalty: str = "none"
    prior_s: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    mmd_estimator: str = "fast"
    rff: reg.RffProjection | None = None
    unsup_mode: str = "enumerate"
    temperature: float = 0.66

    def __post_init__(self):
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.mmd_estimator not in ("fast", "exact"):
            raise ValueError("mmd_estimator must be 'fast' or 'exact'")
        if self.unsup_mode not in ("enumerate", "concrete"):
            raise ValueError("unsup_mode must be 'enumerate' or 'concrete'")
        self.prior_s = np.asarray(self.prior_s, dtype=np.float64)
        if self.penalty == "mmd" and self.mmd_estimator == "fast" and self.rff is None:
            raise ValueError("fast MMD needs an RffProjection")


def empirical_prior(s, observed, n_classes=2, uniform=False):
    if uniform:
        return np.full(n_classes, 1.0 / n_classes)
    counts = np.bincount(np.asarray(s)[observed], minlength=n_classes).astype(float)
    return counts / counts.sum()


@dataclass
class UnsupPart:
    """Unsupervised-bound pieces for the unobserved rows."""

    value: object
    rows: list
    weights: list
    q_s: np.ndarray


def unsup_bound(model, x, y, rng, prior_s, P=None, mode="enumerate", temperature=0.66):
    """``E_{q(s|x)}[L_s(x, y, s)] - KL(q(s|x) || p(s))`` per row.

    ``mode="enumerate"`` sums over s exactly (one bound per class, noise drawn
    class by class); ``mode="concrete"`` feeds one relaxed one-hot sample.
    """
    x = np.asarray(x, dtype=np.float64)
    n, S = len(x), model.config.s_dim
    qs = classify_s(model, x, P)
    kl = dist.kl_categorical(qs, dist.CategoricalDist.from_probs(prior_s))
    if mode == "enumerate":
        rows, weights, value = [], [], 0.0
        for k in range(S):
            r = elbo_rows(model, x, y, np.full(n, k), rng, P)
            rows.append(r)
            weights.append(qs.probs[:, k])
            value = value + qs.probs[:, k] * r.total
    else:
        soft = dist.concrete_sample(qs.log_probs, temperature, dist.gumbel_noise(rng, (n, S)))
        r = elbo_rows(model, x, y, soft, rng, P)
        rows, weights, value = [r], [None], r.total
    return UnsupPart(value - kl, rows, weights, qs.probs.data)


def _penalty(model, cfg, x_obs, s_obs, obs_rows, x_un, un, P):
    S = model.config.s_dim
    if cfg.penalty == "mi":
        parts = []
        if obs_rows is not None:
            conds = reg.conditionals_z1(model, x_obs, P)
            qs = classify_s(model, x_obs, P).probs.data
            parts.append(reg.mi_rows(obs_rows.q_z1, conds, obs_rows.z1, qs))
        if un is not None:
            conds = reg.conditionals_z1(model, x_un, P)
            acc = 0.0
            for r, w in zip(un.rows, un.weights):
                term = reg.mi_rows(r.q_z1, conds, r.z1, un.q_s)
                acc = acc + (term if w is None else term * w.data)
            parts.append(acc)
        return T.tmean(T.concat(parts, axis=0)) if len(parts) > 1 else T.tmean(parts[0])

    # MMD: every z1 sample enters the mean of group g with weight
    # 1[s_obs == g] for observed rows, q(g|x) for unobserved rows.
    if un is None:
        return _mmd_groups(model, cfg, obs_rows.z1, s_obs)
    zs, ws = [], []
    if obs_rows is not None:
        zs.append(obs_rows.z1)
        ws.append(one_hot(s_obs, S))
    if un is not None:
        for k, r in enumerate(un.rows):
            zs.append(r.z1)
            w = np.zeros((len(x_un), S))
            if len(un.rows) == 1:
                w[:] = un.q_s
            else:
                w[:, k] = un.q_s[:, k]
            ws.append(w)
    z_all = T.concat(zs, axis=0) if len(zs) > 1 else zs[0]
    w_all = np.concatenate(ws, axis=0)
    total = T.Tensor(0.0)
    for a in range(S):
        for b in range(a + 1, S):
            wa, wb = w_all[:, a], w_all[:, b]
            ia, ib = wa > 0, wb > 0
            if cfg.mmd_estimator == "fast":
                total = total + reg.mmd_fast(z_all[np.flatnonzero(ia)], z_all[np.flatnonzero(ib)],
                                             cfg.rff, wa[ia], wb[ib])
            elif ia.sum() < 2 or ib.sum() < 2:
                log.warning("exact MMD: group with < 2 rows in this batch; penalty skipped")
            else:
                kernel = reg.KernelSpec.matching_rff(model.config.z1_dim)
                total = total + reg.mmd_unbiased(z_all[np.flatnonzero(ia)], z_all[np.flatnonzero(ib)],
                                                 kernel, wa[ia], wb[ib])
    return total


def _mmd_groups(model, cfg, z1, s):
    """Unweighted MMD summed over all pairs of s classes."""
    total = T.Tensor(0.0)
    for a in range(model.config.s_dim):
        for b in range(a + 1, model.config.s_dim):
            za, zb = z1[np.flatnonzero(s == a)], z1[np.flatnonzero(s == b)]
            if cfg.mmd_estimator == "fast":
                total = total + reg.mmd_fast(za, zb, cfg.rff)
            elif len(za) < 2 or len(zb) < 2:
                log.warning("exact MMD: group with < 2 rows in this batch; penalty skipped")
            else:
                total = total + reg.mmd_unbiased(za, zb, reg.KernelSpec.matching_rff(model.config.z1_dim))
    return total


def supervised_objective(model, x, y, s, cfg, rng, P=None):
    """Fully supervised objective: mean of ``L_s + log q(s|x)`` minus the
    weighted penalty. Noise use matches :func:`combined_objective`."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s)
    rows = elbo_rows(model, x, np.asarray(y), s, rng, P)
    qs = classify_s(model, x, P)
    ll_s = dist.categorical_logpdf(one_hot(s, model.config.s_dim), qs)
    objective = T.Tensor(0.0) + T.tmean(rows.total + ll_s)
    if cfg.penalty == "mmd":
        pen = _mmd_groups(model, cfg, rows.z1, s)
    elif cfg.penalty == "mi":
        conds = reg.conditionals_z1(model, x, P)
        pen = T.tmean(reg.mi_rows(rows.q_z1, conds, rows.z1, qs.probs.data))
    if cfg.penalty != "none" and cfg.lambda_reg != 0:
        objective = objective - cfg.lambda_reg * pen
    return objective


@dataclass
class ObjectiveSummary:
    objective: float
    terms: ElboTerms
    s_loglik: float
    unsup: float
    penalty: float


def combined_objective(model, x, y, s, observed, cfg, rng, P=None):
    """Scalar to maximize plus a float summary.

    mean over observed rows of ``[L_s + log q(s|x)]`` + mean over unobserved
    rows of ``L_u`` - ``lambda_reg * penalty``. Noise is consumed in a fixed
    order: observed bounds, unobserved bounds, nothing for the penalty.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    s = np.asarray(s)
    observed = np.asarray(observed, dtype=bool)
    if np.any(observed) and np.all(observed):
        io, iu = slice(None), None
    else:
        io = np.flatnonzero(observed) if np.any(observed) else None
        iu = np.flatnonzero(~observed)
    S = model.config.s_dim

    objective = T.Tensor(0.0)
    obs_rows, un, s_loglik, unsup_val = None, None, 0.0, 0.0
    term_rows, term_w = [], []
    x_obs = s_obs = x_un = None
    if io is not None:
        x_obs, s_obs = x[io], s[io]
        obs_rows = elbo_rows(model, x_obs, y[io], s_obs, rng, P)
        ll_s = dist.categorical_logpdf(one_hot(s_obs, S), classify_s(model, x_obs, P))
        objective = objective + T.tmean(obs_rows.total + ll_s)
        s_loglik = float(ll_s.data.mean())
        term_rows.append(obs_rows)
        term_w.append(np.ones(len(x_obs)))
    if iu is not None and len(iu) > 0:
        x_un = x[iu]
        un = unsup_bound(model, x_un, y[iu], rng, cfg.prior_s, P, cfg.unsup_mode, cfg.temperature)
        objective = objective + T.tmean(un.value)
        unsup_val = float(un.value.data.mean())
        for r, w in zip(un.rows, un.weights):
            term_rows.append(r)
            term_w.append(np.ones(len(x_un)) if w is None else w.data)

    pen_val = 0.0
    if cfg.penalty != "none":
        pen = _penalty(model, cfg, x_obs, s_obs, obs_rows, x_un, un, P)
        pen_val = float(pen.data)
        if cfg.lambda_reg != 0:
            objective = objective - cfg.lambda_reg * pen

    w = np.concatenate(term_w)
    stacked = {name: np.concatenate([getattr(r, name).data for r in term_rows])
               for name in ("recon", "kl_z2", "z1_term", "class_term")}
    terms = ElboTerms(*(float((stacked[k] * w).sum() / w.sum())
                        for k in ("recon", "kl_z2", "z1_term", "class_term")), total=0.0)
    terms.total = terms.recon - terms.kl_z2 - terms.z1_term + model.config.alpha * terms.class_term
    return objective, ObjectiveSummary(float(objective.data), terms, s_loglik, unsup_val, pen_val)
