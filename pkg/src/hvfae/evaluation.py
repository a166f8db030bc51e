"""Fairness audit of a trained model: y-accuracy of ``q(y|z1)``, accuracy of
a logistic-regression probe predicting s from z1, and the discrimination
score (gap between group-average positive-class probabilities)."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from hvfae.models import classify_y, encode_z1, one_hot

log = logging.getLogger(__name__)


def extract_z1(model, dataset, split):
    """Posterior means of ``q(z1 | x, s)`` on one split, using the true s."""
    X, _, s = dataset.part(split)
    q, _ = encode_z1(model, X, one_hot(s, model.config.s_dim), np.zeros((len(X), model.config.z1_dim)))
    return q.mean.data.copy()


@dataclass
class LogisticProbe:
    mean: np.ndarray
    scale: np.ndarray
    w: np.ndarray
    b: float
    iterations: int
    converged: bool

    def predict_proba(self, features):
        z = ((features - self.mean) / self.scale) @ self.w + self.b
        return np.exp(-np.logaddexp(0.0, -z))

    def accuracy(self, features, labels):
        return float(np.mean((self.predict_proba(features) > 0.5) == (labels == 1)))


def train_probe(features, labels, l2=1e-4, max_iter=5000, tol=1e-6, standardize=False):
    """L2-regularized logistic regression by gradient descent from zero.

    The step size is the inverse Lipschitz constant of the loss gradient.
    With ``standardize=True`` features are z-scored with the training
    statistics first, which makes the probe far more sensitive to small
    shifts along low-variance directions.
    """
    X = np.asarray(features, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64)
    mean = np.zeros(X.shape[1])
    scale = np.ones(X.shape[1])
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
    Z = (X - mean) / scale
    n, d = Z.shape
    A = np.hstack([Z, np.ones((n, 1))])
    lip = np.linalg.norm(A, 2) ** 2 / (4.0 * n) + l2
    step = 1.0 / lip
    theta = np.zeros(d + 1)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = np.exp(-np.logaddexp(0.0, -(A @ theta)))
        g = A.T @ (p - t) / n
        g[:d] += l2 * theta[:d]
        if np.linalg.norm(g) < tol:
            converged = True
            break
        theta -= step * g
    if max_iter == 0:
        it = 0
    if not converged and max_iter > 0:
        log.warning("probe did not reach grad-norm %.0e in %d iterations", tol, max_iter)
    return LogisticProbe(mean, scale, theta[:d], float(theta[d]), it, converged)


def discrimination_score(probs, s):
    """100 * |mean p(y=1) over s=0 - mean p(y=1) over s=1|."""
    probs = np.asarray(probs, dtype=np.float64)
    s = np.asarray(s)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    g0, g1 = probs[s == 0], probs[s == 1]
    if len(g0) == 0 or len(g1) == 0:
        raise ValueError("discrimination score needs both sensitive groups")
    return 100.0 * abs(g0.mean() - g1.mean())


def majority_rate(labels):
    labels = np.asarray(labels)
    return 100.0 * max(np.mean(labels == 1), np.mean(labels == 0))


@dataclass
class EvalReport:
    model: str
    dataset: str
    split: str
    y_acc: float
    s_audit_acc: float
    ds: float
    y_majority: float
    s_majority: float
    probe_converged: bool = True
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    CSV_FIELDS = ("model", "dataset", "split", "y_acc", "s_audit_acc", "ds",
                  "y_majority", "s_majority", "probe_converged")

    def to_csv_row(self, header=False):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, extrasaction="ignore")
        if header:
            w.writeheader()
        w.writerow(self.to_dict())
        return buf.getvalue()


def evaluate(model, dataset, split="test", probe_kwargs=None, config=None):
    """Metrics on ``split``; the probe is always fit on train-split features."""
    probe_kwargs = probe_kwargs or {}
    z_train = extract_z1(model, dataset, "train")
    _, _, s_train = dataset.part("train")
    z = extract_z1(model, dataset, split)
    _, y, s = dataset.part(split)
    p_y = classify_y(model, z).probs.data
    probe = train_probe(z_train, s_train, **probe_kwargs)
    return EvalReport(
        model=model.config.label,
        dataset=dataset.provenance.get("source", "?"),
        split=split,
        y_acc=100.0 * float(np.mean(p_y.argmax(axis=1) == y)),
        s_audit_acc=100.0 * probe.accuracy(z, s),
        ds=discrimination_score(p_y[:, 1], s),
        y_majority=majority_rate(y),
        s_majority=majority_rate(s),
        probe_converged=probe.converged,
        config=dict(config or {}),
    )
