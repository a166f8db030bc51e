"""Experiment configuration, the training loop and run records."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from hvfae import data as data_mod
from hvfae import evaluation, nn
from hvfae import regularizers as reg
from hvfae import semisup
from hvfae.models import (FairModel, ModelConfig, active_units, classify_y, encode_z1, one_hot,
                          save_checkpoint)

log = logging.getLogger(__name__)

DATASET_DEFAULTS = {
    "german": {"hidden": (60,), "z1_dim": 30, "z2_dim": 30, "epochs": 500},
    "adult": {"hidden": (100,), "z1_dim": 50, "z2_dim": 50, "epochs": 50},
    "synth": {"hidden": (32,), "z1_dim": 8, "z2_dim": 8, "epochs": 30},
}


@dataclass
class ExperimentConfig:
    dataset: str = "synth"
    variant: str = "vfae"
    prior: str = "standard_gaussian"
    alpha: float = 1.0
    lambda_reg: float = 0.0
    penalty: str = "none"
    mmd_estimator: str = "fast"
    rff_features: int = 500
    fraction_observed: float = 1.0
    n_pseudo: int = 50
    epochs: int | None = None
    batch_size: int = 100
    lr: float = 1e-3
    hidden: tuple | None = None
    classifier_hidden: tuple = ()
    z1_dim: int | None = None
    z2_dim: int | None = None
    activation: str = "softplus"
    unsup_mode: str = "enumerate"
    temperature: float = 0.66
    uniform_prior_s: bool = False
    init_seed: int = 0
    mask_seed: int = 0
    rff_seed: int = 0
    split_seed: int = 0
    eval_every: int | None = None
    selection_probe_rows: int = 5000
    probe_standardize: bool = False
    synth: dict = field(default_factory=lambda: {"n": 2000, "d": 12, "leak": 1.0})
    german_age_cut: float = 25.0
    data_dir: str | None = None
    dump_latent: bool = False
    output_dir: str = "runs"
    name: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        known = {"german", "adult", "synth"}
        if self.dataset not in known and not str(self.dataset).endswith(".csv"):
            raise ValueError(f"dataset must be one of {sorted(known)} or a .csv path")
        if self.penalty not in semisup.PENALTIES:
            raise ValueError(f"penalty must be one of {semisup.PENALTIES}")
        if not 0 < self.fraction_observed <= 1:
            raise ValueError("fraction_observed must be in (0, 1]")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size must be >= 1 and lr > 0")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        # model-level checks (variant/prior compatibility, alpha, K)
        self.model_config(x_dim=1)

    def resolved(self, key):
        value = getattr(self, key)
        if value is not None:
            return value
        return DATASET_DEFAULTS.get(self.dataset, DATASET_DEFAULTS["synth"])[key]

    def model_config(self, x_dim):
        return ModelConfig(
            x_dim=x_dim, z1_dim=self.resolved("z1_dim"), z2_dim=self.resolved("z2_dim"),
            variant=self.variant, prior=self.prior, hidden=tuple(self.resolved("hidden")),
            classifier_hidden=tuple(self.classifier_hidden), activation=self.activation,
            alpha=self.alpha, n_pseudo=self.n_pseudo)

    @property
    def model_label(self):
        label = self.model_config(1).label
        if self.penalty != "none":
            label += " + " + self.penalty.upper()
        return label

    def to_dict(self):
        d = asdict(self)
        for k in ("hidden", "classifier_hidden"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def run_id(self):
        blob = json.dumps({k: v for k, v in self.to_dict().items()
                           if k not in ("output_dir", "name", "data_dir")}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_for(cfg):
    if cfg.dataset == "german":
        return data_mod.load_german(data_mod.german_recipe(cfg.german_age_cut),
                                    directory=cfg.data_dir, seed=cfg.split_seed)
    if cfg.dataset == "adult":
        return data_mod.load_adult(directory=cfg.data_dir, seed=cfg.split_seed)
    if cfg.dataset == "synth":
        return data_mod.synth_fair(seed=cfg.split_seed, **cfg.synth)
    return data_mod.load_csv(cfg.dataset)


@dataclass
class TrainState:
    model: FairModel
    objective: semisup.ObjectiveConfig
    mask: semisup.SupervisionMask
    history: list
    selection: list
    best_epoch: int


def _select(selection, penalty):
    if not selection:
        return None
    if penalty == "none":
        return max(selection, key=lambda r: (r["y_acc"], -r["epoch"]))
    feasible = [r for r in selection if r["s_audit_acc"] <= r["s_majority"] + 2.0]
    if feasible:
        return max(feasible, key=lambda r: (r["y_acc"], -r["epoch"]))
    return min(selection, key=lambda r: (r["s_audit_acc"] - r["s_majority"], -r["y_acc"]))


def _selection_metrics(model, dataset, cfg, probe_rows):
    z_tr = evaluation.extract_z1(model, dataset, "train")
    _, _, s_tr = dataset.part("train")
    if len(z_tr) > cfg.selection_probe_rows:
        z_tr, s_tr = z_tr[probe_rows], s_tr[probe_rows]
    z = evaluation.extract_z1(model, dataset, "valid")
    _, y, s = dataset.part("valid")
    p_y = classify_y(model, z).probs.data
    probe = evaluation.train_probe(z_tr, s_tr, standardize=cfg.probe_standardize)
    return {"y_acc": 100.0 * float(np.mean(p_y.argmax(1) == y)),
            "s_audit_acc": 100.0 * probe.accuracy(z, s),
            "s_majority": evaluation.majority_rate(s),
            "ds": evaluation.discrimination_score(p_y[:, 1], s)}


def train(cfg, dataset, progress=None):
    """Fit a model to the train split of ``dataset`` and return a TrainState
    whose model holds the parameters of the selected epoch."""
    X, y, s = dataset.part("train")
    root = np.random.SeedSequence(cfg.init_seed)
    init_ss, noise_ss = root.spawn(2)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    rng = np.random.Generator(np.random.PCG64(noise_ss))

    model = FairModel.create(cfg.model_config(dataset.n_features), init_rng, init_x=X)
    mask = semisup.make_mask(len(X), cfg.fraction_observed, s, cfg.mask_seed)
    rff = None
    if cfg.penalty == "mmd" and cfg.mmd_estimator == "fast":
        rff = reg.RffProjection.sample(model.config.z1_dim, cfg.rff_features,
                                       nn.seeded_rng(cfg.rff_seed))
    obj_cfg = semisup.ObjectiveConfig(
        lambda_reg=cfg.lambda_reg, penalty=cfg.penalty,
        prior_s=semisup.empirical_prior(s, mask.observed, model.config.s_dim, cfg.uniform_prior_s),
        mmd_estimator=cfg.mmd_estimator, rff=rff, unsup_mode=cfg.unsup_mode,
        temperature=cfg.temperature)

    adam = nn.AdamState(lr=cfg.lr)
    epochs = cfg.resolved("epochs")
    eval_every = cfg.eval_every or max(1, epochs // 10)
    has_valid = np.any(dataset.split == "valid")
    probe_rows = np.sort(nn.seeded_rng(cfg.init_seed + 1).permutation(len(X))[: cfg.selection_probe_rows])

    history, selection = [], []
    best = {"epoch": 0, "params": model.params.copy()}
    n = len(X)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sums, batches = np.zeros(7), 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            holder = {}

            def loss_fn(P):
                value, summary = semisup.combined_objective(
                    model, X[idx], y[idx], s[idx], mask.observed[idx], obj_cfg, rng, P)
                holder["summary"] = summary
                return -value

            nn.grad(loss_fn, model.params)
            nn.adam_step(model.params, adam)
            sm = holder["summary"]
            t = sm.terms
            sums += [sm.objective, t.recon, t.kl_z2, t.z1_term, t.class_term, t.total, sm.penalty]
            batches += 1
        row = dict(zip(("objective", "recon", "kl_z2", "z1_term", "class_term", "elbo", "penalty"),
                       (sums / max(batches, 1)).tolist()))
        row["epoch"] = epoch
        history.append(row)
        if has_valid and (epoch % eval_every == 0 or epoch == epochs):
            metrics = _selection_metrics(model, dataset, cfg, probe_rows)
            metrics["epoch"] = epoch
            selection.append(metrics)
            chosen = _select(selection, cfg.penalty)
            if chosen["epoch"] == epoch:
                best = {"epoch": epoch, "params": model.params.copy()}
        if progress:
            progress(epoch, row)
    if selection:
        model.params = best["params"]
    else:
        best["epoch"] = epochs
    return TrainState(model, obj_cfg, mask, history, selection, best["epoch"])


def latent_dump(model, dataset, path, split="test"):
    """CSV of 2-D z1 coordinates: z1_dim0, z1_dim1, s, is_pseudo_component_mean.

    With more than two latent dimensions the first two principal axes of the
    data means are used; VampPrior pseudo-inputs are pushed through the z1
    encoder with every value of s and projected the same way.
    """
    z = evaluation.extract_z1(model, dataset, split)
    _, _, s = dataset.part(split)
    center = z.mean(axis=0)
    if z.shape[1] > 2:
        _, _, vt = np.linalg.svd(z - center, full_matrices=False)
        basis = vt[:2].T
    else:
        basis = np.eye(z.shape[1], 2)
    rows = [(c[0], c[1], int(si), 0) for c, si in zip((z - center) @ basis, s)]
    if model.config.prior == "vampprior":
        u = model.params["pseudo_inputs"]
        K = len(u)
        for sv in range(model.config.s_dim):
            q, _ = encode_z1(model, u, one_hot(np.full(K, sv), model.config.s_dim),
                             np.zeros((K, model.config.z1_dim)))
            rows += [(c[0], c[1], sv, 1) for c in (q.mean.data - center) @ basis]
    with open(path, "w") as f:
        f.write("z1_dim0,z1_dim1,s,is_pseudo_component_mean\n")
        for r in rows:
            f.write(f"{r[0]:.8g},{r[1]:.8g},{r[2]},{r[3]}\n")


def run(cfg, progress=None, write=True):
    """Train, evaluate on the test split and (optionally) write a run record."""
    t0 = time.perf_counter()
    dataset = load_for(cfg)
    state = train(cfg, dataset, progress)
    report = evaluation.evaluate(state.model, dataset, "test", config=cfg.to_dict(),
                                 probe_kwargs={"standardize": cfg.probe_standardize})
    report.model = cfg.model_label
    X, y, s = dataset.part("train")
    record = {
        "run_id": cfg.run_id(),
        "config": cfg.to_dict(),
        "seeds": {"init": cfg.init_seed, "mask": cfg.mask_seed, "rff": cfg.rff_seed,
                  "split": cfg.split_seed},
        "dataset": {k: v for k, v in dataset.provenance.items() if k != "recipe"},
        "recipe": dataset.provenance.get("recipe"),
        "mask": {"fraction": state.mask.fraction, "seed": state.mask.seed,
                 "n_observed": state.mask.n_observed},
        "prior_s": state.objective.prior_s.tolist(),
        "selection_rule": "max validation y-accuracy; with a penalty only epochs whose "
                          "validation s-audit accuracy <= s-majority + 2 qualify",
        "best_epoch": state.best_epoch,
        "history": state.history,
        "selection": state.selection,
        "report": report.to_dict(),
        "active_units": active_units(state.model, X, s, y),
        "wall_clock_s": time.perf_counter() - t0,
    }
    record["report"].pop("config", None)
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = cfg.name or f"run_{cfg.run_id()}"
        if cfg.dump_latent:
            latent_dump(state.model, dataset, out / f"{stem}_latent.csv")
            record["latent_dump"] = f"{stem}_latent.csv"
        save_checkpoint(state.model, out / f"{stem}.ckpt")
        record["checkpoint"] = f"{stem}.ckpt"
        (out / f"{stem}.json").write_text(json.dumps(record, indent=1, sort_keys=True))
    return record
