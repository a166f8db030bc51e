"""German Credit and Adult loaders, binarization, stratified splits and a
synthetic benchmark with controllable leakage of s into x.

Binarization recipe (deterministic, serialized with every dataset):
categorical columns are one-hot encoded over the sorted set of observed
values, continuous columns become a single ``value > cut`` bit where the cut
defaults to the train-split median. The sensitive column is removed from x.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"
RAW_FILES = {
    "german.data": (f"{UCI}/statlog/german/german.data",
                    "b21f3d81db8071257d5ff1deaeba1fd4303b62712e6fcc9715c7a86202cb5871"),
    "adult.data": (f"{UCI}/adult/adult.data",
                   "5b00264637dbfec36bdeaab5676b0b309ff9eb788d63554ca0a249491c86603d"),
    "adult.test": (f"{UCI}/adult/adult.test",
                   "a2a9044bc167a35b2361efbabec64e89d69ce82d9790d2980119aac5fd7e9c05"),
}
# The same raw UCI files ship inside this PyPI wheel; used when UCI is unreachable.
MIRROR_WHEEL = ("responsibly", "0.1.2", {
    "german.data": "responsibly/dataset/german/german.data",
    "adult.data": "responsibly/dataset/adult/adult.data",
    "adult.test": "responsibly/dataset/adult/adult.test",
})

GERMAN_COLUMNS = [
    ("checking_status", "categorical"), ("duration", "continuous"),
    ("credit_history", "categorical"), ("purpose", "categorical"),
    ("credit_amount", "continuous"), ("savings", "categorical"),
    ("employment_since", "categorical"), ("installment_rate", "continuous"),
    ("personal_status_sex", "categorical"), ("other_debtors", "categorical"),
    ("residence_since", "continuous"), ("property", "categorical"),
    ("age", "continuous"), ("other_installment_plans", "categorical"),
    ("housing", "categorical"), ("existing_credits", "continuous"),
    ("job", "categorical"), ("people_liable", "continuous"),
    ("telephone", "categorical"), ("foreign_worker", "categorical"),
    ("credit_label", "label"),
]

ADULT_COLUMNS = [
    ("age", "continuous"), ("workclass", "categorical"), ("fnlwgt", "continuous"),
    ("education", "categorical"), ("education_num", "continuous"),
    ("marital_status", "categorical"), ("occupation", "categorical"),
    ("relationship", "categorical"), ("race", "categorical"), ("sex", "categorical"),
    ("capital_gain", "continuous"), ("capital_loss", "continuous"),
    ("hours_per_week", "continuous"), ("native_country", "categorical"),
    ("income", "label"),
]


class SchemaError(ValueError):
    """Raw table does not match the columns a recipe expects."""


class MissingDataError(FileNotFoundError):
    pass


def data_dir():
    return Path(os.environ.get("HVFAE_DATA_DIR", "data"))


@dataclass
class ColumnRule:
    name: str
    kind: str  # "onehot" | "threshold"
    categories: list = field(default_factory=list)
    cut: float | None = None


@dataclass
class PreprocessRecipe:
    source: str
    columns: list
    label_column: str
    label_positive: str
    sensitive_column: str
    sensitive_kind: str  # "threshold" (s = value > cut) or "category" (s = value == positive)
    sensitive_cut: float | None = None
    sensitive_positive: str | None = None

    def source_columns(self):
        return sorted([c.name for c in self.columns] + [self.label_column, self.sensitive_column])

    def resolved(self):
        return all(c.cut is not None for c in self.columns if c.kind == "threshold") and all(
            c.categories for c in self.columns if c.kind == "onehot")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["columns"] = [ColumnRule(**c) for c in d["columns"]]
        return cls(**d)

    def hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def feature_names(self):
        names = []
        for c in self.columns:
            if c.kind == "onehot":
                names += [f"{c.name}={v}" for v in c.categories]
            else:
                names.append(f"{c.name}>{c.cut:g}")
        return names


def german_recipe(age_cut=25.0):
    cols = [ColumnRule(n, "onehot" if k == "categorical" else "threshold")
            for n, k in GERMAN_COLUMNS if k != "label" and n != "age"]
    return PreprocessRecipe("german", cols, "credit_label", "1", "age", "threshold",
                            sensitive_cut=age_cut)


def adult_recipe():
    cols = [ColumnRule(n, "onehot" if k == "categorical" else "threshold")
            for n, k in ADULT_COLUMNS if k != "label" and n != "sex"]
    return PreprocessRecipe("adult", cols, "income", ">50K", "sex", "category",
                            sensitive_positive="Male")


@dataclass
class TabularDataset:
    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    split: np.ndarray
    feature_names: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.s = np.asarray(self.s, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=object)
        n = len(self.X)
        if not (len(self.y) == len(self.s) == len(self.split) == n):
            raise ValueError("X, y, s and split must have the same number of rows")
        if not np.all((self.X == 0) | (self.X == 1)):
            raise ValueError("X must be binary")
        if not set(np.unique(self.split)) <= set(SPLITS):
            raise ValueError(f"split tags must be in {SPLITS}")

    @property
    def n_features(self):
        return self.X.shape[1]

    def part(self, name):
        m = self.split == name
        return self.X[m], self.y[m], self.s[m]

    def split_counts(self):
        return {k: int(np.sum(self.split == k)) for k in SPLITS}


def apply_recipe(frame, recipe):
    """Binarize a raw table. Unresolved cuts/categories are fitted on the rows
    flagged ``fit_rows`` (a boolean column, default all rows) and the
    resolved recipe is returned alongside."""
    expected = recipe.source_columns()
    present = sorted(c for c in frame.columns if c != "fit_rows")
    if present != expected:
        missing = sorted(set(expected) - set(present))
        extra = sorted(set(present) - set(expected))
        raise SchemaError(f"{recipe.source} recipe: missing columns {missing}, unexpected {extra}")
    fit = frame["fit_rows"].to_numpy(bool) if "fit_rows" in frame else np.ones(len(frame), bool)
    rules, blocks = [], []
    for c in recipe.columns:
        col = frame[c.name]
        if c.kind == "onehot":
            cats = list(c.categories) or sorted(col.astype(str).unique())
            vals = col.astype(str).to_numpy()
            unknown = set(vals) - set(cats)
            if unknown:
                raise SchemaError(f"column {c.name}: categories {sorted(unknown)} not in recipe")
            blocks.append((vals[:, None] == np.array(cats)[None, :]).astype(np.float64))
            rules.append(ColumnRule(c.name, "onehot", cats, None))
        elif c.kind == "threshold":
            vals = pd.to_numeric(col, errors="raise").to_numpy(np.float64)
            cut = c.cut if c.cut is not None else float(np.median(vals[fit]))
            blocks.append((vals > cut).astype(np.float64)[:, None])
            rules.append(ColumnRule(c.name, "threshold", [], cut))
        else:
            raise SchemaError(f"unknown rule kind {c.kind!r}")
    resolved = PreprocessRecipe(**{**asdict(recipe), "columns": rules})
    X = np.concatenate(blocks, axis=1)
    y = (frame[recipe.label_column].astype(str).str.strip().str.rstrip(".")
         == recipe.label_positive).to_numpy(np.int64)
    sens = frame[recipe.sensitive_column]
    if recipe.sensitive_kind == "threshold":
        s = (pd.to_numeric(sens).to_numpy(np.float64) > recipe.sensitive_cut).astype(np.int64)
    else:
        s = (sens.astype(str) == recipe.sensitive_positive).to_numpy(np.int64)
    return X, y, s, resolved


def _require(path):
    if not Path(path).exists():
        raise MissingDataError(
            f"{path} not found. Run `hvfae fetch-data --dest {Path(path).parent}` "
            f"or set HVFAE_DATA_DIR to a directory holding the raw UCI files.")
    return path


def read_german_raw(directory=None):
    path = _require(Path(directory or data_dir()) / "german.data")
    frame = pd.read_csv(path, sep=r"\s+", header=None, dtype=str)
    if frame.shape != (1000, 21):
        raise SchemaError(f"german.data: expected 1000 x 21, got {frame.shape}")
    frame.columns = [n for n, _ in GERMAN_COLUMNS]
    return frame


def read_adult_raw(directory=None):
    d = Path(directory or data_dir())
    names = [n for n, _ in ADULT_COLUMNS]
    frames = []
    for fname, skip in (("adult.data", 0), ("adult.test", 1)):
        f = pd.read_csv(_require(d / fname), header=None, names=names, skiprows=skip,
                        skipinitialspace=True, dtype=str)
        f = f.dropna(how="any")
        f["is_test"] = fname == "adult.test"
        frames.append(f)
    frame = pd.concat(frames, ignore_index=True)
    if frame.shape[1] != 16:
        raise SchemaError(f"adult: expected 15 columns, got {frame.shape[1] - 1}")
    return frame


def _stratified_assign(strata, ratios, rng):
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError("split ratios must be non-negative and sum to 1")
    out = np.empty(len(strata), dtype=object)
    for key in sorted(set(strata)):
        rows = np.flatnonzero(strata == key)
        rows = rows[rng.permutation(len(rows))]
        share = ratios * len(rows)
        counts = np.floor(share).astype(int)
        for i in np.argsort(-(share - counts), kind="stable")[: len(rows) - counts.sum()]:
            counts[i] += 1
        start = 0
        for name, c in zip(SPLITS, counts):
            out[rows[start:start + c]] = name
            start += c
    return out


def split(dataset, ratios=(0.6, 0.2, 0.2), seed=0, rows=None):
    """Stratified on (y, s); ``rows`` restricts re-assignment to a subset."""
    rng = np.random.Generator(np.random.PCG64(seed))
    tags = dataset.split.copy()
    idx = np.arange(len(dataset.y)) if rows is None else np.flatnonzero(rows)
    strata = dataset.y[idx] * 2 + dataset.s[idx]
    tags[idx] = _stratified_assign(strata, ratios, rng)
    prov = {**dataset.provenance, "split_ratios": list(ratios), "split_seed": seed}
    return TabularDataset(dataset.X, dataset.y, dataset.s, tags, dataset.feature_names, prov)


def load_german(recipe=None, directory=None, ratios=(0.6, 0.2, 0.2), seed=0):
    recipe = recipe or german_recipe()
    frame = read_german_raw(directory)
    y = (frame["credit_label"] == recipe.label_positive).to_numpy(np.int64)
    s = (frame["age"].astype(float) > recipe.sensitive_cut).to_numpy(np.int64)
    tags = _stratified_assign(y * 2 + s, ratios, np.random.Generator(np.random.PCG64(seed)))
    frame["fit_rows"] = tags == "train"
    X, y, s, resolved = apply_recipe(frame, recipe)
    prov = {"source": "german", "recipe": resolved.to_json(), "recipe_hash": resolved.hash(),
            "split_ratios": list(ratios), "split_seed": seed}
    return TabularDataset(X, y, s, tags, resolved.feature_names(), prov)


def load_adult(recipe=None, directory=None, valid_fraction=0.2, seed=0):
    """UCI train file -> train/valid (stratified), UCI test file -> test."""
    recipe = recipe or adult_recipe()
    frame = read_adult_raw(directory)
    is_test = frame.pop("is_test").to_numpy(bool)
    y0 = (frame["income"].str.rstrip(".") == recipe.label_positive).to_numpy(np.int64)
    s0 = (frame["sex"] == recipe.sensitive_positive).to_numpy(np.int64)
    tags = np.full(len(frame), "test", dtype=object)
    tr = np.flatnonzero(~is_test)
    tags[tr] = _stratified_assign(y0[tr] * 2 + s0[tr], (1 - valid_fraction, valid_fraction, 0.0),
                                  np.random.Generator(np.random.PCG64(seed)))
    frame["fit_rows"] = tags == "train"
    X, y, s, resolved = apply_recipe(frame, recipe)
    prov = {"source": "adult", "recipe": resolved.to_json(), "recipe_hash": resolved.hash(),
            "valid_fraction": valid_fraction, "split_seed": seed}
    return TabularDataset(X, y, s, tags, resolved.feature_names(), prov)


def synth_fair(n=2000, d=12, leak=1.0, seed=0, ratios=(0.6, 0.2, 0.2), s_effect=0.3):
    """Binary testbed where s informs y and leaks into x with strength ``leak``.

    s ~ Bern(0.5); a latent score h mixes ``d - 2`` independent fair bits;
    y = 1[h + s_effect (2s - 1) + 0.3 noise > 0]. The last two columns equal
    s with probability (1 + leak) / 2, so ``leak=0`` keeps x independent of s
    and ``leak=1`` copies s into x. With the default ``s_effect`` a classifier
    that ignores s loses only a few points of accuracy.
    """
    if not 0 <= leak <= 1:
        raise ValueError("leak must be in [0, 1]")
    if d < 3:
        raise ValueError("d must be >= 3")
    rng = np.random.Generator(np.random.PCG64(seed))
    s = rng.integers(0, 2, size=n)
    fair = rng.integers(0, 2, size=(n, d - 2)).astype(np.float64)
    weights = np.linspace(1.0, 2.0, d - 2) * np.where(np.arange(d - 2) % 2 == 0, 1.0, -1.0)
    h = (fair - 0.5) @ weights
    h = h / h.std()
    y = (h + s_effect * (2 * s - 1) + 0.3 * rng.standard_normal(n) > 0).astype(np.int64)
    keep = rng.uniform(size=(n, 2)) < (1.0 + leak) / 2.0
    leaked = np.where(keep, s[:, None], 1 - s[:, None]).astype(np.float64)
    X = np.concatenate([fair, leaked], axis=1)
    tags = _stratified_assign(y * 2 + s, ratios, rng)
    names = [f"fair{i}" for i in range(d - 2)] + ["leak0", "leak1"]
    prov = {"source": "synth", "n": n, "d": d, "leak": leak, "seed": seed, "s_effect": s_effect}
    return TabularDataset(X, y, s, tags, names, prov)


def save_csv(dataset, path):
    """Headered CSV: feature columns, then y, s, split."""
    frame = pd.DataFrame(dataset.X.astype(np.int8), columns=dataset.feature_names or
                         [f"x{i}" for i in range(dataset.n_features)])
    frame["y"] = dataset.y
    frame["s"] = dataset.s
    frame["split"] = dataset.split
    frame.to_csv(path, index=False)


def load_csv(path):
    """Inverse of :func:`save_csv`; any preprocessed table in that layout works."""
    frame = pd.read_csv(path)
    if list(frame.columns[-3:]) != ["y", "s", "split"]:
        raise SchemaError(f"{path}: last three columns must be y, s, split")
    X = frame.iloc[:, :-3].to_numpy(np.float64)
    return TabularDataset(X, frame["y"].to_numpy(), frame["s"].to_numpy(),
                          frame["split"].to_numpy(object), list(frame.columns[:-3]),
                          {"source": f"csv:{path}"})


def load_dataset(name, seed=0, **kwargs):
    if name == "german":
        return load_german(seed=seed, **kwargs)
    if name == "adult":
        return load_adult(seed=seed, **kwargs)
    if name == "synth":
        return synth_fair(seed=seed, **kwargs)
    return load_csv(name)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fetch(dest=None, timeout=30):
    """Download the raw UCI files into ``dest``, verifying checksums.

    Falls back to extracting the identical files from a PyPI wheel when the
    UCI archive cannot be reached. Returns the list of files written.
    """
    dest = Path(dest or data_dir())
    dest.mkdir(parents=True, exist_ok=True)
    missing = [n for n, (_, sha) in RAW_FILES.items()
               if not (dest / n).exists() or _sha256(dest / n) != sha]
    written = []
    for name in list(missing):
        url, _ = RAW_FILES[name]
        try:
            with urllib.request.urlopen(url, timeout=timeout) as r:
                (dest / name).write_bytes(r.read())
            written.append(name)
        except OSError as exc:
            log.warning("download of %s failed (%s)", url, exc)
    missing = [n for n in missing if n not in written]
    if missing:
        written += _fetch_from_wheel(dest, missing)
    for name in written:
        if _sha256(dest / name) != RAW_FILES[name][1]:
            raise ValueError(f"checksum mismatch for {dest / name}")
    return written


def _fetch_from_wheel(dest, names):
    pkg, version, members = MIRROR_WHEEL
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
                        f"{pkg}=={version}", "-d", tmp], check=True, capture_output=True)
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as z:
            for name in names:
                with z.open(members[name]) as src, open(dest / name, "wb") as out:
                    shutil.copyfileobj(src, out)
    return list(names)
