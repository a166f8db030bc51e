"""Command-line entry point: ``hvfae run | sweep | table | fetch-data``."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from hvfae import data as data_mod
from hvfae.experiment import ExperimentConfig, run
from hvfae.tensor import NonFiniteError

log = logging.getLogger("hvfae")

SWEEP_FIELDS = ("model", "penalty", "dataset", "lambda_reg", "fraction_observed", "init_seed",
                "y_acc", "s_audit_acc", "ds", "y_majority", "s_majority", "best_epoch",
                "wall_clock_s", "status", "error", "record")

TABLE_COLUMNS = ("German Y", "Adult Y", "German S", "Adult S", "German DS", "Adult DS")
MODEL_ORDER = ("VFAE", "H-VFAE", "H-VFAE + VP")


def parse_override(text):
    """``key=value`` with the value parsed as YAML (so numbers, lists and
    booleans come out typed). Dotted keys address nested dicts."""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def apply_overrides(d, overrides):
    d = dict(d)
    for key, value in overrides:
        parts = key.split(".")
        node = d
        for p in parts[:-1]:
            node[p] = dict(node.get(p) or {})
            node = node[p]
        node[parts[-1]] = value
    return d


def read_config_file(path):
    with open(path) as f:
        loaded = yaml.safe_load(f)
    return loaded if loaded is not None else {}


def build_config(d):
    d = dict(d)
    for k in ("hidden", "classifier_hidden"):
        if isinstance(d.get(k), list):
            d[k] = tuple(d[k])
    return ExperimentConfig.from_dict(d)


def expand_sweep(spec):
    """A sweep file is a list of configs or ``{base: {...}, grid: {key: [..]}}``.

    Grid keys are expanded as a cartesian product in sorted key order.
    """
    if isinstance(spec, list):
        return [dict(c) for c in spec]
    if not isinstance(spec, dict) or "base" not in spec and "grid" not in spec:
        raise ValueError("sweep spec must be a list of configs or have 'base'/'grid'")
    base = dict(spec.get("base") or {})
    grid = spec.get("grid") or {}
    keys = sorted(grid)
    out = []
    for values in itertools.product(*(grid[k] for k in keys)):
        out.append(apply_overrides(base, list(zip(keys, values))))
    return out


def _run_one(args):
    raw, output_dir, index = args
    row = {k: "" for k in SWEEP_FIELDS}
    row.update({"dataset": str(raw.get("dataset", "")) if isinstance(raw, dict) else "",
                "penalty": raw.get("penalty", "") if isinstance(raw, dict) else ""})
    try:
        cfg_d = dict(raw)
        cfg_d.setdefault("output_dir", output_dir)
        cfg_d.setdefault("name", f"sweep_{index:03d}")
        cfg = build_config(cfg_d)
        rec = run(cfg)
        rep = rec["report"]
        row.update({
            "model": cfg.model_label, "penalty": cfg.penalty, "dataset": cfg.dataset,
            "lambda_reg": cfg.lambda_reg, "fraction_observed": cfg.fraction_observed,
            "init_seed": cfg.init_seed, "y_acc": rep["y_acc"], "s_audit_acc": rep["s_audit_acc"],
            "ds": rep["ds"], "y_majority": rep["y_majority"], "s_majority": rep["s_majority"],
            "best_epoch": rec["best_epoch"], "wall_clock_s": round(rec["wall_clock_s"], 2),
            "status": "ok", "record": f"{cfg.name}.json",
        })
    except Exception as exc:  # one bad config must not stop the sweep
        row.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
    return row


def _sort_key(row):
    return (str(row["model"]), str(row["penalty"]), str(row["dataset"]),
            float(row["lambda_reg"] or 0), float(row["fraction_observed"] or 0),
            int(row["init_seed"] or 0))


def sweep(configs, output_dir, jobs=1):
    """Run every config; returns the rows written to ``output_dir/sweep.csv``."""
    tasks = [(c, output_dir, i) for i, c in enumerate(configs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, tasks))
    else:
        rows = [_run_one(t) for t in tasks]
    rows.sort(key=_sort_key)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        w.writerows(rows)
    return rows


def _row_label(record):
    cfg = record["config"]
    label = build_config({k: v for k, v in cfg.items()}).model_label
    return label


def collect_table(run_dir, mode):
    """Aggregate run records into ``{row label: {column: mean value}}``.

    ``mode="supervised"`` keeps runs with every s observed, ``"partial"`` the
    rest. Several runs in one cell (seeds, lambda values) are averaged; the
    Random row uses the majority rates of the test split.
    """
    if mode not in ("supervised", "partial"):
        raise ValueError("mode must be 'supervised' or 'partial'")
    cells, random = {}, {}
    for path in sorted(Path(run_dir).glob("*.json")):
        try:
            rec = json.loads(path.read_text())
            cfg, rep = rec["config"], rec["report"]
        except (json.JSONDecodeError, KeyError, TypeError):
            continue
        partial = cfg.get("fraction_observed", 1.0) < 1.0
        if partial != (mode == "partial"):
            continue
        ds_name = {"german": "German", "adult": "Adult"}.get(cfg.get("dataset"))
        if ds_name is None:
            continue
        label = _row_label(rec)
        for col, key in (("Y", "y_acc"), ("S", "s_audit_acc"), ("DS", "ds")):
            cells.setdefault(label, {}).setdefault(f"{ds_name} {col}", []).append(rep[key])
        random.setdefault(f"{ds_name} Y", []).append(rep["y_majority"])
        random.setdefault(f"{ds_name} S", []).append(rep["s_majority"])
    table = {}
    if random:
        table["Random"] = {k: float(np.mean(v)) for k, v in random.items()}
    for penalty in ("", " + MMD", " + MI"):
        for model in MODEL_ORDER:
            label = model + penalty
            if label in cells:
                table[label] = {k: float(np.mean(v)) for k, v in cells[label].items()}
    return table


def format_table(table):
    head = ["Model", *TABLE_COLUMNS]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for label, vals in table.items():
        cols = [f"{vals[c]:.1f}" if c in vals else "" for c in TABLE_COLUMNS]
        lines.append("| " + " | ".join([label, *cols]) + " |")
    return "\n".join(lines)


def _cmd_run(args):
    d = read_config_file(args.config) if args.config else {}
    d = apply_overrides(d, args.set or [])
    if args.output_dir:
        d["output_dir"] = args.output_dir
    cfg = build_config(d)

    def progress(epoch, row):
        if args.verbose:
            print(f"epoch {epoch:4d}  elbo {row['elbo']:.4f}  penalty {row['penalty']:.5f}", flush=True)

    rec = run(cfg, progress=progress)
    rep = rec["report"]
    print(f"{rep['model']} on {rep['dataset']}: y_acc {rep['y_acc']:.2f}  "
          f"s_audit_acc {rep['s_audit_acc']:.2f}  ds {rep['ds']:.2f}  "
          f"(baselines y {rep['y_majority']:.1f}, s {rep['s_majority']:.1f})")
    print(f"record: {Path(cfg.output_dir) / ((cfg.name or 'run_' + rec['run_id']) + '.json')}")
    return 0


def _cmd_sweep(args):
    spec = read_config_file(args.spec)
    configs = [apply_overrides(c, args.set or []) for c in expand_sweep(spec)]
    rows = sweep(configs, args.output_dir, jobs=args.jobs)
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} runs, {len(failed)} failed -> {Path(args.output_dir) / 'sweep.csv'}")
    for r in failed:
        print(f"  failed: {r['error']}")
    return 0


def _cmd_table(args):
    print(format_table(collect_table(args.run_dir, args.mode)))
    return 0


def _cmd_fetch(args):
    written = data_mod.fetch(args.dest)
    dest = args.dest or data_mod.data_dir()
    print(f"fetched {', '.join(written)} into {dest}" if written else f"raw files in {dest} are up to date")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hvfae", description="Fair representation learning experiments.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate one configuration")
    r.add_argument("config", nargs="?", help="YAML or JSON config file")
    r.add_argument("--set", action="append", type=parse_override, metavar="KEY=VALUE")
    r.add_argument("--output-dir")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run a list or grid of configurations")
    s.add_argument("spec", help="YAML/JSON: list of configs or {base, grid}")
    s.add_argument("--output-dir", default="runs/sweep")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--set", action="append", type=parse_override, metavar="KEY=VALUE")
    s.set_defaults(func=_cmd_sweep)

    t = sub.add_parser("table", help="summarize run records as a results table")
    t.add_argument("run_dir")
    t.add_argument("--mode", choices=("supervised", "partial"), default="supervised")
    t.set_defaults(func=_cmd_table)

    f = sub.add_parser("fetch-data", help="download and verify the raw UCI files")
    f.add_argument("--dest", default=None)
    f.set_defaults(func=_cmd_fetch)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except data_mod.MissingDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteError as exc:
        print(f"error: non-finite value during training: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
