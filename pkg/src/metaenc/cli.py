"""Command-line front end.

    metaenc train   --config run.json --out runs/meta
    metaenc eval    --checkpoint runs/meta/model.ckpt --images t10k-images-idx3-ubyte.gz --k 1,100 --report eval.csv
    metaenc correct --checkpoint runs/canonical/model.ckpt --iters 4 --gamma 1e-8 --out corrected.ckpt
    metaenc compare --config compare.json --out table.csv

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage, config or input failure.
Failures print one JSON line on stderr: ``{"error": <type>, "message": ..., "exit_code": ...}``.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .autoencoder import init_autoencoder
from .checkpoint import corrected, from_checkpoint, read_checkpoint, save_model, write_checkpoint
from .data import DESK_TEST, DESK_TRAIN, Dataset, load_idx_images, load_idx_labels, split, synthetic_manifold
from .errors import CheckpointError, ConfigError, IdxFormatError, MetaencError
from .gauss_newton import GnConfig
from .metrics import evaluate_model, reconstruction_iterates
from .models import DEFAULT_HIDDEN, DEFAULT_LATENT
from .report import RunReport, compare_csv, compare_markdown, eval_csv, image_grid, pgm_bytes
from .training import TrainConfig, correct_autoencoder, train

log = logging.getLogger("metaenc")

SEED_ENV = "METAENC_SEED"
USAGE_EXIT = 2
RUNTIME_EXIT = 1

DEFAULT_DATA = {"train_images": None, "test_images": None, "train_limit": DESK_TRAIN,
                "test_limit": DESK_TEST, "full": False}
DEFAULT_SYNTHETIC = {"kind": "tanh_image", "n": 6, "r_true": 2, "N": 200, "noise": 0.0, "seed": 0,
                     "test_fraction": 0.2, "split_seed": 0}
DEFAULT_MODEL = {"hidden": DEFAULT_HIDDEN, "latent": DEFAULT_LATENT}
DEFAULT_EVAL = {"k": [1]}
TOP_LEVEL_KEYS = {"data", "model", "training", "eval", "runs"}


# -- configuration ---------------------------------------------------------

def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def _seed_override() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        seed = int(raw, 0)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None
    if not 0 <= seed < 2**64:
        raise ConfigError(f"{SEED_ENV}={raw!r} is outside the 64-bit unsigned range")
    return seed


def _training_dict(given: dict, base: dict | None = None) -> dict:
    """Training section with every default filled in, validated through TrainConfig."""
    merged = dict(base or {})
    merged.update(given)
    if "gn" in merged:
        merged["gn"] = {**GnConfig().to_dict(), **(base or {}).get("gn", {}), **given.get("gn", {})}
    seed = _seed_override()
    if seed is not None:
        merged["seed"] = seed
    return TrainConfig.from_dict(merged).to_dict()


def load_config(path) -> dict:
    """Read a JSON config and return it with all defaults filled in."""
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {os.fspath(path)} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return resolve_config(raw)


def resolve_config(raw: dict) -> dict:
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    data = raw.get("data", {})
    if "synthetic" in data:
        extra = set(data) - {"synthetic"}
        if extra:
            raise ConfigError(f"synthetic data config does not take {sorted(extra)}")
        data = {"synthetic": _merge(DEFAULT_SYNTHETIC, data["synthetic"], "data.synthetic")}
    else:
        data = _merge(DEFAULT_DATA, data, "data")
        if not data["train_images"]:
            raise ConfigError("data.train_images is required (or give data.synthetic)")
    cfg = {
        "data": data,
        "model": _merge(DEFAULT_MODEL, raw.get("model", {}), "model"),
        "training": _training_dict(raw.get("training", {})),
        "eval": _merge(DEFAULT_EVAL, raw.get("eval", {}), "eval"),
    }
    for key in ("hidden", "latent"):
        if not isinstance(cfg["model"][key], int) or cfg["model"][key] < 1:
            raise ConfigError(f"model.{key} must be a positive integer")
    cfg["eval"]["k"] = parse_k(cfg["eval"]["k"])
    if "runs" in raw:
        cfg["runs"] = _resolve_runs(raw["runs"], raw.get("training", {}))
    return cfg


def _resolve_runs(runs, shared: dict) -> list[dict]:
    if not isinstance(runs, list) or len(runs) < 2:
        raise ConfigError("compare needs a 'runs' list with at least two entries")
    out, names = [], set()
    for i, run in enumerate(runs):
        if not isinstance(run, dict) or "name" not in run:
            raise ConfigError(f"runs[{i}] must be an object with a 'name'")
        name = run["name"]
        if name in names:
            raise ConfigError(f"duplicate run name {name!r}")
        sources = [k for k in ("training", "checkpoint", "correct") if k in run]
        if len(sources) != 1:
            raise ConfigError(f"run {name!r} needs exactly one of 'training', 'checkpoint', 'correct'")
        unknown = set(run) - {"name", "training", "checkpoint", "correct", "gn"}
        if unknown:
            raise ConfigError(f"unknown keys in run {name!r}: {sorted(unknown)}")
        entry = {"name": name}
        if "training" in run:
            entry["training"] = _training_dict(run["training"], shared)
        elif "checkpoint" in run:
            entry["checkpoint"] = run["checkpoint"]
        else:
            if run["correct"] not in names:
                raise ConfigError(f"run {name!r} corrects unknown or later run {run['correct']!r}")
            try:
                entry["gn"] = GnConfig.from_dict(run.get("gn", {})).to_dict()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            entry["correct"] = run["correct"]
        names.add(name)
        out.append(entry)
    return out


def parse_k(value) -> list[int]:
    if isinstance(value, str):
        try:
            value = [int(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad k list {value!r}; expected comma-separated integers") from None
    ks = sorted({int(k) for k in value})
    if any(k < 1 for k in ks):
        raise ConfigError("k values must be >= 1")
    return ks


def load_data(data_cfg: dict) -> tuple[Dataset, Dataset]:
    if "synthetic" in data_cfg:
        s = data_cfg["synthetic"]
        full = synthetic_manifold(s["kind"], s["n"], s["r_true"], s["N"], s["noise"], s["seed"])
        return split(full, 1.0 - s["test_fraction"], s["split_seed"])
    full_set = data_cfg["full"]
    train_set = load_idx_images(data_cfg["train_images"], None if full_set else data_cfg["train_limit"],
                                split="train")
    if data_cfg["test_images"]:
        test_set = load_idx_images(data_cfg["test_images"], None if full_set else data_cfg["test_limit"],
                                   split="test")
    else:
        test_set = None
    return train_set, test_set


# -- commands ----------------------------------------------------------------

def _train_one(cfg: dict, training: dict, train_set: Dataset):
    tc = TrainConfig.from_dict(training)
    model = init_autoencoder(train_set.n, cfg["model"]["latent"], cfg["model"]["hidden"], tc.seed,
                             mode=tc.model_mode, gn=tc.gn if tc.model_mode == "gauss_newton" else None)
    return train(model, train_set, tc)


def _evaluate(model, train_set, test_set, ks):
    train_rep = evaluate_model(model, train_set, ks, name=f"{train_set.name}:train")
    test_rep = None if test_set is None else evaluate_model(model, test_set, ks, name=f"{test_set.name}:test")
    return train_rep, test_rep


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_set, test_set = load_data(cfg["data"])
    os.makedirs(args.out, exist_ok=True)
    start = time.perf_counter()
    result = _train_one(cfg, cfg["training"], train_set)
    ckpt_path = os.path.join(args.out, "model.ckpt")
    save_model(ckpt_path, result.model, cfg["training"], cfg["training"]["seed"])
    train_rep, test_rep = _evaluate(result.model, train_set, test_set, cfg["eval"]["k"])
    report = RunReport(cfg, result.history, train_rep, test_rep, time.perf_counter() - start, result.steps,
                       result.skipped_batches, extra={"version": __version__, "checkpoint": ckpt_path})
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as f:
        f.write(report.to_json())
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as f:
        f.write(report.to_csv())
    print(f"trained {cfg['training']['mode']} model: final loss {result.history[-1]:.6e}, "
          f"checkpoint {ckpt_path}")
    return 0


def _grid_rows(dataset: Dataset, count: int, labels) -> np.ndarray:
    """Indices of the samples shown in an image grid: one per digit when labels are given."""
    if labels is None:
        return np.arange(min(count, dataset.N))
    picks = [int(np.flatnonzero(labels == d)[0]) for d in range(10) if np.any(labels == d)]
    return np.array(picks[:count])


def cmd_eval(args) -> int:
    ks = parse_k(args.k)
    ckpt = read_checkpoint(args.checkpoint)
    model = from_checkpoint(ckpt)
    dataset = load_idx_images(args.images, args.limit, split="test")
    if dataset.n != model.n:
        raise ConfigError(f"images have {dataset.n} pixels but the checkpoint expects n={model.n}")
    rep = evaluate_model(model, dataset, ks, name=dataset.name)
    text = json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n" if args.report.endswith(".json") \
        else eval_csv([rep])
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(text)
    if args.grid:
        labels = None
        if args.labels:
            labels = load_idx_labels(args.labels)[:dataset.N]
        idx = _grid_rows(dataset, args.grid_count, labels)
        X = dataset.samples[idx]
        iterates = reconstruction_iterates(model, X, ks)
        grid = image_grid([X, *(iterates[k] for k in ks)], dataset.image_shape, dataset.scale, dataset.offset)
        with open(args.grid, "wb") as f:
            f.write(pgm_bytes(grid))
    print(f"{rep.mode}: mse {rep.mse:.6e} sr_mse {rep.sr_mse:.6e} ri_residual {rep.ri_residual:.6e}")
    return 0


def cmd_correct(args) -> int:
    try:
        gn = GnConfig(args.iters, args.gamma, args.cg_tol)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ckpt = read_checkpoint(args.checkpoint)
    out = corrected(ckpt, gn)
    write_checkpoint(args.out, out)
    print(f"corrected checkpoint written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    if "runs" not in cfg:
        raise ConfigError("compare needs a 'runs' list with at least two entries")
    train_set, test_set = load_data(cfg["data"])
    if test_set is None:
        raise ConfigError("compare needs test data (data.test_images)")
    models, table, details = {}, {}, {}
    for run in cfg["runs"]:
        name = run["name"]
        history = None
        if "training" in run:
            result = _train_one(cfg, run["training"], train_set)
            model, history = result.model, result.history
        elif "checkpoint" in run:
            model = from_checkpoint(read_checkpoint(run["checkpoint"]))
        else:
            model = correct_autoencoder(models[run["correct"]], GnConfig.from_dict(run["gn"]))
        models[name] = model
        train_rep, test_rep = _evaluate(model, train_set, test_set, cfg["eval"]["k"])
        table[name] = {"train_mse": train_rep.mse, "test_mse": test_rep.mse,
                       "train_sr_mse": train_rep.sr_mse, "test_sr_mse": test_rep.sr_mse}
        details[name] = {"history": history, "train": train_rep.to_dict(), "test": test_rep.to_dict()}
        log.info("compare: %s done (test mse %.4e, test sr_mse %.4e)", name, test_rep.mse, test_rep.sr_mse)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(compare_csv(table))
    stem = os.path.splitext(args.out)[0]
    with open(stem + ".json", "w", encoding="utf-8") as f:
        json.dump({"config": cfg, "table": table, "runs": details}, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(stem + ".md", "w", encoding="utf-8") as f:
        f.write(compare_markdown(table))
    print(compare_markdown(table), end="")
    return 0


# -- entry point -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", f"{self.prog}: {message}", USAGE_EXIT)


def _fail(kind: str, message: str, code: int, **extra):
    line = {"error": kind, "message": " ".join(str(message).split()), "exit_code": code, **extra}
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    raise SystemExit(code)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="metaenc", description="Canonical and meta-autoencoders with a Gauss-Newton encoder.")
    p.add_argument("--version", action="version", version=f"metaenc {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="output directory for model.ckpt and reports")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on IDX images")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--images", required=True, help="IDX image file (optionally .gz)")
    e.add_argument("--k", default="1,100", help="comma-separated reconstruction iterates (default 1,100)")
    e.add_argument("--report", required=True, help="CSV report path (.json for JSON)")
    e.add_argument("--limit", type=int, default=None, help="use only the first N images")
    e.add_argument("--grid", default=None, help="write a PGM grid of originals and iterates")
    e.add_argument("--grid-count", type=int, default=10)
    e.add_argument("--labels", default=None, help="IDX labels; the grid then shows one digit per class")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("correct", help="turn a direct-mode checkpoint into a Gauss-Newton one")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--iters", type=int, default=4)
    c.add_argument("--gamma", type=float, default=1e-8)
    c.add_argument("--cg-tol", type=float, default=1e-10)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_correct)

    m = sub.add_parser("compare", help="train/evaluate several runs into one table")
    m.add_argument("--config", required=True)
    m.add_argument("--out", required=True, help="CSV path; .json and .md siblings are written too")
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IdxFormatError, CheckpointError) as exc:
        _fail(type(exc).__name__, str(exc), USAGE_EXIT)
    except OSError as exc:
        _fail(type(exc).__name__, f"{exc.strerror or exc}: {exc.filename}", USAGE_EXIT, path=exc.filename)
    except (MetaencError, ArithmeticError, ValueError) as exc:
        _fail(type(exc).__name__, str(exc), RUNTIME_EXIT)


if __name__ == "__main__":
    sys.exit(main())
