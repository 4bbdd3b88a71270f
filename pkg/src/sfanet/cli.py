"""``sfanet`` command line: gen-data, train, eval, error-map, bench-mixers.

Exit status is 0 on success, 1 for usage or validation errors and 2 for
runtime failures. Every error is reported on stderr as one line starting
with ``error:``.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigurationError, DimensionError, SfanetError
from .metrics import DEFAULT_THRESHOLDS, error_map, evaluate, write_pgm
from .mixers import bench_mixers
from .model import ModelConfig, SfanetModel
from .train import TrainConfig, fit, predict, write_history

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad flags or an invalid config; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_schema(name):
    text = resources.files("sfanet").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_config(doc) -> list[str]:
    """Every schema violation in ``doc``, one message each, sorted by location."""
    validator = jsonschema.Draft202012Validator(load_schema("config"))
    problems = []
    for err in validator.iter_errors(doc):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        if err.validator == "additionalProperties":
            known = set(err.schema.get("properties", {}))
            for key in sorted(set(err.instance) - known):
                loc = f"{where}/{key}" if where != "<root>" else key
                problems.append(f"{loc}: unknown key")
        elif err.validator == "required":
            missing = [k for k in err.validator_value if k not in err.instance]
            for key in missing:
                loc = f"{where}/{key}" if where != "<root>" else key
                problems.append(f"{loc}: required key missing")
        else:
            problems.append(f"{where}: {err.message}")
    return sorted(problems)


def resolve_config(doc):
    """Validate a config document and build (ModelConfig, TrainConfig, data dict)."""
    problems = validate_config(doc)
    if problems:
        raise UsageError("invalid config: " + "; ".join(problems))
    model_d = dict(doc["model"])
    if "inception_kernels" in model_d:
        model_d["inception_kernels"] = tuple(model_d["inception_kernels"])
    model_cfg = ModelConfig.from_dict(model_d)
    train_cfg = TrainConfig.from_dict(doc["train"])
    data = {"val_holdout": 0, **doc["data"]}
    return model_cfg, train_cfg, data


def split_seed(root_seed, n=2):
    """Independent child seeds for model init and data shuffling."""
    children = np.random.SeedSequence(root_seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args):
    if args.samples < 1:
        raise UsageError(f"--samples must be >= 1, got {args.samples}")
    h, w = args.grid
    cfg = SyntheticConfig(seed=args.seed, H=h, W=w, T_in=args.t_in, T_out=args.t_out)
    ds = generate_synthetic(cfg, args.samples)
    save_dataset(ds, args.out)
    print(f"wrote {args.samples} samples to {args.out} sha256={ds.checksum()}")


def cmd_train(args):
    try:
        doc = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    model_cfg, train_cfg, data = resolve_config(doc)
    train_ds = load_dataset(args.data)
    if args.val_data:
        val_ds = load_dataset(args.val_data)
    elif data["val_holdout"] > 0:
        train_ds, val_ds = train_ds.split(data["val_holdout"])
    else:
        raise UsageError("no validation data: pass --val-data or set data.val_holdout")
    expect = (model_cfg.T_in, model_cfg.in_channels, model_cfg.H, model_cfg.W)
    for name, ds in (("train", train_ds), ("validation", val_ds)):
        got = (ds.t_in, *ds.frame_shape)
        if got != expect or ds.t_out != model_cfg.T_out:
            raise DimensionError(f"{name} data has T_in, C, H, W = {got} and T_out = {ds.t_out}; "
                                 f"config expects {expect} and T_out = {model_cfg.T_out}")
    model_seed, shuffle_seed = split_seed(train_cfg.seed)
    train_cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": shuffle_seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "data": data},
        "seeds": {"root": doc["train"].get("seed", 0), "model": model_seed,
                  "shuffle": train_cfg.seed},
        "code_version": __version__,
        "datasets": {"train": {"path": str(args.data), "sha256": train_ds.checksum()},
                     "validation": {"path": str(args.val_data or args.data),
                                    "sha256": val_ds.checksum()}},
        "outputs": {"checkpoint": str(out / "checkpoint"), "history": str(out / "history.csv"),
                    "manifest": str(out / "run_manifest.json")},
    }
    _write_json(out / "run_manifest.json", manifest)
    model = SfanetModel(model_cfg, seed=model_seed)
    result = fit(model, train_ds, val_ds, train_cfg)
    write_history(result.history, out / "history.csv")
    save_checkpoint(model, out / "checkpoint", result.normalizer,
                    extra={"best_epoch": result.best_epoch, "best_val_mse": result.best_val_mse,
                           "steps": result.steps})
    print(f"trained {result.steps} steps; best epoch {result.best_epoch} "
          f"val_mse={result.best_val_mse:.6g}; outputs in {out}")


def _forecast(args, ds):
    if args.oracle:
        return ds.targets.copy()
    model, norm, manifest = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    if (ds.t_in, *ds.frame_shape) != (cfg.T_in, cfg.in_channels, cfg.H, cfg.W):
        raise DimensionError(f"data frames (T_in, C, H, W) = {(ds.t_in, *ds.frame_shape)} do not "
                             f"match checkpoint {(cfg.T_in, cfg.in_channels, cfg.H, cfg.W)}")
    if ds.t_out != cfg.T_out:
        raise DimensionError(f"data has T_out={ds.t_out}, checkpoint predicts {cfg.T_out}")
    return predict(model, ds, norm)


def cmd_eval(args):
    if not args.oracle and not args.checkpoint:
        raise UsageError("--checkpoint is required unless --oracle is given")
    ds = load_dataset(args.data)
    pred = _forecast(args, ds)
    model_rep = evaluate(pred, ds.targets, DEFAULT_THRESHOLDS)
    pers_rep = evaluate(ds.persistence(), ds.targets, DEFAULT_THRESHOLDS)
    report = {
        "model": model_rep.to_dict(),
        "persistence": pers_rep.to_dict(),
        "delta": {"csi_m": model_rep.csi_m - pers_rep.csi_m, "mse": model_rep.mse - pers_rep.mse},
        "thresholds": list(DEFAULT_THRESHOLDS),
        "n_samples": len(ds),
        "oracle": bool(args.oracle),
        "data_checksum": ds.checksum(),
    }
    if args.checkpoint:
        report["checkpoint"] = str(args.checkpoint)
    _write_json(args.report, report)
    print(f"CSI-M {model_rep.csi_m:.4f} (persistence {pers_rep.csi_m:.4f}); "
          f"MSE {model_rep.mse:.4f} (persistence {pers_rep.mse:.4f})")


def cmd_error_map(args):
    if not args.oracle and not args.checkpoint:
        raise UsageError("--checkpoint is required unless --oracle is given")
    ds = load_dataset(args.data)
    if not 0 <= args.sample < len(ds):
        raise UsageError(f"--sample {args.sample} out of range for {len(ds)} samples")
    one = ds.subset(slice(args.sample, args.sample + 1))
    pred = _forecast(args, one)[0]
    emap = error_map(pred, one.targets[0])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_channels = emap.labels.shape[1]
    for t in range(emap.labels.shape[0]):
        for c in range(n_channels):
            suffix = f"_c{c}" if n_channels > 1 else ""
            write_pgm(out / f"frame_{t:02d}{suffix}.pgm", emap.labels[t, c])
    _write_json(out / "counts.json", emap.counts())
    print(f"wrote {emap.labels.shape[0] * n_channels} rasters to {out}: {emap.counts()}")


def cmd_bench_mixers(args):
    try:
        report = bench_mixers(args.tokens, args.channels, repeats=args.repeats)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    report.to_csv(args.out)
    slopes = ", ".join(f"{k}={v:.3f}" for k, v in report.slopes.items())
    print(f"log-log slopes: {slopes}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _grid(text):
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or HxW, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected N or HxW with positive sizes, got {text!r}")
    return tuple(vals)


def build_parser():
    p = _Parser(prog="sfanet", description="Spatial-frequency forecasting experiments.")
    p.add_argument("--version", action="version", version=f"sfanet {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic SFDS dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--grid", type=_grid, default=(64, 64), help="N or HxW (default 64)")
    g.add_argument("--t-in", type=int, default=13)
    g.add_argument("--t-out", type=int, default=12)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--val-data")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint and persistence on a dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--oracle", action="store_true", help="use the targets as the forecast")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("error-map", help="write hit/miss/false-alarm rasters for one sample")
    m.add_argument("--checkpoint")
    m.add_argument("--data", required=True)
    m.add_argument("--sample", type=int, required=True)
    m.add_argument("--out-dir", required=True)
    m.add_argument("--oracle", action="store_true", help="use the targets as the forecast")
    m.set_defaults(func=cmd_error_map)

    b = sub.add_parser("bench-mixers", help="time token mixers against token count")
    b.add_argument("--tokens", type=_int_list, required=True, help="comma-separated counts")
    b.add_argument("--channels", type=int, default=64)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench_mixers)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (UsageError, ConfigurationError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SfanetError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
