"""Command-line entry point: ``pegcn <command> ...``.

Exit codes: 0 success, 1 config or I/O failure, 2 numerical failure
(non-finite loss, failed gradient check).  Failures print a single JSON
line on stderr: ``{"error": <kind>, "command": <cmd>, "message": <text>}``.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (ConfigError, load_run_config, load_synth_spec, model_config, resolve,
                     synth_from_dict, train_config)
from .model import PeGCNModel
from .noise import NoiseSpec, inject_noise
from .rng import SplitMix64, derive_seed
from .skeleton import FormatError, load_clips, save_clips, stack_clips
from .synth import synth_generate
from .training import (MetricsRecord, TrainingError, batch_loss, evaluate, single_threaded, train,
                       write_loss_csv, write_metrics)


class NumericalFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}", "argv")


def _levels(text: str) -> list[int]:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None
    if not out or min(out) < 0:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}")
    return out


def _say(*args):
    print(*args, flush=True)


def _log(verbose, *args):
    if verbose:
        print(*args, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# data helpers

def _dataset(cfg: dict, which: str) -> list:
    data = cfg["data"]
    if f"{which}_path" in data:
        clips = load_clips(resolve(cfg, data[f"{which}_path"]))
    elif f"{which}_synth" in data:
        clips = synth_generate(synth_from_dict(data[f"{which}_synth"]))
    else:
        raise ConfigError(f"data.{which}_path or data.{which}_synth is required", f"data.{which}")
    if not clips:
        raise ConfigError(f"{which} set is empty", f"data.{which}")
    topo = {c.topology for c in clips}
    if len(topo) != 1:
        raise ConfigError(f"{which} set mixes topologies {sorted(topo)}", f"data.{which}")
    return clips


def _build_model(cfg: dict, clips, **overrides) -> PeGCNModel:
    mcfg = model_config(cfg, clips[0].topology, max(c.label for c in clips) + 1)
    persons = clips[0].shape[-1]
    if mcfg.persons != persons:
        overrides.setdefault("persons", persons)
    if overrides:
        mcfg = replace(mcfg, **overrides)
    return PeGCNModel(mcfg)


def _dump_config(cfg: dict, path: Path) -> None:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    path.write_text(json.dumps(clean, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_synth_gen(args) -> int:
    spec = load_synth_spec(args.spec, args.set)
    clips = synth_generate(spec)
    save_clips(clips, args.out)
    _say(f"wrote {len(clips)} clips ({spec.classes} classes, topology {spec.topology}) to {args.out}")
    return 0


def cmd_noise_preview(args) -> int:
    clips = load_clips(args.input)
    out = [inject_noise(c, NoiseSpec(args.level, derive_seed(args.seed, "noise-preview", c.clip_id)))
           for c in clips]
    save_clips(out, args.out)
    _say(f"wrote {len(out)} clips at noise level {args.level} to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set)
    out_dir = Path(args.out_dir) if args.out_dir else resolve(cfg, cfg["output_dir"])
    clips = _dataset(cfg, "train")
    model = _build_model(cfg, clips)
    tcfg = train_config(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    log = train(model, clips, tcfg, on_epoch=lambda r: _log(
        args.verbose, f"epoch {r['epoch']:4d}  total {r['loss_total']:.5f}  ce {r['loss_ce']:.5f}  "
                      f"pe {r['loss_pe']:.5f}  lr {r['lr']:.4g}"))
    save_checkpoint(model, out_dir / "checkpoint.pegc")
    write_loss_csv(log, out_dir / "loss.csv")
    _dump_config(cfg, out_dir / "config.json")
    last = log[-1]
    _say(f"trained {tcfg.epochs} epochs on {len(clips)} clips in {time.perf_counter() - t0:.1f}s; "
         f"final ce {last['loss_ce']:.5f} pe {last['loss_pe']:.5f}; wrote {out_dir}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    clips = load_clips(args.data)
    if not clips:
        raise ConfigError(f"{args.data}: no clips", "data")
    if clips[0].topology != model.cfg.topology:
        raise CheckpointError(f"checkpoint topology {model.cfg.topology!r} does not match data "
                              f"topology {clips[0].topology!r}")
    if max(c.label for c in clips) >= model.cfg.num_classes:
        raise CheckpointError(f"data labels exceed the checkpoint's {model.cfg.num_classes} classes")
    records = [evaluate(model, clips, lvl, args.repeats, args.seed) for lvl in args.levels]
    write_metrics(records, args.out)
    for r in records:
        _say(f"noise {r.noise_level:3d}  top1 {r.top1_mean:6.2f} +- {r.top1_std:5.2f}  "
             f"top5 {r.top5_mean:6.2f} +- {r.top5_std:5.2f}")
    return 0


def grad_check(cfg: dict) -> float:
    """Max relative finite-difference error of the full training loss in double precision."""
    clips = _dataset(cfg, "train")
    gc = cfg["grad_check"]
    model = _build_model(cfg, clips, dtype="float64")
    tcfg = train_config(cfg)
    n = min(gc["batch_size"], len(clips))
    pick = SplitMix64(derive_seed(tcfg.seed, "grad-check")).permutation_prefix(len(clips), n)
    sel = [clips[i] for i in pick]
    clean = stack_clips(sel)
    noisy = stack_clips([inject_noise(c, NoiseSpec(tcfg.noise_level, derive_seed(tcfg.seed, "grad-check", c.clip_id)))
                         for c in sel])
    labels = [c.label for c in sel]
    loss_cfg = tcfg.loss
    if not loss_cfg.pe_enabled or loss_cfg.lam == 0:
        raise ConfigError("grad-check needs both losses active (loss.pe_enabled true, loss.lam > 0)", "loss")
    with single_threaded(True):
        return nx.finite_diff_check(lambda p: batch_loss(model, p, clean, noisy, labels, loss_cfg)[0],
                                    model.params, gc["eps"])


def cmd_grad_check(args) -> int:
    cfg = load_run_config(args.config, args.set)
    t0 = time.perf_counter()
    err = grad_check(cfg)
    thr = cfg["grad_check"]["threshold"]
    _say(f"max relative error {err:.3e} (threshold {thr:g}, {time.perf_counter() - t0:.1f}s)")
    if not err < thr:
        raise NumericalFailure(f"gradient check failed: {err:.3e} >= {thr:g}")
    return 0


def relative_degradation(clean: float, noisy: float) -> float:
    return (clean - noisy) / clean if clean > 0 else float("nan")


def run_ablation(cfg: dict, out_dir: Path, verbose: bool = False) -> dict:
    """Train every (arm, train level, seed) and evaluate at every test level.

    Writes ``ablation_runs.csv`` (one row per seed), ``ablation.csv`` (the
    grid pooled over seeds: arms x train levels x test levels) and
    ``ablation_summary.json`` with per-seed and median relative top-1
    degradation between the lowest and highest test level.
    """
    ab = cfg["ablation"]
    train_clips = _dataset(cfg, "train")
    test_clips = _dataset(cfg, "test")
    lo, hi = min(ab["test_levels"]), max(ab["test_levels"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "loss").mkdir(exist_ok=True)
    runs, run_extra = [], {"arm": [], "train_level": [], "run_seed": []}
    grid = {}
    degr = {}
    for arm in ab["arms"]:
        for tl in ab["train_levels"]:
            for seed in ab["seeds"]:
                sub = {**cfg, "train": {**cfg["train"], "seed": seed, "noise_level": tl},
                       "loss": {**cfg["loss"], "pe_enabled": arm == "total"}}
                model = _build_model(sub, train_clips, seed=seed)
                tcfg = train_config(sub)
                t0 = time.perf_counter()
                log = train(model, train_clips, tcfg)
                write_loss_csv(log, out_dir / "loss" / f"{arm}-L{tl}-s{seed}.csv")
                recs = {lvl: evaluate(model, test_clips, lvl, ab["repeats"], seed) for lvl in ab["test_levels"]}
                for lvl, r in recs.items():
                    runs.append(r)
                    run_extra["arm"].append(arm)
                    run_extra["train_level"].append(tl)
                    run_extra["run_seed"].append(seed)
                    g = grid.setdefault((arm, tl, lvl), ([], []))
                    g[0].extend(r.top1_runs)
                    g[1].extend(r.top5_runs)
                d = relative_degradation(recs[lo].top1_mean, recs[hi].top1_mean)
                degr.setdefault(f"{arm}/L{tl}", []).append(d)
                _log(verbose, f"{arm} train-level {tl} seed {seed}: top1@{lo} {recs[lo].top1_mean:.2f} "
                              f"top1@{hi} {recs[hi].top1_mean:.2f} degradation {d:.4f} "
                              f"({time.perf_counter() - t0:.1f}s)")
    write_metrics(runs, out_dir / "ablation_runs.csv", run_extra)
    keys = sorted(grid, key=lambda k: (ab["arms"].index(k[0]), ab["train_levels"].index(k[1]),
                                       ab["test_levels"].index(k[2])))
    pooled = []
    for arm, tl, lvl in keys:
        a1, a5 = np.array(grid[arm, tl, lvl][0]), np.array(grid[arm, tl, lvl][1])
        pooled.append(MetricsRecord(lvl, float(a1.mean()), float(a1.std()), float(a5.mean()), float(a5.std()),
                                    len(a1), ab["seeds"][0], a1.tolist(), a5.tolist()))
    write_metrics(pooled, out_dir / "ablation.csv",
                  {"arm": [k[0] for k in keys], "train_level": [k[1] for k in keys]})
    summary = {"test_levels": [lo, hi], "seeds": ab["seeds"],
               "degradation": degr,
               "median_degradation": {k: statistics.median(v) for k, v in degr.items()}}
    with open(out_dir / "ablation_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


def cmd_ablation(args) -> int:
    cfg = load_run_config(args.config, args.set)
    out_dir = Path(args.out_dir) if args.out_dir else resolve(cfg, cfg["output_dir"])
    summary = run_ablation(cfg, out_dir, args.verbose)
    for k, v in summary["median_degradation"].items():
        _say(f"{k}: median relative top-1 degradation {v:.4f}")
    _say(f"wrote {out_dir / 'ablation.csv'}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pegcn", description="Noise-robust skeleton action recognition experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def overrides(sp):
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train.epochs=5 (value parsed as JSON)")

    s = sub.add_parser("synth-gen", help="generate a synthetic clip set")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    overrides(s)
    s.set_defaults(func=cmd_synth_gen)

    s = sub.add_parser("noise-preview", help="write noisy copies of a clip set")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_noise_preview)

    s = sub.add_parser("train", help="train a model, write checkpoint and loss log")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("-v", "--verbose", action="store_true")
    overrides(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint under seeded noise")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--levels", type=_levels, default=[0, 1, 3, 5, 10])
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grad-check", help="finite-difference check of the full training loss")
    s.add_argument("--config", required=True)
    overrides(s)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("ablation", help="train both loss arms and emit the noise grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("-v", "--verbose", action="store_true")
    overrides(s)
    s.set_defaults(func=cmd_ablation)
    return p


def _fail(kind: str, command: str, message) -> None:
    line = json.dumps({"error": kind, "command": command, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr, flush=True)


def main(argv=None) -> int:
    command = "pegcn"
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if getattr(args, "repeats", 1) < 1:
            raise ConfigError("--repeats must be at least 1", "repeats")
        return args.func(args)
    except (TrainingError, nx.NonFiniteError, NumericalFailure) as exc:
        _fail("numerical", command, exc)
        return 2
    except ConfigError as exc:
        _fail("config", command, exc)
        return 1
    except (FormatError, CheckpointError) as exc:
        _fail("format", command, exc)
        return 1
    except OSError as exc:
        _fail("io", command, f"{exc.filename}: {exc.strerror}" if exc.filename else exc)
        return 1
    except (ValueError, KeyError) as exc:
        _fail("config", command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
