"""Command line: synth, train, detect, eval, roc and report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import shutil
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from . import net as N
from .config import RunConfig, parse_override, parse_value
from .errors import ConfigError, GenerationError, InputError, NumericError, SirstError
from .metrics import evaluate, roc
from .pipeline import DETECTOR_NAMES, Detector, load_detections, load_images, overlay, run_detector, score_maps
from .pngio import write_prob16, write_rgb
from .runtime import tune_allocator
from .synth import import_background, load_split, synth_dataset
from .train import Dataset, train

log = logging.getLogger("sirstlab")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_GENERATION = 5

# flag dest -> config key
_FLAG_KEYS = {
    "preset": "preset", "seed": "seed",
    "n": "synth.n", "n_test": "synth.n_test", "scr": "synth.scr_values", "image_size": "synth.image_size",
    "variant": "net.variant", "steps": "train.max_steps", "epochs": "train.epochs",
    "lr": "train.learning_rate", "batch_size": "train.batch_size",
    "checkpoint_every": "train.checkpoint_every",
    "d_thresh": "metrics.d_thresh", "threshold": "metrics.threshold",
}


# ----------------------------------------------------------------- helpers

def resolve_config(args) -> RunConfig:
    overrides = dict(parse_override(s) for s in (args.set or []))
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            overrides[key] = v
    return RunConfig.resolve(args.config, overrides)


def prepare_out(out, force: bool) -> Path:
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise FileExistsError(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
        if (out / "manifest.json").is_file():
            shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_manifest(command: str, cfg: RunConfig, inputs: dict | None = None) -> dict:
    return {"command": command, "version": __version__, "seed": cfg.seed,
            "run_config": cfg.to_dict(), "inputs": inputs or {}}


def write_run_files(out: Path, command: str, cfg: RunConfig, inputs: dict | None = None, manifest: bool = True):
    (out / "config.txt").write_text(cfg.to_kv())
    if manifest:
        dump_json(out / "manifest.json", run_manifest(command, cfg, inputs))


def dump_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def float_list(value) -> list:
    vals = value if isinstance(value, (tuple, list)) else (value,)
    try:
        return [float(v) for v in vals]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected numbers, got {value!r}") from exc


def d_label(d: float) -> str:
    return f"{d:g}"


def make_detector(args, cfg: RunConfig) -> Detector:
    name = args.detector or ("network" if args.checkpoint else None)
    if name is None:
        raise ConfigError("give --checkpoint or --detector")
    return Detector(name, args.checkpoint, cfg.filter_config(), float(cfg.metric("threshold")))


def eval_split(root: Path, split: str | None):
    if split is None:
        manifest = json.loads((root / "manifest.json").read_text())
        split = "test" if manifest["splits"]["test"] else "all"
    return load_split(root, split)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    out = prepare_out(args.out, args.force)
    backgrounds = None
    if args.background:
        backgrounds = []
        for item in args.background:
            scene, sep, path = item.partition("=")
            if not sep:
                raise ConfigError(f"--background expects SCENE=PATH, got {item!r}")
            backgrounds.append(import_background(path, scene))
    settings = cfg.synth_settings()
    synth_dataset(int(settings["n"]), out, cfg.synth_config(), backgrounds, int(settings["n_test"]),
                  extra_manifest={"command": "synth", "version": __version__, "run_config": cfg.to_dict(),
                                  "inputs": {"backgrounds": args.background or []}})
    write_run_files(out, "synth", cfg, manifest=False)
    stats = json.loads((out / "stats.json").read_text())
    print(f"wrote {stats['images']} images, {stats['targets']} targets to {out}")
    print(f"SPIE fraction {stats['spie_fraction']:.4f}  SCR within 5% {stats['scr_within_5pct']:.4f}  "
          f"clipped {stats['clipped_targets']}  multi-target {stats['multi_target_fraction']:.3f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    spec, tcfg = cfg.network_spec(), cfg.train_config()
    images, masks, names = load_split(Path(args.data), "train")
    if not images:
        raise InputError(f"{args.data} has an empty train split")
    resume = N.load_checkpoint(args.resume) if args.resume else None
    out = prepare_out(args.out, args.force)
    write_run_files(out, "train", cfg, {"data": str(args.data), "resume": args.resume})
    ds = Dataset(np.stack(images), np.stack(masks).astype(np.float64), names)
    every = max(1, args.log_every)

    def report(step, lr, loss):
        if step % every == 0:
            log.info("step %d lr %.5f loss %.5f", step, lr, loss)

    res = train(ds, spec, tcfg, out, resume, report)
    final = out / "model.ckpt"
    shutil.copyfile(res.checkpoints[-1], final)
    last = res.loss_trace[-1][2] if res.loss_trace else float("nan")
    print(f"trained to step {res.step}; final loss {last:.5f}; checkpoint {final}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = resolve_config(args)
    detector = make_detector(args, cfg)
    images, masks, names = load_images(args.inputs)
    out = prepare_out(args.out, args.force)
    write_run_files(out, "detect", cfg, {"images": list(map(str, args.inputs)), "checkpoint": args.checkpoint,
                                         "detector": detector.describe()})
    results = run_detector(detector, images, masks if detector.name == "gt" else None)
    total = 0
    for name, img, gt, r in zip(names, images, masks, results):
        dump_json(out / "detections" / f"{name}.json",
                  {"image": name, "threshold": r.threshold, **r.detections.to_dict(with_pixels=True)})
        write_prob16(out / "scores" / f"{name}.png", r.score)
        if not args.no_overlay:
            write_rgb(out / "overlays" / f"{name}.png", overlay(img, r.mask, gt))
        total += len(r.detections)
    print(f"{len(names)} images, {total} components -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    root = Path(args.data)
    images, gts, names = eval_split(root, args.split)
    if args.detections:
        found = load_detections(args.detections)
        missing = [n for n in names if n not in found]
        if missing:
            raise InputError(f"no detections for {len(missing)} images, e.g. {missing[0]}")
        preds = [found[n].mask() for n in names]
        source = {"detections": str(args.detections)}
    else:
        detector = make_detector(args, cfg)
        preds = [r.mask for r in run_detector(detector, images, gts)]
        source = {"detector": detector.describe(), "checkpoint": args.checkpoint}
    out = prepare_out(args.out, args.force)
    write_run_files(out, "eval", cfg, {"data": str(root), "split": args.split, **source})
    reports = []
    for d in float_list(cfg.metric("d_thresh")):
        rep = evaluate(preds, gts, d, names).to_dict()
        dump_json(out / f"metrics_d{d_label(d)}.json", rep)
        reports.append(rep)
        pd_text = "undefined" if rep["pd"] is None else f"{rep['pd']:.4f}"
        print(f"d_thresh {d_label(d)}: IoU {rep['iou']:.4f}  Pd {pd_text}  Fa {rep['fa']:.3e}")
    dump_json(out / "metrics.json", {"reports": [{k: v for k, v in r.items() if k != "per_image"} for r in reports]})
    return EXIT_OK


def cmd_roc(args) -> int:
    cfg = resolve_config(args)
    if args.thresholds:
        thresholds = float_list(parse_value(args.thresholds))
        if thresholds != sorted(thresholds):
            raise ConfigError("--thresholds must be ascending")
    else:
        if args.n_thresholds < 2:
            raise ConfigError("--n-thresholds must be at least 2")
        thresholds = [float(t) for t in np.linspace(0.0, 1.0, args.n_thresholds)]
    detector = make_detector(args, cfg)
    root = Path(args.data)
    images, gts, names = eval_split(root, args.split)
    maps = score_maps(detector, images, gts)
    out = prepare_out(args.out, args.force)
    write_run_files(out, "roc", cfg, {"data": str(root), "split": args.split, "checkpoint": args.checkpoint,
                                      "detector": detector.describe()})
    curves = []
    for d in float_list(cfg.metric("d_thresh")):
        points = roc(maps, gts, thresholds, d)
        with open(out / f"roc_d{d_label(d)}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fa", "pd"])
            for t, (fa, pd) in zip(thresholds, points):
                w.writerow([repr(t), repr(fa), "" if math.isnan(pd) else repr(pd)])
        curves.append({"d_thresh": d, "thresholds": thresholds,
                       "fa": [p[0] for p in points], "pd": [None if math.isnan(p[1]) else p[1] for p in points]})
        print(f"d_thresh {d_label(d)}: {len(points)} ROC points -> roc_d{d_label(d)}.csv")
    dump_json(out / "roc.json", {"curves": curves})
    return EXIT_OK


def collect_run(run: Path) -> dict:
    if not run.is_dir():
        raise OSError(f"no such run directory: {run}")
    entry = {"run": str(run)}
    if (run / "manifest.json").is_file():
        m = json.loads((run / "manifest.json").read_text())
        entry["command"] = m.get("command", m.get("kind"))
        entry["seed"] = m.get("seed")
    metrics = []
    for f in sorted(run.glob("metrics_d*.json")):
        r = json.loads(f.read_text())
        metrics.append({k: r[k] for k in ("d_thresh", "iou", "pd", "fa", "pd_defined")})
    if metrics:
        entry["metrics"] = metrics
    if (run / "roc.json").is_file():
        curves = json.loads((run / "roc.json").read_text())["curves"]
        entry["roc"] = [{"d_thresh": c["d_thresh"], "points": len(c["fa"])} for c in curves]
    if (run / "stats.json").is_file():
        entry["stats"] = json.loads((run / "stats.json").read_text())
    if (run / "loss.csv").is_file():
        with open(run / "loss.csv") as fh:
            rows = list(csv.DictReader(fh))
        if rows:
            entry["final_loss"] = float(rows[-1]["loss"])
            entry["steps"] = int(rows[-1]["step"]) + 1
    return entry


def cmd_report(args) -> int:
    cfg = resolve_config(args)
    runs = [collect_run(Path(r)) for r in args.runs]
    out = prepare_out(args.out, args.force)
    write_run_files(out, "report", cfg, {"runs": [str(r) for r in args.runs]})
    dump_json(out / "report.json", {"runs": runs})
    lines = ["| run | command | d_thresh | IoU | Pd | Fa |", "|---|---|---|---|---|---|"]
    for r in runs:
        for m in r.get("metrics", []):
            pd_text = "n/a" if m["pd"] is None else f"{m['pd']:.4f}"
            lines.append(f"| {r['run']} | {r.get('command', '')} | {d_label(m['d_thresh'])} | "
                         f"{m['iou']:.4f} | {pd_text} | {m['fa']:.3e} |")
    text = "\n".join(lines) + "\n"
    (out / "report.md").write_text(text)
    print(text, end="")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--preset", help="named preset (default, toy)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    def detector_flags(p):
        p.add_argument("--checkpoint", help="trained network checkpoint")
        p.add_argument("--detector", choices=DETECTOR_NAMES, help="detector (default: network)")
        p.add_argument("--threshold", type=float, help="network decision threshold")

    def data_flags(p):
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--split", choices=("train", "test", "all"),
                       help="dataset split (default: test, or all when there is none)")
        p.add_argument("--d-thresh", type=parse_value, help="centroid deviation threshold(s), comma separated")

    parser = argparse.ArgumentParser(prog="sirstlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--n-test", type=int, help="samples reserved for the test split")
    p.add_argument("--scr", type=parse_value, help="target SCR value(s), comma separated")
    p.add_argument("--image-size", type=int)
    p.add_argument("--background", action="append", metavar="SCENE=PATH", help="imported background image")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the network")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--variant", choices=N.VARIANTS)
    p.add_argument("--steps", type=int, help="maximum optimizer steps")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=25)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="detect targets in images")
    p.add_argument("inputs", nargs="+", help="PNG files, PNG folders or dataset directories")
    detector_flags(p)
    p.add_argument("--no-overlay", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score detections against ground truth")
    data_flags(p)
    detector_flags(p)
    p.add_argument("--detections", help="output directory of the detect command")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("roc", parents=[common], help="sweep thresholds for a ROC curve")
    data_flags(p)
    detector_flags(p)
    p.add_argument("--thresholds", help="comma separated, ascending")
    p.add_argument("--n-thresholds", type=int, default=21, help="evenly spaced thresholds in [0, 1]")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("report", parents=[common], help="collect run outputs into one summary")
    p.add_argument("runs", nargs="+", help="output directories of earlier commands")
    p.set_defaults(func=cmd_report)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, GenerationError):
        return EXIT_GENERATION
    if isinstance(exc, (OSError, InputError)):
        return EXIT_IO
    return EXIT_OTHER


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    tune_allocator()
    try:
        return args.func(args)
    except (SirstError, OSError) as exc:
        print(f"sirstlab {args.command}: {exc}", file=sys.stderr)
        return exit_code(exc)
    except Exception as exc:  # noqa: BLE001
        if args.verbose:
            traceback.print_exc()
        print(f"sirstlab {args.command}: unexpected error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
