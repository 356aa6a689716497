"""Command-line entry point: ``raincast <subcommand> ...``.

Subcommands run one pipeline stage each and write fixed-name artifacts under
``--out``. Every run also writes ``run.json`` with the resolved configuration;
it is the only file that carries a timestamp.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

log = logging.getLogger("raincast")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data/model errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _csv_list(text):
    return [t for t in text.split(",") if t]


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for all named sub-seeds")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP worker threads")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="raincast", description="Desk-scale satellite-to-rain nowcasting pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--config", type=Path, help="JSON with optional 'synth' and 'regions' sections")
    s.add_argument("--regions", type=int, default=5)
    s.add_argument("--held-out", type=int, default=1)
    s.add_argument("--grid", type=int, default=72)
    s.add_argument("--slots", type=int, default=240)
    s.add_argument("--bands", choices=("desk", "full"), default="desk")

    t = sub.add_parser("train", parents=[common], help="train one model")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--config", type=Path, help="training config JSON; defaults to the --preset")
    t.add_argument("--preset", choices=sorted(PRESETS), default="unet3d")
    t.add_argument("--input-crop", type=int)
    t.add_argument("--exclude-regions", type=_csv_list, default=None, metavar="R1,R2")
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--resume", type=Path, help="continue from a last.nwck")

    for name, helptext in (("predict", "write probability tensors"), ("permute", "band permutation importance")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--data", type=Path, required=True)
        q.add_argument("--checkpoint", type=Path, required=True)
        q.add_argument("--split", default="val")
        q.add_argument("--regions", type=_csv_list, default=None, metavar="R1,R2",
                       help="default: the regions the checkpoint was trained on")
        q.add_argument("--transfer", action="store_true",
                       help="evaluate held-out regions; refuses regions seen in training")
        q.add_argument("--batch-size", type=int, default=32)
    sub.choices["predict"].add_argument("--name", default="model", help="model label in file names")
    sub.choices["permute"].add_argument("--threshold", type=float, default=0.5)
    sub.choices["permute"].add_argument("--bands", type=_csv_list, default=None, metavar="LABELS")

    e = sub.add_parser("ensemble", parents=[common], help="average prediction sets")
    e.add_argument("--members", type=Path, nargs="+", required=True, metavar="INDEX_JSON")
    e.add_argument("--weights", type=float, nargs="+")
    e.add_argument("--name", default="ensemble")

    o = sub.add_parser("thropt", parents=[common], help="per-region threshold search")
    o.add_argument("--data", type=Path, required=True)
    o.add_argument("--pred", type=Path, required=True, metavar="INDEX_JSON")
    o.add_argument("--grid", type=float, nargs=3, metavar=("LO", "HI", "STEP"))

    v = sub.add_parser("eval", parents=[common], help="IoU series and per-region records")
    v.add_argument("--data", type=Path, required=True)
    v.add_argument("--pred", type=Path, required=True, metavar="INDEX_JSON")
    v.add_argument("--threshold", type=float, default=0.5)
    v.add_argument("--thresholds", type=Path, help="thresholds.json from thropt (overrides --threshold)")

    r = sub.add_parser("report", parents=[common], help="bundle plot data from run directories")
    r.add_argument("--inputs", type=Path, nargs="+", required=True)
    return p


# ----------------------------------------------------------------- helpers
def _write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path):
    from .data import DataError

    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _version():
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def write_run_json(args, resolved, seeds=None):
    """Record this command under its name in ``run.json``, keeping other commands' entries."""
    from .tensor import _backend

    path = args.out / "run.json"
    runs = {}
    if path.exists():
        try:
            runs = json.loads(path.read_text())
        except json.JSONDecodeError:
            log.warning("%s is unreadable; replacing it", path)
    runs[args.command] = {
        "argv": args.argv,
        "seed": args.seed,
        "sub_seeds": seeds or {},
        "threads": args.threads,
        "backend": _backend.name(),
        "version": _version(),
        "config": resolved,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _write_json(path, runs)


def _desk_unet():
    from .models import UNet3DConfig
    return UNet3DConfig(start_filters=8, depth=2, dropout_p=0.2)


def _desk_cuboid():
    from .models import CuboidConfig
    return CuboidConfig()


PRESETS = {
    "unet3d": (_desk_unet, dict(lr=2e-3, batch_size=16, max_epochs=30)),
    "cuboid": (_desk_cuboid, dict(lr=1e-3, batch_size=16, max_epochs=8)),
}


def resolve_train_config(args):
    from .train import TrainConfig

    if args.config is not None:
        cfg = TrainConfig.from_dict(_read_json(args.config))
    else:
        model_fn, kw = PRESETS[args.preset]
        cfg = TrainConfig(model=model_fn(), **kw)
    cfg.seed = args.seed
    if args.input_crop is not None:
        cfg.input_crop = args.input_crop
    if args.exclude_regions is not None:
        cfg.exclude_regions = list(args.exclude_regions)
    if args.max_epochs is not None:
        cfg.max_epochs = args.max_epochs
    return TrainConfig.from_dict(cfg.to_dict())


def _eval_regions(args, manifest, meta):
    from .evalpost import check_transfer

    if args.regions is not None:
        regions = list(args.regions)
    elif args.transfer:
        regions = manifest.held_out_regions()
    else:
        regions = list(meta.get("train_regions") or manifest.region_ids)
    missing = sorted(set(regions) - set(manifest.region_ids))
    if missing:
        raise KeyError(f"regions {missing} not in dataset")
    if args.transfer:
        check_transfer(meta, regions)
    if not regions:
        raise ValueError("no regions to evaluate")
    return regions


def _model_inputs(args):
    """(manifest, model cfg, params, meta, dataset, refs, regions) for predict/permute."""
    from .data import WindowDataset, load_manifest, window_index
    from .train import load_model

    manifest = load_manifest(args.data)
    model_cfg, params, meta = load_model(args.checkpoint)
    if model_cfg.in_bands != len(manifest.bands):
        raise ValueError(f"checkpoint expects {model_cfg.in_bands} bands, dataset has {len(manifest.bands)}")
    regions = _eval_regions(args, manifest, meta)
    skip = set(manifest.region_ids) - set(regions)
    refs = window_index(manifest, model_cfg.in_frames, model_cfg.out_frames, 1, args.split,
                        exclude_regions=skip)
    if not refs:
        raise ValueError(f"no {args.split} windows for regions {regions}")
    ds = WindowDataset(manifest, model_cfg.in_frames, model_cfg.out_frames, model_cfg.input_size)
    return manifest, model_cfg, params, meta, ds, refs, regions


def load_prediction_set(index_path):
    """(index dict, {region: probs [N, K, H, W]}) from a ``<model>.index.json``."""
    from .tensor import read_tensor

    index = _read_json(index_path)
    base = Path(index_path).parent
    probs = {rid: read_tensor(base / entry["file"]) for rid, entry in index["regions"].items()}
    for rid, p in probs.items():
        if p.shape[0] != len(index["regions"][rid]["starts"]):
            raise ValueError(f"{index_path}: {rid} has {p.shape[0]} frames for "
                             f"{len(index['regions'][rid]['starts'])} windows")
    return index, probs


def stacked_truth(manifest, index):
    """(probs-aligned binary truth [N, K, H, W], region id per sample)."""
    import numpy as np

    from .data import WindowDataset, WindowRef, binarize_rain

    ds = WindowDataset(manifest, index["t_in"], index["t_out"], crop=1)
    ys, ids = [], []
    for rid, entry in index["regions"].items():
        for s in entry["starts"]:
            ys.append(binarize_rain(ds.raw(WindowRef(rid, index["split"], s))[1], ds.threshold))
            ids.append(rid)
    return np.stack(ys), ids


def _stacked(index, probs):
    import numpy as np
    return np.concatenate([probs[rid] for rid in index["regions"]])


# ------------------------------------------------------------- subcommands
def cmd_synth(args):
    from dataclasses import asdict

    from .data import RegionSpec, SynthConfig, default_regions, desk_bands, full_bands, synth_generate
    from .seeding import sub_seed

    conf = _read_json(args.config) if args.config else {}
    unknown = set(conf) - {"synth", "regions"}
    if unknown:
        raise ValueError(f"unknown synth config sections {sorted(unknown)}")
    synth_kw = dict(conf.get("synth", {}))
    synth_kw.setdefault("bands", desk_bands() if args.bands == "desk" else full_bands())
    synth_kw["seed"] = sub_seed(args.seed, "data")
    config = SynthConfig(**synth_kw)
    if "regions" in conf:
        regions = [RegionSpec(**r) for r in conf["regions"]]
    else:
        regions = default_regions(args.regions, args.held_out, args.grid, args.slots)
    manifest = synth_generate(config, regions, args.out)
    write_run_json(args, {"synth": config.to_dict(), "regions": [asdict(r) for r in regions]},
                   {"data": config.seed})
    log.info("wrote %d regions to %s", len(regions), args.out)
    return manifest


def cmd_train(args):
    from .data import load_manifest
    from .train import train_loop

    cfg = resolve_train_config(args)
    manifest = load_manifest(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    res = train_loop(cfg, manifest, args.out, resume=args.resume)
    resolved = cfg.to_dict()
    resolved["model"] = res.model_config.to_dict()
    write_run_json(args, {"train": resolved, "data": str(args.data)}, res.best.meta["seeds"])
    log.info("best val IoU %.4f at epoch %d", res.best.meta["best_val_iou"], res.best.meta["best_epoch"])
    return res


def cmd_predict(args):
    from .tensor import write_tensor
    from .train import predict_refs

    manifest, model_cfg, params, meta, ds, refs, regions = _model_inputs(args)
    probs = predict_refs(model_cfg, params, ds, refs, args.batch_size)
    index = {"model": args.name, "split": args.split, "t_in": model_cfg.in_frames,
             "t_out": model_cfg.out_frames, "checkpoint": str(args.checkpoint), "regions": {}}
    for rid in regions:
        sel = [i for i, r in enumerate(refs) if r.region == rid]
        if not sel:
            continue
        fname = f"{rid}.{args.name}.probs.nwf"
        write_tensor(args.out / fname, probs[sel])
        index["regions"][rid] = {"file": fname, "starts": [refs[i].start for i in sel]}
    _write_json(args.out / f"{args.name}.index.json", index)
    write_run_json(args, {"predict": {k: v for k, v in index.items() if k != "regions"},
                          "regions": list(index["regions"]), "model": model_cfg.to_dict()})
    return index


def cmd_ensemble(args):
    from .evalpost import ensemble_mean
    from .tensor import write_tensor

    sets = [load_prediction_set(p) for p in args.members]
    first = sets[0][0]
    for path, (index, _) in zip(args.members, sets):
        key = lambda ix: (ix["split"], ix["t_out"], {r: e["starts"] for r, e in ix["regions"].items()})  # noqa: E731
        if key(index) != key(first):
            raise ValueError(f"{path} covers different windows than {args.members[0]}")
    index = {"model": args.name, "split": first["split"], "t_in": first["t_in"], "t_out": first["t_out"],
             "members": [str(p) for p in args.members], "weights": args.weights, "regions": {}}
    for rid, entry in first["regions"].items():
        mean = ensemble_mean([probs[rid] for _, probs in sets], args.weights)
        fname = f"{rid}.{args.name}.probs.nwf"
        write_tensor(args.out / fname, mean)
        index["regions"][rid] = {"file": fname, "starts": entry["starts"]}
    _write_json(args.out / f"{args.name}.index.json", index)
    write_run_json(args, {"ensemble": {k: v for k, v in index.items() if k != "regions"}})
    return index


def _grid(spec):
    if spec is None:
        return None
    lo, hi, step = spec
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(n + 1)]


def cmd_thropt(args):
    from .data import load_manifest
    from .evalpost import optimize_thresholds, write_metrics

    manifest = load_manifest(args.data)
    index, probs = load_prediction_set(args.pred)
    truth, ids = stacked_truth(manifest, index)
    tmap = optimize_thresholds(_stacked(index, probs), truth, ids, _grid(args.grid))
    write_metrics(tmap, args.out / "thresholds.json")
    write_run_json(args, {"thropt": {"pred": str(args.pred), "grid": tmap.grid, "model": index["model"]}})
    return tmap


def cmd_eval(args):
    from .data import load_manifest
    from .evalpost import (ThresholdMap, apply_thresholds, binarize, masks_series, read_metrics,
                           region_records, write_metrics)

    manifest = load_manifest(args.data)
    index, probs = load_prediction_set(args.pred)
    truth, ids = stacked_truth(manifest, index)
    p = _stacked(index, probs)
    if args.thresholds is not None:
        tmap = read_metrics(args.thresholds)
        if not isinstance(tmap, ThresholdMap):
            raise ValueError(f"{args.thresholds} is not a threshold map")
        masks = apply_thresholds(p, ids, tmap)
        rule = {"thresholds": str(args.thresholds)}
    else:
        if not 0 < args.threshold < 1:
            raise UsageError(f"--threshold must be in (0, 1), got {args.threshold}")
        masks = binarize(p, args.threshold)
        rule = {"threshold": args.threshold}
    series = masks_series(masks, truth)
    regions = region_records(masks, truth, ids)
    write_metrics(series, args.out / "series.csv")
    write_metrics(regions, args.out / "regions.csv")
    write_run_json(args, {"eval": {"pred": str(args.pred), "model": index["model"], **rule}})
    log.info("global IoU %.4f", series[-1].iou)
    return series, regions


def cmd_permute(args):
    import numpy as np

    from .evalpost import permutation_importance, write_metrics
    from .models import forward
    from .seeding import sub_seed
    from .tensor import Tensor, no_grad

    manifest, model_cfg, params, meta, ds, refs, regions = _model_inputs(args)
    x, y = ds.batch(refs)
    labels = manifest.band_labels
    bands = None
    if args.bands is not None:
        unknown = sorted(set(args.bands) - set(labels))
        if unknown:
            raise KeyError(f"unknown bands {unknown}; dataset has {labels}")
        bands = [labels.index(b) for b in args.bands]

    def predict(inp):
        out = []
        with no_grad():
            for s in range(0, len(inp), args.batch_size):
                out.append(forward(model_cfg, params, Tensor(inp[s:s + args.batch_size]), "eval").data)
        return np.concatenate(out)

    seed = sub_seed(args.seed, "permutation")
    report = permutation_importance(predict, x, y, labels, seed=seed, threshold=args.threshold, bands=bands)
    write_metrics(report, args.out / "permutation.csv")
    write_run_json(args, {"permute": {"checkpoint": str(args.checkpoint), "split": args.split,
                                      "regions": regions, "threshold": args.threshold,
                                      "bands": [b.band_label for b in report.bands]}},
                   {"permutation": seed})
    return report


REPORT_SOURCES = {
    "series.csv": "lead_time_series.csv",
    "regions.csv": "region_iou.csv",
    "thresholds.json": "threshold_curves.csv",
    "permutation.csv": "band_importance.csv",
    "epochs.csv": "training_curves.csv",
}


def _report_rows(name, obj):
    from .evalpost import THRESHOLD_CURVE_HEADER, metrics_rows

    if name == "thresholds.json":
        return THRESHOLD_CURVE_HEADER, [[r, t, v] for r in obj.thresholds
                                        for t, v in zip(obj.grid, obj.curves[r])]
    if name == "epochs.csv":
        from .train import LOG_HEADER
        return LOG_HEADER, [[row[k] for k in LOG_HEADER] for row in obj]
    return metrics_rows(obj)


def _load_source(path):
    from .evalpost import read_metrics
    from .train import read_epoch_log

    return read_epoch_log(path) if path.name == "epochs.csv" else read_metrics(path)


def cmd_report(args):
    import csv

    from .evalpost import format_value

    labels = [p.name or str(p) for p in args.inputs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"input directory names must be distinct, got {labels}")
    for p in args.inputs:
        if not p.is_dir():
            raise FileNotFoundError(f"{p}: not a directory")
    bundles, contents = {}, {}
    for src, dest in REPORT_SOURCES.items():
        header, rows = None, []
        for label, d in zip(labels, args.inputs):
            if not (d / src).exists():
                continue
            h, rs = _report_rows(src, _load_source(d / src))
            header = h
            rows.extend([label] + list(r) for r in rs)
            contents.setdefault(label, []).append(src)
        if header is None:
            continue
        tmp = args.out / f"{dest}.tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run"] + list(header))
            for row in rows:
                w.writerow([format_value(v) for v in row])
        os.replace(tmp, args.out / dest)
        bundles[dest] = src
    _write_json(args.out / "report.json", {"files": bundles, "runs": contents})
    write_run_json(args, {"report": {"inputs": [str(p) for p in args.inputs]}})
    return bundles


def read_report(out_dir):
    """{bundle file: list of row dicts with typed values} for a report directory."""
    import csv

    out_dir = Path(out_dir)
    index = _read_json(out_dir / "report.json")
    ints = {"epoch", "lead_time", "tp", "fp", "fn"}
    strs = {"run", "region", "band_label"}
    result = {}
    for dest in index["files"]:
        with open(out_dir / dest, newline="") as fh:
            result[dest] = [{k: v if k in strs else int(v) if k in ints else float(v) for k, v in row.items()}
                            for row in csv.DictReader(fh)]
    return result


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "ensemble": cmd_ensemble,
            "thropt": cmd_thropt, "eval": cmd_eval, "permute": cmd_permute, "report": cmd_report}


def run_cli(argv=None):
    """Run one subcommand; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:           # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            sys.stderr.write("raincast: error: --threads must be >= 1\n")
            return EXIT_USAGE
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .data import DataError
    from .models import ConfigError
    from .tensor import TensorFormatError
    from .train import CheckpointError

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"raincast {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except (DataError, ConfigError, TensorFormatError, CheckpointError, OSError, KeyError, ValueError,
            TypeError) as exc:
        sys.stderr.write(f"raincast {args.command}: {type(exc).__name__}: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
