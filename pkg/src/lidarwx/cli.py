"""Command-line entry point: ``lidarwx <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import lpd as lpd_mod
from .config import PipelineConfig, load_config
from .corrupt import CorruptionSpec, Kind, apply_corruption
from .augment import compose_sj
from .errors import DataError, InvalidSpecError, LidarWxError, NumericError
from .metrics import ConfusionMatrix, accumulate, correctness_flags, report_csv
from .ply import export_ply
from .pointcloud import encode_scan, normalize_intensity
from .scene import CLASS_NAMES, generate_scene
from .storage import (atomic_write_bytes, atomic_write_text, label_path_for, load_dataset,
                      read_labels, read_scan, scan_name, write_sample)
from .surrogate import init_surrogate, load_model, predict, save_model, train_surrogate

log = logging.getLogger("lidarwx")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RESOLVED_CONFIG = "resolved_config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


# -- helpers -----------------------------------------------------------------

def _resolve(args, overrides: dict) -> PipelineConfig:
    over = {"master_seed": args.seed} if args.seed is not None else {}
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    for section, values in overrides.items():
        values = {k: v for k, v in values.items() if v is not None}
        if values:
            over[section] = values
    return load_config(args.config, over)


def _echo_config(cfg: PipelineConfig, out_dir: Path) -> None:
    atomic_write_text(out_dir / RESOLVED_CONFIG, cfg.to_json())


def _pmap(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _inputs(path: Path, ignore_label: int):
    """[(name, scan path, label path or None)] for a dataset directory or a single .bin."""
    if path.is_dir():
        from .storage import list_scans
        return [(p.stem, p, label_path_for(p) if label_path_for(p).exists() else None)
                for p in list_scans(path)]
    if not path.exists():
        raise DataError(f"{path} does not exist")
    return [(path.stem, path, None)]


def _load_pair(scan_path, label_path, ignore_label):
    cloud = normalize_intensity(read_scan(scan_path))
    labels = read_labels(label_path, ignore_label) if label_path is not None else None
    if labels is not None and len(labels) != cloud.n:
        raise DataError(f"{label_path}: {len(labels)} labels for {cloud.n} points")
    return cloud, labels


# -- per-scene jobs (module level so worker processes can pickle them) ---------

def _scene_job(job):
    cfg_dict, index, out = job
    cfg = PipelineConfig.from_dict(cfg_dict)
    spec = cfg.scene.__class__.from_dict({**cfg.scene.to_dict(),
                                          "seed": cfg.seed_for(index, "scene")})
    cloud, labels = generate_scene(spec)
    write_sample(out, scan_name(index), cloud, labels)
    return index


def _corrupt_job(job):
    spec_dict, scan_path, label_path, ignore, out_scan, out_label = job
    spec = CorruptionSpec(**spec_dict)
    cloud, labels = _load_pair(scan_path, label_path, ignore)
    if labels is None:
        from .pointcloud import LabelArray
        dummy = LabelArray.from_semantic(np.zeros(cloud.n, dtype=np.int64), ignore)
        cloud, _ = apply_corruption(cloud, dummy, spec)
    else:
        cloud, labels = apply_corruption(cloud, labels, spec)
    return out_scan, encode_scan(cloud), out_label, labels


def _augment_job(job):
    spec_dict, scan_path, label_path, ignore, out_scan, out_label = job
    from .augment import AugmentSpec
    spec = AugmentSpec.from_dict(spec_dict)
    cloud, labels = _load_pair(scan_path, label_path, ignore)
    return out_scan, encode_scan(compose_sj(cloud, spec)), out_label, labels


def _write_results(results) -> None:
    from .pointcloud import encode_labels
    # all jobs finished before anything is written, so a failure leaves no partial output
    for out_scan, scan_bytes, out_label, labels in results:
        atomic_write_bytes(out_scan, scan_bytes)
        if labels is not None and out_label is not None:
            atomic_write_bytes(out_label, encode_labels(labels))


def _output_paths(src: Path, out: Path, name: str, scan_path: Path):
    if src.is_dir():
        return out / "velodyne" / f"{name}.bin", out / "labels" / f"{name}.label", out
    return out, None, out.parent


# -- subcommands -------------------------------------------------------------

def cmd_gen_scenes(args) -> int:
    cfg = _resolve(args, {})
    out = Path(args.out)
    jobs = [(cfg.to_dict(), i, str(out)) for i in range(args.count)]
    _pmap(_scene_job, jobs, cfg.workers)
    _echo_config(cfg, out)
    log.info("wrote %d scenes to %s", args.count, out)
    return EXIT_OK


def cmd_corrupt(args) -> int:
    sev = args.ratio if args.ratio is not None else args.sigma
    kind = Kind(args.kind)
    if sev is None:
        raise UsageError("corrupt needs --ratio (point_drop, occlusion) or --sigma")
    cfg = _resolve(args, {})
    # validates severity before any file is touched
    CorruptionSpec(kind, sev, args.mode)
    src, out = Path(args.input), Path(args.out)
    jobs = []
    for i, (name, sp, lp) in enumerate(_inputs(src, cfg.ignore_label)):
        if args.labels and not src.is_dir():
            lp = Path(args.labels)
        out_scan, out_label, out_root = _output_paths(src, out, name, sp)
        if not src.is_dir() and args.labels_out:
            out_label = Path(args.labels_out)
        spec = CorruptionSpec(kind, sev, args.mode, cfg.seed_for(i, "corrupt"))
        jobs.append((spec.to_dict(), sp, lp, cfg.ignore_label, out_scan, out_label))
    _write_results(_pmap(_corrupt_job, jobs, cfg.workers))
    if src.is_dir():
        _echo_config(cfg, out)
    return EXIT_OK


def cmd_augment(args) -> int:
    aug = {"noise_sigma": args.sigma}
    if args.no_dsj:
        aug["dsj"] = {"enabled": False}
    if args.no_asj:
        aug["asj"] = {"enabled": False}
    rj = {}
    if args.no_rj:
        rj["enabled"] = False
    if args.rj_sigma is not None:
        rj["sigma"] = args.rj_sigma
    if rj:
        aug["rj"] = rj
    cfg = _resolve(args, {"augment": aug})
    src, out = Path(args.input), Path(args.out)
    jobs = []
    for i, (name, sp, lp) in enumerate(_inputs(src, cfg.ignore_label)):
        out_scan, out_label, _ = _output_paths(src, out, name, sp)
        spec = cfg.augment.with_seed(cfg.seed_for(i, "augment"))
        jobs.append((spec.to_dict(), sp, lp, cfg.ignore_label, out_scan, out_label))
    _write_results(_pmap(_augment_job, jobs, cfg.workers))
    if src.is_dir():
        _echo_config(cfg, out)
    return EXIT_OK


def _train_overrides(args) -> dict:
    return {"train": {"epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size}}


def _load_training_scenes(cfg: PipelineConfig, data):
    rows = load_dataset(data, cfg.ignore_label)
    scenes = []
    for name, cloud, labels in rows:
        labels.validate(cfg.num_classes, cloud.n)
        scenes.append((normalize_intensity(cloud), labels))
    if not scenes:
        raise DataError(f"no scans under {data}")
    return [r[0] for r in rows], scenes


def cmd_train_surrogate(args) -> int:
    cfg = _resolve(args, _train_overrides(args))
    _, scenes = _load_training_scenes(cfg, args.data)
    result = train_surrogate(scenes, cfg.train)
    out = Path(args.out)
    save_model(result.model, out)
    trace = "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.loss_trace))
    atomic_write_text(str(out) + ".loss.csv", trace)
    _echo_config(cfg, out.parent)
    return EXIT_OK


def cmd_train_lpd(args) -> int:
    over = _train_overrides(args)
    over["lpd"] = {"policy": args.policy, "lr": args.agent_lr}
    cfg = _resolve(args, over)
    ids, scenes = _load_training_scenes(cfg, args.data)
    surrogate = load_model(args.surrogate) if args.surrogate else init_surrogate(cfg.train)
    agent = lpd_mod.make_agent(cfg.lpd.space, cfg.lpd.hidden, cfg.lpd.seed, cfg.lpd.capacity,
                               cfg.lpd.gamma, cfg.lpd.sync_period)
    res = lpd_mod.run_training_pipeline(scenes, surrogate, agent, cfg.train, cfg.lpd, ids)
    out = Path(args.out)
    save_model(res.surrogate, out / "surrogate.nn")
    lpd_mod.save_agent(res.agent, cfg.lpd.space, out / "agent.nn")
    atomic_write_text(out / "episodes.csv", lpd_mod.log_to_csv(res.log))
    _echo_config(cfg, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve(args, {})
    model = load_model(args.model)
    rows = load_dataset(args.data, model.ignore_label)
    cm = ConfusionMatrix(model.num_classes)
    for _, cloud, labels in rows:
        cm = accumulate(cm, predict(model, normalize_intensity(cloud)), labels)
    names = CLASS_NAMES if model.num_classes == len(CLASS_NAMES) else None
    text = report_csv(cm, names)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export_ply(args) -> int:
    model = load_model(args.model)
    cloud = normalize_intensity(read_scan(args.scan))
    label_path = Path(args.labels) if args.labels else label_path_for(args.scan)
    labels = read_labels(label_path, model.ignore_label)
    if len(labels) != cloud.n:
        raise DataError(f"{label_path}: {len(labels)} labels for {cloud.n} points")
    flags = correctness_flags(predict(model, cloud), labels)
    atomic_write_bytes(args.out, export_ply(cloud, flags))
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _resolve(args, {})
    rows = load_dataset(args.data, cfg.ignore_label, require_labels=False)
    counts = np.zeros(cfg.num_classes, dtype=np.int64)
    ignored = points = 0
    max_range = 0.0
    for _, cloud, labels in rows:
        points += cloud.n
        if cloud.n:
            max_range = max(max_range, float(cloud.ranges.max()))
        if labels is not None:
            sem = labels.semantic
            keep = sem != labels.ignore_label
            ignored += int((~keep).sum())
            counts += np.bincount(sem[keep], minlength=cfg.num_classes)[:cfg.num_classes]
    report = {"scans": len(rows), "points": points, "ignored": ignored,
              "max_range": max_range, "class_counts": counts.tolist()}
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lidarwx", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="SUBCOMMAND")

    def common(sp, workers=False):
        sp.add_argument("--config", help="JSON pipeline config; flags override its fields")
        sp.add_argument("--seed", type=int, help="master seed")
        if workers:
            sp.add_argument("--workers", type=int, help="parallel worker processes")

    sp = sub.add_parser("gen-scenes", help="write synthetic labeled scans")
    common(sp, workers=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=10)
    sp.set_defaults(func=cmd_gen_scenes)

    sp = sub.add_parser("corrupt", help="apply a weather distortion to scans")
    common(sp, workers=True)
    sp.add_argument("--in", dest="input", required=True, help="dataset dir or .bin scan")
    sp.add_argument("--out", required=True)
    sp.add_argument("--kind", required=True, choices=[k.value for k in Kind])
    sp.add_argument("--ratio", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--mode", help="bernoulli|exact (point_drop), signed|attenuate (intensity)")
    sp.add_argument("--labels", help="label file for a single-scan input")
    sp.add_argument("--labels-out", help="output label file for a single-scan input")
    sp.set_defaults(func=cmd_corrupt)

    sp = sub.add_parser("augment", help="apply selective jittering to scans")
    common(sp, workers=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--rj-sigma", type=float)
    sp.add_argument("--no-dsj", action="store_true")
    sp.add_argument("--no-asj", action="store_true")
    sp.add_argument("--no-rj", action="store_true")
    sp.set_defaults(func=cmd_augment)

    for name, func, help_ in (("train-surrogate", cmd_train_surrogate, "train the segmenter"),
                              ("train-lpd", cmd_train_lpd, "train segmenter with SJ + LPD")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int)
        if name == "train-lpd":
            sp.add_argument("--surrogate", help="start from this checkpoint")
            sp.add_argument("--policy", choices=["agent", "noop", "random"])
            sp.add_argument("--agent-lr", type=float)
        sp.set_defaults(func=func)

    sp = sub.add_parser("eval", help="per-class IoU and mIoU")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", help="metrics CSV (stdout if omitted)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export-ply", help="colour a scan by prediction correctness")
    sp.add_argument("--model", required=True)
    sp.add_argument("--scan", required=True)
    sp.add_argument("--labels")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_ply)

    sp = sub.add_parser("stats", help="dataset summary")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_stats)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except InvalidSpecError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (LidarWxError, OSError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
