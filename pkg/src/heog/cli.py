"""Command-line entry point: ``heog <command> [options]``.

Every command reads an optional key=value config file (``--config`` or the
``HEOG_CONFIG`` environment variable), applies ``--set key=value`` overrides
and then explicit flags, and writes a manifest with output checksums.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 internal failure. Errors are also reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import container
from .cnn.data import build_windows, split, split_groups
from .cnn.evaluate import (
    ablation,
    evaluate,
    window_size_sweep,
    write_ablation_csv,
    write_sweep_csv,
)
from .cnn.model import ModelArch, WeightStore
from .cnn.train import TrainConfig, arch_for, train
from .errors import ConfigError, DataError, HeogError
from .labeler import label_recording
from .power import DEFAULT_OVERLAPS, BatterySpec, overlap_csv, overlap_table
from .quant import QuantScheme, quantization_report, quantize, write_report_csv
from .runconfig import load_config, parse_overrides, write_manifest
from .signal import (
    ChannelSubset,
    LabelSet,
    read_events_jsonl,
    read_gaze_csv,
    read_trace_csv,
    write_events_jsonl,
)
from .stream import (
    StreamConfig,
    StreamEngine,
    latency_stats,
    measure_latency,
    run_stream,
    run_threaded,
    trace_blocks,
    write_latency_csv,
    write_latency_stats_csv,
)
from .stream import write_events_jsonl as write_predictions_jsonl
from .synth import SynthConfig, generate_dataset, read_dataset, write_dataset

log = logging.getLogger("heog")

# settings shared by several commands, beyond the SynthConfig/TrainConfig fields
EXTRA_DEFAULTS = {
    "n": 100,
    "classes": "full10",
    "channels": "all",
    "per_event": 4,
    "window_seed": 0,
    "targets": "labels",
    "calibration": "all",
    "stride": 2,
    "refractory": 0.2,
    "confirm": 6,
    "rearm": 6,
    "sensors": 5,
    "capacity_mah": 175.0,
    "voltage_v": 3.7,
    "sizes": "25,100,240",
}

SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthConfig)}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
KNOWN_KEYS = SYNTH_KEYS | TRAIN_KEYS | set(EXTRA_DEFAULTS)


class Settings(dict):
    """Merged string settings with typed accessors."""

    def int(self, key) -> int:
        return self._conv(key, int)

    def float(self, key) -> float:
        return self._conv(key, float)

    def str(self, key) -> str:
        return str(self[key])

    def _conv(self, key, fn):
        try:
            return fn(self[key])
        except (TypeError, ValueError):
            raise ConfigError(f"invalid value for {key}: {self[key]!r}") from None


def settings(args, flags: dict) -> Settings:
    merged = {k: str(v) for k, v in EXTRA_DEFAULTS.items()}
    merged.update(load_config(args.config))
    merged.update(parse_overrides(args.set))
    merged.update({k: str(v) for k, v in flags.items() if v is not None})
    unknown = sorted(set(merged) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return Settings(merged)


def synth_config(s: Settings) -> SynthConfig:
    try:
        return SynthConfig.from_mapping({k: v for k, v in s.items() if k in SYNTH_KEYS})
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def train_config(s: Settings) -> TrainConfig:
    kw = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name in s:
            kw[f.name] = s._conv(f.name, type(f.default))
    return TrainConfig(**kw)


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _need_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _load_recordings(data_dir, targets: str = "labels"):
    recs = read_dataset(_need_dir(data_dir, "dataset directory"))
    if not recs:
        raise DataError(f"no recordings under {data_dir}")
    if targets == "labels" and any(r.labels is None for r in recs):
        raise DataError(f"{data_dir} has recordings without labels.jsonl; run `heog label --data {data_dir}` first")
    return recs


def _load_model(args) -> tuple[ModelArch, WeightStore]:
    if args.model:
        d = _need_dir(args.model, "model directory")
        weights, arch = d / "weights.eswt", d / "arch.json"
    else:
        if not (args.weights and args.arch):
            raise ConfigError("pass --model DIR or both --weights and --arch")
        weights, arch = Path(args.weights), Path(args.arch)
    a = ModelArch.load(_need_file(arch, "architecture file"))
    store = container.load_weights(_need_file(weights, "weights file"))
    store.check(a)
    return a, store


def _model_label_set(arch: ModelArch) -> LabelSet:
    for ls in LabelSet:
        if ls.size == arch.n_classes:
            return ls
    raise DataError(f"no label set with {arch.n_classes} classes")


def _save_model(out: Path, arch: ModelArch, store: WeightStore) -> list[Path]:
    arch.save(out / "arch.json")
    container.save(out / "weights.eswt", store)
    return [out / "arch.json", out / "weights.eswt"]


def _train_model(recs, s: Settings, subset=None, label_set=None, n=None):
    cfg = train_config(s)
    ds = build_windows(
        recs,
        n or s.int("n"),
        label_set or s.str("classes"),
        subset or s.str("channels"),
        per_event=s.int("per_event"),
        seed=s.int("window_seed"),
        use=s.str("targets"),
    )
    tr, te = split(ds, cfg.split_mode, cfg.test_fraction, cfg.seed)
    arch = arch_for(tr)
    log.info("model: %d parameters, input %d x %d", arch.parameter_count, arch.n_points, arch.n_channels)
    store, tlog = train(arch, tr, cfg)
    return arch, store, tlog, tr, te


def _test_split(recs, s: Settings, arch: ModelArch):
    cfg = train_config(s)
    subset = {2: "contact", 3: "contactless", 5: "all"}[arch.n_channels]
    ds = build_windows(
        recs, arch.n_points, _model_label_set(arch), subset,
        per_event=s.int("per_event"), seed=s.int("window_seed"), use=s.str("targets"),
    )
    return split(ds, cfg.split_mode, cfg.test_fraction, cfg.seed)[1]


# --- commands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    s = settings(args, {"seed": args.seed, "n_subjects": args.subjects})
    cfg = synth_config(s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recs = generate_dataset(cfg)
    dirs = write_dataset(recs, out)
    files = [p for d in dirs for p in sorted(d.iterdir())]
    (out / "synth_config.json").write_text(json.dumps(cfg.to_mapping(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    files.append(out / "synth_config.json")
    write_manifest(out / "manifest.json", "generate", dict(s), cfg.seed, {}, files)
    print(json.dumps({"recordings": len(recs), "events": sum(len(r.events) for r in recs), "out": str(out)}))
    return 0


def cmd_label(args) -> int:
    s = settings(args, {"calibration": args.calibration})
    calib = s.str("calibration")
    if args.data:
        root = _need_dir(args.data, "dataset directory")
        recs = read_dataset(root)
        if not recs:
            raise DataError(f"no recordings under {root}")
        outputs, kept, dropped = [], 0, {}
        for r in recs:
            res = label_recording(r.gaze, r.prompts, calibration=calib)
            p = root / f"subject_{r.subject:02d}" / f"rec_{r.index:02d}" / "labels.jsonl"
            write_events_jsonl(res.events, p)
            outputs.append(p)
            kept += len(res.events)
            for d in res.discarded:
                dropped[d.reason] = dropped.get(d.reason, 0) + 1
        write_manifest(root / "manifest_label.json", "label", dict(s), None, {"data": root}, outputs)
        print(json.dumps({"recordings": len(recs), "labels": kept, "discarded": dropped}))
        return 0
    if not (args.gaze and args.prompts and args.out):
        raise ConfigError("pass --data DIR, or --gaze, --prompts and --out")
    gaze = read_gaze_csv(_need_file(args.gaze, "gaze file"))
    prompts = read_events_jsonl(_need_file(args.prompts, "prompts file"))
    res = label_recording(gaze, prompts, calibration=calib)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events_jsonl(res.events, out)
    write_manifest(
        out.with_name(out.stem + ".manifest.json"), "label", dict(s), None,
        {"gaze": args.gaze, "prompts": args.prompts}, [out],
    )
    print(json.dumps({"labels": len(res.events), "discarded": len(res.discarded)}))
    return 0


def _train_flags(args) -> dict:
    return {
        "n": args.n, "classes": args.classes, "channels": args.channels,
        "epochs": args.epochs, "seed": args.seed,
    }


def cmd_train(args) -> int:
    s = settings(args, _train_flags(args))
    recs = _load_recordings(args.data, s.str("targets"))
    arch, store, tlog, tr, te = _train_model(recs, s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _save_model(out, arch, store)
    tlog.write_csv(out / "train_log.csv")
    files.append(out / "train_log.csv")
    write_manifest(out / "manifest.json", "train", dict(s), train_config(s).seed, {"data": args.data}, files)
    print(json.dumps({"parameters": arch.parameter_count, "best_epoch": tlog.best_epoch, "train_windows": len(tr)}))
    return 0


def cmd_eval(args) -> int:
    s = settings(args, _train_flags(args))
    recs = _load_recordings(args.data, s.str("targets"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if args.model or args.weights:
        arch, store = _load_model(args)
        te = _test_split(recs, s, arch)
    else:
        # no weights given: train for the requested channel subset and classes
        arch, store, tlog, _, te = _train_model(recs, s)
        files += _save_model(out, arch, store)
        tlog.write_csv(out / "train_log.csv")
        files.append(out / "train_log.csv")
    res = evaluate(arch, store, te)
    res.write_confusion_csv(out / "confusion.csv")
    metrics = {
        "accuracy": round(res.accuracy, 6),
        "windows": res.n,
        "label_set": te.label_set.value,
        "channels": te.subset.value,
        "n_channels": arch.n_channels,
        "n_points": arch.n_points,
        "parameters": arch.parameter_count,
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files += [out / "confusion.csv", out / "metrics.json"]
    write_manifest(out / "manifest.json", "eval", dict(s), train_config(s).seed, {"data": args.data}, files)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_quantize(args) -> int:
    s = settings(args, {})
    arch, store = _load_model(args)
    scheme = QuantScheme.parse(args.bits)
    q = quantize(store, scheme)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    size = container.save(out, q)
    files = [out]
    summary = {
        "scheme": scheme.value,
        "parameters": q.parameter_count,
        "payload_bytes": q.payload_bytes,
        "container_bytes": size,
        "payload_kib": round(q.payload_bytes / 1024, 2),
    }
    if args.data:
        recs = _load_recordings(args.data, s.str("targets"))
        te = _test_split(recs, s, arch)
        rows = quantization_report(arch, store, te.X, te.y)
        rep = out.with_name(out.stem + "_report.csv")
        write_report_csv(rows, rep)
        files.append(rep)
    write_manifest(out.with_name(out.stem + ".manifest.json"), "quantize", dict(s, bits=scheme.value), None, {"model": args.model or args.weights}, files)
    print(json.dumps(summary))
    return 0


def cmd_stream_sim(args) -> int:
    s = settings(args, {"stride": args.stride, "refractory": args.refractory, "confirm": args.confirm, "rearm": args.rearm})
    arch, store = _load_model(args)
    trace = read_trace_csv(_need_file(args.trace, "trace file"))
    cfg = StreamConfig(
        arch.n_points, s.int("stride"), s.float("refractory"), _model_label_set(arch),
        trace.sample_rate, s.int("confirm"), s.int("rearm"),
    )
    engine = StreamEngine(arch, store, cfg, start_time=trace.start_time)
    if args.threaded:
        events = run_threaded(engine, trace_blocks(trace, args.chunk))
    else:
        events = run_stream(engine, trace, args.chunk)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_predictions_jsonl(events, out)
        write_manifest(out.with_name(out.stem + ".manifest.json"), "stream-sim", dict(s), None, {"trace": args.trace}, [out])
    else:
        for e in events:
            print(json.dumps(e.to_json()))
    log.info("%d inferences, %d events", engine.inference_count, len(events))
    return 0


def cmd_latency(args) -> int:
    s = settings(args, {"stride": args.stride})
    arch, store = _load_model(args)
    recs = _load_recordings(args.data, s.str("targets"))
    if not args.all_subjects:
        cfg = train_config(s)
        key = (lambda r: r.subject) if cfg.split_mode == "subject" else (lambda r: r.key)
        _, test_groups = split_groups([key(r) for r in recs], cfg.test_fraction, cfg.seed)
        recs = [r for r in recs if key(r) in test_groups]
    records = []
    for r in recs:
        truth = r.labels if s.str("targets") == "labels" else r.events
        records += measure_latency(arch, store, r.trace, truth, _model_label_set(arch), s.int("stride"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_latency_csv(records, out / "latency.csv")
    stats = latency_stats(records)
    write_latency_stats_csv(stats, out / "latency_stats.csv")
    write_manifest(out / "manifest.json", "latency", dict(s), None, {"data": args.data}, [out / "latency.csv", out / "latency_stats.csv"])
    overall = next(x for x in stats if x.label == "all")
    print(json.dumps({"movements": overall.count, "median_ms": round(overall.median * 1000, 1), "never_predicted_rate": round(overall.never_predicted_rate, 4)}))
    return 0


def cmd_power(args) -> int:
    s = settings(args, {"sensors": args.sensors, "n": args.n})
    overlaps = args.overlap or DEFAULT_OVERLAPS
    rows = overlap_table(
        overlaps, s.int("sensors"), s.int("n"),
        battery=BatterySpec(s.float("capacity_mah"), s.float("voltage_v")),
    )
    sys.stdout.write(overlap_csv(rows, full=args.full or not args.overlap))
    return 0


def cmd_report(args) -> int:
    s = settings(args, _train_flags(args))
    recs = _load_recordings(args.data, s.str("targets"))
    cfg = train_config(s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    sizes = [int(x) for x in s.str("sizes").split(",") if x.strip()]
    per_event = s.int("per_event")

    rows = window_size_sweep(recs, sizes, s.str("classes"), s.str("channels"), cfg, per_event)
    write_sweep_csv(rows, out / "window_sizes.csv")
    files.append(out / "window_sizes.csv")

    rows = ablation(recs, (LabelSet.FULL10, LabelSet.BASIC6), tuple(ChannelSubset), s.int("n"), cfg, per_event)
    write_ablation_csv(rows, out / "ablation.csv")
    files.append(out / "ablation.csv")

    arch, store, tlog, _, te = _train_model(recs, s, ChannelSubset.ALL, LabelSet.FULL10)
    files += _save_model(out, arch, store)
    res = evaluate(arch, store, te)
    res.write_confusion_csv(out / "confusion.csv")
    write_report_csv(quantization_report(arch, store, te.X, te.y), out / "quantization.csv")
    files += [out / "confusion.csv", out / "quantization.csv"]

    key = (lambda r: r.subject) if cfg.split_mode == "subject" else (lambda r: r.key)
    held = set(te.subject.tolist()) if cfg.split_mode == "subject" else set(te.acquisition.tolist())
    records = []
    for r in recs:
        if key(r) in held:
            truth = r.labels if s.str("targets") == "labels" else r.events
            records += measure_latency(arch, store, r.trace, truth, LabelSet.FULL10, s.int("stride"))
    write_latency_csv(records, out / "latency.csv")
    write_latency_stats_csv(latency_stats(records), out / "latency_stats.csv")
    (out / "power.csv").write_text(overlap_csv(overlap_table(n_sensors=s.int("sensors"))), encoding="utf-8")
    files += [out / "latency.csv", out / "latency_stats.csv", out / "power.csv"]
    write_manifest(out / "manifest.json", "report", dict(s), train_config(s).seed, {"data": args.data}, files)
    print(json.dumps({"out": str(out), "files": [p.name for p in files]}))
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heog", description="Hybrid EOG eye-movement classification toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file or a manifest.json to replay")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    def model_args(sp):
        sp.add_argument("--model", help="directory holding weights.eswt and arch.json")
        sp.add_argument("--weights", help="ESWT weight container")
        sp.add_argument("--arch", help="architecture JSON")

    def train_args(sp):
        sp.add_argument("--data", required=True, help="dataset directory")
        sp.add_argument("--n", type=int, help="window length in points")
        sp.add_argument("--classes", help="full10 or basic6")
        sp.add_argument("--channels", help="all, contact or contactless")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("generate", help="write a synthetic dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--subjects", type=int)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("label", help="derive movement labels from gaze and prompts")
    common(sp)
    sp.add_argument("--data", help="label every recording of a dataset in place")
    sp.add_argument("--gaze")
    sp.add_argument("--prompts")
    sp.add_argument("--out")
    sp.add_argument("--calibration", choices=("all", "first"))
    sp.set_defaults(func=cmd_label)

    sp = sub.add_parser("train", help="train a classifier")
    common(sp)
    train_args(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate on the held-out split (trains first without weights)")
    common(sp)
    train_args(sp)
    model_args(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("quantize", help="write a quantized ESWT container")
    common(sp)
    model_args(sp)
    sp.add_argument("--bits", required=True, help="32, 16, 8, 4 or 2")
    sp.add_argument("--out", required=True)
    sp.add_argument("--data", help="dataset for the per-scheme accuracy report")
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("stream-sim", help="replay a trace through the streaming engine")
    common(sp)
    model_args(sp)
    sp.add_argument("--trace", required=True)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--refractory", type=float)
    sp.add_argument("--confirm", type=int, help="agreeing windows needed for an event")
    sp.add_argument("--rearm", type=int, help="Straight windows needed before the next event")
    sp.add_argument("--chunk", type=int, default=1, help="frames per push")
    sp.add_argument("--threaded", action="store_true", help="run a producer thread feeding the engine")
    sp.add_argument("--out", help="events JSON Lines (default stdout)")
    sp.set_defaults(func=cmd_stream_sim)

    sp = sub.add_parser("latency", help="measure per-movement latency on the held-out recordings")
    common(sp)
    model_args(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--all-subjects", action="store_true", help="use every recording, not just the held-out split")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_latency)

    sp = sub.add_parser("power", help="inference power and battery lifetime per overlap")
    common(sp)
    sp.add_argument("--overlap", type=float, action="append", help="overlap fraction (repeatable)")
    sp.add_argument("--sensors", type=int)
    sp.add_argument("--n", type=int, help="window length in points")
    sp.add_argument("--full", action="store_true", help="include total power and battery days")
    sp.set_defaults(func=cmd_power)

    sp = sub.add_parser("report", help="all tables as plot-ready CSVs")
    common(sp)
    train_args(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        return _fail(2, e)
    except DataError as e:
        return _fail(3, e)
    except (ValueError, FileNotFoundError) as e:
        return _fail(2, e)
    except HeogError as e:
        return _fail(4, e)
    except Exception as e:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        return _fail(4, e)


if __name__ == "__main__":
    sys.exit(main())
