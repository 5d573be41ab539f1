"""Command-line entry point: ``ringpose <subcommand> [options] --out DIR``.

Every subcommand resolves its configuration as built-in defaults, then an
optional ``--config`` JSON file (a plain object of the same keys, or a
previous run's manifest), then explicit flags. The resolved snapshot is
written to ``DIR/manifest.json`` together with the seeds, the input and
output paths, the tool version and the wall-clock duration; passing that
manifest back as ``--config`` reproduces the outputs.

Exit codes: 0 success, 1 domain error, 2 usage error (bad flag, missing
input, malformed or mismatched config).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import augment as aug
from .chirp import ChirpParams, Waveform, generate_chirp, read_csv, read_pcm, transmit, write_csv, write_pcm
from .dataset import (
    LabeledWindow,
    WindowSpec,
    gesture_windows,
    load_dataset,
    make_windows,
    save_dataset,
    sync_labels,
    write_label_map,
)
from .echo import EchoProcessor, read_profile_csv, write_profile_csv, write_profile_pgm
from .errors import RingPoseError
from .estimate import (
    evaluate_gesture,
    evaluate_pose,
    fit,
    import_predictions,
    predict_gestures,
    predict_poses,
    write_predictions,
)
from .hand import read_keypoints, write_keypoints_jsonl
from .posesets import gesture_label_map
from .stream import (
    SAMPLES_PER_PACKET,
    Pipeline,
    PipelineConfig,
    Replay,
    benchmark,
    throughput,
    waveform_from_capture,
    write_capture,
    write_latency_report,
)
from .studies import GestureStudyConfig, Scenario, StudyConfig, run_gesture_study, run_pose_study, simulate_scenario


class UsageError(Exception):
    """Problem with how the tool was invoked (exit code 2)."""


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# key -> (type, default, help). Paths are part of the config so manifests replay.
_CHIRP = {
    "f_start": (float, 20000.0, "chirp start frequency (Hz)"),
    "f_end": (float, 24000.0, "chirp end frequency (Hz)"),
    "sample_rate": (float, 50000.0, "sample rate (Hz)"),
    "frame_len": (int, 600, "samples per chirp period"),
    "taper": (bool, False, "apply a short raised-cosine edge taper"),
}
_WINDOW = {
    "width": (int, 100, "window width in columns"),
    "stride": (int, 1, "columns between windows"),
}
SCHEMAS = {
    "synth": {
        "frames": (int, 1, "number of chirp periods to write"),
        **_CHIRP,
    },
    "simulate": {
        "scenario": (str, None, "scenario JSON file"),
        "seed": (int, 0, "simulation seed"),
        "noise_std": (float, None, "override the scenario noise level"),
        "capture": (bool, True, "also write the packet capture"),
    },
    "echoprofile": {
        "in": (str, None, "received recording (.pcm, .csv or packet capture .bin)"),
        "tx": (str, None, "template recording; first frame is used"),
        "tx_default": (bool, False, "use the default 20-24 kHz chirp as template"),
        "t0": (int, None, "direct-path pixel (estimated from the first frames if omitted)"),
    },
    "augment": {
        "in": (str, None, "profile directory (original.csv, differential.csv) or .rapd dataset"),
        "seed": (int, 0, "augmentation seed"),
        "classification": (bool, False, "also apply the horizontal (time) shift"),
        "copies": (int, 1, "augmented copies per window (datasets only)"),
    },
    "dataset-build": {
        "in": (str, None, "received recording (.pcm, .csv or .bin)"),
        "labels": (str, None, "keypoint file (JSONL or 64-column CSV) for pose datasets"),
        "instances": (str, None, "instances JSON [[t_start, class_id], ...] for gesture datasets"),
        "kind": (str, "pose", "pose or gesture"),
        "instance_s": (float, 2.0, "gesture instance duration (s)"),
        "hand_length": (float, None, "measured wrist-to-pinky-MCP length for size normalization (mm)"),
        "t0": (int, None, "direct-path pixel"),
        "augment_copies": (int, 0, "augmented copies added per window"),
        "seed": (int, 0, "augmentation seed"),
        **_WINDOW,
    },
    "eval-pose": {
        "train": (list, None, "training datasets (.rapd)"),
        "test": (str, None, "test dataset (.rapd)"),
        "predictions": (str, None, "externally produced predictions (JSONL) scored against --test"),
        "k": (int, 1, "neighbours"),
        "study": (bool, False, "run the synthetic leave-one-session-out pose study instead"),
        "sessions": (int, 12, "sessions for --study"),
        "seed": (int, 2024, "seed for --study"),
    },
    "eval-gesture": {
        "train": (list, None, "training datasets (.rapd)"),
        "test": (str, None, "test dataset (.rapd)"),
        "predictions": (str, None, "externally produced predictions (JSONL) scored against --test"),
        "k": (int, 1, "neighbours"),
        "study": (bool, False, "run the synthetic leave-one-session-out gesture study instead"),
        "sessions": (int, 9, "sessions for --study"),
        "seed": (int, 7, "seed for --study"),
    },
    "replay": {
        "in": (str, None, "packet capture (.bin)"),
        "model": (list, None, "training datasets (.rapd) for the k-NN model"),
        "k": (int, 1, "neighbours"),
        "rate_factor": (float, 0.0, "pacing relative to 83.33 packets/s (0 = as fast as possible)"),
        "threaded": (bool, True, "run stages on separate threads"),
        "queue_size": (int, 64, "bounded queue length between stages"),
        "overflow": (str, "drop_oldest", "drop_oldest or block when the window queue is full"),
        "t0": (int, None, "direct-path pixel"),
        **_WINDOW,
    },
    "bench": {
        "windows": (int, 500, "windows to time"),
        "width": (int, 100, "window width"),
        "seed": (int, 0, "seed for the synthetic frames"),
        "throughput_seconds": (float, 10.0, "seconds of audio for the throughput run (0 to skip)"),
    },
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ringpose", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=(_HANDLERS[name].__doc__ or "").strip().split("\n")[0])
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON config or previous manifest")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: $RAP_THREADS or all cores)")
        for key, (typ, default, text) in schema.items():
            flag = _flag(key)
            if typ is bool:
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None, help=text)
            elif typ is list:
                p.add_argument(flag, dest=key, nargs="+", default=None, help=text)
            else:
                p.add_argument(flag, dest=key, type=typ, default=None, help=f"{text} (default: {default})")
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    schema = SCHEMAS[command]
    cfg = {k: v[1] for k, v in schema.items()}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"missing input: config file {path} not found")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})")
        if not isinstance(loaded, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        if "subcommand" in loaded and "config" in loaded:
            if loaded["subcommand"] != command:
                raise UsageError(f"manifest was written by '{loaded['subcommand']}', not '{command}'")
            loaded = loaded["config"]
        unknown = sorted(set(loaded) - set(schema))
        if unknown:
            raise UsageError(f"config schema mismatch: unknown keys {unknown} for '{command}'")
        for key, value in loaded.items():
            typ = schema[key][0]
            if value is not None and not _type_ok(value, typ):
                raise UsageError(f"config schema mismatch: '{key}' should be {typ.__name__}, got {value!r}")
            cfg[key] = value
    for key in schema:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _type_ok(value, typ) -> bool:
    if typ is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if typ is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if typ is list:
        return isinstance(value, list)
    return isinstance(value, typ)


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.threads
    env = os.environ.get("RAP_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"RAP_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise UsageError("RAP_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _need(cfg, key, command):
    if cfg.get(key) is None:
        raise UsageError(f"'{command}' needs {_flag(key)}")
    return cfg[key]


def _input(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"missing input: {p} not found")
    return p


def read_recording(path, sample_rate: float = 50000.0) -> Waveform:
    path = _input(path)
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return read_csv(path, sample_rate)
    if suffix == ".bin":
        return waveform_from_capture(path.read_bytes(), sample_rate)
    return read_pcm(path, sample_rate)


# -- handlers ----------------------------------------------------------------
# Each returns (outputs, inputs, seeds) and writes only under ``out``.

def cmd_synth(cfg, out, threads):
    """Write the transmitted chirp train as PCM and CSV."""
    params = ChirpParams(cfg["f_start"], cfg["f_end"], cfg["sample_rate"], cfg["frame_len"], taper=cfg["taper"])
    tx = transmit(params, cfg["frames"])
    write_pcm(out / "tx.pcm", tx)
    write_csv(out / "tx.csv", tx)
    return ["tx.pcm", "tx.csv"], [], {}


def cmd_simulate(cfg, out, threads):
    """Render a scenario into a received recording plus ground truth."""
    path = _input(_need(cfg, "scenario", "simulate"))
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"scenario {path} is not valid JSON: {exc.msg} (line {exc.lineno})")
    raw = {**raw, "seed": cfg["seed"]}
    if cfg["noise_std"] is not None:
        raw["noise_std"] = cfg["noise_std"]
    if not isinstance(raw, dict):
        raise UsageError(f"scenario {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(Scenario.__dataclass_fields__))
    if unknown:
        raise UsageError(f"scenario schema mismatch: unknown keys {unknown}")
    try:
        scenario = Scenario.from_dict(raw)
    except TypeError as exc:
        raise UsageError(f"scenario schema mismatch: {exc}")
    result = simulate_scenario(scenario, threads=threads)
    write_pcm(out / "rx.pcm", result.rx)
    write_keypoints_jsonl(out / "ground_truth.jsonl", result.ground_truth)
    (out / "instances.json").write_text(json.dumps(result.instances) + "\n")
    (out / "scenario.json").write_text(json.dumps(scenario.to_dict(), indent=1) + "\n")
    outputs = ["rx.pcm", "ground_truth.jsonl", "instances.json", "scenario.json"]
    if scenario.kind == "gestures":
        write_label_map(out / "labels.json", gesture_label_map())
        outputs.append("labels.json")
    if cfg["capture"]:
        write_capture(out / "capture.bin", result.rx.samples)
        outputs.append("capture.bin")
    return outputs, [str(path)], {"seed": scenario.seed}


def _template(cfg) -> np.ndarray:
    if cfg["tx"] is not None:
        tx = read_recording(cfg["tx"])
        if len(tx) < SAMPLES_PER_PACKET:
            raise UsageError("template recording is shorter than one frame")
        return tx.samples[:SAMPLES_PER_PACKET]
    return generate_chirp().samples


def cmd_echoprofile(cfg, out, threads):
    """Compute original and differential echo profiles (CSV and PGM)."""
    if cfg["tx"] is None and not cfg["tx_default"]:
        raise UsageError("'echoprofile' needs --tx FILE or --tx-default")
    rx = read_recording(_need(cfg, "in", "echoprofile"))
    profile, t0 = EchoProcessor(_template(cfg)).profile(rx, t0=cfg["t0"])
    write_profile_csv(profile, out)
    write_profile_pgm(profile, out)
    (out / "t0.json").write_text(json.dumps({"t0": int(t0)}) + "\n")
    inputs = [cfg["in"]] + ([cfg["tx"]] if cfg["tx"] else [])
    return ["original.csv", "differential.csv", "original.pgm", "differential.pgm", "t0.json"], inputs, {}


def cmd_augment(cfg, out, threads):
    """Apply seeded augmentation to a profile directory or a dataset."""
    src = _input(_need(cfg, "in", "augment"))
    acfg = aug.AugmentConfig(seed=cfg["seed"])
    if src.is_dir():
        profile = read_profile_csv(src)
        result = aug.augment(profile, acfg, cfg["classification"])
        write_profile_csv(result, out)
        write_profile_pgm(result, out)
        return ["original.csv", "differential.csv", "original.pgm", "differential.pgm"], [str(src)], {
            "seed": cfg["seed"]}
    windows = load_dataset(src)
    result = []
    for i, w in enumerate(windows):
        for c in range(cfg["copies"]):
            x = aug.augment(w.input, acfg.for_item(i * cfg["copies"] + c), cfg["classification"])
            result.append(LabeledWindow(x, w.label, w.t_last, w.flagged))
    save_dataset(result, out / "augmented.rapd", {"source": str(src), "seed": cfg["seed"]})
    return ["augmented.rapd"], [str(src)], {"seed": cfg["seed"]}


def cmd_dataset_build(cfg, out, threads):
    """Window a recording and its labels into an RAPD dataset."""
    rx = read_recording(_need(cfg, "in", "dataset-build"))
    profile, t0 = EchoProcessor(generate_chirp()).profile(rx, t0=cfg["t0"])
    inputs = [cfg["in"]]
    if cfg["kind"] == "pose":
        labels_path = _input(_need(cfg, "labels", "dataset-build"))
        inputs.append(str(labels_path))
        labels = sync_labels(profile, read_keypoints(labels_path), hand_length=cfg["hand_length"])
        windows = make_windows(profile, labels, WindowSpec(cfg["width"], cfg["stride"]))
        classification = False
    elif cfg["kind"] == "gesture":
        inst_path = _input(_need(cfg, "instances", "dataset-build"))
        inputs.append(str(inst_path))
        instances = [(float(t), int(c)) for t, c in json.loads(inst_path.read_text())]
        windows = gesture_windows(profile, instances, WindowSpec.classification(), cfg["instance_s"])
        classification = True
    else:
        raise UsageError(f"--kind must be 'pose' or 'gesture', got {cfg['kind']!r}")
    acfg = aug.AugmentConfig(seed=cfg["seed"])
    extra = []
    for i, w in enumerate(windows):
        for c in range(cfg["augment_copies"]):
            x = aug.augment(w.input, acfg.for_item(i * cfg["augment_copies"] + c), classification)
            extra.append(LabeledWindow(x, w.label, w.t_last, w.flagged))
    save_dataset(windows + extra, out / "dataset.rapd", {"recording": cfg["in"], "t0": int(t0), "seed": cfg["seed"]})
    return ["dataset.rapd"], inputs, {"seed": cfg["seed"]}


def _load_many(paths) -> list:
    windows = []
    for p in paths:
        windows += load_dataset(_input(p))
    return windows


def _evaluate(cfg, out, kind):
    command = f"eval-{kind}"
    if cfg["study"]:
        if kind == "pose":
            report, _ = run_pose_study(StudyConfig(n_sessions=cfg["sessions"], seed=cfg["seed"]), cfg["k"])
        else:
            report, _ = run_gesture_study(GestureStudyConfig(n_sessions=cfg["sessions"], seed=cfg["seed"]), cfg["k"])
        inputs, outputs = [], []
    else:
        test = load_dataset(_input(_need(cfg, "test", command)))
        truths = [w.label for w in test]
        times = [w.t_last for w in test]
        inputs = [cfg["test"]]
        if cfg["predictions"] is not None:
            preds = import_predictions(_input(cfg["predictions"]), times)
            inputs.append(cfg["predictions"])
            if any(p is None for p in preds):
                raise UsageError("some test windows precede every prediction")
        else:
            model = fit(_load_many(_need(cfg, "train", command)), k=cfg["k"])
            inputs += cfg["train"]
            preds = predict_poses(model, test) if kind == "pose" else predict_gestures(model, test)
        report = evaluate_pose(preds, truths) if kind == "pose" else evaluate_gesture(preds, truths)
        write_predictions(out / "predictions.jsonl", list(zip(times, preds)))
        outputs = ["predictions.jsonl"]
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.table() + "\n")
    print(report.table())
    seeds = {"seed": cfg["seed"]} if cfg["study"] else {}
    return outputs + ["report.json", "report.txt"], inputs, seeds


def cmd_eval_pose(cfg, out, threads):
    """Score pose predictions (k-NN or imported) and write an EvalReport."""
    return _evaluate(cfg, out, "pose")


def cmd_eval_gesture(cfg, out, threads):
    """Score gesture predictions (k-NN or imported) and write an EvalReport."""
    return _evaluate(cfg, out, "gesture")


def cmd_replay(cfg, out, threads):
    """Replay a packet capture through the real-time pipeline."""
    src = _input(_need(cfg, "in", "replay"))
    model = fit(_load_many(cfg["model"]), k=cfg["k"]) if cfg["model"] else None
    pcfg = PipelineConfig(width=cfg["width"], stride=cfg["stride"], queue_size=cfg["queue_size"],
                          threaded=cfg["threaded"] and threads > 1, overflow=cfg["overflow"], t0=cfg["t0"])
    pipe = Pipeline(generate_chirp(), pcfg, model)
    source = Replay(src, cfg["rate_factor"])
    preds = []
    n_flagged = 0
    for o in pipe.run(source):
        n_flagged += o.flagged
        if o.prediction is not None:
            preds.append((o.t_last, o.prediction))
    write_predictions(out / "predictions.jsonl", preds)
    report = pipe.stats.report()
    report.update({
        "t0": pipe.t0,
        "dropped_windows": pipe.dropped_windows,
        "flagged_windows": n_flagged,
        "substituted_frames": pipe.substituted_frames,
        "gaps": [[g.after_seq, g.next_seq] for g in source.gaps],
        "corrupt_packets": source.integrity_errors,
        "framing_errors": source.framing_errors,
        "truncated": source.truncated,
    })
    write_latency_report(out / "latency.json", report)
    inputs = [str(src)] + list(cfg["model"] or [])
    return ["predictions.jsonl", "latency.json"], inputs, {}


def cmd_bench(cfg, out, threads):
    """Time the in-process stages and write a latency report."""
    report = benchmark(cfg["windows"], cfg["width"], seed=cfg["seed"])
    if cfg["throughput_seconds"] > 0:
        report["throughput"] = throughput(cfg["throughput_seconds"], cfg["width"], threaded=threads > 1)
    write_latency_report(out / "bench.json", report)
    stage = report["stages"]["correlate_ms"]
    print(f"Echo Profile Calculation: mean {stage['mean_ms']:.3f} ms, p95 {stage['p95_ms']:.3f} ms "
          f"per {cfg['width']}-column window (reference 14.7 ms)")
    return ["bench.json"], [], {"seed": cfg["seed"]}


_HANDLERS = {
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "echoprofile": cmd_echoprofile,
    "augment": cmd_augment,
    "dataset-build": cmd_dataset_build,
    "eval-pose": cmd_eval_pose,
    "eval-gesture": cmd_eval_gesture,
    "replay": cmd_replay,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    command = args.command
    try:
        cfg = resolve_config(command, args)
        threads = _threads(args)
        out = Path(args.out)
        if out.exists() and not out.is_dir():
            raise UsageError(f"--out {out} exists and is not a directory")
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        outputs, inputs, seeds = _HANDLERS[command](cfg, out, threads)
        manifest = {
            "subcommand": command,
            "config": cfg,
            "seeds": seeds,
            "inputs": [str(p) for p in inputs],
            "outputs": [str(out / name) for name in outputs],
            "threads": threads,
            "version": _version(),
            "duration_s": time.perf_counter() - start,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    except UsageError as exc:
        print(f"ringpose {command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (RingPoseError, ValueError, KeyError) as exc:
        print(f"ringpose {command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
