"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 degraded calibration, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import threading
import time
from pathlib import Path
from typing import Sequence

from .bench import bench
from .bus import TopicBus
from .calibration import BUNDLED, CalibrationProfile, GridSpec, calibrate, collect_baseline, load_baseline_csv, load_profile
from .detector import Detector
from .driftgen import CSV_COLUMNS, SENSOR_PROFILES, Emulator, SensorProfile, stream_csv
from .errors import DriftEnsembleError, InputError
from .estimators import Sample
from .experiment import SEED_ENV, ExperimentConfig, run_experiment, write_reports
from .fleet import load_manifest
from .fleetsim import FleetConfig, run_fleet

EXIT_OK, EXIT_INPUT, EXIT_DEGRADED, EXIT_INTERNAL = 0, 1, 2, 3


def _seed(value: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return value
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _sensor_for(profile: CalibrationProfile, period_ms: int) -> SensorProfile:
    base = profile.baseline
    sigma2 = base.sigma2 if base.sigma2 > 0 else 1.0
    return SensorProfile(profile.sensor_type, base.mu_prime, sigma2, period_ms)


def _print_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------- subcommands


def cmd_calibrate(args) -> int:
    grid = GridSpec.from_dict(json.loads(Path(args.grid).read_text())) if args.grid else GridSpec()
    source = args.source
    if source.endswith(".csv") or (Path(source).is_file() and Path(source).suffix == ".csv"):
        baseline, sensor_type = load_baseline_csv(source, b=args.b, sensor_type=args.sensor_type, device_id=args.device)
        sensor_type = args.sensor_type or sensor_type
    else:
        existing = load_profile(source)
        if not existing.baseline.samples:
            raise InputError(f"profile {source} carries no baseline samples to calibrate from")
        baseline = collect_baseline(existing.baseline.samples)
        sensor_type = args.sensor_type or existing.sensor_type
    profile = calibrate(baseline, grid, sensor_type=sensor_type)
    profile.save(args.out)
    _print_json(
        {
            "out": args.out,
            "sensor_type": profile.sensor_type,
            "delta": profile.delta,
            "beta": profile.beta,
            "lambda": profile.lam,
            "alpha": profile.alpha,
            "l_r": profile.l_r,
            "degraded": profile.degraded,
            "constant_baseline": baseline.constant,
        }
    )
    return EXIT_DEGRADED if profile.degraded else EXIT_OK


def _event_record(event, device_id: str, sensor_type: str) -> dict:
    return {
        "device_id": device_id,
        "sensor_type": sensor_type,
        "start": event.start,
        "end": event.end,
        "window_length": event.window_length,
        "z": event.z_statistic,
        "mean_offset": event.mean_offset,
        "counts": list(event.per_estimator_counts),
    }


def cmd_detect(args) -> int:
    profile = load_profile(args.profile)
    if profile.degraded:
        print("warning: profile is degraded", file=sys.stderr)
    detector = Detector(profile, stream_id=args.device or "")
    n_events = 0
    if args.input.startswith("bus:"):
        topic = args.input[4:]
        bus = TopicBus()
        sub = bus.subscribe(topic)
        emulator = Emulator(_sensor_for(profile, 10_000), seed=_seed(args.seed), device_id=args.device or "emulator")
        for inj in args.inject or []:
            emulator.submit(inj)
        for _ in range(args.samples):
            sample, _ = emulator.next()
            bus.publish(topic, {"index": sample.index, "timestamp": sample.timestamp, "value": sample.value})
            for msg in sub.drain():
                body = msg.json()
                event = detector.ingest(Sample(body["index"], body["timestamp"], body["value"]))
                if event is not None:
                    n_events += 1
                    _print_json(_event_record(event, emulator.device_id, profile.sensor_type))
        bus.close()
    else:
        stream = stream_csv(args.input)
        for row in stream.rows:
            if args.device and row.device_id != args.device:
                continue
            if args.sensor_type and row.sensor_type != args.sensor_type:
                continue
            event = detector.ingest(row.sample)
            if event is not None:
                n_events += 1
                _print_json(_event_record(event, row.device_id, row.sensor_type))
        if stream.skipped:
            print(f"skipped {stream.skipped} malformed row(s)", file=sys.stderr)
    print(f"{n_events} drift event(s) over {detector.n_ingested} samples", file=sys.stderr)
    return EXIT_DEGRADED if profile.degraded else EXIT_OK


def _stdin_listener(emulator: Emulator, stop: threading.Event) -> None:
    for line in sys.stdin:
        if stop.is_set():
            return
        line = line.strip()
        if line:
            emulator.submit(line)


def cmd_emulate(args) -> int:
    profile = load_profile(args.profile)
    sensor = _sensor_for(profile, args.period_ms)
    emulator = Emulator(sensor, seed=_seed(args.seed), device_id=args.device)
    scheduled: dict[int, list[str]] = {}
    for spec in args.inject or []:
        payload, _, at = spec.rpartition("@")
        if not payload:
            payload, at = spec, "0"
        scheduled.setdefault(int(at), []).append(payload)
    stop = threading.Event()
    if args.inject_listen:
        threading.Thread(target=_stdin_listener, args=(emulator, stop), daemon=True).start()
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow([*CSV_COLUMNS, "label"])
        interval = 1.0 / args.rate if args.rate > 0 else 0.0
        for i in range(args.samples):
            for payload in scheduled.get(i, []):
                emulator.submit(payload)
            sample, label = emulator.next()
            writer.writerow([sample.timestamp, args.device, sensor.sensor_type, repr(sample.value), label])
            if interval:
                out.flush()
                time.sleep(interval)
    finally:
        stop.set()
        if out is not sys.stdout:
            out.close()
    for ack in emulator.acks:
        print(json.dumps(ack, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = ExperimentConfig.load(args.config)
    for name in ("jsonl_path", "csv_path", "summary_path"):
        override = getattr(args, name)
        if override:
            setattr(config, name, override)
    if args.runs:
        config.n_runs = args.runs
        config.seeds = None
    report = run_experiment(config)
    for row in report.aggregate():
        print(
            f"{row['sensor']:<12} q={row['q_multiple']:.3g}s2 {row['variant']:<9} "
            f"F1={row['f1_mean']:.4f} P={row['precision_mean']:.3f} R={row['recall_mean']:.3f} n={row['n_runs']}"
        )
    print(json.dumps(report.runtime, sort_keys=True), file=sys.stderr)
    return EXIT_DEGRADED if report.degraded_runs else EXIT_OK


def cmd_fleet_sim(args) -> int:
    devices = load_manifest(args.manifest)
    base = _seed(args.seed)
    all_ok = True
    for k in range(args.runs):
        outcome = run_fleet(devices, args.scenario, FleetConfig(seed=base + k, n_samples=args.samples))
        all_ok &= outcome.correct
        for t, res in outcome.results:
            _print_json({"seed": base + k, "sample": t, **res.to_dict()})
        _print_json(
            {
                "seed": base + k,
                "scenario": outcome.scenario.value,
                "expected": {d: (v.value if v else None) for d, v in outcome.expected.items()},
                "correct": outcome.correct,
            }
        )
    print("all scenarios classified as expected" if all_ok else "misclassification detected", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    profile = load_profile(args.profile)
    report = bench(profile, n_samples=args.samples, seed=_seed(args.seed), drift_every=args.drift_every)
    _print_json(report.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftensemble", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    profile_help = f"profile file (JSON or key = value) or bundled name ({', '.join(BUNDLED)})"

    p = sub.add_parser("calibrate", help="grid-search hyperparameters from a baseline")
    p.add_argument("source", help="CSV with a drift-free prefix, or an existing profile with baseline samples")
    p.add_argument("--out", required=True, help="output profile; .json for JSON, anything else for key = value")
    p.add_argument("--b", type=int, default=100, help="baseline length")
    p.add_argument("--sensor-type")
    p.add_argument("--device")
    p.add_argument("--grid", help="JSON file overriding grid fields")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="run the detector over a CSV file or a bus topic")
    p.add_argument("--profile", required=True, help=profile_help)
    p.add_argument("--input", required=True, help="CSV path, or bus:<topic> to read an emulated stream")
    p.add_argument("--device")
    p.add_argument("--sensor-type")
    p.add_argument("--samples", type=int, default=5000, help="emulated samples for bus input")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject", action="append", help="injection JSON applied to the emulated bus stream")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("emulate", help="emit a labelled synthetic stream as CSV")
    p.add_argument("--profile", required=True, help=profile_help)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default="emulator")
    p.add_argument("--period-ms", type=int, default=10_000)
    p.add_argument("--rate", type=float, default=0.0, help="samples per second; 0 runs unpaced")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--inject", action="append", help="JSON command, optionally suffixed with @<sample index>")
    p.add_argument("--inject-listen", action="store_true", help="read injection JSON lines from stdin")
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("experiment", help="Monte-Carlo F1 evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", type=int, help="override n_runs")
    p.add_argument("--jsonl", dest="jsonl_path")
    p.add_argument("--csv", dest="csv_path")
    p.add_argument("--summary", dest="summary_path")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("fleet-sim", help="simulate peer classification of drifts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scenario", required=True, choices=["natural", "abnormal", "mixed"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--samples", type=int, default=4000)
    p.set_defaults(func=cmd_fleet_sim)

    p = sub.add_parser("bench", help="measure single-stream ingest throughput")
    p.add_argument("--profile", required=True, help=profile_help)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drift-every", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DriftEnsembleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc, OSError) else EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
