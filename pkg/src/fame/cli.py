"""Command-line shell: profile, detect, generate, backtest, serve, tune.

Exit codes: 0 success, 2 configuration error, 3 data error. Errors go to
stderr with a machine-parsable prefix (fame:error:<category>:).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from datetime import datetime, timezone
from pathlib import Path

from .cdr_ingest import DirectoryStream, ScenarioSpec, generate_scenario, write_cdr_file
from .config import EngineConfig
from .engine import Engine, load_scenario_file, run_backtest
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _fail(category: str, message: str) -> None:
    print(f"fame:error:{category}: {message}", file=sys.stderr)


def _load_config(args: argparse.Namespace) -> EngineConfig:
    config = EngineConfig.from_file(args.config) if args.config else EngineConfig()
    overrides = {}
    if getattr(args, "data_dir", None):
        overrides["data_dir"] = args.data_dir
    if getattr(args, "port", None):
        overrides["api_port"] = args.port
    if overrides:
        doc = {**config.__dict__, **overrides}
        doc["combiner_weights"] = list(config.combiner_weights)
        doc["iqr_features"] = list(config.iqr_features)
        doc.update(overrides)
        config = EngineConfig.from_dict(doc)
    return config


def _parse_ts(raw: str) -> datetime:
    dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def cmd_profile(args: argparse.Namespace) -> int:
    config = _load_config(args)
    engine = Engine(config)
    store = engine.build_profiles_from_dir(Path(args.history))
    print(f"profiled {len(store)} block keys over {len(store.dates)} days -> {engine.profiles_path}")
    return EXIT_OK


def cmd_detect(args: argparse.Namespace) -> int:
    config = _load_config(args)
    engine = Engine(config)
    if not len(engine.store):
        raise DataError("no profiles built; run `fame profile` first")
    input_dir = Path(args.input)
    if args.watch:
        stop = threading.Event()
        duration = args.watch_seconds

        def arm():
            stop.set()

        timer = threading.Timer(duration, arm)
        timer.start()
        try:
            outcome = engine.detect_watch(input_dir, stop.is_set)
        finally:
            timer.cancel()
    else:
        stream = DirectoryStream(
            input_dir,
            ledger_path=engine.data_dir / "watch.ledger",
            deadletter_path=engine.data_dir / "watch.deadletter",
        )
        records = list(stream.scan_once())
        engine.counters["records_ingested"] += stream.records_emitted
        engine.counters["malformed_lines"] += stream.malformed_lines
        if args.from_ts or args.to_ts:
            lo = _parse_ts(args.from_ts) if args.from_ts else None
            hi = _parse_ts(args.to_ts) if args.to_ts else None
            records = [
                r for r in records
                if (lo is None or r.start_time >= lo) and (hi is None or r.start_time < hi)
            ]
        outcome = engine.detect_batch(records)
    print(f"processed {outcome.windows_processed} windows, {len(outcome.alerts)} alerts -> {engine.alerts_path}")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"spec file not found: {args.spec}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec file is not valid JSON: {exc}") from exc
    spec = ScenarioSpec.from_dict(doc)
    records, labels = generate_scenario(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    chunks = max(1, args.chunks)
    per_chunk = max(1, (len(records) + chunks - 1) // chunks)
    for i in range(0, len(records), per_chunk):
        write_cdr_file(out_dir / f"chunk_{i // per_chunk:04d}.csv", records[i : i + per_chunk])
    labels_path = out_dir / "labels.json"
    labels_path.write_text(
        json.dumps({"origin": labels.origin, "dest": labels.dest}, sort_keys=True), encoding="utf-8"
    )
    print(f"wrote {len(records)} records in {min(chunks, (len(records) + per_chunk - 1) // per_chunk)} files -> {out_dir}")
    return EXIT_OK


def cmd_backtest(args: argparse.Namespace) -> int:
    config = _load_config(args)
    scenario = load_scenario_file(Path(args.scenario))
    report = run_backtest(scenario, config, bench=args.bench)
    rows = [
        ("history records", report["history_records"]),
        ("eval records", report["eval_records"]),
        ("alerts", report["alerts"]),
        ("false-positive alerts", report["false_positive_alerts"]),
        ("fp-rate", f"{report['fp_rate']:.4f}"),
        ("precision", f"{report['precision']:.4f}"),
        ("recall", f"{report['recall']:.4f}"),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    if args.bench:
        bench = report["bench"]
        print(
            f"bench: parse+profile {bench['records']} records at "
            f"{bench['records_per_second']:,.0f} records/s"
        )
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2), encoding="utf-8")
        print(f"report -> {args.report}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app

    config = _load_config(args)
    engine = Engine(config)
    app = create_app(engine)
    uvicorn.run(app, host=args.host, port=config.api_port, log_level="info")
    return EXIT_OK


def cmd_tune(args: argparse.Namespace) -> int:
    config = _load_config(args)
    engine = Engine(config)
    run = engine.tune(trigger="manual")
    print(json.dumps(run.to_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fame", description="CDR fraud detection engine")
    parser.add_argument("--config", help="engine config JSON file")
    parser.add_argument("--data-dir", dest="data_dir", help="override data directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="build block profiles from a history directory")
    p.add_argument("--history", required=True, help="directory of CDR CSV files")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("detect", help="run both pipelines and detection over records")
    p.add_argument("--input", required=True, help="directory of CDR CSV files")
    p.add_argument("--from", dest="from_ts", help="only records at/after this UTC timestamp")
    p.add_argument("--to", dest="to_ts", help="only records before this UTC timestamp")
    p.add_argument("--watch", action="store_true", help="poll the directory for new files")
    p.add_argument("--watch-seconds", type=float, default=10.0, help="watch duration before exit")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("generate", help="generate a synthetic scenario")
    p.add_argument("--spec", required=True, help="scenario spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--chunks", type=int, default=1, help="split records into N files")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("backtest", help="replay a labeled scenario and print quality metrics")
    p.add_argument("--scenario", required=True, help="backtest scenario JSON file")
    p.add_argument("--bench", action="store_true", help="measure parse+profile throughput")
    p.add_argument("--report", help="write the full JSON report here")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, help="override api_port")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("tune", help="force a tuning run")
    p.set_defaults(func=cmd_tune)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail("config", str(exc))
        return EXIT_CONFIG
    except DataError as exc:
        _fail("data", str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
