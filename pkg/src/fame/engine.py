"""Single-process engine: windowed pipeline driver, persistent stores,
back-tests, and the tuning replay loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .cdr_ingest import (
    CdrRecord,
    DirectoryStream,
    ScenarioLabels,
    ScenarioSpec,
    generate_scenario,
    parse_cdr_line,
    render_cdr_line,
)
from .config import EngineConfig
from .dest_pipeline import ClusterReport, DestCandidate, aggregate_dest_features, iqr_outliers, run_dest_pipeline
from .detection import Alert, AlertLog, FraudRepository, ModelState, detect
from .errors import ConfigError, DataError
from .feedback_tuning import (
    AUTO_TUNE_EVERY,
    BacktestMetrics,
    TrainingCorpus,
    TuningRun,
    TuningRunLog,
    Verdict,
    VerdictAudit,
    phi_examples_from_corpus,
    record_verdict,
    retrain_and_backtest,
    retune_phi,
    train_direction_models,
)
from .origin_pipeline import (
    OriginCandidate,
    aggregate_origin_features,
    run_origin_pipeline,
    score_origins,
)
from .profiling import ProfileStore, build_profiles
from .stats_core import DegenerateLabels, TooFewPoints
from .windows import Window, block_key_for, partition_by_window, window_for

logger = logging.getLogger(__name__)

REPLAY_RECORD_CAP = 500_000


@dataclass
class DetectionOutcome:
    alerts: list[Alert]
    reports: list[tuple[Window, ClusterReport]]
    windows_processed: int


class WindowedDetector:
    """Feeds time-ordered records through both pipelines window by window.

    Windows close when the watermark (max timestamp seen) passes their end;
    flush() closes the rest, so a stream fed in chunks produces exactly the
    alerts of a single batch run over the same records.
    """

    def __init__(
        self,
        store: ProfileStore,
        state: ModelState,
        repository: FraudRepository,
        config: EngineConfig,
        alert_sink: Callable[[Alert], None] | None = None,
    ):
        self.store = store
        self.state = state
        self.repository = repository
        self.config = config
        self.alert_sink = alert_sink
        self.alerts: list[Alert] = []
        self.reports: list[tuple[Window, ClusterReport]] = []
        self.windows_processed = 0
        self._origin_buckets: dict[Window, list[CdrRecord]] = {}
        self._dest_buckets: dict[Window, list[CdrRecord]] = {}
        self._watermark: datetime | None = None

    def feed(self, records: Iterable[CdrRecord]) -> None:
        for r in records:
            self._origin_buckets.setdefault(window_for(r.start_time, self.config.block_hours), []).append(r)
            self._dest_buckets.setdefault(window_for(r.start_time, self.config.dest_window_hours), []).append(r)
            if self._watermark is None or r.start_time > self._watermark:
                self._watermark = r.start_time
        self._close_ripe()

    def _close_ripe(self) -> None:
        if self._watermark is None:
            return
        self._close(lambda w: w.end <= self._watermark)

    def flush(self) -> None:
        self._close(lambda w: True)

    def _close(self, ripe: Callable[[Window], bool]) -> None:
        closable: list[tuple[Window, str]] = [(w, "dest") for w in self._dest_buckets if ripe(w)]
        closable += [(w, "origin") for w in self._origin_buckets if ripe(w)]
        for window, kind in sorted(closable, key=lambda item: (item[0].start, item[1])):
            if kind == "dest":
                records = self._dest_buckets.pop(window)
                candidates, report = run_dest_pipeline(
                    records,
                    window,
                    k_max=self.config.k_max,
                    iqr_threshold=self.config.iqr_threshold,
                    iqr_features=self.config.iqr_features,
                    seed=self.config.seed,
                )
                if report is not None:
                    self.reports.append((window, report))
                alerts = detect([], candidates, self.state, self.repository)
            else:
                records = self._origin_buckets.pop(window)
                candidates = run_origin_pipeline(
                    records,
                    window,
                    self.store,
                    phi=self.state.phi,
                    z_threshold=self.state.z_threshold,
                )
                alerts = detect(candidates, [], self.state, self.repository)
            self.windows_processed += 1
            for alert in alerts:
                self.alerts.append(alert)
                if self.alert_sink:
                    self.alert_sink(alert)


class Engine:
    """Owns the persistent stores and serializes writes; reads see snapshots."""

    def __init__(self, config: EngineConfig):
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.profiles_path = self.data_dir / "profiles.jsonl"
        self.model_path = self.data_dir / "model_state.json"
        self.alerts_path = self.data_dir / "alerts.jsonl"
        self.repository_path = self.data_dir / "repository.jsonl"
        self.corpus_path = self.data_dir / "corpus.jsonl"
        self.verdicts_path = self.data_dir / "verdicts.jsonl"
        self.tuning_path = self.data_dir / "tuning_runs.jsonl"

        self.store = (
            ProfileStore.from_jsonl(self.profiles_path)
            if self.profiles_path.exists()
            else ProfileStore(config.block_hours, config.stride_hours)
        )
        self.state = ModelState.load(self.model_path) if self.model_path.exists() else self._initial_state()
        self.repository = FraudRepository.load(self.repository_path)
        self.alert_log = AlertLog(self.alerts_path)
        self.corpus = TrainingCorpus(self.corpus_path)
        self.audit = VerdictAudit(self.verdicts_path)
        self.tuning_log = TuningRunLog(self.tuning_path)
        self.latest_reports: list[tuple[Window, ClusterReport]] = []
        self._replay_records: list[CdrRecord] = []
        self._verdicts_since_tune = 0
        self.counters = {
            "records_ingested": 0,
            "malformed_lines": 0,
            "alerts_total": len(self.alert_log),
            "verdicts": len(self.audit.history),
            "windows_processed": 0,
            "throughput_records_per_s": 0.0,
        }

    def _initial_state(self) -> ModelState:
        return ModelState(
            phi=self.config.phi,
            z_threshold=self.config.z_threshold,
            rule_thresholds=self.config.rule_thresholds,
            combiner_weights=self.config.combiner_weights,
            alert_cutoff=self.config.alert_cutoff,
            version=1,
        )

    # -- profiles -------------------------------------------------------------

    def build_profiles_from_records(self, records: Sequence[CdrRecord]) -> ProfileStore:
        store = build_profiles(
            records,
            window_days=self.config.profile_window_days,
            block_hours=self.config.block_hours,
            stride_hours=self.config.stride_hours,
            repository=self.repository,
        )
        self.store = store
        store.to_jsonl(self.profiles_path)
        return store

    def build_profiles_from_dir(self, history_dir: Path) -> ProfileStore:
        stream = DirectoryStream(
            history_dir,
            ledger_path=self.data_dir / "history.ledger",
            deadletter_path=self.data_dir / "history.deadletter",
        )
        records = list(stream.scan_once())
        self.counters["records_ingested"] += stream.records_emitted
        self.counters["malformed_lines"] += stream.malformed_lines
        if not records:
            raise DataError(f"no records found under {history_dir}")
        return self.build_profiles_from_records(records)

    # -- detection --------------------------------------------------------------

    def _sink(self, alert: Alert) -> None:
        if self.alert_log.record(alert):
            self.counters["alerts_total"] += 1

    def detector(self, state: ModelState | None = None, sink: bool = True) -> WindowedDetector:
        return WindowedDetector(
            store=self.store,
            state=state or self.state,
            repository=self.repository,
            config=self.config,
            alert_sink=self._sink if sink else None,
        )

    def detect_batch(self, records: Sequence[CdrRecord]) -> DetectionOutcome:
        started = time.perf_counter()
        self._buffer_replay(records)
        runner = self.detector()
        runner.feed(records)
        runner.flush()
        self._absorb(runner)
        elapsed = time.perf_counter() - started
        if records and elapsed > 0:
            self.counters["throughput_records_per_s"] = len(records) / elapsed
        return DetectionOutcome(runner.alerts, runner.reports, runner.windows_processed)

    def detect_watch(self, watch_dir: Path, should_stop: Callable[[], bool]) -> DetectionOutcome:
        """Poll watch_dir, close windows as the watermark advances, flush at stop."""
        stream = DirectoryStream(
            watch_dir,
            poll_interval=self.config.poll_interval,
            ledger_path=self.data_dir / "watch.ledger",
            deadletter_path=self.data_dir / "watch.deadletter",
        )
        runner = self.detector()
        for chunk in _chunked(stream.watch(should_stop), 5000):
            self._buffer_replay(chunk)
            runner.feed(chunk)
        runner.flush()
        self.counters["records_ingested"] += stream.records_emitted
        self.counters["malformed_lines"] += stream.malformed_lines
        self._absorb(runner)
        return DetectionOutcome(runner.alerts, runner.reports, runner.windows_processed)

    def _absorb(self, runner: WindowedDetector) -> None:
        self.counters["windows_processed"] += runner.windows_processed
        if runner.reports:
            self.latest_reports = runner.reports[-48:]

    def _buffer_replay(self, records: Sequence[CdrRecord]) -> None:
        self._replay_records.extend(records)
        if len(self._replay_records) > REPLAY_RECORD_CAP:
            self._replay_records = self._replay_records[-REPLAY_RECORD_CAP:]

    # -- feedback ---------------------------------------------------------------

    def record_verdict(self, verdict: Verdict, force: bool = False) -> Alert:
        alert = record_verdict(verdict, self.alert_log, self.repository, self.corpus, self.audit, force)
        self.repository.save(self.repository_path)
        self.counters["verdicts"] += 1
        self._verdicts_since_tune += 1
        if self._verdicts_since_tune >= AUTO_TUNE_EVERY:
            self._verdicts_since_tune = 0
            try:
                self.tune(trigger="auto")
            except DataError as exc:
                logger.warning("auto-tune skipped: %s", exc)
        return alert

    def _verdict_labels(self) -> dict[tuple[str, str], bool]:
        labels: dict[tuple[str, str], bool] = {}
        for alert in self.alert_log.all():
            if alert.state == "confirmed_fraud":
                labels[(alert.direction, alert.number)] = True
            elif alert.state == "false_positive":
                labels[(alert.direction, alert.number)] = False
        return labels

    def _replay_metrics(self, state: ModelState, labels: dict[tuple[str, str], bool]) -> BacktestMetrics:
        runner = self.detector(state=state, sink=False)
        runner.feed(self._replay_records)
        runner.flush()
        alerted = {(a.direction, a.number) for a in runner.alerts}
        tp = sum(1 for subject, fraud in labels.items() if fraud and subject in alerted)
        fp = sum(1 for subject, fraud in labels.items() if not fraud and subject in alerted)
        fn = sum(1 for subject, fraud in labels.items() if fraud and subject not in alerted)
        return BacktestMetrics(tp=tp, fp=fp, fn=fn)

    def tune(self, trigger: str = "manual") -> TuningRun:
        """Retrain, retune phi when enough labeled origin alerts exist, replay,
        and atomically promote on success."""
        labels = self._verdict_labels()
        if not self._replay_records or not labels:
            raise DataError("nothing to tune against: need replayed windows and verdicts")
        retuned = None
        try:
            examples = phi_examples_from_corpus(self.corpus, self.alert_log)
            retuned = retune_phi(examples)
        except DataError:
            pass
        run, new_state = retrain_and_backtest(
            corpus=self.corpus,
            incumbent=self.state,
            replay=lambda state: self._replay_metrics(state, labels),
            trigger=trigger,
            retuned_phi=retuned,
        )
        self.tuning_log.append(run)
        if run.promoted:
            self.state = new_state  # atomic swap: readers keep the old snapshot
            self.state.save(self.model_path)
        return run

    # -- metrics -----------------------------------------------------------------

    def metrics(self) -> dict:
        out = dict(self.counters)
        decided = [a for a in self.alert_log.all() if a.state != "open"]
        out["alerts_open"] = len(self.alert_log) - len(decided)
        out["labeled_fp_rate"] = (
            sum(1 for a in decided if a.state == "false_positive") / len(decided) if decided else None
        )
        out["model_version"] = self.state.version
        out["repository_blocks"] = len(self.repository)
        return out


def _chunked(iterable: Iterable, size: int):
    chunk = []
    for item in iterable:
        chunk.append(item)
        if len(chunk) >= size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


# ---------------------------------------------------------------------------
# Back-testing against labeled scenarios


def load_scenario_file(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file is not valid JSON: {exc}") from exc
    for section in ("history", "live"):
        if section not in doc:
            raise ConfigError(f"scenario file missing {section!r} section")
    return doc


def _harvest_corpus(
    records: Sequence[CdrRecord],
    labels: ScenarioLabels,
    store: ProfileStore,
    config: EngineConfig,
) -> TrainingCorpus:
    """Label every aggregated vector in the training slice with ground truth.

    This builds the supervised corpus the detection models train on, mirroring
    detection-time features exactly (gate bypassed so both classes appear).
    """
    from .detection import dest_detect_features, origin_detect_features
    from .profiling import UnknownKey

    corpus = TrainingCorpus()
    for window, window_records in partition_by_window(records, config.block_hours).items():
        cohorts: dict[tuple[str, str], list[CdrRecord]] = {}
        for r in window_records:
            cohorts.setdefault((r.operator_code, r.dest_prefix), []).append(r)
        for (operator, prefix), cohort_records in sorted(cohorts.items()):
            vectors = aggregate_origin_features(cohort_records, window)
            deviation = None
            try:
                observed_x = sum(r.duration_seconds for r in cohort_records) / 60.0
                observed_y = float(sum(1 for r in cohort_records if r.answered))
                deviation = store.deviation(
                    block_key_for(operator, prefix, window), observed_x, observed_y, config.z_threshold
                )
            except UnknownKey:
                pass
            if len(vectors) >= 5:
                score_origins(vectors)
            for v in vectors:
                cand = OriginCandidate(
                    vector=v, deviation=deviation, cold_start=deviation is None,
                    iqr=None, phi=config.phi, cohort_size=len(vectors),
                )
                corpus.append(
                    origin_detect_features(cand),
                    label=1 if labels.origin.get(v.origin_number) else 0,
                    direction="origin",
                    alert_id="harvest",
                    model_version=0,
                )
    for window, window_records in partition_by_window(records, config.dest_window_hours).items():
        vectors = aggregate_dest_features(window_records, window)
        distances: dict[str, float] = {}
        for feature in config.iqr_features:
            try:
                result = iqr_outliers(vectors, feature, config.iqr_threshold)
            except TooFewPoints:
                continue
            for number, distance in result.distances.items():
                distances[number] = max(distances.get(number, 0.0), distance)
        for v in vectors:
            cand = DestCandidate(vector=v, iqr_distance=distances.get(v.dest_number, 0.0))
            corpus.append(
                dest_detect_features(cand),
                label=1 if labels.dest.get(v.dest_number) else 0,
                direction="destination",
                alert_id="harvest",
                model_version=0,
            )
    return corpus


def _bench_parse_profile(records: Sequence[CdrRecord], config: EngineConfig) -> dict:
    lines = [render_cdr_line(r) for r in records]
    t0 = time.perf_counter()
    parsed = [parse_cdr_line(line) for line in lines]
    t_parse = time.perf_counter() - t0
    t0 = time.perf_counter()
    build_profiles(
        parsed,
        window_days=config.profile_window_days,
        block_hours=config.block_hours,
        stride_hours=config.stride_hours,
    )
    t_profile = time.perf_counter() - t0
    total = t_parse + t_profile
    return {
        "records": len(records),
        "parse_seconds": t_parse,
        "profile_seconds": t_profile,
        "records_per_second": len(records) / total if total > 0 else float("inf"),
    }


def run_backtest(scenario: dict, config: EngineConfig, bench: bool = False) -> dict:
    """Two-phase labeled replay: profile on history, train on the first slice
    of the live span, evaluate alert quality on the rest."""
    history_spec = ScenarioSpec.from_dict(scenario["history"])
    live_spec = ScenarioSpec.from_dict(scenario["live"])
    train_fraction = float(scenario.get("train_fraction", 0.5))
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")

    history_records, _ = generate_scenario(history_spec)
    live_records, live_labels = generate_scenario(live_spec)

    store = build_profiles(
        history_records,
        window_days=config.profile_window_days,
        block_hours=config.block_hours,
        stride_hours=config.stride_hours,
    )

    split_index = int(len(live_records) * train_fraction)
    split_ts = window_for(live_records[split_index].start_time, config.block_hours).start
    train_records = [r for r in live_records if r.start_time < split_ts]
    eval_records = [r for r in live_records if r.start_time >= split_ts]
    if not train_records or not eval_records:
        raise ConfigError("train_fraction leaves an empty train or eval slice")

    overrides = scenario.get("model", {})
    base_state = ModelState(
        phi=float(overrides.get("phi", config.phi)),
        z_threshold=float(overrides.get("z_threshold", config.z_threshold)),
        rule_thresholds=overrides.get("rule_thresholds", config.rule_thresholds),
        combiner_weights=tuple(overrides.get("combiner_weights", config.combiner_weights)),
        alert_cutoff=float(overrides.get("alert_cutoff", config.alert_cutoff)),
        version=1,
    )

    corpus = _harvest_corpus(train_records, live_labels, store, config)
    try:
        models = train_direction_models(corpus, version=2)
        state = base_state.with_updates(logreg_origin=models["origin"], logreg_dest=models["destination"])
    except DegenerateLabels as exc:
        logger.warning("training corpus degenerate (%s); running without logistic models", exc)
        state = base_state

    runner = WindowedDetector(store=store, state=state, repository=FraudRepository(), config=config)
    runner.feed(eval_records)
    runner.flush()
    alerts = runner.alerts

    eval_origins = {r.origin_number for r in eval_records}
    eval_dests = {r.dest_number for r in eval_records}
    fraud_subjects = {("origin", n) for n in eval_origins if live_labels.origin.get(n)} | {
        ("destination", n) for n in eval_dests if live_labels.dest.get(n)
    }

    def is_fraud(alert: Alert) -> bool:
        lab = live_labels.origin if alert.direction == "origin" else live_labels.dest
        return bool(lab.get(alert.number))

    false_alerts = [a for a in alerts if not is_fraud(a)]
    alerted_subjects = {(a.direction, a.number) for a in alerts}
    tp = sum(1 for s in fraud_subjects if s in alerted_subjects)
    fn = len(fraud_subjects) - tp
    fp_subjects = sum(1 for s in alerted_subjects if s not in fraud_subjects)

    report = {
        "history_records": len(history_records),
        "live_records": len(live_records),
        "train_records": len(train_records),
        "eval_records": len(eval_records),
        "alerts": len(alerts),
        "false_positive_alerts": len(false_alerts),
        "fp_rate": len(false_alerts) / len(alerts) if alerts else 0.0,
        "tp": tp,
        "fp": fp_subjects,
        "fn": fn,
        "precision": tp / (tp + fp_subjects) if (tp + fp_subjects) else 1.0,
        "recall": tp / (tp + fn) if (tp + fn) else 1.0,
        "fraud_subjects": len(fraud_subjects),
        "model_version": state.version,
        "alert_records": [a.to_dict() for a in alerts],
    }
    if bench:
        bench_records = (history_records + live_records)[:100_000]
        report["bench"] = _bench_parse_profile(bench_records, config)
    return report
