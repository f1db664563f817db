from __future__ import annotations

import pytest

from fame.detection import (
    Alert,
    AlertLog,
    FraudBlockEntry,
    FraudRepository,
    ModelState,
    UnknownAlert,
    UnknownFeature,
    alert_id_for,
    combine,
    detect,
    history_match,
    threshold_rules,
)
from fame.dest_pipeline import DestCandidate, DestFeatureVector
from fame.errors import ConfigError
from fame.origin_pipeline import OriginCandidate, OriginFeatureVector
from fame.stats_core import LogisticModel
from fame.windows import Window

from conftest import ts

WINDOW = Window(ts("2015-03-05T00:00:00"), ts("2015-03-05T06:00:00"))
HOUR = Window(ts("2015-03-05T02:00:00"), ts("2015-03-05T03:00:00"))


def entry(prefix: str, direction: str = "destination") -> FraudBlockEntry:
    return FraudBlockEntry(
        prefix=prefix, direction=direction, source="seed", confirmed_at=ts("2015-03-01T00:00:00")
    )


def origin_candidate(number="4699000001", m_dist=6.0, total=400.0, iqr=1.0):
    answered = 8
    vector = OriginFeatureVector(
        origin_number=number,
        operator_code="4444",
        dest_prefix="882",
        window=WINDOW,
        attempts=8,
        total_minutes=total,
        mean_call_minutes=total / answered,
        answer_ratio=1.0,
        distinct_dests=3,
        m_dist=m_dist,
    )
    return OriginCandidate(
        vector=vector, deviation=None, cold_start=True, iqr=iqr, phi=3.0,
        cohort_size=9, reasons=["mdist_iqr"], low_confidence=True,
    )


def dest_candidate(number="88226110536", total=120.0):
    vector = DestFeatureVector(
        dest_number=number, window=HOUR, calls=2, total_minutes=total,
        mean_minutes=total / 2, distinct_origins=2, answered=2,
    )
    return DestCandidate(vector=vector, detectors=["iqr:total_minutes"], iqr_distance=90.0)


class TestHistoryMatch:
    def test_block_match(self):
        repo = FraudRepository([entry("37126110")])
        hit, matched = history_match("37126110536", "destination", repo)
        assert hit == 1 and matched.prefix == "37126110"

    def test_no_match(self):
        repo = FraudRepository([entry("37126110")])
        hit, matched = history_match("4631749882", "destination", repo)
        assert hit == 0 and matched is None

    def test_longest_match_wins(self):
        repo = FraudRepository([entry("371261"), entry("37126110")])
        _, matched = history_match("37126110536", "destination", repo)
        assert matched.prefix == "37126110"

    def test_direction_isolation(self):
        repo = FraudRepository([entry("37126110", "origin")])
        hit, _ = history_match("37126110536", "destination", repo)
        assert hit == 0

    def test_save_load_round_trip(self, tmp_path):
        repo = FraudRepository([entry("37126110"), entry("88226110", "origin")])
        path = tmp_path / "repo.jsonl"
        repo.save(path)
        again = FraudRepository.load(path)
        assert [e.to_dict() for e in again.entries()] == [e.to_dict() for e in repo.entries()]


class TestThresholdRules:
    def test_fires_above_cap(self):
        hit, fired = threshold_rules({"total_minutes": 500.0}, {"total_minutes": 300.0})
        assert hit == 1 and fired == ["total_minutes>300"]

    def test_strict_inequality_at_cap(self):
        hit, fired = threshold_rules({"total_minutes": 300.0, "attempts": 40.0},
                                     {"total_minutes": 300.0, "attempts": 40.0})
        assert hit == 0 and fired == []

    def test_empty_rules_never_fire(self):
        assert threshold_rules({"total_minutes": 1e9}, {}) == (0, [])

    def test_unknown_feature_rejected_at_state_construction(self):
        with pytest.raises(UnknownFeature):
            ModelState(rule_thresholds={"origin": {"bogus_feature": 1.0}, "destination": {}})


class TestCombine:
    def test_history_always_alerts(self):
        for weights in ((1.0, 0.0, 0.0), (0.0, 0.5, 0.5), (0.2, 0.4, 0.4)):
            _, alerted = combine(1, 0, 0.0, weights, cutoff=0.99)
            assert alerted

    def test_weighted_sum_example(self):
        combined, alerted = combine(0, 1, 0.8, (0.5, 0.25, 0.25), cutoff=0.4)
        assert combined == pytest.approx(0.45)
        assert alerted

    def test_all_zero_never_alerts(self):
        for cutoff in (0.01, 0.5, 0.99):
            combined, alerted = combine(0, 0, 0.0, (0.5, 0.2, 0.3), cutoff)
            assert combined == 0.0 and not alerted

    def test_monotone_in_each_component(self):
        weights = (0.4, 0.3, 0.3)
        base, _ = combine(0, 0, 0.2, weights, 0.5)
        assert combine(1, 0, 0.2, weights, 0.5)[0] >= base
        assert combine(0, 1, 0.2, weights, 0.5)[0] >= base
        assert combine(0, 0, 0.9, weights, 0.5)[0] >= base

    def test_missing_model_renormalizes(self):
        combined, alerted = combine(0, 1, None, (0.5, 0.2, 0.3), cutoff=0.28)
        assert combined == pytest.approx(0.2 / 0.7)
        assert alerted

    def test_raising_cutoff_never_adds(self):
        scores = (0, 1, 0.7)
        alerted = [combine(*scores, (0.5, 0.2, 0.3), c)[1] for c in (0.1, 0.3, 0.41, 0.9)]
        assert alerted == sorted(alerted, reverse=True)


class TestModelState:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ModelState(combiner_weights=(0.5, 0.5, 0.5))
        with pytest.raises(ConfigError):
            ModelState(alert_cutoff=0.0)
        with pytest.raises(ConfigError):
            ModelState(phi=-1)

    def test_with_updates_bumps_version(self):
        state = ModelState()
        updated = state.with_updates(phi=4.0)
        assert updated.version == state.version + 1
        assert updated.phi == 4.0
        assert state.phi == 3.0  # original untouched

    def test_serialization_round_trip(self, tmp_path):
        model = LogisticModel(weights=(0.5, -1.25), bias=0.1,
                              feature_names=("total_minutes", "m_dist"), version=3)
        state = ModelState(
            phi=3.5,
            rule_thresholds={"origin": {"total_minutes": 180.0}, "destination": {}},
            logreg_origin=model,
            version=3,
        )
        path = tmp_path / "model.json"
        state.save(path)
        again = ModelState.load(path)
        assert again == state


class TestDetect:
    def _state(self, **kwargs):
        defaults = dict(
            rule_thresholds={"origin": {"total_minutes": 180.0}, "destination": {"total_minutes": 45.0}},
            combiner_weights=(0.5, 0.2, 0.3),
            alert_cutoff=0.25,
        )
        defaults.update(kwargs)
        return ModelState(**defaults)

    def test_repository_match_always_alerts(self):
        state = self._state(rule_thresholds={"origin": {}, "destination": {}}, alert_cutoff=0.9)
        repo = FraudRepository([entry("88226110")])
        alerts = detect([], [dest_candidate()], state, repo)
        assert len(alerts) == 1
        assert alerts[0].scores["history"] == 1
        assert alerts[0].state == "open"

    def test_idempotent_given_same_inputs(self):
        state = self._state()
        repo = FraudRepository()
        a = detect([origin_candidate()], [dest_candidate()], state, repo)
        b = detect([origin_candidate()], [dest_candidate()], state, repo)
        assert [x.to_dict() for x in a] == [y.to_dict() for y in b]
        assert len(a) == 2  # threshold fired for both directions

    def test_alert_id_stable_hash(self):
        first = alert_id_for("4699000001", "origin", WINDOW.start, WINDOW.end, 1)
        second = alert_id_for("4699000001", "origin", WINDOW.start, WINDOW.end, 1)
        different = alert_id_for("4699000001", "origin", WINDOW.start, WINDOW.end, 2)
        assert first == second != different

    def test_below_cutoff_no_alert(self):
        state = self._state(rule_thresholds={"origin": {}, "destination": {}})
        alerts = detect([origin_candidate()], [], state, FraudRepository())
        assert alerts == []  # no threshold, no model, no history

    def test_missing_model_renormalization_path(self):
        # threshold fires; weights renormalize to (0.714, 0.286) > cutoff
        state = self._state(alert_cutoff=0.28)
        alerts = detect([origin_candidate(total=400.0)], [], state, FraudRepository())
        assert len(alerts) == 1
        assert alerts[0].scores["logreg"] is None

    def test_logreg_contribution(self):
        # strongly positive model probability pushes combined over the cutoff
        model = LogisticModel(
            weights=(0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0), bias=-10.0,
            feature_names=(
                "attempts", "total_minutes", "mean_call_minutes", "answer_ratio",
                "distinct_dests", "m_dist", "dev_x", "dev_y",
            ),
            version=2,
        )
        state = self._state(logreg_origin=model, alert_cutoff=0.45, version=2)
        alerts = detect([origin_candidate(total=400.0)], [], state, FraudRepository())
        assert len(alerts) == 1
        assert alerts[0].scores["logreg"] == pytest.approx(1.0, abs=1e-6)
        assert alerts[0].scores["combined"] == pytest.approx(0.2 + 0.3 * alerts[0].scores["logreg"])

    def test_alert_json_shape(self):
        state = self._state()
        alerts = detect([origin_candidate()], [], state, FraudRepository())
        doc = alerts[0].to_dict()
        assert set(doc) == {
            "alert_id", "subject", "window", "scores", "evidence", "features",
            "state", "created_at", "model_version",
        }
        assert doc["subject"] == {"number": "4699000001", "direction": "origin"}
        kinds = [e.get("kind") or e.get("pipeline") for e in doc["evidence"]]
        assert kinds == ["origin", "history", "threshold", "logreg"]
        assert Alert.from_dict(doc).to_dict() == doc


class TestAlertLog:
    def _alert(self, n="4699000001"):
        state = ModelState(rule_thresholds={"origin": {"total_minutes": 180.0}, "destination": {}},
                           alert_cutoff=0.25)
        return detect([origin_candidate(number=n)], [], state, FraudRepository())[0]

    def test_record_and_dedup(self, tmp_path):
        log = AlertLog(tmp_path / "alerts.jsonl")
        alert = self._alert()
        assert log.record(alert) is True
        assert log.record(alert) is False
        assert len(log) == 1

    def test_state_change_and_reload(self, tmp_path):
        path = tmp_path / "alerts.jsonl"
        log = AlertLog(path)
        alert = self._alert()
        log.record(alert)
        log.set_state(alert.alert_id, "confirmed_fraud", analyst="ana", at=ts("2015-03-06T00:00:00"))
        reloaded = AlertLog(path)
        assert reloaded.get(alert.alert_id).state == "confirmed_fraud"
        # append-only: two events on disk
        assert len(path.read_text().splitlines()) == 2

    def test_unknown_alert(self, tmp_path):
        log = AlertLog(tmp_path / "alerts.jsonl")
        with pytest.raises(UnknownAlert):
            log.get("nope")
        with pytest.raises(UnknownAlert):
            log.set_state("nope", "confirmed_fraud")

    def test_query_filters_and_pagination(self, tmp_path):
        log = AlertLog(tmp_path / "alerts.jsonl")
        alerts = [self._alert(n=f"469900000{i}") for i in range(5)]
        for a in alerts:
            log.record(a)
        log.set_state(alerts[0].alert_id, "false_positive")
        assert len(log.query(state="open", limit=100)) == 4
        assert len(log.query(state="false_positive")) == 1
        assert len(log.query(direction="destination")) == 0
        newest_first = log.query(limit=2)
        assert [a.number for a in newest_first] == ["4699000004", "4699000003"]
        offset = log.query(limit=2, offset=2)
        assert [a.number for a in offset] == ["4699000002", "4699000001"]
