from __future__ import annotations

import csv
import random
from datetime import timedelta

import pytest

from fame.dest_pipeline import (
    DestFeatureVector,
    aggregate_dest_features,
    discover_clusters,
    export_boxplot_csv,
    iqr_outliers,
    run_dest_pipeline,
)
from fame.stats_core import TooFewPoints
from fame.windows import Window

from conftest import record, ts

HOUR = Window(ts("2015-03-05T10:00:00"), ts("2015-03-05T11:00:00"))


def make_vector(number, calls=1, total=3.0, distinct=1, answered=None):
    answered = calls if answered is None else answered
    return DestFeatureVector(
        dest_number=number,
        window=HOUR,
        calls=calls,
        total_minutes=total,
        mean_minutes=total / answered if answered else 0.0,
        distinct_origins=distinct,
        answered=answered,
    )


def synthetic_hour(rng, n_background=40, n_fraud=6):
    """Short single-call background traffic plus a steady long-call premium block."""
    vectors = [
        make_vector(f"3312611{i:04d}", calls=1, total=rng.lognormvariate(1.0, 0.55), distinct=1)
        for i in range(n_background)
    ]
    vectors += [
        make_vector(
            f"8822611{i:04d}",
            calls=3,
            total=sum(max(rng.gauss(50, 8), 30) for _ in range(3)),
            distinct=3,
        )
        for i in range(n_fraud)
    ]
    return vectors


class TestAggregate:
    def test_three_answered_calls(self):
        records = [
            record(HOUR.start + timedelta(minutes=i), origin=f"463174988{i}", duration=d)
            for i, d in enumerate((60, 120, 180))
        ]
        vectors = aggregate_dest_features(records, HOUR)
        assert len(vectors) == 1
        v = vectors[0]
        assert v.calls == 3
        assert v.total_minutes == pytest.approx(6.0)
        assert v.mean_minutes == pytest.approx(2.0)
        assert v.distinct_origins == 3

    def test_two_numbers_partitioned_exactly(self):
        records = []
        for i in range(6):
            records.append(
                record(
                    HOUR.start + timedelta(minutes=i),
                    dest="37126110536" if i % 2 == 0 else "37126110999",
                    prefix="371",
                    duration=60,
                )
            )
        vectors = aggregate_dest_features(records, HOUR)
        assert [(v.dest_number, v.calls) for v in vectors] == [
            ("37126110536", 3),
            ("37126110999", 3),
        ]

    def test_order_invariant(self):
        rng = random.Random(6)
        records = [
            record(
                HOUR.start + timedelta(seconds=rng.randrange(3600)),
                dest=f"371261105{rng.randrange(10)}0",
                prefix="371",
                origin=f"46317498{rng.randrange(100):02d}",
                duration=rng.randrange(0, 600),
                answered=rng.random() < 0.9,
            )
            for _ in range(60)
        ]
        shuffled = records[:]
        rng.shuffle(shuffled)
        assert aggregate_dest_features(records, HOUR) == aggregate_dest_features(shuffled, HOUR)

    def test_mean_times_answered_identity(self):
        rng = random.Random(44)
        records = []
        for i in range(40):
            answered = rng.random() < 0.8
            records.append(
                record(
                    HOUR.start + timedelta(seconds=rng.randrange(3600)),
                    dest=f"371261105{rng.randrange(6)}0",
                    prefix="371",
                    duration=rng.randrange(1, 900) if answered else 0,
                    answered=answered,
                )
            )
        for v in aggregate_dest_features(records, HOUR):
            assert v.mean_minutes * v.answered == pytest.approx(v.total_minutes, abs=5e-4)
            assert v.distinct_origins <= v.calls


class TestIqrOutliers:
    def test_fence_distance_rule(self):
        vectors = [make_vector(f"371261105{i}0", total=t) for i, t in enumerate((1, 2, 3, 4, 100))]
        result = iqr_outliers(vectors, "total_minutes", threshold=1.5)
        assert result.q1 == 2 and result.q3 == 4 and result.iqr == 2
        assert result.outliers == [vectors[4].dest_number]
        assert result.distances[vectors[4].dest_number] == pytest.approx(96.0)

    def test_degenerate(self):
        vectors = [make_vector(f"371261105{i}0", total=5.0) for i in range(6)]
        result = iqr_outliers(vectors, "total_minutes", threshold=1.5)
        assert result.degenerate and result.outliers == []

    def test_inside_fences_never_outlier(self):
        vectors = [make_vector(f"371261105{i}0", total=t) for i, t in enumerate((1, 2, 3, 4, 100))]
        for threshold in (0.001, 0.5, 1.5, 10):
            result = iqr_outliers(vectors, "total_minutes", threshold)
            assert vectors[2].dest_number not in result.outliers

    def test_monotone_in_threshold(self):
        rng = random.Random(10)
        vectors = [make_vector(f"3712611{i:04d}", total=rng.uniform(0, 50)) for i in range(25)]
        previous = None
        for threshold in (0.1, 0.5, 1.0, 2.0, 5.0):
            outliers = set(iqr_outliers(vectors, "total_minutes", threshold).outliers)
            if previous is not None:
                assert outliers <= previous
            previous = outliers

    def test_too_few(self):
        with pytest.raises(TooFewPoints):
            iqr_outliers([make_vector("37126110530")] * 3, "total_minutes", 1.5)


class TestDiscoverClusters:
    def test_two_population_structure(self):
        vectors = synthetic_hour(random.Random(1))
        report = discover_clusters(vectors, k_max=6, seed=0)
        assert report.k_best == 2
        assert report.min_silhouette >= 0.75
        fraud_members = set(report.members)
        assert fraud_members == {v.dest_number for v in vectors if v.dest_number.startswith("882")}

    def test_far_point_is_fraud_cluster(self):
        vectors = [make_vector(f"3712611{i:04d}", total=3.0 + 0.01 * i) for i in range(10)]
        vectors.append(make_vector("88226110000", total=500.0, calls=4, distinct=3))
        report = discover_clusters(vectors, k_max=3, seed=1)
        assert report.members == ["88226110000"]

    def test_duplicated_dataset_same_outcome(self):
        vectors = synthetic_hour(random.Random(2), n_background=20, n_fraud=4)
        doubled = vectors + [
            make_vector(v.dest_number + "9", calls=v.calls, total=v.total_minutes,
                        distinct=v.distinct_origins, answered=v.answered)
            for v in vectors
        ]
        a = discover_clusters(vectors, k_max=5, seed=3)
        b = discover_clusters(doubled, k_max=5, seed=3)
        assert a.k_best == b.k_best
        # same partition: each duplicate pair lands with its twin
        for v in vectors:
            assert b.assignments[v.dest_number] == b.assignments[v.dest_number + "9"]
        # raw-space centroids (member means) are identical
        def raw_centroids(report, vecs):
            groups: dict[int, list] = {}
            by_number = {v.dest_number: v for v in vecs}
            for number, cluster in report.assignments.items():
                groups.setdefault(cluster, []).append(by_number[number].features())
            out = []
            for cluster in groups.values():
                dim = len(cluster[0])
                out.append(tuple(sum(p[j] for p in cluster) / len(cluster) for j in range(dim)))
            return sorted(out)

        for got, want in zip(raw_centroids(b, doubled), raw_centroids(a, vectors)):
            assert got == pytest.approx(want, rel=1e-9)

    def test_input_order_invariant(self):
        vectors = synthetic_hour(random.Random(5), n_background=25, n_fraud=5)
        shuffled = vectors[:]
        random.Random(7).shuffle(shuffled)
        a = discover_clusters(vectors, k_max=5, seed=9)
        b = discover_clusters(shuffled, k_max=5, seed=9)
        assert a.k_best == b.k_best
        assert set(a.members) == set(b.members)
        assert a.assignments == {n: b.assignments[n] for n in a.assignments}

    def test_feature_scaling_invariant(self):
        vectors = synthetic_hour(random.Random(8), n_background=25, n_fraud=5)
        scaled = [
            make_vector(v.dest_number, calls=v.calls, total=v.total_minutes * 60,
                        distinct=v.distinct_origins, answered=v.answered)
            for v in vectors
        ]
        a = discover_clusters(vectors, k_max=5, seed=4)
        b = discover_clusters(scaled, k_max=5, seed=4)
        assert a.k_best == b.k_best
        assert set(a.members) == set(b.members)

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            discover_clusters([make_vector(f"371261105{i}0") for i in range(8)], k_max=8, seed=0)

    def test_report_invariants(self):
        vectors = synthetic_hour(random.Random(12))
        report = discover_clusters(vectors, k_max=8, seed=2)
        assert 2 <= report.k_best <= 8
        assert -1.0 <= report.min_silhouette <= 1.0
        assert 0 <= report.fraud_cluster_id < len(report.centroids)
        assert set(report.silhouette_by_k) == set(range(2, 9))


def hour_records(rng, n_background_calls=120, n_fraud_numbers=5, fraud_calls_each=2):
    records = []
    for _ in range(n_background_calls):
        answered = rng.random() < 0.9
        records.append(
            record(
                HOUR.start + timedelta(seconds=rng.randrange(3600)),
                origin=f"46317{rng.randrange(400):05d}",
                dest=f"3312611{rng.randrange(300):04d}",
                prefix="33",
                duration=int(rng.lognormvariate(0.75, 0.83) * 60) if answered else 0,
                answered=answered,
            )
        )
    for i in range(n_fraud_numbers):
        for j in range(fraud_calls_each):
            records.append(
                record(
                    HOUR.start + timedelta(seconds=rng.randrange(3600)),
                    origin=f"46990{rng.randrange(40):05d}",
                    dest=f"8822611{i:04d}",
                    prefix="882",
                    duration=rng.randrange(2400, 4800),
                )
            )
    return records


class TestRunPipeline:
    def test_union_semantics_exact(self):
        rng = random.Random(3)
        records = hour_records(rng)
        vectors = aggregate_dest_features(records, HOUR)
        candidates, report = run_dest_pipeline(records, HOUR, k_max=5, seed=0)
        iqr_set = set(iqr_outliers(vectors, "total_minutes", 1.5).outliers)
        cluster_set = set(report.members)
        assert {c.vector.dest_number for c in candidates} == iqr_set | cluster_set

    def test_evidence_lists_detectors(self):
        rng = random.Random(3)
        records = hour_records(rng)
        candidates, report = run_dest_pipeline(records, HOUR, k_max=5, seed=0)
        by_number = {c.vector.dest_number: c for c in candidates}
        cluster_only = set(report.members) - {
            n for n, c in by_number.items() if any(d.startswith("iqr:") for d in c.detectors)
        }
        for number, cand in by_number.items():
            assert cand.detectors
            if number in report.members:
                assert "cluster" in cand.detectors
        if cluster_only:
            assert all(by_number[n].detectors == ["cluster"] for n in cluster_only)

    def test_injected_premium_block_mostly_flagged(self):
        rng = random.Random(21)
        records = hour_records(rng, n_fraud_numbers=10, fraud_calls_each=3)
        candidates, _ = run_dest_pipeline(records, HOUR, k_max=6, seed=1)
        flagged = {c.vector.dest_number for c in candidates}
        fraud_numbers = {r.dest_number for r in records if r.dest_prefix == "882"}
        caught = fraud_numbers & flagged
        assert len(caught) >= 0.9 * len(fraud_numbers)

    def test_empty_hour(self):
        candidates, report = run_dest_pipeline([], HOUR)
        assert candidates == [] and report is None

    def test_degrades_without_clustering(self):
        # 5 vectors with k_max=8: clustering skipped, IQR still runs
        records = []
        for i, total in enumerate((60, 70, 80, 90, 9000)):
            records.append(
                record(HOUR.start + timedelta(minutes=i), dest=f"331261105{i}0", prefix="33",
                       duration=total))
        candidates, report = run_dest_pipeline(records, HOUR, k_max=8, seed=0)
        assert report is None
        assert [c.vector.dest_number for c in candidates] == ["33126110540"]
        assert candidates[0].detectors == ["iqr:total_minutes"]


class TestBoxplotExport:
    def test_five_number_summary(self, tmp_path):
        vectors = []
        for hour_offset, total in enumerate((1.0, 2.0, 3.0, 4.0, 100.0)):
            w = Window(
                HOUR.start + timedelta(hours=hour_offset),
                HOUR.end + timedelta(hours=hour_offset),
            )
            vectors.append(
                DestFeatureVector("37126110536", w, 1, total, total, 1, 1)
            )
        out = tmp_path / "box.csv"
        export_boxplot_csv(vectors, "total_minutes", out)
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        row = rows[0]
        assert row["dest_number"] == "37126110536"
        assert float(row["q1"]) == 2.0
        assert float(row["median"]) == 3.0
        assert float(row["q3"]) == 4.0
        assert float(row["min"]) == 1.0 and float(row["max"]) == 100.0
