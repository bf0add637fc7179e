import pytest

from drifter.drift import DriftRule, RuleKind
from drifter.engine import Engine, EngineConfig, process_window, render_snapshot, snapshot_metrics
from drifter.export import parse_exposition
from drifter.ingest import WindowMode
from drifter.model import MiniBatch, Record

W = 60_000


def window(wid, rows, label=1):
    recs = [Record(feats, label if i % 2 else 1 - label, wid * W + i) for i, feats in enumerate(rows)]
    return MiniBatch(recs, wid, wid * W, (wid + 1) * W)


def coverage_rows(present, total=10, name="adv_id"):
    return [{name: f"v{i % 3}", "other": float(i)} if i < present else {"other": float(i)} for i in range(total)]


def rel_rule():
    return DriftRule(RuleKind.RELATIVE_DELTA, "coverage", 25, offset_interval=W, eval_window=W)


def cfg(**kw):
    kw.setdefault("window", WindowMode.by_time(W))
    return EngineConfig(**kw)


def samples(snap, family):
    return {s.labels: s.value for s in snapshot_metrics(snap) if s.family == family}


class TestCoverage:
    def test_fully_present(self):
        snap = Engine(cfg()).process_window(window(0, coverage_rows(10)))
        assert samples(snap, "drifter_feature_coverage")[(("feature", "adv_id"),)] == 1.0

    def test_absent_feature_still_published(self):
        eng = Engine(cfg())
        eng.process_window(window(0, coverage_rows(10)))
        snap = eng.process_window(window(1, coverage_rows(0)))
        cov = samples(snap, "drifter_feature_coverage")
        assert cov[(("feature", "adv_id"),)] == 0.0
        assert samples(snap, "drifter_feature_cardinality")[(("feature", "adv_id"),)] == 0.0


class TestAlerts:
    def test_drop_fires_once_in_second_snapshot(self):
        eng = Engine(cfg(rules=(rel_rule(),)))
        first = process_window(window(0, coverage_rows(9)), eng)
        second = process_window(window(1, coverage_rows(4)), eng)
        assert first.alerts == ()
        assert len(second.alerts) == 1
        ev = second.alerts[0]
        assert (ev.feature, ev.metric, ev.window_id, ev.fired_at) == ("adv_id", "coverage", 1, 2 * W)
        assert (ev.observed, ev.reference) == (pytest.approx(0.4), pytest.approx(0.9))

    def test_alert_counter_is_running_sum(self):
        eng = Engine(cfg(rules=(rel_rule(),)))
        running = 0
        for wid, present in enumerate([9, 4, 9, 9, 2, 2, 9]):
            snap = eng.process_window(window(wid, coverage_rows(present)))
            running += len(snap.alerts)
            assert sum(samples(snap, "drifter_alerts_total").values()) == running

    def test_parse_rejection_budget(self):
        eng = Engine(cfg(rejected_budget=0.5))
        b = window(0, coverage_rows(3, total=3))
        b = MiniBatch(b.records, 0, b.window_start, b.window_end, rejected=4)
        snap = eng.process_window(b)
        assert [a.kind for a in snap.alerts] == ["parse_rejections"]
        assert snap.parse_rejected_total == 4

    def test_feature_cap(self):
        eng = Engine(cfg(max_features=2))
        snap = eng.process_window(window(0, [{"a": "1", "b": "1", "c": "1", "d": "1"}]))
        assert set(snap.profiles) == {"a", "b"}
        assert [a.kind for a in snap.alerts] == ["feature_cap"]
        assert snap.alerts[0].observed == 2.0
        assert eng.process_window(window(1, [{"c": "1"}])).alerts == ()


class TestMetrics:
    def test_two_features_families(self):
        snap = Engine(cfg()).process_window(window(0, coverage_rows(10)))
        assert len(samples(snap, "drifter_feature_coverage")) >= 2
        assert len(samples(snap, "drifter_feature_cardinality")) >= 2

    def test_one_quantile_per_numeric_feature(self):
        rows = [{"n1": float(i), "n2": float(-i), "cat": "x"} for i in range(10)]
        snap = Engine(cfg(quantiles=(0.5,))).process_window(window(0, rows))
        q = samples(snap, "drifter_feature_quantile")
        assert sorted(q) == [(("feature", "n1"), ("q", "0.5")), (("feature", "n2"), ("q", "0.5"))]
        assert q[(("feature", "n1"), ("q", "0.5"))] == pytest.approx(4.5)

    def test_mi_score_published_for_labeled_window(self):
        rows = [{"sig": str(i % 2)} for i in range(100)]
        recs = [Record(r, i % 2, i) for i, r in enumerate(rows)]
        snap = Engine(cfg()).process_window(MiniBatch(recs, 0, 0, W))
        assert samples(snap, "drifter_feature_mi_score")[(("feature", "sig"),)] == pytest.approx(1.0)

    def test_unlabeled_window_skips_ranking(self):
        recs = [Record({"a": "1"}, None, i) for i in range(5)]
        snap = Engine(cfg()).process_window(MiniBatch(recs, 0, 0, W))
        assert snap.ranking is None
        assert snap.diagnostics["unlabeled_windows"] == 1

    def test_interaction_cap_applied(self):
        rows = [{f"f{k}": str((i + k) % 3) for k in range(12)} for i in range(40)]
        snap = Engine(cfg(interaction_cap=7)).process_window(window(0, rows))
        assert samples(snap, "drifter_interactions_evaluated")[()] == 7

    def test_document_parses_and_is_deterministic(self):
        docs = []
        for _ in range(2):
            eng = Engine(cfg(rules=(rel_rule(),)))
            for wid, present in enumerate([9, 4]):
                snap = eng.process_window(window(wid, coverage_rows(present)))
            docs.append(render_snapshot(snap, include_resources=False))
        assert docs[0] == docs[1]
        assert {s.family for s in parse_exposition(docs[0])} >= {"drifter_window_id", "drifter_feature_coverage"}

    def test_liveness_only_before_first_window(self):
        fams = {s.family for s in snapshot_metrics(None)}
        assert not any(f.startswith("drifter_feature_") for f in fams)
        assert "drifter_up" in fams


class TestConfig:
    def test_deny_wins(self):
        c = cfg(allow=("ad*",), deny=("adv_id",))
        assert not c.admits("adv_id") and c.admits("ad_slot") and not c.admits("other")

    def test_filter_applied(self):
        snap = Engine(cfg(deny=("other",))).process_window(window(0, coverage_rows(10)))
        assert set(snap.profiles) == {"adv_id"}

    def test_window_id_must_advance(self):
        eng = Engine(cfg())
        eng.process_window(window(3, coverage_rows(1)))
        with pytest.raises(ValueError):
            eng.process_window(window(3, coverage_rows(1)))
        eng.process_window(window(5, coverage_rows(1)))

    @pytest.mark.parametrize("kw", [dict(hll_precision=3), dict(interaction_cap=-1), dict(quantiles=(1.5,)),
                                    dict(bucket_count=1), dict(rank_every=0), dict(rejected_budget=2)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            cfg(**kw)

    def test_capacity_covers_rules(self):
        assert cfg(rules=(rel_rule(),)).resolved_capacity() == 3

    def test_rank_every(self):
        eng = Engine(cfg(rank_every=2))
        ranked = [eng.process_window(window(w, coverage_rows(5))).ranking is not None for w in range(4)]
        assert ranked == [True, False, True, False]
