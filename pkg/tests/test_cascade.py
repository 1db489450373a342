import functools
from decimal import Decimal

import pytest

from cascade_fixture import (
    FIXTURE_PATH,
    GOLDEN_RECORDS_PATH,
    STAGE1_SCRIPT,
    STAGE2_SCRIPT,
    build_instances,
)
from rlhn.cascade import (
    DetectionRecord,
    apply_threshold,
    fn_histogram,
    read_records,
    run_cascade,
    run_stage1,
    run_stage2,
    write_records,
)
from rlhn.corpus import load_dataset
from rlhn.judge import AuditLog, CostModel, JudgeConfig, estimate_cost, submit_batch
from rlhn.offline import ScriptedJudge


def make_submit(judge, model="scripted", audit_log=None):
    config = JudgeConfig(model_name=model, max_concurrency=1)
    return functools.partial(submit_batch, config=config, send=judge, audit_log=audit_log)


@pytest.fixture
def instances():
    return build_instances()


def test_fixture_file_matches_builder(instances):
    assert load_dataset(FIXTURE_PATH) == instances


class TestStage1:
    def test_nothing_flagged(self, instances):
        records = run_stage1(instances[5:11], make_submit(ScriptedJudge()))
        assert sum(r.forwarded for r in records) == 0

    def test_worse_only_forwards(self, instances):
        # the forwarding rule fires on either tag, not just better
        judge = ScriptedJudge({("t05", 0): (set(), {1}), ("t07", 0): (set(), {2})})
        records = run_stage1(instances[5:11], make_submit(judge))
        assert sum(r.forwarded for r in records) == 2
        flagged = {r.instance_id for r in records if r.forwarded}
        assert flagged == {"t05", "t07"}

    def test_arguana_skipped(self, instances):
        judge = ScriptedJudge()
        records = run_stage1(instances, make_submit(judge))
        skipped = [r for r in records if r.stage1_parse == "skipped"]
        assert {r.instance_id for r in skipped} == {"t00", "t01", "t02", "t03", "t04"}
        assert all(not any(c[0] == r.instance_id for c in judge.calls) for r in skipped)

    def test_parse_failure_then_reask(self, instances):
        judge = ScriptedJudge(STAGE1_SCRIPT)
        records = {r.instance_id: r for r in run_stage1(instances, make_submit(judge))}
        assert records["t15"].stage1_parse == "failed"
        assert not records["t15"].forwarded
        assert records["t16"].stage1_parse == "ok"
        assert records["t16"].stage1_better == {3}
        asks = [c for c in judge.calls if c[0] == "t16"]
        assert asks == [("t16", 0, 0), ("t16", 0, 1)]

    def test_zero_negatives_instance(self, instances):
        records = {r.instance_id: r for r in run_stage1(instances, make_submit(ScriptedJudge()))}
        assert records["t33"].stage1_parse == "ok"
        assert not records["t33"].forwarded


class TestStage2:
    def run_both(self, instances):
        s1 = ScriptedJudge(STAGE1_SCRIPT)
        s2 = ScriptedJudge(STAGE2_SCRIPT)
        records = run_stage1(instances, make_submit(s1))
        records = run_stage2(instances, records, make_submit(s2))
        return records, s1, s2

    def test_gating_soundness(self, instances):
        records, _, s2 = self.run_both(instances)
        forwarded_ids = {r.instance_id for r in records if r.forwarded}
        called_ids = {c[0] for c in s2.calls}
        assert called_ids == forwarded_ids

    def test_overturned_flag(self, instances):
        records = {r.instance_id: r for r in self.run_both(instances)[0]}
        assert records["t10"].forwarded
        assert records["t10"].final_false_negatives == frozenset()

    def test_final_sets(self, instances):
        records = {r.instance_id: r for r in self.run_both(instances)[0]}
        assert records["t11"].final_false_negatives == {0, 3}
        assert records["t12"].final_false_negatives == {1, 2, 26}
        assert records["t20"].final_false_negatives == {24, 25}

    def test_worse_only_stage2_gives_empty_final(self, instances):
        records = {r.instance_id: r for r in self.run_both(instances)[0]}
        assert records["t25"].forwarded
        assert records["t25"].final_false_negatives == frozenset()


class TestThreshold:
    def rec(self, n_fn):
        return DetectionRecord("x", "d", final_false_negatives=frozenset(range(n_fn)))

    def test_boundary_kept_at_7(self):
        (r,) = apply_threshold([self.rec(7)], k=7)
        assert not r.dropped_ambiguous

    def test_8_dropped(self):
        (r,) = apply_threshold([self.rec(8)], k=7)
        assert r.dropped_ambiguous

    def test_k_zero(self):
        (r,) = apply_threshold([self.rec(1)], k=0)
        assert r.dropped_ambiguous

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError):
            apply_threshold([], k=-1)


class TestHistogram:
    def test_hand_fixture(self):
        records = [DetectionRecord("a", "d", final_false_negatives=frozenset({1})),
                   DetectionRecord("b", "d", final_false_negatives=frozenset({2})),
                   DetectionRecord("c", "d", final_false_negatives=frozenset({3, 4}))]
        hist = fn_histogram(records)
        assert hist == {1: pytest.approx(2 / 3), 2: pytest.approx(1 / 3)}
        assert abs(sum(hist.values()) - 1.0) < 1e-12

    def test_empty(self):
        assert fn_histogram([DetectionRecord("a", "d")]) == {}


class TestEndToEnd:
    def run(self, instances):
        return run_cascade(
            instances,
            make_submit(ScriptedJudge(STAGE1_SCRIPT)),
            make_submit(ScriptedJudge(STAGE2_SCRIPT)),
            k=7,
        )

    def test_golden_records(self, instances, tmp_path):
        out = tmp_path / "records.jsonl"
        write_records(self.run(instances), out)
        assert out.read_bytes() == GOLDEN_RECORDS_PATH.read_bytes()

    def test_round_trip(self, instances, tmp_path):
        records = self.run(instances)
        out = tmp_path / "records.jsonl"
        write_records(records, out)
        assert read_records(out) == records

    def test_determinism(self, instances, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_records(self.run(instances), a)
        write_records(self.run(instances), b)
        assert a.read_bytes() == b.read_bytes()

    def test_k_rule_applied(self, instances):
        records = {r.instance_id: r for r in self.run(instances)}
        assert len(records["t13"].final_false_negatives) == 7
        assert not records["t13"].dropped_ambiguous
        assert len(records["t14"].final_false_negatives) == 8
        assert records["t14"].dropped_ambiguous

    def test_monotone_cost(self, instances):
        s1 = ScriptedJudge(STAGE1_SCRIPT)
        s2 = ScriptedJudge(STAGE2_SCRIPT)
        records = run_stage1(instances, make_submit(s1))
        run_stage2(instances, records, make_submit(s2))
        cheap = CostModel.for_model("mini")
        accurate = CostModel.for_model("gpt-4o")
        avg_tokens = 2000
        cascade_cost = (estimate_cost(len(s1.calls), avg_tokens, cheap)
                        + estimate_cost(len(s2.calls), avg_tokens, accurate))
        all_accurate = estimate_cost(len(s1.calls), avg_tokens, accurate)
        assert cascade_cost < all_accurate


class TestCrashResume:
    class Crash(BaseException):
        pass

    def crashing_judge(self, script, crash_after):
        inner = ScriptedJudge(script)
        state = {"n": 0}

        def send(request):
            if state["n"] >= crash_after:
                raise self.Crash()
            state["n"] += 1
            return inner(request)

        return send

    def test_resume_without_duplicate_calls(self, instances, tmp_path):
        audit_path = tmp_path / "audit.jsonl"
        crashing = self.crashing_judge(STAGE1_SCRIPT, crash_after=12)
        with pytest.raises(self.Crash):
            run_stage1(instances, make_submit(crashing, audit_log=AuditLog(audit_path)))

        # fresh process: new audit log object over the same file
        counting = ScriptedJudge(STAGE1_SCRIPT)
        records = run_stage1(
            instances, make_submit(counting, audit_log=AuditLog(audit_path))
        )
        keys = [c[:3] for c in counting.calls]
        assert len(keys) == len(set(keys))  # no duplicate calls in the resumed run
        # resumed run together with pre-crash calls covers each key exactly once
        total_calls = 12 + len(counting.calls)
        reference = ScriptedJudge(STAGE1_SCRIPT)
        expected = run_stage1(instances, make_submit(reference))
        assert total_calls == len(reference.calls)
        assert records == expected
