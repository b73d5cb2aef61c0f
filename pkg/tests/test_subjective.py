import json

import numpy as np
import pytest

from jndlab import report, subjective
from jndlab.errors import ConfigurationError
from jndlab.subjective import (
    ANCHOR_LEFT,
    CANDIDATE_LEFT,
    DuplicateSessionError,
    PairSpec,
    ScoreRecord,
    ScoreStore,
    SessionManager,
    StaleTokenError,
    build_plan,
    normalize_score,
    summarize,
)


def _pairs(n, image_prefix="P"):
    return [
        PairSpec(
            pair_id=f"{image_prefix}{i+1}",
            image_id=f"{image_prefix}{i+1}",
            comparison="ours_vs_anchor",
            candidate_path=f"/img/cand{i}.png",
            anchor_path=f"/img/anch{i}.png",
        )
        for i in range(n)
    ]


class _FakeRegistry:
    def handle(self, path):
        return "h" + str(abs(hash(path)) % 10**8)

    def path(self, handle):
        raise KeyError(handle)


def _manager(plan, store):
    return SessionManager(plan, store, registry=_FakeRegistry())


def _mk_record(subject, pair_id, raw, placement):
    return ScoreRecord(
        subject=subject,
        pair_id=pair_id,
        raw_score=raw,
        score=normalize_score(raw, placement),
        placement=placement,
        timestamp="2026-01-01T00:00:00+00:00",
    )


# -- plans ---------------------------------------------------------------------


def test_plan_placement_balanced_under_fixed_seed():
    plan = build_plan(_pairs(200), seed=7)
    lefts = sum(1 for v in plan.placements.values() if v == CANDIDATE_LEFT)
    assert 80 <= lefts <= 120  # ~50/50, deterministic given the seed
    plan2 = build_plan(_pairs(200), seed=7)
    assert plan.placements == plan2.placements


def test_plan_requires_pairs():
    with pytest.raises(ConfigurationError):
        build_plan([], seed=0)


def test_load_plan_resolves_paths(tmp_path):
    (tmp_path / "c.png").write_bytes(b"x")
    (tmp_path / "a.png").write_bytes(b"y")
    manifest = {
        "seed": 3,
        "pairs": [
            {"pair_id": "P1", "image_id": "P1", "comparison": "cmp", "candidate": "c.png", "anchor": "a.png"}
        ],
    }
    (tmp_path / "plan.json").write_text(json.dumps(manifest))
    plan = subjective.load_plan(tmp_path / "plan.json")
    assert plan.pairs[0].candidate_path == str((tmp_path / "c.png").resolve())
    assert plan.seed == 3


# -- score normalization ----------------------------------------------------------


def test_orientation_rules():
    assert normalize_score(2, CANDIDATE_LEFT) == 2
    assert normalize_score(2, ANCHOR_LEFT) == -2
    assert normalize_score(0, CANDIDATE_LEFT) == 0
    assert normalize_score(0, ANCHOR_LEFT) == 0
    with pytest.raises(ValueError):
        normalize_score(4, CANDIDATE_LEFT)
    with pytest.raises(ValueError):
        normalize_score(-4, ANCHOR_LEFT)


def test_orientation_invariance_under_placement_flip():
    # a rater who always prefers the candidate by +2 produces identical stored
    # scores whichever side the candidate lands on
    for placement in (CANDIDATE_LEFT, ANCHOR_LEFT):
        raw = 2 if placement == CANDIDATE_LEFT else -2
        assert normalize_score(raw, placement) == 2


# -- sessions -----------------------------------------------------------------------


def test_session_flow_and_idempotent_next(tmp_path):
    plan = build_plan(_pairs(12), seed=1)
    store = ScoreStore(tmp_path / "scores.jsonl")
    mgr = _manager(plan, store)
    session = mgr.create_session("s1")
    assert session.total == 12

    view1 = session.next_trial()
    view2 = session.next_trial()
    assert view1.token == view2.token
    assert (view1.left_handle, view1.right_handle) == (view2.left_handle, view2.right_handle)
    assert view1.index == 1

    session.submit(view1.token, 2, store)
    view3 = session.next_trial()
    assert view3.token != view1.token
    assert view3.index == 2


def test_session_duplicate_subject_conflict(tmp_path):
    plan = build_plan(_pairs(3), seed=1)
    mgr = _manager(plan, ScoreStore(tmp_path / "s.jsonl"))
    s1 = mgr.create_session("alice")
    with pytest.raises(DuplicateSessionError) as err:
        mgr.create_session("alice")
    assert err.value.session_id == s1.session_id
    with pytest.raises(ValueError):
        mgr.create_session("   ")


def test_sessions_shuffle_independently(tmp_path):
    plan = build_plan(_pairs(30), seed=2)
    mgr = _manager(plan, ScoreStore(tmp_path / "s.jsonl"))
    a = mgr.create_session("subjA")
    b = mgr.create_session("subjB")
    assert a.order != b.order
    assert sorted(a.order) == sorted(b.order) == list(range(30))


def test_stale_token_and_completion(tmp_path):
    plan = build_plan(_pairs(2), seed=3)
    store = ScoreStore(tmp_path / "s.jsonl")
    mgr = _manager(plan, store)
    session = mgr.create_session("s")
    view = session.next_trial()
    session.submit(view.token, 1, store)
    with pytest.raises(StaleTokenError):
        session.submit(view.token, 1, store)  # token invalidated on first ack
    view2 = session.next_trial()
    session.submit(view2.token, -3, store)
    assert session.done
    assert session.next_trial() is None


def test_submitted_scores_are_sign_normalized(tmp_path):
    plan = build_plan(_pairs(40), seed=4)
    store = ScoreStore(tmp_path / "s.jsonl")
    mgr = _manager(plan, store)
    session = mgr.create_session("rater")
    # rater always answers "+2": stored score must flip with placement
    while not session.done:
        view = session.next_trial()
        session.submit(view.token, 2, store)
    for rec in store.records():
        if rec.placement == CANDIDATE_LEFT:
            assert rec.score == 2
        else:
            assert rec.score == -2


# -- store ---------------------------------------------------------------------------


def test_store_resubmission_audit(tmp_path):
    store = ScoreStore(tmp_path / "scores.jsonl")
    store.append(_mk_record("s", "P1", 1, CANDIDATE_LEFT))
    store.append(_mk_record("s", "P1", 3, CANDIDATE_LEFT))
    records = store.records()
    assert len(records) == 1
    assert records[0].score == 3
    assert records[0].replaces is True
    assert "resubmission" in records[0].note
    # both raw lines are retained for audit
    assert len((tmp_path / "scores.jsonl").read_text().splitlines()) == 2


def test_store_ignores_torn_tail_line(tmp_path):
    store = ScoreStore(tmp_path / "scores.jsonl")
    store.append(_mk_record("s", "P1", 2, CANDIDATE_LEFT))
    with (tmp_path / "scores.jsonl").open("a") as fh:
        fh.write('{"subject": "s", "pair_id": "P2", "raw_sco')  # simulated crash
    records = store.records()
    assert len(records) == 1
    assert records[0].pair_id == "P1"


def test_store_csv_export(tmp_path):
    store = ScoreStore(tmp_path / "scores.jsonl")
    store.append(_mk_record("s", "P1", -1, ANCHOR_LEFT))
    out = store.export_csv(tmp_path / "scores.csv")
    lines = out.read_text().splitlines()
    assert lines[0].startswith("subject,pair_id,raw_score,score,placement")
    assert len(lines) == 2


# -- summaries ----------------------------------------------------------------------------


def test_summarize_hand_values():
    meta = {"P1": ("P1", "cmp")}
    records = [_mk_record(f"s{i}", "P1", v, CANDIDATE_LEFT) for i, v in enumerate([3, 2, 1])]
    rows, averages = summarize(records, meta)
    assert len(rows) == 1
    assert rows[0].mean == pytest.approx(2.0)
    assert rows[0].std == pytest.approx(1.0)  # sample (n-1) estimator
    assert rows[0].n == 3
    assert averages["cmp"] == pytest.approx(2.0)

    uniform = [_mk_record(f"s{i}", "P1", 2, CANDIDATE_LEFT) for i in range(3)]
    rows, _ = summarize(uniform, meta)
    assert rows[0].std == 0.0


def test_summarize_is_invariant_to_placement_randomization():
    # same underlying judgements, opposite placements
    meta = {"P1": ("P1", "cmp"), "P2": ("P2", "cmp")}
    run_a = [
        _mk_record("s1", "P1", 2, CANDIDATE_LEFT),
        _mk_record("s1", "P2", -1, CANDIDATE_LEFT),
    ]
    run_b = [
        _mk_record("s1", "P1", -2, ANCHOR_LEFT),
        _mk_record("s1", "P2", 1, ANCHOR_LEFT),
    ]
    rows_a, avg_a = summarize(run_a, meta)
    rows_b, avg_b = summarize(run_b, meta)
    assert [(r.mean, r.std) for r in rows_a] == [(r.mean, r.std) for r in rows_b]
    assert avg_a == avg_b


def test_summary_table_renders_expected_row_shape():
    rows = [
        subjective.SummaryRow("P1", "ours_vs_liu", 2.19, 0.76, 31),
        subjective.SummaryRow("P2", "ours_vs_liu", 1.16, 0.88, 31),
    ]
    text = report.render_summary_table(rows, {"ours_vs_liu": 1.675})
    lines = text.splitlines()
    assert "| P1 | 2.19 | 0.76 |" in lines
    assert any(line.startswith("| **Average**") and "**1.68**" in line for line in lines)
    # gap marker for a missing cell
    rows.append(subjective.SummaryRow("P3", "ours_vs_wu", 0.5, 0.1, 4))
    text = report.render_summary_table(rows, {"ours_vs_liu": 1.675, "ours_vs_wu": 0.5})
    p3_line = next(line for line in text.splitlines() if line.startswith("| P3"))
    assert "| - | - |" in p3_line
