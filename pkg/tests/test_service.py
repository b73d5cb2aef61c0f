import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

import synthimages
from jndlab import imaging
from jndlab.service import create_app
from jndlab.subjective import PairSpec, ScoreStore, build_plan

MODEL_NAMES = ("hvssd_candidate", "anchor_liu2010")


def plan_registry_path(http, handle):
    return http.app.state.manager.registry.path(handle)


@pytest.fixture()
def plan_dir(tmp_path):
    rng = np.random.default_rng(0)
    pairs = []
    for i in range(12):
        img = (0.3 + 0.4 * rng.random((24, 24, 3))).astype(np.float32)
        cand = tmp_path / f"P{i+1}_{MODEL_NAMES[0]}.png"
        anch = tmp_path / f"P{i+1}_{MODEL_NAMES[1]}.png"
        imaging.save_image(img, cand)
        imaging.save_image(np.clip(img + 0.02, 0, 1), anch)
        pairs.append(
            PairSpec(
                pair_id=f"P{i+1}",
                image_id=f"P{i+1}",
                comparison=f"{MODEL_NAMES[0]}_vs_{MODEL_NAMES[1]}",
                candidate_path=str(cand),
                anchor_path=str(anch),
            )
        )
    return pairs, tmp_path


@pytest.fixture()
def client(plan_dir, tmp_path):
    pairs, _ = plan_dir
    plan = build_plan(pairs, seed=5)
    store = ScoreStore(tmp_path / "scores.jsonl")
    app = create_app(plan, store)
    return TestClient(app), plan, store


def test_full_session_round_trip(client):
    http, plan, store = client
    created = http.post("/session", json={"subject_id": "rater1"})
    assert created.status_code == 201
    sid = created.json()["session_id"]
    assert created.json()["trials_total"] == 12

    seen_tokens = set()
    for k in range(12):
        nxt = http.get(f"/session/{sid}/next").json()
        assert nxt["done"] is False
        assert nxt["index"] == k + 1 and nxt["total"] == 12
        assert nxt["token"] not in seen_tokens
        seen_tokens.add(nxt["token"])
        # images are fetchable through opaque handles, bytes untouched
        img = http.get(nxt["left_url"])
        assert img.status_code == 200
        assert img.headers["content-type"] == "image/png"
        handle = nxt["left_url"].rsplit("/", 1)[1]
        from pathlib import Path

        assert img.content == Path(plan_registry_path(http, handle)).read_bytes()
        scored = http.post(f"/session/{sid}/score", json={"token": nxt["token"], "score": 2})
        assert scored.status_code == 200
        assert scored.json()["accepted"] is True

    final = http.get(f"/session/{sid}/next").json()
    assert final == {"done": True, "completed": 12}
    assert len(store.records()) == 12


def test_rater_payloads_never_leak_model_identities(client):
    http, plan, store = client
    sid = http.post("/session", json={"subject_id": "r"}).json()["session_id"]
    payloads = []
    for _ in range(12):
        nxt = http.get(f"/session/{sid}/next")
        payloads.append(nxt.text)
        http.post(f"/session/{sid}/score", json={"token": nxt.json()["token"], "score": 0})
    payloads.append(http.get(f"/session/{sid}/next").text)
    blob = "\n".join(payloads).lower()
    for secret in MODEL_NAMES + ("candidate", "anchor", "model"):
        assert secret.lower() not in blob
    # schema-level: no key hints at identity either
    keys = set(json.loads(payloads[0]).keys())
    assert keys <= {"done", "token", "left_url", "right_url", "index", "total", "completed"}


def test_score_validation_and_stale_tokens(client):
    http, plan, store = client
    sid = http.post("/session", json={"subject_id": "r2"}).json()["session_id"]
    nxt = http.get(f"/session/{sid}/next").json()
    bad = http.post(f"/session/{sid}/score", json={"token": nxt["token"], "score": 5})
    assert bad.status_code == 422
    ok = http.post(f"/session/{sid}/score", json={"token": nxt["token"], "score": -3})
    assert ok.status_code == 200
    stale = http.post(f"/session/{sid}/score", json={"token": nxt["token"], "score": 1})
    assert stale.status_code == 409
    assert len(store.records()) == 1


def test_duplicate_session_conflict_carries_existing_id(client):
    http, plan, store = client
    sid = http.post("/session", json={"subject_id": "dup"}).json()["session_id"]
    again = http.post("/session", json={"subject_id": "dup"})
    assert again.status_code == 409
    assert again.json()["detail"]["existing_session_id"] == sid
    empty = http.post("/session", json={"subject_id": ""})
    assert empty.status_code == 422


def test_unknown_session_and_handle_404(client):
    http, plan, store = client
    assert http.get("/session/nope/next").status_code == 404
    assert http.get("/images/deadbeef").status_code == 404


def test_summary_endpoint_emits_normalized_statistics(client):
    http, plan, store = client
    sid = http.post("/session", json={"subject_id": "s"}).json()["session_id"]
    for _ in range(12):
        nxt = http.get(f"/session/{sid}/next").json()
        http.post(f"/session/{sid}/score", json={"token": nxt["token"], "score": 2})
    summary = http.get("/results/summary").json()
    assert len(summary["rows"]) == 12
    comparison = plan.pairs[0].comparison
    # one rater scoring raw +2 everywhere yields +-2 after orientation flips
    for row in summary["rows"]:
        assert row["n"] == 1
        assert abs(row["mean"]) == 2.0
    assert comparison in summary["averages"]
