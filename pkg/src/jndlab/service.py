"""HTTP endpoints for the blinded viewing test.

Rater-facing payloads carry only opaque trial tokens and content-addressed
image handles; model identities stay server-side. The summary endpoint (for
the experimenter) reports per-comparison statistics.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from jndlab.subjective import (
    DuplicateSessionError,
    ScoreStore,
    SessionManager,
    StaleTokenError,
    TrialPlan,
)


class SessionRequest(BaseModel):
    subject_id: str = Field(min_length=1)


class SessionResponse(BaseModel):
    session_id: str
    trials_total: int


class NextResponse(BaseModel):
    done: bool
    token: str = None
    left_url: str = None
    right_url: str = None
    index: int = None
    total: int = None
    completed: int = None


class ScoreRequest(BaseModel):
    token: str
    score: int


class ScoreResponse(BaseModel):
    accepted: bool
    index: int
    total: int


class SummaryRowOut(BaseModel):
    image_id: str
    comparison: str
    mean: float
    std: float
    n: int


class SummaryResponse(BaseModel):
    rows: list[SummaryRowOut]
    averages: dict[str, float]


def create_app(plan: TrialPlan, store: ScoreStore, ui_dir=None) -> FastAPI:
    app = FastAPI(title="pairwise viewing test")
    manager = SessionManager(plan, store)
    app.state.manager = manager

    @app.post("/session", response_model=SessionResponse, status_code=201)
    def create_session(body: SessionRequest):
        try:
            session = manager.create_session(body.subject_id)
        except DuplicateSessionError as exc:
            raise HTTPException(
                status_code=409,
                detail={"error": str(exc), "existing_session_id": exc.session_id},
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return SessionResponse(session_id=session.session_id, trials_total=session.total)

    def _session(session_id):
        try:
            return manager.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")

    @app.get("/session/{session_id}/next", response_model=NextResponse, response_model_exclude_none=True)
    def next_trial(session_id: str):
        session = _session(session_id)
        view = session.next_trial()
        if view is None:
            return NextResponse(done=True, completed=session.total)
        return NextResponse(
            done=False,
            token=view.token,
            left_url=f"/images/{view.left_handle}",
            right_url=f"/images/{view.right_handle}",
            index=view.index,
            total=view.total,
        )

    @app.post("/session/{session_id}/score", response_model=ScoreResponse)
    def submit_score(session_id: str, body: ScoreRequest):
        session = _session(session_id)
        try:
            session.submit(body.token, body.score, store)
        except StaleTokenError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return ScoreResponse(accepted=True, index=session.cursor, total=session.total)

    @app.get("/results/summary", response_model=SummaryResponse)
    def results_summary():
        rows, averages = manager.summary()
        return SummaryResponse(
            rows=[SummaryRowOut(**row.__dict__) for row in rows], averages=averages
        )

    @app.get("/images/{handle}")
    def image(handle: str):
        try:
            path = manager.registry.path(handle)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown image handle")
        media = "image/png" if path.lower().endswith(".png") else "image/bmp"
        return FileResponse(path, media_type=media)

    if ui_dir is not None:
        app.mount("/app", StaticFiles(directory=Path(ui_dir), html=True), name="ui")

    return app
