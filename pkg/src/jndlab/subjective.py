"""Blinded pairwise viewing-test backend: trial plans with randomized
placement, per-subject sessions, an append-only score store, and Mean/Std
aggregation of the ratings.

Model identities never leave this module through a rater-facing path; images
are referenced by content-addressed opaque handles.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from jndlab.errors import ConfigurationError

SCORE_RANGE = (-3, 3)
CANDIDATE_LEFT = "candidate_left"
ANCHOR_LEFT = "anchor_left"

SCORE_LABELS = {
    3: "left much better",
    2: "left better",
    1: "left a little better",
    0: "similar",
    -1: "right a little better",
    -2: "right better",
    -3: "right much better",
}


@dataclasses.dataclass(frozen=True)
class PairSpec:
    pair_id: str
    image_id: str
    comparison: str
    candidate_path: str
    anchor_path: str


@dataclasses.dataclass
class TrialPlan:
    pairs: list
    placements: dict  # pair_id -> CANDIDATE_LEFT | ANCHOR_LEFT
    seed: int

    def __post_init__(self):
        if not self.pairs:
            raise ConfigurationError("trial plan has no pairs")

    def pair_meta(self):
        return {p.pair_id: (p.image_id, p.comparison) for p in self.pairs}


def build_plan(pairs, seed) -> TrialPlan:
    """Fix the left/right placement of every pair uniformly at random."""
    rng = np.random.Generator(np.random.Philox(seed))
    placements = {
        p.pair_id: CANDIDATE_LEFT if rng.integers(2) == 0 else ANCHOR_LEFT for p in pairs
    }
    return TrialPlan(pairs=list(pairs), placements=placements, seed=int(seed))


def load_plan(path) -> TrialPlan:
    """Plan manifest: {"seed": int, "pairs": [{pair_id, image_id, comparison,
    candidate, anchor}]}. Relative image paths resolve against the manifest."""
    path = Path(path)
    raw = json.loads(path.read_text())
    pairs = []
    for item in raw["pairs"]:
        pairs.append(
            PairSpec(
                pair_id=str(item["pair_id"]),
                image_id=str(item["image_id"]),
                comparison=str(item.get("comparison", "candidate_vs_anchor")),
                candidate_path=str((path.parent / item["candidate"]).resolve()),
                anchor_path=str((path.parent / item["anchor"]).resolve()),
            )
        )
    return build_plan(pairs, int(raw.get("seed", 0)))


class ImageRegistry:
    """Content-addressed handles for the plan's image files."""

    def __init__(self, plan: TrialPlan):
        self._by_handle = {}
        self._handle_of = {}
        for pair in plan.pairs:
            for p in (pair.candidate_path, pair.anchor_path):
                if p not in self._handle_of:
                    digest = hashlib.sha256(Path(p).read_bytes()).hexdigest()[:20]
                    self._handle_of[p] = digest
                    self._by_handle[digest] = p

    def handle(self, path) -> str:
        return self._handle_of[path]

    def path(self, handle) -> str:
        if handle not in self._by_handle:
            raise KeyError(handle)
        return self._by_handle[handle]


def normalize_score(raw_score, placement) -> int:
    """Store scores in candidate-minus-anchor orientation."""
    raw_score = int(raw_score)
    if raw_score < SCORE_RANGE[0] or raw_score > SCORE_RANGE[1]:
        raise ValueError(f"score must be in {SCORE_RANGE}, got {raw_score}")
    if placement == CANDIDATE_LEFT:
        return raw_score
    if placement == ANCHOR_LEFT:
        return -raw_score
    raise ConfigurationError(f"unknown placement {placement!r}")


@dataclasses.dataclass
class ScoreRecord:
    subject: str
    pair_id: str
    raw_score: int
    score: int  # sign-normalized to candidate-minus-anchor
    placement: str
    timestamp: str
    replaces: bool = False
    note: str = None

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


class ScoreStore:
    """Append-only line-delimited record store; one fsynced line per score.

    A torn final line (crash mid-append) is skipped on read, so the store
    always yields either a complete record or none of it.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: ScoreRecord) -> ScoreRecord:
        with self._lock:
            prior = {(r.subject, r.pair_id) for r in self._read_all()}
            if (record.subject, record.pair_id) in prior:
                record = dataclasses.replace(
                    record, replaces=True, note="resubmission replaces earlier score"
                )
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")
                fh.flush()
                import os

                os.fsync(fh.fileno())
        return record

    def _read_all(self):
        if not self.path.exists():
            return []
        records = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ScoreRecord.from_json(line))
            except (json.JSONDecodeError, TypeError):
                continue  # torn tail line from an interrupted append
        return records

    def records(self):
        """Latest record per (subject, pair): resubmissions replace."""
        latest = {}
        for rec in self._read_all():
            latest[(rec.subject, rec.pair_id)] = rec
        return list(latest.values())

    def export_csv(self, path):
        import csv

        fields = [f.name for f in dataclasses.fields(ScoreRecord)]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for rec in self.records():
                writer.writerow([getattr(rec, f) for f in fields])
        return Path(path)


@dataclasses.dataclass
class SummaryRow:
    image_id: str
    comparison: str
    mean: float
    std: float
    n: int


def summarize(records, pair_meta):
    """Mean and sample standard deviation per (image, comparison) cell, plus
    the grand average of means per comparison."""
    cells = {}
    for rec in records:
        if rec.pair_id not in pair_meta:
            continue
        image_id, comparison = pair_meta[rec.pair_id]
        cells.setdefault((image_id, comparison), []).append(rec.score)
    rows = []
    for (image_id, comparison), scores in sorted(cells.items()):
        n = len(scores)
        mean = float(np.mean(scores))
        std = float(np.std(scores, ddof=1)) if n > 1 else 0.0
        rows.append(SummaryRow(image_id, comparison, mean, std, n))
    averages = {}
    for comparison in sorted({r.comparison for r in rows}):
        means = [r.mean for r in rows if r.comparison == comparison]
        averages[comparison] = float(np.mean(means))
    return rows, averages


@dataclasses.dataclass
class TrialView:
    token: str
    left_handle: str
    right_handle: str
    index: int  # 1-based position in this subject's order
    total: int


class Session:
    def __init__(self, session_id, subject, plan, registry, order):
        self.session_id = session_id
        self.subject = subject
        self.plan = plan
        self.registry = registry
        self.order = order  # pair indices in presentation order
        self.cursor = 0
        self.current_token = None

    @property
    def total(self):
        return len(self.order)

    @property
    def done(self):
        return self.cursor >= self.total

    def next_trial(self):
        """Current unanswered trial; repeated calls return the same view."""
        if self.done:
            return None
        pair = self.plan.pairs[self.order[self.cursor]]
        if self.current_token is None:
            self.current_token = uuid.uuid4().hex
        placement = self.plan.placements[pair.pair_id]
        if placement == CANDIDATE_LEFT:
            left, right = pair.candidate_path, pair.anchor_path
        else:
            left, right = pair.anchor_path, pair.candidate_path
        return TrialView(
            token=self.current_token,
            left_handle=self.registry.handle(left),
            right_handle=self.registry.handle(right),
            index=self.cursor + 1,
            total=self.total,
        )

    def submit(self, token, raw_score, store: ScoreStore):
        if self.done or token != self.current_token:
            raise StaleTokenError("trial token is not current")
        pair = self.plan.pairs[self.order[self.cursor]]
        placement = self.plan.placements[pair.pair_id]
        record = ScoreRecord(
            subject=self.subject,
            pair_id=pair.pair_id,
            raw_score=int(raw_score),
            score=normalize_score(raw_score, placement),
            placement=placement,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        record = store.append(record)
        self.cursor += 1
        self.current_token = None
        return record


class StaleTokenError(RuntimeError):
    pass


class DuplicateSessionError(RuntimeError):
    def __init__(self, message, session_id):
        super().__init__(message)
        self.session_id = session_id


class SessionManager:
    """Per-subject sessions with independently shuffled trial orders."""

    def __init__(self, plan: TrialPlan, store: ScoreStore, registry=None):
        self.plan = plan
        self.store = store
        self.registry = registry or ImageRegistry(plan)
        self._lock = threading.Lock()
        self._sessions = {}
        self._by_subject = {}

    def create_session(self, subject) -> Session:
        subject = str(subject).strip()
        if not subject:
            raise ValueError("subject id must be non-empty")
        with self._lock:
            if subject in self._by_subject:
                raise DuplicateSessionError(
                    f"subject {subject!r} already has a session",
                    session_id=self._by_subject[subject],
                )
            digest = hashlib.sha256(f"{self.plan.seed}:{subject}".encode()).digest()
            rng = np.random.Generator(np.random.Philox(int.from_bytes(digest[:8], "big")))
            order = list(rng.permutation(len(self.plan.pairs)))
            session = Session(uuid.uuid4().hex, subject, self.plan, self.registry, order)
            self._sessions[session.session_id] = session
            self._by_subject[subject] = session.session_id
            return session

    def get(self, session_id) -> Session:
        if session_id not in self._sessions:
            raise KeyError(session_id)
        return self._sessions[session_id]

    def summary(self):
        return summarize(self.store.records(), self.plan.pair_meta())
