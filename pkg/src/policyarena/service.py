"""Live comparison arena: executions, double-blind pairing, quiz gating,
preference logging, and leaderboards.

All state changes append to a JSONL event log; the in-memory index is rebuilt
by replaying the log from genesis, so a restarted service reproduces the
exact leaderboard. Annotators must pass a 10-question gold-pair quiz (>= 8
correct) before receiving assignments, every assignment blinds and coin-flips
the two sides, and ties are logged but never enter the Bradley-Terry fit.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel

from .errors import ArenaError, EmptyDecisiveSet, GraphDisconnected, ParseError
from .ranking import (
    ComparisonRecord,
    confidence_intervals,
    estimate_with_covariance,
    fit_bradley_terry,
    global_ranking,
)

QUIZ_SIZE = 10
QUIZ_PASS_THRESHOLD = 8
CHOICES = ("LEFT", "RIGHT", "TIE")


class NotQualified(ArenaError):
    """Annotator has not passed the qualification quiz."""


class NoPairsAvailable(ArenaError):
    """No eligible pair for this annotator right now."""


class RationaleRequired(ArenaError):
    """Preference submissions need a non-empty written rationale."""


class InvalidPair(ArenaError):
    """Unknown, expired, or foreign pair id."""


class AlreadyJudged(ArenaError):
    """This assignment was already answered."""


@dataclass(frozen=True)
class ExecutionRecord:
    execution_id: str
    policy: str
    environment_id: str
    task: str
    video_uri: str
    initial_condition_hash: str
    perturbation: Optional[dict] = None

    def pairing_key(self) -> tuple:
        pert = json.dumps(self.perturbation, sort_keys=True) if self.perturbation else ""
        return (self.environment_id, self.task, self.initial_condition_hash, pert)

    def dedup_key(self) -> tuple:
        return (self.policy,) + self.pairing_key()


@dataclass
class PairAssignment:
    pair_id: str
    exec_left: str
    exec_right: str
    annotator: str
    issued_at: datetime
    environment_id: str
    task: str
    answered: bool = False
    blinded: bool = True


@dataclass(frozen=True)
class GoldPair:
    pair_id: str
    left_uri: str
    right_uri: str
    correct: str  # LEFT | RIGHT | TIE


@dataclass
class QuizState:
    annotator: str
    answered: list = field(default_factory=list)  # (gold pair id, response, correct)
    passed: bool = False
    token: Optional[str] = None


@dataclass(frozen=True)
class TaskRoles:
    target: str
    destination: Optional[str] = None


def parse_task_roles(text: str) -> TaskRoles:
    """Parse 'target: X, destination: Y' or 'target: X' (keys case-insensitive)."""
    target = None
    destination = None
    for clause in text.split(","):
        if ":" not in clause:
            continue
        key, _, value = clause.partition(":")
        key = key.strip().lower()
        value = value.strip().rstrip(".")
        if key == "target" and value:
            target = value
        elif key == "destination" and value:
            destination = value
    if target is None:
        raise ParseError(f"no target clause in {text!r}")
    return TaskRoles(target=target, destination=destination)


def load_gold_quiz(path) -> list[GoldPair]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    pairs = obj["pairs"]
    if len(pairs) != QUIZ_SIZE:
        raise ValueError(f"gold quiz must have exactly {QUIZ_SIZE} pairs, got {len(pairs)}")
    out = []
    for k, p in enumerate(pairs):
        if p["correct"] not in CHOICES:
            raise ValueError(f"gold answer must be one of {CHOICES}")
        out.append(
            GoldPair(
                pair_id=p.get("pair_id", f"gold-{k}"),
                left_uri=p["left_uri"],
                right_uri=p["right_uri"],
                correct=p["correct"],
            )
        )
    return out


def _now() -> datetime:
    return datetime.now(timezone.utc)


class ArenaStore:
    """Append-only event log plus the derived in-memory index.

    A single lock serializes writers; reads take immutable snapshots of the
    derived lists, so replaying the log from genesis reconstructs the exact
    same leaderboard.
    """

    def __init__(
        self,
        log_path,
        gold_quiz: list[GoldPair],
        seed: int = 0,
        assignment_ttl_seconds: float = 3600.0,
    ):
        self.log_path = Path(log_path)
        self.gold_quiz = list(gold_quiz)
        self.assignment_ttl = assignment_ttl_seconds
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._seq = 0

        self.policies: set[str] = set()
        self.executions: dict[str, ExecutionRecord] = {}
        self._dedup: dict[tuple, str] = {}
        self.assignments: dict[str, PairAssignment] = {}
        self._judged: dict[str, set[frozenset]] = {}  # annotator -> unordered pairs
        self._pair_judgments: dict[frozenset, int] = {}
        # (record, environment_id, perturbation label) per preference
        self.preferences: list[tuple[ComparisonRecord, str, str]] = []
        self.quiz_states: dict[str, QuizState] = {}
        self._tokens: dict[str, str] = {}  # token -> annotator
        self._leaderboard_cache: dict = {}

        if self.log_path.exists():
            self._replay()

    # -- event log ----------------------------------------------------------

    def _append(self, event_type: str, payload: dict) -> None:
        self._seq += 1
        event = {
            "type": event_type,
            "payload": payload,
            "seq": self._seq,
            "timestamp": _now().isoformat(),
        }
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")

    def _replay(self) -> None:
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                self._apply(event["type"], event["payload"])
                self._seq = event["seq"]

    def _apply(self, event_type: str, payload: dict) -> None:
        if event_type == "policy_registered":
            self.policies.add(payload["policy_id"])
        elif event_type == "execution_registered":
            record = ExecutionRecord(**payload)
            self.executions[record.execution_id] = record
            self._dedup[record.dedup_key()] = record.execution_id
        elif event_type == "pair_assigned":
            assignment = PairAssignment(
                pair_id=payload["pair_id"],
                exec_left=payload["exec_left"],
                exec_right=payload["exec_right"],
                annotator=payload["annotator"],
                issued_at=datetime.fromisoformat(payload["issued_at"]),
                environment_id=payload["environment_id"],
                task=payload["task"],
            )
            self.assignments[assignment.pair_id] = assignment
        elif event_type == "preference_submitted":
            assignment = self.assignments[payload["pair_id"]]
            assignment.answered = True
            record = ComparisonRecord(
                policy_a=payload["policy_a"],
                policy_b=payload["policy_b"],
                outcome=payload["outcome"],
                task=payload["task"],
                annotator=payload["annotator"],
                rationale=payload["rationale"],
                timestamp=datetime.fromisoformat(payload["timestamp"]),
            )
            self.preferences.append(
                (record, payload["environment_id"], payload.get("perturbation", ""))
            )
            pair = frozenset((assignment.exec_left, assignment.exec_right))
            self._judged.setdefault(payload["annotator"], set()).add(pair)
            self._pair_judgments[pair] = self._pair_judgments.get(pair, 0) + 1
        elif event_type == "quiz_submitted":
            state = QuizState(
                annotator=payload["annotator"],
                answered=[tuple(a) for a in payload["answered"]],
                passed=payload["passed"],
                token=payload.get("token"),
            )
            self.quiz_states[state.annotator] = state
            if state.passed and state.token:
                self._tokens[state.token] = state.annotator
        else:
            raise ValueError(f"unknown event type {event_type!r}")

    def _record(self, event_type: str, payload: dict) -> None:
        self._apply(event_type, payload)
        self._append(event_type, payload)

    # -- registration -------------------------------------------------------

    def register_policy(self, policy_id: str) -> str:
        if not policy_id:
            raise ValueError("policy id must be non-empty")
        with self._lock:
            if policy_id not in self.policies:
                self._record("policy_registered", {"policy_id": policy_id})
        return policy_id

    def register_execution(self, record: ExecutionRecord) -> str:
        if not record.video_uri:
            raise ValueError("video_uri must be non-empty")
        if record.policy not in self.policies:
            raise ValueError(f"unknown policy {record.policy!r}")
        with self._lock:
            existing = self._dedup.get(record.dedup_key())
            if existing is not None:
                return existing
            self._record(
                "execution_registered",
                {
                    "execution_id": record.execution_id,
                    "policy": record.policy,
                    "environment_id": record.environment_id,
                    "task": record.task,
                    "video_uri": record.video_uri,
                    "initial_condition_hash": record.initial_condition_hash,
                    "perturbation": record.perturbation,
                },
            )
        return record.execution_id

    # -- quiz ---------------------------------------------------------------

    def quiz_pairs(self) -> list[GoldPair]:
        """Gold pairs in a fresh shuffled order (retakes see a new ordering)."""
        order = self._rng.permutation(len(self.gold_quiz))
        return [self.gold_quiz[k] for k in order]

    def quiz_evaluate(self, annotator: str, responses: dict[str, str]) -> QuizState:
        """responses: gold pair id -> choice; pass needs >= 8 of 10 correct."""
        if len(responses) != QUIZ_SIZE:
            raise ValueError(f"expected {QUIZ_SIZE} responses, got {len(responses)}")
        gold = {p.pair_id: p.correct for p in self.gold_quiz}
        if set(responses) != set(gold):
            raise ValueError("responses must cover the configured gold pairs")
        answered = [
            (pid, choice, gold[pid] == choice) for pid, choice in sorted(responses.items())
        ]
        correct = sum(1 for _, _, ok in answered if ok)
        passed = correct >= QUIZ_PASS_THRESHOLD
        token = uuid.uuid4().hex if passed else None
        with self._lock:
            self._record(
                "quiz_submitted",
                {
                    "annotator": annotator,
                    "answered": [list(a) for a in answered],
                    "passed": passed,
                    "token": token,
                },
            )
        return self.quiz_states[annotator]

    def annotator_for_token(self, token: str) -> Optional[str]:
        return self._tokens.get(token)

    def has_passed(self, annotator: str) -> bool:
        state = self.quiz_states.get(annotator)
        return bool(state and state.passed)

    # -- pairing ------------------------------------------------------------

    def _candidate_pairs(self) -> list[frozenset]:
        by_key: dict[tuple, list[ExecutionRecord]] = {}
        for record in self.executions.values():
            by_key.setdefault(record.pairing_key(), []).append(record)
        candidates = []
        for group in by_key.values():
            group = sorted(group, key=lambda r: r.execution_id)
            for i in range(len(group)):
                for j in range(i + 1, len(group)):
                    if group[i].policy != group[j].policy:
                        candidates.append(
                            frozenset((group[i].execution_id, group[j].execution_id))
                        )
        return candidates

    def _active_assignments(self, annotator: str) -> set[frozenset]:
        now = _now()
        active = set()
        for a in self.assignments.values():
            if a.annotator != annotator or a.answered:
                continue
            if (now - a.issued_at).total_seconds() > self.assignment_ttl:
                continue  # expired assignments return to the pool
            active.add(frozenset((a.exec_left, a.exec_right)))
        return active

    def next_pair(self, annotator: str) -> PairAssignment:
        if not self.has_passed(annotator):
            raise NotQualified(f"annotator {annotator!r} has not passed the quiz")
        with self._lock:
            judged = self._judged.get(annotator, set())
            reserved = self._active_assignments(annotator)
            eligible = [
                pair
                for pair in self._candidate_pairs()
                if pair not in judged and pair not in reserved
            ]
            if not eligible:
                raise NoPairsAvailable("no eligible pairs for this annotator")
            # least-judged first; random tie-break among the minimum
            counts = [self._pair_judgments.get(pair, 0) for pair in eligible]
            least = min(counts)
            pool = sorted(
                (tuple(sorted(pair)) for pair, c in zip(eligible, counts) if c == least)
            )
            chosen = pool[int(self._rng.integers(len(pool)))]
            left, right = chosen
            if self._rng.random() < 0.5:
                left, right = right, left
            assignment_payload = {
                "pair_id": uuid.uuid4().hex,
                "exec_left": left,
                "exec_right": right,
                "annotator": annotator,
                "issued_at": _now().isoformat(),
                "environment_id": self.executions[left].environment_id,
                "task": self.executions[left].task,
            }
            self._record("pair_assigned", assignment_payload)
            return self.assignments[assignment_payload["pair_id"]]

    def submit_preference(
        self, pair_id: str, annotator: str, choice: str, rationale: str
    ) -> ComparisonRecord:
        if choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}")
        if not rationale.strip():
            raise RationaleRequired("a written rationale is required")
        with self._lock:
            assignment = self.assignments.get(pair_id)
            if assignment is None or assignment.annotator != annotator:
                raise InvalidPair(f"pair {pair_id!r} was not issued to this annotator")
            if assignment.answered:
                raise AlreadyJudged(f"pair {pair_id!r} already judged")
            if (_now() - assignment.issued_at).total_seconds() > self.assignment_ttl:
                raise InvalidPair(f"pair {pair_id!r} expired")

            left_exec = self.executions[assignment.exec_left]
            right_exec = self.executions[assignment.exec_right]
            # canonical order: policy_a is the lexicographically smaller policy
            if left_exec.policy < right_exec.policy:
                policy_a, policy_b = left_exec.policy, right_exec.policy
                left_is_a = True
            else:
                policy_a, policy_b = right_exec.policy, left_exec.policy
                left_is_a = False
            if choice == "TIE":
                outcome = 0
            elif (choice == "LEFT") == left_is_a:
                outcome = 1
            else:
                outcome = -1
            payload = {
                "pair_id": pair_id,
                "policy_a": policy_a,
                "policy_b": policy_b,
                "outcome": outcome,
                "task": assignment.task,
                "annotator": annotator,
                "rationale": rationale.strip(),
                "timestamp": _now().isoformat(),
                "environment_id": assignment.environment_id,
                "perturbation": json.dumps(left_exec.perturbation, sort_keys=True)
                if left_exec.perturbation
                else "",
            }
            self._record("preference_submitted", payload)
            return self.preferences[-1][0]

    # -- leaderboard ---------------------------------------------------------

    def leaderboard(
        self,
        environment: Optional[str] = None,
        perturbation: Optional[str] = None,
        alpha: float = 0.05,
    ) -> dict:
        key = (len(self.preferences), environment, perturbation, alpha)
        cached = self._leaderboard_cache.get(key)
        if cached is not None:
            return cached
        records = [
            r
            for r, env, pert in self.preferences
            if (environment is None or env == environment)
            and (perturbation is None or pert == perturbation)
        ]
        decisive = sum(1 for r in records if r.outcome != 0)
        if decisive == 0:
            raise EmptyDecisiveSet("no decisive preferences under this filter")
        report = fit_bradley_terry(records)
        estimate = estimate_with_covariance(report, records)
        bands = confidence_intervals(estimate, alpha)
        ranking = global_ranking(estimate, bands)
        payload = {
            "policies": list(estimate.policies),
            "betas": [float(b) for b in estimate.betas],
            "thetas": [float(t) for t in estimate.thetas],
            "intervals": [
                {"policy": p, "lower": float(lo), "upper": float(hi)}
                for p, lo, hi in zip(estimate.policies, bands.lower, bands.upper)
            ],
            "ranking": [
                {"policy": r.policy, "rank": r.rank, "beta": r.beta, "decisive": r.decisive}
                for r in ranking
            ],
            "counts": {"total": len(records), "decisive": decisive, "ties": len(records) - decisive},
            "flags": sorted(report.flags),
            "alpha": alpha,
        }
        self._leaderboard_cache = {key: payload}
        return payload


# ---------------------------------------------------------------------------
# HTTP surface.


class PolicyIn(BaseModel):
    policy_id: str


class ExecutionIn(BaseModel):
    execution_id: str
    policy: str
    environment_id: str
    task: str = ""
    video_uri: str
    initial_condition_hash: str = ""
    perturbation: Optional[dict] = None


class QuizResponseIn(BaseModel):
    pair_id: str
    choice: str


class QuizIn(BaseModel):
    annotator: str
    responses: list[QuizResponseIn]


class PreferenceIn(BaseModel):
    pair_id: str
    choice: str
    rationale: str


def create_app(store: ArenaStore):
    """FastAPI app over an ArenaStore. Policy identities never appear in any
    response an annotator can reach."""
    from fastapi import FastAPI, Header, HTTPException

    app = FastAPI(title="policy comparison arena")

    def annotator_from(token: Optional[str]) -> str:
        annotator = store.annotator_for_token(token) if token else None
        if annotator is None:
            raise HTTPException(status_code=401, detail="invalid or missing token")
        return annotator

    @app.post("/policies")
    def register_policy(body: PolicyIn):
        try:
            return {"policy_id": store.register_policy(body.policy_id)}
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/executions")
    def register_execution(body: ExecutionIn):
        record = ExecutionRecord(
            execution_id=body.execution_id,
            policy=body.policy,
            environment_id=body.environment_id,
            task=body.task,
            video_uri=body.video_uri,
            initial_condition_hash=body.initial_condition_hash,
            perturbation=body.perturbation,
        )
        try:
            return {"execution_id": store.register_execution(record)}
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/quiz")
    def get_quiz():
        return {
            "pairs": [
                {"pair_id": p.pair_id, "left_uri": p.left_uri, "right_uri": p.right_uri}
                for p in store.quiz_pairs()
            ]
        }

    @app.post("/quiz")
    def post_quiz(body: QuizIn):
        try:
            state = store.quiz_evaluate(
                body.annotator, {r.pair_id: r.choice for r in body.responses}
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "passed": state.passed,
            "correct": sum(1 for _, _, ok in state.answered if ok),
            "token": state.token,
        }

    @app.get("/pairs/next")
    def get_next_pair(x_annotator_token: Optional[str] = Header(default=None)):
        annotator = annotator_from(x_annotator_token)
        try:
            assignment = store.next_pair(annotator)
        except NotQualified as exc:
            raise HTTPException(status_code=403, detail=str(exc))
        except NoPairsAvailable as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "pair_id": assignment.pair_id,
            "left_video_uri": store.executions[assignment.exec_left].video_uri,
            "right_video_uri": store.executions[assignment.exec_right].video_uri,
            "task": assignment.task,
            "environment_id": assignment.environment_id,
        }

    @app.post("/preferences")
    def post_preference(
        body: PreferenceIn, x_annotator_token: Optional[str] = Header(default=None)
    ):
        annotator = annotator_from(x_annotator_token)
        try:
            store.submit_preference(body.pair_id, annotator, body.choice, body.rationale)
        except RationaleRequired as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except AlreadyJudged as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (InvalidPair, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"status": "recorded"}

    @app.get("/leaderboard")
    def get_leaderboard(
        environment: Optional[str] = None,
        perturbation: Optional[str] = None,
        alpha: float = 0.05,
    ):
        try:
            return store.leaderboard(environment, perturbation, alpha)
        except EmptyDecisiveSet as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except GraphDisconnected as exc:
            raise HTTPException(
                status_code=409,
                detail={"error": "graph disconnected", "components": exc.components},
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    return app
