"""Bradley-Terry fitting with robust (sandwich) uncertainty.

Pairwise preferences with outcomes in {-1, 0, +1} are aggregated into
per-policy log-abilities beta (theta = exp(beta)) by Newton-Raphson maximum
likelihood over the decisive comparisons only. Uncertainty comes from a
sandwich covariance estimator projected onto the sum-zero gauge, and a global
ranking is read off the fitted betas together with normal-quantile confidence
intervals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import norm

from .errors import ArenaError, EmptyDecisiveSet, GraphDisconnected

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 200
MAX_STEP_HALVINGS = 30

DIVERGED = "DIVERGED"
SEPARATED = "SEPARATED"


@dataclass(frozen=True)
class ComparisonRecord:
    """One double-blind pairwise judgment.

    outcome: +1 means policy_a preferred, -1 means policy_b preferred,
    0 means tie (recorded but excluded from fitting).
    """

    policy_a: str
    policy_b: str
    outcome: int
    task: str = ""
    annotator: str = ""
    rationale: str = ""
    timestamp: Optional[datetime] = None

    def __post_init__(self):
        if not self.policy_a or not self.policy_b:
            raise ValueError("policy ids must be non-empty")
        if self.policy_a == self.policy_b:
            raise ValueError("a comparison needs two distinct policies")
        if self.outcome not in (-1, 0, 1):
            raise ValueError(f"outcome must be in {{-1, 0, +1}}, got {self.outcome}")


@dataclass(frozen=True)
class AbilityEstimate:
    policies: tuple[str, ...]
    betas: np.ndarray  # log-abilities, sum-zero gauge
    centered_covariance: Optional[np.ndarray] = None
    gauge: str = "sum-zero"

    @property
    def thetas(self) -> np.ndarray:
        return np.exp(self.betas)


@dataclass(frozen=True)
class ConfidenceBand:
    policies: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    alpha: float


@dataclass(frozen=True)
class FitReport:
    estimate: AbilityEstimate
    iterations: int
    final_gradient_norm: float
    flags: frozenset[str] = field(default_factory=frozenset)


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input: {v}")


def bt_probability(beta_i: float, beta_j: float) -> float:
    """P(i preferred over j) = exp(beta_i) / (exp(beta_i) + exp(beta_j))."""
    _check_finite(beta_i, beta_j)
    d = beta_j - beta_i
    if d >= 0:
        return math.exp(-d) / (1.0 + math.exp(-d))
    return 1.0 / (1.0 + math.exp(d))


def _policy_index(records: Sequence[ComparisonRecord]) -> dict[str, int]:
    ids = sorted({r.policy_a for r in records} | {r.policy_b for r in records})
    return {pid: k for k, pid in enumerate(ids)}


def _decisive(records: Iterable[ComparisonRecord]):
    """Yield (winner_index_side) pairs: (i, j) with i the observed winner."""
    for r in records:
        if r.outcome == 0:
            continue
        yield r


def _as_beta_map(index: dict[str, int], betas: np.ndarray) -> np.ndarray:
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (len(index),):
        raise ValueError(
            f"beta vector of length {betas.shape} does not match "
            f"{len(index)} policies"
        )
    return betas


def _lookup(index: dict[str, int], pid: str) -> int:
    try:
        return index[pid]
    except KeyError:
        raise ValueError(f"unknown policy id: {pid!r}") from None


def log_likelihood(
    records: Sequence[ComparisonRecord],
    betas: np.ndarray,
    index: Optional[dict[str, int]] = None,
) -> float:
    """Log-likelihood of the decisive comparisons; ties contribute nothing."""
    index = index if index is not None else _policy_index(records)
    betas = _as_beta_map(index, betas)
    total = 0.0
    for r in _decisive(records):
        a, b = _lookup(index, r.policy_a), _lookup(index, r.policy_b)
        w, l = (a, b) if r.outcome == 1 else (b, a)
        # log sigmoid(beta_w - beta_l), numerically stable
        m = betas[w] - betas[l]
        total += -math.log1p(math.exp(-m)) if m >= 0 else m - math.log1p(math.exp(m))
    return total


def score_function(
    records: Sequence[ComparisonRecord],
    betas: np.ndarray,
    index: Optional[dict[str, int]] = None,
) -> np.ndarray:
    """Gradient of log_likelihood in beta; components sum to zero."""
    index = index if index is not None else _policy_index(records)
    betas = _as_beta_map(index, betas)
    g = np.zeros(len(index))
    for r in _decisive(records):
        a, b = _lookup(index, r.policy_a), _lookup(index, r.policy_b)
        w, l = (a, b) if r.outcome == 1 else (b, a)
        resid = 1.0 - bt_probability(betas[w], betas[l])
        g[w] += resid
        g[l] -= resid
    return g


def fisher_information(
    records: Sequence[ComparisonRecord],
    betas: np.ndarray,
    index: Optional[dict[str, int]] = None,
) -> np.ndarray:
    """Observed Fisher information (negative Hessian); PSD with 1 in its null space."""
    index = index if index is not None else _policy_index(records)
    betas = _as_beta_map(index, betas)
    h = np.zeros((len(index), len(index)))
    for r in _decisive(records):
        a, b = _lookup(index, r.policy_a), _lookup(index, r.policy_b)
        p = bt_probability(betas[a], betas[b])
        w = p * (1.0 - p)
        h[a, a] += w
        h[b, b] += w
        h[a, b] -= w
        h[b, a] -= w
    return h


def _connectivity_components(n: int, edges: list[tuple[int, int]]) -> list[list[int]]:
    if not edges:
        return [[k] for k in range(n)]
    rows = [e[0] for e in edges]
    cols = [e[1] for e in edges]
    adj = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    count, labels = connected_components(adj, directed=False)
    return [list(np.flatnonzero(labels == c)) for c in range(count)]


def _is_separated(n: int, beat_edges: list[tuple[int, int]]) -> bool:
    """True when some nonempty proper subset never loses to its complement.

    Equivalent to the winner->loser digraph not being strongly connected.
    """
    if n < 2:
        return False
    rows = [e[0] for e in beat_edges]
    cols = [e[1] for e in beat_edges]
    adj = coo_matrix((np.ones(len(beat_edges)), (rows, cols)), shape=(n, n))
    count, _ = connected_components(adj, directed=True, connection="strong")
    return count > 1


def _win_counts(records: Sequence[ComparisonRecord], index: dict[str, int]) -> np.ndarray:
    """wins[i, j] = number of decisive records where i beat j."""
    wins = np.zeros((len(index), len(index)))
    for r in _decisive(records):
        a, b = _lookup(index, r.policy_a), _lookup(index, r.policy_b)
        w, l = (a, b) if r.outcome == 1 else (b, a)
        wins[w, l] += 1.0
    return wins


def _ll_from_counts(wins: np.ndarray, betas: np.ndarray) -> float:
    margin = betas[:, None] - betas[None, :]
    return float(np.sum(wins * -np.logaddexp(0.0, -margin)))


def _grad_from_counts(wins: np.ndarray, betas: np.ndarray) -> np.ndarray:
    margin = betas[:, None] - betas[None, :]
    resid = wins / (1.0 + np.exp(margin))  # wins * (1 - p_win)
    return resid.sum(axis=1) - resid.sum(axis=0)


def _hess_from_counts(wins: np.ndarray, betas: np.ndarray) -> np.ndarray:
    margin = betas[:, None] - betas[None, :]
    p = 1.0 / (1.0 + np.exp(-margin))
    weight = (wins + wins.T) * p * (1.0 - p)  # symmetric pair weights
    np.fill_diagonal(weight, 0.0)
    h = -weight
    h[np.diag_indices_from(h)] = weight.sum(axis=1)
    return h


def fit_bradley_terry(
    records: Sequence[ComparisonRecord],
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> FitReport:
    """Newton-Raphson MLE of the Bradley-Terry log-abilities, sum-zero gauge.

    Raises GraphDisconnected / EmptyDecisiveSet when the data cannot identify
    a joint fit. Non-convergence and separation are reported via flags.
    """
    index = _policy_index(records)
    n = len(index)
    decisive = [r for r in records if r.outcome != 0]
    if not decisive:
        raise EmptyDecisiveSet("no decisive comparisons to fit")

    edges = [(index[r.policy_a], index[r.policy_b]) for r in decisive]
    components = _connectivity_components(n, edges)
    if len(components) > 1:
        names = sorted(index, key=index.get)
        raise GraphDisconnected([[names[k] for k in comp] for comp in components])

    beat_edges = [
        (index[r.policy_a], index[r.policy_b])
        if r.outcome == 1
        else (index[r.policy_b], index[r.policy_a])
        for r in decisive
    ]
    flags = set()
    if _is_separated(n, beat_edges):
        flags.add(SEPARATED)

    wins = _win_counts(records, index)
    betas = np.zeros(n)
    augment = np.full((n, n), 1.0 / n)
    ll = _ll_from_counts(wins, betas)
    grad = _grad_from_counts(wins, betas)
    iterations = 0
    converged = np.max(np.abs(grad)) <= tolerance
    while not converged and iterations < max_iterations:
        iterations += 1
        hess = _hess_from_counts(wins, betas)
        step = np.linalg.solve(hess + augment, grad)
        scale = 1.0
        for _ in range(MAX_STEP_HALVINGS):
            candidate = betas + scale * step
            candidate -= candidate.mean()
            if _ll_from_counts(wins, candidate) >= ll:
                break
            scale *= 0.5
        betas = betas + scale * step
        betas -= betas.mean()
        ll = _ll_from_counts(wins, betas)
        grad = _grad_from_counts(wins, betas)
        converged = np.max(np.abs(grad)) <= tolerance
    if not converged:
        flags.add(DIVERGED)

    policies = tuple(sorted(index, key=index.get))
    estimate = AbilityEstimate(policies=policies, betas=betas)
    return FitReport(
        estimate=estimate,
        iterations=iterations,
        final_gradient_norm=float(np.max(np.abs(grad))),
        flags=frozenset(flags),
    )


def _pinv_sum_zero(h: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Pseudo-inverse of the (exactly singular along 1) Fisher information."""
    eigvals, eigvecs = np.linalg.eigh(h)
    cutoff = rel_tol * float(np.max(eigvals)) if eigvals.size else 0.0
    inv = np.where(eigvals > cutoff, 1.0 / np.where(eigvals > cutoff, eigvals, 1.0), 0.0)
    return (eigvecs * inv) @ eigvecs.T


def centering_projector(n: int) -> np.ndarray:
    """A = I - (1/N) 11^T, removing the unidentifiable global offset."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def sandwich_covariance(
    records: Sequence[ComparisonRecord],
    betas_at_mle: np.ndarray,
    index: Optional[dict[str, int]] = None,
    gradient_threshold: float = 1e-6,
) -> np.ndarray:
    """Centered robust covariance A H+ S H+ A^T at the MLE."""
    index = index if index is not None else _policy_index(records)
    betas = _as_beta_map(index, betas_at_mle)
    grad = score_function(records, betas, index)
    if np.max(np.abs(grad)) > gradient_threshold:
        raise ArenaError(
            f"betas are not at an MLE (gradient inf-norm "
            f"{np.max(np.abs(grad)):.3g} > {gradient_threshold:g})"
        )
    n = len(index)
    s = np.zeros((n, n))
    for r in _decisive(records):
        a, b = _lookup(index, r.policy_a), _lookup(index, r.policy_b)
        w, l = (a, b) if r.outcome == 1 else (b, a)
        resid = 1.0 - bt_probability(betas[w], betas[l])
        u = np.zeros(n)
        u[w] = resid
        u[l] = -resid
        s += np.outer(u, u)
    h_pinv = _pinv_sum_zero(fisher_information(records, betas, index))
    v = h_pinv @ s @ h_pinv
    a_proj = centering_projector(n)
    v_tilde = a_proj @ v @ a_proj.T
    return 0.5 * (v_tilde + v_tilde.T)


def confidence_intervals(estimate: AbilityEstimate, alpha: float = 0.05) -> ConfidenceBand:
    """Per-policy beta_i +/- z_{1-alpha/2} sqrt(V_ii)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if estimate.centered_covariance is None:
        raise ValueError("estimate has no covariance; run sandwich_covariance first")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    half = z * np.sqrt(np.clip(np.diag(estimate.centered_covariance), 0.0, None))
    return ConfidenceBand(
        policies=estimate.policies,
        lower=estimate.betas - half,
        upper=estimate.betas + half,
        alpha=alpha,
    )


@dataclass(frozen=True)
class RankedPolicy:
    policy: str
    rank: int
    beta: float
    decisive: bool  # band does not overlap the next-ranked policy's band


def global_ranking(estimate: AbilityEstimate, bands: ConfidenceBand) -> list[RankedPolicy]:
    """Policies sorted by beta descending; band non-overlap marks decisive gaps."""
    if estimate.policies != bands.policies:
        raise ValueError("estimate and bands cover different policy sets")
    order = sorted(
        range(len(estimate.policies)),
        key=lambda k: (-estimate.betas[k], estimate.policies[k]),
    )
    out = []
    for pos, k in enumerate(order):
        if pos + 1 < len(order):
            nxt = order[pos + 1]
            decisive = bands.lower[k] > bands.upper[nxt]
        else:
            decisive = True  # nothing below to confuse with
        out.append(
            RankedPolicy(
                policy=estimate.policies[k],
                rank=pos + 1,
                beta=float(estimate.betas[k]),
                decisive=bool(decisive),
            )
        )
    return out


def estimate_with_covariance(report: FitReport, records: Sequence[ComparisonRecord]) -> AbilityEstimate:
    """Attach the sandwich covariance to a fitted estimate."""
    index = {pid: k for k, pid in enumerate(report.estimate.policies)}
    cov = sandwich_covariance(records, report.estimate.betas, index)
    return replace(report.estimate, centered_covariance=cov)


# ---------------------------------------------------------------------------
# Wire formats: JSONL comparison log, JSON fit report.

def record_to_json(record: ComparisonRecord) -> dict:
    ts = record.timestamp or datetime.now(timezone.utc)
    return {
        "policy_a": record.policy_a,
        "policy_b": record.policy_b,
        "outcome": record.outcome,
        "task": record.task,
        "annotator": record.annotator,
        "rationale": record.rationale,
        "timestamp": ts.isoformat(),
    }


def record_from_json(obj: dict) -> ComparisonRecord:
    raw_ts = obj.get("timestamp")
    ts = datetime.fromisoformat(raw_ts.replace("Z", "+00:00")) if raw_ts else None
    return ComparisonRecord(
        policy_a=obj["policy_a"],
        policy_b=obj["policy_b"],
        outcome=int(obj["outcome"]),
        task=obj.get("task", ""),
        annotator=obj.get("annotator", ""),
        rationale=obj.get("rationale", ""),
        timestamp=ts,
    )


def load_comparison_log(path) -> list[ComparisonRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return records


def save_comparison_log(records: Sequence[ComparisonRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r)) + "\n")


def fit_report_to_json(report: FitReport, covariance: Optional[np.ndarray] = None) -> dict:
    cov = covariance if covariance is not None else report.estimate.centered_covariance
    return {
        "policies": list(report.estimate.policies),
        "betas": [float(b) for b in report.estimate.betas],
        "covariance": [float(x) for x in np.asarray(cov).ravel()] if cov is not None else None,
        "flags": sorted(report.flags),
        "iterations": report.iterations,
        "final_gradient_norm": report.final_gradient_norm,
    }
