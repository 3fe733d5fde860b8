"""Boundary attack loop: bisect to the boundary, estimate the gradient from
sign queries, step uphill, repeat; plus the progressive search for the scale
whose subspace best trades gradient coverage against sampling noise.

Query accounting is exact: every oracle call lands in exactly one of the
per-iteration buckets (binary search, estimation, step search) or in the
optional endpoint validation, and the trajectory stores the breakdown.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BudgetExhaustedError,
    InvalidDimensionError,
    InvalidEndpointsError,
    NoValidPairsError,
    PartialEstimateError,
)
from .estimator import estimate_gradient
from .models import AttackSpec, Classifier, MeteredOracle, true_gradient
from .projections import Projection, ScaleSchedule
from .tensors import SeededRng, cosine_similarity, l2, mse

logger = logging.getLogger("psba.attack")

# Step search gives up once the step shrinks below this times the current
# distance to the target; the iteration is then flagged stalled.
STALL_FACTOR = 1e-12


@dataclass
class AttackConfig:
    """Knobs for one attack run. theta and delta default to the
    (m sqrt(m))^-1 and ||x_t - x*|| / m rules when left unset."""

    num_samples: int = 100  # B, oracle queries per gradient estimate
    max_queries: int = 2000
    seed: int = 0
    theta: float | None = None
    delta_scale: float | None = None  # delta_t = delta_scale * ||x_t - x*||; default 1/m
    max_iterations: int | None = None
    validate_endpoints: bool = True
    success_mse: float | None = None


@dataclass
class IterationRecord:
    iteration: int
    mse_boundary: float
    step_size: float
    cumulative_queries: int
    bsearch_queries: int
    estimate_queries: int
    step_queries: int
    stalled: bool
    dist_boundary: float = 0.0  # ||x_t - x*||
    dist_after_step: float = 0.0  # ||x_hat_t - x*||
    cosine_vs_true: float | None = None


@dataclass
class AttackTrajectory:
    records: list[IterationRecord] = field(default_factory=list)
    boundary_points: list[np.ndarray] = field(default_factory=list)
    stepped_points: list[np.ndarray] = field(default_factory=list)
    setup_queries: int = 0
    partial_queries: int = 0  # tail consumed by an unfinished iteration
    total_queries: int = 0
    final_point: np.ndarray | None = None
    exhausted: bool = False

    @property
    def final_mse(self) -> float | None:
        return self.records[-1].mse_boundary if self.records else None

    def ledger_total(self) -> int:
        per_iter = sum(
            r.bsearch_queries + r.estimate_queries + r.step_queries for r in self.records
        )
        return self.setup_queries + per_iter + self.partial_queries

    def mse_at_cap(self, query_cap: int) -> float | None:
        """Best boundary MSE reached within the first ``query_cap`` queries."""
        eligible = [r.mse_boundary for r in self.records if r.cumulative_queries <= query_cap]
        return min(eligible) if eligible else None


def bsearch_query_count(theta: float) -> int:
    """Bisection on a unit parameter interval down to width theta."""
    return max(1, math.ceil(math.log2(1.0 / theta)))


def binary_search_boundary(
    oracle: MeteredOracle,
    x_adv: np.ndarray,
    x_star: np.ndarray,
    theta: float,
) -> tuple[np.ndarray, int]:
    """Bisect the segment [x_star, x_adv] to an adversarial point within
    parameter distance theta of the sign flip.

    Endpoints are trusted, not queried: sign(x_adv) must be +1 and
    sign(x_star) must be -1. Consumes exactly ceil(log2(1/theta)) queries.
    Returns (boundary point, queries used).
    """
    if not 0.0 < theta < 1.0:
        raise InvalidDimensionError(f"theta={theta} must lie in (0, 1)")
    adv = np.asarray(x_adv, dtype=np.float64).reshape(-1)
    star = np.asarray(x_star, dtype=np.float64).reshape(-1)
    lo, hi = 0.0, 1.0  # parameter 0 = x_star side (-1), 1 = adversarial side (+1)
    queries = 0
    for _ in range(bsearch_query_count(theta)):
        mid = 0.5 * (lo + hi)
        point = star + mid * (adv - star)
        queries += 1
        if oracle.decide(point) == 1:
            hi = mid
        else:
            lo = mid
    return star + hi * (adv - star), queries


def geometric_step_search(
    oracle: MeteredOracle,
    x_t: np.ndarray,
    direction: np.ndarray,
    iteration: int,
    dist_to_target: float,
) -> tuple[np.ndarray, float, int, bool]:
    """Step along ``direction`` starting at ||x_t - x*|| / sqrt(t), halving
    until the oracle answers +1.

    Returns (new point, accepted step, queries used, stalled). A stalled
    search (step below STALL_FACTOR times the distance) keeps x_t so the
    next binary search still has an adversarial endpoint.
    """
    xt = np.asarray(x_t, dtype=np.float64).reshape(-1)
    dirv = np.asarray(direction, dtype=np.float64).reshape(-1)
    norm = l2(dirv)
    if abs(norm - 1.0) > 1e-9:
        raise InvalidDimensionError("direction must be unit length")
    xi = dist_to_target / math.sqrt(iteration)
    queries = 0
    cutoff = STALL_FACTOR * dist_to_target
    while xi >= cutoff:
        candidate = xt + xi * dirv
        queries += 1
        if oracle.decide(candidate) == 1:
            return candidate, xi, queries, False
        xi *= 0.5
    return xt.copy(), 0.0, queries, True


def run_attack(
    oracle: MeteredOracle,
    spec: AttackSpec,
    source: np.ndarray,
    target: np.ndarray,
    projection: Projection,
    config: AttackConfig,
    model: Classifier | None = None,
) -> AttackTrajectory:
    """Run the progressive boundary attack until the query budget is spent.

    ``source`` must be adversarial (sign +1) and ``target`` non-adversarial;
    with ``config.validate_endpoints`` the first two queries verify that.
    ``model`` is optional and only adds the per-iteration cosine between the
    estimate and the analytic gradient to the trajectory (whitebox
    diagnostic; the attack itself never reads it).

    Each iteration: binary search the segment [current adversarial point,
    target] to a boundary point x_t, estimate the gradient there with B
    queries, normalize, and take a geometric step-search ascent step.
    Deterministic for a fixed (seed, model, config).
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1)
    tgt = np.asarray(target, dtype=np.float64).reshape(-1)
    if src.shape != tgt.shape:
        raise InvalidDimensionError("source and target dimensions differ")
    rng = SeededRng(config.seed)
    traj = AttackTrajectory()
    theta = config.theta if config.theta is not None else 1.0 / (projection.m * math.sqrt(projection.m))
    delta_scale = config.delta_scale if config.delta_scale is not None else 1.0 / projection.m
    base_count = oracle.query_count

    def remaining() -> int:
        return config.max_queries - (oracle.query_count - base_count)

    try:
        if config.validate_endpoints:
            if remaining() < 2:
                raise BudgetExhaustedError("budget too small to validate endpoints", oracle.query_count)
            s_src = oracle.decide(src)
            s_tgt = oracle.decide(tgt)
            traj.setup_queries = 2
            if s_src != 1 or s_tgt != -1:
                raise InvalidEndpointsError(
                    f"need sign(source)=+1 and sign(target)=-1, got {s_src} and {s_tgt}"
                )

        x_hat = src
        t = 0
        while True:
            t += 1
            if config.max_iterations is not None and t > config.max_iterations:
                break
            # Start an iteration only if its minimum footprint fits the budget,
            # so completed trajectories decompose exactly into per-phase counts.
            needed = bsearch_query_count(theta) + config.num_samples + 1
            if remaining() < needed:
                traj.exhausted = True
                break

            x_t, bq = binary_search_boundary(oracle, x_hat, tgt, theta)
            dist = l2(x_t - tgt)
            if dist == 0.0:
                traj.records.append(
                    IterationRecord(
                        iteration=t,
                        mse_boundary=0.0,
                        step_size=0.0,
                        cumulative_queries=oracle.query_count - base_count,
                        bsearch_queries=bq,
                        estimate_queries=0,
                        step_queries=0,
                        stalled=True,
                    )
                )
                traj.boundary_points.append(x_t)
                traj.stepped_points.append(x_t)
                break
            delta_t = delta_scale * dist

            try:
                report = estimate_gradient(
                    oracle, x_t, projection, delta_t, config.num_samples, rng.child(1, t)
                )
            except PartialEstimateError:
                traj.exhausted = True
                break

            cos_true = None
            if model is not None:
                grad, _ = true_gradient(model, spec, x_t)
                if l2(grad) > 0 and l2(report.estimate) > 0:
                    cos_true = cosine_similarity(report.estimate, grad)

            est_norm = l2(report.estimate)
            if est_norm == 0.0:
                x_hat, step, sq, stalled = x_t, 0.0, 0, True
            else:
                x_hat, step, sq, stalled = geometric_step_search(
                    oracle, x_t, report.estimate / est_norm, t, dist
                )

            traj.records.append(
                IterationRecord(
                    iteration=t,
                    mse_boundary=mse(x_t, tgt),
                    step_size=step,
                    cumulative_queries=oracle.query_count - base_count,
                    bsearch_queries=bq,
                    estimate_queries=report.queries_used,
                    step_queries=sq,
                    stalled=stalled,
                    dist_boundary=dist,
                    dist_after_step=l2(x_hat - tgt),
                    cosine_vs_true=cos_true,
                )
            )
            traj.boundary_points.append(x_t)
            traj.stepped_points.append(x_hat)
            traj.final_point = x_t
            if config.success_mse is not None and mse(x_t, tgt) <= config.success_mse:
                break
    except BudgetExhaustedError:
        traj.exhausted = True

    traj.total_queries = oracle.query_count - base_count
    # Any residue not captured in completed iterations is a partial tail.
    traj.partial_queries = traj.total_queries - (
        traj.setup_queries
        + sum(r.bsearch_queries + r.estimate_queries + r.step_queries for r in traj.records)
    )
    return traj


@dataclass
class ScaleSearchRow:
    scale: int
    latent_dim: int
    avg_final_mse: float
    queries: int
    bsearch_queries: int
    estimate_queries: int
    step_queries: int


@dataclass
class ScaleSearchResult:
    chosen_scale: int
    table: list[ScaleSearchRow]


def find_optimal_scale(
    oracle_factory,
    pairs: list[tuple[np.ndarray, np.ndarray]],
    schedule: ScaleSchedule,
    num_samples: int = 100,
    num_steps: int = 10,
    seed: int = 0,
    spec: AttackSpec | None = None,
) -> ScaleSearchResult:
    """Hill-climb the scale schedule with short validation attacks.

    For each scale in increasing order, run a ``num_steps``-iteration attack
    with B = ``num_samples`` on every validation pair and average the final
    MSE. While the average keeps improving (non-strict), move to the next
    scale; on the first regression return the previous scale; if the last
    scale still improves, return it.

    ``oracle_factory()`` must return a fresh oracle per run so per-scale
    query accounting stays exact. Pairs whose endpoints do not straddle the
    boundary are skipped with a warning; if none survive,
    :class:`NoValidPairsError` is raised. Endpoint validation uses its own
    oracle and is not charged to any scale.
    """
    valid_pairs = []
    probe = oracle_factory()
    for i, (src, tgt) in enumerate(pairs):
        try:
            ok = probe.decide(src) == 1 and probe.decide(tgt) == -1
        except BudgetExhaustedError:
            ok = False
        if ok:
            valid_pairs.append((src, tgt))
        else:
            logger.warning("scale search: pair %d violates attack preconditions, skipped", i)
    if not valid_pairs:
        raise NoValidPairsError("no validation pair satisfies the attack preconditions")

    chosen = schedule.entries[0][0]
    lowest = math.inf
    table: list[ScaleSearchRow] = []
    for scale_idx, (label, projection) in enumerate(schedule):
        total = {"q": 0, "b": 0, "e": 0, "s": 0}
        final_mses = []
        for pair_idx, (src, tgt) in enumerate(valid_pairs):
            oracle = oracle_factory()
            config = AttackConfig(
                num_samples=num_samples,
                max_queries=10**9,  # bounded by the iteration cap, not the meter
                seed=_derived_seed(seed, scale_idx, pair_idx),
                max_iterations=num_steps,
                validate_endpoints=False,
            )
            traj = run_attack(
                oracle,
                spec if spec is not None else AttackSpec("untargeted", 0),
                src,
                tgt,
                projection,
                config,
            )
            final_mses.append(traj.final_mse if traj.final_mse is not None else mse(src, tgt))
            total["q"] += traj.total_queries
            total["b"] += sum(r.bsearch_queries for r in traj.records)
            total["e"] += sum(r.estimate_queries for r in traj.records)
            total["s"] += sum(r.step_queries for r in traj.records)
        current = float(np.mean(final_mses))
        table.append(
            ScaleSearchRow(
                scale=label,
                latent_dim=projection.m,
                avg_final_mse=current,
                queries=total["q"],
                bsearch_queries=total["b"],
                estimate_queries=total["e"],
                step_queries=total["s"],
            )
        )
        if current <= lowest:
            lowest = current
            chosen = label
        else:
            return ScaleSearchResult(chosen_scale=chosen, table=table)
    return ScaleSearchResult(chosen_scale=chosen, table=table)


def _derived_seed(seed: int, scale_idx: int, pair_idx: int) -> int:
    # Independent derived stream per (scale, pair); fixed derivation rule.
    return int(np.random.SeedSequence([seed, scale_idx, pair_idx]).generate_state(1, np.uint32)[0])


def synthesize_adversarial_source(
    model: Classifier,
    spec: AttackSpec,
    target: np.ndarray,
    rng: SeededRng,
    max_directions: int = 50,
    max_doublings: int = 60,
) -> np.ndarray:
    """Harness helper: walk outward from the target along random directions,
    doubling the radius until the sign flips to adversarial.

    Whitebox (uses the model's sign directly) and unmetered; this is test and
    experiment setup, not part of the attack's query budget.
    """
    from .models import sign as model_sign

    tgt = np.asarray(target, dtype=np.float64).reshape(-1)
    base = max(l2(tgt), 1.0)
    for d in range(max_directions):
        direction = rng.child(9, d).standard_normal(tgt.size)
        direction /= l2(direction)
        radius = 0.5 * base
        for _ in range(max_doublings):
            candidate = tgt + radius * direction
            if model_sign(model, spec, candidate) == 1:
                return candidate
            radius *= 2.0
    raise InvalidEndpointsError("could not synthesize an adversarial start")


def success_rate(
    trajectories: list[AttackTrajectory], mse_threshold: float, query_cap: int
) -> float:
    """Fraction of runs reaching mse <= threshold within the query cap."""
    if mse_threshold <= 0:
        raise InvalidDimensionError("mse threshold must be positive")
    if not trajectories:
        raise InvalidDimensionError("no trajectories given")
    hits = 0
    for traj in trajectories:
        best = traj.mse_at_cap(query_cap)
        if best is not None and best <= mse_threshold:
            hits += 1
    return hits / len(trajectories)


# ---------------------------------------------------------------------------
# Export formats. Floats are written with repr() so files round-trip the
# exact 64-bit values and byte-compare across equivalent runs.
# ---------------------------------------------------------------------------

CSV_HEADER = "iter,queries,mse,step,cosine"


def trajectory_to_csv(traj: AttackTrajectory) -> str:
    lines = [CSV_HEADER]
    for r in traj.records:
        cos = "" if r.cosine_vs_true is None else repr(r.cosine_vs_true)
        lines.append(f"{r.iteration},{r.cumulative_queries},{r.mse_boundary!r},{r.step_size!r},{cos}")
    return "\n".join(lines) + "\n"


def trajectory_summary(
    traj: AttackTrajectory, mse_thresholds: list[float] = (), query_cap: int | None = None
) -> dict:
    cap = query_cap if query_cap is not None else traj.total_queries
    best = traj.mse_at_cap(cap)
    return {
        "iterations": len(traj.records),
        "total_queries": traj.total_queries,
        "setup_queries": traj.setup_queries,
        "partial_queries": traj.partial_queries,
        "final_mse": traj.final_mse,
        "exhausted": traj.exhausted,
        "success": {repr(th): best is not None and best <= th for th in mse_thresholds},
    }


def summary_to_json(traj: AttackTrajectory, **kwargs) -> str:
    return json.dumps(trajectory_summary(traj, **kwargs), indent=2, sort_keys=True)
