"""Bucket-and-ball models of set-associative evictions in a randomized cache.

Balls are cache lines, buckets are tag sets; a bucket spill (a bucket holding more than its
capacity) is the analogue of a set-associative eviction. Evaluators return expected counts or
probabilities; the Monte Carlo simulator cross-checks them.

Occupancy rate is ``lam = balls / buckets`` throughout (mean balls per bucket).
"""

import logging
import math
import random
from collections.abc import Iterable
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from pydantic import Field
from scipy import stats

from .core import FrozenModel, Probability
from .errors import ArgumentError
from .utils import write_csv

logger = logging.getLogger(__name__)

LAMBDA_CONVENTION = "lambda=balls/buckets"
SWEEP_HEADER = ("B", "buckets", "threshold", "load_balanced", "seed", "throws_until_first_spill")


class BucketBallParams(FrozenModel):
    """
    >>> BucketBallParams(balls=131072, buckets=32768, base_state=8, extra=6).lam
    4.0
    """

    balls: int = Field(ge=0)
    buckets: int = Field(ge=1)
    base_state: int = Field(default=0, ge=0)
    extra: int = Field(default=1, ge=1)

    @property
    def lam(self) -> float:
        return self.balls / self.buckets


class OccupancyForm(str, Enum):
    BINOMIAL_EXACT = "binomial_exact"
    POISSON = "poisson"


class SpillStats(FrozenModel):
    throws: int
    throws_until_first_spill: Optional[int] = None
    spill_count: int = 0
    first_reach: dict[int, int] = Field(default_factory=dict)
    load_histogram: dict[int, int] = Field(default_factory=dict)

    @property
    def max_load(self) -> int:
        return max(self.first_reach, default=0)


def spill_prob_birth_death(p_n: float, params: BucketBallParams) -> float:
    """
    One birth-death step: ``Pr(n = N+1) = B / (buckets * (N+1)) * Pr(n = N)**2``, clamped to [0, 1].

    >>> spill_prob_birth_death(1.0, BucketBallParams(balls=16, buckets=16, base_state=0))
    1.0
    >>> spill_prob_birth_death(0.0, BucketBallParams(balls=16, buckets=16, base_state=5))
    0.0
    """
    if not 0.0 <= p_n <= 1.0:
        raise ArgumentError(f"p_n must be a probability, got {p_n}")
    value = params.lam / (params.base_state + 1) * p_n * p_n
    return float(Probability.clamp(value))


def spill_prob_iterated(params: BucketBallParams, start_state: int, steps: int) -> float:
    """Chain the birth-death step ``steps`` times from ``Pr(n = start_state) = 1``."""
    if steps < 0:
        raise ArgumentError("steps must be non-negative")
    p = 1.0
    for n in range(start_state, start_state + steps):
        p = spill_prob_birth_death(p, params.model_copy(update={"base_state": n}))
    return p


def any_bucket_exact_prob(
    occupancy_target: int, params: BucketBallParams, method: OccupancyForm = OccupancyForm.BINOMIAL_EXACT
) -> float:
    """
    Expected number of buckets holding exactly ``occupancy_target`` balls.

    >>> round(any_bucket_exact_prob(0, BucketBallParams(balls=0, buckets=10), OccupancyForm.POISSON), 6)
    10.0
    """
    if occupancy_target < 0 or occupancy_target > params.balls:
        raise ArgumentError(f"occupancy target {occupancy_target} outside 0..{params.balls}")
    lam = params.lam
    if method is OccupancyForm.POISSON:
        log_p = float(stats.poisson.logpmf(occupancy_target, lam))
    else:
        log_p = float(stats.binom.logpmf(occupancy_target, params.balls, 1.0 / params.buckets))
    return params.buckets * math.exp(log_p) if log_p > -math.inf else 0.0


def birthday_rule_of_thumb(index_bits_total: int) -> int:
    """
    >>> birthday_rule_of_thumb(28)
    16384
    """
    return round(2 ** (index_bits_total / 2))


def birthday_accesses(index_bits_total: int, target_prob: float = 0.5) -> int:
    """
    Closed-form draw count after which a repeated ``index_bits_total``-bit value has probability ``target_prob``.

    >>> birthday_accesses(28, 0.5)
    19291
    >>> birthday_accesses(2, 0.5)
    3
    """
    if not 0.0 < target_prob < 1.0:
        raise ArgumentError(f"target probability must lie strictly between 0 and 1, got {target_prob}")
    return math.ceil(math.sqrt(2.0 * 2.0**index_bits_total * math.log(1.0 / (1.0 - target_prob))))


def birthday_accesses_exact(index_bits_total: int, target_prob: float = 0.5) -> int:
    """
    Smallest draw count whose exact collision probability reaches ``target_prob``.

    >>> birthday_accesses_exact(2, 0.5)
    3
    """
    if not 0.0 < target_prob < 1.0:
        raise ArgumentError(f"target probability must lie strictly between 0 and 1, got {target_prob}")
    values = 2**index_bits_total
    log_distinct = 0.0
    draws = 0
    while -math.expm1(log_distinct) < target_prob:
        log_distinct += math.log1p(-draws / values) if draws < values else -math.inf
        draws += 1
    return draws


def expected_first_collision(buckets: int) -> float:
    """
    Expected throw at which some bucket first holds two balls (single uniform choice).

    >>> round(expected_first_collision(1), 6)
    2.0
    >>> round(expected_first_collision(2), 6)
    2.5
    """
    if buckets < 1:
        raise ArgumentError("bucket count must be positive")
    total = 0.0
    distinct = 1.0
    for k in range(buckets + 1):
        total += distinct
        distinct *= 1.0 - k / buckets
    return total


def first_collision_monte_carlo(index_bits_total: int, trials: int, seed: int) -> list[int]:
    """Draw number of the first repeated value, one per trial."""
    rng = random.Random(seed)
    values = 2**index_bits_total
    counts = []
    for _ in range(trials):
        seen: set[int] = set()
        draw = rng.randrange(values)
        while draw not in seen:
            seen.add(draw)
            draw = rng.randrange(values)
        counts.append(len(seen) + 1)
    return counts


class MWayRequirement(FrozenModel):
    required_transition: str
    base_state: int
    target_state: int
    collision_depth: int
    pairwise_bits: int
    expected_buckets: float
    note: str


def m_way_requirement(params: BucketBallParams, index_bits: int = 14) -> MWayRequirement:
    """
    What a set-associative eviction takes: both sibling sets must fill their ``m`` extra ways.

    >>> r = m_way_requirement(BucketBallParams(balls=131072, buckets=32768, base_state=8, extra=6))
    >>> r.required_transition, r.collision_depth, r.pairwise_bits
    ('8->14', 12, 28)
    """
    target = params.base_state + params.extra
    expected = any_bucket_exact_prob(target, params) if target <= params.balls else 0.0
    return MWayRequirement(
        required_transition=f"{params.base_state}->{target}",
        base_state=params.base_state,
        target_state=target,
        collision_depth=2 * params.extra,
        pairwise_bits=2 * index_bits,
        expected_buckets=expected,
        note=(
            f"an eviction needs {2 * params.extra} further lines on one {2 * index_bits}-bit sibling pair, "
            f"taking a set from {params.base_state} to {target} valid tags; "
            "expected_buckets evaluates single-choice placement and bounds load-balanced placement from above"
        ),
    )


def bucket_ball_simulate(
    params: BucketBallParams,
    load_balanced: bool,
    spill_threshold: int,
    max_throws: int,
    seed: int,
    stop_at_first_spill: bool = True,
) -> SpillStats:
    """
    Throw balls one at a time into a pair of uniform buckets, keeping at most ``params.balls`` resident.

    Once ``params.balls`` balls are resident each throw first removes a uniformly random one.

    >>> bucket_ball_simulate(BucketBallParams(balls=10, buckets=1), False, 3, 100, seed=0).throws_until_first_spill
    3
    """
    if max_throws <= 0:
        raise ArgumentError("max_throws must be positive")
    if spill_threshold < 1:
        raise ArgumentError("spill_threshold must be at least 1")
    if params.balls < 1:
        raise ArgumentError("simulation needs at least one resident ball")
    rng = random.Random(seed)
    buckets = params.buckets
    loads = [0] * buckets
    resident: list[int] = []
    first_reach: dict[int, int] = {}
    first_spill: Optional[int] = None
    spills = 0
    top = 0
    throws = 0
    for throw in range(1, max_throws + 1):
        throws = throw
        if len(resident) >= params.balls:
            pick = rng.randrange(len(resident))
            resident[pick], resident[-1] = resident[-1], resident[pick]
            loads[resident.pop()] -= 1
        a = rng.randrange(buckets)
        b = rng.randrange(buckets)
        if load_balanced and loads[b] < loads[a]:
            chosen = b
        elif load_balanced and loads[a] == loads[b]:
            chosen = b if rng.getrandbits(1) else a
        else:
            chosen = a
        loads[chosen] += 1
        resident.append(chosen)
        level = loads[chosen]
        if level > top:
            top = level
            first_reach[level] = throw
        if level == spill_threshold:
            spills += 1
            if first_spill is None:
                first_spill = throw
                logger.debug("first spill at throw %d", throw)
            if stop_at_first_spill:
                break
    histogram: dict[int, int] = {}
    for load in loads:
        histogram[load] = histogram.get(load, 0) + 1
    return SpillStats(
        throws=throws,
        throws_until_first_spill=first_spill,
        spill_count=spills,
        first_reach=first_reach,
        load_histogram=dict(sorted(histogram.items())),
    )


class SweepRow(FrozenModel):
    balls: int
    buckets: int
    threshold: int
    load_balanced: bool
    seed: int
    throws_until_first_spill: Optional[int]

    def csv_row(self) -> tuple[int, int, int, bool, int, Optional[int]]:
        return (self.balls, self.buckets, self.threshold, self.load_balanced, self.seed, self.throws_until_first_spill)


def bucket_ball_sweep(
    balls: Iterable[int],
    buckets: int,
    threshold: int,
    load_balanced: bool,
    seeds: Iterable[int],
    max_throws: int,
) -> list[SweepRow]:
    rows = []
    seed_list = list(seeds)
    for b in balls:
        params = BucketBallParams(balls=b, buckets=buckets)
        for seed in seed_list:
            result = bucket_ball_simulate(params, load_balanced, threshold, max_throws, seed)
            rows.append(
                SweepRow(
                    balls=b,
                    buckets=buckets,
                    threshold=threshold,
                    load_balanced=load_balanced,
                    seed=seed,
                    throws_until_first_spill=result.throws_until_first_spill,
                )
            )
    return rows


def write_sweep(path: Union[str, Path], rows: Iterable[SweepRow], comment: Optional[str] = None) -> Path:
    return write_csv(path, SWEEP_HEADER, (row.csv_row() for row in rows), comment=comment)
