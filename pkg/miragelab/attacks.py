"""Cache-occupancy attacks on a simulated cache.

A receiver primes the cache with its own lines, a sender (or an unknown victim) runs a number
of accesses to a disjoint address range, and the receiver re-accesses its lines counting misses.
The miss count carries a covert-channel bit or, matched against per-workload templates, identifies
the victim's footprint.

Every trial owns a fresh cache whose random stream comes from a seed derived from the master seed
and the trial's position in the experiment, so trials may run in any order or in parallel.
"""

import logging
import math
import random
from collections import Counter
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from itertools import chain
from multiprocessing import get_context
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import Field, model_validator
from scipy import stats
from scipy.special import softmax

from .core import FrozenModel
from .errors import ArgumentError, TemplateStoreError
from .mirage_sim import HIT, BaselineCache, BaselineConfig, CacheModel, MirageCache, MirageConfig
from .rand_cipher import CipherAlgorithm, random_key_pair
from .utils import derive_seed, read_csv, write_csv

logger = logging.getLogger(__name__)

TEMPLATE_STORE_HEADER = ("victim_accesses", "trial", "miss_count")
TEMPLATE_SUMMARY_HEADER = ("victim_accesses", "trials", "mean", "stddev")
COVERT_HEADER = ("trial", "bit_sent", "miss_count", "bit_decoded")


class CacheKind(str, Enum):
    MIRAGE = "mirage"
    BASELINE = "baseline"


class PrimeConfig(FrozenModel):
    prime_count: int = Field(default=10_000, ge=1)
    address_stride: int = Field(default=1_000, ge=1)
    base_address: int = Field(default=0x1000_0000, ge=0)
    settle_passes: int = Field(default=0, ge=0)
    """Unmeasured re-access passes over the prime set before the victim runs, so self-evicted lines return."""

    def lines(self) -> range:
        return range(self.base_address, self.base_address + self.address_stride * self.prime_count, self.address_stride)


class CovertSymbol(FrozenModel):
    bit: int = Field(default=0, ge=0, le=1)
    low_accesses: int = Field(default=1_000, ge=0)
    high_accesses: int = Field(default=4_000, ge=1)

    @model_validator(mode="after")
    def _ordered(self) -> "CovertSymbol":
        if self.low_accesses >= self.high_accesses:
            raise ValueError("low_accesses must be below high_accesses")
        return self

    @property
    def accesses(self) -> int:
        return self.high_accesses if self.bit else self.low_accesses


class AttackSetup(FrozenModel):
    cache: MirageConfig
    prime: PrimeConfig = PrimeConfig()
    symbol: CovertSymbol = CovertSymbol()
    sender_base_address: int = Field(default=0x4000_0000, ge=0)
    sender_stride: int = Field(default=1_000, ge=1)
    calibration_trials: int = Field(default=30, ge=1)
    baseline: BaselineConfig = BaselineConfig()
    jobs: int = Field(default=1, ge=1)

    def sender_lines(self, accesses: int) -> range:
        end = self.sender_base_address + self.sender_stride * accesses
        return range(self.sender_base_address, end, self.sender_stride)


class PrimeReport(FrozenModel):
    self_evictions: int
    resident: int


class VictimReport(FrozenModel):
    total: int = 0
    receiver_owned: int = 0
    sender_owned: int = 0
    other: int = 0


class TrialRecord(FrozenModel):
    trial: int
    seed: int
    victim_accesses: int
    miss_count: int = Field(ge=0)
    bit_sent: Optional[int] = None
    decoded_bit: Optional[int] = None
    classified_label: Optional[int] = None
    prime_count: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _misses_within_prime(self) -> "TrialRecord":
        if self.prime_count is not None and self.miss_count > self.prime_count:
            raise ValueError(f"{self.miss_count} misses from a {self.prime_count}-line prime")
        return self


class Template(FrozenModel):
    victim_accesses: int
    trials: int
    miss_histogram: dict[int, int]
    mean: float
    stddev: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _mass_matches(self) -> "Template":
        if sum(self.miss_histogram.values()) != self.trials:
            raise ValueError("histogram mass must equal the trial count")
        return self

    @classmethod
    def from_misses(cls, victim_accesses: int, misses: Sequence[int]) -> "Template":
        """
        >>> t = Template.from_misses(1000, [440, 450, 460])
        >>> t.mean, t.stddev, t.miss_histogram[450]
        (450.0, 10.0, 1)
        """
        if len(misses) < 2:
            raise ArgumentError("a template needs at least two trials")
        return cls(
            victim_accesses=victim_accesses,
            trials=len(misses),
            miss_histogram=dict(sorted(Counter(misses).items())),
            mean=float(np.mean(misses)),
            stddev=float(np.std(misses, ddof=1)),
        )


class Classification(FrozenModel):
    label: int
    confidence: float


class TrialTask(FrozenModel):
    victim_accesses: int
    seed: int
    kind: CacheKind = CacheKind.MIRAGE
    prime: Optional[PrimeConfig] = None


class TrialOutcome(FrozenModel):
    task: TrialTask
    prime: PrimeReport
    victim: VictimReport
    miss_count: int


def _build_cache(setup: AttackSetup, seed: int, kind: CacheKind) -> CacheModel:
    if kind is CacheKind.BASELINE:
        return BaselineCache(setup.baseline)
    return MirageCache(setup.cache.model_copy(update={"rng_seed": seed}))


def prime(cache: CacheModel, cfg: PrimeConfig) -> PrimeReport:
    """Install the receiver's lines, then re-access them ``settle_passes`` times unmeasured."""
    if cfg.prime_count > cache.capacity:
        raise ArgumentError(f"prime of {cfg.prime_count} lines exceeds the {cache.capacity}-line data store")
    if cache.occupancy() != 0:
        raise ArgumentError("prime expects a freshly reset cache")
    lines = cfg.lines()
    self_evictions = 0
    for _ in range(1 + cfg.settle_passes):
        for line in lines:
            evicted = cache.touch(line)
            if evicted >= 0 and evicted in lines:
                self_evictions += 1
    resident = sum(1 for line in lines if cache.lookup(line))
    return PrimeReport(self_evictions=self_evictions, resident=resident)


def victim_run(
    cache: CacheModel,
    accesses: int,
    stride: int,
    base_address: int,
    receiver: PrimeConfig,
) -> VictimReport:
    """Install ``accesses`` distinct victim lines and attribute every line they displace."""
    if accesses < 0:
        raise ArgumentError("accesses must be non-negative")
    if stride < 1:
        raise ArgumentError("stride must be at least 1")
    own = range(base_address, base_address + stride * accesses, stride)
    theirs = receiver.lines()
    if any(line in theirs for line in own):
        raise ArgumentError("victim addresses overlap the primed range")
    receiver_owned = sender_owned = other = 0
    for line in own:
        evicted = cache.touch(line)
        if evicted < 0:
            continue
        if evicted in theirs:
            receiver_owned += 1
        elif evicted in own:
            sender_owned += 1
        else:
            other += 1
    return VictimReport(
        total=receiver_owned + sender_owned + other,
        receiver_owned=receiver_owned,
        sender_owned=sender_owned,
        other=other,
    )


def probe(cache: CacheModel, cfg: PrimeConfig) -> int:
    """Re-access the primed lines in order; misses re-install through the normal path."""
    return sum(1 for line in cfg.lines() if cache.touch(line) != HIT)


def occupancy_trial(setup: AttackSetup, task: TrialTask) -> TrialOutcome:
    """One reset, prime, victim, probe round on a fresh cache."""
    cache = _build_cache(setup, task.seed, task.kind)
    prime_cfg = task.prime or setup.prime
    if isinstance(cache, MirageCache):
        cache.warm(chain(prime_cfg.lines(), setup.sender_lines(task.victim_accesses)))
    prime_report = prime(cache, prime_cfg)
    victim = victim_run(cache, task.victim_accesses, setup.sender_stride, setup.sender_base_address, prime_cfg)
    misses = probe(cache, prime_cfg)
    logger.debug("trial seed=%d accesses=%d misses=%d", task.seed, task.victim_accesses, misses)
    return TrialOutcome(task=task, prime=prime_report, victim=victim, miss_count=misses)


def _run_one(args: tuple[AttackSetup, TrialTask]) -> TrialOutcome:
    return occupancy_trial(*args)


def run_trials(setup: AttackSetup, tasks: Sequence[TrialTask], jobs: Optional[int] = None) -> list[TrialOutcome]:
    """Run trials serially or in a process pool; results always come back in task order."""
    workers = setup.jobs if jobs is None else jobs
    if workers <= 1 or len(tasks) < 2:
        return [occupancy_trial(setup, task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
        chunksize = max(1, len(tasks) // (4 * workers))
        return list(pool.map(_run_one, [(setup, task) for task in tasks], chunksize=chunksize))


class Calibration(FrozenModel):
    low_mean: float
    high_mean: float
    threshold: float


def calibrate_threshold(setup: AttackSetup, seed: int) -> Calibration:
    """Decision threshold halfway between the mean miss counts of the two symbols."""
    tasks = [
        TrialTask(victim_accesses=accesses, seed=derive_seed(seed, "calibrate", bit, i))
        for bit, accesses in enumerate((setup.symbol.low_accesses, setup.symbol.high_accesses))
        for i in range(setup.calibration_trials)
    ]
    outcomes = run_trials(setup, tasks)
    n = setup.calibration_trials
    low = float(np.mean([o.miss_count for o in outcomes[:n]]))
    high = float(np.mean([o.miss_count for o in outcomes[n:]]))
    logger.info("calibrated symbol means %.1f / %.1f", low, high)
    return Calibration(low_mean=low, high_mean=high, threshold=(low + high) / 2.0)


class CovertReport(FrozenModel):
    ber: float
    calibration: Calibration
    records: list[TrialRecord]

    def symbol_means(self) -> tuple[float, float]:
        means = []
        for bit in (0, 1):
            counts = [r.miss_count for r in self.records if r.bit_sent == bit]
            means.append(float(np.mean(counts)) if counts else math.nan)
        return means[0], means[1]


def random_bits(count: int, seed: int) -> list[int]:
    rng = random.Random(derive_seed(seed, "bits"))
    return [rng.getrandbits(1) for _ in range(count)]


def covert_transmit(
    bits: Sequence[int],
    setup: AttackSetup,
    seed: int,
    calibration: Optional[Calibration] = None,
) -> CovertReport:
    """Send each bit through one prime/send/probe round and decode it against the threshold."""
    if not bits:
        raise ArgumentError("nothing to transmit")
    if any(bit not in (0, 1) for bit in bits):
        raise ArgumentError("bits must be 0 or 1")
    calibration = calibration or calibrate_threshold(setup, seed)
    accesses = (setup.symbol.low_accesses, setup.symbol.high_accesses)
    tasks = [
        TrialTask(victim_accesses=accesses[bit], seed=derive_seed(seed, "covert", i)) for i, bit in enumerate(bits)
    ]
    records = []
    errors = 0
    for i, (bit, outcome) in enumerate(zip(bits, run_trials(setup, tasks))):
        decoded = int(outcome.miss_count > calibration.threshold)
        errors += decoded != bit
        records.append(
            TrialRecord(
                trial=i,
                seed=outcome.task.seed,
                victim_accesses=outcome.task.victim_accesses,
                miss_count=outcome.miss_count,
                bit_sent=bit,
                decoded_bit=decoded,
                prime_count=setup.prime.prime_count,
            )
        )
    ber = errors / len(bits)
    logger.info("sent %d bits, bit-error rate %.4f", len(bits), ber)
    return CovertReport(ber=ber, calibration=calibration, records=records)


def template_records(
    setup: AttackSetup, access_counts: Sequence[int], trials_per_template: int, seed: int, label: str = "template"
) -> list[TrialRecord]:
    if not access_counts:
        raise ArgumentError("no access counts to profile")
    if trials_per_template < 2:
        raise ArgumentError("a template needs at least two trials")
    tasks = [
        TrialTask(victim_accesses=count, seed=derive_seed(seed, label, count, trial))
        for count in access_counts
        for trial in range(trials_per_template)
    ]
    return [
        TrialRecord(
            trial=i % trials_per_template,
            seed=o.task.seed,
            victim_accesses=o.task.victim_accesses,
            miss_count=o.miss_count,
            prime_count=(o.task.prime or setup.prime).prime_count,
        )
        for i, o in enumerate(run_trials(setup, tasks))
    ]


def templates_from_records(records: Iterable[TrialRecord]) -> list[Template]:
    grouped: dict[int, list[int]] = {}
    for record in records:
        grouped.setdefault(record.victim_accesses, []).append(record.miss_count)
    return [Template.from_misses(count, misses) for count, misses in sorted(grouped.items())]


def build_templates(
    setup: AttackSetup, access_counts: Sequence[int], trials_per_template: int, seed: int
) -> list[Template]:
    templates = templates_from_records(template_records(setup, access_counts, trials_per_template, seed))
    logger.info("built %d templates", len(templates))
    return templates


def classify(observed_miss_count: float, templates: Sequence[Template]) -> Classification:
    """
    Maximum-likelihood label under a normal model per template, with its posterior under a uniform prior.

    >>> ts = [Template.from_misses(1000, [440, 460]), Template.from_misses(2000, [540, 560])]
    >>> classify(452, ts).label
    1000
    >>> classify(548, ts).confidence > 0.99
    True
    """
    if len(templates) < 2:
        raise ArgumentError("classification needs at least two templates")
    means = np.array([t.mean for t in templates])
    deviations = np.array([t.stddev for t in templates])
    if np.any(deviations == 0.0):
        logger.warning("degenerate template deviation, classifying by nearest mean")
        distances = np.abs(means - observed_miss_count)
        winner = int(np.argmin(distances))
        ties = int(np.sum(distances == distances[winner]))
        return Classification(label=templates[winner].victim_accesses, confidence=1.0 / ties)
    log_likelihood = stats.norm.logpdf(observed_miss_count, loc=means, scale=deviations)
    posterior = softmax(log_likelihood)
    winner = int(np.argmax(log_likelihood))
    return Classification(label=templates[winner].victim_accesses, confidence=float(posterior[winner]))


def classification_accuracy(templates: Sequence[Template], observations: Iterable[TrialRecord]) -> float:
    """Fraction of observations whose classified label is their true victim access count."""
    total = correct = 0
    for record in observations:
        total += 1
        correct += classify(record.miss_count, templates).label == record.victim_accesses
    if total == 0:
        raise ArgumentError("no observations to classify")
    return correct / total


def observe(setup: AttackSetup, labels: Sequence[int], trials_per_label: int, seed: int) -> list[TrialRecord]:
    """Fresh miss-count observations of known victims, independent of any template build."""
    return template_records(setup, labels, max(2, trials_per_label), seed, label="observe")


class RekeyingReport(FrozenModel):
    same_key: float
    different_key: float
    prince: float

    @property
    def worst_drop(self) -> float:
        return max(self.same_key - self.different_key, self.same_key - self.prince)


def rekeying_experiment(
    setup: AttackSetup,
    access_counts: Sequence[int],
    trials_per_template: int,
    observations_per_label: int,
    seed: int,
) -> RekeyingReport:
    """Classify observations taken under fresh keys (and under PRINCE) with templates built under the original keys."""
    templates = build_templates(setup, access_counts, trials_per_template, seed)
    rng = random.Random(derive_seed(seed, "rekey"))
    fresh = random_key_pair(setup.cache.keys.algorithm, rng)
    prince = random_key_pair(CipherAlgorithm.PRINCE128, rng)
    accuracies = {}
    for name, keys in (("same_key", setup.cache.keys), ("different_key", fresh), ("prince", prince)):
        variant = setup.model_copy(update={"cache": setup.cache.model_copy(update={"keys": keys})})
        observations = observe(variant, access_counts, observations_per_label, derive_seed(seed, name))
        accuracies[name] = classification_accuracy(templates, observations)
        logger.info("%s accuracy %.4f", name, accuracies[name])
    return RekeyingReport(**accuracies)


def separability(low: Sequence[float], high: Sequence[float]) -> float:
    """
    Difference of means over the pooled (population) standard deviation.

    >>> separability([1, 1], [1, 1])
    0.0
    >>> separability([0, 0], [5, 5])
    inf
    >>> separability([0, 2], [4, 6])
    4.0
    """
    mean_low, mean_high = float(np.mean(low)), float(np.mean(high))
    pooled = math.sqrt((float(np.var(low)) + float(np.var(high))) / 2.0)
    if pooled == 0.0:
        return 0.0 if mean_low == mean_high else math.inf
    return (mean_high - mean_low) / pooled


class SymbolContrast(FrozenModel):
    kind: CacheKind
    low_misses: list[int]
    high_misses: list[int]
    separability: float

    @property
    def low_mean(self) -> float:
        return float(np.mean(self.low_misses))

    @property
    def high_mean(self) -> float:
        return float(np.mean(self.high_misses))


class BaselineReport(FrozenModel):
    mirage: SymbolContrast
    baseline: SymbolContrast


def symbol_contrast(
    setup: AttackSetup,
    kind: CacheKind,
    trials: int,
    seed: int,
    prime_cfg: Optional[PrimeConfig] = None,
    sender_enabled: bool = True,
) -> SymbolContrast:
    """Miss counts of both symbols over paired trial seeds."""
    low_accesses = setup.symbol.low_accesses if sender_enabled else 0
    high_accesses = setup.symbol.high_accesses if sender_enabled else 0
    tasks = []
    for i in range(trials):
        trial_seed = derive_seed(seed, kind.value, i)
        tasks.append(TrialTask(victim_accesses=low_accesses, seed=trial_seed, kind=kind, prime=prime_cfg))
        tasks.append(TrialTask(victim_accesses=high_accesses, seed=trial_seed, kind=kind, prime=prime_cfg))
    outcomes = run_trials(setup, tasks)
    low = [o.miss_count for o in outcomes[0::2]]
    high = [o.miss_count for o in outcomes[1::2]]
    return SymbolContrast(kind=kind, low_misses=low, high_misses=high, separability=separability(low, high))


def baseline_comparison(
    setup: AttackSetup,
    trials: int,
    seed: int,
    baseline_prime: Optional[PrimeConfig] = None,
    sender_enabled: bool = True,
) -> BaselineReport:
    """The covert-channel contrast on MIRAGE next to the classical set-associative baseline."""
    report = BaselineReport(
        mirage=symbol_contrast(setup, CacheKind.MIRAGE, trials, seed, sender_enabled=sender_enabled),
        baseline=symbol_contrast(setup, CacheKind.BASELINE, trials, seed, baseline_prime, sender_enabled),
    )
    logger.info(
        "separability mirage=%.3f baseline=%.3f", report.mirage.separability, report.baseline.separability
    )
    return report


def large_baseline_prime(setup: AttackSetup, fraction: float = 0.95) -> PrimeConfig:
    """A stride-1 prime covering ``fraction`` of the baseline capacity."""
    if not 0.0 < fraction <= 1.0:
        raise ArgumentError("fraction must lie in (0, 1]")
    return PrimeConfig(prime_count=int(fraction * setup.baseline.capacity), address_stride=1, base_address=0)


def write_template_store(
    directory: Union[str, Path], records: Sequence[TrialRecord], comment: Optional[str] = None
) -> tuple[Path, Path]:
    directory = Path(directory)
    raw = write_csv(
        directory / "templates.csv",
        TEMPLATE_STORE_HEADER,
        ((r.victim_accesses, r.trial, r.miss_count) for r in records),
        comment=comment,
    )
    summary = write_csv(
        directory / "templates_summary.csv",
        TEMPLATE_SUMMARY_HEADER,
        ((t.victim_accesses, t.trials, t.mean, t.stddev) for t in templates_from_records(records)),
        comment=comment,
    )
    return raw, summary


def read_template_store(path: Union[str, Path]) -> tuple[dict[str, str], list[Template]]:
    """Rebuild templates from the per-trial store (a directory or its ``templates.csv``)."""
    path = Path(path)
    if path.is_dir():
        path = path / "templates.csv"
    if not path.is_file():
        raise TemplateStoreError(f"template store not found: {path}")
    meta, rows = read_csv(path)
    try:
        records = [
            TrialRecord(
                trial=int(row["trial"]),
                seed=0,
                victim_accesses=int(row["victim_accesses"]),
                miss_count=int(row["miss_count"]),
            )
            for row in rows
        ]
        templates = templates_from_records(records)
    except (KeyError, TypeError, ValueError) as exc:
        raise TemplateStoreError(f"malformed template store {path}: {exc}") from exc
    if len(templates) < 2:
        raise TemplateStoreError(f"template store {path} holds fewer than two templates")
    return meta, templates


def write_covert_report(path: Union[str, Path], records: Iterable[TrialRecord], comment: Optional[str] = None) -> Path:
    return write_csv(
        path,
        COVERT_HEADER,
        ((r.trial, r.bit_sent, r.miss_count, r.decoded_bit) for r in records),
        comment=comment,
    )
