"""MIRAGE cache state machine and a classical set-associative baseline.

The tag store is skewed: each skew has ``sets_per_skew`` sets of ``base_ways + extra_ways`` tags,
and a line may live only in its two sibling sets. Tags point into a fully associative data store
of ``sets_per_skew * base_ways`` slots whose entries point back at their tag. Every install
evicts a uniformly random data slot (global eviction); a set-associative eviction (SAE) happens
only when both sibling sets are out of invalid tags.

State is kept in flat lists indexed by tag slot (``set_id * ways + way``) and data slot; the
pydantic records below are read-only views built on demand.
"""

import logging
import random
from collections import OrderedDict
from collections.abc import Iterable, Iterator, Sequence
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Union, runtime_checkable

import numpy as np
from pydantic import Field, model_validator

from .core import Count, FrozenModel, is_power_of_two, parse_hex_word
from .errors import ArgumentError, ConfigurationError
from .rand_cipher import IndexMode, KeyPair, SiblingIndices, shared_indexer

logger = logging.getLogger(__name__)

HIT = -2
MISS = -1
INVALID = -1

STATS_HEADER = ("accesses", "hits", "misses", "global_evictions", "sae_count")

# lines are indexed in vectorized chunks of this size when streaming
STREAM_CHUNK = 1 << 16


class MirageConfig(FrozenModel):
    skews: int = Field(default=2, ge=1)
    sets_per_skew: int = Field(default=16384, ge=1)
    base_ways: int = Field(default=8, ge=1)
    extra_ways: Count = Count(6)
    keys: KeyPair
    mode: IndexMode = IndexMode.CORRECT
    rng_seed: Count = Count(0)

    @property
    def index_bits(self) -> int:
        return self.sets_per_skew.bit_length() - 1

    @property
    def ways(self) -> int:
        return self.base_ways + self.extra_ways

    @property
    def data_capacity(self) -> int:
        return self.sets_per_skew * self.base_ways

    @property
    def tag_slots(self) -> int:
        return self.skews * self.sets_per_skew * self.ways

    def check_geometry(self) -> None:
        if self.skews != 2:
            raise ConfigurationError(f"a key pair indexes exactly two skews, got skews={self.skews}")
        if not is_power_of_two(self.sets_per_skew):
            raise ConfigurationError(f"sets_per_skew must be a power of two, got {self.sets_per_skew}")
        if not 1 <= self.index_bits <= 30:
            raise ConfigurationError(f"sets_per_skew gives {self.index_bits} index bits, outside 1..30")


class TagEntry(FrozenModel):
    valid: bool
    line_tag: Optional[int] = None
    data_ptr: Optional[int] = None


class DataEntry(FrozenModel):
    valid: bool
    line_tag: Optional[int] = None
    back_ptr: Optional[tuple[int, int, int]] = None


class AccessKind(str, Enum):
    HIT = "hit"
    MISS_INSTALLED = "miss_installed"


class AccessOutcome(FrozenModel):
    """Result of one access. On the baseline cache ``globally_evicted`` holds the LRU victim."""

    kind: AccessKind
    globally_evicted: Optional[int] = None
    sae_triggered: bool = False
    sae_victim: Optional[int] = None

    @model_validator(mode="after")
    def _hit_evicts_nothing(self) -> "AccessOutcome":
        if self.kind is AccessKind.HIT and (
            self.globally_evicted is not None or self.sae_triggered or self.sae_victim is not None
        ):
            raise ValueError("a hit cannot evict")
        return self


class CacheInitState(FrozenModel):
    valid_tags_per_set: int = Field(ge=0)
    invalid_tags_per_set: int = Field(ge=0)

    @property
    def ways(self) -> int:
        return self.valid_tags_per_set + self.invalid_tags_per_set


class CacheStats(FrozenModel):
    accesses: int = 0
    hits: int = 0
    misses: int = 0
    global_evictions: int = 0
    sae_count: int = 0

    def csv_row(self) -> tuple[int, int, int, int, int]:
        return (self.accesses, self.hits, self.misses, self.global_evictions, self.sae_count)


@runtime_checkable
class CacheModel(Protocol):
    """What the attack harness needs from a cache."""

    @property
    def capacity(self) -> int: ...

    def touch(self, line_addr: int) -> int: ...

    def access(self, line_addr: int) -> AccessOutcome: ...

    def lookup(self, line_addr: int) -> bool: ...

    def occupancy(self) -> int: ...

    def stats(self) -> CacheStats: ...

    def reset(self) -> None: ...


class MirageCache:
    def __init__(self, config: MirageConfig) -> None:
        config.check_geometry()
        self.config = config
        self._sets = config.sets_per_skew
        self._ways = config.ways
        self._capacity = config.data_capacity
        self._indexer = shared_indexer(config.keys, config.index_bits, config.mode)
        self._rng = random.Random(config.rng_seed)
        self._clear()

    def _clear(self) -> None:
        slots = self.config.tag_slots
        self._tag_line = [INVALID] * slots
        self._tag_ptr = [INVALID] * slots
        self._free = [self._ways] * (self.config.skews * self._sets)
        self._data_back = [INVALID] * self._capacity
        self._valid = 0
        self._accesses = 0
        self._hits = 0
        self._global_evictions = 0
        self._sae_count = 0
        self.last_sae_victim: Optional[int] = None

    @property
    def capacity(self) -> int:
        return self._capacity

    def reset(self) -> None:
        """Drop every line and zero the counters; the random stream carries on."""
        self._clear()

    def warm(self, lines: Iterable[int]) -> None:
        """Index a batch of lines ahead of time through the vectorized cipher."""
        self._indexer.warm(lines)

    def sibling_sets(self, line_addr: int) -> tuple[int, int]:
        i1, i2 = self._indexer.siblings(line_addr)
        return i1, self._sets + i2

    def _holds(self, set_id: int, line_addr: int) -> bool:
        start = set_id * self._ways
        return line_addr in self._tag_line[start : start + self._ways]

    def lookup(self, line_addr: int) -> bool:
        s0, s1 = self.sibling_sets(line_addr)
        return self._holds(s0, line_addr) or self._holds(s1, line_addr)

    def touch(self, line_addr: int) -> int:
        """Access a line; returns ``HIT``, ``MISS`` or the globally evicted line address."""
        s0, s1 = self.sibling_sets(line_addr)
        return self._touch_at(line_addr, s0, s1)

    def _touch_at(self, line_addr: int, s0: int, s1: int) -> int:
        self._accesses += 1
        if self._holds(s0, line_addr) or self._holds(s1, line_addr):
            self._hits += 1
            return HIT
        return self._install(line_addr, s0, s1)

    def _install(self, line_addr: int, s0: int, s1: int) -> int:
        rng = self._rng
        free = self._free
        tags = self._tag_line
        ways = self._ways
        f0, f1 = free[s0], free[s1]
        if f0 > f1:
            chosen = s0
        elif f1 > f0:
            chosen = s1
        else:
            chosen = s1 if rng.getrandbits(1) else s0
        start = chosen * ways
        self.last_sae_victim = None
        if free[chosen] == 0:
            slot = start + rng.randrange(ways)
            self.last_sae_victim = tags[slot]
            self._data_back[self._tag_ptr[slot]] = INVALID
            tags[slot] = INVALID
            free[chosen] += 1
            self._valid -= 1
            self._sae_count += 1
            logger.debug("SAE in set %d evicted line %#x for %#x", chosen, self.last_sae_victim, line_addr)
        else:
            slot = rng.choice([i for i in range(start, start + ways) if tags[i] == INVALID])

        evicted = MISS
        data_slot = rng.randrange(self._capacity)
        victim_slot = self._data_back[data_slot]
        if victim_slot != INVALID:
            evicted = tags[victim_slot]
            tags[victim_slot] = INVALID
            free[victim_slot // ways] += 1
            self._valid -= 1
            self._global_evictions += 1

        tags[slot] = line_addr
        self._tag_ptr[slot] = data_slot
        self._data_back[data_slot] = slot
        free[chosen] -= 1
        self._valid += 1
        return evicted

    def access(self, line_addr: int) -> AccessOutcome:
        sae_before = self._sae_count
        result = self.touch(line_addr)
        if result == HIT:
            return AccessOutcome(kind=AccessKind.HIT)
        sae = self._sae_count != sae_before
        return AccessOutcome(
            kind=AccessKind.MISS_INSTALLED,
            globally_evicted=None if result == MISS else result,
            sae_triggered=sae,
            sae_victim=self.last_sae_victim if sae else None,
        )

    def access_stream(self, lines: Iterable[int], chunk: int = STREAM_CHUNK) -> None:
        """Access many lines, indexing them a chunk at a time without memoizing."""
        sets = self._sets
        for block in _chunks(lines, chunk):
            i1, i2 = self._indexer.many(block)
            for line, a, b in zip(block, i1.tolist(), i2.tolist()):
                self._touch_at(line, a, sets + b)

    def occupancy(self) -> int:
        return self._valid

    def stats(self) -> CacheStats:
        return CacheStats(
            accesses=self._accesses,
            hits=self._hits,
            misses=self._accesses - self._hits,
            global_evictions=self._global_evictions,
            sae_count=self._sae_count,
        )

    def free_tags(self, skew: int, set_index: int) -> int:
        return self._free[self._set_id(skew, set_index)]

    def _set_id(self, skew: int, set_index: int) -> int:
        if not (0 <= skew < self.config.skews and 0 <= set_index < self._sets):
            raise ArgumentError(f"no set ({skew}, {set_index}) in this geometry")
        return skew * self._sets + set_index

    def install_at(self, line_addr: int, skew: int, set_index: int) -> int:
        """
        Place a line in a given set without global eviction, bypassing the index function.

        Used to build states (e.g. full sibling sets) directly; returns the data slot used.
        """
        set_id = self._set_id(skew, set_index)
        if self._free[set_id] == 0:
            raise ArgumentError(f"set ({skew}, {set_index}) has no invalid tag")
        if self._valid >= self._capacity:
            raise ArgumentError("data store is full")
        start = set_id * self._ways
        slot = self._rng.choice([i for i in range(start, start + self._ways) if self._tag_line[i] == INVALID])
        data_slot = self._rng.randrange(self._capacity)
        while self._data_back[data_slot] != INVALID:
            data_slot = self._rng.randrange(self._capacity)
        self._tag_line[slot] = line_addr
        self._tag_ptr[slot] = data_slot
        self._data_back[data_slot] = slot
        self._free[set_id] -= 1
        self._valid += 1
        return data_slot

    def populate(self, init: CacheInitState, first_line: int = 0) -> None:
        """Give every set ``init.valid_tags_per_set`` valid tags holding synthetic lines."""
        if init.ways != self._ways:
            raise ArgumentError(f"init state describes {init.ways} ways, cache has {self._ways}")
        total_sets = self.config.skews * self._sets
        if self._valid + total_sets * init.valid_tags_per_set > self._capacity:
            raise ArgumentError("init state needs more data slots than the data store has")
        line = first_line
        for set_id in range(total_sets):
            for _ in range(init.valid_tags_per_set):
                self.install_at(line, set_id // self._sets, set_id % self._sets)
                line += 1

    def tag_entry(self, skew: int, set_index: int, way: int) -> TagEntry:
        if not 0 <= way < self._ways:
            raise ArgumentError(f"no way {way}")
        slot = self._set_id(skew, set_index) * self._ways + way
        if self._tag_line[slot] == INVALID:
            return TagEntry(valid=False)
        return TagEntry(valid=True, line_tag=self._tag_line[slot], data_ptr=self._tag_ptr[slot])

    def _slot_triple(self, slot: int) -> tuple[int, int, int]:
        set_id, way = divmod(slot, self._ways)
        skew, set_index = divmod(set_id, self._sets)
        return skew, set_index, way

    def data_entry(self, data_slot: int) -> DataEntry:
        if not 0 <= data_slot < self._capacity:
            raise ArgumentError(f"no data slot {data_slot}")
        slot = self._data_back[data_slot]
        if slot == INVALID:
            return DataEntry(valid=False)
        return DataEntry(valid=True, line_tag=self._tag_line[slot], back_ptr=self._slot_triple(slot))

    def check_invariants(self) -> None:
        """Full scan of the tag/data bijection and the per-set counters."""
        valid_tags = 0
        for set_id, free in enumerate(self._free):
            start = set_id * self._ways
            invalid = 0
            for slot in range(start, start + self._ways):
                if self._tag_line[slot] == INVALID:
                    invalid += 1
                    continue
                valid_tags += 1
                data_slot = self._tag_ptr[slot]
                if not 0 <= data_slot < self._capacity:
                    raise AssertionError(f"tag {self._slot_triple(slot)} points outside the data store")
                if self._data_back[data_slot] != slot:
                    raise AssertionError(f"data slot {data_slot} does not point back to tag {self._slot_triple(slot)}")
            if invalid != free:
                raise AssertionError(f"set {set_id} counts {free} free tags but holds {invalid}")
        valid_data = sum(1 for slot in self._data_back if slot != INVALID)
        for data_slot, slot in enumerate(self._data_back):
            if slot != INVALID and (self._tag_line[slot] == INVALID or self._tag_ptr[slot] != data_slot):
                raise AssertionError(f"data slot {data_slot} points at a tag that does not own it")
        if not valid_tags == valid_data == self._valid:
            raise AssertionError(f"{valid_tags} valid tags, {valid_data} valid data entries, counter {self._valid}")


class BaselineConfig(FrozenModel):
    sets: int = Field(default=16384, ge=1)
    ways: int = Field(default=16, ge=1)

    @property
    def capacity(self) -> int:
        return self.sets * self.ways


class BaselineCache:
    """Physically indexed set-associative cache with LRU replacement."""

    def __init__(self, config: Optional[BaselineConfig] = None) -> None:
        self.config = config or BaselineConfig()
        if not is_power_of_two(self.config.sets):
            raise ConfigurationError(f"baseline sets must be a power of two, got {self.config.sets}")
        self._mask = self.config.sets - 1
        self._clear()

    def _clear(self) -> None:
        self._sets: list[OrderedDict[int, None]] = [OrderedDict() for _ in range(self.config.sets)]
        self._valid = 0
        self._accesses = 0
        self._hits = 0
        self._evictions = 0

    @property
    def capacity(self) -> int:
        return self.config.capacity

    def reset(self) -> None:
        self._clear()

    def set_index(self, line_addr: int) -> int:
        return line_addr & self._mask

    def lookup(self, line_addr: int) -> bool:
        return line_addr in self._sets[line_addr & self._mask]

    def touch(self, line_addr: int) -> int:
        lines = self._sets[line_addr & self._mask]
        self._accesses += 1
        if line_addr in lines:
            lines.move_to_end(line_addr)
            self._hits += 1
            return HIT
        evicted = MISS
        if len(lines) >= self.config.ways:
            evicted, _ = lines.popitem(last=False)
            self._evictions += 1
            self._valid -= 1
        lines[line_addr] = None
        self._valid += 1
        return evicted

    def access(self, line_addr: int) -> AccessOutcome:
        result = self.touch(line_addr)
        if result == HIT:
            return AccessOutcome(kind=AccessKind.HIT)
        return AccessOutcome(kind=AccessKind.MISS_INSTALLED, globally_evicted=None if result == MISS else result)

    def occupancy(self) -> int:
        return self._valid

    def stats(self) -> CacheStats:
        return CacheStats(
            accesses=self._accesses,
            hits=self._hits,
            misses=self._accesses - self._hits,
            global_evictions=self._evictions,
        )


def new_cache(config: MirageConfig) -> MirageCache:
    return MirageCache(config)


def lookup(state: CacheModel, line_addr: int) -> bool:
    return state.lookup(line_addr)


def access(state: CacheModel, line_addr: int) -> AccessOutcome:
    return state.access(line_addr)


def baseline_access(state: BaselineCache, line_addr: int) -> AccessOutcome:
    return state.access(line_addr)


def occupancy(state: CacheModel) -> int:
    return state.occupancy()


def stats(state: CacheModel) -> CacheStats:
    return state.stats()


def sibling_indices(state: MirageCache, line_addr: int) -> SiblingIndices:
    return state._indexer.indices(line_addr)


def _chunks(lines: Iterable[int], size: int) -> Iterator[list[int]]:
    block: list[int] = []
    for line in lines:
        block.append(line)
        if len(block) == size:
            yield block
            block = []
    if block:
        yield block


def stride_lines(base_address: int, stride: int, count: int) -> range:
    """
    >>> list(stride_lines(10, 1000, 3))
    [10, 1010, 2010]
    """
    if stride < 1:
        raise ArgumentError("stride must be at least 1")
    return range(base_address, base_address + stride * count, stride)


def random_lines(seed: int, count: int) -> Iterator[int]:
    """Uniform 64-bit line addresses, generated a chunk at a time."""
    rng = np.random.default_rng(seed)
    remaining = count
    while remaining > 0:
        size = min(remaining, STREAM_CHUNK)
        yield from rng.integers(0, 2**64 - 1, size=size, dtype=np.uint64, endpoint=True).tolist()
        remaining -= size


def replay_trace(state: MirageCache, lines: Iterable[int]) -> CacheStats:
    state.access_stream(lines)
    return state.stats()


def read_trace(path: Union[str, Path]) -> list[int]:
    """One hexadecimal line address per line; blank lines and ``#`` comments are skipped."""
    lines = []
    with open(path, "r", encoding="utf-8") as fin:
        for lineno, text in enumerate(fin, start=1):
            text = text.strip()
            if not text or text.startswith("#"):
                continue
            try:
                lines.append(parse_hex_word(text))
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from exc
    return lines


def first_sae(config: MirageConfig, lines: Iterable[int], limit: Optional[int] = None) -> Optional[int]:
    """Number of installs up to and including the first SAE, or None if none happened."""
    cache = MirageCache(config)
    sets = cache._sets
    installs = 0
    for block in _chunks(lines, STREAM_CHUNK):
        i1, i2 = cache._indexer.many(block)
        for line, a, b in zip(block, i1.tolist(), i2.tolist()):
            if cache._touch_at(line, a, sets + b) == HIT:
                continue
            installs += 1
            if cache._sae_count:
                logger.info("first SAE after %d installs", installs)
                return installs
            if limit is not None and installs >= limit:
                return None
    return None


class SaeSweepPoint(FrozenModel):
    base_ways: int
    extra_ways: int
    installs: int
    sae_count: int


def sae_sweep(config: MirageConfig, extra_ways: Iterable[int], lines: Sequence[int]) -> list[SaeSweepPoint]:
    """SAE count of the same access stream for each number of extra ways."""
    points = []
    for extra in extra_ways:
        cache = MirageCache(config.model_copy(update={"extra_ways": extra}))
        result = replay_trace(cache, lines)
        points.append(
            SaeSweepPoint(
                base_ways=config.base_ways, extra_ways=extra, installs=result.misses, sae_count=result.sae_count
            )
        )
        logger.info("%d+%d ways: %d SAE over %d installs", config.base_ways, extra, result.sae_count, result.misses)
    return points
