"""64-bit block ciphers used as set-index derivation functions.

PRESENT-80 follows the reference key schedule and round structure (31 rounds plus a final key
addition); PRINCE is the 12-round core with FX whitening and the original key schedule (``k1`` in
every round). Both are evaluated through byte-sliced lookup tables: every round transform is either
byte-local (S-box layers) or GF(2)-linear (bit permutation, shift rows, the M' matrix), so it can
be written as the XOR of eight per-byte table lookups plus the constant image of zero. The same
tables back the scalar path and the numpy path, which keeps :func:`encrypt` and
:func:`encrypt_many` bit-identical.
"""

import csv
import logging
import random
from collections.abc import Callable, Iterable, Sequence
from enum import Enum
from functools import lru_cache
from importlib import resources
from itertools import islice
from pathlib import Path
from typing import Optional, Union

import numpy as np
import numpy.typing as npt
from pydantic import Field, TypeAdapter, ValidationError, model_validator
from scipy import stats

from .core import WORD64_MASK, FrozenModel, HexKey, IndexBits, Word64
from .errors import ArgumentError, ConfigurationError

logger = logging.getLogger(__name__)

U64Array = npt.NDArray[np.uint64]
_INDEX_BITS = TypeAdapter(IndexBits)


class CipherAlgorithm(str, Enum):
    PRESENT80 = "present80"
    PRINCE128 = "prince128"

    @property
    def key_width(self) -> int:
        return 80 if self is CipherAlgorithm.PRESENT80 else 128

    @classmethod
    def parse(cls, name: str) -> "CipherAlgorithm":
        """
        >>> CipherAlgorithm.parse("present")
        <CipherAlgorithm.PRESENT80: 'present80'>
        >>> CipherAlgorithm.parse("PRINCE128")
        <CipherAlgorithm.PRINCE128: 'prince128'>
        """
        normalized = name.strip().lower()
        for member in cls:
            if normalized in (member.value, member.value.rstrip("0123456789")):
                return member
        raise ConfigurationError(f"Unknown cipher algorithm: {name!r}")


class IndexMode(str, Enum):
    CORRECT = "correct"
    BUGGY = "buggy"


class BlockCipherKey(FrozenModel):
    algorithm: CipherAlgorithm
    key_bits: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_width(self) -> "BlockCipherKey":
        if self.key_bits >> self.algorithm.key_width:
            raise ValueError(f"{self.algorithm.value} key must fit in {self.algorithm.key_width} bits")
        return self

    @property
    def width(self) -> int:
        return self.algorithm.key_width

    @classmethod
    def from_hex(cls, algorithm: CipherAlgorithm, key_hex: str) -> "BlockCipherKey":
        """
        >>> BlockCipherKey.from_hex(CipherAlgorithm.PRESENT80, "ffffffffffffffffffff").key_bits == 2**80 - 1
        True
        >>> BlockCipherKey.from_hex(CipherAlgorithm.PRESENT80, "ffff")
        Traceback (most recent call last):
         ...
        miragelab.errors.ConfigurationError: present80 key needs 80 bits, got 16
        """
        key = HexKey.from_str(key_hex)
        if key.bit_width != algorithm.key_width:
            raise ConfigurationError(f"{algorithm.value} key needs {algorithm.key_width} bits, got {key.bit_width}")
        return cls(algorithm=algorithm, key_bits=key.as_int())

    def to_hex(self) -> HexKey:
        return HexKey.from_int(self.key_bits, bits=self.width)


class KeyPair(FrozenModel):
    k1: BlockCipherKey
    k2: BlockCipherKey

    @model_validator(mode="after")
    def _check_pair(self) -> "KeyPair":
        if self.k1.algorithm is not self.k2.algorithm:
            raise ValueError("both keys of a pair must use the same algorithm")
        if self.k1.key_bits == self.k2.key_bits:
            raise ValueError("the two skew keys must be distinct")
        return self

    @property
    def algorithm(self) -> CipherAlgorithm:
        return self.k1.algorithm


class SiblingIndices(FrozenModel):
    i1: int = Field(ge=0)
    i2: int = Field(ge=0)


class _ByteSlicedMap:
    """A 64-bit affine map that distributes over the eight bytes of its input under XOR.

    Each entry carries the map's constant f(0); the eight copies cancel, so table 0 holds it once more.
    """

    def __init__(self, per_byte: Callable[[int], int]) -> None:
        offset = per_byte(0)
        self.tables = [[per_byte(b << (8 * pos)) for b in range(256)] for pos in range(8)]
        self.tables[0] = [v ^ offset for v in self.tables[0]]
        self.arrays = np.array(self.tables, dtype=np.uint64)

    def __call__(self, x: int) -> int:
        t = self.tables
        return (
            t[0][x & 0xFF]
            ^ t[1][(x >> 8) & 0xFF]
            ^ t[2][(x >> 16) & 0xFF]
            ^ t[3][(x >> 24) & 0xFF]
            ^ t[4][(x >> 32) & 0xFF]
            ^ t[5][(x >> 40) & 0xFF]
            ^ t[6][(x >> 48) & 0xFF]
            ^ t[7][x >> 56]
        )

    def many(self, x: U64Array) -> U64Array:
        out = self.arrays[0][x & np.uint64(0xFF)]
        for pos in range(1, 8):
            out ^= self.arrays[pos][(x >> np.uint64(8 * pos)) & np.uint64(0xFF)]
        return out


def _nibble_layer(sbox: Sequence[int]) -> Callable[[int], int]:
    def apply(x: int) -> int:
        out = 0
        for i in range(16):
            out |= sbox[(x >> (4 * i)) & 0xF] << (4 * i)
        return out

    return apply


def _compose(*fs: Callable[[int], int]) -> Callable[[int], int]:
    def apply(x: int) -> int:
        for f in fs:
            x = f(x)
        return x

    return apply


def _invert(table: Sequence[int]) -> list[int]:
    return [table.index(i) for i in range(len(table))]


# PRESENT

PRESENT_SBOX = [0xC, 0x5, 0x6, 0xB, 0x9, 0x0, 0xA, 0xD, 0x3, 0xE, 0xF, 0x8, 0x4, 0x7, 0x1, 0x2]
PRESENT_PBOX = [(16 * i) % 63 if i != 63 else 63 for i in range(64)]
PRESENT_ROUNDS = 31


def _present_p_layer(x: int) -> int:
    out = 0
    for i in range(64):
        out |= ((x >> i) & 1) << PRESENT_PBOX[i]
    return out


def _present_p_layer_inv(x: int) -> int:
    out = 0
    for i in range(64):
        out |= ((x >> PRESENT_PBOX[i]) & 1) << i
    return out


_present_sp = _ByteSlicedMap(_compose(_nibble_layer(PRESENT_SBOX), _present_p_layer))
_present_p_inv = _ByteSlicedMap(_present_p_layer_inv)
_present_s_inv = _ByteSlicedMap(_nibble_layer(_invert(PRESENT_SBOX)))


@lru_cache(maxsize=256)
def present80_round_keys(key: int) -> tuple[int, ...]:
    """Round keys K1..K32 of an 80-bit PRESENT key."""
    round_keys = []
    for i in range(1, PRESENT_ROUNDS + 2):
        round_keys.append(key >> 16)
        key = ((key & (2**19 - 1)) << 61) | (key >> 19)
        key = (PRESENT_SBOX[key >> 76] << 76) | (key & (2**76 - 1))
        key ^= i << 15
    return tuple(round_keys)


def _present_encrypt(block: int, key: int) -> int:
    round_keys = present80_round_keys(key)
    state = block
    for i in range(PRESENT_ROUNDS):
        state = _present_sp(state ^ round_keys[i])
    return state ^ round_keys[PRESENT_ROUNDS]


def _present_decrypt(block: int, key: int) -> int:
    round_keys = present80_round_keys(key)
    state = block ^ round_keys[PRESENT_ROUNDS]
    for i in reversed(range(PRESENT_ROUNDS)):
        state = _present_s_inv(_present_p_inv(state)) ^ round_keys[i]
    return state


def _present_encrypt_many(blocks: U64Array, key: int) -> U64Array:
    round_keys = present80_round_keys(key)
    state = blocks.copy()
    for i in range(PRESENT_ROUNDS):
        state = _present_sp.many(state ^ np.uint64(round_keys[i]))
    return state ^ np.uint64(round_keys[PRESENT_ROUNDS])


# PRINCE

PRINCE_SBOX = [0xB, 0xF, 0x3, 0x2, 0xA, 0xC, 0x9, 0x1, 0x6, 0x7, 0x8, 0x0, 0xE, 0x5, 0xD, 0x4]
PRINCE_SHIFT_ROWS = [0x4, 0x9, 0xE, 0x3, 0x8, 0xD, 0x2, 0x7, 0xC, 0x1, 0x6, 0xB, 0x0, 0x5, 0xA, 0xF]
PRINCE_ROUND_CONSTANTS = (
    0x0000000000000000,
    0x13198A2E03707344,
    0xA4093822299F31D0,
    0x082EFA98EC4E6C89,
    0x452821E638D01377,
    0xBE5466CF34E90C6C,
    0x7EF84F78FD955CB1,
    0x85840851F1AC43AA,
    0xC882D32F25323C54,
    0x64A51195E0E3610D,
    0xD3B5A399CA0C2399,
    0xC0AC29B7C97C50DD,
)
PRINCE_ALPHA = PRINCE_ROUND_CONSTANTS[11]
_PRINCE_SR_CONSTANTS = (0x7BDE, 0xBDE7, 0xDE7B, 0xE7BD)


def _prince_m_prime(x: int) -> int:
    out = 0
    for block in range(4):
        half_word = (x >> (16 * block)) & 0xFFFF
        start = 0 if block in (0, 3) else 1
        for nibble in range(4):
            masked = half_word & _PRINCE_SR_CONSTANTS[(start + 3 - nibble) % 4]
            parity = (masked ^ (masked >> 4) ^ (masked >> 8) ^ (masked >> 12)) & 0xF
            out |= parity << (16 * block + 4 * nibble)
    return out


def _prince_shift_rows(permutation: Sequence[int]) -> Callable[[int], int]:
    def apply(x: int) -> int:
        out = 0
        for i in range(16):
            out |= ((x >> (4 * permutation[i])) & 0xF) << (4 * i)
        return out

    return apply


_prince_s = _nibble_layer(PRINCE_SBOX)
_prince_s_inv = _nibble_layer(_invert(PRINCE_SBOX))
_prince_forward = _ByteSlicedMap(_compose(_prince_s, _prince_m_prime, _prince_shift_rows(PRINCE_SHIFT_ROWS)))
_prince_middle = _ByteSlicedMap(_compose(_prince_s, _prince_m_prime))
_prince_backward_linear = _ByteSlicedMap(
    _compose(_prince_shift_rows(_invert(PRINCE_SHIFT_ROWS)), _prince_m_prime)
)
_prince_sbox_inv = _ByteSlicedMap(_prince_s_inv)


def _prince_k0_prime(k0: int) -> int:
    return (((k0 & 1) << 63) | (k0 >> 1)) ^ (k0 >> 63)


def _prince_core(state: int, k1: int) -> int:
    state ^= k1 ^ PRINCE_ROUND_CONSTANTS[0]
    for i in range(1, 6):
        state = _prince_forward(state) ^ PRINCE_ROUND_CONSTANTS[i] ^ k1
    state = _prince_sbox_inv(_prince_middle(state))
    for i in range(6, 11):
        state = _prince_sbox_inv(_prince_backward_linear(state ^ k1 ^ PRINCE_ROUND_CONSTANTS[i]))
    return state ^ PRINCE_ROUND_CONSTANTS[11] ^ k1


def _prince_core_many(state: U64Array, k1: int) -> U64Array:
    state = state ^ np.uint64(k1 ^ PRINCE_ROUND_CONSTANTS[0])
    for i in range(1, 6):
        state = _prince_forward.many(state) ^ np.uint64(PRINCE_ROUND_CONSTANTS[i] ^ k1)
    state = _prince_sbox_inv.many(_prince_middle.many(state))
    for i in range(6, 11):
        state = _prince_sbox_inv.many(_prince_backward_linear.many(state ^ np.uint64(k1 ^ PRINCE_ROUND_CONSTANTS[i])))
    return state ^ np.uint64(PRINCE_ROUND_CONSTANTS[11] ^ k1)


def _split_prince_key(key: int) -> tuple[int, int]:
    return key >> 64, key & WORD64_MASK


def _prince_encrypt(block: int, key: int) -> int:
    k0, k1 = _split_prince_key(key)
    return _prince_core(block ^ k0, k1) ^ _prince_k0_prime(k0)


def _prince_decrypt(block: int, key: int) -> int:
    # alpha-reflection: decryption is encryption with the whitening keys swapped and k1 ^ alpha
    k0, k1 = _split_prince_key(key)
    return _prince_core(block ^ _prince_k0_prime(k0), k1 ^ PRINCE_ALPHA) ^ k0


def _prince_encrypt_many(blocks: U64Array, key: int) -> U64Array:
    k0, k1 = _split_prince_key(key)
    return _prince_core_many(blocks ^ np.uint64(k0), k1) ^ np.uint64(_prince_k0_prime(k0))


def _check_block(block: int) -> None:
    if not 0 <= block <= WORD64_MASK:
        raise ArgumentError(f"block must be a 64-bit value, got {block:#x}")


def encrypt(block: int, key: BlockCipherKey) -> int:
    """
    Encrypt one 64-bit block.

    >>> k = BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=0)
    >>> hex(encrypt(0, k))
    '0x5579c1387b228445'
    >>> decrypt(encrypt(0x0123456789ABCDEF, k), k) == 0x0123456789ABCDEF
    True
    """
    _check_block(block)
    if key.algorithm is CipherAlgorithm.PRESENT80:
        return _present_encrypt(block, key.key_bits)
    return _prince_encrypt(block, key.key_bits)


def decrypt(block: int, key: BlockCipherKey) -> int:
    _check_block(block)
    if key.algorithm is CipherAlgorithm.PRESENT80:
        return _present_decrypt(block, key.key_bits)
    return _prince_decrypt(block, key.key_bits)


def encrypt_many(blocks: Union[U64Array, Sequence[int]], key: BlockCipherKey) -> U64Array:
    array = np.asarray(blocks, dtype=np.uint64)
    if key.algorithm is CipherAlgorithm.PRESENT80:
        return _present_encrypt_many(array, key.key_bits)
    return _prince_encrypt_many(array, key.key_bits)


def buggy_block(line_addr: int) -> int:
    """
    The faulty port's plaintext: the 64-digit binary expansion of the address read as hexadecimal,
    truncated to 64 bits. Only the low 16 address bits survive, one per nibble.

    >>> hex(buggy_block(0b1011))
    '0x1011'
    >>> buggy_block(0x0123456789AB0042) == buggy_block(0xFFFF000000000042)
    True
    """
    return int(format(line_addr, "064b"), 16) & WORD64_MASK


def buggy_blocks(lines: U64Array) -> U64Array:
    out = np.zeros_like(lines)
    for bit in range(16):
        out |= ((lines >> np.uint64(bit)) & np.uint64(1)) << np.uint64(4 * bit)
    return out


def _index_mask(index_bits: int) -> int:
    try:
        bits = _INDEX_BITS.validate_python(index_bits)
    except ValidationError as exc:
        raise ArgumentError(f"index_bits must be within 1..30, got {index_bits}") from exc
    return (1 << bits) - 1


def derive_sibling_indices(line_addr: int, keys: KeyPair, index_bits: int) -> SiblingIndices:
    """
    >>> k = KeyPair(
    ...     k1=BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=0),
    ...     k2=BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=1),
    ... )
    >>> hex(derive_sibling_indices(0, k, 14).i1)
    '0x445'
    """
    mask = _index_mask(index_bits)
    return SiblingIndices(i1=encrypt(line_addr, keys.k1) & mask, i2=encrypt(line_addr, keys.k2) & mask)


def derive_sibling_indices_buggy(line_addr: int, keys: KeyPair, index_bits: int) -> SiblingIndices:
    mask = _index_mask(index_bits)
    block = buggy_block(line_addr)
    return SiblingIndices(i1=encrypt(block, keys.k1) & mask, i2=encrypt(block, keys.k2) & mask)


# index tuples kept per indexer before the memo starts over
MEMO_LIMIT = 1 << 20


class SiblingIndexer:
    """Memoizing index function of one cache: (line address) -> (i1, i2).

    The memo holds at most ``memo_limit`` tuples; it is cleared when a new batch would overflow it.
    """

    def __init__(
        self, keys: KeyPair, index_bits: int, mode: IndexMode = IndexMode.CORRECT, memo_limit: int = MEMO_LIMIT
    ) -> None:
        if memo_limit < 1:
            raise ArgumentError("memo_limit must be at least 1")
        self.keys = keys
        self.index_bits = index_bits
        self.mode = mode
        self.memo_limit = memo_limit
        self._mask = _index_mask(index_bits)
        self._memo: dict[int, tuple[int, int]] = {}

    @property
    def memo_size(self) -> int:
        return len(self._memo)

    def _class_of(self, line_addr: int) -> int:
        return line_addr & 0xFFFF if self.mode is IndexMode.BUGGY else line_addr

    def _remember(self, keys: Sequence[int], pairs: Iterable[tuple[int, int]]) -> None:
        if len(self._memo) + len(keys) > self.memo_limit:
            self._memo.clear()
        self._memo.update(islice(zip(keys, pairs), self.memo_limit))

    def siblings(self, line_addr: int) -> tuple[int, int]:
        key = self._class_of(line_addr)
        pair = self._memo.get(key)
        if pair is None:
            block = buggy_block(line_addr) if self.mode is IndexMode.BUGGY else line_addr
            pair = (encrypt(block, self.keys.k1) & self._mask, encrypt(block, self.keys.k2) & self._mask)
            self._remember([key], [pair])
        return pair

    def indices(self, line_addr: int) -> SiblingIndices:
        i1, i2 = self.siblings(line_addr)
        return SiblingIndices(i1=i1, i2=i2)

    def many(self, lines: Union[U64Array, Sequence[int]]) -> tuple[U64Array, U64Array]:
        array = np.asarray(lines, dtype=np.uint64)
        blocks = buggy_blocks(array) if self.mode is IndexMode.BUGGY else array
        mask = np.uint64(self._mask)
        return encrypt_many(blocks, self.keys.k1) & mask, encrypt_many(blocks, self.keys.k2) & mask

    def warm(self, lines: Iterable[int]) -> None:
        pending = sorted({self._class_of(line) for line in lines} - self._memo.keys())
        if not pending:
            return
        i1, i2 = self.many(pending)
        self._remember(pending, zip(i1.tolist(), i2.tolist()))
        logger.debug("warmed %d index tuples (%s mode)", len(pending), self.mode.value)


@lru_cache(maxsize=32)
def shared_indexer(keys: KeyPair, index_bits: int, mode: IndexMode) -> SiblingIndexer:
    """One memo per (keys, geometry, mode) per process, shared by every cache built from them."""
    return SiblingIndexer(keys, index_bits, mode)


def random_key_pair(algorithm: CipherAlgorithm, rng: random.Random) -> KeyPair:
    width = algorithm.key_width
    k1 = rng.getrandbits(width)
    k2 = rng.getrandbits(width)
    while k2 == k1:
        k2 = rng.getrandbits(width)
    return KeyPair(
        k1=BlockCipherKey(algorithm=algorithm, key_bits=k1),
        k2=BlockCipherKey(algorithm=algorithm, key_bits=k2),
    )


class UniformityReport(FrozenModel):
    sample_count: int
    bins: int
    mode: IndexMode
    chi_square: tuple[float, float]
    p_value: tuple[float, float]
    band: tuple[float, float]

    @property
    def within_band(self) -> bool:
        low, high = self.band
        return all(low <= chi <= high for chi in self.chi_square)


def _distinct_addresses(sample_count: int, seed: int) -> U64Array:
    rng = np.random.default_rng(seed)
    drawn = np.unique(rng.integers(0, WORD64_MASK, size=sample_count, dtype=np.uint64, endpoint=True))
    while drawn.size < sample_count:
        extra = rng.integers(0, WORD64_MASK, size=sample_count - drawn.size, dtype=np.uint64, endpoint=True)
        drawn = np.unique(np.concatenate([drawn, extra]))
    return drawn


def uniformity_report(
    keys: KeyPair, index_bits: int, sample_count: int, seed: int, mode: IndexMode = IndexMode.CORRECT
) -> UniformityReport:
    if sample_count <= 0:
        raise ArgumentError("sample_count must be positive")
    bins = 1 << index_bits
    if sample_count < 100 * bins:
        logger.warning("chi-square over %d samples and %d bins is below 100 samples per bin", sample_count, bins)
    i1, i2 = SiblingIndexer(keys, index_bits, mode).many(_distinct_addresses(sample_count, seed))
    expected = sample_count / bins
    chi: list[float] = []
    p_values: list[float] = []
    for indices in (i1, i2):
        observed = np.bincount(indices.astype(np.int64), minlength=bins)
        statistic = float(np.sum((observed - expected) ** 2) / expected)
        chi.append(statistic)
        p_values.append(float(stats.chi2.sf(statistic, df=bins - 1)))
    spread = 4.0 * (2.0 * bins) ** 0.5
    return UniformityReport(
        sample_count=sample_count,
        bins=bins,
        mode=mode,
        chi_square=(chi[0], chi[1]),
        p_value=(p_values[0], p_values[1]),
        band=(bins - spread, bins + spread),
    )


class CipherVector(FrozenModel):
    algorithm: CipherAlgorithm
    key_hex: HexKey
    plaintext: Word64
    ciphertext: Word64


class VectorResult(FrozenModel):
    vector: CipherVector
    encrypted: Word64
    decrypted: Word64

    @property
    def passed(self) -> bool:
        return self.encrypted == self.vector.ciphertext and self.decrypted == self.vector.plaintext


def bundled_vectors_path() -> Path:
    return Path(str(resources.files("miragelab").joinpath("data", "test_vectors.csv")))


def load_test_vectors(path: Optional[Union[str, Path]] = None) -> list[CipherVector]:
    """Read ``algorithm,key_hex,plaintext_hex,ciphertext_hex`` records; ``#`` lines are comments."""
    source = Path(path) if path is not None else bundled_vectors_path()
    vectors = []
    with open(source, "r", encoding="utf-8", newline="") as fin:
        rows = [line for line in fin.read().splitlines() if line.strip() and not line.lstrip().startswith("#")]
    for lineno, record in enumerate(csv.reader(rows), start=1):
        if len(record) != 4:
            raise ConfigurationError(f"{source}:{lineno}: expected 4 fields, got {len(record)}")
        algorithm = CipherAlgorithm.parse(record[0])
        key = BlockCipherKey.from_hex(algorithm, record[1])
        vectors.append(
            CipherVector(
                algorithm=algorithm,
                key_hex=key.to_hex(),
                plaintext=int(HexKey.from_str(record[2]).as_int()),
                ciphertext=int(HexKey.from_str(record[3]).as_int()),
            )
        )
    return vectors


def verify_test_vectors(vectors: Iterable[CipherVector]) -> list[VectorResult]:
    results = []
    for vector in vectors:
        key = BlockCipherKey.from_hex(vector.algorithm, vector.key_hex)
        encrypted = encrypt(vector.plaintext, key)
        result = VectorResult(vector=vector, encrypted=encrypted, decrypted=decrypt(vector.ciphertext, key))
        if not result.passed:
            logger.warning(
                "%s vector failed: key=%s pt=%#018x", vector.algorithm.value, vector.key_hex, vector.plaintext
            )
        results.append(result)
    return results
