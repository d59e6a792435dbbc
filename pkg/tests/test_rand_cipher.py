import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from miragelab import rand_cipher
from miragelab.errors import ArgumentError, ConfigurationError
from miragelab.rand_cipher import BlockCipherKey, CipherAlgorithm, IndexMode, KeyPair

words = st.integers(min_value=0, max_value=2**64 - 1)
present_key_values = st.integers(0, 2**80 - 1).map(
    lambda k: BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=k)
)
prince_key_values = st.integers(0, 2**128 - 1).map(
    lambda k: BlockCipherKey(algorithm=CipherAlgorithm.PRINCE128, key_bits=k)
)


@pytest.mark.parametrize(
    ["algorithm", "key", "plaintext", "ciphertext"],
    [
        [CipherAlgorithm.PRESENT80, 0, 0, 0x5579C1387B228445],
        [CipherAlgorithm.PRESENT80, 2**80 - 1, 0, 0xE72C46C0F5945049],
        [CipherAlgorithm.PRESENT80, 0, 2**64 - 1, 0xA112FFC72F68417B],
        [CipherAlgorithm.PRESENT80, 2**80 - 1, 2**64 - 1, 0x3333DCD3213210D2],
        [CipherAlgorithm.PRINCE128, 0, 0, 0x818665AA0D02DFDA],
        [CipherAlgorithm.PRINCE128, 0, 2**64 - 1, 0x604AE6CA03C20ADA],
        [CipherAlgorithm.PRINCE128, (2**64 - 1) << 64, 0, 0x9FB51935FC3DF524],
        [CipherAlgorithm.PRINCE128, 2**64 - 1, 0, 0x78A54CBE737BB7EF],
        [CipherAlgorithm.PRINCE128, 0xFEDCBA9876543210, 0x0123456789ABCDEF, 0xAE25AD3CA8FA9CCF],
    ],
)
def test_published_vectors(algorithm: CipherAlgorithm, key: int, plaintext: int, ciphertext: int) -> None:
    sut = BlockCipherKey(algorithm=algorithm, key_bits=key)
    assert rand_cipher.encrypt(plaintext, sut) == ciphertext
    assert rand_cipher.decrypt(ciphertext, sut) == plaintext


def test_bundled_vectors_all_pass() -> None:
    vectors = rand_cipher.load_test_vectors()
    assert len(vectors) == 9
    assert {v.algorithm for v in vectors} == set(CipherAlgorithm)
    results = rand_cipher.verify_test_vectors(vectors)
    assert all(r.passed for r in results)


def test_vector_file_with_bad_record(tmp_path: Path) -> None:
    path = tmp_path / "vectors.csv"
    path.write_text("# comment\npresent80,00000000000000000000,0000000000000000\n", encoding="utf-8")
    with pytest.raises(ConfigurationError, match="expected 4 fields"):
        rand_cipher.load_test_vectors(path)


def test_failing_vector_is_reported(tmp_path: Path) -> None:
    path = tmp_path / "vectors.csv"
    path.write_text("present80,00000000000000000000,0000000000000000,0000000000000000\n", encoding="utf-8")
    results = rand_cipher.verify_test_vectors(rand_cipher.load_test_vectors(path))
    assert [r.passed for r in results] == [False]
    assert results[0].encrypted == 0x5579C1387B228445


@settings(max_examples=50, deadline=None)
@given(block=words, key=present_key_values)
def test_present_decrypt_inverts_encrypt(block: int, key: BlockCipherKey) -> None:
    assert rand_cipher.decrypt(rand_cipher.encrypt(block, key), key) == block


@settings(max_examples=50, deadline=None)
@given(block=words, key=prince_key_values)
def test_prince_decrypt_inverts_encrypt(block: int, key: BlockCipherKey) -> None:
    assert rand_cipher.decrypt(rand_cipher.encrypt(block, key), key) == block


@settings(max_examples=20, deadline=None)
@given(blocks=st.lists(words, min_size=1, max_size=40), key=st.one_of(present_key_values, prince_key_values))
def test_encrypt_many_matches_scalar_path(blocks: list[int], key: BlockCipherKey) -> None:
    actual = rand_cipher.encrypt_many(blocks, key).tolist()
    assert actual == [rand_cipher.encrypt(b, key) for b in blocks]


@settings(max_examples=50, deadline=None)
@given(x=words)
def test_byte_sliced_sbox_layer_matches_direct_application(x: int) -> None:
    layer = rand_cipher._nibble_layer(rand_cipher.PRESENT_SBOX)
    sliced = rand_cipher._ByteSlicedMap(layer)
    assert sliced(x) == layer(x)
    assert sliced.many(np.array([x], dtype=np.uint64)).tolist() == [layer(x)]


def test_byte_sliced_map_keeps_constant_of_zero_input() -> None:
    layer = rand_cipher._nibble_layer(rand_cipher.PRESENT_SBOX)
    assert rand_cipher._ByteSlicedMap(layer)(0) == 0xCCCC_CCCC_CCCC_CCCC


def test_encrypt_is_a_permutation_on_a_sample() -> None:
    key = BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=0x1234)
    outputs = rand_cipher.encrypt_many(np.arange(1 << 14, dtype=np.uint64), key)
    assert len(np.unique(outputs)) == 1 << 14


def test_block_out_of_range() -> None:
    key = BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=0)
    with pytest.raises(ArgumentError):
        rand_cipher.encrypt(2**64, key)
    with pytest.raises(ArgumentError):
        rand_cipher.decrypt(-1, key)


def test_key_width_is_checked() -> None:
    with pytest.raises(ValidationError):
        BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=2**80)
    with pytest.raises(ConfigurationError, match="prince128 key needs 128 bits, got 80"):
        BlockCipherKey.from_hex(CipherAlgorithm.PRINCE128, "0" * 20)
    assert BlockCipherKey.from_hex(CipherAlgorithm.PRINCE128, "f" * 32).key_bits == 2**128 - 1


def test_key_pair_rejects_equal_or_mixed_keys() -> None:
    a = BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=1)
    b = BlockCipherKey(algorithm=CipherAlgorithm.PRINCE128, key_bits=2)
    with pytest.raises(ValidationError, match="distinct"):
        KeyPair(k1=a, k2=a)
    with pytest.raises(ValidationError, match="same algorithm"):
        KeyPair(k1=a, k2=b)


@pytest.mark.parametrize(["name", "expected"], [["present", "present80"], ["Prince", "prince128"]])
def test_cipher_algorithm_parse(name: str, expected: str) -> None:
    assert rand_cipher.CipherAlgorithm.parse(name).value == expected


def test_cipher_algorithm_parse_unknown() -> None:
    with pytest.raises(ConfigurationError):
        rand_cipher.CipherAlgorithm.parse("aes")


def test_sibling_indices_are_bounded_and_deterministic(present_keys: KeyPair) -> None:
    for line in (0, 1, 0xDEADBEEF, 2**64 - 1):
        first = rand_cipher.derive_sibling_indices(line, present_keys, 14)
        assert 0 <= first.i1 < 2**14
        assert 0 <= first.i2 < 2**14
        assert first == rand_cipher.derive_sibling_indices(line, present_keys, 14)


@pytest.mark.parametrize("bits", [0, 31])
def test_index_bits_out_of_range(present_keys: KeyPair, bits: int) -> None:
    with pytest.raises(ArgumentError):
        rand_cipher.derive_sibling_indices(0, present_keys, bits)


def test_sibling_indices_keep_low_ciphertext_bits(present_keys: KeyPair) -> None:
    expected = rand_cipher.encrypt(0x1234, present_keys.k1) & 0xFF
    assert rand_cipher.derive_sibling_indices(0x1234, present_keys, 8).i1 == expected


def test_buggy_indices_only_see_low_sixteen_bits(present_keys: KeyPair) -> None:
    a = rand_cipher.derive_sibling_indices_buggy(0x0000_0000_0000_1234, present_keys, 14)
    b = rand_cipher.derive_sibling_indices_buggy(0xABCD_EF01_2345_1234, present_keys, 14)
    assert a == b
    assert a != rand_cipher.derive_sibling_indices(0x1234, present_keys, 14)


@settings(max_examples=50, deadline=None)
@given(line=words)
def test_buggy_blocks_matches_scalar(line: int) -> None:
    array = np.array([line], dtype=np.uint64)
    assert rand_cipher.buggy_blocks(array).tolist() == [rand_cipher.buggy_block(line)]


def test_indexer_matches_derivation(present_keys: KeyPair) -> None:
    rng = random.Random(3)
    lines = [rng.getrandbits(64) for _ in range(5)] + [0x1000, 0x2000]
    for mode, derive in (
        (IndexMode.CORRECT, rand_cipher.derive_sibling_indices),
        (IndexMode.BUGGY, rand_cipher.derive_sibling_indices_buggy),
    ):
        indexer = rand_cipher.SiblingIndexer(present_keys, 10, mode)
        indexer.warm(lines[:3])
        i1, i2 = indexer.many(lines)
        for line, a, b in zip(lines, i1.tolist(), i2.tolist()):
            expected = derive(line, present_keys, 10)
            assert indexer.indices(line) == expected
            assert (a, b) == (expected.i1, expected.i2)


def test_indexer_memo_stays_bounded(present_keys: KeyPair) -> None:
    indexer = rand_cipher.SiblingIndexer(present_keys, 10, memo_limit=8)
    indexer.warm(range(20))
    assert indexer.memo_size <= 8
    for line in range(40):
        assert indexer.indices(line) == rand_cipher.derive_sibling_indices(line, present_keys, 10)
        assert indexer.memo_size <= 8
    with pytest.raises(ArgumentError):
        rand_cipher.SiblingIndexer(present_keys, 10, memo_limit=0)


def test_shared_indexer_is_reused(present_keys: KeyPair) -> None:
    a = rand_cipher.shared_indexer(present_keys, 12, IndexMode.CORRECT)
    assert a is rand_cipher.shared_indexer(present_keys, 12, IndexMode.CORRECT)
    assert a is not rand_cipher.shared_indexer(present_keys, 12, IndexMode.BUGGY)


def test_random_key_pair_is_seeded() -> None:
    a = rand_cipher.random_key_pair(CipherAlgorithm.PRINCE128, random.Random(1))
    b = rand_cipher.random_key_pair(CipherAlgorithm.PRINCE128, random.Random(1))
    assert a == b
    assert a.algorithm is CipherAlgorithm.PRINCE128
    assert a.k1.key_bits < 2**128


def test_uniformity_correct_cipher_within_band(present_keys: KeyPair) -> None:
    report = rand_cipher.uniformity_report(present_keys, 8, 256 * 200, seed=1)
    assert report.bins == 256
    assert report.within_band
    assert all(0.0 <= p <= 1.0 for p in report.p_value)


def test_uniformity_buggy_mode_is_far_outside_band(present_keys: KeyPair) -> None:
    report = rand_cipher.uniformity_report(present_keys, 10, 1024 * 200, seed=1, mode=IndexMode.BUGGY)
    assert not report.within_band
    assert min(report.chi_square) > 2 * report.band[1]


def test_uniformity_rejects_empty_sample(present_keys: KeyPair) -> None:
    with pytest.raises(ArgumentError):
        rand_cipher.uniformity_report(present_keys, 8, 0, seed=1)


@pytest.mark.slow
def test_uniformity_reference_scale(present_keys: KeyPair) -> None:
    report = rand_cipher.uniformity_report(present_keys, 14, 2**21, seed=2023)
    assert report.within_band
    buggy = rand_cipher.uniformity_report(present_keys, 14, 2**21, seed=2023, mode=IndexMode.BUGGY)
    assert min(buggy.chi_square) > 10 * buggy.band[1]
