import os
import random
from collections.abc import Generator

import pytest
from pytest import fixture
from pytest_mock import MockerFixture

from miragelab.attacks import AttackSetup, CovertSymbol, PrimeConfig
from miragelab.mirage_sim import BaselineConfig, MirageConfig
from miragelab.rand_cipher import BlockCipherKey, CipherAlgorithm, KeyPair, random_key_pair


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="run reference-scale simulations")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@fixture
def test_dir() -> Generator[str, None, None]:
    yield os.path.abspath(os.path.dirname(__file__))


@fixture
def fixtures_dir(test_dir: str) -> Generator[str, None, None]:
    yield os.path.join(test_dir, "fixtures")


@fixture
def settings_json_path(fixtures_dir: str) -> Generator[str, None, None]:
    yield os.path.join(fixtures_dir, "settings.json")


@fixture
def settings_yaml_path(fixtures_dir: str) -> Generator[str, None, None]:
    yield os.path.join(fixtures_dir, "settings.yaml")


@fixture
def settings_yml_path(fixtures_dir: str) -> Generator[str, None, None]:
    yield os.path.join(fixtures_dir, "settings.yml")


@fixture
def settings_env_path(fixtures_dir: str) -> Generator[str, None, None]:
    yield os.path.join(fixtures_dir, "settings.env")


@fixture
def trace_path(fixtures_dir: str) -> Generator[str, None, None]:
    yield os.path.join(fixtures_dir, "trace.txt")


@fixture
def mirage_envvar(mocker: MockerFixture) -> Generator[None, None, None]:
    mocker.patch.dict(
        os.environ,
        {
            "MIRAGE_SETS_PER_SKEW": "1024",
            "MIRAGE_CIPHER": "prince",
            "MIRAGE_MASTER_SEED": "99",
        },
    )
    yield


@fixture
def present_keys() -> Generator[KeyPair, None, None]:
    yield KeyPair(
        k1=BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=0x0123456789ABCDEF0123),
        k2=BlockCipherKey(algorithm=CipherAlgorithm.PRESENT80, key_bits=0xFEDCBA9876543210FEDC),
    )


@fixture
def prince_keys() -> Generator[KeyPair, None, None]:
    yield random_key_pair(CipherAlgorithm.PRINCE128, random.Random(7))


@fixture
def small_config(present_keys: KeyPair) -> Generator[MirageConfig, None, None]:
    """64 sets per skew, 4+2 ways: 256 data slots."""
    yield MirageConfig(sets_per_skew=64, base_ways=4, extra_ways=2, keys=present_keys, rng_seed=11)


@fixture
def tiny_config(present_keys: KeyPair) -> Generator[MirageConfig, None, None]:
    """Two sets per skew and no extra ways, so set-associative evictions come quickly."""
    yield MirageConfig(sets_per_skew=2, base_ways=2, extra_ways=0, keys=present_keys, rng_seed=3)


@fixture
def small_setup(present_keys: KeyPair) -> Generator[AttackSetup, None, None]:
    """A scaled-down attack: 1024 sets per skew, a 400-line prime and 40/400-access symbols."""
    yield AttackSetup(
        cache=MirageConfig(sets_per_skew=1024, keys=present_keys, rng_seed=5),
        prime=PrimeConfig(prime_count=400, address_stride=1000, base_address=0x1000_0000),
        symbol=CovertSymbol(low_accesses=40, high_accesses=400),
        sender_base_address=0x4000_0000,
        sender_stride=1000,
        calibration_trials=6,
        baseline=BaselineConfig(sets=1024, ways=16),
    )
