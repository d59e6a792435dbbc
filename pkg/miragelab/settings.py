import random
from pathlib import Path
from typing import Any, Optional, Type, TypeVar

from pydantic import Field, FilePath, field_validator
from pydantic_settings import BaseSettings as PydanticBaseSettings
from pydantic_settings import (
    JsonConfigSettingsSource,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    YamlConfigSettingsSource,
)

from .attacks import AttackSetup, CovertSymbol, PrimeConfig
from .core import WORD64_MASK, HexKey
from .mirage_sim import BaselineConfig, MirageConfig
from .rand_cipher import BlockCipherKey, CipherAlgorithm, IndexMode, KeyPair, random_key_pair
from .utils import canonical_json, derive_seed, patch_config_value, sha256_hex

SettingsClassT = TypeVar("SettingsClassT", bound="BaseSettings")

# fields that change where or how fast a run happens, never what it produces
NON_RESULT_FIELDS = frozenset({"out_dir", "jobs"})


class BaseSettings(PydanticBaseSettings):
    """Base settings for the application.

    Values come, in decreasing priority, from keyword arguments, a JSON file, a YAML file,
    environment variables (nested ones use ``__``) and a dotenv-style flat file.

    >>> class SomeSettings(BaseSettings):
    ...     some_value: str
    ...
    >>> class SomeNestedSettings(BaseSettings):
    ...     some_nested_value: SomeSettings
    ...
    >>> import os
    >>> from unittest.mock import patch
    >>> with patch.dict(os.environ, {"SOME_NESTED_VALUE__SOME_VALUE": "value"}):
    ...     settings = SomeNestedSettings()
    >>> settings.some_nested_value.some_value
    'value'
    """

    model_config = SettingsConfigDict(env_file_encoding="utf-8", env_nested_delimiter="__")

    config_path: Optional[FilePath] = Field(default=None, exclude=True)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[PydanticBaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            JsonConfigSettingsSource(settings_cls),
            YamlConfigSettingsSource(settings_cls),
            env_settings,
            dotenv_settings,
            file_secret_settings,
        )

    @classmethod
    def load(
        cls: Type[SettingsClassT], setting_file_path: Optional[str] = None, **overrides: Any
    ) -> SettingsClassT:
        """Load from a ``.json``, ``.yaml``/``.yml`` or flat ``KEY=VALUE`` file; ``overrides`` win over the file."""
        if setting_file_path is not None:
            if not Path(setting_file_path).is_file():
                raise FileNotFoundError(setting_file_path)
            if setting_file_path.endswith(".json"):
                with patch_config_value(cls, "json_file", setting_file_path):
                    return cls(**overrides)
            if setting_file_path.endswith(".yaml") or setting_file_path.endswith(".yml"):
                with patch_config_value(cls, "yaml_file", setting_file_path):
                    return cls(**overrides)
            with patch_config_value(cls, "env_file", setting_file_path):
                return cls(**overrides)
        return cls(**overrides)


class ExperimentConfig(BaseSettings):
    """
    Every knob of an experiment run, defaulting to the reference 16MB 8+6-way design.

    >>> config = ExperimentConfig()
    >>> config.mirage_config().data_capacity
    131072
    >>> len(config.template_accesses)
    16
    >>> config.config_hash() == ExperimentConfig(out_dir="elsewhere", jobs=4).config_hash()
    True
    """

    model_config = SettingsConfigDict(env_prefix="MIRAGE_", extra="forbid")

    skews: int = Field(default=2, ge=1)
    sets_per_skew: int = Field(default=16384, ge=1)
    base_ways: int = Field(default=8, ge=1)
    extra_ways: int = Field(default=6, ge=0)
    cipher: CipherAlgorithm = CipherAlgorithm.PRESENT80
    key1: Optional[HexKey] = None
    key2: Optional[HexKey] = None
    bug_mode: bool = False

    prime_count: int = Field(default=10_000, ge=1)
    address_stride: int = Field(default=1_000, ge=1)
    prime_base_address: int = Field(default=0x1000_0000, ge=0)
    sender_base_address: int = Field(default=0x4000_0000, ge=0)
    low_accesses: int = Field(default=1_000, ge=0)
    high_accesses: int = Field(default=4_000, ge=1)
    calibration_trials: int = Field(default=30, ge=1)
    settle_passes: int = Field(default=0, ge=0)

    template_accesses: list[int] = Field(default_factory=lambda: list(range(500, 8001, 500)))
    template_trials: int = Field(default=100, ge=2)
    template_settle_passes: int = Field(default=1, ge=0)
    classification_trials: int = Field(default=500, ge=1)

    trials: int = Field(default=100, ge=1)
    installs: int = Field(default=1_000_000, ge=0)
    uniformity_samples: int = Field(default=2**21, ge=1)
    baseline_sets: int = Field(default=16384, ge=1)
    baseline_ways: int = Field(default=16, ge=1)

    master_seed: int = Field(default=2023, ge=0)
    out_dir: Path = Path("results")
    jobs: int = Field(default=1, ge=1)

    @field_validator("cipher", mode="before")
    @classmethod
    def _parse_cipher(cls, value: Any) -> Any:
        if isinstance(value, str):
            return CipherAlgorithm.parse(value)
        return value

    @field_validator("master_seed")
    @classmethod
    def _fits_64_bits(cls, value: int) -> int:
        if value > WORD64_MASK:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        return value

    @property
    def index_mode(self) -> IndexMode:
        return IndexMode.BUGGY if self.bug_mode else IndexMode.CORRECT

    def key_pair(self) -> KeyPair:
        """The configured keys, or a pair drawn from the master seed when either is missing."""
        if self.key1 is None or self.key2 is None:
            return random_key_pair(self.cipher, random.Random(derive_seed(self.master_seed, "keys")))
        return KeyPair(
            k1=BlockCipherKey.from_hex(self.cipher, self.key1),
            k2=BlockCipherKey.from_hex(self.cipher, self.key2),
        )

    def mirage_config(self, rng_seed: Optional[int] = None) -> MirageConfig:
        return MirageConfig(
            skews=self.skews,
            sets_per_skew=self.sets_per_skew,
            base_ways=self.base_ways,
            extra_ways=self.extra_ways,
            keys=self.key_pair(),
            mode=self.index_mode,
            rng_seed=derive_seed(self.master_seed, "cache") if rng_seed is None else rng_seed,
        )

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(sets=self.baseline_sets, ways=self.baseline_ways)

    def prime_config(self, settle_passes: Optional[int] = None) -> PrimeConfig:
        return PrimeConfig(
            prime_count=self.prime_count,
            address_stride=self.address_stride,
            base_address=self.prime_base_address,
            settle_passes=self.settle_passes if settle_passes is None else settle_passes,
        )

    def attack_setup(self, settle_passes: Optional[int] = None) -> AttackSetup:
        return AttackSetup(
            cache=self.mirage_config(),
            prime=self.prime_config(settle_passes),
            symbol=CovertSymbol(bit=0, low_accesses=self.low_accesses, high_accesses=self.high_accesses),
            sender_base_address=self.sender_base_address,
            sender_stride=self.address_stride,
            calibration_trials=self.calibration_trials,
            baseline=self.baseline_config(),
            jobs=self.jobs,
        )

    def config_hash(self) -> str:
        payload = self.model_dump(mode="json", exclude=set(NON_RESULT_FIELDS))
        return sha256_hex(canonical_json(payload))
