from .analytics import (
    BucketBallParams,
    OccupancyForm,
    SpillStats,
    any_bucket_exact_prob,
    birthday_accesses,
    birthday_accesses_exact,
    bucket_ball_simulate,
    expected_first_collision,
    m_way_requirement,
    spill_prob_birth_death,
)
from .attacks import (
    AttackSetup,
    Classification,
    CovertReport,
    PrimeConfig,
    Template,
    TrialRecord,
    build_templates,
    classify,
    covert_transmit,
    occupancy_trial,
    prime,
    probe,
    victim_run,
)
from .core import BaseModel, FrozenModel, HexKey, Probability, RunId, Timestamp
from .errors import ArgumentError, ConfigurationError, ExitCode, MirageLabError
from .mirage_sim import (
    AccessKind,
    AccessOutcome,
    BaselineCache,
    BaselineConfig,
    CacheStats,
    MirageCache,
    MirageConfig,
    access,
    lookup,
    new_cache,
    occupancy,
    stats,
)
from .rand_cipher import (
    BlockCipherKey,
    CipherAlgorithm,
    IndexMode,
    KeyPair,
    SiblingIndices,
    decrypt,
    derive_sibling_indices,
    derive_sibling_indices_buggy,
    encrypt,
)
from .settings import ExperimentConfig

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AccessKind",
    "AccessOutcome",
    "ArgumentError",
    "AttackSetup",
    "BaseModel",
    "BaselineCache",
    "BaselineConfig",
    "BlockCipherKey",
    "BucketBallParams",
    "CacheStats",
    "CipherAlgorithm",
    "Classification",
    "ConfigurationError",
    "CovertReport",
    "OccupancyForm",
    "ExitCode",
    "ExperimentConfig",
    "FrozenModel",
    "HexKey",
    "IndexMode",
    "KeyPair",
    "MirageCache",
    "MirageConfig",
    "MirageLabError",
    "PrimeConfig",
    "Probability",
    "RunId",
    "SiblingIndices",
    "SpillStats",
    "Template",
    "Timestamp",
    "TrialRecord",
    "access",
    "any_bucket_exact_prob",
    "birthday_accesses",
    "birthday_accesses_exact",
    "bucket_ball_simulate",
    "build_templates",
    "classify",
    "covert_transmit",
    "decrypt",
    "derive_sibling_indices",
    "derive_sibling_indices_buggy",
    "encrypt",
    "expected_first_collision",
    "lookup",
    "m_way_requirement",
    "new_cache",
    "occupancy",
    "occupancy_trial",
    "prime",
    "probe",
    "spill_prob_birth_death",
    "stats",
    "victim_run",
]
