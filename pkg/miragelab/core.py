import re
from datetime import datetime as _datetime
from datetime import timezone as _timezone
from typing import Any, Literal, Type, TypeVar, Union

import ulid
from dateutil.parser import parse as parse_datetime
from pydantic import BaseModel as PydanticBaseModel
from pydantic import ConfigDict, GetCoreSchemaHandler, TypeAdapter
from pydantic.alias_generators import to_camel
from pydantic.main import IncEx
from pydantic_core import core_schema
from ulid import ULID

StringT = TypeVar("StringT", bound="BaseString")
IntegerT = TypeVar("IntegerT", bound="BaseInteger")
FloatT = TypeVar("FloatT", bound="BaseFloat")
RunIdT = TypeVar("RunIdT", bound="RunId")
JsonAcceptable = Union[str, int, float, bool, None, dict[str, "JsonAcceptable"], list["JsonAcceptable"]]

WORD64_MASK = (1 << 64) - 1


class BaseString(str):
    """
    Root of the validated string values; subclasses normalize in ``_proc_str`` and add constraints.

    >>> TypeAdapter(BaseString).validate_python("present80")
    BaseString('present80')
    >>> TypeAdapter(BaseString).dump_json(BaseString("prince128"))
    b'"prince128"'
    """

    @classmethod
    def _proc_str(cls, s: str) -> str:
        return s

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({super().__repr__()})"

    @classmethod
    def __get_pydantic_core_schema__(cls, _source_type: Any, _handler: GetCoreSchemaHandler) -> core_schema.CoreSchema:
        return core_schema.no_info_after_validator_function(
            cls,
            core_schema.no_info_before_validator_function(
                cls._proc_str, core_schema.str_schema(**cls.__get_extra_constraint_dict__())
            ),
            serialization=core_schema.plain_serializer_function_ser_schema(cls.serialize, when_used="json"),
        )

    def serialize(self) -> JsonAcceptable:
        return str(self)

    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return {}

    @classmethod
    def from_str(cls: Type[StringT], v: str) -> StringT:
        return TypeAdapter(cls).validate_python(v)


class RegexMatchedStringMixIn(BaseString):
    @classmethod
    def get_pattern(cls) -> str:
        raise NotImplementedError

    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return super().__get_extra_constraint_dict__() | {"pattern": cls.get_pattern()}


class TrimmedStringMixIn(BaseString):
    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return super().__get_extra_constraint_dict__() | {"strip_whitespace": True}


class HexKey(TrimmedStringMixIn, RegexMatchedStringMixIn):
    """
    Hexadecimal key material as written in config files and test vectors.

    An optional ``0x`` prefix and ``_`` digit separators are dropped and the digits are lower-cased.

    >>> HexKey.from_str(" 0x0123_4567_89AB_CDEF_0000 ")
    HexKey('0123456789abcdef0000')
    >>> HexKey.from_str("00ff").as_int()
    255
    >>> HexKey.from_str("00ff").bit_width
    16
    >>> HexKey.from_int(1, bits=80)
    HexKey('00000000000000000001')
    """

    @classmethod
    def _proc_str(cls, s: str) -> str:
        s = s.strip().lower().replace("_", "")
        if s.startswith("0x"):
            s = s[2:]
        return super()._proc_str(s)

    @classmethod
    def get_pattern(cls) -> str:
        return r"^[0-9a-f]+$"

    def as_int(self) -> int:
        return int(self, 16)

    @property
    def bit_width(self) -> int:
        return 4 * len(self)

    @classmethod
    def from_int(cls, value: int, bits: int) -> "HexKey":
        return cls.from_str(f"{value:0{bits // 4}x}")


class BaseInteger(int):
    """
    Root of the validated integer values.

    >>> TypeAdapter(BaseInteger).validate_python(16384)
    BaseInteger(16384)
    >>> str(BaseInteger(14)), TypeAdapter(BaseInteger).dump_json(BaseInteger(14))
    ('14', b'14')
    """

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({super().__repr__()})"

    def __str__(self) -> str:
        return int.__repr__(self)

    @classmethod
    def __get_pydantic_core_schema__(cls, _source_type: Any, _handler: GetCoreSchemaHandler) -> core_schema.CoreSchema:
        return core_schema.no_info_after_validator_function(
            cls.validate,
            core_schema.int_schema(**cls.__get_extra_constraint_dict__()),
            serialization=core_schema.plain_serializer_function_ser_schema(cls.serialize, when_used="json"),
        )

    @classmethod
    def validate(cls: Type[IntegerT], value: Any) -> IntegerT:
        if isinstance(value, cls):
            return value
        if isinstance(value, int):
            return cls(value)
        raise ValueError(f"Cannot convert {value} to {cls.__name__}")

    def serialize(self) -> JsonAcceptable:
        return int(self)

    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return {}


class LowerBoundIntegerMixIn(BaseInteger):
    @classmethod
    def get_min_value(cls) -> int:
        raise NotImplementedError

    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return super().__get_extra_constraint_dict__() | {"ge": cls.get_min_value()}


class UpperBoundIntegerMixIn(BaseInteger):
    @classmethod
    def get_max_value(cls) -> int:
        raise NotImplementedError

    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return super().__get_extra_constraint_dict__() | {"le": cls.get_max_value()}


class Word64(LowerBoundIntegerMixIn):
    """
    Unsigned 64-bit word: cache-line addresses, cipher blocks and seeds.

    The upper bound does not fit a schema constraint, so it is checked after parsing.

    >>> ta = TypeAdapter(Word64)
    >>> ta.validate_python(0xFFFFFFFFFFFFFFFF)
    Word64(18446744073709551615)
    >>> ta.validate_python(1 << 64)
    Traceback (most recent call last):
     ...
    pydantic_core._pydantic_core.ValidationError: 1 validation error for ...
    """

    @classmethod
    def get_min_value(cls) -> int:
        return 0

    @classmethod
    def validate(cls, value: Any) -> "Word64":
        if isinstance(value, int) and value > WORD64_MASK:
            raise ValueError(f"{value:#x} does not fit in 64 bits")
        return super().validate(value)


class Count(LowerBoundIntegerMixIn):
    @classmethod
    def get_min_value(cls) -> int:
        return 0


class IndexBits(LowerBoundIntegerMixIn, UpperBoundIntegerMixIn):
    @classmethod
    def get_min_value(cls) -> int:
        return 1

    @classmethod
    def get_max_value(cls) -> int:
        return 30


class BaseFloat(float):
    """
    Root of the validated float values.

    >>> BaseFloat(0.5)
    BaseFloat(0.5)
    >>> TypeAdapter(BaseFloat).dump_json(BaseFloat(0.25))
    b'0.25'
    """

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({super().__repr__()})"

    def __str__(self) -> str:
        return float.__repr__(self)

    @classmethod
    def __get_pydantic_core_schema__(cls, _source_type: Any, _handler: GetCoreSchemaHandler) -> core_schema.CoreSchema:
        return core_schema.no_info_after_validator_function(
            cls.validate,
            core_schema.float_schema(**cls.__get_extra_constraint_dict__()),
            serialization=core_schema.plain_serializer_function_ser_schema(cls.serialize, when_used="json"),
        )

    @classmethod
    def validate(cls: Type[FloatT], value: Any) -> FloatT:
        if isinstance(value, cls):
            return value
        if isinstance(value, (float, int)):
            return cls(value)
        raise ValueError(f"Cannot convert {value} to {cls.__name__}")

    def serialize(self) -> JsonAcceptable:
        return float(self)

    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return {}


class LowerBoundFloatMixIn(BaseFloat):
    @classmethod
    def get_min_value(cls) -> float:
        raise NotImplementedError

    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return super().__get_extra_constraint_dict__() | {"ge": cls.get_min_value()}


class UpperBoundFloatMixIn(BaseFloat):
    @classmethod
    def get_max_value(cls) -> float:
        raise NotImplementedError

    @classmethod
    def __get_extra_constraint_dict__(cls) -> dict[str, Any]:
        return super().__get_extra_constraint_dict__() | {"le": cls.get_max_value()}


class Probability(LowerBoundFloatMixIn, UpperBoundFloatMixIn):
    """
    A probability in [0, 1].

    >>> TypeAdapter(Probability).validate_python(0.5)
    Probability(0.5)
    >>> Probability.clamp(1.7)
    Probability(1.0)
    >>> Probability.clamp(-0.1)
    Probability(0.0)
    """

    @classmethod
    def get_min_value(cls) -> float:
        return 0.0

    @classmethod
    def get_max_value(cls) -> float:
        return 1.0

    @classmethod
    def clamp(cls, value: float) -> "Probability":
        return cls(min(1.0, max(0.0, value)))


class RunId(ULID):
    r"""RunId identifies one harness run; ULID strings sort by creation time.

    >>> RunId(ulid.from_int(1))
    RunId('00000000000000000000000001')
    >>> RunId("01HRQ0KA867PDGYJXAVGKG3R1V")
    RunId('01HRQ0KA867PDGYJXAVGKG3R1V')
    >>> RunId("01HRQ0KA867PDGYJ")
    Traceback (most recent call last):
     ...
    ValueError: Invalid ULID string: 01HRQ0KA867PDGYJ
    """

    def __init__(self, value: Union[str, ULID, bytes]) -> None:
        if isinstance(value, ULID):
            super(RunId, self).__init__(value.bytes)
            return
        if isinstance(value, bytes):
            super(RunId, self).__init__(value)
            return
        if len(value) != 26:
            raise ValueError(f"Invalid ULID string: {value}")
        super(RunId, self).__init__(ulid.base32.decode_ulid(value))

    @classmethod
    def generate(cls: Type[RunIdT]) -> RunIdT:
        return cls(ulid.new())

    def serialize(self) -> str:
        return str(self)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}('{self.str}')"

    @classmethod
    def validate(cls: Type[RunIdT], value: Any) -> RunIdT:
        if isinstance(value, cls):
            return value
        if isinstance(value, (ULID, str)):
            return cls(value)
        raise ValueError(f"Cannot convert {value} to {cls}")

    @classmethod
    def __get_pydantic_core_schema__(cls, _source_type: Any, _handler: GetCoreSchemaHandler) -> core_schema.CoreSchema:
        return core_schema.no_info_plain_validator_function(
            cls.validate,
            serialization=core_schema.plain_serializer_function_ser_schema(cls.serialize, when_used="json"),
        )


class Timestamp(int):
    """
    Microseconds since the epoch, UTC.

    >>> Timestamp(1700000000000000).datetime
    datetime.datetime(2023, 11, 14, 22, 13, 20, tzinfo=datetime.timezone.utc)
    >>> Timestamp("2024-03-14T18:52:43.5Z")
    Timestamp(1710442363500000)
    >>> Timestamp("yesterday-ish")
    Traceback (most recent call last):
      ...
    dateutil.parser._parser.ParserError: Unknown string format: yesterday-ish
    """

    def __new__(cls, value: Union[int, float, _datetime, str]) -> "Timestamp":
        if isinstance(value, _datetime):
            if value.tzinfo is None:
                value = value.replace(tzinfo=_timezone.utc)
            return super(Timestamp, cls).__new__(cls, int(value.timestamp() * 1000000))
        if isinstance(value, str):
            return super(Timestamp, cls).__new__(cls, int(parse_datetime(value).timestamp() * 1000000))
        if isinstance(value, float):
            return super(Timestamp, cls).__new__(cls, int(value * 1000000))
        return super(Timestamp, cls).__new__(cls, value)

    @classmethod
    def validate(cls, v: Any) -> "Timestamp":
        if isinstance(v, cls):
            return v
        if isinstance(v, (int, float, _datetime, str)):
            return cls(v)
        raise ValueError(f"Cannot convert {v} to {cls}")

    @property
    def datetime(self) -> _datetime:
        return _datetime.fromtimestamp(self / 1000000, tz=_timezone.utc)

    @classmethod
    def now(cls) -> "Timestamp":
        return cls(_datetime.now(tz=_timezone.utc))

    def isoformat(self) -> str:
        return self.datetime.isoformat()

    def __repr__(self) -> str:
        return f"Timestamp({super(Timestamp, self).__repr__()})"

    @classmethod
    def __get_pydantic_core_schema__(cls, _source_type: Any, _handler: GetCoreSchemaHandler) -> core_schema.CoreSchema:
        return core_schema.no_info_plain_validator_function(
            cls.validate,
            serialization=core_schema.plain_serializer_function_ser_schema(cls.serialize, when_used="json"),
        )

    def serialize(self) -> str:
        return self.isoformat()


class BaseModel(PydanticBaseModel):
    """
    >>> class DerivedModel(BaseModel):
    ...   victim_accesses: int
    >>> x = DerivedModel(victim_accesses=1000)
    >>> x
    DerivedModel(victim_accesses=1000)
    >>> x.model_dump_json()
    '{"victimAccesses":1000}'
    >>> DerivedModel.model_validate_json('{"victim_accesses":500}')
    DerivedModel(victim_accesses=500)
    """

    model_config = ConfigDict(populate_by_name=True, alias_generator=to_camel, validate_assignment=True)

    def model_dump_json(
        self,
        *,
        indent: int | None = None,
        include: IncEx | None = None,
        exclude: IncEx | None = None,
        context: Any | None = None,
        by_alias: bool = True,
        exclude_unset: bool = False,
        exclude_defaults: bool = False,
        exclude_none: bool = False,
        round_trip: bool = False,
        warnings: bool | Literal["none"] | Literal["warn"] | Literal["error"] = True,
        serialize_as_any: bool = False,
    ) -> str:
        return super().model_dump_json(
            indent=indent,
            include=include,
            exclude=exclude,
            context=context,
            by_alias=by_alias,
            exclude_unset=exclude_unset,
            exclude_defaults=exclude_defaults,
            exclude_none=exclude_none,
            round_trip=round_trip,
            warnings=warnings,
            serialize_as_any=serialize_as_any,
        )


class FrozenModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True, alias_generator=to_camel, frozen=True)


def is_power_of_two(value: int) -> bool:
    """
    >>> [is_power_of_two(v) for v in (0, 1, 2, 3, 16384)]
    [False, True, True, False, True]
    """
    return value > 0 and value & (value - 1) == 0


_HEX_LINE = re.compile(r"^\s*(0x)?[0-9a-fA-F_]+\s*$")


def parse_hex_word(text: str) -> int:
    """
    Parse one hexadecimal 64-bit word, as found in trace files.

    >>> parse_hex_word("0x0123456789abcdef")
    81985529216486895
    >>> parse_hex_word("1_0000")
    65536
    >>> parse_hex_word("zz")
    Traceback (most recent call last):
     ...
    ValueError: Not a hexadecimal word: 'zz'
    """
    if not _HEX_LINE.match(text):
        raise ValueError(f"Not a hexadecimal word: {text!r}")
    value = int(text.strip().lower().replace("_", "").removeprefix("0x"), 16)
    if value > WORD64_MASK:
        raise ValueError(f"Word wider than 64 bits: {text!r}")
    return value
