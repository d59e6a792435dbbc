import re
from collections.abc import Sequence
from datetime import datetime, timezone
from typing import Any, Tuple, TypeAlias, Union

import pytest
from freezegun import freeze_time
from pydantic import ValidationError
from pytest_mock import MockerFixture
from ulid import ULID

from miragelab import core

word64_cases: Sequence[Tuple[Any, Union[Exception, int]]] = [
    (0, 0),
    (2**64 - 1, 2**64 - 1),
    (-1, ValueError("Input should be greater than or equal to 0")),
    (2**64, ValueError("0x10000000000000000 does not fit in 64 bits")),
]

index_bits_cases: Sequence[Tuple[Any, Union[Exception, int]]] = [
    (1, 1),
    (14, 14),
    (30, 30),
    (0, ValueError("Input should be greater than or equal to 1")),
    (31, ValueError("Input should be less than or equal to 30")),
]

count_cases: Sequence[Tuple[Any, Union[Exception, int]]] = [
    (0, 0),
    (10_000, 10_000),
    (-5, ValueError("Input should be greater than or equal to 0")),
]

probability_cases: Sequence[Tuple[Any, Union[Exception, float]]] = [
    (0.0, 0.0),
    (1.0, 1.0),
    (0.25, 0.25),
    (1, 1.0),
    (-0.01, ValueError("Input should be greater than or equal to 0")),
    (1.5, ValueError("Input should be less than or equal to 1")),
]

hex_key_cases: Sequence[Tuple[Any, Union[Exception, str]]] = [
    ("00ff", "00ff"),
    ("0xABCD", "abcd"),
    ("  dead_beef  ", "deadbeef"),
    ("xyz", ValueError("String should match pattern '^[0-9a-f]+$'")),
]


@pytest.mark.parametrize(
    argnames=["sut", "test_cases"],
    argvalues=[(core.Word64, word64_cases), (core.IndexBits, index_bits_cases), (core.Count, count_cases)],
)
def test_integer_types(sut: TypeAlias, test_cases: Sequence[Tuple[int, Union[Exception, int]]]) -> None:
    class TestModel(core.BaseModel):
        value: sut

    for test_case, expected in test_cases:
        if isinstance(expected, Exception):
            with pytest.raises(ValidationError, match=re.escape(str(expected))):
                TestModel(value=test_case)
        else:
            actual = TestModel(value=test_case)
            assert actual.value == expected
            assert isinstance(actual.value, sut)


def test_probability_type() -> None:
    class TestModel(core.BaseModel):
        value: core.Probability

    for test_case, expected in probability_cases:
        if isinstance(expected, Exception):
            with pytest.raises(ValidationError, match=re.escape(str(expected))):
                TestModel(value=test_case)
        else:
            actual = TestModel(value=test_case)
            assert actual.value == expected
            assert isinstance(actual.value, core.Probability)


def test_hex_key_type() -> None:
    class TestModel(core.BaseModel):
        value: core.HexKey

    for test_case, expected in hex_key_cases:
        if isinstance(expected, Exception):
            with pytest.raises(ValidationError, match=re.escape(str(expected))):
                TestModel(value=test_case)
        else:
            actual = TestModel(value=test_case)
            assert actual.value == expected


def test_hex_key_round_trips_through_int() -> None:
    key = core.HexKey.from_int(0xFEDCBA9876543210FEDC, bits=80)
    assert key == "fedcba9876543210fedc"
    assert key.bit_width == 80
    assert key.as_int() == 0xFEDCBA9876543210FEDC


def test_probability_clamp() -> None:
    assert core.Probability.clamp(3.0) == 1.0
    assert core.Probability.clamp(-2.0) == 0.0
    assert core.Probability.clamp(0.3) == 0.3


def test_run_id_generates_inherited_class_instance() -> None:
    class MyRunId(core.RunId): ...

    actual = MyRunId.generate()
    assert isinstance(actual, MyRunId)
    assert isinstance(actual, core.RunId)


def test_run_id_uses_ulid(mocker: MockerFixture) -> None:
    mocker.patch("miragelab.core.ulid.new", return_value=ULID(b"\x01\x8e.\t\xa9\x06=\x9b\x0fK\xaa\xdc'\x01\xe0;"))

    actual = core.RunId.generate()
    assert actual == core.RunId("01HRQ0KA867PDGYJXAVGKG3R1V")


def test_timestamp_now() -> None:
    dt = datetime(2024, 3, 14, 18, 52, 43, 123456, tzinfo=timezone.utc)
    with freeze_time(dt):
        actual = core.Timestamp.now()
    expected = core.Timestamp(dt)
    assert actual == expected


def test_timestamp_serializes_as_isoformat() -> None:
    class Stamped(core.BaseModel):
        created_at: core.Timestamp

    stamped = Stamped(created_at=core.Timestamp(datetime(2024, 3, 14, 18, 52, 43, tzinfo=timezone.utc)))
    assert stamped.model_dump_json() == '{"createdAt":"2024-03-14T18:52:43+00:00"}'


def test_base_model_dumps_camel_case_and_accepts_both_names() -> None:
    class Report(core.BaseModel):
        miss_count: int
        bit_sent: int

    report = Report(miss_count=450, bit_sent=0)
    assert report.model_dump_json() == '{"missCount":450,"bitSent":0}'
    assert report.model_dump_json(by_alias=False) == '{"miss_count":450,"bit_sent":0}'
    assert Report.model_validate({"missCount": 1, "bitSent": 1}) == Report(miss_count=1, bit_sent=1)


def test_base_model_validates_assignment() -> None:
    class Report(core.BaseModel):
        miss_count: core.Count

    report = Report(miss_count=1)
    with pytest.raises(ValidationError):
        report.miss_count = -1  # type: ignore[assignment]


def test_frozen_model_rejects_assignment() -> None:
    class Point(core.FrozenModel):
        x: int

    point = Point(x=1)
    with pytest.raises(ValidationError):
        point.x = 2  # type: ignore[misc]
    assert hash(point) == hash(Point(x=1))


@pytest.mark.parametrize(
    ["text", "expected"],
    [
        ["0x10", 16],
        ["ffffffffffffffff", 2**64 - 1],
        [" 1_000 ", 4096],
    ],
)
def test_parse_hex_word(text: str, expected: int) -> None:
    assert core.parse_hex_word(text) == expected


@pytest.mark.parametrize("text", ["", "0x", "12g", "1" * 17])
def test_parse_hex_word_rejects_garbage(text: str) -> None:
    with pytest.raises(ValueError):
        core.parse_hex_word(text)
