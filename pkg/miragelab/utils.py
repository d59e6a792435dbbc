import csv
import hashlib
import json
import zlib
from collections.abc import Generator, Iterable, Sequence
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Literal, Type, Union

import numpy as np
from pydantic_settings import BaseSettings

CsvCell = Union[str, int, float, bool, None]


@contextmanager
def patch_config_value(
    cls: Type[BaseSettings],
    key: Literal["json_file", "yaml_file", "env_file"],
    value: Any,
) -> Generator[None, None, None]:
    old_value = cls.model_config.get(key)
    cls.model_config[key] = value
    try:
        yield
    finally:
        cls.model_config[key] = old_value


def stream_id(name: Union[str, int]) -> int:
    """
    Stable integer label for a named random stream.

    >>> stream_id("prime") == stream_id("prime")
    True
    >>> stream_id(7)
    7
    """
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


def derive_seed(master_seed: int, *path: Union[str, int]) -> int:
    """
    Derive a 64-bit child seed from the master seed and a path of stream labels.

    The child depends only on (master_seed, path), never on how many siblings were drawn or in
    which order, so trials can be scheduled in any order or in parallel.

    >>> derive_seed(1, "covert", 3) == derive_seed(1, "covert", 3)
    True
    >>> derive_seed(1, "covert", 3) != derive_seed(1, "covert", 4)
    True
    >>> 0 <= derive_seed(2**64 - 1, 0) < 2**64
    True
    """
    sequence = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(stream_id(p) for p in path))
    return int(sequence.generate_state(1, np.uint64)[0])


def canonical_json(data: Any) -> str:
    """
    >>> canonical_json({"b": 1, "a": [1, 2]})
    '{"a":[1,2],"b":1}'
    """
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)


def sha256_hex(data: Union[str, bytes]) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fin:
        for chunk in iter(lambda: fin.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def format_cell(value: CsvCell) -> str:
    """
    >>> [format_cell(v) for v in (None, True, 3, 0.5, 1 / 3, float("inf"))]
    ['', '1', '3', '0.500000', '0.333333', 'inf']
    """
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(
    path: Union[str, Path],
    header: Sequence[str],
    rows: Iterable[Sequence[CsvCell]],
    comment: Union[str, None] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fout:
        if comment is not None:
            fout.write(f"# {comment}\n")
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(cell) for cell in row])
    return path


def read_csv(path: Union[str, Path]) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Read a CSV written by :func:`write_csv`; returns the parsed comment fields and the rows."""
    meta: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fin:
        lines = fin.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for field in line.lstrip("#").split():
                if "=" in field:
                    key, value = field.split("=", 1)
                    meta[key] = value
        elif line.strip():
            body.append(line)
    return meta, list(csv.DictReader(body))


def provenance_comment(config_hash: str, master_seed: int) -> str:
    """
    >>> provenance_comment("ab12", 7)
    'config_hash=ab12 master_seed=7'
    """
    return f"config_hash={config_hash} master_seed={master_seed}"
