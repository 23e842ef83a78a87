# app/utils/io_utils.py

"""
Artifact writers and config loading. CSV floats are written with 17
significant digits so a reread reproduces every double exactly.
"""

import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

import orjson
import pandas as pd
from pydantic import BaseModel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from app.core.exceptions import ConfigError

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"
JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY


def _default(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_csv(path: PathLike, rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> Path:
    path = Path(path)
    frame = pd.DataFrame(list(rows), columns=list(columns))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(path: PathLike, data: Any) -> Path:
    path = Path(path)
    path.write_bytes(orjson.dumps(data, default=_default, option=JSON_OPTIONS) + b"\n")
    return path


def read_json(path: PathLike) -> Any:
    return orjson.loads(Path(path).read_bytes())


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def load_config_file(path: PathLike) -> Dict[str, Any]:
    """Flat TOML key/value file; nested tables are rejected."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid TOML: {exc}") from exc
    nested: List[str] = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(nested[0], "nested tables are not supported; use flat keys")
    return data
