import json
from pathlib import Path
from typing import Type, TypeVar

import dataclasses_json
import numpy as np


def _to_builtin(obj):
    if isinstance(obj, dict):
        return {k: _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, list | tuple):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps_json(obj: dataclasses_json.DataClassJsonMixin, **kwargs) -> str:
    """Serialize report dataclasses to JSON."""
    return json.dumps(_to_builtin(obj.to_dict()), **kwargs)


def dump_json(obj: dataclasses_json.DataClassJsonMixin, path: Path):
    with open(path, "w") as f:
        f.write(dumps_json(obj, indent=2))


G = TypeVar("G", bound=dataclasses_json.DataClassJsonMixin)


def loads_json(s: str, cls: Type[G]) -> G:
    """Deserialize JSON to report dataclasses."""
    return cls.from_dict(json.loads(s))


def load_json(path: Path, cls: Type[G]) -> G:
    with open(path) as f:
        return loads_json(f.read(), cls)
