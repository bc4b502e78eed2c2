from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Mapping

DEFAULTS = {"verbose": False, "level": 1}


@dataclass
class Config:
    name: str
    values: dict = field(default_factory=dict)

    def get(self, key, fallback=None):
        if key in self.values:
            return self.values[key]
        return DEFAULTS.get(key, fallback)

    def merged(self, other: Mapping) -> "Config":
        values = dict(self.values)
        values.update(other)
        return Config(self.name, values)


try:
    import json as _json
except ImportError:  # pragma: no cover
    _json = None

if _json is not None:
    def load_json(text):
        return Config("json", _json.loads(text))
else:  # pragma: no cover
    def load_json(text):
        raise RuntimeError("no json support")
