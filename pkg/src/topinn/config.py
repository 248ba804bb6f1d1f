"""Flat key=value run configuration.

One `key = value` pair per line; dotted prefixes (case.*, net.*, train.*,
loss.*) group related keys without any section syntax, so files stay
greppable and diffs stay line-local.  Values are kept as strings until a
caller asks for them with a cast.
"""

import os

from .errors import ConfigError

_MISSING = object()


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


class Config:
    """Parsed key=value file with line-number diagnostics."""

    def __init__(self, entries=None, path="<config>"):
        # key -> (raw string, line number); line 0 marks injected values
        self.entries = dict(entries or {})
        self.path = path

    @classmethod
    def from_file(cls, path):
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        entries = {}
        with open(path) as f:
            for no, line in enumerate(f, start=1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                if "=" not in text:
                    raise ConfigError(f"{path}:{no}: expected 'key = value'")
                key, raw = (t.strip() for t in text.split("=", 1))
                if not key:
                    raise ConfigError(f"{path}:{no}: empty key")
                if key in entries:
                    raise ConfigError(
                        f"{path}:{no}: duplicate key '{key}' "
                        f"(first set on line {entries[key][1]})")
                entries[key] = (raw, no)
        return cls(entries, path)

    def has(self, key):
        return key in self.entries

    def get(self, key, cast=str, default=_MISSING):
        if key not in self.entries:
            if default is _MISSING:
                raise ConfigError(f"{self.path}: missing config key '{key}'")
            return default
        raw, no = self.entries[key]
        conv = _parse_bool if cast is bool else cast
        try:
            return conv(raw)
        except (ValueError, TypeError):
            raise ConfigError(
                f"{self.path}:{no}: key '{key}' expects "
                f"{cast.__name__}, got '{raw}'") from None

    def get_list(self, key, cast=float, default=_MISSING):
        """Comma-separated list value."""
        if key not in self.entries:
            if default is _MISSING:
                raise ConfigError(f"{self.path}: missing config key '{key}'")
            return default
        raw, no = self.entries[key]
        try:
            return tuple(cast(t.strip()) for t in raw.split(",") if t.strip())
        except (ValueError, TypeError):
            raise ConfigError(
                f"{self.path}:{no}: key '{key}' expects a comma list of "
                f"{cast.__name__}, got '{raw}'") from None

    def get_drops(self, key, default=_MISSING):
        """Step-size drop plan: 'epoch:rate,epoch:rate,...'."""
        if key not in self.entries:
            if default is _MISSING:
                raise ConfigError(f"{self.path}: missing config key '{key}'")
            return default
        raw, no = self.entries[key]
        out = []
        try:
            for item in raw.split(","):
                item = item.strip()
                if not item:
                    continue
                e, r = item.split(":")
                out.append((int(e), float(r)))
        except ValueError:
            raise ConfigError(
                f"{self.path}:{no}: key '{key}' expects 'epoch:rate,...', "
                f"got '{raw}'") from None
        return tuple(out)

    def override(self, key, value):
        """Return a copy with `key` set to `value` (stringified)."""
        entries = dict(self.entries)
        entries[key] = (str(value), 0)
        return Config(entries, self.path)

    def write(self, path):
        """Dump the resolved pairs, sorted, one per line."""
        with open(path, "w") as f:
            for key in sorted(self.entries):
                f.write(f"{key} = {self.entries[key][0]}\n")
