"""
Configuration files: `key = value` per line, `#` starts a comment.
"""

from errors import ConfigError
from fields import DESCRIPTION, defaults


def _coerce(key, value, line):
    kind = DESCRIPTION[key][1]
    if kind is bool:
        lowered = value.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ConfigError("%s expects True or False, got %r" % (key, value), line=line)
    try:
        return kind(value)
    except ValueError as exc:
        raise ConfigError(
            "%s expects %s, got %r" % (key, kind.__name__, value), line=line
        ) from exc


def parse_config_text(text):
    """
    Parse configuration `text` into {key: value}, defaults filled in.
    Unknown keys, repeated keys and malformed lines raise ConfigError
    with the line number.
    """

    result = defaults()
    seen = set()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=number)
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if key not in DESCRIPTION:
            raise ConfigError("unknown key %r" % key, line=number)
        if key in seen:
            raise ConfigError("key %r given twice" % key, line=number)
        seen.add(key)
        result[key] = _coerce(key, value, number)
    return result


def parse_config(filename):
    try:
        with open(filename, "r", encoding="utf-8") as f_config:
            text = f_config.read()
    except OSError as exc:
        raise ConfigError("cannot read %s: %s" % (filename, exc)) from exc
    return parse_config_text(text)


def serialize_config(values):
    """
    Canonical text of `values`: known keys only, sorted
    """

    lines = []
    for key in sorted(values):
        if key not in DESCRIPTION:
            continue
        value = values[key]
        if isinstance(value, float):
            value = repr(value)
        lines.append("%s = %s" % (key, value))
    return "\n".join(lines) + "\n"
