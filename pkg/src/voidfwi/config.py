"""Experiment configuration: sectioned ``key = value`` text with unit-suffixed keys.

Lengths may be given in metres (``_m``) or millimetres (``_mm``); internally
everything is SI. Times use ``_s`` and frequencies ``_hz``. Comments start
with ``#`` or ``;``. Unknown sections or keys are errors, as are overrides
that do not name a schema entry.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    """Raised with ``source:line:column`` context when possible."""

    def __init__(self, message: str, source: str = "<config>", line: int | None = None,
                 column: int | None = None):
        self.source, self.line, self.column = source, line, column
        where = source
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


@dataclass
class Entry:
    value: str
    line: int | None = None
    column: int | None = None


# unit classes: suffix -> factor to SI
UNITS = {
    "length": {"_m": 1.0, "_mm": 1e-3},
    "time": {"_s": 1.0},
    "frequency": {"_hz": 1.0},
    "density": {"_kg_m3": 1.0},
    "speed": {"_m_s": 1.0},
}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> list:
    return [float(x) for x in re.split(r"[,\s]+", text.strip()) if x]


def _ints(text: str) -> list:
    return [int(x) for x in re.split(r"[,\s]+", text.strip()) if x]


def _words(text: str) -> list:
    return [x for x in re.split(r"[,\s]+", text.strip()) if x]


PRIMITIVE_RE = re.compile(r"\s*([a-z_]+)\s*\(([^()]*)\)\s*")


def parse_primitives(text: str) -> list:
    """``circle(35, 20, 7.5) + ellipse(...)`` into ``[(name, [numbers]), ...]``.

    Numbers carry the unit of the key the list belongs to.
    """
    text = text.strip()
    if text.lower() in ("", "none"):
        return []
    out = []
    for part in text.split("+"):
        m = PRIMITIVE_RE.fullmatch(part)
        if not m:
            raise ValueError(f"cannot parse primitive {part.strip()!r}")
        name = m.group(1)
        args = _floats(m.group(2)) if m.group(2).strip() else []
        expected = {"circle": (3,), "ellipse": (5,), "box": (4, 2), "below_spline": None}
        if name not in expected:
            raise ValueError(f"unknown primitive {name!r}; expected one of {sorted(expected)}")
        if name == "below_spline":
            if len(args) < 4 or len(args) % 2:
                raise ValueError("below_spline needs x,y pairs (at least two points)")
        elif len(args) not in expected[name]:
            raise ValueError(f"{name} takes {' or '.join(map(str, expected[name]))} numbers, got {len(args)}")
        out.append((name, args))
    return out


@dataclass(frozen=True)
class Key:
    kind: str  # int, float, str, bool, floats, ints, words, primitives
    default: Any = None
    unit: str | None = None  # unit class; the key is then written with a suffix
    choices: tuple | None = None
    doc: str = ""


SCHEMA: dict[str, dict[str, Key]] = {
    "experiment": {
        "kind": Key("str", "inversion", choices=("inversion", "interface1d", "plate2d", "gradient"),
                    doc="which driver the config is meant for"),
        "name": Key("str", "run"),
    },
    "grid": {
        "dimension": Key("int", 2, choices=(1, 2)),
        "extent_x": Key("float", 0.05, "length"),
        "extent_y": Key("float", 0.025, "length"),
        "element_size": Key("float", 0.0005, "length"),
        "degree": Key("int", 1),
        "quadtree_depth": Key("int", 5),
    },
    "material": {
        "tag": Key("str", "rho", choices=("rho", "c", "rhoc", "separate")),
        "rho0": Key("float", 2700.0, "density"),
        "c0": Key("float", 6000.0, "speed"),
        "lower": Key("float", 0.0),
        "upper": Key("float", 1.2),
    },
    "geometry": {
        "alpha_fict": Key("float", 1e-3, doc="indicator value in known voids"),
        "known": Key("primitives", "none", "length", doc="a priori known voids (indicator)"),
        "void": Key("primitives", "none", "length", doc="true unknown voids of the reference model"),
        "void_gamma": Key("float", 1e-5, doc="scaling value inside the true void"),
    },
    "array": {
        "count": Key("int", 16),
        "pitch": Key("float", 0.001, "length"),
        "center_x": Key("float", -1.0, "length", doc="negative: domain center"),
        "frequency": Key("float", 5e5, "frequency"),
        "cycles": Key("float", 2.0),
        "amplitude": Key("float", 1.0),
    },
    "time": {
        "delta_t": Key("float", 1e-8, "time"),
        "duration": Key("float", 2e-5, "time"),
        "stride": Key("int", 10),
    },
    "reference": {
        "element_size": Key("float", 0.00025, "length"),
        "quadtree_depth": Key("int", 6),
        "delta_t": Key("float", 5e-9, "time"),
        "same_as_inversion": Key("bool", False, doc="consistency checks only: no refinement"),
    },
    "inversion": {
        "max_iterations": Key("int", 10),
        "snapshot_iterations": Key("ints", "5, 10"),
        "memory": Key("int", 10),
        "initial_gamma": Key("float", 1.0),
        "mask": Key("str", "exclude_known", choices=("exclude_known", "all")),
        "batch": Key("int", 4, doc="sources marched together"),
    },
    "study": {
        "tags": Key("words", "rho, c, rhoc"),
        "snapshot_times": Key("floats", "0.5, 2.1, 3.5", "time"),
        "interface": Key("float", 2.0167, "length"),
        "pulse_center": Key("float", 0.5, "length"),
        "pulse_frequency": Key("float", 1.0, "frequency"),
        "error_time": Key("float", 3.5, "time"),
        "gamma_void": Key("float", 0.2, doc="void level of the idealized gradient state"),
    },
    "export": {
        "field": Key("str", ""),
        "format": Key("str", "csv_grid", choices=("csv_grid", "vtk_legacy_ascii")),
    },
}


def _converter(key: Key) -> Callable[[str], Any]:
    return {
        "int": int, "float": float, "str": lambda s: s.strip(), "bool": _bool,
        "floats": _floats, "ints": _ints, "words": _words, "primitives": parse_primitives,
    }[key.kind]


def _scale(value, key: Key, factor: float):
    if factor == 1.0 or key.kind in ("str", "bool", "int", "ints", "words"):
        return value
    if key.kind == "primitives":
        # angles (last ellipse argument) are not lengths
        out = []
        for name, args in value:
            if name == "ellipse":
                args = [a * factor for a in args[:4]] + [args[4]]
            else:
                args = [a * factor for a in args]
            out.append((name, args))
        return out
    if key.kind == "floats":
        return [v * factor for v in value]
    return value * factor


def resolve_key(section: str, raw_key: str) -> tuple[str, float]:
    """Schema name and SI factor of a (possibly unit-suffixed) key."""
    if section not in SCHEMA:
        raise KeyError(f"unknown section [{section}]; expected one of {sorted(SCHEMA)}")
    keys = SCHEMA[section]
    if raw_key in keys and keys[raw_key].unit is None:
        return raw_key, 1.0
    for name, key in keys.items():
        if key.unit is None:
            continue
        for suffix, factor in UNITS[key.unit].items():
            if raw_key == name + suffix:
                return name, factor
    valid = []
    for name, key in keys.items():
        valid += [name] if key.unit is None else [name + s for s in UNITS[key.unit]]
    raise KeyError(f"unknown key {raw_key!r} in [{section}]; valid keys: {', '.join(valid)}")


def read_entries(text: str, source: str = "<config>") -> dict:
    """Raw ``{section: {key: Entry}}`` with positions; syntax checks only."""
    out: dict[str, dict[str, Entry]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped[0] in "#;":
            continue
        col = len(raw) - len(raw.lstrip()) + 1
        if stripped.startswith("["):
            m = re.fullmatch(r"\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]\s*(?:[#;].*)?", stripped)
            if not m:
                raise ConfigError("malformed section header", source, lineno, col)
            section = m.group(1).lower()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", source, lineno, col + 1)
            out.setdefault(section, {})
            continue
        if "=" not in raw:
            raise ConfigError("expected 'key = value'", source, lineno, col)
        if section is None:
            raise ConfigError("key outside of any section", source, lineno, col)
        key_text, value = raw.split("=", 1)
        key = key_text.strip().lower()
        if not re.fullmatch(r"[a-z_][a-z0-9_]*", key):
            raise ConfigError(f"invalid key name {key_text.strip()!r}", source, lineno, col)
        value_col = len(key_text) + 2 + (len(value) - len(value.lstrip()))
        value = re.split(r"\s[#;]", value, maxsplit=1)[0].strip()
        if key in out[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", source, lineno, col)
        out[section][key] = Entry(value, lineno, value_col)
    return out


class Config:
    """Typed, SI-converted view of a config file plus overrides."""

    def __init__(self, values: dict, source: str = "<config>"):
        self.values = values
        self.source = source

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def as_text(self) -> str:
        """Canonical SI rendering (used in run manifests)."""
        lines = []
        for sec, keys in self.values.items():
            lines.append(f"[{sec}]")
            for k, v in keys.items():
                unit = SCHEMA[sec][k].unit
                name = k + (next(iter(UNITS[unit])) if unit else "")
                lines.append(f"{name} = {format_value(v)}")
            lines.append("")
        return "\n".join(lines)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, list):
        if v and isinstance(v[0], tuple):
            return " + ".join(f"{n}({', '.join(f'{a:.17g}' for a in args)})" for n, args in v) or "none"
        return ", ".join(format_value(x) for x in v)
    return str(v)


def parse_config(text: str, source: str = "<config>", overrides=()) -> Config:
    """Parse text, apply ``section.key=value`` overrides and fill defaults."""
    entries = read_entries(text, source)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not of the form section.key=value", "--set")
        lhs, value = ov.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"override key {lhs!r} must be section.key", "--set")
        sec, key = lhs.strip().lower().split(".", 1)
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}] in override {ov!r}", "--set")
        try:
            name, _ = resolve_key(sec, key)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), "--set") from None
        # an override replaces the key in whatever unit the file used
        bucket = entries.setdefault(sec, {})
        for other in list(bucket):
            if resolve_key(sec, other)[0] == name:
                del bucket[other]
        bucket[key] = Entry(value.strip())
    values: dict[str, dict] = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        given = entries.get(sec, {})
        seen = {}
        for raw_key, entry in given.items():
            try:
                name, factor = resolve_key(sec, raw_key)
            except KeyError as exc:
                raise ConfigError(str(exc.args[0]), source if entry.line else "--set",
                                  entry.line, 1 if entry.line else None) from None
            if name in seen:
                raise ConfigError(f"{name!r} given twice in [{sec}] ({seen[name]} and {raw_key})",
                                  source, entry.line)
            seen[name] = raw_key
            key = keys[name]
            try:
                value = _scale(_converter(key)(entry.value), key, factor)
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{raw_key}: {exc}",
                                  source if entry.line else "--set", entry.line, entry.column) from None
            if key.choices is not None and value not in key.choices:
                raise ConfigError(f"{sec}.{raw_key} must be one of {key.choices}, got {value!r}",
                                  source if entry.line else "--set", entry.line, entry.column)
            values[sec][name] = value
        for name, key in keys.items():
            if name not in values[sec]:
                default = key.default
                values[sec][name] = _converter(key)(default) if isinstance(default, str) and \
                    key.kind in ("floats", "ints", "words", "primitives") else default
                if key.kind == "floats" and key.unit is not None:
                    values[sec][name] = list(values[sec][name])
    return Config(values, source)


def load_config(path, overrides=()) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path), overrides)


PRESET_DIR = Path(__file__).parent / "presets"


def preset_path(name: str) -> Path:
    p = PRESET_DIR / (name if name.endswith(".cfg") else name + ".cfg")
    if not p.exists():
        available = sorted(q.stem for q in PRESET_DIR.glob("*.cfg"))
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(available)}", "--preset")
    return p


def list_presets() -> list:
    return sorted(q.stem for q in PRESET_DIR.glob("*.cfg"))
