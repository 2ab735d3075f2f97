"""INI configuration: parsing with defaults and provenance, printing, overrides.

Grammar: ``[section]`` headers and ``key = value`` lines.  Sections are
``grid``, ``material``, ``closures`` (text specs, see
:func:`twophase.constitutive.make_closure`), ``run`` and ``initial``
(closed-form expressions in ``x1..xN``, ``eps``, ``L``).  An empty file
gives the default equilibrium run.
"""
from __future__ import annotations

import configparser
import dataclasses
import re

from .constitutive import DEFAULT_CLOSURES, ClosureError, MaterialSystem
from .driver import EXPRESSION_KEYS, RunConfig
from .grid import Grid

MATERIAL_KEYS = ("rho_star_plus", "rho_star_minus", "theta_star", "sigma")
_RUN_SKIP = ("grid", "material", "expressions")
SECTIONS = ("grid", "material", "closures", "run", "initial")


class ConfigError(ValueError):
    pass


def _run_fields():
    return [f for f in dataclasses.fields(RunConfig) if f.name not in _RUN_SKIP]


def _defaults() -> dict:
    g, m, r = Grid(), MaterialSystem(), RunConfig()
    out = {"grid": {f.name: getattr(g, f.name) for f in dataclasses.fields(Grid)},
           "material": {k: getattr(m, k) for k in MATERIAL_KEYS},
           "closures": dict(DEFAULT_CLOSURES),
           "run": {f.name: getattr(r, f.name) for f in _run_fields()},
           "initial": {}}
    return out


def _locate(text: str, section: str, key: str):
    """Line and column of ``key`` inside ``[section]`` (1-based), or ``(0, 0)``."""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        m = re.match(r"(\s*)([^=:#;\s]+)\s*[=:]", line)
        if m and current == section and m.group(2).strip() == key:
            return i, line.index("=") + 2 if "=" in line else len(m.group(1)) + 1
    return 0, 0


def _convert(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value.strip()


def _split_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    key = key.strip()
    if "." in key:
        section, key = key.split(".", 1)
        return section.strip(), key.strip(), value.strip()
    owners = [s for s, d in _defaults().items() if key in d]
    if key in EXPRESSION_KEYS:
        owners.append("initial")
    if len(owners) != 1:
        raise ConfigError(f"override key {key!r} is {'ambiguous' if owners else 'unknown'}; "
                          "use section.key")
    return owners[0], key, value.strip()


def parse_config(text: str, overrides=()):
    """Parse INI text into ``(RunConfig, provenance)``.

    ``provenance`` maps ``"section.key"`` to ``"default"``, ``"user"`` or
    ``"override"``.  Unknown sections and keys are rejected with their
    position; so are values that fail conversion or validation.
    """
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(f"line {line or 0}, column 1: {str(exc).splitlines()[0]}") from exc
    values = _defaults()
    prov = {f"{s}.{k}": "default" for s, d in values.items() for k in d}
    user = [(s, k, v, "user") for s in cp.sections() for k, v in cp.items(s)]
    for s in cp.sections():
        if s not in SECTIONS:
            line, _ = _locate_section(text, s)
            raise ConfigError(f"line {line}: unknown section [{s}]")
    for item in overrides:
        s, k, v = _split_override(item)
        user.append((s, k, v, "override"))
    for s, k, v, origin in user:
        where = _where(text, s, k, origin)
        if s not in SECTIONS:
            raise ConfigError(f"{where}unknown section {s!r}")
        if s == "initial":
            if k not in EXPRESSION_KEYS:
                raise ConfigError(f"{where}unknown initial expression {k!r}")
            values[s][k] = v.strip()
        elif s == "closures":
            if k not in DEFAULT_CLOSURES:
                raise ConfigError(f"{where}unknown closure {k!r}")
            values[s][k] = v.strip()
        else:
            if k not in values[s]:
                raise ConfigError(f"{where}unknown key {s}.{k}")
            try:
                values[s][k] = _convert(v, values[s][k])
            except ValueError as exc:
                raise ConfigError(f"{where}{s}.{k}: {exc}") from exc
        prov[f"{s}.{k}"] = origin
    try:
        cfg = build_config(values)
    except (ValueError, ClosureError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, prov


def _locate_section(text, name):
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*\[{re.escape(name)}\]", line):
            return i, 1
    return 0, 0


def _where(text, section, key, origin):
    if origin == "override":
        return f"override {section}.{key}: "
    line, col = _locate(text, section, key)
    return f"line {line}, column {col}: " if line else ""


def build_config(values: dict) -> RunConfig:
    mat = values["material"]
    if mat["sigma"] < 0:
        raise ValueError("sigma must be non-negative")
    for k in ("rho_star_plus", "rho_star_minus", "theta_star"):
        if not mat[k] > 0:
            raise ValueError(f"{k} must be positive")
    grid = Grid(**values["grid"])
    material = MaterialSystem(mat["rho_star_plus"], mat["rho_star_minus"], mat["theta_star"],
                              mat["sigma"], grid.N, dict(values["closures"]))
    return RunConfig(grid=grid, material=material, expressions=dict(values["initial"]),
                     **values["run"])


def config_values(cfg: RunConfig) -> dict:
    """Nested section dict of a config (inverse of :func:`build_config`)."""
    m = cfg.material
    return {"grid": {f.name: getattr(cfg.grid, f.name) for f in dataclasses.fields(Grid)},
            "material": {k: getattr(m, k) for k in MATERIAL_KEYS},
            "closures": m.specs(),
            "run": {f.name: getattr(cfg, f.name) for f in _run_fields()},
            "initial": dict(cfg.expressions)}


def format_config(cfg: RunConfig) -> str:
    """Fully resolved INI text; ``parse_config(format_config(c))`` reproduces ``c``."""
    lines = []
    for section, d in config_values(cfg).items():
        lines.append(f"[{section}]")
        for k, v in d.items():
            lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: str | None, overrides=()):
    text = ""
    if path:
        with open(path) as fh:
            text = fh.read()
    return parse_config(text, overrides)
