"""Experiment configuration files.

A config is line-oriented ``key = value`` text grouped under ``[section]``
headers; ``#`` starts a comment. Sections:

``[experiment]``  name, description
``[network]``     builtin *or* net + trips (TNTP paths), routes, k, cost_unit
``[dynamics]``    engine, eta, r, variant, classes
``[init]``        s0 (zeros | normal), seeds (``0, 3, 5`` or ``0..1999``)
``[stop]``        max_days, gap_tol, divergence, window
``[output]``      record, csv, json, plots
``[case NAME]``   overrides of dynamics/init/stop keys for one case

Without any ``[case ...]`` section the base settings form a single case
named ``run``. :func:`serialize` writes every field, so
``parse(serialize(cfg)) == cfg``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace

from ..dynamics import Schedule, StopRule
from ..network import BUILTIN_NAMES

__all__ = ["ConfigError", "ClassEntry", "CaseConfig", "ExperimentConfig", "parse", "serialize", "load"]


PLOT_NAMES = ("gap", "strategy", "entropy", "used-routes", "classes")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClassEntry:
    r: float
    share: float
    label: str = ""

    def name(self) -> str:
        return self.label or f"r={self.r:g}"


@dataclass(frozen=True)
class CaseConfig:
    name: str = "run"
    engine: str = "cumlog"
    eta: str = "constant:1.0"
    r: str = "1.0"
    variant: str = "raw"
    classes: tuple[ClassEntry, ...] = ()
    s0: str = "zeros"
    seeds: tuple[int, ...] = (0,)
    max_days: int = 120
    gap_tol: float = 1e-9
    divergence: bool = True
    window: int = 10

    def eta_schedule(self) -> Schedule:
        return Schedule.parse(self.eta)

    def r_value(self):
        """A float, or a :class:`Schedule` when ``r`` is written as one."""
        try:
            return float(self.r)
        except ValueError:
            return Schedule.parse(self.r)

    def stop_rule(self) -> StopRule:
        return StopRule(self.max_days, self.gap_tol, self.divergence, self.window)

    def repeat_seeds(self) -> tuple:
        """Seeds that index repeats; a zero initial valuation needs only one run."""
        return (None,) if self.s0 == "zeros" else self.seeds


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    description: str = ""
    builtin: str = ""
    net: str = ""
    trips: str = ""
    routes: str = "default"
    k: int = 0
    cost_unit: float = 0.0
    record: str = "full"
    csv: bool = True
    json: bool = True
    plots: tuple[str, ...] = ("gap",)
    cases: tuple[CaseConfig, ...] = (CaseConfig(),)

    def with_seed_offset(self, offset: int) -> "ExperimentConfig":
        cases = tuple(replace(c, seeds=tuple(s + offset for s in c.seeds)) for c in self.cases)
        return replace(self, cases=cases)

    def validate(self) -> "ExperimentConfig":
        for text in (self.name, self.description):
            if "#" in text or "\n" in text:
                raise ConfigError("name and description may not contain '#' or newlines")
        if bool(self.builtin) == bool(self.net):
            raise ConfigError("[network] needs exactly one of builtin or net")
        if self.builtin and self.builtin.lower().replace("_", "-") not in BUILTIN_NAMES + ("siouxfalls",):
            raise ConfigError(f"unknown builtin network {self.builtin!r}")
        if self.net:
            if not self.trips:
                raise ConfigError("[network] net needs a trips file")
            for path in (self.net, self.trips):
                if not os.path.exists(path):
                    raise ConfigError(f"file not found: {path}")
        if self.routes not in ("default", "all", "k-shortest"):
            raise ConfigError(f"unknown route policy {self.routes!r}")
        if self.routes == "k-shortest" and self.k < 1:
            raise ConfigError("k-shortest routes need k >= 1")
        if self.cost_unit < 0:
            raise ConfigError("cost_unit must be positive")
        if self.record not in ("full", "summary"):
            raise ConfigError("record must be full or summary")
        for kind in self.plots:
            if kind not in PLOT_NAMES:
                raise ConfigError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_NAMES)}")
        if not self.cases:
            raise ConfigError("no cases")
        names = [c.name for c in self.cases]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate case names")
        for c in self.cases:
            _validate_case(c)
        return self


def _validate_case(c: CaseConfig):
    where = f"case {c.name!r}: "
    if not re.fullmatch(r"[A-Za-z0-9_.+=-]+", c.name):
        raise ConfigError(where + "case names may only use letters, digits and _.+=-")
    if c.engine not in ("cumlog", "sa"):
        raise ConfigError(where + f"unknown engine {c.engine!r}")
    if c.variant not in ("raw", "recenter", "excess"):
        raise ConfigError(where + f"unknown variant {c.variant!r}")
    if c.s0 not in ("zeros", "normal"):
        raise ConfigError(where + "s0 must be zeros or normal")
    if not c.seeds:
        raise ConfigError(where + "empty seed list")
    try:
        c.eta_schedule()
        r = c.r_value()
        c.stop_rule()
    except ValueError as exc:
        raise ConfigError(where + str(exc)) from None
    if isinstance(r, float) and not r > 0:
        raise ConfigError(where + "r must be positive")
    if c.classes:
        if abs(sum(e.share for e in c.classes) - 1.0) > 1e-9:
            raise ConfigError(where + "class shares must sum to 1")
        if any(not e.r > 0 or e.share < 0 for e in c.classes):
            raise ConfigError(where + "class r must be positive and shares nonnegative")


# ---------------------------------------------------------------------------
# text form

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
_TOP = {
    "experiment": ("name", "description"),
    "network": ("builtin", "net", "trips", "routes", "k", "cost_unit"),
    "output": ("record", "csv", "json", "plots"),
}
_CASE_SECTIONS = {
    "dynamics": ("engine", "eta", "r", "variant", "classes"),
    "init": ("s0", "seeds"),
    "stop": ("max_days", "gap_tol", "divergence", "window"),
}
_CASE_KEYS = {k for keys in _CASE_SECTIONS.values() for k in keys}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL[text.lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {text!r}") from None


def _parse_seeds(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _format_seeds(seeds) -> str:
    seeds = list(seeds)
    if len(seeds) > 2 and seeds == list(range(seeds[0], seeds[-1] + 1)):
        return f"{seeds[0]}..{seeds[-1]}"
    return ", ".join(str(s) for s in seeds)


def _parse_classes(text: str) -> tuple[ClassEntry, ...]:
    # "label:r:share; r:share; ..."
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = [b.strip() for b in part.split(":")]
        if len(bits) == 2:
            out.append(ClassEntry(float(bits[0]), float(bits[1])))
        elif len(bits) == 3:
            out.append(ClassEntry(float(bits[1]), float(bits[2]), bits[0]))
        else:
            raise ValueError(f"bad class entry {part!r}; expected [label:]r:share")
    return tuple(out)


def _format_classes(classes) -> str:
    return "; ".join((f"{e.label}:" if e.label else "") + f"{e.r!r}:{e.share!r}" for e in classes)


def _case_value(key: str, text: str):
    if key in ("engine", "eta", "r", "variant", "s0"):
        return text
    if key == "classes":
        return _parse_classes(text)
    if key == "seeds":
        return _parse_seeds(text)
    if key in ("max_days", "window"):
        return int(text)
    if key == "gap_tol":
        return float(text)
    if key == "divergence":
        return _parse_bool(text)
    raise KeyError(key)


def _top_value(key: str, text: str):
    if key in ("k",):
        return int(text)
    if key == "cost_unit":
        return float(text)
    if key in ("csv", "json"):
        return _parse_bool(text)
    if key == "plots":
        items = tuple(p.strip() for p in text.split(",") if p.strip())
        return () if items == ("none",) else items
    return text


def parse(text: str) -> ExperimentConfig:
    """Parse config text; raises :class:`ConfigError` with the line number on bad input."""
    top: dict = {}
    base: dict = {}
    cases: list[tuple[str, dict]] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[\s*([A-Za-z]+)(?:\s+(\S+))?\s*\]", line)
        if m:
            section = m.group(1).lower()
            if section == "case":
                if not m.group(2):
                    raise ConfigError(f"line {lineno}: [case] needs a name")
                cases.append((m.group(2), {}))
            elif m.group(2) or section not in set(_TOP) | set(_CASE_SECTIONS):
                raise ConfigError(f"line {lineno}: unknown section {line}")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, _, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        try:
            if section in _TOP:
                if key not in _TOP[section]:
                    raise KeyError(key)
                top[key] = _top_value(key, value)
            elif section == "case":
                if key not in _CASE_KEYS:
                    raise KeyError(key)
                cases[-1][1][key] = _case_value(key, value)
            else:
                if key not in _CASE_SECTIONS[section]:
                    raise KeyError(key)
                base[key] = _case_value(key, value)
        except KeyError:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]") from None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    base_case = CaseConfig(**base)
    built = tuple(replace(base_case, name=name, **over) for name, over in cases) or (base_case,)
    return ExperimentConfig(**top, cases=built).validate()


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _case_lines(case: CaseConfig, keys, base: CaseConfig | None):
    lines = []
    for key in keys:
        value = getattr(case, key)
        if base is not None and value == getattr(base, key):
            continue
        if key == "seeds":
            text = _format_seeds(value)
        elif key == "classes":
            if not value and base is None:
                continue
            text = _format_classes(value)
        else:
            text = _fmt(value)
        lines.append(f"{key} = {text}")
    return lines


def serialize(cfg: ExperimentConfig) -> str:
    out = ["[experiment]", f"name = {cfg.name}"]
    if cfg.description:
        out.append(f"description = {cfg.description}")
    out += ["", "[network]"]
    for key in _TOP["network"]:
        value = getattr(cfg, key)
        if value not in ("", 0, 0.0):
            out.append(f"{key} = {_fmt(value)}")
    out += ["", "[output]", f"record = {cfg.record}", f"csv = {_fmt(cfg.csv)}", f"json = {_fmt(cfg.json)}",
            f"plots = {', '.join(cfg.plots) or 'none'}"]
    base = cfg.cases[0]
    for section, keys in _CASE_SECTIONS.items():
        out += ["", f"[{section}]"] + _case_lines(base, keys, None)
    if len(cfg.cases) > 1 or base.name != "run":
        for case in cfg.cases:
            out += ["", f"[case {case.name}]"]
            for keys in _CASE_SECTIONS.values():
                out += _case_lines(case, keys, base)
    return "\n".join(out) + "\n"


def load(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse(text)
