"""INI-style scenario files.

A file has one section per concern::

    [scenario]     name, preset, n_agents, horizon, seed
    [model]        n_a, n_b, n_k
    [parameters]   law, theta_g, local_index, local_mean, local_var, lam, y0
    [inputs]       low, high
    [noise]        low, high
    [anomalies]    n_noninformative, n_failures, noninformative_variance,
                   failure_window, failure_reference_horizon, failure_low, failure_high
    [solver]       consensus, P, box_lower, box_upper, rho, rho1, rho2,
                   max_iters, tol, phi0, theta0_var, g0_var

Vectors are comma separated; matrix rows are separated by ``;``. Keys left
out keep the value of ``scenario.preset`` when given, otherwise the
:class:`~cloudrls.scenarios.ScenarioConfig` default.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import replace
from pathlib import Path
from typing import Callable

from cloudrls.core import ArxModelSpec
from cloudrls.errors import ConfigurationError
from cloudrls.scenarios import ScenarioConfig, preset

__all__ = ["ConfigFileError", "dump_config", "load_config", "parse_config"]


class ConfigFileError(ConfigurationError):
    """Invalid scenario file; carries the offending section, key and line."""

    def __init__(self, message: str, *, section=None, key=None, line=None, source="<config>"):
        self.section, self.key, self.line, self.source = section, key, line, source
        where = source if line is None else f"{source}:{line}"
        field = "" if key is None else f" [{section}] {key}:"
        super().__init__(f"{where}:{field} {message}")


def _vector(text: str) -> tuple[float, ...]:
    text = text.strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


def _ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _matrix(text: str):
    text = text.strip()
    if not text or text.lower() == "none":
        return None
    return tuple(tuple(float(v) for v in row.replace(",", " ").split()) for row in text.split(";"))


def _optional_vector(text: str):
    text = text.strip()
    return None if not text or text.lower() == "none" else _vector(text)


def _fmt_vec(v) -> str:
    return "" if v is None else ", ".join(repr(float(x)) if not isinstance(x, int) else str(x) for x in v)


def _fmt_mat(m) -> str:
    return "none" if m is None else "; ".join(" ".join(repr(float(x)) for x in row) for row in m)


# (section, key) -> (target, parser, formatter). Targets: top-level field,
# "model.x", "solver.x" or "anomalies.x".
_FIELDS: dict[tuple[str, str], tuple[str, Callable, Callable]] = {
    ("scenario", "name"): ("name", str.strip, str),
    ("scenario", "n_agents"): ("n_agents", int, str),
    ("scenario", "horizon"): ("horizon", int, str),
    ("scenario", "seed"): ("seed", int, str),
    ("model", "n_a"): ("model.n_a", int, str),
    ("model", "n_b"): ("model.n_b", int, str),
    ("model", "n_k"): ("model.n_k", int, str),
    ("parameters", "law"): ("law", str.strip, str),
    ("parameters", "theta_g"): ("theta_g", _vector, _fmt_vec),
    ("parameters", "local_index"): ("local_index", _ints, _fmt_vec),
    ("parameters", "local_mean"): ("local_mean", float, repr),
    ("parameters", "local_var"): ("local_var", float, repr),
    ("parameters", "lam"): ("lam", float, repr),
    ("parameters", "y0"): ("y0", float, repr),
    ("inputs", "low"): ("input_low", float, repr),
    ("inputs", "high"): ("input_high", float, repr),
    ("noise", "low"): ("noise_low", int, str),
    ("noise", "high"): ("noise_high", int, str),
    ("anomalies", "n_noninformative"): ("anomalies.n_noninformative", int, str),
    ("anomalies", "n_failures"): ("anomalies.n_failures", int, str),
    ("anomalies", "noninformative_variance"): ("anomalies.noninformative_variance", float, repr),
    ("anomalies", "failure_window"): ("anomalies.failure_window", _ints, _fmt_vec),
    ("anomalies", "failure_reference_horizon"): ("anomalies.failure_reference_horizon", int, str),
    ("anomalies", "failure_low"): ("anomalies.failure_low", _vector, _fmt_vec),
    ("anomalies", "failure_high"): ("anomalies.failure_high", _vector, _fmt_vec),
    ("solver", "consensus"): ("solver.consensus", str.strip, str),
    ("solver", "P"): ("solver.P", _matrix, _fmt_mat),
    ("solver", "box_lower"): ("solver.box_lower", _optional_vector, lambda v: "none" if v is None else _fmt_vec(v)),
    ("solver", "box_upper"): ("solver.box_upper", _optional_vector, lambda v: "none" if v is None else _fmt_vec(v)),
    ("solver", "rho"): ("solver.rho", float, repr),
    ("solver", "rho1"): ("solver.rho1", float, repr),
    ("solver", "rho2"): ("solver.rho2", float, repr),
    ("solver", "max_iters"): ("solver.max_iters", int, str),
    ("solver", "tol"): ("solver.tol", float, repr),
    ("solver", "phi0"): ("solver.phi0", float, repr),
    ("solver", "theta0_var"): ("solver.theta0_var", float, repr),
    ("solver", "g0_var"): ("solver.g0_var", float, repr),
}
_SECTIONS = sorted({s for s, _ in _FIELDS})


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Line numbers of ``key = value`` entries, keyed by (section, key)."""
    where: dict[tuple[str, str], int] = {}
    section = None
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where[(section, "")] = num
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip().lower()), num)
    return where


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    """Parse scenario text; errors name the source line and field."""
    lines = _line_index(text)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigFileError("entry before the first [section] header", line=exc.lineno, source=source) from None
    except configparser.ParsingError as exc:
        line, content = exc.errors[0]
        raise ConfigFileError(f"expected 'key = value', got {content}", line=line, source=source) from None
    except configparser.Error as exc:
        message = str(exc).splitlines()[0].split(": ", 1)[-1]
        raise ConfigFileError(message, line=getattr(exc, "lineno", None), source=source) from None
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigFileError(f"unknown section [{section}]", line=lines.get((section, "")), source=source)

    base_name = parser.get("scenario", "preset", fallback="").strip()
    try:
        cfg = preset(base_name) if base_name else ScenarioConfig()
    except ConfigurationError as exc:
        raise ConfigFileError(str(exc), section="scenario", key="preset",
                              line=lines.get(("scenario", "preset")), source=source) from None

    entries = []
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section == "scenario" and key == "preset":
                continue
            line = lines.get((section, key))
            spec = _FIELDS.get((section, key)) or _FIELDS.get((section, key.upper()))
            if spec is None:
                raise ConfigFileError("unknown key", section=section, key=key, line=line, source=source)
            target, parse, _ = spec
            try:
                value = parse(raw)
            except ValueError as exc:
                raise ConfigFileError(f"cannot parse {raw!r}: {exc}", section=section, key=key,
                                      line=line, source=source) from None
            entries.append((section, key, line, target, value))

    try:
        return _apply(cfg, entries)
    except ConfigurationError as exc:
        # Blame the first entry whose removal makes the file valid.
        for i, (section, key, line, _, _) in enumerate(entries):
            try:
                _apply(cfg, entries[:i] + entries[i + 1:])
            except ConfigurationError:
                continue
            raise ConfigFileError(str(exc), section=section, key=key, line=line, source=source) from None
        raise ConfigFileError(str(exc), source=source) from None


def _apply(cfg: ScenarioConfig, entries) -> ScenarioConfig:
    top, model, solver, anomalies = {}, {}, {}, {}
    buckets = {"model": model, "solver": solver, "anomalies": anomalies}
    for *_, target, value in entries:
        head, _, tail = target.partition(".")
        (buckets[head] if tail else top)[tail or head] = value
    if model:
        top["model"] = ArxModelSpec(**{**cfg.model.__dict__, **model})
    if solver:
        top["solver"] = replace(cfg.solver, **solver)
    if anomalies:
        top["anomalies"] = replace(cfg.anomalies, **anomalies)
    return replace(cfg, **top)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read file: {exc.strerror}", source=str(path)) from None
    return parse_config(text, source=str(path))


def _get(cfg: ScenarioConfig, target: str):
    obj = cfg
    for part in target.split("."):
        obj = getattr(obj, part)
    return obj


def dump_config(cfg: ScenarioConfig) -> str:
    """Render ``cfg`` as scenario text that :func:`parse_config` reads back unchanged."""
    out = []
    for section in ("scenario", "model", "parameters", "inputs", "noise", "anomalies", "solver"):
        out.append(f"[{section}]")
        for (sec, key), (target, _, fmt) in _FIELDS.items():
            if sec == section:
                out.append(f"{key} = {fmt(_get(cfg, target))}")
        out.append("")
    return "\n".join(out)
