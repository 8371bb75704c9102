"""Key-value model config files.

Grammar (INI style, ``#`` or ``;`` comments, site indices 0-based)::

    [lattice]
    N = 64              # may be omitted when experiments sweep N
    R = 1

    [couplings]         # exactly one of:
    uniform = 0.3       #   same coupling at every distance 1..R
    by_distance = 0.3, 0.05      # one value per distance d = 1..R
    pairs = 0 1 0.3     #   explicit band list, one "i j value" per line
            1 2 0.25

    [field]             # exactly one of (default constant = 0):
    constant = 0.0
    alternating = 0.2   #   s_i = v * (-1)**i
    values = 0.1, 0, -0.1

    [potential]
    kind = cosine       # zero | cosine
    a = 1.0
    b = 2.0

    [ensemble]          # optional
    sigma = 0.0
    m = 0.1

Semantic errors carry the line number of the offending key.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionMismatch, ModelValidationError
from .model import InteractionMatrix, ModelSpec, SingleSitePotential, alternating_field

_SECTIONS = {"lattice", "couplings", "field", "potential", "ensemble"}
_KEYS = {
    "lattice": {"n", "r"},
    "couplings": {"uniform", "by_distance", "pairs"},
    "field": {"constant", "alternating", "values"},
    "potential": {"kind", "a", "b"},
    "ensemble": {"sigma", "m"},
}


@dataclass
class ModelConfig:
    """Parsed config; :meth:`build` instantiates a :class:`ModelSpec` at any ``N``."""

    N: Optional[int] = None
    R: int = 1
    coupling_kind: str = "uniform"
    coupling: object = 0.0
    field_kind: str = "constant"
    field_value: object = 0.0
    potential: SingleSitePotential = field(default_factory=SingleSitePotential.zero)
    sigma: Optional[float] = None
    m: Optional[float] = None
    source: Optional[str] = None
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def sweepable(self):
        """True when the config describes a family valid at every N."""
        return self.coupling_kind != "pairs" and self.field_kind != "values"

    def build(self, N=None, sigma=None) -> ModelSpec:
        N = self.N if N is None else int(N)
        if N is None:
            raise ConfigError("lattice size N is not set", self.lines.get(("lattice", "n")), self.source)
        if N != self.N and not self.sweepable:
            raise ConfigError(f"explicit couplings/field fix N={self.N}; cannot build N={N}", path=self.source)
        R = min(self.R, max(N - 1, 1))
        if self.coupling_kind == "uniform":
            inter = InteractionMatrix.uniform(N, R, self.coupling)
        elif self.coupling_kind == "by_distance":
            inter = InteractionMatrix.uniform(N, R, list(self.coupling)[:R])
        else:
            inter = InteractionMatrix.from_pairs(N, R, self.coupling)
        if self.field_kind == "constant":
            s = np.full(N, float(self.field_value))
        elif self.field_kind == "alternating":
            s = alternating_field(N, float(self.field_value))
        else:
            s = np.asarray(self.field_value, dtype=float)
        sig = self.sigma if sigma is None else sigma
        try:
            return ModelSpec(inter, self.potential, s, 0.0 if sig is None else sig)
        except ModelValidationError as exc:
            key = ("field", self.field_kind) if isinstance(exc, DimensionMismatch) else ("couplings", self.coupling_kind)
            raise ConfigError(str(exc), self.lines.get(key), self.source) from exc

    def to_text(self):
        out = ["[lattice]"]
        if self.N is not None:
            out.append(f"N = {self.N}")
        out.append(f"R = {self.R}")
        out.append("\n[couplings]")
        if self.coupling_kind == "uniform":
            out.append(f"uniform = {self.coupling!r}")
        elif self.coupling_kind == "by_distance":
            out.append("by_distance = " + ", ".join(repr(float(c)) for c in self.coupling))
        else:
            rows = [f"{i} {j} {v!r}" for (i, j), v in sorted(self.coupling.items())]
            out.append("pairs = " + "\n    ".join(rows))
        out.append("\n[field]")
        if self.field_kind == "values":
            out.append("values = " + ", ".join(repr(float(v)) for v in self.field_value))
        else:
            out.append(f"{self.field_kind} = {float(self.field_value)!r}")
        out.append("\n[potential]")
        out.append(f"kind = {self.potential.kind}")
        if self.potential.kind != "zero":
            out.append(f"a = {self.potential.a!r}\nb = {self.potential.b!r}")
        if self.sigma is not None or self.m is not None:
            out.append("\n[ensemble]")
            if self.sigma is not None:
                out.append(f"sigma = {self.sigma!r}")
            if self.m is not None:
                out.append(f"m = {self.m!r}")
        return "\n".join(out) + "\n"


def _key_lines(text):
    """Map ``(section, key)`` to the 1-based line where the key is defined."""
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, None)] = no
            continue
        if raw[:1].isspace():
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def _float(cfg, section, key, lines, path):
    raw = cfg.get(section, key)
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}", lines.get((section, key)), path) from None


def _float_list(raw, section, key, lines, path):
    try:
        return [float(v) for v in re.split(r"[,\s]+", raw.strip()) if v]
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a list of numbers", lines.get((section, key)), path) from None


def parse_config(text, path=None) -> ModelConfig:
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cfg.read_string(text, source=str(path or "<config>"))
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError(f"syntax error: {exc.message.splitlines()[0]}", line, path) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"syntax error: {exc.message.splitlines()[0]}", line, path) from None
    lines = _key_lines(text)

    for section in cfg.sections():
        sec = section.lower()
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lines.get((sec, None)), path)
        for key in cfg[section]:
            if key not in _KEYS[sec]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((sec, key)), path)

    out = ModelConfig(source=str(path) if path else None, lines=lines)

    if cfg.has_section("lattice"):
        if cfg.has_option("lattice", "n"):
            n = _float(cfg, "lattice", "n", lines, path)
            if n != int(n) or n < 1:
                raise ConfigError("[lattice] N must be a positive integer", lines.get(("lattice", "n")), path)
            out.N = int(n)
        if cfg.has_option("lattice", "r"):
            r = _float(cfg, "lattice", "r", lines, path)
            if r != int(r) or r < 0:
                raise ConfigError("[lattice] R must be a nonnegative integer", lines.get(("lattice", "r")), path)
            out.R = int(r)

    if cfg.has_section("couplings"):
        given = [k for k in ("uniform", "by_distance", "pairs") if cfg.has_option("couplings", k)]
        if len(given) > 1:
            raise ConfigError("[couplings] takes exactly one of uniform/by_distance/pairs", lines.get(("couplings", given[1])), path)
        if given:
            kind = given[0]
            out.coupling_kind = kind
            if kind == "uniform":
                out.coupling = _float(cfg, "couplings", "uniform", lines, path)
            elif kind == "by_distance":
                vals = _float_list(cfg.get("couplings", kind), "couplings", kind, lines, path)
                if len(vals) != out.R:
                    raise ConfigError(f"[couplings] by_distance needs R={out.R} values, got {len(vals)}", lines.get(("couplings", kind)), path)
                out.coupling = vals
            else:
                pairs = {}
                base = lines.get(("couplings", "pairs"))
                for k, row in enumerate(cfg.get("couplings", "pairs").strip().splitlines()):
                    parts = row.split()
                    if not parts:
                        continue
                    try:
                        i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
                        if len(parts) != 3:
                            raise ValueError
                    except (ValueError, IndexError):
                        raise ConfigError(f"[couplings] pairs: expected 'i j value', got {row.strip()!r}", base + k if base else None, path) from None
                    pairs[(i, j)] = v
                if out.N is None:
                    raise ConfigError("[couplings] pairs requires [lattice] N", base, path)
                out.coupling = pairs

    if cfg.has_section("field"):
        given = [k for k in ("constant", "alternating", "values") if cfg.has_option("field", k)]
        if len(given) > 1:
            raise ConfigError("[field] takes exactly one of constant/alternating/values", lines.get(("field", given[1])), path)
        if given:
            kind = given[0]
            out.field_kind = kind
            if kind == "values":
                vals = _float_list(cfg.get("field", kind), "field", kind, lines, path)
                if out.N is not None and len(vals) != out.N:
                    raise ConfigError(f"[field] values has {len(vals)} entries, N={out.N}", lines.get(("field", kind)), path)
                out.field_value = vals
                if out.N is None:
                    out.N = len(vals)
            else:
                out.field_value = _float(cfg, "field", kind, lines, path)

    if cfg.has_section("potential"):
        kind = cfg.get("potential", "kind", fallback="zero").strip().lower()
        if kind not in ("zero", "cosine"):
            raise ConfigError(f"[potential] kind must be zero or cosine, got {kind!r}", lines.get(("potential", "kind")), path)
        if kind == "cosine":
            a = _float(cfg, "potential", "a", lines, path) if cfg.has_option("potential", "a") else 1.0
            b = _float(cfg, "potential", "b", lines, path) if cfg.has_option("potential", "b") else 2.0
            out.potential = SingleSitePotential.cosine(a, b)

    if cfg.has_section("ensemble"):
        if cfg.has_option("ensemble", "sigma"):
            out.sigma = _float(cfg, "ensemble", "sigma", lines, path)
        if cfg.has_option("ensemble", "m"):
            out.m = _float(cfg, "ensemble", "m", lines, path)

    if out.N is not None:
        out.build()  # surface validation errors at load time
    return out


def load_config(path) -> ModelConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from None
    return parse_config(text, path=str(path))


DEFAULT_CONFIG_TEXT = """\
# Default non-Gaussian family: nearest-neighbour chain, visibly nonconvex
# single-site potential z^2/2 + cos(2z), alternating field to break site symmetry.
[lattice]
R = 1

[couplings]
uniform = 0.3

[field]
alternating = 0.2

[potential]
kind = cosine
a = 1.0
b = 2.0

[ensemble]
m = 0.1
"""


def default_config() -> ModelConfig:
    return parse_config(DEFAULT_CONFIG_TEXT, path="<default>")
