"""Run configuration read from INI files.

Grammar (``configparser`` syntax, ``#`` or ``;`` comments)::

    [problem]
    name = cubic_example        # key of parabolic_ocp.problem.CATALOG
    gamma = 0.1                 # any keyword of the catalog factory
    b = 1.0

    [mesh]
    dim = 2
    nx = 16
    ny = 16
    nt = 32
    lx = 1.0
    ly = 1.0
    T = 1.0

    [optimizer]                 # any OptimizeParams field
    max_outer = 40

    [verification]
    seed = 0
    kkt_tol = 1e-6
    robinson_rho = 1e-2, 1e-3
    soc_samples = 200
    growth_perturbations = 100
    growth_radius = 1e-2
    holder_pairs = 20000
    parabolic = true

    [sweep]                     # only read by the sweep subcommand
    parameter = mesh.n          # section.key, or mesh.n for nx = ny
    values = 8, 16, 32
    scale_time = true           # with mesh.n: keep nt/nx fixed

    [output]
    dir = run

Every section except ``[problem]`` is optional. Unknown sections or keys
are rejected so that typos do not silently fall back to defaults.
"""
from __future__ import annotations

import configparser
import inspect
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .mesh import Mesh, build_mesh
from .optimize import OptimizeParams
from .problem import CATALOG, ProblemSpec, make_problem


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line`` context when known."""


@dataclass(frozen=True)
class VerificationConfig:
    seed: int = 0
    kkt_tol: float = 1e-6
    tol_act: float | None = None
    robinson_rho: tuple = (1e-2, 1e-3)
    soc_samples: int = 200
    soc_margin: float = 0.0
    growth_perturbations: int = 100
    growth_radius: float = 1e-2
    holder_pairs: int = 20000
    parabolic: bool = True


@dataclass(frozen=True)
class SweepConfig:
    parameter: str
    values: tuple
    scale_time: bool = True


@dataclass(frozen=True)
class RunConfig:
    problem_name: str
    problem_params: dict
    mesh_params: dict
    optimizer: dict = field(default_factory=dict)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    sweep: SweepConfig | None = None
    out_dir: str = "run"
    source: str = "<string>"

    def mesh(self) -> Mesh:
        return build_mesh(**self.mesh_params)

    def problem(self) -> ProblemSpec:
        kw = dict(self.problem_params)
        factory = CATALOG[self.problem_name]
        sig = inspect.signature(factory).parameters
        if "T" in sig:
            kw.setdefault("T", self.mesh_params["T"])
        if "lengths" in sig:
            kw.setdefault("lengths", (self.mesh_params["lx"], self.mesh_params["ly"]))
        return make_problem(self.problem_name, **kw)

    def optimizer_params(self) -> OptimizeParams:
        return OptimizeParams.from_mapping(self.optimizer)

    def with_override(self, key: str, value) -> "RunConfig":
        """Copy with one ``section.key`` replaced (as used by sweeps)."""
        section, _, name = key.partition(".")
        if section == "mesh":
            mp = dict(self.mesh_params)
            if name == "n":
                old = mp["nx"]
                mp["nx"] = mp["ny"] = int(value)
                if self.sweep is None or self.sweep.scale_time:
                    mp["nt"] = max(1, round(mp["nt"] * int(value) / old))
            else:
                mp[name] = _MESH_KEYS[name](value)
            return replace(self, mesh_params=mp)
        if section == "problem":
            return replace(self, problem_params={**self.problem_params, name: value})
        if section == "optimizer":
            return replace(self, optimizer={**self.optimizer, name: value})
        raise ConfigError(f"cannot sweep over {key!r}: use problem.*, mesh.* or optimizer.*")

    def to_ini(self) -> str:
        """Canonical INI text; parsing it gives back an equal configuration."""
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["problem"] = {"name": self.problem_name, **{k: _fmt(v) for k, v in self.problem_params.items()}}
        cp["mesh"] = {k: _fmt(v) for k, v in self.mesh_params.items()}
        if self.optimizer:
            cp["optimizer"] = {k: _fmt(v) for k, v in self.optimizer.items()}
        cp["verification"] = {f.name: _fmt(getattr(self.verification, f.name))
                              for f in fields(VerificationConfig)}
        if self.sweep is not None:
            cp["sweep"] = {"parameter": self.sweep.parameter, "values": _fmt(self.sweep.values),
                           "scale_time": _fmt(self.sweep.scale_time)}
        cp["output"] = {"dir": self.out_dir}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
            lines.append("")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_MESH_KEYS = {"dim": int, "nx": int, "ny": int, "nt": int, "lx": float, "ly": float, "T": float}
_MESH_DEFAULTS = {"dim": 2, "nx": 16, "ny": 16, "nt": 32, "lx": 1.0, "ly": 1.0, "T": 1.0}
_SECTIONS = ("problem", "mesh", "optimizer", "verification", "sweep", "output")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _scalar(text: str):
    """Problem parameters: bool, int, float or bare string, in that order."""
    t = text.strip()
    try:
        return _bool(t)
    except ValueError:
        pass
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


class _Locator:
    """Maps ``(section, key)`` to a line number for error messages."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.lines = {}
        section = None
        for no, line in enumerate(text.splitlines(), 1):
            m = re.match(r"\s*\[([^\]]+)\]", line)
            if m:
                section = m.group(1).strip()
                self.lines[(section, None)] = no
                continue
            m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
            if m and section is not None:
                self.lines[(section, m.group(1).strip())] = no

    def error(self, section: str, key: str | None, msg: str) -> ConfigError:
        no = self.lines.get((section, key)) or self.lines.get((section, None))
        where = f"{self.source}:{no}" if no else self.source
        return ConfigError(f"{where}: [{section}]{' ' + key if key else ''}: {msg}")


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str  # keep the case of keys such as T
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    loc = _Locator(text, source)
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise loc.error(sec, None, f"unknown section (expected one of {', '.join(_SECTIONS)})")
    if not cp.has_section("problem") or "name" not in cp["problem"]:
        raise ConfigError(f"{source}: missing [problem] section with a name key")

    name = cp["problem"]["name"].strip()
    if name not in CATALOG:
        raise loc.error("problem", "name", f"unknown problem {name!r}; catalog has {sorted(CATALOG)}")
    allowed = set(inspect.signature(CATALOG[name]).parameters) - {"lengths", "T"}
    pparams = {}
    for k, v in cp["problem"].items():
        if k == "name":
            continue
        if k not in allowed:
            raise loc.error("problem", k, f"not a parameter of {name} (known: {', '.join(sorted(allowed))})")
        pparams[k] = _scalar(v)

    mesh_params = dict(_MESH_DEFAULTS)
    if cp.has_section("mesh"):
        for k, v in cp["mesh"].items():
            if k not in _MESH_KEYS:
                raise loc.error("mesh", k, f"unknown key (known: {', '.join(_MESH_KEYS)})")
            try:
                mesh_params[k] = _MESH_KEYS[k](v)
            except ValueError as exc:
                raise loc.error("mesh", k, str(exc)) from None

    optimizer = {}
    if cp.has_section("optimizer"):
        known = {f.name for f in fields(OptimizeParams)}
        for k, v in cp["optimizer"].items():
            if k not in known:
                raise loc.error("optimizer", k, "unknown optimizer option")
            optimizer[k] = v.strip()

    vkw = {}
    if cp.has_section("verification"):
        types = {f.name: f.type for f in fields(VerificationConfig)}
        for k, v in cp["verification"].items():
            if k not in types:
                raise loc.error("verification", k, "unknown key")
            try:
                if k == "robinson_rho":
                    vkw[k] = _floats(v)
                elif k == "parabolic":
                    vkw[k] = _bool(v)
                elif k == "tol_act":
                    vkw[k] = None if v.strip() in ("", "auto") else float(v)
                elif types[k] == "int":
                    vkw[k] = int(v)
                else:
                    vkw[k] = float(v)
            except ValueError as exc:
                raise loc.error("verification", k, str(exc)) from None
    verification = VerificationConfig(**vkw)

    sweep = None
    if cp.has_section("sweep"):
        s = cp["sweep"]
        if "parameter" not in s or "values" not in s:
            raise loc.error("sweep", None, "needs both parameter and values")
        vals = tuple(_scalar(v) for v in s["values"].split(",") if v.strip())
        if not vals:
            raise loc.error("sweep", "values", "empty value list")
        try:
            scale = _bool(s.get("scale_time", "true"))
        except ValueError as exc:
            raise loc.error("sweep", "scale_time", str(exc)) from None
        sweep = SweepConfig(s["parameter"].strip(), vals, scale)

    out_dir = cp["output"].get("dir", "run").strip() if cp.has_section("output") else "run"
    cfg = RunConfig(name, pparams, mesh_params, optimizer, verification, sweep, out_dir, source)
    _validate(cfg, loc)
    return cfg


def _validate(cfg: RunConfig, loc: _Locator) -> None:
    v = cfg.verification
    for k in ("kkt_tol", "growth_radius"):
        if not getattr(v, k) > 0:
            raise loc.error("verification", k, "must be positive")
    if not v.robinson_rho or any(r <= 0 for r in v.robinson_rho):
        raise loc.error("verification", "robinson_rho", "radii must be positive")
    for k in ("soc_samples", "growth_perturbations", "holder_pairs"):
        if getattr(v, k) < 1:
            raise loc.error("verification", k, "must be at least 1")
    try:
        cfg.mesh()
    except ValueError as exc:
        raise loc.error("mesh", None, str(exc)) from None
    try:
        cfg.optimizer_params()
    except (ValueError, KeyError) as exc:
        raise loc.error("optimizer", None, str(exc)) from None
    p = cfg.problem_params
    if "a" in p and "b" in p and not float(p["a"]) < float(p["b"]):
        raise loc.error("problem", "b", f"box bounds need a < b (got a={p['a']}, b={p['b']})")
    try:
        cfg.problem()
    except (ValueError, TypeError) as exc:
        raise loc.error("problem", None, str(exc)) from None
    if cfg.sweep is not None:
        sec = cfg.sweep.parameter.partition(".")[0]
        if sec not in ("mesh", "problem", "optimizer"):
            raise loc.error("sweep", "parameter", "must name mesh.*, problem.* or optimizer.*")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


__all__ = ["ConfigError", "RunConfig", "VerificationConfig", "SweepConfig", "parse_config", "load_config"]
