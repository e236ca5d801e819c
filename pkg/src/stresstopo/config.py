"""Run configuration: a sectioned ``key = value`` text format and the benchmark presets.

Example::

    [mesh]
    geometry = rectangle
    nx = 160
    ny = 80
    h = 0.0125

    [material]
    E = 1e6
    nu = 0.3
    t = 0.001
    sigma_y = 1e5

    [filter]
    radius = 0.04

    [formulation]
    type = robust
    alpha = 2

    [support top]
    segment = 0 1 2 1
    components = x y

    [load f_V]
    segment = 0.9 0 1.1 0
    direction = 0 -1
    mean = 10
    std = 2

A load with ``value`` is deterministic and goes into the base load vector.
Loads with ``mean``/``std`` (Gaussian) or ``lower``/``upper`` (interval) are
the uncertain magnitudes, in file order.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import re
from pathlib import Path

import numpy as np

from .fem import ElasticMaterial, StructuredMesh
from .filtering import InterpolationConstants
from .optimizer import ALSettings
from .problem import Problem
from .uncertainty import (AntiOptSettings, ConfigurationError, Formulation, LoadModel, MeasureSettings,
                          ReliabilitySettings, RobustSettings)

GEOMETRIES = ("rectangle", "lshape", "custom")
_COMPONENTS = {"x": 0, "y": 1}


class ConfigError(ConfigurationError):
    """Invalid configuration, with the offending line when known."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)


@dataclasses.dataclass
class SupportSpec:
    name: str
    segment: tuple
    components: tuple = ("x", "y")


@dataclasses.dataclass
class LoadSpec:
    name: str
    segment: tuple
    direction: tuple
    value: float | None = None
    mean: float | None = None
    std: float | None = None
    lower: float | None = None
    upper: float | None = None

    @property
    def uncertain(self) -> bool:
        return self.value is None


@dataclasses.dataclass
class RunConfig:
    geometry: str = "rectangle"
    nx: int = 160
    ny: int = 80
    h: float = 0.0125
    cutout: tuple | None = None  # lshape: width, height removed from the upper-right corner
    mask: str | None = None  # custom: file of 0/1 rows, top row first
    E: float = 1e6
    nu: float = 0.3
    t: float = 1e-3
    sigma_y: float = 1e5
    radius: float = 0.04
    formulation: str = "det"
    alpha: float = 2.0
    beta_target: float = 2.0
    supports: list = dataclasses.field(default_factory=list)
    loads: list = dataclasses.field(default_factory=list)
    solver: dict = dataclasses.field(default_factory=dict)  # ALSettings overrides
    output: str = "out"
    seed: int = 0
    mc_samples: int = 1_000_000
    name: str = ""

    # conversions -----------------------------------------------------------

    def scaled(self, nx: int) -> "RunConfig":
        """Same physical problem on a mesh with ``nx`` elements along x."""
        if nx < 1 or (self.ny * nx) % self.nx:
            raise ConfigError(f"cannot rescale {self.nx}x{self.ny} mesh to nx = {nx} with square elements")
        return dataclasses.replace(self, nx=nx, ny=self.ny * nx // self.nx, h=self.h * self.nx / nx)

    def al_settings(self) -> ALSettings:
        try:
            return ALSettings(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver settings: {exc}") from exc

    def uncertain_loads(self) -> list:
        return [ld for ld in self.loads if ld.uncertain]

    def load_model(self, which: str | None = None) -> LoadModel:
        """Model of the uncertain magnitudes for the chosen formulation.

        ``which = "gaussian"`` forces the Gaussian description (Monte Carlo reference).
        """
        unc = self.uncertain_loads()
        form = Formulation(self.formulation)
        which = which or {"det": "deterministic", "antiopt": "interval"}.get(form.value, "gaussian")
        if which == "interval":
            return LoadModel.interval([ld.lower for ld in unc], [ld.upper for ld in unc])
        mean = [ld.mean if ld.mean is not None else 0.5 * (ld.lower + ld.upper) for ld in unc]
        if which == "deterministic":
            return LoadModel.deterministic(mean)
        return LoadModel.gaussian(mean, std=[ld.std for ld in unc])

    def has_gaussian(self) -> bool:
        return all(ld.mean is not None and ld.std is not None for ld in self.uncertain_loads())

    def measure_settings(self) -> MeasureSettings:
        return MeasureSettings(robust=RobustSettings(alpha=self.alpha),
                               reliability=ReliabilitySettings(beta_target=self.beta_target),
                               antiopt=AntiOptSettings())

    def build_mesh(self) -> StructuredMesh:
        active = None
        if self.geometry == "lshape":
            cw, ch = self.cutout
            ncx, ncy = round(cw / self.h), round(ch / self.h)
            if not (np.isclose(ncx * self.h, cw) and np.isclose(ncy * self.h, ch)):
                raise ConfigError("L-shape cutout must be a whole number of elements")
            active = np.ones((self.ny, self.nx), dtype=bool)
            active[self.ny - ncy:, self.nx - ncx:] = False
        elif self.geometry == "custom":
            active = read_mask(self.mask, self.nx, self.ny)
        mesh = StructuredMesh(self.nx, self.ny, self.h, active)
        for s in self.supports:
            p = s.segment
            try:
                mesh.fix_segment(p[:2], p[2:], [_COMPONENTS[c] for c in s.components])
            except ValueError as exc:
                raise ConfigError(f"support {s.name!r}: {exc}") from exc
        for ld in self.loads:
            p = ld.segment
            try:
                mesh.add_load_region(p[:2], p[2:], ld.direction, ld.name)
            except ValueError as exc:
                raise ConfigError(f"load {ld.name!r}: {exc}") from exc
        return mesh

    def build_problem(self) -> Problem:
        self.validate()
        mesh = self.build_mesh()
        F_base = np.zeros(mesh.ndof)
        units = []
        for ld, region in zip(self.loads, mesh.load_regions):
            f = mesh.unit_load_vector(region)
            if ld.uncertain:
                units.append(f)
            else:
                F_base += ld.value * f
        F_unit = np.array(units).reshape(len(units), mesh.ndof)
        reference = self.load_model("gaussian") if self.has_gaussian() else None
        return Problem(mesh, ElasticMaterial(self.E, self.nu, self.t), self.sigma_y, self.radius, F_base,
                       F_unit, self.load_model(), Formulation(self.formulation), self.measure_settings(),
                       InterpolationConstants(), reference_model=reference,
                       name=self.name or f"{self.geometry}-{self.formulation}")

    def validate(self) -> None:
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {', '.join(GEOMETRIES)}, got {self.geometry!r}")
        if self.geometry == "lshape" and (self.cutout is None or len(self.cutout) != 2):
            raise ConfigError("lshape geometry needs 'cutout = <width> <height>'")
        if self.geometry == "custom" and not self.mask:
            raise ConfigError("custom geometry needs a 'mask' file")
        try:
            form = Formulation(self.formulation)
        except ValueError:
            raise ConfigError(f"unknown formulation {self.formulation!r}; "
                              f"choose from {', '.join(f.value for f in Formulation)}") from None
        if self.nx < 1 or self.ny < 1 or not self.h > 0:
            raise ConfigError("mesh needs positive nx, ny and h")
        if not self.sigma_y > 0 or not self.radius > 0:
            raise ConfigError("sigma_y and filter radius must be positive")
        if not self.supports:
            raise ConfigError("at least one support is required")
        if not self.loads:
            raise ConfigError("at least one load is required")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be at least 1")
        for ld in self.loads:
            if ld.uncertain:
                gauss = ld.mean is not None and ld.std is not None
                box = ld.lower is not None and ld.upper is not None
                need = {"det": gauss or box, "robust": gauss, "rbto": gauss, "antiopt": box}[form.value]
                if not need:
                    what = "lower/upper bounds" if form is Formulation.ANTIOPT else "mean and std"
                    raise ConfigError(f"load {ld.name!r} needs {what} for formulation {form.value}")
                if gauss and ld.std < 0:
                    raise ConfigError(f"load {ld.name!r}: std must be non-negative")
                if box and ld.lower > ld.upper:
                    raise ConfigError(f"load {ld.name!r}: lower bound exceeds upper bound")
        if form is Formulation.ROBUST and not self.alpha >= 0:
            raise ConfigError("alpha must be non-negative")
        if form is Formulation.RELIABILITY and not self.beta_target > 0:
            raise ConfigError("beta_target must be positive")
        self.al_settings()

    # text format -----------------------------------------------------------

    def to_text(self) -> str:
        out = io.StringIO()
        w = out.write
        w("[mesh]\n")
        w(f"geometry = {self.geometry}\nnx = {self.nx}\nny = {self.ny}\nh = {self.h!r}\n")
        if self.cutout is not None:
            w(f"cutout = {_fmt(self.cutout)}\n")
        if self.mask:
            w(f"mask = {self.mask}\n")
        w("\n[material]\n")
        w(f"E = {self.E!r}\nnu = {self.nu!r}\nt = {self.t!r}\nsigma_y = {self.sigma_y!r}\n")
        w(f"\n[filter]\nradius = {self.radius!r}\n")
        w(f"\n[formulation]\ntype = {self.formulation}\nalpha = {self.alpha!r}\n"
          f"beta_target = {self.beta_target!r}\n")
        for s in self.supports:
            w(f"\n[support {s.name}]\nsegment = {_fmt(s.segment)}\ncomponents = {' '.join(s.components)}\n")
        for ld in self.loads:
            w(f"\n[load {ld.name}]\nsegment = {_fmt(ld.segment)}\ndirection = {_fmt(ld.direction)}\n")
            for key in ("value", "mean", "std", "lower", "upper"):
                v = getattr(ld, key)
                if v is not None:
                    w(f"{key} = {v!r}\n")
        if self.solver:
            w("\n[solver]\n")
            for k, v in self.solver.items():
                w(f"{k} = {v!r}\n")
        w(f"\n[output]\ndirectory = {self.output}\nseed = {self.seed}\nmc_samples = {self.mc_samples}\n")
        if self.name:
            w(f"name = {self.name}\n")
        return out.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc}", source=str(path)) from exc
        return cls.from_text(text, source=str(path))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        return _Parser(text, source).parse()


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def read_mask(path, nx: int, ny: int) -> np.ndarray:
    """0/1 text grid, top row first, into an ``(ny, nx)`` activity mask (bottom row first)."""
    try:
        rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read mask: {exc}", source=str(path)) from exc
    try:
        grid = np.array(rows, dtype=int)
    except ValueError:
        raise ConfigError("mask rows must hold the same number of 0/1 entries", source=str(path)) from None
    if grid.shape != (ny, nx):
        raise ConfigError(f"mask is {grid.shape[1]}x{grid.shape[0]}, mesh is {nx}x{ny}", source=str(path))
    return grid[::-1].astype(bool)


_SOLVER_KEYS = {f.name: f.type for f in dataclasses.fields(ALSettings)}


class _Parser:
    def __init__(self, text: str, source: str):
        self.text, self.source = text, source
        self.lines: dict = {}  # (section, key) -> line number

    def error(self, msg, section=None, key=None):
        return ConfigError(msg, self.lines.get((section, key)), self.source)

    def _index_lines(self):
        section = None
        for no, raw in enumerate(self.text.splitlines(), 1):
            s = raw.strip()
            m = re.fullmatch(r"\[(.+)\]", s)
            if m:
                section = m.group(1).strip()
                self.lines.setdefault((section, None), no)
            elif s and not s.startswith(("#", ";")) and "=" in s and section is not None:
                self.lines.setdefault((section, s.split("=", 1)[0].strip().lower()), no)

    def parse(self) -> RunConfig:
        self._index_lines()
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       default_section="__none__")
        try:
            cp.read_string(self.text, source=self.source)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
            raise ConfigError(msg.replace(f"While reading from '{self.source}' ", ""), line, self.source) from None
        known = {"mesh", "material", "filter", "formulation", "solver", "output"}
        cfg = RunConfig(supports=[], loads=[])
        for sec in cp.sections():
            kind, _, name = sec.partition(" ")
            if sec in known:
                getattr(self, f"_sec_{sec}")(cp[sec], cfg)
            elif kind == "support" and name.strip():
                cfg.supports.append(self._support(cp[sec], sec, name.strip()))
            elif kind == "load" and name.strip():
                cfg.loads.append(self._load(cp[sec], sec, name.strip()))
            else:
                raise self.error(f"unknown section [{sec}]", sec)
        try:
            cfg.validate()
        except ConfigError as exc:
            if exc.line is None:
                raise ConfigError(str(exc).split(": ", 1)[-1], None, self.source) from None
            raise
        return cfg

    # typed getters ---------------------------------------------------------

    def _get(self, sec, key, conv, what):
        raw = sec[key]
        try:
            return conv(raw)
        except (TypeError, ValueError):
            raise self.error(f"{key} = {raw!r} is not {what}", sec.name, key) from None

    def _float(self, sec, key):
        return self._get(sec, key, float, "a number")

    def _int(self, sec, key):
        return self._get(sec, key, _strict_int, "an integer")

    def _floats(self, sec, key, n):
        vals = self._get(sec, key, lambda s: tuple(float(v) for v in s.split()), "a list of numbers")
        if len(vals) != n:
            raise self.error(f"{key} needs {n} numbers, got {len(vals)}", sec.name, key)
        return vals

    def _check_keys(self, sec, allowed):
        for key in sec:
            if key not in allowed:
                raise self.error(f"unknown key {key!r} in [{sec.name}]", sec.name, key)

    # sections --------------------------------------------------------------

    def _sec_mesh(self, sec, cfg):
        self._check_keys(sec, {"geometry", "nx", "ny", "h", "cutout", "mask"})
        if "geometry" in sec:
            cfg.geometry = sec["geometry"].strip().lower()
            if cfg.geometry not in GEOMETRIES:
                raise self.error(f"geometry must be one of {', '.join(GEOMETRIES)}", "mesh", "geometry")
        for key in ("nx", "ny"):
            if key in sec:
                setattr(cfg, key, self._int(sec, key))
        if "h" in sec:
            cfg.h = self._float(sec, "h")
        if "cutout" in sec:
            cfg.cutout = self._floats(sec, "cutout", 2)
        if "mask" in sec:
            cfg.mask = sec["mask"].strip()

    def _sec_material(self, sec, cfg):
        self._check_keys(sec, {"e", "nu", "t", "sigma_y"})
        for key, attr in (("e", "E"), ("nu", "nu"), ("t", "t"), ("sigma_y", "sigma_y")):
            if key in sec:
                setattr(cfg, attr, self._float(sec, key))
        try:
            ElasticMaterial(cfg.E, cfg.nu, cfg.t)
        except ValueError as exc:
            raise self.error(str(exc), "material") from None

    def _sec_filter(self, sec, cfg):
        self._check_keys(sec, {"radius"})
        if "radius" in sec:
            cfg.radius = self._float(sec, "radius")

    def _sec_formulation(self, sec, cfg):
        self._check_keys(sec, {"type", "alpha", "beta_target"})
        if "type" in sec:
            cfg.formulation = sec["type"].strip().lower()
            if cfg.formulation not in {f.value for f in Formulation}:
                raise self.error(f"unknown formulation {cfg.formulation!r}", "formulation", "type")
        for key in ("alpha", "beta_target"):
            if key in sec:
                setattr(cfg, key, self._float(sec, key))

    def _sec_solver(self, sec, cfg):
        self._check_keys(sec, set(_SOLVER_KEYS))
        for key in sec:
            cfg.solver[key] = self._int(sec, key) if _SOLVER_KEYS[key] in (int, "int") else self._float(sec, key)

    def _sec_output(self, sec, cfg):
        self._check_keys(sec, {"directory", "seed", "mc_samples", "name"})
        if "directory" in sec:
            cfg.output = sec["directory"].strip()
        if "seed" in sec:
            cfg.seed = self._int(sec, "seed")
        if "mc_samples" in sec:
            cfg.mc_samples = self._int(sec, "mc_samples")
            if cfg.mc_samples < 1:
                raise self.error("mc_samples must be at least 1", "output", "mc_samples")
        if "name" in sec:
            cfg.name = sec["name"].strip()

    def _support(self, sec, name_sec, name):
        self._check_keys(sec, {"segment", "components"})
        if "segment" not in sec:
            raise self.error("support needs a segment", name_sec)
        comps = tuple(sec.get("components", "x y").split())
        if not comps or any(c not in _COMPONENTS for c in comps):
            raise self.error("components must be drawn from 'x y'", name_sec, "components")
        return SupportSpec(name, self._floats(sec, "segment", 4), comps)

    def _load(self, sec, name_sec, name):
        keys = ("value", "mean", "std", "lower", "upper")
        self._check_keys(sec, {"segment", "direction", *keys})
        for req in ("segment", "direction"):
            if req not in sec:
                raise self.error(f"load needs a {req}", name_sec)
        vals = {k: self._float(sec, k) for k in keys if k in sec}
        if "value" in vals and len(vals) > 1:
            raise self.error("a deterministic load ('value') takes no mean/std/bounds", name_sec, "value")
        if not vals:
            raise self.error("load needs 'value', 'mean'/'std' or 'lower'/'upper'", name_sec)
        direction = self._floats(sec, "direction", 2)
        if not np.any(direction):
            raise self.error("direction must be non-zero", name_sec, "direction")
        return LoadSpec(name, self._floats(sec, "segment", 4), direction, **vals)


def _strict_int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(s)
    return int(v)


# presets ------------------------------------------------------------------

def _rectangle(formulation: str) -> RunConfig:
    loads = [LoadSpec("f_H", (0.9, 0.0, 1.1, 0.0), (1.0, 0.0), mean=2.0, std=2.0, lower=-2.0, upper=6.0),
             LoadSpec("f_V", (0.9, 0.0, 1.1, 0.0), (0.0, -1.0), mean=10.0, std=2.0, lower=6.0, upper=14.0)]
    return RunConfig(geometry="rectangle", nx=160, ny=80, h=2.0 / 160, E=1e6, nu=0.3, t=1e-3, sigma_y=1e5,
                     radius=0.04, formulation=formulation, alpha=2.0, beta_target=2.0,
                     supports=[SupportSpec("top", (0.0, 1.0, 2.0, 1.0))], loads=loads,
                     output=f"out/rect-{formulation}", name=f"rect-{formulation}")


def _lshape(formulation: str) -> RunConfig:
    loads = [LoadSpec("f_H", (1.0, 0.34, 1.0, 0.4), (1.0, 0.0), mean=0.0, std=0.015, lower=-0.03, upper=0.03),
             LoadSpec("f_V", (1.0, 0.34, 1.0, 0.4), (0.0, -1.0), value=0.3)]
    return RunConfig(geometry="lshape", nx=150, ny=150, h=1.0 / 150, cutout=(0.6, 0.6), E=1e6, nu=0.3,
                     t=1e-3, sigma_y=1.6e4, radius=0.02, formulation=formulation, alpha=2.0, beta_target=2.0,
                     supports=[SupportSpec("top", (0.0, 1.0, 0.4, 1.0))], loads=loads,
                     output=f"out/lshape-{formulation}", name=f"lshape-{formulation}")


PRESETS = {f"{geo}-{form.value}": (lambda g=geo, f=form.value: (_rectangle if g == "rect" else _lshape)(f))
           for geo in ("rect", "lshape") for form in Formulation}


def preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
