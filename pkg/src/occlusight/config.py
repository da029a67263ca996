"""Scenario configuration files.

Scenarios are TOML documents (UTF-8).  One file describes the scene, the
acquisition, the reconstruction settings, the ground-truth pattern and the
sweep defaults; see ``docs/config.md`` for the full key reference.  Relative
input file paths are resolved against the directory holding the config
file; a relative output directory is taken from the working directory.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import patterns
from .photoncount import AcquisitionParams
from .recon import ReconstructionConfig, StepRule
from .scene import Detector, DiskOccluder, PlanarPatchGrid, SceneError, SceneGeometry

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUNDLED = Path(__file__).with_name("scenarios")


class ConfigError(ValueError):
    """Invalid scenario file; the message starts with the offending field path."""


# ------------------------------------------------------------ field access

class _Table:
    """Typed access to one TOML table that remembers its dotted path."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a table")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def _where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def raw(self, key: str, default: Any = ...) -> Any:
        self.used.add(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError(f"{self._where(key)}: required field is missing")
            return default
        return self.data[key]

    def table(self, key: str, required: bool = True) -> "_Table | None":
        if not required and key not in self.data:
            self.used.add(key)
            return None
        return _Table(self.raw(key), self._where(key))

    def number(self, key: str, default: Any = ..., positive: bool = False,
               nonneg: bool = False, integer: bool = False) -> float:
        v = self.raw(key, default)
        where = self._where(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {v!r}")
        if integer:
            if isinstance(v, float) and not v.is_integer():
                raise ConfigError(f"{where}: expected an integer, got {v!r}")
            v = int(v)
        if not np.isfinite(v):
            raise ConfigError(f"{where}: must be finite")
        if positive and not v > 0:
            raise ConfigError(f"{where}: must be positive, got {v!r}")
        if nonneg and v < 0:
            raise ConfigError(f"{where}: must be >= 0, got {v!r}")
        return v

    def string(self, key: str, default: Any = ..., choices=None) -> str:
        v = self.raw(key, default)
        where = self._where(key)
        if not isinstance(v, str):
            raise ConfigError(f"{where}: expected a string, got {v!r}")
        if choices is not None and v not in choices:
            raise ConfigError(f"{where}: must be one of {sorted(choices)}, got {v!r}")
        return v

    def vector(self, key: str, length: int = 3, default: Any = ...) -> list[float]:
        v = self.raw(key, default)
        where = self._where(key)
        if v is None:
            return None
        if (not isinstance(v, list) or len(v) != length
                or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v)):
            raise ConfigError(f"{where}: expected {length} numbers, got {v!r}")
        if not all(np.isfinite(x) for x in v):
            raise ConfigError(f"{where}: components must be finite")
        return [float(x) for x in v]

    def numbers(self, key: str, default: Any = ..., nonneg: bool = False,
                positive: bool = False, integer: bool = False) -> list:
        v = self.raw(key, default)
        where = self._where(key)
        if not isinstance(v, list) or not v:
            raise ConfigError(f"{where}: expected a non-empty list of numbers")
        out = []
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not np.isfinite(x):
                raise ConfigError(f"{where}[{i}]: expected a finite number, got {x!r}")
            if integer and float(x) != int(x):
                raise ConfigError(f"{where}[{i}]: expected an integer, got {x!r}")
            if positive and not x > 0:
                raise ConfigError(f"{where}[{i}]: must be positive, got {x!r}")
            if nonneg and x < 0:
                raise ConfigError(f"{where}[{i}]: must be >= 0, got {x!r}")
            out.append(int(x) if integer else float(x))
        return out

    def finish(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"{self._where(extra[0])}: unknown field")


def _scene_call(where: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SceneError as exc:
        raise ConfigError(f"{where}: {exc}") from None


# ------------------------------------------------------------ data types

@dataclass(frozen=True)
class AcquisitionSpec:
    kp: float
    pulses: int
    efficiency: float
    background: float | None
    background_file: Path | None
    seed: int

    def background_grid(self, m: int) -> np.ndarray:
        if self.background_file is None:
            return np.full((m, m), float(self.background))
        from .artifacts import read_matrix_csv   # local import avoids a cycle
        B = read_matrix_csv(self.background_file)
        if B.shape != (m, m):
            raise ConfigError(f"acquisition.background.file: grid is {B.shape}, "
                              f"expected ({m}, {m})")
        if not np.all(np.isfinite(B)) or (B < 0).any():
            raise ConfigError("acquisition.background.file: entries must be finite and >= 0")
        return B


@dataclass(frozen=True)
class TruthSpec:
    builtin: str | None = None
    file: Path | None = None
    params: dict = field(default_factory=dict)

    def image(self, n: int, extent: float) -> np.ndarray:
        if self.file is not None:
            from .artifacts import read_image
            F = read_image(self.file)
            if F.shape != (n, n):
                raise ConfigError(f"truth.file: image is {F.shape}, expected ({n}, {n})")
            return F
        if self.builtin == "two_bar":
            return patterns.two_bar(n, extent, **self.params)
        return patterns.BUILTINS[self.builtin](n, **self.params)


@dataclass(frozen=True)
class AnalysisSpec:
    ppp_levels: tuple = (50.0, 100.0, 300.0, 1000.0)
    seeds: tuple = (0, 1, 2)
    diameters: tuple = (0.158, 0.068, 0.044)
    separations: tuple = (0.02, 0.04, 0.08)
    lambdas: tuple = (0.0, 0.1, 0.75, 5.0)
    lambda_scale: float = 1.0
    gaussian_lambda: float | str = "matched"
    tau: float = 1e-6
    max_pulses: int = 10 ** 13
    bar_width: float = 0.04
    bar_length: float = 0.24


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    scene: SceneGeometry
    acquisition: AcquisitionSpec
    reconstruction: ReconstructionConfig
    truth: TruthSpec
    analysis: AnalysisSpec
    output_dir: Path
    document: dict
    source: Path | None = None

    @property
    def config_hash(self) -> str:
        """SHA-256 of the parsed document; layout and comments do not matter."""
        blob = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def acquisition_params(self, pulses: int | None = None) -> AcquisitionParams:
        a = self.acquisition
        return AcquisitionParams(a.pulses if pulses is None else pulses, a.efficiency,
                                 a.background_grid(self.scene.m))

    def truth_image(self) -> np.ndarray:
        return self.truth.image(self.scene.n, self.scene.hidden_wall.extent_u)


# ------------------------------------------------------------ parsing

def _grid(t: _Table) -> PlanarPatchGrid:
    center = t.vector("center")
    u = t.vector("axis_u")
    v = t.vector("axis_v")
    normal = t.vector("normal", default=None)
    ext = t.numbers("extent", positive=True)
    counts = t.numbers("counts", positive=True, integer=True)
    for key, seq in (("extent", ext), ("counts", counts)):
        if len(seq) != 2:
            raise ConfigError(f"{t.path}.{key}: expected two values (u, v)")
    t.finish()
    return _scene_call(t.path, PlanarPatchGrid.centered, center, u, v, ext[0], ext[1],
                       counts[0], counts[1], normal)


def _scene(doc: _Table) -> SceneGeometry:
    s = doc.table("scene")
    laser = s.vector("laser_position")
    rho = s.number("visible_reflectivity", 0.8, positive=True)
    if rho > 1:
        raise ConfigError("scene.visible_reflectivity: must lie in (0, 1]")
    ill = _grid(s.table("illumination"))
    hid = _grid(s.table("hidden_wall"))
    fov = _grid(s.table("fov"))
    d = s.table("detector")
    det = _scene_call(d.path, Detector, d.vector("position"),
                      d.number("aperture_area", positive=True), d.vector("optical_axis"))
    d.finish()
    s.finish()

    occluders = []
    raw = doc.raw("occluders", [])
    if not isinstance(raw, list):
        raise ConfigError("occluders: expected an array of tables")
    for k, entry in enumerate(raw):
        o = _Table(entry, f"occluders[{k}]")
        center = o.vector("center")
        normal = o.vector("normal")
        if o.has("radius") and o.has("diameter"):
            raise ConfigError(f"occluders[{k}]: give radius or diameter, not both")
        if o.has("diameter"):
            radius = o.number("diameter", positive=True) / 2
        else:
            radius = o.number("radius", positive=True)
        o.finish()
        occluders.append(_scene_call(o.path, DiskOccluder, center, normal, radius))

    try:
        return SceneGeometry(laser, ill, hid, fov, det, tuple(occluders), rho)
    except SceneError as exc:
        msg = str(exc)
        prefix = "" if msg.startswith("occluders[") else "scene: "
        raise ConfigError(prefix + msg) from None


def _file(base: Path, t: _Table, key: str) -> Path:
    p = Path(t.string(key))
    p = p if p.is_absolute() else base / p
    if not p.is_file():
        raise ConfigError(f"{t._where(key)}: file not found: {p}")
    return p


def _acquisition(doc: _Table, base: Path) -> AcquisitionSpec:
    a = doc.table("acquisition")
    kp = a.number("kp", positive=True)
    pulses = a.number("pulses", positive=True, integer=True)
    eta = a.number("efficiency", positive=True)
    if eta > 1:
        raise ConfigError("acquisition.efficiency: must lie in (0, 1]")
    seed = a.number("seed", 0, nonneg=True, integer=True)
    bg = a.raw("background", 0.0)
    bg_value, bg_file = None, None
    if isinstance(bg, dict):
        b = _Table(bg, "acquisition.background")
        bg_file = _file(base, b, "file")
        b.finish()
    else:
        bg_value = a.number("background", nonneg=True)
    a.finish()
    return AcquisitionSpec(float(kp), int(pulses), float(eta), bg_value, bg_file, int(seed))


_RECON_KEYS = {
    "likelihood": "likelihood", "lambda": "lam", "max_iterations": "max_iterations",
    "tolerance": "tolerance", "tv_inner_iterations": "tv_inner_iterations",
    "tv_inner_tolerance": "tv_inner_tolerance", "tv": "tv",
    "initialization": "initialization", "initial_value": "initial_value",
    "min_iterations": "min_iterations", "window": "window", "method": "method",
    "log_floor": "log_floor",
}
_RECON_CHOICES = {
    "likelihood": ("binomial", "gaussian"), "tv": ("isotropic", "anisotropic"),
    "initialization": ("uniform", "adjoint"), "method": ("mfista", "bb"),
}
_STEP_KEYS = ("initial_step", "shrink", "sufficient_decrease", "max_backtracks")


def _reconstruction(doc: _Table) -> ReconstructionConfig:
    r = doc.table("reconstruction", required=False) or _Table({}, "reconstruction")
    kw = {}
    for key, attr in _RECON_KEYS.items():
        if not r.has(key):
            continue
        if isinstance(ReconstructionConfig.__dataclass_fields__[attr].default, str):
            kw[attr] = r.string(key, choices=_RECON_CHOICES[key])
        elif attr in ("max_iterations", "tv_inner_iterations", "min_iterations", "window"):
            kw[attr] = r.number(key, positive=True, integer=True)
        else:
            kw[attr] = float(r.number(key, nonneg=True))
    step = r.table("step", required=False)
    if step is not None:
        skw = {}
        for key in _STEP_KEYS:
            if step.has(key):
                skw[key] = step.number(key, positive=True, integer=key == "max_backtracks")
        step.finish()
        if "shrink" in skw and not skw["shrink"] < 1:
            raise ConfigError("reconstruction.step.shrink: must lie in (0, 1)")
        kw["step"] = StepRule(**skw)
    r.finish()
    try:
        return ReconstructionConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"reconstruction: {exc}") from None


def _truth(doc: _Table, base: Path) -> TruthSpec:
    t = doc.table("truth", required=False)
    if t is None:
        return TruthSpec("man")
    if t.has("file") and t.has("builtin"):
        raise ConfigError("truth: give builtin or file, not both")
    if t.has("file"):
        path = _file(base, t, "file")
        if path.suffix.lower() not in (".pgm", ".csv"):
            raise ConfigError("truth.file: expected a .pgm or .csv image")
        t.finish()
        return TruthSpec(file=path)
    name = t.string("builtin", "man", choices=set(patterns.BUILTINS))
    allowed = {"man": ("figure", "ground", "inset"), "uniform": ("value",),
               "two_bar": ("separation", "bar_width", "bar_length", "figure", "ground")}
    params = {}
    for key in allowed[name]:
        if not t.has(key):
            continue
        if key == "inset":
            params[key] = tuple(t.vector(key, length=3))
            if not params[key][2] > 0:
                raise ConfigError("truth.inset: size must be positive")
        else:
            params[key] = float(t.number(key, nonneg=True))
    if name == "two_bar" and "separation" not in params:
        raise ConfigError("truth.separation: required field is missing for two_bar")
    t.finish()
    return TruthSpec(name, None, params)


def _gaussian_lambda(a: _Table):
    v = a.raw("gaussian_lambda", "matched")
    if isinstance(v, str):
        if v != "matched":
            raise ConfigError("analysis.gaussian_lambda: expected a number or \"matched\"")
        return v
    return float(a.number("gaussian_lambda", nonneg=True))


def _analysis(doc: _Table) -> AnalysisSpec:
    a = doc.table("analysis", required=False)
    if a is None:
        return AnalysisSpec()
    d = AnalysisSpec()
    spec = AnalysisSpec(
        ppp_levels=tuple(a.numbers("ppp_levels", list(d.ppp_levels), positive=True)),
        seeds=tuple(a.numbers("seeds", list(d.seeds), nonneg=True, integer=True)),
        diameters=tuple(a.numbers("diameters", list(d.diameters), positive=True)),
        separations=tuple(a.numbers("separations", list(d.separations), nonneg=True)),
        lambdas=tuple(a.numbers("lambdas", list(d.lambdas), nonneg=True)),
        lambda_scale=float(a.number("lambda_scale", d.lambda_scale, positive=True)),
        gaussian_lambda=_gaussian_lambda(a),
        tau=float(a.number("tau", d.tau, positive=True)),
        max_pulses=int(a.number("max_pulses", d.max_pulses, positive=True, integer=True)),
        bar_width=float(a.number("bar_width", d.bar_width, positive=True)),
        bar_length=float(a.number("bar_length", d.bar_length, positive=True)),
    )
    a.finish()
    return spec


def parse_config(text: str, base: Path | str = ".", source: Path | None = None) -> ScenarioConfig:
    """Parse and validate a scenario document given as text."""
    where = str(source) if source is not None else "<config>"
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
        loc = f" at line {line}, column {col}" if line is not None else ""
        msg = getattr(exc, "msg", str(exc))
        raise ConfigError(f"{where}: parse error{loc}: {msg}") from None
    base = Path(base)
    doc = _Table(data, "")
    name = doc.string("name", "scenario")
    scene = _scene(doc)
    acq = _acquisition(doc, base)
    recon = _reconstruction(doc)
    truth = _truth(doc, base)
    analysis = _analysis(doc)
    out = Path(doc.string("output_dir", "out"))   # relative to the working directory
    doc.finish()
    cfg = ScenarioConfig(name, scene, acq, recon, truth, analysis, out, data, source)
    _check_referenced(cfg)
    return cfg


def _check_referenced(cfg: ScenarioConfig) -> None:
    """Read referenced files once so bad content fails at load time."""
    if cfg.truth.file is not None:
        try:
            F = cfg.truth_image()
        except (OSError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"truth.file: {exc}") from None
        if not np.all(np.isfinite(F)) or F.min() < 0 or F.max() > 1:
            raise ConfigError("truth.file: reflectivity values must lie in [0, 1]")
    if cfg.acquisition.background_file is not None:
        try:
            cfg.acquisition.background_grid(cfg.scene.m)
        except (OSError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"acquisition.background.file: {exc}") from None


def load_config(path) -> ScenarioConfig:
    """Read a scenario file; bundled scenario names such as ``desk_scale.cfg`` also work."""
    p = Path(path)
    if not p.is_file() and (BUNDLED / p.name).is_file() and p.parent == Path("."):
        p = BUNDLED / p.name
    try:
        raw = p.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"{p}: config file not found") from None
    except OSError as exc:
        raise ConfigError(f"{p}: cannot read config ({exc.strerror})") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{p}: not valid UTF-8 (byte {exc.start})") from None
    return parse_config(text, p.resolve().parent, p)


def bundled(name: str) -> Path:
    """Path of a bundled scenario file."""
    p = BUNDLED / name
    if not p.is_file():
        raise ConfigError(f"no bundled scenario {name!r}")
    return p
