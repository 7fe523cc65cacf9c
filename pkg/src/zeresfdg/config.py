"""Experiment configuration: strict JSON loading, validation and round-trip."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .controller import Mode
from .errors import ConfigError
from .guidance import GuidanceConfig
from .qsilk import QSilkConfig

GUIDANCE_KEYS = tuple(f.name for f in fields(GuidanceConfig) if f.name != "s")
QSILK_KEYS = tuple(f.name for f in fields(QSilkConfig))


@dataclass(frozen=True)
class RunSpec:
    steps: int = 25
    seed: int = 0
    shape: tuple = (1, 4, 64, 64)
    s: float = 4.5
    sigma_min: float = 0.03
    sigma_max: float = 14.6
    schedule_rho: float = 7.0
    force_mode: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        for name in ("s", "sigma_min", "sigma_max", "schedule_rho"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"run.{name} must be a number", (f"run.{name}",))
            object.__setattr__(self, name, float(value))
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError("run.steps must be an integer >= 1", ("run.steps",))
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("run.seed must be a non-negative integer", ("run.seed",))
        if len(self.shape) != 4 or not all(isinstance(d, int) and d >= 1 for d in self.shape):
            raise ConfigError("run.shape must be four positive integers", ("run.shape",))
        if self.shape[2] < 3 or self.shape[3] < 3:
            raise ConfigError("run.shape needs h, w >= 3", ("run.shape",))
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("need 0 < sigma_min < sigma_max", ("run.sigma_min", "run.sigma_max"))
        if self.force_mode is not None and self.force_mode not in {m.value for m in Mode}:
            raise ConfigError(f"run.force_mode must be one of {[m.value for m in Mode]}",
                              ("run.force_mode",))


@dataclass(frozen=True)
class ImageSpec:
    """Either a named pattern with parameters or a raw tensor file."""

    pattern: str | None = None
    params: dict = field(default_factory=dict)
    path: str | None = None

    def __post_init__(self):
        if (self.pattern is None) == (self.path is None):
            raise ConfigError("image spec needs exactly one of 'pattern' or 'path'")


@dataclass(frozen=True)
class ModelSpec:
    target_cond: ImageSpec = field(
        default_factory=lambda: ImageSpec("checkerboard", {"period": 8, "low": -1.0, "high": 1.0}))
    target_uncond: ImageSpec = field(default_factory=lambda: ImageSpec("constant", {"value": 0.0}))
    mask: ImageSpec | None = None
    depth: ImageSpec | None = None


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    csv: bool = True
    json: bool = True
    tensors: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    guidance: dict = field(default_factory=dict)
    qsilk: dict = field(default_factory=dict)
    run: RunSpec = field(default_factory=RunSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    def guidance_config(self):
        return GuidanceConfig(s=self.run.s, **self.guidance)

    def qsilk_config(self):
        return QSilkConfig(**self.qsilk)

    def to_dict(self):
        d = asdict(self)
        d["guidance"] = {k: v for k, v in asdict(self.guidance_config()).items() if k != "s"}
        d["qsilk"] = asdict(self.qsilk_config())
        d["run"]["shape"] = list(self.run.shape)
        for key in ("mask", "depth"):
            if d["model"][key] is None:
                del d["model"][key]
        for key in ("target_cond", "target_uncond", "mask", "depth"):
            if key in d["model"]:
                d["model"][key] = {k: v for k, v in d["model"][key].items() if v is not None}
        if d["run"]["force_mode"] is None:
            del d["run"]["force_mode"]
        return d

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def with_knob(self, axis, value):
        """Copy with one numeric knob replaced; ``axis`` may be dotted (``guidance.tau_hi``)."""
        section, name = resolve_axis(axis)
        if section == "run":
            kind = type(getattr(self.run, name))
            return replace(self, run=replace(self.run, **{name: kind(value)}))
        current = dict(getattr(self, section))
        current[name] = float(value)
        cfg = replace(self, **{section: current})
        # validate eagerly
        cfg.guidance_config()
        cfg.qsilk_config()
        return cfg


_NUMERIC_RUN = ("steps", "seed", "s", "sigma_min", "sigma_max", "schedule_rho")
_NUMERIC_GUIDANCE = tuple(
    f.name for f in fields(GuidanceConfig) if f.type in ("float", float) and f.name != "s")
_NUMERIC_QSILK = tuple(f.name for f in fields(QSilkConfig) if f.type in ("float", float))


def resolve_axis(axis):
    """Map a knob name to ``(section, field)``; raises ConfigError for unknown names."""
    if "." in axis:
        section, name = axis.split(".", 1)
        table = {"run": _NUMERIC_RUN, "guidance": _NUMERIC_GUIDANCE, "qsilk": _NUMERIC_QSILK}
        if name in table.get(section, ()):
            return section, name
    else:
        for section, names in (("run", _NUMERIC_RUN), ("guidance", _NUMERIC_GUIDANCE),
                               ("qsilk", _NUMERIC_QSILK)):
            if axis in names:
                return section, axis
    known = sorted(_NUMERIC_RUN + _NUMERIC_GUIDANCE + _NUMERIC_QSILK)
    raise ConfigError(f"unknown sweep axis {axis!r}; numeric knobs are {known}", (axis,))


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text, key, path):
    line = _line_of(text, key)
    return f"{path} (line {line})" if line else path


def _strict(cls, data, path, text):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be an object", (path,))
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        locs = ", ".join(_where(text, k, f"{path}.{k}") for k in unknown)
        raise ConfigError(f"unknown key(s): {locs}", tuple(f"{path}.{k}" for k in unknown))
    return data


def _flat_section(data, allowed, path, text):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be an object", (path,))
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        locs = ", ".join(_where(text, k, f"{path}.{k}") for k in unknown)
        raise ConfigError(f"unknown key(s): {locs}", tuple(f"{path}.{k}" for k in unknown))
    return dict(data)


def _image(data, path, text):
    if data is None:
        return None
    d = _strict(ImageSpec, data, path, text)
    try:
        return ImageSpec(**d)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}", (path,)) from None


def from_dict(data, text=None):
    """Build a validated ExperimentConfig; ``text`` (raw JSON) improves line diagnostics."""
    top = _strict(ExperimentConfig, data, "config", text)
    guidance = _flat_section(top.get("guidance", {}), GUIDANCE_KEYS, "guidance", text)
    qsilk = _flat_section(top.get("qsilk", {}), QSILK_KEYS, "qsilk", text)
    run_d = _strict(RunSpec, top.get("run", {}), "run", text)
    model_d = _strict(ModelSpec, top.get("model", {}), "model", text)
    out_d = _strict(OutputSpec, top.get("outputs", {}), "outputs", text)
    try:
        run = RunSpec(**run_d)
    except TypeError as exc:
        raise ConfigError(f"run: {exc}", ("run",)) from None
    model_kwargs = {k: _image(v, f"model.{k}", text) for k, v in model_d.items()}
    cfg = ExperimentConfig(guidance, qsilk, run, ModelSpec(**model_kwargs), OutputSpec(**out_d))
    for section, build in (("guidance", cfg.guidance_config), ("qsilk", cfg.qsilk_config)):
        try:
            build()
        except ConfigError as exc:
            keys = tuple(f"{section}.{k}" for k in exc.keys) or (section,)
            locs = ", ".join(_where(text, k.split(".")[-1], k) for k in keys)
            raise ConfigError(f"{locs}: {exc}", keys) from None
        except TypeError as exc:
            raise ConfigError(f"{section}: {exc}", (section,)) from None
    return cfg


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_dict(data, text)


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text)
