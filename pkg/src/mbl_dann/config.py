"""Pipeline configuration: INI-style ``key = value`` sections with '#' comments.

Grid values accept comma-separated numbers and inclusive ranges written as
``start:stop:step``, e.g. ``h = 0.1:0.5:0.1, 0.7:6.9:0.2, 7.5``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dann.train import TrainConfig
from .dataset import DEFAULT_GRID, GridSpec, arith_grid
from .errors import ConfigError, InvalidArgumentError
from .scaling import HC_GRID, NU_GRID, VALUE_BAND
from .spin_chain import BOUNDARIES, PERIODIC

DEFAULT_PREDICT_H = (
    arith_grid(0.1, 0.5, 0.1) + arith_grid(0.7, 6.9, 0.2) + arith_grid(7.0, 8.0, 0.5)
)


def parse_grid(text: str) -> tuple:
    values = []
    for part in text.replace("\n", ",").split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                start, stop, step = (float(p) for p in part.split(":"))
                if step <= 0:
                    raise ValueError("step must be positive")
                values.extend(arith_grid(start, stop, step))
            else:
                values.append(round(float(part), 10))
        except ValueError as exc:
            raise ConfigError(f"bad grid entry {part!r}: {exc}") from exc
    if not values:
        raise ConfigError(f"empty grid {text!r}")
    return tuple(sorted(set(values)))


def parse_range(text: str) -> tuple:
    try:
        lo, hi, step = (float(p) for p in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"expected start:stop:step, got {text!r}") from exc
    return (lo, hi, step)


@dataclass(frozen=True)
class PredictConfig:
    h: tuple = DEFAULT_PREDICT_H
    eps: tuple = DEFAULT_GRID.eps
    realizations: int = 50
    k: int = 50


@dataclass(frozen=True)
class BaselineConfig:
    h: tuple = DEFAULT_PREDICT_H
    eps: tuple = DEFAULT_GRID.eps
    realizations: int = 50
    window: float = 0.05


@dataclass(frozen=True)
class CollapseConfig:
    eps: tuple = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    hc_grid: tuple = HC_GRID
    nu_grid: tuple = NU_GRID
    error_factor: float = 2.0
    band: tuple = (0.1, 0.9)
    value_band: tuple = VALUE_BAND


@dataclass(frozen=True)
class PipelineConfig:
    n_sites: tuple = (8, 10, 12)
    master_seed: int = 1234
    workers: int = 1
    out_dir: Path = Path("mbl_run")
    boundary: str = PERIODIC
    grid: GridSpec = DEFAULT_GRID
    scale: float = 1.0
    labeled_realizations: int | None = None
    unlabeled_realizations: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    collapse: CollapseConfig = field(default_factory=CollapseConfig)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.n_sites:
            raise ConfigError("n_sites must not be empty")
        for n in self.n_sites:
            if n % 2 or n < 2:
                raise ConfigError(f"n_sites entries must be even and >= 2, got {n}")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}")
        if not 0 < self.scale <= 1:
            raise ConfigError("dataset scale must lie in (0, 1]")
        for name in ("delocalized_h", "mbl_h", "unlabeled_h", "eps"):
            if not getattr(self.grid, name):
                raise ConfigError(f"grid {name} must not be empty")
        if not (self.predict.h and self.predict.eps and self.baseline.h and self.baseline.eps):
            raise ConfigError("predict/baseline grids must not be empty")

    def with_overrides(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "out_dir" in kw:
            kw["out_dir"] = Path(kw["out_dir"])
        return replace(self, **kw)


def _coerce(section, key, typ, default):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        if typ is bool:
            return section.getboolean(key)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {raw!r}") from exc


def _pair(section, key, default):
    if key not in section:
        return default
    try:
        lo, hi = (float(v) for v in section[key].split(","))
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: expected 'lo, hi', got {section[key]!r}") from exc
    if not lo < hi:
        raise ConfigError(f"[{section.name}] {key}: lo must be below hi")
    return (lo, hi)


def _known(section, allowed):
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"[{section.name}] unknown keys: {', '.join(sorted(extra))}")


def loads(text: str, base_dir: Path | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    sections = set(parser.sections())
    unknown = sections - {"pipeline", "grids", "dataset", "train", "predict", "baseline", "collapse"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    kw = {}
    d = PipelineConfig()

    if "pipeline" in parser:
        s = parser["pipeline"]
        _known(s, ("n_sites", "master_seed", "workers", "out_dir", "boundary"))
        if "n_sites" in s:
            try:
                kw["n_sites"] = tuple(int(v) for v in s["n_sites"].split(","))
            except ValueError as exc:
                raise ConfigError(f"[pipeline] n_sites: {exc}") from exc
        kw["master_seed"] = _coerce(s, "master_seed", int, d.master_seed)
        kw["workers"] = _coerce(s, "workers", int, d.workers)
        kw["boundary"] = _coerce(s, "boundary", str, d.boundary)
        if "out_dir" in s:
            out = Path(s["out_dir"].strip())
            kw["out_dir"] = out if out.is_absolute() or base_dir is None else base_dir / out

    if "grids" in parser:
        s = parser["grids"]
        _known(s, ("delocalized_h", "mbl_h", "unlabeled_h", "eps", "k"))
        g = {name: parse_grid(s[name]) for name in ("delocalized_h", "mbl_h", "unlabeled_h", "eps")
             if name in s}
        g["k"] = _coerce(s, "k", int, DEFAULT_GRID.k)
        kw["grid"] = replace(DEFAULT_GRID, **g)

    if "dataset" in parser:
        s = parser["dataset"]
        _known(s, ("scale", "labeled_realizations", "unlabeled_realizations"))
        kw["scale"] = _coerce(s, "scale", float, d.scale)
        kw["labeled_realizations"] = _coerce(s, "labeled_realizations", int, None)
        kw["unlabeled_realizations"] = _coerce(s, "unlabeled_realizations", int, None)

    if "train" in parser:
        s = parser["train"]
        tkw = {}
        allowed = {f.name: f.type for f in fields(TrainConfig)}
        _known(s, allowed)
        for f in fields(TrainConfig):
            typ = int if f.type in ("int", int) else float
            if f.name in s:
                tkw[f.name] = _coerce(s, f.name, typ, None)
        try:
            kw["train"] = TrainConfig(**tkw)
        except InvalidArgumentError as exc:
            raise ConfigError(f"[train] {exc}") from exc

    if "predict" in parser:
        s = parser["predict"]
        _known(s, ("h", "eps", "realizations", "k"))
        p = PredictConfig()
        kw["predict"] = PredictConfig(
            parse_grid(s["h"]) if "h" in s else p.h,
            parse_grid(s["eps"]) if "eps" in s else p.eps,
            _coerce(s, "realizations", int, p.realizations),
            _coerce(s, "k", int, p.k),
        )

    if "baseline" in parser:
        s = parser["baseline"]
        _known(s, ("h", "eps", "realizations", "window"))
        b = BaselineConfig()
        kw["baseline"] = BaselineConfig(
            parse_grid(s["h"]) if "h" in s else b.h,
            parse_grid(s["eps"]) if "eps" in s else b.eps,
            _coerce(s, "realizations", int, b.realizations),
            _coerce(s, "window", float, b.window),
        )

    if "collapse" in parser:
        s = parser["collapse"]
        _known(s, ("eps", "hc_grid", "nu_grid", "error_factor", "band", "value_band"))
        c = CollapseConfig()
        kw["collapse"] = CollapseConfig(
            parse_grid(s["eps"]) if "eps" in s else c.eps,
            parse_range(s["hc_grid"]) if "hc_grid" in s else c.hc_grid,
            parse_range(s["nu_grid"]) if "nu_grid" in s else c.nu_grid,
            _coerce(s, "error_factor", float, c.error_factor),
            _pair(s, "band", c.band),
            _pair(s, "value_band", c.value_band),
        )
    try:
        return PipelineConfig(**kw)
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, base_dir=path.parent)
