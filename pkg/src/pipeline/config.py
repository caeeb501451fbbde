from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from geometry.errors import ConfigError
from geometry.layout import Projection
from geometry.ricci import FlowMode, RadiusRule

CONFIG_DIR = Path(__file__).parent / "configs"
DEFAULT_PACK = CONFIG_DIR / "default.yaml"


class InputKind(str, Enum):
    MESH = "mesh"
    DEPTH = "depth"


@dataclass
class ConfigPack:
    version: int
    name: str
    description: str
    parameters: Dict[str, Any]


@dataclass
class PipelineConfig:
    inputs: List[str] = field(default_factory=list)
    kind: InputKind = InputKind.MESH
    out: Path = Path("out")
    width: int = 182
    height: int = 182
    epsilon: float = 1e-6
    mode: FlowMode = FlowMode.NEWTON
    step: float = 0.05
    max_iters: Optional[int] = None
    projection: Projection = Projection.CONFORMAL
    reference: Optional[Path] = None
    no_align: bool = False
    clamp_weights: bool = False
    radius_rule: RadiusRule = RadiusRule.MIN
    curvature_prefactor: float = 1.5
    spacing: float = 1.0
    depth_scale: float = 1.0
    icp_max_iters: int = 50
    icp_tol: float = 1e-8
    jobs: int = 1
    export_vertex_csv: bool = False
    export_embedding: bool = False
    export_quantities: bool = False

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], base: Optional["PipelineConfig"] = None) -> "PipelineConfig":
        """Overlay ``mapping`` on ``base`` (defaults when omitted). Unknown keys are an error."""
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dataclasses.asdict(base or cls())
        for key, value in mapping.items():
            values[key] = _coerce(key, value)
        return cls(**values)

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        """Flags win over file values; ``None`` means the flag was not given."""
        return PipelineConfig.from_mapping({k: v for k, v in overrides.items() if v is not None}, base=self)

    def validate(self) -> "PipelineConfig":
        if self.width < 2 or self.height < 2:
            raise ConfigError(f"raster size must be at least 2x2, got {self.width}x{self.height}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not self.step > 0:
            raise ConfigError("step must be positive")
        if self.max_iters is not None and self.max_iters < 0:
            raise ConfigError("max_iters must be non-negative")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.spacing <= 0 or self.depth_scale <= 0:
            raise ConfigError("spacing and depth_scale must be positive")
        if self.projection is Projection.ORTHOGRAPHIC and self.reference is None and not self.no_align:
            raise ConfigError("orthographic projection needs --reference or an explicit --no-align")
        return self

    def to_dict(self) -> Dict[str, Any]:
        out = {}
        for key, value in dataclasses.asdict(self).items():
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, Path):
                value = str(value)
            out[key] = value
        return out


_ENUMS = {
    "kind": InputKind,
    "mode": FlowMode,
    "projection": Projection,
    "radius_rule": RadiusRule,
}
_INTS = {"width", "height", "icp_max_iters", "jobs", "max_iters"}
_FLOATS = {"epsilon", "step", "curvature_prefactor", "spacing", "depth_scale", "icp_tol"}
_BOOLS = {"no_align", "clamp_weights", "export_vertex_csv", "export_embedding", "export_quantities"}
_PATHS = {"out", "reference"}


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        if key in ("max_iters", "reference"):
            return None
        raise ConfigError(f"'{key}' may not be null")
    try:
        if key in _ENUMS:
            return _ENUMS[key](value)
        if key in _INTS:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError(value)
            return int(value)
        if key in _FLOATS:
            return float(value)
        if key in _BOOLS:
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if key in _PATHS:
            return Path(value)
        if key == "inputs":
            return [str(value)] if isinstance(value, (str, Path)) else [str(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for '{key}': {value!r}") from None
    return value


# -----------------------------
# Packs
# -----------------------------
def load_pack(path: Union[str, Path] = DEFAULT_PACK) -> ConfigPack:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    # a bare mapping of parameters is accepted as well as a full pack
    if "parameters" not in data:
        data = {"version": 1, "name": path.stem, "parameters": data}
    params = data.get("parameters") or {}
    if not isinstance(params, dict):
        raise ConfigError(f"{path}: 'parameters' must be a mapping")
    return ConfigPack(
        version=int(data.get("version", 1)),
        name=str(data.get("name", path.stem)),
        description=str(data.get("description", "")),
        parameters=params,
    )


def build_config(config_file: Optional[Union[str, Path]] = None, **overrides: Any) -> PipelineConfig:
    """Defaults, then the shipped pack, then ``config_file``, then explicit overrides."""
    cfg = PipelineConfig.from_mapping(load_pack(DEFAULT_PACK).parameters)
    if config_file is not None:
        cfg = PipelineConfig.from_mapping(load_pack(config_file).parameters, base=cfg)
    return cfg.with_overrides(**overrides).validate()


def parse_size(text: str) -> Tuple[int, int]:
    """'182x182' -> (182, 182)."""
    try:
        w, h = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"size must look like WIDTHxHEIGHT, got {text!r}") from None
    return w, h
