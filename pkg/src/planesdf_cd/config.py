"""Pipeline configuration: flat ``key = value`` files plus command-line overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping, Optional

from .planesdf import FusionParams
from .plane_detection import DetectionParams
from .validate3d import ValidationParams


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


@dataclass
class PipelineConfig:
    # values taken from the published implementation details
    fusing_band: float = 0.3
    voxel_size: float = 0.007
    delta_n: float = 0.95
    delta_d: float = 0.2
    delta_h: float = 0.02
    n_theta: int = 5
    n_phi: int = 5
    n_lambda: int = 6
    alpha: float = 2.0
    delta_blob: float = 0.9
    # our own choices
    inlier_tolerance: float = 0.01
    min_inliers: int = 1000
    orientation_tolerance_deg: float = 10.0
    min_plane_area: float = 0.2
    ransac_iterations: int = 300
    max_planes: int = 8
    seed: int = 0
    truncation_voxels: float = 4.0
    flat_tolerance: float = 0.015
    max_voxels: int = 40_000_000
    min_cluster_cells: int = 12
    dilation_radius: int = 2
    min_overlap: float = 0.3
    doh_floor: float = 1e-6
    max_key_voxels: int = 512
    missing_score: float = 1e-3
    score_bins: int = 10
    sdf_sigma: float = 2.0
    match_radius: float = 0.014
    validate_3d: bool = True
    in_plane_icp: bool = False
    workers: int = 1

    def detection(self) -> DetectionParams:
        return DetectionParams(
            inlier_tolerance=self.inlier_tolerance,
            min_inliers=self.min_inliers,
            orientation_tolerance_deg=self.orientation_tolerance_deg,
            min_plane_area=self.min_plane_area,
            ransac_iterations=self.ransac_iterations,
            max_planes=self.max_planes,
            seed=self.seed,
        )

    def fusion(self) -> FusionParams:
        return FusionParams(
            voxel_size=self.voxel_size,
            fusing_band=self.fusing_band,
            truncation_voxels=self.truncation_voxels,
            lower_tolerance=self.inlier_tolerance,
            flat_tolerance=self.flat_tolerance,
            max_voxels=self.max_voxels,
        )

    def validation(self) -> ValidationParams:
        return ValidationParams(
            n_theta=self.n_theta,
            n_phi=self.n_phi,
            n_lambda=self.n_lambda,
            alpha=self.alpha,
            delta_blob=self.delta_blob,
            sdf_sigma=self.sdf_sigma,
            doh_floor=self.doh_floor,
            max_key_voxels=self.max_key_voxels,
            missing_score=self.missing_score,
            score_bins=self.score_bins,
        )

    def validate(self) -> None:
        may_be_zero = {"seed", "dilation_radius", "min_overlap"}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if f.name in may_be_zero:
                if v < 0:
                    raise ConfigError(f.name, "must be >= 0")
            elif v <= 0:
                raise ConfigError(f.name, "must be positive")
        if self.delta_n > 1 or self.min_overlap > 1 or self.delta_blob > 1:
            raise ConfigError("delta_n" if self.delta_n > 1 else
                              "min_overlap" if self.min_overlap > 1 else "delta_blob", "must be <= 1")

    def to_text(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in asdict(self).items())


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v)


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    text = raw.strip()
    if kind in ("bool", bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(key, f"expected a boolean, got {raw!r}")
    try:
        if kind in ("int", int):
            f = float(text)
            if not f.is_integer():
                raise ValueError
            return int(f)
        return float(text)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}") from None


def _parse_lines(lines: Iterable[str], origin: str) -> dict:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(text, f"{origin}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(key, "unknown key")
        out[key] = _coerce(key, value)
    return out


def parse_config(path: Optional[str] = None, overrides: Optional[Iterable[str] | Mapping] = None) -> PipelineConfig:
    """Defaults, then file values, then overrides (``key=value`` strings or a mapping)."""
    values = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            values.update(_parse_lines(fh.read().splitlines(), path))
    if overrides:
        if isinstance(overrides, Mapping):
            items = [f"{k}={v}" for k, v in overrides.items()]
        else:
            items = list(overrides)
        values.update(_parse_lines(items, "override"))
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg
