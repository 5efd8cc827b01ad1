"""Run configuration: schema, presets, loading and saving.

A configuration is one JSON document with sections `grammar`, `mechanism`,
`sim`, `reward`, `search` and `render`. Every key is optional; key names
carry their units. Unknown keys are reported and ignored.
"""

import importlib.resources
import json
import logging
import math
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from graspgen.data import presets
from graspgen.grammar import (
    DEFAULT_LENGTHS_M,
    DEFAULT_MOUNT_ANGLES_DEG,
    DEFAULT_MOUNT_OFFSETS_M,
    DEFAULT_STIFFNESSES_NM_PER_RAD,
    Grammar,
    GrammarLimits,
    ParameterSets,
    build_mounts,
)
from graspgen.graph import MountSide
from graspgen.mechanism import PhysicalDefaults
from graspgen.render import RenderSettings
from graspgen.reward import (
    DEFAULT_ORIENTATIONS_DEG,
    DEFAULT_TENSION_LEVELS_N,
    DEFAULT_WEIGHT_PRESET,
    EvaluationSettings,
    RewardWeights,
)
from graspgen.search import BackpropMode, SearchConfig
from graspgen.sim import ContactParams, ShapeKind, SimConfig, SimObject
from graspgen.utilities import ConfigError, dumps_stable

logger = logging.getLogger(__package__)

PRESETS_DIR = importlib.resources.files(presets)
PRESET_NAMES = ("default", "desk", "generic")
DEFAULT_OUTPUT_DIR = "graspgen_out"

__all__ = ["Config", "ConfigError", "load_config", "preset_names"]


class _Section(BaseModel):
    """Base of all sections: unknown keys dropped, values checked on assignment."""

    model_config = ConfigDict(extra="ignore", validate_assignment=True)


class GrammarSection(_Section):
    """Discrete parameter sets and structural limits."""

    lengths_m: list[float] = Field(default=list(DEFAULT_LENGTHS_M), min_length=1)
    stiffnesses_nm_per_rad: list[float] = Field(
        default=list(DEFAULT_STIFFNESSES_NM_PER_RAD), min_length=1
    )
    mount_offsets_m: list[float] = Field(
        default=list(DEFAULT_MOUNT_OFFSETS_M), min_length=1
    )
    mount_angles_deg: list[float] = Field(
        default=list(DEFAULT_MOUNT_ANGLES_DEG), min_length=1
    )
    mount_sides: list[MountSide] = Field(
        default=[MountSide.TOP, MountSide.BOTTOM], min_length=1
    )
    max_fingers: int = Field(default=4, ge=1, le=4)
    max_phalanges: int = Field(default=5, ge=1, le=5)
    min_fingers: int = Field(default=1, ge=1)
    depth_cap: int = Field(default=30, ge=0)

    @field_validator("lengths_m", "stiffnesses_nm_per_rad")
    @classmethod
    def _positive(cls, values: list[float]) -> list[float]:
        if any(value <= 0 or not math.isfinite(value) for value in values):
            raise ValueError("values must be positive")
        return values

    def grammar(self) -> Grammar:
        """Build the grammar these settings describe."""
        try:
            limits = GrammarLimits(
                self.max_fingers, self.max_phalanges, self.min_fingers, self.depth_cap
            )
            params = ParameterSets(
                tuple(self.lengths_m),
                tuple(self.stiffnesses_nm_per_rad),
                build_mounts(
                    self.mount_offsets_m, self.mount_angles_deg, self.mount_sides
                ),
            )
        except ValueError as exc:
            raise ConfigError("grammar", str(exc)) from exc
        return Grammar(params, limits)


class MechanismSection(_Section):
    """Physical values not carried by design graphs."""

    palm_width_m: float = Field(default=0.08, gt=0)
    palm_thickness_m: float = Field(default=0.02, gt=0)
    phalanx_thickness_m: float = Field(default=0.01, gt=0)
    pulley_radius_m: float = Field(default=0.01, gt=0)
    joint_limit_deg: float = Field(default=110.0, gt=0, le=180)
    workspace_center_m: tuple[float, float] = (0.0, 0.06)

    def physical(self) -> PhysicalDefaults:
        """Return the values as used by mechanism compilation."""
        return PhysicalDefaults(
            self.palm_width_m,
            self.palm_thickness_m,
            self.phalanx_thickness_m,
            self.pulley_radius_m,
            self.joint_limit_deg,
            self.workspace_center_m,
        )


class SimSection(_Section):
    """Integrator, contact and event-detection settings."""

    step_s: float = Field(default=1e-3, gt=0)
    t_max_s: float = Field(default=5.0, gt=0)
    t_hold_s: float = Field(default=0.2, ge=0)
    t_loss_s: float = Field(default=0.1, ge=0)
    eps_joint_velocity_rad_per_s: float = Field(default=1e-3, gt=0)
    eps_object_velocity_m_per_s: float = Field(default=1e-3, gt=0)
    eps_torque_residual_nm: float = Field(default=1e-3, gt=0)
    eps_force_residual_n: float = Field(default=1e-2, gt=0)
    min_contact_bodies: int = Field(default=2, ge=1)
    load_factor: float = Field(default=2.0, ge=0)
    ramp_time_s: float = Field(default=1.0, gt=0)
    fail_distance_min_m: float = Field(default=0.03, gt=0)
    force_directions: list[tuple[float, float]] = Field(
        default=[(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)], min_length=1
    )
    contact_stiffness_n_per_m: float = Field(default=1e5, gt=0)
    contact_damping_ns_per_m: float = Field(default=50.0, ge=0)
    friction: float = Field(default=0.6, ge=0)
    friction_damping_ns_per_m: float = Field(default=50.0, ge=0)
    tangential_stiffness_n_per_m: float = Field(default=5e4, gt=0)
    joint_damping_nms_per_rad: float = Field(default=0.02, gt=0)
    object_damping_ns_per_m: float = Field(default=0.0, ge=0)
    object_angular_damping_nms_per_rad: float = Field(default=0.0, ge=0)
    record_every: int = Field(default=10, ge=1)
    trace_decimation: int = Field(default=1, ge=1)
    pose_jitter_m: float = Field(default=0.0, ge=0)
    fixed_object: bool = False

    @field_validator("force_directions")
    @classmethod
    def _unit_directions(
        cls, values: list[tuple[float, float]]
    ) -> list[tuple[float, float]]:
        result = []
        for x, y in values:
            norm = math.hypot(x, y)
            if norm == 0 or not math.isfinite(norm):
                raise ValueError("force directions must be non-zero")
            result.append((x / norm, y / norm))
        return result

    def sim_config(self) -> SimConfig:
        """Return the simulator settings."""
        return SimConfig(
            step=self.step_s,
            t_max=self.t_max_s,
            t_hold=self.t_hold_s,
            t_loss=self.t_loss_s,
            eps_joint_velocity=self.eps_joint_velocity_rad_per_s,
            eps_object_velocity=self.eps_object_velocity_m_per_s,
            eps_torque_residual=self.eps_torque_residual_nm,
            eps_force_residual=self.eps_force_residual_n,
            min_contact_bodies=self.min_contact_bodies,
            load_factor=self.load_factor,
            ramp_time=self.ramp_time_s,
            fail_distance_min=self.fail_distance_min_m,
            force_directions=tuple(self.force_directions),
            contact=ContactParams(
                stiffness=self.contact_stiffness_n_per_m,
                damping=self.contact_damping_ns_per_m,
                friction=self.friction,
                friction_damping=self.friction_damping_ns_per_m,
                tangential_stiffness=self.tangential_stiffness_n_per_m,
            ),
            joint_damping=self.joint_damping_nms_per_rad,
            object_damping=self.object_damping_ns_per_m,
            object_angular_damping=self.object_angular_damping_nms_per_rad,
            record_every=self.record_every,
            trace_decimation=self.trace_decimation,
            pose_jitter=self.pose_jitter_m,
            fixed_object=self.fixed_object,
        )


class ObjectModel(_Section):
    """One test object; only the dimensions of its shape are used."""

    name: str = Field(min_length=1)
    shape: ShapeKind
    mass_kg: float = Field(default=0.1, gt=0)
    radius_m: float = Field(default=0.0, ge=0)
    width_m: float = Field(default=0.0, ge=0)
    height_m: float = Field(default=0.0, ge=0)
    sides: int = Field(default=0, ge=0)
    circumradius_m: float = Field(default=0.0, ge=0)

    def sim_object(self, center: tuple[float, float]) -> SimObject:
        """Return the object placed at the workspace centre."""
        try:
            return SimObject(
                self.name,
                self.shape,
                self.mass_kg,
                (center[0], center[1], 0.0),
                radius=self.radius_m,
                width=self.width_m,
                height=self.height_m,
                sides=self.sides,
                circumradius=self.circumradius_m,
            )
        except ValueError as exc:
            raise ConfigError(f"reward.objects.{self.name}", str(exc)) from exc


def _default_object_models() -> list[ObjectModel]:
    return [
        ObjectModel(name="disc", shape=ShapeKind.DISC, radius_m=0.03),
        ObjectModel(name="rect", shape=ShapeKind.RECT, width_m=0.05, height_m=0.05),
        ObjectModel(
            name="hexagon",
            shape=ShapeKind.REGULAR_POLYGON,
            sides=6,
            circumradius_m=0.035,
        ),
    ]


class RewardSection(_Section):
    """Weights, object set and control grid."""

    weights: str | list[float] = DEFAULT_WEIGHT_PRESET
    objects: list[ObjectModel] = Field(
        default_factory=_default_object_models, min_length=1
    )
    tension_levels_n: list[float] = Field(
        default=list(DEFAULT_TENSION_LEVELS_N), min_length=1
    )
    orientations_deg: list[float] = Field(
        default=list(DEFAULT_ORIENTATIONS_DEG), min_length=1
    )
    workers: int = Field(default=0, ge=0)

    @field_validator("objects")
    @classmethod
    def _unique_names(cls, values: list[ObjectModel]) -> list[ObjectModel]:
        names = [value.name for value in values]
        if len(set(names)) != len(names):
            raise ValueError("object names must be unique")
        return values

    @field_validator("tension_levels_n")
    @classmethod
    def _non_negative(cls, values: list[float]) -> list[float]:
        if any(value < 0 or not math.isfinite(value) for value in values):
            raise ValueError("tension levels must be finite and non-negative")
        if len(set(values)) != len(values):
            raise ValueError("tension levels must be unique")
        return values

    def reward_weights(self) -> RewardWeights:
        """Resolve a preset name or explicit list."""
        if isinstance(self.weights, str):
            return RewardWeights.from_preset(self.weights)
        return RewardWeights.from_sequence(self.weights)


class SearchSection(_Section):
    """Tree search settings."""

    iterations: int = Field(default=100, gt=0)
    exploration_c: float = Field(default=math.sqrt(2), ge=0)
    seed: int = Field(default=0, ge=0)
    top_k: int = Field(default=5, ge=1)
    backprop: BackpropMode = BackpropMode.MAX
    batch_size: int = Field(default=1, ge=1)
    log_every: int = Field(default=10, ge=0)
    widening_c: float = Field(default=1.0, ge=0)
    widening_alpha: float = Field(default=0.5, gt=0, le=1)
    start_design: Optional[str] = None
    start_depth: int = Field(default=0, ge=0)


class RenderSection(_Section):
    """Frame output settings."""

    frame_interval_s: float = Field(default=0.1, gt=0)
    scale_px_per_m: float = Field(default=2000.0, gt=0)
    width_px: int = Field(default=400, gt=0)
    height_px: int = Field(default=400, gt=0)
    force_scale_m_per_n: float = Field(default=0.005, ge=0)


class Config(_Section):
    """Complete run configuration."""

    grammar: GrammarSection = Field(default_factory=GrammarSection)
    mechanism: MechanismSection = Field(default_factory=MechanismSection)
    sim: SimSection = Field(default_factory=SimSection)
    reward: RewardSection = Field(default_factory=RewardSection)
    search: SearchSection = Field(default_factory=SearchSection)
    render: RenderSection = Field(default_factory=RenderSection)
    output_dir: str = DEFAULT_OUTPUT_DIR

    def objects(self) -> list[SimObject]:
        """Test objects placed at the workspace centre."""
        center = self.mechanism.workspace_center_m
        return [model.sim_object(center) for model in self.reward.objects]

    def evaluation_settings(self, seed: Optional[int] = None) -> EvaluationSettings:
        """Settings for scoring designs."""
        return EvaluationSettings(
            objects=tuple(self.objects()),
            tension_levels=tuple(self.reward.tension_levels_n),
            sim=self.sim.sim_config(),
            weights=self.reward.reward_weights(),
            orientations_deg=tuple(self.reward.orientations_deg),
            seed=self.search.seed if seed is None else seed,
            physical=self.mechanism.physical(),
            workers=self.reward.workers,
        )

    def search_config(
        self, seed: Optional[int] = None, iterations: Optional[int] = None
    ) -> SearchConfig:
        """Settings for the tree search, with optional overrides."""
        section = self.search
        weights = self.reward.reward_weights()
        return SearchConfig(
            iterations=section.iterations if iterations is None else iterations,
            exploration_c=section.exploration_c,
            seed=section.seed if seed is None else seed,
            top_k=section.top_k,
            reward_normalizer=len(self.reward.objects) * weights.total,
            backprop=section.backprop,
            batch_size=section.batch_size,
            log_every=section.log_every,
            widening_c=section.widening_c,
            widening_alpha=section.widening_alpha,
        )

    def render_settings(self) -> RenderSettings:
        """Frame size and scales for drawing runs."""
        section = self.render
        return RenderSettings(
            scale=section.scale_px_per_m,
            width=section.width_px,
            height=section.height_px,
            force_scale=section.force_scale_m_per_n,
            frame_interval=section.frame_interval_s,
        )

    def check(self) -> None:
        """Build every derived object once so inconsistencies surface early.

        Raises:
            ConfigError: naming the offending section.
        """
        self.grammar.grammar()
        self.evaluation_settings()
        self.search_config()

    def to_json(self) -> str:
        """Return the configuration as byte-stable JSON text."""
        return dumps_stable(self.model_dump(mode="json"))


def preset_names() -> list[str]:
    """Names of the shipped configuration presets."""
    return list(PRESET_NAMES)


def _warn_unknown(data: Any, model: type[BaseModel], path: str) -> None:
    """Log every key of `data` the model does not define."""
    if not isinstance(data, dict):
        return
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        info = model.model_fields.get(key)
        if info is None:
            logger.warning(f"Unknown configuration key '{where}' ignored")
            continue
        annotation = info.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            _warn_unknown(value, annotation, where)
        elif key == "objects" and isinstance(value, list):
            for index, item in enumerate(value):
                _warn_unknown(item, ObjectModel, f"{where}[{index}]")


def config_from_dict(data: dict[str, Any]) -> Config:
    """Validate a configuration document.

    Raises:
        ConfigError: for the first invalid value, with its field path.
    """
    _warn_unknown(data, Config, "")
    try:
        config = Config.model_validate(data)
    except ValidationError as exc:
        error = exc.errors()[0]
        field = ".".join(str(part) for part in error["loc"])
        raise ConfigError(field, error["msg"]) from exc
    config.check()
    return config


def load_config(source: Optional[str | Path] = None) -> Config:
    """Load a configuration file or a named preset.

    Args:
        source: Path of a JSON file, or a preset name. Defaults to the
            `default` preset.

    Raises:
        ConfigError: if the source does not exist, is not valid JSON, or
            holds invalid values.
    """
    if source is None:
        source = "default"
    path = Path(source)
    if path.is_file():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError("", f"Unable to read config {path}: {exc}") from exc
    elif str(source) in PRESET_NAMES:
        data = json.loads((PRESETS_DIR / f"{source}.json").read_text(encoding="utf-8"))
    else:
        raise ConfigError(
            "", f"No config file or preset named '{source}' (presets: {PRESET_NAMES})"
        )
    if not isinstance(data, dict):
        raise ConfigError("", "top level of a config must be an object")
    logger.debug(f"Loaded configuration from {source}")
    return config_from_dict(data)


def save_config(config: Config, path: str | Path) -> None:
    """Write a configuration so that `load_config` restores it exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_json(), encoding="utf-8")
