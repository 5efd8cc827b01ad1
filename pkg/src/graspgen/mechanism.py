"""Compile terminal design graphs into physical gripper descriptions."""

from dataclasses import dataclass
from enum import StrEnum, auto
import logging
import math
from typing import Optional

from graspgen.graph import DesignGraph, MountSide, MountTransform
from graspgen.utilities import sing_plur

logger = logging.getLogger(__package__)

SIDE_ORDER = {MountSide.TOP: 0, MountSide.BOTTOM: 1}
MAX_FINGERS = 4
MAX_PHALANGES = 5
COINCIDENT_TOLERANCE_M = 1e-9


@dataclass(frozen=True)
class PhysicalDefaults:
    """Physical values the design graph does not carry.

    Attributes:
        palm_width: m.
        palm_thickness: m.
        phalanx_thickness: m.
        pulley_radius: Shared by every joint of every finger, m.
        joint_limit_deg: Upper joint travel; lower limit is the straight finger.
        workspace_center: Nominal object centre in the palm frame, m.
    """

    palm_width: float = 0.08
    palm_thickness: float = 0.02
    phalanx_thickness: float = 0.01
    pulley_radius: float = 0.01
    joint_limit_deg: float = 110.0
    workspace_center: tuple[float, float] = (0.0, 0.06)


@dataclass(frozen=True)
class PalmSpec:
    """Palm dimensions, m."""

    width: float
    thickness: float


@dataclass(frozen=True)
class PhalanxSpec:
    """One rigid link of a finger and the spring of the joint before it.

    Attributes:
        length: m.
        stiffness: N·m/rad.
        rest_angle: rad.
        thickness: m.
    """

    length: float
    stiffness: float
    rest_angle: float
    thickness: float


@dataclass(frozen=True)
class FingerSpec:
    """A tendon-driven finger: its mount and phalanges from base to tip."""

    mount: MountTransform
    phalanges: tuple[PhalanxSpec, ...]
    pulley_radius: float

    @property
    def joint_count(self) -> int:
        """One joint before each phalanx."""
        return len(self.phalanges)

    @property
    def total_length(self) -> float:
        """Sum of phalanx lengths, m."""
        return sum(phalanx.length for phalanx in self.phalanges)

    @property
    def flex_sign(self) -> float:
        """Sign of in-plane rotation produced by flexing this finger."""
        return self.mount.side.flex_sign

    def base_point(self, palm: PalmSpec) -> tuple[float, float]:
        """Mount point on the palm's front face, m."""
        return (self.mount.offset_m, palm.thickness / 2)

    def base_angle(self) -> float:
        """Direction of the straight finger, rad from the x axis."""
        return math.pi / 2 + self.flex_sign * self.mount.angle_rad


@dataclass(frozen=True)
class MechanismSpec:
    """Compiled gripper: palm plus fingers, ready for simulation.

    Attributes:
        palm: Palm dimensions.
        fingers: Fingers ordered by mount side then offset.
        joint_limit: Upper joint travel, rad.
    """

    palm: PalmSpec
    fingers: tuple[FingerSpec, ...]
    joint_limit: float = math.radians(110.0)

    def __post_init__(self) -> None:
        if not 1 <= len(self.fingers) <= MAX_FINGERS:
            raise ValueError(f"Mechanism must have 1-{MAX_FINGERS} fingers")
        if self.palm.width <= 0:
            raise ValueError("Palm width must be positive")

    @property
    def joint_counts(self) -> list[int]:
        """Number of joints per finger."""
        return [finger.joint_count for finger in self.fingers]

    @property
    def body_count(self) -> int:
        """Contactable bodies: every phalanx plus the palm."""
        return sum(self.joint_counts) + 1


class NotTerminal(Exception):
    """Raised when compiling a graph that still has non-terminal nodes."""

    def __init__(self, node_ids: list[int]) -> None:
        self.node_ids = node_ids
        super().__init__(f"Design graph is not terminal; non-terminal nodes {node_ids}")


class StructureError(Exception):
    """Raised when a root-to-leaf path violates the finger path grammar."""

    def __init__(self, path: str) -> None:
        self.path = path
        super().__init__(f"Invalid finger structure: {path}")


class WarningKind(StrEnum):
    """Enum class to store mechanism warning types."""

    UNREACHABLE = auto()
    OVERLAP = auto()


@dataclass(frozen=True)
class MechanismWarning:
    """Problem found by `validate` that makes a grasp unlikely."""

    kind: WarningKind
    finger: int
    message: str
    other_finger: Optional[int] = None


def compile_mechanism(
    g: DesignGraph, defaults: Optional[PhysicalDefaults] = None
) -> MechanismSpec:
    """Convert a terminal design graph to a mechanism specification.

    Phalanges are listed base to tip, every joint rests at the straight
    finger, and fingers are ordered by mount side then offset.

    Args:
        g: Terminal design graph.
        defaults: Physical values not held in the graph.

    Raises:
        NotTerminal: if any node is non-terminal.
        StructureError: if the graph violates the finger path grammar.
    """
    defaults = defaults or PhysicalDefaults()
    non_terminal = [
        node_id for node_id, node in g.nodes().items() if not node.kind.is_terminal
    ]
    if non_terminal:
        raise NotTerminal(non_terminal)
    if problems := g.check_structure():
        raise StructureError("; ".join(problems))

    fingers = []
    for base_id in g.finger_bases():
        chain = g.finger_chain(base_id)
        mount = g.node(base_id).mount
        assert mount is not None
        phalanges = []
        # chain is B J L J L ... J L
        for joint_id, link_id in zip(chain[1::2], chain[2::2]):
            stiffness = g.node(joint_id).stiffness
            length = g.node(link_id).length
            assert stiffness is not None and length is not None
            phalanges.append(
                PhalanxSpec(length, stiffness, 0.0, defaults.phalanx_thickness)
            )
        if not 1 <= len(phalanges) <= MAX_PHALANGES:
            raise StructureError(
                f"finger at node {base_id} has {len(phalanges)} phalanges"
            )
        fingers.append(FingerSpec(mount, tuple(phalanges), defaults.pulley_radius))
    if not 1 <= len(fingers) <= MAX_FINGERS:
        raise StructureError(f"gripper has {sing_plur(len(fingers), 'finger')}")
    fingers.sort(
        key=lambda finger: (SIDE_ORDER[finger.mount.side], finger.mount.offset_m)
    )
    return MechanismSpec(
        PalmSpec(defaults.palm_width, defaults.palm_thickness),
        tuple(fingers),
        math.radians(defaults.joint_limit_deg),
    )


def validate(
    spec: MechanismSpec, workspace_center: tuple[float, float]
) -> list[MechanismWarning]:
    """Find fingers that cannot reach the object or collide at rest.

    Args:
        spec: Mechanism to check.
        workspace_center: Object centre in the palm frame, m.

    Returns:
        Warnings found; empty if none.
    """
    warnings = []
    for index, finger in enumerate(spec.fingers):
        base_x, base_y = finger.base_point(spec.palm)
        distance = math.hypot(
            workspace_center[0] - base_x, workspace_center[1] - base_y
        )
        if finger.total_length < distance:
            warnings.append(
                MechanismWarning(
                    WarningKind.UNREACHABLE,
                    index,
                    f"finger {index} is {finger.total_length:.3f} m long but the "
                    f"object centre is {distance:.3f} m away",
                )
            )
    for index, finger in enumerate(spec.fingers):
        for other in range(index + 1, len(spec.fingers)):
            other_offset = spec.fingers[other].mount.offset_m
            if abs(finger.mount.offset_m - other_offset) <= COINCIDENT_TOLERANCE_M:
                warnings.append(
                    MechanismWarning(
                        WarningKind.OVERLAP,
                        index,
                        f"fingers {index} and {other} share a mount point",
                        other,
                    )
                )
    return warnings


def describe(spec: MechanismSpec) -> str:
    """Return a one-line summary of a mechanism for logs and reports."""
    parts = []
    for finger in spec.fingers:
        lengths = "/".join(
            f"{phalanx.length * 1000:.0f}" for phalanx in finger.phalanges
        )
        parts.append(
            f"{finger.mount.side}{finger.mount.offset_m * 1000:+.0f}mm"
            f"@{finger.mount.angle_deg:+.0f}deg[{lengths}]"
        )
    return f"{sing_plur(len(spec.fingers), 'finger')}: " + " ".join(parts)
