"""Planar quasi-static grasp simulation.

Tendon-driven fingers close on a free-floating object with gravity off. Once
the grasp is secured, an external load proportional to the object's weight
is ramped up along each configured direction and the worst case is kept.

Finger joints follow overdamped dynamics, the object a small rigid body;
joint rates and object velocity are advanced together with a linearly
implicit Euler step so that stiff penalty contacts stay stable at the
default step size. Friction sticks through a tangential spring until it
reaches the Coulomb limit, so a grasp can hold the object at rest.
"""

import csv
from dataclasses import dataclass, field, replace
from enum import StrEnum, auto
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from graspgen.geometry import (
    RoundedShape,
    penetration,
    rectangle,
    regular_polygon,
    transform,
)
from graspgen.mechanism import FingerSpec, MechanismSpec
from graspgen.utilities import ConfigError, fmt_float, new_rng

logger = logging.getLogger(__package__)

PALM_BODY = 0
GRAVITY = 9.81
MIN_STAGE2_STEPS = 10
TRACE_CSV_COLUMNS = (
    "t",
    "object_x",
    "object_y",
    "object_theta",
    "n_contacts",
    "sum_normal_force",
)
Vec2 = tuple[float, float]
Pose = tuple[float, float, float]


class ShapeKind(StrEnum):
    """Enum class to store object shape types."""

    DISC = auto()
    RECT = auto()
    REGULAR_POLYGON = auto()


@dataclass(frozen=True)
class SimObject:
    """Object to be grasped.

    Attributes:
        name: Identifier used in reports and on the command line.
        shape: Shape type.
        mass: kg.
        initial_pose: (x m, y m, theta rad).
        radius: Disc radius, m.
        width: Rectangle width, m.
        height: Rectangle height, m.
        sides: Number of polygon sides.
        circumradius: Polygon circumradius, m.
    """

    name: str
    shape: ShapeKind
    mass: float
    initial_pose: Pose = (0.0, 0.0, 0.0)
    radius: float = 0.0
    width: float = 0.0
    height: float = 0.0
    sides: int = 0
    circumradius: float = 0.0

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ValueError(f"Object '{self.name}' must have positive mass")
        dimensions = {
            ShapeKind.DISC: (self.radius,),
            ShapeKind.RECT: (self.width, self.height),
            ShapeKind.REGULAR_POLYGON: (self.circumradius, float(self.sides - 2)),
        }[self.shape]
        if min(dimensions) <= 0:
            raise ValueError(f"Object '{self.name}' has invalid dimensions")

    @property
    def bounding_radius(self) -> float:
        """Radius of the smallest circle about the centre containing the object."""
        match self.shape:
            case ShapeKind.DISC:
                return self.radius
            case ShapeKind.RECT:
                return math.hypot(self.width, self.height) / 2
        return self.circumradius

    @property
    def size(self) -> float:
        """Characteristic size: the bounding radius, m."""
        return self.bounding_radius

    @property
    def inertia(self) -> float:
        """Moment of inertia about the centre, kg·m²."""
        match self.shape:
            case ShapeKind.DISC:
                return self.mass * self.radius**2 / 2
            case ShapeKind.RECT:
                return self.mass * (self.width**2 + self.height**2) / 12
        return (
            self.mass
            * self.circumradius**2
            / 6
            * (1 + 2 * math.cos(math.pi / self.sides) ** 2)
        )

    def body_vertices(self) -> np.ndarray:
        """Core vertices in the object frame."""
        match self.shape:
            case ShapeKind.DISC:
                return np.zeros((1, 2))
            case ShapeKind.RECT:
                return rectangle(self.width, self.height)
        return regular_polygon(self.sides, self.circumradius)

    def core_radius(self) -> float:
        """Rounding radius of the core (the disc radius, else 0)."""
        return self.radius if self.shape == ShapeKind.DISC else 0.0

    def shape_at(self, pose: Sequence[float]) -> RoundedShape:
        """Return the object's collision shape at a pose."""
        return RoundedShape(
            transform(self.body_vertices(), pose[0], pose[1], pose[2]),
            self.core_radius(),
        )

    def with_pose(self, pose: Pose) -> "SimObject":
        """Return a copy placed at another initial pose."""
        return replace(self, initial_pose=pose)


@dataclass(frozen=True)
class ContactParams:
    """Penalty contact law parameters.

    Attributes:
        stiffness: k_p, N/m.
        damping: c_p, N·s/m.
        friction: mu.
        friction_damping: c_t, tangential damping while sticking, N·s/m.
        tangential_stiffness: k_t, stiffness of the stick spring, N/m.
    """

    stiffness: float = 1e5
    damping: float = 50.0
    friction: float = 0.6
    friction_damping: float = 50.0
    tangential_stiffness: float = 5e4


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Attributes:
        step: Fixed integration step h, s.
        t_max: Simulation horizon, s.
        t_hold: Time the settled state must persist to secure the grasp, s.
        t_loss: Time without contact after first touch that aborts the run, s.
        eps_joint_velocity: rad/s.
        eps_object_velocity: m/s (angular speed scaled by object size).
        eps_torque_residual: Quasi-static torque residual bound, N·m.
        eps_force_residual: Quasi-static object force residual bound, N.
        min_contact_bodies: Distinct bodies in contact for a secured grasp.
        load_factor: alpha; peak load is alpha times the object weight.
        ramp_time: T_ramp, s.
        fail_distance_min: Lower bound of the escape distance, m.
        force_directions: Unit directions of the external load.
        contact: Penalty law parameters.
        joint_damping: c_q, N·m·s/rad.
        object_damping: Linear viscous drag on the object, N·s/m.
        object_angular_damping: Angular viscous drag, N·m·s/rad.
        record_every: Steps between recorded snapshots.
        trace_decimation: Snapshots per row of the trace CSV.
        pose_jitter: Half-width of uniform initial position jitter, m.
        fixed_object: Clamp the object in place (press test).
    """

    step: float = 1e-3
    t_max: float = 5.0
    t_hold: float = 0.2
    t_loss: float = 0.1
    eps_joint_velocity: float = 1e-3
    eps_object_velocity: float = 1e-3
    eps_torque_residual: float = 1e-3
    eps_force_residual: float = 1e-2
    min_contact_bodies: int = 2
    load_factor: float = 2.0
    ramp_time: float = 1.0
    fail_distance_min: float = 0.03
    force_directions: tuple[Vec2, ...] = (
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
    )
    contact: ContactParams = field(default_factory=ContactParams)
    joint_damping: float = 0.02
    object_damping: float = 0.0
    object_angular_damping: float = 0.0
    record_every: int = 10
    trace_decimation: int = 1
    pose_jitter: float = 0.0
    fixed_object: bool = False

    def __post_init__(self) -> None:
        if self.step <= 0 or self.t_max <= 0:
            raise ConfigError("sim.step_s", "step and horizon must be positive")
        if self.step * MIN_STAGE2_STEPS > self.t_max:
            raise ConfigError("sim.step_s", "step is too large for the horizon")
        if self.record_every < 1 or self.trace_decimation < 1:
            raise ConfigError(
                "sim.record_every",
                "record_every and trace_decimation must be at least 1",
            )
        if not self.force_directions:
            raise ConfigError("sim.force_directions", "must not be empty")


class SimOutcome(StrEnum):
    """Enum class to store how a simulation ended."""

    SECURED = auto()
    NO_CONTACT = auto()
    CONTACT_LOST = auto()
    TIMEOUT = auto()


class DimensionMismatch(Exception):
    """Raised when a joint vector does not match the mechanism."""

    def __init__(self, expected: int, actual: int) -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(f"Expected {expected} joint values, got {actual}")


class Diverged(Exception):
    """Raised when the simulated state becomes non-finite.

    Attributes:
        step: Index of the step that produced the non-finite state.
    """

    def __init__(self, step: int) -> None:
        self.step = step
        super().__init__(f"Simulation diverged at step {step}")


@dataclass(frozen=True)
class Contact:
    """Contact between a gripper body and the object.

    Attributes:
        body_id: 0 for the palm, then phalanges numbered from 1 in finger order.
        point: World contact point, m.
        normal: Unit vector from the body towards the object.
        penetration: m, positive.
        force: Force on the object, N (zero until `penalty_forces`).
    """

    body_id: int
    point: Vec2
    normal: Vec2
    penetration: float
    force: Vec2 = (0.0, 0.0)

    @property
    def normal_force(self) -> float:
        """Force component along the normal, N."""
        return self.force[0] * self.normal[0] + self.force[1] * self.normal[1]

    @property
    def force_magnitude(self) -> float:
        """Norm of the contact force, N."""
        return math.hypot(*self.force)


@dataclass
class WorldState:
    """Generalized coordinates of the planar model.

    Attributes:
        q: Joint angles of every finger, concatenated, rad.
        q_dot: Joint velocities, rad/s.
        object_pose: (x, y, theta).
        object_vel: (vx, vy, omega).
        t: Time, s.
        slips: Stick spring stretch of each touching body, keyed by body id, m.
    """

    q: np.ndarray
    q_dot: np.ndarray
    object_pose: np.ndarray
    object_vel: np.ndarray
    t: float = 0.0
    slips: dict[int, float] = field(default_factory=dict)

    def copy(self) -> "WorldState":
        """Return an independent copy."""
        return WorldState(
            self.q.copy(),
            self.q_dot.copy(),
            self.object_pose.copy(),
            self.object_vel.copy(),
            self.t,
            dict(self.slips),
        )

    def is_finite(self) -> bool:
        """True when no component is NaN or infinite."""
        return bool(
            np.all(np.isfinite(self.q))
            and np.all(np.isfinite(self.q_dot))
            and np.all(np.isfinite(self.object_pose))
            and np.all(np.isfinite(self.object_vel))
        )


@dataclass(frozen=True)
class Snapshot:
    """Recorded sample of a run."""

    t: float
    q: tuple[float, ...]
    object_pose: Pose
    contacts: tuple[Contact, ...]

    @property
    def sum_normal_force(self) -> float:
        """Total normal force on the object, N."""
        return sum(contact.normal_force for contact in self.contacts)


@dataclass(frozen=True)
class SimEvents:
    """Times of the events of a run, s."""

    t_first_contact: Optional[float]
    t_grasp: Optional[float]
    t_contact_loss: Optional[float]
    t_final: float


@dataclass(frozen=True)
class SimTrace:
    """Time-stamped record of one grasp simulation.

    Attributes:
        events: Event times.
        t_max: Horizon of the run, s.
        outcome: How the run ended.
        snapshots: Recorded samples (joint angles, object pose, contacts).
        bodies_total: Contactable bodies (phalanges plus palm).
        bodies_contacted: Distinct bodies touching the object over the hold
            phase, or over the whole run if the grasp was never secured.
        grasp_forces: Contact force magnitudes at t_grasp, N.
        contact_centroid_at_grasp: Mean contact point at t_grasp, m.
        object_center_at_grasp: Object position at t_grasp, m.
        stage2_reached: True if the external load was applied.
        escaped: True if the load pulled the object out of the grasp.
        load_displacement: Worst-case object displacement under load, m.
        direction_displacements: Displacement per load direction, m.
        fail_distance: Displacement that counts as escape, m.
        torque_residual_at_grasp: Static joint torque residual, N·m.
        force_residual_at_grasp: Static object force residual, N.
        max_penetration_at_grasp: m.
        tensions: Tendon tension per finger, N.
        seed: Seed of the run.
    """

    events: SimEvents
    t_max: float
    outcome: SimOutcome
    snapshots: tuple[Snapshot, ...]
    bodies_total: int
    bodies_contacted: int
    grasp_forces: tuple[float, ...] = ()
    contact_centroid_at_grasp: Optional[Vec2] = None
    object_center_at_grasp: Optional[Vec2] = None
    stage2_reached: bool = False
    escaped: bool = False
    load_displacement: float = 0.0
    direction_displacements: tuple[float, ...] = ()
    fail_distance: float = 0.0
    torque_residual_at_grasp: Optional[float] = None
    force_residual_at_grasp: Optional[float] = None
    max_penetration_at_grasp: Optional[float] = None
    tensions: tuple[float, ...] = ()
    seed: int = 0

    @property
    def secured(self) -> bool:
        """True if the grasp was secured."""
        return self.events.t_grasp is not None

    @property
    def object_path(self) -> list[tuple[float, float, float, float]]:
        """Recorded (t, x, y, theta) samples of the object."""
        return [(snap.t, *snap.object_pose) for snap in self.snapshots]


def free_equilibrium(
    finger: FingerSpec, tension: float, joint_limit: float
) -> np.ndarray:
    """Analytic joint angles of a finger with no contact: q* = F·rho/k, clipped."""
    return np.array(
        [
            min(
                joint_limit,
                max(
                    0.0,
                    phalanx.rest_angle
                    + tension * finger.pulley_radius / phalanx.stiffness,
                ),
            )
            for phalanx in finger.phalanges
        ]
    )


def split_joints(spec: MechanismSpec, q: Sequence[float]) -> list[np.ndarray]:
    """Split a concatenated joint vector into one array per finger.

    Raises:
        DimensionMismatch: if the length does not match the mechanism.
    """
    total = sum(spec.joint_counts)
    if len(q) != total:
        raise DimensionMismatch(total, len(q))
    values = np.asarray(q, dtype=float)
    parts = []
    start = 0
    for count in spec.joint_counts:
        parts.append(values[start : start + count])
        start += count
    return parts


def _finger_points(
    spec: MechanismSpec, finger: FingerSpec, q: np.ndarray
) -> np.ndarray:
    """Joint positions of a finger followed by its tip, shape (n + 1, 2)."""
    angles = finger.base_angle() + finger.flex_sign * np.cumsum(q)
    lengths = np.array([phalanx.length for phalanx in finger.phalanges])
    steps = np.column_stack((lengths * np.cos(angles), lengths * np.sin(angles)))
    base = np.array(finger.base_point(spec.palm))
    return np.vstack((base, base + np.cumsum(steps, axis=0)))


def forward_kinematics(
    spec: MechanismSpec, q: Sequence[float]
) -> list[list[tuple[np.ndarray, np.ndarray]]]:
    """Return phalanx segments of every finger in the world frame.

    Args:
        spec: Mechanism.
        q: Joint angles of all fingers, concatenated in finger order.

    Returns:
        Per finger, a (start, end) pair per phalanx, base to tip.

    Raises:
        DimensionMismatch: if `q` does not match the joint count.
    """
    segments = []
    for finger, q_finger in zip(spec.fingers, split_joints(spec, q)):
        points = _finger_points(spec, finger, q_finger)
        segments.append([(points[i], points[i + 1]) for i in range(len(points) - 1)])
    return segments


def actuation_torques(
    finger: FingerSpec, q: Sequence[float], tension: float
) -> np.ndarray:
    """Joint torques from the tendon and the return springs.

    Every joint sees the same tension over the same pulley radius
    (frictionless routing): tau_i = tension * rho - k_i * (q_i - rest_i).
    """
    stiffness = np.array([phalanx.stiffness for phalanx in finger.phalanges])
    rest = np.array([phalanx.rest_angle for phalanx in finger.phalanges])
    deflection = np.asarray(q, dtype=float) - rest
    return tension * finger.pulley_radius - stiffness * deflection


def palm_shape(spec: MechanismSpec) -> RoundedShape:
    """Collision shape of the palm, centred at the origin."""
    return RoundedShape(rectangle(spec.palm.width, spec.palm.thickness), 0.0)


def detect_contacts(
    spec: MechanismSpec,
    segments: list[list[tuple[np.ndarray, np.ndarray]]],
    obj: SimObject,
    pose: Sequence[float],
) -> list[Contact]:
    """Find every gripper body penetrating the object.

    Phalanges are capsules of the phalanx thickness; the palm is included.
    Forces are left at zero.
    """
    object_shape = obj.shape_at(pose)
    reach = obj.bounding_radius
    contacts = []
    bodies: list[RoundedShape] = [palm_shape(spec)]
    for finger, finger_segments in zip(spec.fingers, segments):
        for phalanx, (start, end) in zip(finger.phalanges, finger_segments):
            bodies.append(RoundedShape(np.array([start, end]), phalanx.thickness / 2))
    center = np.array(pose[:2])
    for body_id, body in enumerate(bodies):
        if body_id != PALM_BODY and _far_apart(body, center, reach):
            continue
        if found := penetration(body, object_shape):
            contacts.append(
                Contact(
                    body_id,
                    (float(found.point[0]), float(found.point[1])),
                    (float(found.normal[0]), float(found.normal[1])),
                    found.depth,
                )
            )
    return contacts


def _far_apart(body: RoundedShape, center: np.ndarray, reach: float) -> bool:
    """Cheap rejection: capsule cannot touch the object's bounding circle."""
    start, end = body.vertices
    edge = end - start
    length_sq = float(edge @ edge)
    t = 0.0
    if length_sq > 0:
        t = min(1.0, max(0.0, float((center - start) @ edge) / length_sq))
    nearest = start + t * edge
    return math.hypot(*(center - nearest)) > reach + body.radius


def contact_law(
    depth: float,
    normal: np.ndarray,
    rel_velocity: np.ndarray,
    params: ContactParams,
    slip: float = 0.0,
) -> tuple[float, float, bool, bool]:
    """Penalty normal force and Coulomb friction with a stick spring.

    While the contact sticks, the tangential force is that of a spring
    stretched by `slip` plus damping; it is capped at mu times the normal
    force, where the contact starts to slide.

    Args:
        depth: Penetration, m.
        normal: Unit normal from body to object.
        rel_velocity: Velocity of the object point relative to the body point.
        params: Contact parameters.
        slip: Stretch of the stick spring along (-n_y, n_x), m.

    Returns:
        Normal force, tangential force along (-n_y, n_x), whether the contact
        pushes, and whether it sticks.
    """
    rate = -float(rel_velocity @ normal)
    f_normal = params.stiffness * depth + params.damping * rate
    if f_normal <= 0:
        return 0.0, 0.0, False, False
    tangent = np.array([-normal[1], normal[0]])
    v_tangent = float(rel_velocity @ tangent)
    trial = -params.tangential_stiffness * slip - params.friction_damping * v_tangent
    limit = params.friction * f_normal
    if abs(trial) <= limit:
        return f_normal, trial, True, True
    return f_normal, math.copysign(limit, trial), True, False


def penalty_forces(
    contacts: Sequence[Contact],
    rel_velocities: Sequence[Sequence[float]],
    params: ContactParams,
    slips: Optional[Sequence[float]] = None,
) -> list[Contact]:
    """Attach penalty forces to geometric contacts.

    Normal force max(0, k_p·d + c_p·d_dot); tangential force
    -(k_t·slip + c_t·v_t), capped at mu·f_n.
    """
    if slips is None:
        slips = [0.0] * len(contacts)
    result = []
    for contact, velocity, slip in zip(contacts, rel_velocities, slips):
        normal = np.array(contact.normal)
        f_normal, f_tangent, _, _ = contact_law(
            contact.penetration,
            normal,
            np.asarray(velocity, dtype=float),
            params,
            slip,
        )
        tangent = np.array([-normal[1], normal[0]])
        force = f_normal * normal + f_tangent * tangent
        result.append(replace(contact, force=(float(force[0]), float(force[1]))))
    return result


@dataclass
class _StepResult:
    """Outcome of one integration step."""

    contacts: list[Contact]
    torque_residual: float
    force_residual: float


class GraspSimulator:
    """Runs the two-stage grasp experiment for one mechanism and object."""

    def __init__(
        self,
        spec: MechanismSpec,
        obj: SimObject,
        tensions: Sequence[float],
        cfg: SimConfig,
        seed: int = 0,
    ) -> None:
        """Initialize simulator.

        Args:
            spec: Mechanism to simulate.
            obj: Object, placed at its initial pose.
            tensions: Tendon tension per finger, N.
            cfg: Simulation settings.
            seed: Seed for the initial pose jitter.
        """
        if len(tensions) != len(spec.fingers):
            raise DimensionMismatch(len(spec.fingers), len(tensions))
        if any(tension < 0 for tension in tensions):
            raise ConfigError(
                "reward.tension_levels_n", "tensions must not be negative"
            )
        self.spec = spec
        self.obj = obj
        self.tensions = tuple(float(tension) for tension in tensions)
        self.cfg = cfg
        self.seed = seed
        self.slices = []
        start = 0
        for count in spec.joint_counts:
            self.slices.append(slice(start, start + count))
            start += count
        # body id of the first phalanx of each finger
        self.first_body = [1 + s.start for s in self.slices]
        self.body_finger = {}
        for index, s in enumerate(self.slices):
            for offset in range(s.stop - s.start):
                self.body_finger[1 + s.start + offset] = (index, offset)
        self.mass_matrix = np.diag([obj.mass, obj.mass, obj.inertia])
        pose = np.array(obj.initial_pose, dtype=float)
        if cfg.pose_jitter > 0:
            rng = new_rng(seed)
            pose[:2] += rng.uniform(-cfg.pose_jitter, cfg.pose_jitter, size=2)
        total = sum(spec.joint_counts)
        self.state = WorldState(np.zeros(total), np.zeros(total), pose, np.zeros(3))
        self.step_index = 0
        self.fail_distance = max(obj.size, cfg.fail_distance_min)

    def run(self) -> SimTrace:
        """Run both stages and return the trace.

        Raises:
            Diverged: if the state becomes non-finite.
        """
        cfg = self.cfg
        h = cfg.step
        total_steps = int(round(cfg.t_max / h))
        snapshots = [self._snapshot([])]
        t_first_contact: Optional[float] = None
        loss_start: Optional[float] = None
        hold_start: Optional[float] = None
        hold_bodies: set[int] = set()
        touched: set[int] = set()
        outcome = SimOutcome.TIMEOUT
        t_contact_loss: Optional[float] = None
        t_grasp: Optional[float] = None
        grasp_result: Optional[_StepResult] = None
        t = 0.0
        result = _StepResult([], 0.0, 0.0)

        def record(contacts: list[Contact]) -> None:
            if snapshots[-1].t != self.state.t:
                snapshots.append(self._snapshot(contacts))

        while self.step_index < total_steps:
            result = self._step(np.zeros(2))
            t = self.state.t
            bodies = {contact.body_id for contact in result.contacts}
            touched |= bodies
            if bodies:
                if t_first_contact is None:
                    t_first_contact = t
                    record(result.contacts)
                loss_start = None
            elif t_first_contact is not None:
                if loss_start is None:
                    loss_start = t
                if t - loss_start > cfg.t_loss:
                    outcome = SimOutcome.CONTACT_LOST
                    t_contact_loss = loss_start
                    break
            elif self._settled_apart():
                # No contact and fingers at rest: nothing changes any more
                outcome = SimOutcome.NO_CONTACT
                t = cfg.t_max
                break

            if self._is_settled(result, bodies):
                if hold_start is None:
                    hold_start = t
                    hold_bodies = set()
                hold_bodies |= bodies
                if t - hold_start >= cfg.t_hold - 1e-12:
                    outcome = SimOutcome.SECURED
                    t_grasp = t
                    grasp_result = result
                    break
            else:
                hold_start = None

            if self.step_index % cfg.record_every == 0:
                record(result.contacts)

        if outcome == SimOutcome.TIMEOUT and t_first_contact is None:
            outcome = SimOutcome.NO_CONTACT
        record(result.contacts)

        trace_args: dict = {
            "t_max": cfg.t_max,
            "bodies_total": self.spec.body_count,
            "bodies_contacted": len(touched),
            "fail_distance": self.fail_distance,
            "tensions": self.tensions,
            "seed": self.seed,
        }
        if t_grasp is None or grasp_result is None:
            return SimTrace(
                events=SimEvents(t_first_contact, None, t_contact_loss, t),
                outcome=outcome,
                snapshots=tuple(snapshots),
                **trace_args,
            )

        contacts = grasp_result.contacts
        centroid = (
            float(np.mean([c.point[0] for c in contacts])),
            float(np.mean([c.point[1] for c in contacts])),
        )
        center = (float(self.state.object_pose[0]), float(self.state.object_pose[1]))
        trace_args.update(
            bodies_contacted=len(hold_bodies),
            grasp_forces=tuple(c.force_magnitude for c in contacts),
            contact_centroid_at_grasp=centroid,
            object_center_at_grasp=center,
            torque_residual_at_grasp=grasp_result.torque_residual,
            force_residual_at_grasp=grasp_result.force_residual,
            max_penetration_at_grasp=max(c.penetration for c in contacts),
        )
        logger.debug(f"Grasp secured at t={t_grasp:.3f}s on '{self.obj.name}'")

        window_steps = min(
            int(round(cfg.ramp_time / h)), total_steps - self.step_index
        )
        if cfg.fixed_object or window_steps < MIN_STAGE2_STEPS:
            return SimTrace(
                events=SimEvents(t_first_contact, t_grasp, None, t_grasp),
                outcome=outcome,
                snapshots=tuple(snapshots),
                **trace_args,
            )

        worst: Optional[tuple[bool, float, int, list[Snapshot], float]] = None
        displacements = []
        grasp_state = self.state.copy()
        grasp_step = self.step_index
        for index, direction in enumerate(cfg.force_directions):
            self.state = grasp_state.copy()
            self.step_index = grasp_step
            escaped, displacement, load_snaps, t_end = self._apply_load(
                np.array(direction, dtype=float), window_steps
            )
            displacements.append(displacement)
            key = (escaped, displacement, -index)
            if worst is None or key > (worst[0], worst[1], worst[2]):
                worst = (escaped, displacement, -index, load_snaps, t_end)
        assert worst is not None
        escaped, displacement, _, load_snaps, t_final = worst
        return SimTrace(
            events=SimEvents(t_first_contact, t_grasp, None, t_final),
            outcome=outcome,
            snapshots=tuple(snapshots + load_snaps),
            stage2_reached=True,
            escaped=escaped,
            load_displacement=displacement,
            direction_displacements=tuple(displacements),
            **trace_args,
        )

    def _apply_load(
        self, direction: np.ndarray, window_steps: int
    ) -> tuple[bool, float, list[Snapshot], float]:
        """Ramp the external load along one direction from the grasp state.

        Returns:
            Whether the object escaped, its final displacement, recorded
            snapshots and the end time.
        """
        cfg = self.cfg
        peak = cfg.load_factor * self.obj.mass * GRAVITY
        start = self.state.object_pose[:2].copy()
        snapshots = []
        displacement = 0.0
        result = _StepResult([], 0.0, 0.0)
        for k in range(1, window_steps + 1):
            load = peak * k / window_steps
            result = self._step(load * direction)
            displacement = float(np.linalg.norm(self.state.object_pose[:2] - start))
            if displacement > self.fail_distance:
                snapshots.append(self._snapshot(result.contacts))
                return True, displacement, snapshots, self.state.t
            if k % cfg.record_every == 0:
                snapshots.append(self._snapshot(result.contacts))
        if not snapshots or snapshots[-1].t != self.state.t:
            snapshots.append(self._snapshot(result.contacts))
        return False, displacement, snapshots, self.state.t

    def _snapshot(self, contacts: list[Contact]) -> Snapshot:
        """Record the current state."""
        pose = self.state.object_pose
        return Snapshot(
            self.state.t,
            tuple(float(value) for value in self.state.q),
            (float(pose[0]), float(pose[1]), float(pose[2])),
            tuple(contacts),
        )

    def _settled_apart(self) -> bool:
        """True if fingers have come to rest away from the object for good.

        Checks both the current configuration and the analytic free
        equilibrium the fingers are converging to.
        """
        if np.max(np.abs(self.state.q_dot), initial=0.0) >= self.cfg.eps_joint_velocity:
            return False
        target = np.concatenate(
            [
                free_equilibrium(finger, tension, self.spec.joint_limit)
                for finger, tension in zip(self.spec.fingers, self.tensions)
            ]
        )
        pose = self.state.object_pose
        return not detect_contacts(
            self.spec, forward_kinematics(self.spec, target), self.obj, pose
        )

    def _is_settled(self, result: _StepResult, bodies: set[int]) -> bool:
        """Quasi-static test for a secured grasp at the current step."""
        cfg = self.cfg
        if len(bodies) < cfg.min_contact_bodies:
            return False
        if np.max(np.abs(self.state.q_dot), initial=0.0) >= cfg.eps_joint_velocity:
            return False
        vel = self.state.object_vel
        if math.hypot(vel[0], vel[1]) >= cfg.eps_object_velocity:
            return False
        if abs(vel[2]) * self.obj.bounding_radius >= cfg.eps_object_velocity:
            return False
        return (
            result.torque_residual < cfg.eps_torque_residual
            and result.force_residual < cfg.eps_force_residual
        )

    def _point_jacobian(
        self, points: np.ndarray, flex_sign: float, phalanx: int, point: np.ndarray
    ) -> np.ndarray:
        """2 x n Jacobian of a point on a phalanx w.r.t. the finger's joints."""
        jacobian = np.zeros((2, len(points) - 1))
        lever = point - points[: phalanx + 1]
        jacobian[0, : phalanx + 1] = -flex_sign * lever[:, 1]
        jacobian[1, : phalanx + 1] = flex_sign * lever[:, 0]
        return jacobian

    def _contact_map(
        self, contact: Contact, all_points: list[np.ndarray], size: int
    ) -> np.ndarray:
        """2 x size map from the rates to the contact's relative velocity.

        Rates are the joint rates of every finger followed, unless the object
        is clamped, by the object velocity. The relative velocity is that of
        the object point minus the gripper point.
        """
        mapping = np.zeros((2, size))
        point = np.array(contact.point)
        if contact.body_id != PALM_BODY:
            index, phalanx = self.body_finger[contact.body_id]
            mapping[:, self.slices[index]] = -self._point_jacobian(
                all_points[index], self.spec.fingers[index].flex_sign, phalanx, point
            )
        if not self.cfg.fixed_object:
            lever = point - self.state.object_pose[:2]
            mapping[:, len(self.state.q) :] = [
                [1.0, 0.0, -lever[1]],
                [0.0, 1.0, lever[0]],
            ]
        return mapping

    def _solve_rates(self, lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Solve for the new rates, holding joints that would pass a limit."""
        q = self.state.q
        h = self.cfg.step
        limit = self.spec.joint_limit
        lhs = lhs.copy()
        rhs = rhs.copy()
        held: set[int] = set()
        while True:
            rates = np.linalg.solve(lhs, rhs)
            q_new = q + h * rates[: len(q)]
            crossing = [
                i
                for i in range(len(q))
                if i not in held and not 0.0 <= q_new[i] <= limit
            ]
            if not crossing:
                return rates
            for i in crossing:
                rate = (min(limit, max(0.0, float(q_new[i]))) - q[i]) / h
                rhs -= lhs[:, i] * rate
                lhs[i, :] = 0.0
                lhs[:, i] = 0.0
                lhs[i, i] = 1.0
                rhs[i] = rate
                held.add(i)

    def _step(self, external: np.ndarray) -> _StepResult:
        """Advance one step with an external force on the object.

        Joint rates and the object velocity are solved together, with every
        pushing contact linearized about the current state as f0 - A·w, where
        w is the relative velocity at the end of the step.
        """
        cfg = self.cfg
        params = cfg.contact
        h = cfg.step
        spec = self.spec
        state = self.state
        all_points = [
            _finger_points(spec, finger, state.q[s])
            for finger, s in zip(spec.fingers, self.slices)
        ]
        segments = [
            [(points[i], points[i + 1]) for i in range(len(points) - 1)]
            for points in all_points
        ]
        contacts = detect_contacts(spec, segments, self.obj, state.object_pose)

        joints = len(state.q)
        size = joints if cfg.fixed_object else joints + 3
        lhs = np.zeros((size, size))
        rhs = np.zeros(size)
        # Generalized forces that remain once every velocity is zero
        static = np.zeros(size)
        for index, (finger, s) in enumerate(zip(spec.fingers, self.slices)):
            tau = actuation_torques(finger, state.q[s], self.tensions[index])
            stiffness = np.array([phalanx.stiffness for phalanx in finger.phalanges])
            lhs[s, s] += np.diag(cfg.joint_damping + h * stiffness)
            rhs[s] += tau
            static[s] += tau
        rates = state.q_dot
        if not cfg.fixed_object:
            load = np.array([external[0], external[1], 0.0])
            drag = np.diag(
                [cfg.object_damping, cfg.object_damping, cfg.object_angular_damping]
            )
            lhs[joints:, joints:] += self.mass_matrix / h + drag
            rhs[joints:] += self.mass_matrix @ state.object_vel / h + load
            static[joints:] += load
            rates = np.concatenate((state.q_dot, state.object_vel))

        linearized = []
        for contact in contacts:
            normal = np.array(contact.normal)
            tangent = np.array([-normal[1], normal[0]])
            mapping = self._contact_map(contact, all_points, size)
            slip = state.slips.get(contact.body_id, 0.0)
            elastic = params.stiffness * contact.penetration
            cap = params.friction * elastic
            held = min(cap, max(-cap, -params.tangential_stiffness * slip))
            static += mapping.T @ (elastic * normal + held * tangent)
            _, f_t, active, sticking = contact_law(
                contact.penetration, normal, mapping @ rates, params, slip
            )
            if not active:
                continue
            gain = (params.damping + h * params.stiffness) * np.outer(normal, normal)
            if sticking:
                f_0 = elastic * normal - params.tangential_stiffness * slip * tangent
                gain += (
                    params.friction_damping + h * params.tangential_stiffness
                ) * np.outer(tangent, tangent)
            else:
                f_0 = elastic * normal + f_t * tangent
            lhs += mapping.T @ gain @ mapping
            rhs += mapping.T @ f_0
            linearized.append(
                (contact.body_id, mapping, f_0, gain, tangent, sticking, f_t)
            )

        pinned = ((state.q >= spec.joint_limit) & (static[:joints] > 0)) | (
            (state.q <= 0.0) & (static[:joints] < 0)
        )
        torque_residual = float(
            np.max(np.abs(np.where(pinned, 0.0, static[:joints])), initial=0.0)
        )
        force_residual = (
            0.0
            if cfg.fixed_object
            else math.hypot(static[joints], static[joints + 1])
        )

        solution = self._solve_rates(lhs, rhs)
        slips: dict[int, float] = {}
        forces: dict[int, np.ndarray] = {}
        for body_id, mapping, f_0, gain, tangent, sticking, f_t in linearized:
            w = mapping @ solution
            forces[body_id] = f_0 - gain @ w
            if sticking:
                slips[body_id] = state.slips.get(body_id, 0.0) + h * float(tangent @ w)
            else:
                slips[body_id] = -f_t / params.tangential_stiffness

        q_dot = solution[:joints]
        state.q = np.clip(state.q + h * q_dot, 0.0, spec.joint_limit)
        state.q_dot = q_dot
        if not cfg.fixed_object:
            state.object_vel = solution[joints:]
            state.object_pose = state.object_pose + h * state.object_vel
        state.slips = slips
        self.step_index += 1
        state.t = self.step_index * h
        if not state.is_finite():
            logger.error(
                f"Simulation of '{self.obj.name}' diverged at step {self.step_index}"
            )
            raise Diverged(self.step_index)

        recorded = [
            (
                replace(contact, force=(float(force[0]), float(force[1])))
                if (force := forces.get(contact.body_id)) is not None
                else contact
            )
            for contact in contacts
        ]
        return _StepResult(recorded, torque_residual, force_residual)


def run_grasp(
    spec: MechanismSpec,
    obj: SimObject,
    tensions: Sequence[float],
    cfg: SimConfig,
    seed: int = 0,
) -> SimTrace:
    """Simulate one grasp: close the fingers, then load the object.

    Deterministic for fixed inputs and seed.

    Raises:
        Diverged: with the step index if the state becomes non-finite.
        ConfigError: if tensions are negative.
    """
    return GraspSimulator(spec, obj, tensions, cfg, seed).run()


def write_trace_csv(trace: SimTrace, path: str | Path, decimation: int = 1) -> None:
    """Dump the object path and contact summary of a run as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(TRACE_CSV_COLUMNS)
        stride = max(1, decimation)
        rows = zip(trace.object_path[::stride], trace.snapshots[::stride])
        for (t, x, y, theta), snap in rows:
            writer.writerow(
                [
                    fmt_float(t),
                    fmt_float(x),
                    fmt_float(y),
                    fmt_float(theta),
                    len(snap.contacts),
                    fmt_float(snap.sum_normal_force),
                ]
            )
