"""Grasp reward criteria and design evaluation.

A design is scored by simulating it on every object, at every configured
orientation, for every assignment of tendon tensions to its fingers. Each
simulation yields six criteria in [0, 1] that are combined with weights;
the best tension assignment per object counts and the per-object bests are
summed.
"""

from dataclasses import dataclass, field
import itertools
import logging
import math
import multiprocessing
from typing import Any, Optional, Sequence

import numpy as np

from graspgen.graph import DesignGraph
from graspgen.mechanism import MechanismSpec, PhysicalDefaults, compile_mechanism
from graspgen.search import EvaluationFailure, EvaluationOutcome
from graspgen.sim import Diverged, ShapeKind, SimConfig, SimObject, SimTrace, run_grasp
from graspgen.utilities import ConfigError, sing_plur, worker_count

logger = logging.getLogger(__package__)

CRITERIA = ("r1", "r2", "r3", "r4", "r5", "r6")
WEIGHT_PRESETS = {
    "worked": (3.0, 2.0, 1.0, 1.0, 1.0, 5.0),
    "text": (3.0, 1.0, 1.0, 1.0, 1.0, 5.0),
}
DEFAULT_WEIGHT_PRESET = "worked"
DEFAULT_TENSION_LEVELS_N = (5.0, 10.0, 15.0)
DEFAULT_ORIENTATIONS_DEG = (0.0, 45.0)
DEFAULT_OBJECT_MASS_KG = 0.1


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the six criteria, all non-negative."""

    w1: float = 3.0
    w2: float = 2.0
    w3: float = 1.0
    w4: float = 1.0
    w5: float = 1.0
    w6: float = 5.0

    def __post_init__(self) -> None:
        if any(weight < 0 or not math.isfinite(weight) for weight in self.as_tuple()):
            raise ConfigError(
                "reward.weights", "weights must be finite and non-negative"
            )

    @classmethod
    def from_preset(cls, name: str) -> "RewardWeights":
        """Return a named weight set: `worked` or `text`."""
        try:
            return cls(*WEIGHT_PRESETS[name])
        except KeyError as exc:
            raise ConfigError(
                "reward.weights",
                f"unknown preset '{name}' (use {sorted(WEIGHT_PRESETS)})",
            ) from exc

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "RewardWeights":
        """Build from six explicit values."""
        if len(values) != len(CRITERIA):
            raise ConfigError(
                "reward.weights", f"expected 6 weights, got {len(values)}"
            )
        return cls(*(float(value) for value in values))

    def as_tuple(self) -> tuple[float, ...]:
        """Weights in criterion order."""
        return (self.w1, self.w2, self.w3, self.w4, self.w5, self.w6)

    @property
    def total(self) -> float:
        """Sum of the weights: the largest reward one object can earn."""
        return sum(self.as_tuple())


@dataclass(frozen=True)
class RewardBreakdown:
    """Criteria of one simulation (or an average of several) and their total."""

    r1: float
    r2: float
    r3: float
    r4: float
    r5: float
    r6: float
    total: float

    @classmethod
    def from_components(
        cls, components: Sequence[float], weights: RewardWeights
    ) -> "RewardBreakdown":
        """Build a breakdown, computing the weighted total."""
        return cls(*components, total=combine(components, weights))

    @property
    def components(self) -> tuple[float, ...]:
        """r1 to r6 in order."""
        return (self.r1, self.r2, self.r3, self.r4, self.r5, self.r6)

    def to_dict(self) -> dict[str, float]:
        """Return a JSON-ready mapping."""
        return dict(zip(CRITERIA + ("total",), self.components + (self.total,)))


@dataclass(frozen=True)
class ObjectReward:
    """Best result over the tension grid for one object.

    Attributes:
        best_total: Orientation-averaged combined reward of the best controls.
        best_controls: Tension per finger of the best assignment, N.
        breakdown: Orientation-averaged criteria of the best assignment.
    """

    best_total: float
    best_controls: tuple[float, ...]
    breakdown: RewardBreakdown


@dataclass(frozen=True)
class DesignReward:
    """Evaluation of one mechanism over the object set and control grid."""

    per_object: dict[str, ObjectReward]
    final: float
    sim_count: int

    @property
    def bests(self) -> list[float]:
        """Per-object best totals in object order."""
        return [reward.best_total for reward in self.per_object.values()]


class EvaluationError(EvaluationFailure):
    """Raised when a simulation of a design fails.

    Attributes:
        combination: Object name, orientation and tensions of the failed run.
        cause: Original exception.
    """

    def __init__(self, combination: dict[str, Any], cause: Exception) -> None:
        self.combination = combination
        self.cause = cause
        super().__init__(f"Simulation failed for {combination}: {cause}")


def r1_time(trace: SimTrace) -> float:
    """Contact-time criterion.

    0 without contact, 1 for a secured grasp, otherwise
    1 / (1 + t_rem² / t_max²). After a contact loss t_rem is the time left
    once contact was lost. A run that kept touching without ever securing
    has t_rem = t_max - (t_final - t_first_contact), so it stays below 1.
    """
    first = trace.events.t_first_contact
    if first is None:
        return 0.0
    if trace.secured:
        return 1.0
    if trace.events.t_contact_loss is not None:
        remaining = trace.t_max - trace.events.t_contact_loss
    else:
        remaining = trace.t_max - (trace.events.t_final - first)
    remaining = max(0.0, remaining)
    return 1.0 / (1.0 + remaining**2 / trace.t_max**2)


def r2_contact_fraction(trace: SimTrace) -> float:
    """Fraction of gripper bodies that touched the object."""
    if trace.bodies_total <= 0:
        return 0.0
    return min(1.0, trace.bodies_contacted / trace.bodies_total)


def r3_force_dispersion(trace: SimTrace) -> float:
    """1 / (1 + population std of contact force magnitudes at the grasp, N)."""
    if not trace.secured or not trace.grasp_forces:
        return 0.0
    return 1.0 / (1.0 + float(np.std(trace.grasp_forces)))


def r4_centroid_distance(trace: SimTrace) -> float:
    """1 / (1 + distance between object centre and contact centroid, m)."""
    if (
        not trace.secured
        or trace.contact_centroid_at_grasp is None
        or trace.object_center_at_grasp is None
    ):
        return 0.0
    centroid = trace.contact_centroid_at_grasp
    center = trace.object_center_at_grasp
    return 1.0 / (1.0 + math.hypot(centroid[0] - center[0], centroid[1] - center[1]))


def r5_grasp_speed(trace: SimTrace) -> float:
    """Share of the horizon left when the grasp was secured."""
    t_grasp = trace.events.t_grasp
    if t_grasp is None:
        return 0.0
    return min(1.0, max(0.0, (trace.t_max - t_grasp) / trace.t_max))


def r6_load_resistance(trace: SimTrace) -> float:
    """1 - displacement / escape distance under load; 0 if the object escaped."""
    if not trace.stage2_reached or trace.escaped or trace.fail_distance <= 0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - trace.load_displacement / trace.fail_distance))


def criteria(trace: SimTrace) -> tuple[float, ...]:
    """All six criteria of one trace."""
    return (
        r1_time(trace),
        r2_contact_fraction(trace),
        r3_force_dispersion(trace),
        r4_centroid_distance(trace),
        r5_grasp_speed(trace),
        r6_load_resistance(trace),
    )


def combine(components: Sequence[float], weights: RewardWeights) -> float:
    """Weighted sum of the six criteria."""
    return math.fsum(w * r for w, r in zip(weights.as_tuple(), components))


def default_objects(
    workspace_center: tuple[float, float] = (0.0, 0.06),
    mass: float = DEFAULT_OBJECT_MASS_KG,
) -> list[SimObject]:
    """Return the standard test objects, centred in the workspace."""
    pose = (workspace_center[0], workspace_center[1], 0.0)
    return [
        SimObject("disc", ShapeKind.DISC, mass, pose, radius=0.03),
        SimObject("rect", ShapeKind.RECT, mass, pose, width=0.05, height=0.05),
        SimObject(
            "hexagon",
            ShapeKind.REGULAR_POLYGON,
            mass,
            pose,
            sides=6,
            circumradius=0.035,
        ),
    ]


@dataclass(frozen=True)
class EvaluationSettings:
    """Everything needed to score a design.

    Attributes:
        objects: Objects at their nominal poses.
        tension_levels: Tension values each finger may take, N.
        sim: Simulation settings.
        weights: Criterion weights.
        orientations_deg: Object rotations each combination is run at.
        seed: Seed passed to every simulation.
        physical: Values used to compile graphs into mechanisms.
        workers: Processes used for simulations; 0 means `worker_count()`.
    """

    objects: tuple[SimObject, ...] = field(
        default_factory=lambda: tuple(default_objects())
    )
    tension_levels: tuple[float, ...] = DEFAULT_TENSION_LEVELS_N
    sim: SimConfig = field(default_factory=SimConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    orientations_deg: tuple[float, ...] = DEFAULT_ORIENTATIONS_DEG
    seed: int = 0
    physical: PhysicalDefaults = field(default_factory=PhysicalDefaults)
    workers: int = 0

    def __post_init__(self) -> None:
        if len(set(self.tension_levels)) != len(self.tension_levels):
            raise ConfigError(
                "reward.tension_levels_n", "tension levels must be unique"
            )

    @property
    def normalizer(self) -> float:
        """Largest possible final reward."""
        return len(self.objects) * self.weights.total


@dataclass(frozen=True)
class _SimJob:
    """One simulation of an evaluation grid."""

    spec: MechanismSpec
    obj: SimObject
    orientation_deg: float
    tensions: tuple[float, ...]
    cfg: SimConfig
    seed: int

    def combination(self) -> dict[str, Any]:
        """Identify the run in error reports."""
        return {
            "object": self.obj.name,
            "orientation_deg": self.orientation_deg,
            "tensions_n": list(self.tensions),
        }


@dataclass(frozen=True)
class _SimResult:
    """Criteria of a job, or the step where it diverged."""

    components: Optional[tuple[float, ...]]
    diverged_step: Optional[int] = None


def _run_job(job: _SimJob) -> _SimResult:
    """Simulate one job; runs in worker processes."""
    x, y, theta = job.obj.initial_pose
    placed = job.obj.with_pose((x, y, theta + math.radians(job.orientation_deg)))
    try:
        trace = run_grasp(job.spec, placed, job.tensions, job.cfg, job.seed)
    except Diverged as exc:
        return _SimResult(None, exc.step)
    return _SimResult(criteria(trace))


def _run_jobs(jobs: list[_SimJob], workers: int) -> list[_SimResult]:
    """Run jobs, in a process pool if more than one worker; results in job order."""
    workers = min(workers, len(jobs))
    if workers <= 1:
        return [_run_job(job) for job in jobs]
    with multiprocessing.Pool(workers) as pool:
        return pool.map(_run_job, jobs)


def _grid_jobs(
    spec: MechanismSpec,
    objects: Sequence[SimObject],
    tension_levels: Sequence[float],
    cfg: SimConfig,
    seed: int,
    orientations_deg: Sequence[float],
) -> list[_SimJob]:
    """Jobs for every object, tension assignment and orientation, in that order."""
    levels = sorted(float(level) for level in tension_levels)
    assignments = list(itertools.product(levels, repeat=len(spec.fingers)))
    return [
        _SimJob(spec, obj, float(orientation), tensions, cfg, seed)
        for obj in objects
        for tensions in assignments
        for orientation in orientations_deg
    ]


def _aggregate(
    jobs: list[_SimJob], results: list[_SimResult], weights: RewardWeights
) -> DesignReward:
    """Reduce a simulation grid to per-object bests and their sum."""
    runs: dict[str, dict[tuple[float, ...], list[tuple[float, ...]]]] = {}
    for job, result in zip(jobs, results):
        if result.components is None:
            step = result.diverged_step or 0
            logger.error(f"Simulation diverged at step {step}: {job.combination()}")
            raise EvaluationError(job.combination(), Diverged(step))
        runs.setdefault(job.obj.name, {}).setdefault(job.tensions, []).append(
            result.components
        )
    per_object = {}
    for name, by_controls in runs.items():
        best: Optional[ObjectReward] = None
        # sorted so ties go to the smallest tensions whatever the grid order
        for tensions in sorted(by_controls):
            averaged = np.mean(by_controls[tensions], axis=0)
            mean = tuple(float(value) for value in averaged)
            breakdown = RewardBreakdown.from_components(mean, weights)
            if best is None or breakdown.total > best.best_total:
                best = ObjectReward(breakdown.total, tensions, breakdown)
        assert best is not None
        per_object[name] = best
    final = math.fsum(reward.best_total for reward in per_object.values())
    return DesignReward(per_object, final, len(jobs))


def evaluate_design(
    spec: MechanismSpec,
    objects: Sequence[SimObject],
    tension_levels: Sequence[float],
    cfg: SimConfig,
    seed: int = 0,
    weights: Optional[RewardWeights] = None,
    orientations_deg: Sequence[float] = DEFAULT_ORIENTATIONS_DEG,
    workers: int = 1,
) -> DesignReward:
    """Score a mechanism over objects, orientations and the tension grid.

    Runs |objects| x |levels|^fingers x |orientations| simulations. The
    per-object best is the maximum over tension assignments of the
    orientation-averaged combined reward; the final reward is their sum.

    Raises:
        EvaluationError: if a simulation diverges, naming the combination.
        ConfigError: if the grid is empty or tension levels repeat.
    """
    if not objects or not tension_levels or not orientations_deg:
        raise ConfigError(
            "reward", "objects, tension levels and orientations must not be empty"
        )
    if len(set(tension_levels)) != len(tension_levels):
        raise ConfigError("reward.tension_levels_n", "tension levels must be unique")
    weights = weights or RewardWeights()
    jobs = _grid_jobs(spec, objects, tension_levels, cfg, seed, orientations_deg)
    return _aggregate(jobs, _run_jobs(jobs, workers), weights)


def report_document(
    design_reward: DesignReward, weights: RewardWeights
) -> dict[str, Any]:
    """Return a JSON-ready evaluation report."""
    return {
        "final": design_reward.final,
        "sim_count": design_reward.sim_count,
        "weights": list(weights.as_tuple()),
        "objects": {
            name: {
                "best_total": reward.best_total,
                "best_controls_n": list(reward.best_controls),
                "breakdown": reward.breakdown.to_dict(),
            }
            for name, reward in design_reward.per_object.items()
        },
    }


class GraspEvaluator:
    """Scores design graphs for the search: compile, then evaluate."""

    def __init__(self, settings: EvaluationSettings) -> None:
        """Initialize evaluator.

        Args:
            settings: Objects, controls, simulation and weights to score with.
        """
        self.settings = settings
        self.workers = settings.workers or worker_count()

    @property
    def normalizer(self) -> float:
        """Largest possible final reward."""
        return self.settings.normalizer

    def evaluate(self, spec: MechanismSpec) -> DesignReward:
        """Score a compiled mechanism."""
        settings = self.settings
        return evaluate_design(
            spec,
            settings.objects,
            settings.tension_levels,
            settings.sim,
            settings.seed,
            settings.weights,
            settings.orientations_deg,
            self.workers,
        )

    def __call__(self, graph: DesignGraph) -> EvaluationOutcome:
        """Score a terminal design graph."""
        spec = compile_mechanism(graph, self.settings.physical)
        result = self.evaluate(spec)
        return EvaluationOutcome(result.final, result)

    def evaluate_batch(self, graphs: Sequence[DesignGraph]) -> list[EvaluationOutcome]:
        """Score several graphs, fanning all their simulations into one pool.

        A design whose simulation diverged gets a failed outcome with reward 0.
        """
        settings = self.settings
        grids = []
        for graph in graphs:
            spec = compile_mechanism(graph, settings.physical)
            grids.append(
                _grid_jobs(
                    spec,
                    settings.objects,
                    settings.tension_levels,
                    settings.sim,
                    settings.seed,
                    settings.orientations_deg,
                )
            )
        results = _run_jobs([job for grid in grids for job in grid], self.workers)
        logger.debug(f"Evaluated {sing_plur(len(graphs), 'design')} in one batch")
        outcomes = []
        start = 0
        for grid in grids:
            try:
                reward = _aggregate(
                    grid, results[start : start + len(grid)], settings.weights
                )
            except EvaluationError as exc:
                outcomes.append(EvaluationOutcome(0.0, None, str(exc)))
            else:
                outcomes.append(EvaluationOutcome(reward.final, reward))
            start += len(grid)
        return outcomes
