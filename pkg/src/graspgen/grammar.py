"""Production rules of the gripper graph grammar.

Rule vocabulary (right-hand sides):
    R1: start -> PalmNT with six finger dummies F (only via `init_graph`)
    R2: F -> BaseNT·JointNT·FG (adds a finger)
    R3: FG -> LinkNT·JointNT·FG (adds a phalanx)
    R4: PalmNT -> PalmT
    R5: BaseNT -> BaseT(mount)
    R6: JointNT -> JointT(stiffness)
    R7: LinkNT -> LinkT(length)
    R8: F -> nothing (removes a finger dummy)
    R9: FG -> LinkNT (stops a finger growing)
"""

from dataclasses import dataclass
from enum import IntEnum
import itertools
import logging
from typing import Any, Optional, Sequence

import numpy as np

from graspgen.graph import (
    DesignGraph,
    MountSide,
    MountTransform,
    Node,
    NodeKind,
)

logger = logging.getLogger(__package__)

INITIAL_DUMMIES = 6

DEFAULT_LENGTHS_M = (0.05, 0.08, 0.11)
DEFAULT_STIFFNESSES_NM_PER_RAD = (0.1, 0.3, 0.9)
DEFAULT_MOUNT_OFFSETS_M = (-0.03, 0.0, 0.03)
DEFAULT_MOUNT_ANGLES_DEG = (-30.0, 0.0, 30.0)


class RuleId(IntEnum):
    """Enum class to store the production rule identifiers."""

    R1 = 1
    R2 = 2
    R3 = 3
    R4 = 4
    R5 = 5
    R6 = 6
    R7 = 7
    R8 = 8
    R9 = 9


# Left-hand side kind of every rule that has a target
RULE_TARGET_KIND = {
    RuleId.R2: NodeKind.FINGER_DUMMY,
    RuleId.R3: NodeKind.GROWTH,
    RuleId.R4: NodeKind.PALM_NT,
    RuleId.R5: NodeKind.BASE_NT,
    RuleId.R6: NodeKind.JOINT_NT,
    RuleId.R7: NodeKind.LINK_NT,
    RuleId.R8: NodeKind.FINGER_DUMMY,
    RuleId.R9: NodeKind.GROWTH,
}
PARAMETERIZED_RULES = (RuleId.R4, RuleId.R5, RuleId.R6, RuleId.R7)
POST_CAP_RULES = frozenset(
    (RuleId.R4, RuleId.R5, RuleId.R6, RuleId.R7, RuleId.R8, RuleId.R9)
)


@dataclass(frozen=True)
class Action:
    """One rule instance: rule, target node and discrete parameter choice.

    Attributes:
        rule: Rule to apply.
        target: Id of node rewritten; None only for R1.
        param_index: Index into the rule's parameter set; only for R4-R7.
    """

    rule: RuleId
    target: Optional[int] = None
    param_index: Optional[int] = None

    @property
    def ordinal(self) -> tuple[int, int, int]:
        """Sort key used for deterministic tie-breaking."""
        return (
            int(self.rule),
            -1 if self.target is None else self.target,
            -1 if self.param_index is None else self.param_index,
        )

    def __lt__(self, other: "Action") -> bool:
        return self.ordinal < other.ordinal

    def __str__(self) -> str:
        text = self.rule.name
        if self.target is not None:
            text += f"@{self.target}"
        if self.param_index is not None:
            text += f"[{self.param_index}]"
        return text

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-ready form of the action."""
        return {
            "rule": self.rule.name,
            "target": self.target,
            "param_index": self.param_index,
        }


class InvalidAction(Exception):
    """Raised when an action cannot be applied to a graph.

    Attributes:
        action: The rejected action.
        reason: Why it was rejected.
    """

    def __init__(self, action: Action, reason: str) -> None:
        self.action = action
        self.reason = reason
        super().__init__(f"Cannot apply {action}: {reason}")


@dataclass(frozen=True)
class GrammarLimits:
    """Structural limits of the design space.

    Attributes:
        max_fingers: Most fingers a gripper may have.
        max_phalanges: Most phalanges a finger may have.
        min_fingers: Fewest fingers a gripper may have.
        depth_cap: Rule applications after which only terminating and
            removing rules are offered.
    """

    max_fingers: int = 4
    max_phalanges: int = 5
    min_fingers: int = 1
    depth_cap: int = 30

    def __post_init__(self) -> None:
        if not 1 <= self.min_fingers <= self.max_fingers <= INITIAL_DUMMIES:
            raise ValueError(
                f"Finger limits must satisfy 1 <= min ({self.min_fingers}) <= "
                f"max ({self.max_fingers}) <= {INITIAL_DUMMIES}"
            )
        if self.max_phalanges < 1:
            raise ValueError("max_phalanges must be at least 1")
        if self.depth_cap < 0:
            raise ValueError("depth_cap must not be negative")


@dataclass(frozen=True)
class ParameterSets:
    """Discrete parameter choices offered by the terminating rules.

    Attributes:
        lengths: Link lengths for R7, m.
        stiffnesses: Joint stiffnesses for R6, N·m/rad.
        mounts: Base mounts for R5.
    """

    lengths: tuple[float, ...] = DEFAULT_LENGTHS_M
    stiffnesses: tuple[float, ...] = DEFAULT_STIFFNESSES_NM_PER_RAD
    mounts: tuple[MountTransform, ...] = ()

    def __post_init__(self) -> None:
        if not self.mounts:
            object.__setattr__(
                self,
                "mounts",
                build_mounts(DEFAULT_MOUNT_OFFSETS_M, DEFAULT_MOUNT_ANGLES_DEG),
            )
        if not self.lengths or not self.stiffnesses:
            raise ValueError("Parameter sets must not be empty")

    def size(self, rule: RuleId) -> int:
        """Number of parameter choices for a rule (1 for the palm)."""
        return {
            RuleId.R4: 1,
            RuleId.R5: len(self.mounts),
            RuleId.R6: len(self.stiffnesses),
            RuleId.R7: len(self.lengths),
        }[rule]


def build_mounts(
    offsets_m: Sequence[float],
    angles_deg: Sequence[float],
    sides: Sequence[MountSide] = (MountSide.TOP, MountSide.BOTTOM),
) -> tuple[MountTransform, ...]:
    """Return every mount in the discrete set, ordered by side, offset, angle."""
    return tuple(
        MountTransform(side, float(offset), float(angle))
        for side, offset, angle in itertools.product(sides, offsets_m, angles_deg)
    )


def init_graph() -> DesignGraph:
    """Apply R1: a non-terminal palm with six finger dummies."""
    nodes = {0: Node(NodeKind.PALM_NT)}
    edges = []
    for node_id in range(1, INITIAL_DUMMIES + 1):
        nodes[node_id] = Node(NodeKind.FINGER_DUMMY)
        edges.append((0, node_id))
    return DesignGraph(nodes, edges, INITIAL_DUMMIES + 1)


class Grammar:
    """Enumerates and applies rules within limits and parameter sets."""

    def __init__(
        self,
        params: Optional[ParameterSets] = None,
        limits: Optional[GrammarLimits] = None,
    ) -> None:
        """Initialize grammar.

        Args:
            params: Discrete parameter sets - defaults if not given.
            limits: Structural limits - defaults if not given.
        """
        self.params = params or ParameterSets()
        self.limits = limits or GrammarLimits()

    def init_graph(self) -> DesignGraph:
        """Return the graph produced by R1."""
        return init_graph()

    def is_terminal(self, g: DesignGraph) -> bool:
        """True if the graph is a finished gripper within the finger limits."""
        return (
            g.is_fully_terminal()
            and self.limits.min_fingers <= g.finger_count() <= self.limits.max_fingers
        )

    def applicable_actions(self, g: DesignGraph, applied_count: int) -> list[Action]:
        """Return every valid action, ordered by rule, target and parameter.

        Args:
            g: Structurally valid graph.
            applied_count: Number of rules applied so far; at or beyond the
                depth cap only terminating and removing rules are offered,
                plus R2 while the gripper has fewer than `min_fingers` fingers.
        """
        actions: list[Action] = []
        draft = _Draft(g)
        choices = draft.choices(self.params, self.limits, applied_count)
        for rule, target, size in choices:
            if rule in PARAMETERIZED_RULES:
                actions.extend(Action(rule, target, index) for index in range(size))
            else:
                actions.append(Action(rule, target))
        return actions

    def apply(self, g: DesignGraph, a: Action) -> DesignGraph:
        """Return a new graph with the action's rewrite applied.

        The input graph is not modified. Untouched nodes keep their ids,
        terminated nodes keep their ids, and new nodes take consecutive
        fresh ids.

        Raises:
            InvalidAction: if the target kind, parameter or limits forbid it.
        """
        self._check(g, a)
        draft = _Draft(g)
        draft.rewrite(a, self.params)
        return draft.freeze()

    def random_rollout(
        self, g: DesignGraph, applied_count: int, rng: np.random.Generator
    ) -> tuple[DesignGraph, list[Action]]:
        """Apply uniformly random valid actions until the graph is terminal.

        Each step draws one action uniformly from `applicable_actions`, but
        the graph is rewritten in place and only rebuilt once at the end.

        Args:
            g: Starting graph.
            applied_count: Rules applied to reach `g`.
            rng: Generator supplying the choices.

        Returns:
            Terminal graph and the actions applied to reach it.
        """
        limits = self.limits
        draft = _Draft(g)
        applied: list[Action] = []
        while draft.open or not (
            limits.min_fingers <= draft.finger_count <= limits.max_fingers
        ):
            choices = draft.choices(self.params, limits, applied_count + len(applied))
            if not choices:
                raise InvalidAction(Action(RuleId.R1), "rollout reached a dead end")
            widths = [max(1, size) for _, _, size in choices]
            action = _nth_action(choices, widths, int(rng.integers(sum(widths))))
            draft.rewrite(action, self.params)
            applied.append(action)
        return draft.freeze(), applied

    def _check(self, g: DesignGraph, a: Action) -> None:
        """Raise InvalidAction unless the action's preconditions hold."""
        if a.rule == RuleId.R1:
            raise InvalidAction(a, "R1 is only applied by init_graph")
        if a.target is None or a.target not in g:
            raise InvalidAction(a, "target node does not exist")
        kind = g.kind(a.target)
        if kind != RULE_TARGET_KIND[a.rule]:
            expected = RULE_TARGET_KIND[a.rule]
            raise InvalidAction(a, f"target is {kind}, expected {expected}")
        if a.rule in PARAMETERIZED_RULES:
            size = self.params.size(a.rule)
            if a.param_index is None or not 0 <= a.param_index < size:
                raise InvalidAction(a, "parameter index out of range")
        elif a.param_index is not None:
            raise InvalidAction(a, "rule takes no parameter")
        limits = self.limits
        if a.rule == RuleId.R2 and g.finger_count() >= limits.max_fingers:
            raise InvalidAction(a, f"gripper already has {limits.max_fingers} fingers")
        if a.rule == RuleId.R3:
            base_id = g.finger_of(a.target)
            assert base_id is not None
            if _links_after_growth(g.phalanx_count(base_id)) > limits.max_phalanges:
                raise InvalidAction(
                    a, f"finger would exceed {limits.max_phalanges} phalanges"
                )
        if a.rule == RuleId.R8:
            remaining = g.finger_count() + len(g.ids_of_kind(NodeKind.FINGER_DUMMY)) - 1
            if remaining < limits.min_fingers:
                raise InvalidAction(
                    a, f"fewer than {limits.min_fingers} fingers would remain"
                )


_TERMINATING_RULE = {
    NodeKind.PALM_NT: RuleId.R4,
    NodeKind.BASE_NT: RuleId.R5,
    NodeKind.JOINT_NT: RuleId.R6,
    NodeKind.LINK_NT: RuleId.R7,
}

# One shared instance per parameterless kind
_BARE_NODES = {
    kind: Node(kind)
    for kind in NodeKind
    if kind not in (NodeKind.BASE_T, NodeKind.JOINT_T, NodeKind.LINK_T)
}


def _links_after_growth(links: int) -> int:
    """Phalanx count of a finger with `links` links once R3 is applied.

    Counts existing links, the link R3 creates, and the link the new
    growth point will eventually become.
    """
    return links + 2


def _nth_action(
    choices: Sequence[tuple[RuleId, int, int]], widths: Sequence[int], index: int
) -> Action:
    """Return the action at `index` of the expanded, ordered choice list."""
    for (rule, target, _), width in zip(choices, widths):
        if index < width:
            return Action(rule, target, index if rule in PARAMETERIZED_RULES else None)
        index -= width
    raise IndexError(f"action index {index} out of range")


class _Draft:
    """Mutable working copy of a design graph that rules rewrite in place.

    Keeps the non-terminal node ids, the finger each node belongs to and the
    link count of every finger up to date, so neither enumerating nor
    applying a rule rescans the graph.
    """

    def __init__(self, g: DesignGraph) -> None:
        self.nodes = g.nodes()
        self.parent = {child: parent for parent, child in g.edges()}
        self.next_id = g.next_id
        self.open = {
            node_id for node_id, node in self.nodes.items() if not node.kind.is_terminal
        }
        self.dummies = len(g.ids_of_kind(NodeKind.FINGER_DUMMY))
        self.finger: dict[int, int] = {}
        self.links: dict[int, int] = {}
        for base_id in g.finger_bases():
            for node_id in g.finger_chain(base_id):
                self.finger[node_id] = base_id
            self.links[base_id] = g.phalanx_count(base_id)

    @property
    def finger_count(self) -> int:
        """Number of fingers on the palm."""
        return len(self.links)

    def freeze(self) -> DesignGraph:
        """Return the immutable graph for the current state."""
        edges = [(parent, child) for child, parent in self.parent.items()]
        return DesignGraph(self.nodes, edges, self.next_id)

    def choices(
        self, params: ParameterSets, limits: GrammarLimits, applied_count: int
    ) -> list[tuple[RuleId, int, int]]:
        """Return (rule, target, parameter count) of every valid rule instance.

        Sorted by rule then target; rules without a parameter have count 0.
        """
        past_cap = applied_count >= limits.depth_cap
        fingers = self.finger_count
        choices: list[tuple[RuleId, int, int]] = []
        for node_id in self.open:
            kind = self.nodes[node_id].kind
            match kind:
                case NodeKind.FINGER_DUMMY:
                    grow_allowed = fingers < limits.min_fingers if past_cap else True
                    if grow_allowed and fingers < limits.max_fingers:
                        choices.append((RuleId.R2, node_id, 0))
                    if fingers + self.dummies - 1 >= limits.min_fingers:
                        choices.append((RuleId.R8, node_id, 0))
                case NodeKind.GROWTH:
                    links = _links_after_growth(self.links[self.finger[node_id]])
                    if not past_cap and links <= limits.max_phalanges:
                        choices.append((RuleId.R3, node_id, 0))
                    choices.append((RuleId.R9, node_id, 0))
                case _:
                    rule = _TERMINATING_RULE[kind]
                    choices.append((rule, node_id, params.size(rule)))
        choices.sort()
        return choices

    def rewrite(self, a: Action, params: ParameterSets) -> None:
        """Apply a valid action in place."""
        target = a.target
        assert target is not None
        match a.rule:
            case RuleId.R2:
                palm = self.parent[target]
                self._remove(target)
                base, joint, growth = self.next_id, self.next_id + 1, self.next_id + 2
                self._add(base, NodeKind.BASE_NT, palm, base)
                self._add(joint, NodeKind.JOINT_NT, base, base)
                self._add(growth, NodeKind.GROWTH, joint, base)
                self.links[base] = 0
                self.next_id += 3
            case RuleId.R3:
                base = self.finger[target]
                self.nodes[target] = _BARE_NODES[NodeKind.LINK_NT]
                self.links[base] += 1
                joint, growth = self.next_id, self.next_id + 1
                self._add(joint, NodeKind.JOINT_NT, target, base)
                self._add(growth, NodeKind.GROWTH, joint, base)
                self.next_id += 2
            case RuleId.R4:
                self._close(target, _BARE_NODES[NodeKind.PALM_T])
            case RuleId.R5:
                assert a.param_index is not None
                mount = params.mounts[a.param_index]
                self._close(target, Node(NodeKind.BASE_T, mount=mount))
            case RuleId.R6:
                assert a.param_index is not None
                stiffness = params.stiffnesses[a.param_index]
                self._close(target, Node(NodeKind.JOINT_T, stiffness=stiffness))
            case RuleId.R7:
                assert a.param_index is not None
                length = params.lengths[a.param_index]
                self._close(target, Node(NodeKind.LINK_T, length=length))
            case RuleId.R8:
                self._remove(target)
            case RuleId.R9:
                self.nodes[target] = _BARE_NODES[NodeKind.LINK_NT]
                self.links[self.finger[target]] += 1

    def _add(self, node_id: int, kind: NodeKind, parent: int, base: int) -> None:
        self.nodes[node_id] = _BARE_NODES[kind]
        self.parent[node_id] = parent
        self.finger[node_id] = base
        self.open.add(node_id)

    def _remove(self, dummy: int) -> None:
        del self.nodes[dummy]
        del self.parent[dummy]
        self.open.discard(dummy)
        self.dummies -= 1

    def _close(self, node_id: int, node: Node) -> None:
        self.nodes[node_id] = node
        self.open.discard(node_id)
