"""Test the gripper graph grammar"""

from collections import Counter
import time

import pytest

from graspgen.grammar import (
    Action,
    Grammar,
    GrammarLimits,
    InvalidAction,
    ParameterSets,
    RuleId,
    build_mounts,
    init_graph,
)
from graspgen.graph import DesignGraph, MountSide, NodeKind
from graspgen.utilities import new_rng


def grow_one_finger(grammar: Grammar) -> DesignGraph:
    """Apply R2 to the first dummy and remove the other five."""
    g = grammar.apply(init_graph(), Action(RuleId.R2, 1))
    for dummy in range(2, 7):
        g = grammar.apply(g, Action(RuleId.R8, dummy))
    return g


def test_init_actions() -> None:
    """Start graph offers six R2, six R8 and one R4 action"""
    grammar = Grammar()
    actions = grammar.applicable_actions(grammar.init_graph(), 0)
    counts = Counter(action.rule for action in actions)
    assert counts == {RuleId.R2: 6, RuleId.R8: 6, RuleId.R4: 1}
    assert actions == sorted(actions)
    assert not grammar.is_terminal(grammar.init_graph())


def test_apply_r2() -> None:
    """R2 replaces a dummy by a base, joint and growth point with fresh ids"""
    grammar = Grammar()
    start = init_graph()
    g = grammar.apply(start, Action(RuleId.R2, 1))
    assert len(start) == 7
    assert len(g) == 9
    assert 1 not in g.nodes()
    assert [g.kind(node_id) for node_id in (7, 8, 9)] == [
        NodeKind.BASE_NT,
        NodeKind.JOINT_NT,
        NodeKind.GROWTH,
    ]
    assert g.edges() == ((0, 2), (0, 3), (0, 4), (0, 5), (0, 6), (0, 7), (7, 8), (8, 9))
    assert g.next_id == 10
    assert g.finger_count() == 1


def test_apply_r8_removes_one_node() -> None:
    """R8 deletes exactly the targeted dummy"""
    grammar = Grammar()
    g = grammar.apply(init_graph(), Action(RuleId.R8, 3))
    assert len(g) == 6
    assert 3 not in g.nodes()


def test_apply_is_deterministic() -> None:
    """The same action sequence yields identical graphs"""
    grammar = Grammar()
    assert grow_one_finger(grammar) == grow_one_finger(grammar)


def test_growth_rules() -> None:
    """R3 adds a phalanx and R9 stops growth"""
    grammar = Grammar()
    g = grow_one_finger(grammar)
    growth = g.ids_of_kind(NodeKind.GROWTH)[0]
    rules = {action.rule for action in grammar.applicable_actions(g, 6)}
    assert {RuleId.R3, RuleId.R9} <= rules
    assert RuleId.R8 not in rules

    grown = grammar.apply(g, Action(RuleId.R3, growth))
    assert grown.kind(growth) == NodeKind.LINK_NT
    assert len(grown.ids_of_kind(NodeKind.GROWTH)) == 1
    assert grown.phalanx_counts() == [1]

    stopped = grammar.apply(g, Action(RuleId.R9, growth))
    assert stopped.kind(growth) == NodeKind.LINK_NT
    assert stopped.ids_of_kind(NodeKind.GROWTH) == []


def test_one_finger_to_terminal() -> None:
    """Terminating every node of a one-finger graph gives a terminal design"""
    grammar = Grammar()
    g = grow_one_finger(grammar)
    g = grammar.apply(g, Action(RuleId.R9, 9))
    assert not grammar.is_terminal(g)
    g = grammar.apply(g, Action(RuleId.R4, 0, 0))
    g = grammar.apply(g, Action(RuleId.R5, 7, 4))
    g = grammar.apply(g, Action(RuleId.R6, 8, 1))
    assert not grammar.is_terminal(g)
    g = grammar.apply(g, Action(RuleId.R7, 9, 2))
    assert grammar.is_terminal(g)
    assert grammar.applicable_actions(g, 10) == []
    mount = g.node(7).mount
    assert mount is not None
    assert (mount.side, mount.offset_m, mount.angle_deg) == (MountSide.TOP, 0.0, 0.0)
    assert g.node(8).stiffness == 0.3
    assert g.node(9).length == 0.11


def test_max_fingers() -> None:
    """No R2 once the finger limit is reached"""
    grammar = Grammar(limits=GrammarLimits(max_fingers=4))
    g = init_graph()
    for dummy in range(1, 5):
        g = grammar.apply(g, Action(RuleId.R2, dummy))
    rules = {action.rule for action in grammar.applicable_actions(g, 4)}
    assert RuleId.R2 not in rules
    with pytest.raises(InvalidAction):
        grammar.apply(g, Action(RuleId.R2, 5))


def test_max_phalanges() -> None:
    """R3 is refused when the finger would exceed its phalanx limit"""
    grammar = Grammar(limits=GrammarLimits(max_phalanges=2))
    g = grow_one_finger(grammar)
    g = grammar.apply(g, Action(RuleId.R3, 9))
    growth = g.ids_of_kind(NodeKind.GROWTH)[0]
    rules = {action.rule for action in grammar.applicable_actions(g, 7)}
    assert RuleId.R3 not in rules
    assert RuleId.R9 in rules
    with pytest.raises(InvalidAction) as exc_info:
        grammar.apply(g, Action(RuleId.R3, growth))
    assert exc_info.value.action == Action(RuleId.R3, growth)


def test_min_fingers_protects_last_dummy() -> None:
    """The last dummy cannot be removed when no finger exists"""
    grammar = Grammar()
    g = init_graph()
    for dummy in range(1, 6):
        g = grammar.apply(g, Action(RuleId.R8, dummy))
    rules = [action.rule for action in grammar.applicable_actions(g, 5)]
    assert RuleId.R8 not in rules
    assert RuleId.R2 in rules
    with pytest.raises(InvalidAction):
        grammar.apply(g, Action(RuleId.R8, 6))


def test_depth_cap() -> None:
    """Past the cap only terminating and removing rules remain"""
    grammar = Grammar(limits=GrammarLimits(depth_cap=5))
    g = grammar.apply(init_graph(), Action(RuleId.R2, 1))
    rules = {action.rule for action in grammar.applicable_actions(g, 5)}
    assert RuleId.R2 not in rules
    assert RuleId.R3 not in rules
    assert {RuleId.R4, RuleId.R5, RuleId.R6, RuleId.R8, RuleId.R9} <= rules


def test_depth_cap_keeps_one_finger_reachable() -> None:
    """Past the cap a fingerless graph may still grow its first finger"""
    grammar = Grammar(limits=GrammarLimits(depth_cap=0))
    g = init_graph()
    rules = {action.rule for action in grammar.applicable_actions(g, 0)}
    assert RuleId.R2 in rules


def test_invalid_actions() -> None:
    """Wrong targets, parameters and R1 are rejected"""
    grammar = Grammar()
    g = init_graph()
    with pytest.raises(InvalidAction):
        grammar.apply(g, Action(RuleId.R1))
    with pytest.raises(InvalidAction):
        grammar.apply(g, Action(RuleId.R4, 1, 0))
    with pytest.raises(InvalidAction):
        grammar.apply(g, Action(RuleId.R4, 0, 1))
    with pytest.raises(InvalidAction):
        grammar.apply(g, Action(RuleId.R2, 1, 0))
    with pytest.raises(InvalidAction):
        grammar.apply(g, Action(RuleId.R2, 99))


def test_action_text() -> None:
    """Actions print compactly"""
    assert str(Action(RuleId.R5, 7, 4)) == "R5@7[4]"
    assert str(Action(RuleId.R9, 9)) == "R9@9"
    assert Action(RuleId.R2, 3) < Action(RuleId.R2, 4) < Action(RuleId.R3, 1)


def test_parameter_sets() -> None:
    """Default mounts cover both sides, three offsets and three angles"""
    params = ParameterSets()
    assert params.size(RuleId.R5) == 18
    assert params.size(RuleId.R4) == 1
    assert params.mounts[4].side == MountSide.TOP
    assert params.mounts[4].offset_m == 0.0
    assert params.mounts[4].angle_deg == 0.0
    assert len(build_mounts([0.0], [0.0, 15.0], [MountSide.BOTTOM])) == 2
    with pytest.raises(ValueError):
        ParameterSets(lengths=())


def test_limits_validation() -> None:
    """Inconsistent limits are rejected"""
    with pytest.raises(ValueError):
        GrammarLimits(min_fingers=3, max_fingers=2)
    with pytest.raises(ValueError):
        GrammarLimits(max_fingers=7)
    with pytest.raises(ValueError):
        GrammarLimits(max_phalanges=0)


def test_random_rollouts_terminate_within_limits() -> None:
    """Random rollouts always reach valid terminal designs quickly"""
    limits = GrammarLimits(max_fingers=4, max_phalanges=5, depth_cap=30)
    grammar = Grammar(limits=limits)
    rng = new_rng(1234)
    for _ in range(1000):
        g, actions = grammar.random_rollout(grammar.init_graph(), 0, rng)
        assert grammar.is_terminal(g)
        assert g.check_structure() == []
        assert 1 <= g.finger_count() <= 4
        assert all(1 <= count <= 5 for count in g.phalanx_counts())
        # Past the cap: 5 per dummy, 2 per growth point, 1 per other node
        post_cap_bound = 6 * 5 + 4 * 2 + 1 + 4 * 11
        assert len(actions) <= limits.depth_cap + post_cap_bound


def test_rollout_intermediate_graphs_stay_valid() -> None:
    """Every graph along a rollout satisfies the path grammar"""
    grammar = Grammar(limits=GrammarLimits(depth_cap=12))
    rng = new_rng(7)
    for _ in range(200):
        g = grammar.init_graph()
        applied = 0
        while not grammar.is_terminal(g):
            actions = grammar.applicable_actions(g, applied)
            g = grammar.apply(g, actions[int(rng.integers(len(actions)))])
            applied += 1
            assert g.check_structure() == []


def test_rollout_is_seeded() -> None:
    """Equal seeds give equal rollouts"""
    grammar = Grammar()
    first = grammar.random_rollout(init_graph(), 0, new_rng(5))
    second = grammar.random_rollout(init_graph(), 0, new_rng(5))
    assert first == second


def test_rollout_matches_stepwise_apply() -> None:
    """In-place rollouts pick the same actions as applying one at a time"""
    grammar = Grammar(limits=GrammarLimits(depth_cap=12))
    for seed in range(20):
        graph, actions = grammar.random_rollout(init_graph(), 0, new_rng(seed))
        rng = new_rng(seed)
        g = init_graph()
        stepped = []
        while not grammar.is_terminal(g):
            choices = grammar.applicable_actions(g, len(stepped))
            action = choices[int(rng.integers(len(choices)))]
            g = grammar.apply(g, action)
            stepped.append(action)
        assert actions == stepped
        assert graph == g


def test_rewrites_leave_cached_counts_intact() -> None:
    """Counts of a graph stay put after rewrites derive new graphs from it"""
    grammar = Grammar()
    g = grammar.apply(init_graph(), Action(RuleId.R2, 1))
    assert g.finger_count() == 1
    assert g.phalanx_counts() == [0]
    growth = g.ids_of_kind(NodeKind.GROWTH)[0]
    grown = grammar.apply(g, Action(RuleId.R3, growth))
    assert grown.phalanx_counts() == [1]
    wider = grammar.apply(grown, Action(RuleId.R2, 2))
    assert wider.finger_count() == 2
    assert wider.phalanx_counts() == [1, 0]
    assert g.finger_count() == 1
    assert g.phalanx_counts() == [0]
    assert grown.finger_count() == 1


def test_ten_thousand_rollouts_are_fast() -> None:
    """10,000 rollouts from the start graph finish in under 10 seconds"""
    grammar = Grammar()
    rng = new_rng(2024)
    start = grammar.init_graph()
    began = time.perf_counter()
    fingers: Counter[int] = Counter()
    for _ in range(10_000):
        g, _actions = grammar.random_rollout(start, 0, rng)
        fingers[g.finger_count()] += 1
    elapsed = time.perf_counter() - began
    assert set(fingers) <= {1, 2, 3, 4}
    assert sum(fingers.values()) == 10_000
    assert elapsed < 10.0
