"""Test Monte-Carlo tree search over the grammar"""

import math
from typing import Optional

import pytest

from graspgen.grammar import Action, Grammar, GrammarLimits, RuleId
from graspgen.graph import DesignGraph, NodeKind, serialize
from graspgen.search import (
    BackpropMode,
    EvaluationFailure,
    EvaluationOutcome,
    MonteCarloSearch,
    SearchConfig,
    SearchNode,
    SearchResult,
    mcts_iteration,
    run_search,
    node_moves,
    ucb_score,
)
from graspgen.utilities import ConfigError

# four fingers of five phalanges
TOY_MAX_REWARD = 4 + 0.1 * 20


class ToyEvaluator:
    """Rewards fingers and phalanges; counts its calls."""

    def __init__(self, interrupt_at: int = 0, fail_single: bool = False) -> None:
        self.calls = 0
        self.interrupt_at = interrupt_at
        self.fail_single = fail_single

    def __call__(self, graph: DesignGraph) -> EvaluationOutcome:
        self.calls += 1
        if self.calls == self.interrupt_at:
            raise KeyboardInterrupt
        if self.fail_single and graph.finger_count() == 1:
            raise EvaluationFailure("single finger")
        reward = graph.finger_count() + 0.1 * sum(graph.phalanx_counts())
        return EvaluationOutcome(reward, {"fingers": graph.finger_count()})


class BatchToyEvaluator(ToyEvaluator):
    """Toy evaluator that also scores batches."""

    def __init__(self) -> None:
        super().__init__()
        self.batches: list[int] = []

    def evaluate_batch(self, graphs: list[DesignGraph]) -> list[EvaluationOutcome]:
        """Score each graph, recording the batch size."""
        self.batches.append(len(graphs))
        return [self(graph) for graph in graphs]


def toy_search(
    iterations: int = 40,
    seed: int = 3,
    evaluator: Optional[ToyEvaluator] = None,
    **kwargs: object,
) -> SearchResult:
    """Run a search scored by the toy evaluator."""
    cfg = SearchConfig(
        iterations=iterations,
        seed=seed,
        reward_normalizer=TOY_MAX_REWARD,
        **kwargs,  # type: ignore[arg-type]
    )
    return run_search(cfg, Grammar(), evaluator or ToyEvaluator())


def edge_prefixes(
    node: SearchNode, prefix: tuple[Action, ...] = ()
) -> list[tuple[tuple[Action, ...], float, int]]:
    """(actions from the root, q, n_a) of every edge below a node."""
    found = []
    for edge in node.sorted_edges():
        path = prefix + edge.move
        found.append((path, edge.q, edge.n_a))
        found.extend(edge_prefixes(edge.child, path))
    return found


def test_ucb_score() -> None:
    """UCB with and without exploration"""
    expected = 0.5 + math.sqrt(2) * math.sqrt(math.log(10) / 2)
    assert ucb_score(0.5, 2, 10, math.sqrt(2)) == pytest.approx(expected)
    assert ucb_score(0.5, 2, 10, math.sqrt(2)) == pytest.approx(2.0174, abs=1e-4)
    assert ucb_score(0.5, 0, 10, 1.0) == math.inf
    assert ucb_score(0.7, 3, 10, 0.0) == 0.7


def test_search_config_validation() -> None:
    """Invalid settings name their key"""
    with pytest.raises(ConfigError) as exc_info:
        SearchConfig(iterations=0)
    assert exc_info.value.field == "search.iterations"
    with pytest.raises(ConfigError):
        SearchConfig(exploration_c=-1.0)
    with pytest.raises(ConfigError):
        SearchConfig(reward_normalizer=0.0)
    with pytest.raises(ConfigError):
        SearchConfig(batch_size=0)
    with pytest.raises(ConfigError) as exc_info:
        SearchConfig(widening_c=-0.5)
    assert exc_info.value.field == "search.widening_c"
    with pytest.raises(ConfigError):
        SearchConfig(widening_alpha=0.0)


def test_child_allowance() -> None:
    """Children allowed grow with the square root of the visits"""
    cfg = SearchConfig()
    assert [cfg.child_allowance(n) for n in (0, 1, 3, 4, 9, 16)] == [1, 1, 1, 2, 3, 4]
    assert SearchConfig(widening_c=0.0).child_allowance(100) == math.inf


def test_visit_counts() -> None:
    """Root counts every iteration, inner nodes one more than their edges"""
    result = toy_search()
    assert result.root.n == 40
    assert sum(edge.n_a for edge in result.root.edges.values()) == 40
    for node in result.root.walk()[1:]:
        assert node.n == sum(edge.n_a for edge in node.edges.values()) + 1


def test_edge_values_replay_episodes() -> None:
    """Each edge holds the best reward of the episodes that used it"""
    result = toy_search()
    for prefix, q, n_a in edge_prefixes(result.root):
        through = [
            episode.reward
            for episode in result.episodes
            if episode.tree_actions[: len(prefix)] == prefix
        ]
        assert n_a == len(through)
        assert q == max(through)


def test_mean_backprop() -> None:
    """Mean mode keeps the average reward through each edge"""
    result = toy_search(backprop=BackpropMode.MEAN)
    for prefix, q, n_a in edge_prefixes(result.root):
        through = [
            episode.reward
            for episode in result.episodes
            if episode.tree_actions[: len(prefix)] == prefix
        ]
        assert n_a == len(through)
        assert q == pytest.approx(sum(through) / len(through))


def test_search_is_deterministic() -> None:
    """Equal seeds reproduce episodes and top designs"""
    first = toy_search(seed=11)
    second = toy_search(seed=11)
    assert first.episodes == second.episodes
    assert [design.graph for design in first.top_k] == [
        design.graph for design in second.top_k
    ]
    assert first.trace == second.trace


def test_best_reward_never_decreases() -> None:
    """Trace best is the running maximum of episode rewards"""
    result = toy_search()
    assert len(result.trace) == 40
    running = 0.0
    for row, episode in zip(result.trace, result.episodes):
        running = max(running, episode.reward)
        assert row.iteration == episode.iteration
        assert row.best_reward == running
        assert 0.0 <= row.v_root <= 1.0
        assert 0.0 <= row.mean_q <= 1.0


def test_single_iteration() -> None:
    """One iteration evaluates and reports exactly one design"""
    evaluator = ToyEvaluator()
    result = toy_search(iterations=1, evaluator=evaluator)
    assert len(result.top_k) == 1
    assert result.evaluations == 1
    assert evaluator.calls == 1
    assert result.top_k[0].rank == 1
    assert result.top_k[0].iteration == 1


def test_memoization() -> None:
    """Each distinct terminal design is evaluated once"""
    evaluator = ToyEvaluator()
    result = toy_search(iterations=60, evaluator=evaluator)
    keys = {episode.design_key for episode in result.episodes}
    assert evaluator.calls == len(keys) == result.evaluations


def test_top_designs() -> None:
    """Top designs are distinct, ranked and reproducible from their actions"""
    result = toy_search(top_k=3)
    assert [design.rank for design in result.top_k] == [1, 2, 3]
    rewards = [design.reward for design in result.top_k]
    assert rewards == sorted(rewards, reverse=True)
    assert len({serialize(design.graph) for design in result.top_k}) == 3
    grammar = Grammar()
    for design in result.top_k:
        assert grammar.is_terminal(design.graph)
        assert design.normalized == pytest.approx(design.reward / TOY_MAX_REWARD)
        g = grammar.init_graph()
        for action in design.actions:
            g = grammar.apply(g, action)
        assert g == design.graph
    best = max(episode.raw_reward for episode in result.episodes)
    assert result.top_k[0].reward == best


def test_evaluation_failures() -> None:
    """Designs that cannot be scored count as zero and are not ranked"""
    result = toy_search(iterations=60, evaluator=ToyEvaluator(fail_single=True))
    failed = [episode for episode in result.episodes if episode.failed]
    assert failed
    assert all(episode.reward == 0.0 for episode in failed)
    assert all(design.graph.finger_count() > 1 for design in result.top_k)


def test_batch_mode() -> None:
    """Batched rounds still run every iteration and share one evaluation call"""
    evaluator = BatchToyEvaluator()
    result = toy_search(iterations=10, evaluator=evaluator, batch_size=4)
    assert len(result.episodes) == 10
    assert result.root.n == 10
    assert [episode.iteration for episode in result.episodes] == list(range(1, 11))
    assert all(size <= 4 for size in evaluator.batches)
    keys = {episode.design_key for episode in result.episodes}
    assert result.evaluations == len(keys)


def test_interrupt_returns_partial_result() -> None:
    """A keyboard interrupt ends the search with what was found so far"""
    result = toy_search(iterations=50, evaluator=ToyEvaluator(interrupt_at=5))
    assert result.interrupted
    assert 4 <= len(result.episodes) < 50
    assert len(result.trace) == len(result.episodes)
    assert result.root.n == len(result.episodes)
    assert result.top_k


def test_start_graph_and_test_run() -> None:
    """Search can start from a partial design; greedy descent is scored"""
    grammar = Grammar(limits=GrammarLimits(max_fingers=2))
    start = grammar.apply(grammar.init_graph(), Action(RuleId.R2, 1))
    cfg = SearchConfig(iterations=20, seed=1, reward_normalizer=TOY_MAX_REWARD)
    search = MonteCarloSearch(grammar, ToyEvaluator(), cfg, start, start_depth=1)
    assert search.test_run() is None
    episode = mcts_iteration(search)
    assert episode.iteration == 1
    result = search.run()
    assert len(result.episodes) == 20
    assert all(design.graph.finger_count() >= 1 for design in result.top_k)
    score = search.test_run()
    assert score is None or 0.0 <= score <= 1.0


def test_node_moves_settle_one_decision() -> None:
    """Moves fix the finger count, then each growth point, then one parameter"""
    grammar = Grammar()
    g = grammar.init_graph()
    moves, structural = node_moves(grammar, g, 0)
    assert structural
    kept = [sum(action.rule == RuleId.R2 for action in move) for move in moves]
    assert kept == [4, 3, 2, 1]
    assert all(len(move) == 6 for move in moves)
    assert [action.target for action in moves[2]] == [1, 2, 3, 4, 5, 6]
    for action in moves[2]:
        g = grammar.apply(g, action)
    moves, structural = node_moves(grammar, g, 6)
    assert structural
    assert [len(move) for move in moves] == [5, 4, 3, 2, 1]
    assert moves[-1] == (Action(RuleId.R9, g.ids_of_kind(NodeKind.GROWTH)[0]),)
    for growth in g.ids_of_kind(NodeKind.GROWTH):
        g = grammar.apply(g, Action(RuleId.R9, growth))
    moves, structural = node_moves(grammar, g, 8)
    assert not structural
    assert len({move[0].target for move in moves}) == 1
    assert all(len(move) == 1 for move in moves)
    expected = grammar.applicable_actions(g, 8)[: len(moves)]
    assert [move[0] for move in moves] == expected


def test_without_widening_root_expands_every_move() -> None:
    """Widening off tries each finger count before going deeper"""
    result = toy_search(iterations=4, widening_c=0.0)
    assert len(result.root.edges) == 4
    assert all(edge.n_a == 1 for edge in result.root.edges.values())


class PhalanxEvaluator:
    """Rewards the total phalanx count, capped at 20."""

    def __call__(self, graph: DesignGraph) -> EvaluationOutcome:
        return EvaluationOutcome(float(min(sum(graph.phalanx_counts()), 20)))


def test_finds_toy_optimum() -> None:
    """Search reaches the most phalanges the default grammar allows"""
    cfg = SearchConfig(iterations=500, seed=0, reward_normalizer=20)
    result = run_search(cfg, Grammar(), PhalanxEvaluator())
    assert result.top_k[0].reward == 20
    assert result.top_k[0].graph.phalanx_counts() == [5, 5, 5, 5]


def test_root_value_never_decreases() -> None:
    """V(root) is a running maximum under max backprop"""
    result = toy_search(iterations=60)
    values = [row.v_root for row in result.trace]
    assert values == sorted(values)
    assert values[-1] == max(episode.reward for episode in result.episodes)
