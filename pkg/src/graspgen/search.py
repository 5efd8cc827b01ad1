"""Monte-Carlo tree search over grammar actions.

Each tree node holds a design graph; each edge a move, the rule applications
that settle one decision. An iteration selects down the tree by UCB, expands
one untried move, rolls out random valid actions to a terminal design,
evaluates it, and updates edge statistics along the path. Edge values are the
best (or mean) normalized reward seen through the edge.

Rewrites of different nodes commute, so the tree settles decisions in a fixed
order: how many of the finger dummies become fingers, then how many links each
growth point adds (lowest id first), then the parameter of each remaining
non-terminal node (lowest id first). Structural moves are expanded largest
first, parameter moves in seeded random order, and progressive widening lets a
node hold only a few children until it has been visited often.
"""

from dataclasses import dataclass, field
from enum import StrEnum, auto
import logging
import math
from typing import Any, Optional, Protocol, Sequence

from graspgen.grammar import Action, Grammar, RuleId
from graspgen.graph import DesignGraph, NodeKind, serialize
from graspgen.utilities import ConfigError, new_rng, sing_plur

logger = logging.getLogger(__package__)

TRACE_COLUMNS = (
    "iteration",
    "episode_reward",
    "best_reward",
    "v_root",
    "mean_q",
    "test_run_reward",
)

# Rule applications an edge of the tree stands for
Move = tuple[Action, ...]


class BackpropMode(StrEnum):
    """Enum class to store how edge values combine episode rewards."""

    MAX = auto()
    MEAN = auto()


@dataclass(frozen=True)
class SearchConfig:
    """Search settings.

    Attributes:
        iterations: Number of iterations to run.
        exploration_c: UCB exploration constant.
        seed: Seed of the generator driving expansion and rollouts.
        top_k: Number of best designs retained.
        reward_normalizer: Divisor mapping raw rewards to [0, 1].
        backprop: Edge value update rule.
        batch_size: Rollouts evaluated together per round.
        log_every: Iterations between progress log lines (0 to disable).
        widening_c: A node may hold max(1, floor(widening_c * n ** widening_alpha))
            children after n visits; 0 expands every move before descending.
        widening_alpha: Growth exponent of the child allowance.
    """

    iterations: int = 100
    exploration_c: float = math.sqrt(2)
    seed: int = 0
    top_k: int = 5
    reward_normalizer: float = 1.0
    backprop: BackpropMode = BackpropMode.MAX
    batch_size: int = 1
    log_every: int = 10
    widening_c: float = 1.0
    widening_alpha: float = 0.5

    def __post_init__(self) -> None:
        if self.iterations <= 0:
            raise ConfigError("search.iterations", "must be positive")
        if self.exploration_c < 0 or not math.isfinite(self.exploration_c):
            raise ConfigError("search.exploration_c", "must be finite and >= 0")
        if self.reward_normalizer <= 0:
            raise ConfigError("search.reward_normalizer", "must be positive")
        if self.top_k < 1:
            raise ConfigError("search.top_k", "must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("search.batch_size", "must be at least 1")
        if self.seed < 0:
            raise ConfigError("search.seed", "must not be negative")
        if self.widening_c < 0 or not math.isfinite(self.widening_c):
            raise ConfigError("search.widening_c", "must be finite and >= 0")
        if not 0 < self.widening_alpha <= 1:
            raise ConfigError("search.widening_alpha", "must be in (0, 1]")

    def child_allowance(self, visits: int) -> float:
        """Most children a node visited `visits` times may hold."""
        if self.widening_c == 0:
            return math.inf
        return max(1, math.floor(self.widening_c * visits**self.widening_alpha))


class EvaluationFailure(Exception):
    """Base of errors an evaluator raises for a design it cannot score."""


@dataclass(frozen=True)
class EvaluationOutcome:
    """Score of a terminal design.

    Attributes:
        reward: Raw reward, in [0, normalizer].
        report: Evaluator-specific details kept with top designs.
        error: Failure message; the reward is then 0.
    """

    reward: float
    report: Any = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        """True if the design could not be evaluated."""
        return self.error is not None


class Evaluator(Protocol):
    """Scores terminal design graphs.

    May raise `EvaluationFailure`; may also provide
    `evaluate_batch(graphs) -> list[EvaluationOutcome]`.
    """

    def __call__(self, graph: DesignGraph) -> EvaluationOutcome: ...


@dataclass
class Edge:
    """Statistics of one move from a node.

    Attributes:
        move: Rule applications, in order.
        child: Node the move leads to.
        n_a: Episodes through this edge.
        q: Normalized value (max or mean of episode rewards).
        total: Sum of episode rewards, for mean backprop.
    """

    move: Move
    child: "SearchNode"
    n_a: int = 0
    q: float = 0.0
    total: float = 0.0


class SearchNode:
    """Tree node: a design graph and the moves tried from it."""

    def __init__(self, graph: DesignGraph, depth: int, moves: list[Move]) -> None:
        """Initialize node.

        Args:
            graph: Design graph at this node.
            depth: Rules applied to reach the graph.
            moves: Valid moves from the graph, in expansion order.
        """
        self.graph = graph
        self.depth = depth
        self.n = 0
        self.edges: dict[Move, Edge] = {}
        self.untried = list(moves)

    @property
    def is_leaf(self) -> bool:
        """True if no move has been expanded here."""
        return not self.edges

    @property
    def fully_expanded(self) -> bool:
        """True if every valid move has an edge."""
        return not self.untried

    def sorted_edges(self) -> list[Edge]:
        """Edges in move order, compared action by action."""
        return [self.edges[move] for move in sorted(self.edges)]

    def walk(self) -> list["SearchNode"]:
        """This node and every descendant, depth first."""
        nodes = [self]
        for edge in self.sorted_edges():
            nodes.extend(edge.child.walk())
        return nodes


def ucb_score(q: float, n_a: int, parent_n: int, c: float) -> float:
    """Upper confidence bound of an edge; unvisited edges score infinity."""
    if n_a == 0:
        return math.inf
    if c == 0:
        return q
    return q + c * math.sqrt(math.log(max(parent_n, 1)) / n_a)


def _checked(
    grammar: Grammar, graph: DesignGraph, depth: int, actions: Sequence[Action]
) -> Optional[Move]:
    """The actions as a move if each is valid in turn, else None."""
    for offset, action in enumerate(actions):
        if action not in grammar.applicable_actions(graph, depth + offset):
            return None
        graph = grammar.apply(graph, action)
    return tuple(actions)


def _finger_moves(
    grammar: Grammar, graph: DesignGraph, depth: int, dummies: list[int]
) -> list[Move]:
    """One move per number of dummies kept as fingers, most fingers first."""
    moves = []
    for kept in range(len(dummies), -1, -1):
        rules = [RuleId.R2] * kept + [RuleId.R8] * (len(dummies) - kept)
        actions = [Action(rule, dummy) for rule, dummy in zip(rules, dummies)]
        if move := _checked(grammar, graph, depth, actions):
            moves.append(move)
    return moves


def _growth_moves(
    grammar: Grammar, graph: DesignGraph, depth: int, growth: int
) -> list[Move]:
    """One move per number of links grown at a growth point, most first."""
    moves = []
    grown: list[Action] = []
    while True:
        valid = grammar.applicable_actions(graph, depth + len(grown))
        stop = Action(RuleId.R9, growth)
        if stop in valid:
            moves.append((*grown, stop))
        grow = Action(RuleId.R3, growth)
        if grow not in valid:
            break
        graph = grammar.apply(graph, grow)
        grown.append(grow)
        # R3 gives the new growth point the highest id
        growth = graph.next_id - 1
    moves.reverse()
    return moves


def node_moves(
    grammar: Grammar, graph: DesignGraph, depth: int
) -> tuple[list[Move], bool]:
    """Return the moves offered at a tree node and whether they are structural.

    The finger count is settled first, then the growth points one at a time,
    then the parameters of the remaining non-terminal nodes one at a time.
    Structural moves are listed largest first. Falls back to single actions
    if no grouped move is valid.

    Args:
        grammar: Rules, parameter sets and limits.
        graph: Graph at the node.
        depth: Rules applied to reach the graph.
    """
    if grammar.is_terminal(graph):
        return [], False
    moves: list[Move] = []
    if dummies := graph.ids_of_kind(NodeKind.FINGER_DUMMY):
        moves = _finger_moves(grammar, graph, depth, dummies)
    elif growths := graph.ids_of_kind(NodeKind.GROWTH):
        moves = _growth_moves(grammar, graph, depth, growths[0])
    if moves:
        return moves, True
    actions = grammar.applicable_actions(graph, depth)
    if not actions:
        return [], False
    first = min(action.target for action in actions if action.target is not None)
    return [(action,) for action in actions if action.target == first], False


@dataclass(frozen=True)
class Episode:
    """One iteration's outcome, kept for replaying the statistics.

    Attributes:
        iteration: 1-based iteration number.
        tree_actions: Actions of the edges updated, from the root.
        rollout_actions: Random actions applied after the tree.
        reward: Normalized reward.
        raw_reward: Reward as returned by the evaluator.
        design_key: Canonical serialization of the evaluated design.
        failed: True if the evaluator could not score the design.
    """

    iteration: int
    tree_actions: tuple[Action, ...]
    rollout_actions: tuple[Action, ...]
    reward: float
    raw_reward: float
    design_key: str
    failed: bool = False


@dataclass(frozen=True)
class TraceRow:
    """Per-iteration progress; rewards normalized."""

    iteration: int
    episode_reward: float
    best_reward: float
    v_root: float
    mean_q: float
    test_run_reward: Optional[float]


@dataclass(frozen=True)
class RankedDesign:
    """One of the best designs found.

    Attributes:
        rank: 1 for the best.
        graph: Terminal design graph.
        reward: Raw reward.
        normalized: Reward divided by the normalizer.
        report: Evaluator report.
        actions: Actions from the search root that produced the design.
        iteration: Iteration that first found it.
    """

    rank: int
    graph: DesignGraph
    reward: float
    normalized: float
    report: Any
    actions: tuple[Action, ...]
    iteration: int


@dataclass
class SearchResult:
    """Everything a search produced, complete or interrupted."""

    top_k: list[RankedDesign]
    trace: list[TraceRow]
    episodes: list[Episode]
    root: SearchNode
    evaluations: int = 0
    interrupted: bool = False


@dataclass
class _Found:
    """Best-design bookkeeping."""

    graph: DesignGraph
    outcome: EvaluationOutcome
    actions: tuple[Action, ...]
    iteration: int


@dataclass
class _Pending:
    """A selected and rolled-out episode awaiting its reward."""

    path: list[Edge]
    new_node: Optional[SearchNode]
    graph: DesignGraph
    rollout: list[Action]
    key: str = field(default="")


class MonteCarloSearch:
    """UCT search over a grammar, with terminal-design memoization."""

    def __init__(
        self,
        grammar: Grammar,
        evaluator: Evaluator,
        cfg: SearchConfig,
        start: Optional[DesignGraph] = None,
        start_depth: int = 0,
    ) -> None:
        """Initialize search.

        Args:
            grammar: Rules, parameter sets and limits.
            evaluator: Scores terminal graphs.
            cfg: Search settings.
            start: Graph to root the tree at - `grammar.init_graph()` if None.
            start_depth: Rules already applied to reach `start`.
        """
        self.grammar = grammar
        self.evaluator = evaluator
        self.cfg = cfg
        self.rng = new_rng(cfg.seed)
        graph = start if start is not None else grammar.init_graph()
        self.root = self._new_node(graph, start_depth)
        self.memo: dict[str, EvaluationOutcome] = {}
        self.found: dict[str, _Found] = {}
        self.episodes: list[Episode] = []
        self.trace: list[TraceRow] = []
        self.best = 0.0
        self.iteration = 0

    def _new_node(self, graph: DesignGraph, depth: int) -> SearchNode:
        """Create a node with its moves in expansion order."""
        moves, structural = node_moves(self.grammar, graph, depth)
        if not structural and len(moves) > 1:
            order = self.rng.permutation(len(moves))
            moves = [moves[index] for index in order]
        return SearchNode(graph, depth, moves)

    def _may_widen(self, node: SearchNode) -> bool:
        """True if the node has untried moves and room for another child."""
        allowance = self.cfg.child_allowance(node.n)
        return bool(node.untried) and len(node.edges) < allowance

    def _select(self) -> tuple[list[Edge], SearchNode]:
        """Descend by UCB until a node that may widen or has no moves."""
        node = self.root
        path: list[Edge] = []
        c = self.cfg.exploration_c
        while node.edges and not self._may_widen(node):
            best_edge = None
            best_score = -math.inf
            for edge in node.sorted_edges():
                score = ucb_score(edge.q, edge.n_a, node.n, c)
                if score > best_score:
                    best_edge, best_score = edge, score
            assert best_edge is not None
            path.append(best_edge)
            node = best_edge.child
        return path, node

    def _expand(self, node: SearchNode) -> Optional[Edge]:
        """Add an edge for the next untried move; None at terminal nodes."""
        if not node.untried:
            return None
        move = node.untried.pop(0)
        graph = node.graph
        for action in move:
            graph = self.grammar.apply(graph, action)
        edge = Edge(move, self._new_node(graph, node.depth + len(move)))
        node.edges[move] = edge
        return edge

    def _prepare(self) -> _Pending:
        """Selection, expansion and rollout of one episode."""
        path, leaf = self._select()
        new_node = None
        if edge := self._expand(leaf):
            path.append(edge)
            new_node = edge.child
            leaf = edge.child
        graph, rollout = self.grammar.random_rollout(leaf.graph, leaf.depth, self.rng)
        return _Pending(path, new_node, graph, rollout, serialize(graph))

    def _evaluate(self, pending: Sequence[_Pending]) -> None:
        """Evaluate the designs not yet memoized, in submission order."""
        todo: dict[str, DesignGraph] = {}
        for item in pending:
            if item.key not in self.memo and item.key not in todo:
                todo[item.key] = item.graph
        if not todo:
            return
        batch = getattr(self.evaluator, "evaluate_batch", None)
        if batch is not None and len(todo) > 1:
            for key, outcome in zip(todo, batch(list(todo.values()))):
                self.memo[key] = outcome
            return
        for key, graph in todo.items():
            try:
                self.memo[key] = self.evaluator(graph)
            except EvaluationFailure as exc:
                self.memo[key] = EvaluationOutcome(0.0, None, str(exc))

    def _backpropagate(self, pending: _Pending, value: float) -> None:
        """Update visit counts and edge values along the path."""
        self.root.n += 1
        for edge in pending.path:
            edge.n_a += 1
            edge.total += value
            if self.cfg.backprop == BackpropMode.MAX:
                edge.q = max(edge.q, value)
            else:
                edge.q = edge.total / edge.n_a
            # terminal revisits do not count as a visit of the leaf
            if edge.child.edges or edge.child is pending.new_node:
                edge.child.n += 1

    def _record(self, pending: _Pending) -> Episode:
        """Apply one evaluated episode to the tree and the logs."""
        self.iteration += 1
        outcome = self.memo[pending.key]
        if outcome.failed:
            logger.warning(
                f"Iteration {self.iteration}: evaluation failed: {outcome.error}"
            )
            raw = 0.0
        else:
            raw = outcome.reward
        value = min(1.0, max(0.0, raw / self.cfg.reward_normalizer))
        self._backpropagate(pending, value)
        tree_actions = tuple(action for edge in pending.path for action in edge.move)
        episode = Episode(
            self.iteration,
            tree_actions,
            tuple(pending.rollout),
            value,
            raw,
            pending.key,
            outcome.failed,
        )
        self.episodes.append(episode)
        if not outcome.failed and pending.key not in self.found:
            self.found[pending.key] = _Found(
                pending.graph,
                outcome,
                tree_actions + tuple(pending.rollout),
                self.iteration,
            )
        if value > self.best:
            logger.info(
                f"Iteration {self.iteration}: new best reward {raw:.4f} ({value:.4f})"
            )
        self.best = max(self.best, value)
        self.trace.append(
            TraceRow(
                self.iteration,
                value,
                self.best,
                self.v_root(),
                self.mean_leaf_q(),
                self.test_run(),
            )
        )
        log_every = self.cfg.log_every
        if log_every and self.iteration % log_every == 0:
            logger.info(
                f"Iteration {self.iteration}/{self.cfg.iterations}: "
                f"best {self.best:.4f}, V(root) {self.v_root():.4f}"
            )
        return episode

    def iterate(self) -> Episode:
        """Run one full iteration and return its episode."""
        pending = self._prepare()
        self._evaluate([pending])
        return self._record(pending)

    def iterate_batch(self, count: int) -> list[Episode]:
        """Prepare `count` episodes, evaluate them together, then apply in order."""
        pending = [self._prepare() for _ in range(count)]
        self._evaluate(pending)
        return [self._record(item) for item in pending]

    def v_root(self) -> float:
        """Best edge value at the root."""
        return max((edge.q for edge in self.root.edges.values()), default=0.0)

    def mean_leaf_q(self) -> float:
        """Mean value of edges leading to nodes with no edges of their own."""
        values = [
            edge.q
            for node in self.root.walk()
            for edge in node.edges.values()
            if edge.child.is_leaf
        ]
        return math.fsum(values) / len(values) if values else 0.0

    def test_run(self) -> Optional[float]:
        """Greedy descent by value; the normalized reward if it ends terminal.

        Returns None if the descent stops at a node that is not terminal.
        """
        node = self.root
        while node.edges:
            node = max(node.sorted_edges(), key=lambda edge: edge.q).child
        if not self.grammar.is_terminal(node.graph):
            return None
        key = serialize(node.graph)
        outcome = self.memo.get(key)
        if outcome is None or outcome.failed:
            return 0.0 if outcome is not None else None
        return min(1.0, max(0.0, outcome.reward / self.cfg.reward_normalizer))

    def ranked(self) -> list[RankedDesign]:
        """Best designs so far, highest reward first, earliest on ties."""
        best = sorted(
            self.found.values(),
            key=lambda found: (-found.outcome.reward, found.iteration),
        )[: self.cfg.top_k]
        return [
            RankedDesign(
                rank,
                found.graph,
                found.outcome.reward,
                min(1.0, max(0.0, found.outcome.reward / self.cfg.reward_normalizer)),
                found.outcome.report,
                found.actions,
                found.iteration,
            )
            for rank, found in enumerate(best, start=1)
        ]

    def result(self, interrupted: bool = False) -> SearchResult:
        """Package the current state."""
        return SearchResult(
            self.ranked(),
            list(self.trace),
            list(self.episodes),
            self.root,
            len(self.memo),
            interrupted,
        )

    def run(self) -> SearchResult:
        """Run the configured number of iterations.

        A keyboard interrupt stops the search and returns the partial result.
        """
        cfg = self.cfg
        logger.info(
            f"Search started: {sing_plur(cfg.iterations, 'iteration')}, seed {cfg.seed}"
        )
        try:
            while self.iteration < cfg.iterations:
                remaining = cfg.iterations - self.iteration
                if cfg.batch_size > 1:
                    self.iterate_batch(min(cfg.batch_size, remaining))
                else:
                    self.iterate()
        except KeyboardInterrupt:
            logger.warning(f"Search interrupted after {self.iteration} iterations")
            return self.result(interrupted=True)
        logger.info(
            f"Search finished: best normalized reward {self.best:.4f}, "
            f"{sing_plur(len(self.memo), 'design')} evaluated"
        )
        return self.result()


def mcts_iteration(search: MonteCarloSearch) -> Episode:
    """Run one selection, expansion, rollout and backpropagation step."""
    return search.iterate()


def run_search(
    cfg: SearchConfig,
    grammar: Grammar,
    evaluator: Evaluator,
    start: Optional[DesignGraph] = None,
    start_depth: int = 0,
) -> SearchResult:
    """Run a complete search and return the top designs and the trace."""
    return MonteCarloSearch(grammar, evaluator, cfg, start, start_depth).run()
