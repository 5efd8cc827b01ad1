"""Design graph: node alphabet, immutable gripper graph and its text document."""

from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
import json
import logging
import math
from typing import Any, Iterable, Iterator, Mapping, Optional

import networkx as nx
import regex as re

logger = logging.getLogger(__package__)

DOCUMENT_VERSION = 1
NODE_ATTR = "node"

# Symbols used to spell a root-to-leaf path: NT and T variants share a symbol.
PATH_SYMBOLS = {
    "PalmNT": "P",
    "PalmT": "P",
    "F": "F",
    "BaseNT": "B",
    "BaseT": "B",
    "JointNT": "J",
    "JointT": "J",
    "LinkNT": "L",
    "LinkT": "L",
    "FG": "G",
}
FINGER_PATH_REGEX = re.compile(r"P(?:F|BJ(?:LJ)*(?:L|G))")


class NodeKind(StrEnum):
    """Enum class to store the node alphabet.

    Values are the names used in design documents.
    """

    PALM_NT = "PalmNT"
    FINGER_DUMMY = "F"
    BASE_NT = "BaseNT"
    JOINT_NT = "JointNT"
    LINK_NT = "LinkNT"
    GROWTH = "FG"
    PALM_T = "PalmT"
    BASE_T = "BaseT"
    JOINT_T = "JointT"
    LINK_T = "LinkT"

    @property
    def is_terminal(self) -> bool:
        """True for kinds that carry fixed physical parameters."""
        return self in TERMINAL_KINDS

    @property
    def is_palm(self) -> bool:
        """True for either palm variant."""
        return self in (NodeKind.PALM_NT, NodeKind.PALM_T)

    @property
    def is_base(self) -> bool:
        """True for either base variant."""
        return self in (NodeKind.BASE_NT, NodeKind.BASE_T)

    @property
    def is_joint(self) -> bool:
        """True for either joint variant."""
        return self in (NodeKind.JOINT_NT, NodeKind.JOINT_T)

    @property
    def is_link(self) -> bool:
        """True for either link variant."""
        return self in (NodeKind.LINK_NT, NodeKind.LINK_T)


TERMINAL_KINDS = frozenset(
    (NodeKind.PALM_T, NodeKind.BASE_T, NodeKind.JOINT_T, NodeKind.LINK_T)
)
LEAF_ONLY_KINDS = frozenset((NodeKind.FINGER_DUMMY, NodeKind.GROWTH))


class MountSide(StrEnum):
    """Enum class to store the palm edge a finger base is mounted on.

    The side also fixes the flexion sense of the finger: fingers on the top
    edge curl clockwise, fingers on the bottom edge counter-clockwise.
    """

    TOP = "top"
    BOTTOM = "bottom"

    @property
    def flex_sign(self) -> float:
        """Sign of in-plane rotation produced by a positive joint angle."""
        return -1.0 if self == MountSide.TOP else 1.0


@dataclass(frozen=True, order=True)
class MountTransform:
    """Position and orientation of a finger base on the palm.

    Attributes:
        side: Palm edge.
        offset_m: Distance along the palm from its centre.
        angle_deg: Mounting orientation; positive tilts the base towards
            the finger's flexion sense.
    """

    side: MountSide
    offset_m: float
    angle_deg: float

    @property
    def angle_rad(self) -> float:
        """Mounting orientation in radians."""
        return math.radians(self.angle_deg)

    def to_dict(self) -> dict[str, Any]:
        """Return the document form of the mount."""
        return {
            "side": str(self.side),
            "offset_m": self.offset_m,
            "angle_deg": self.angle_deg,
        }


@dataclass(frozen=True)
class Node:
    """One node of a design graph.

    Terminal kinds carry exactly one parameter, non-terminal kinds none.

    Attributes:
        kind: Node kind.
        mount: Mount of a terminal base.
        stiffness: Spring stiffness of a terminal joint, N·m/rad.
        length: Length of a terminal link, m.
    """

    kind: NodeKind
    mount: Optional[MountTransform] = None
    stiffness: Optional[float] = None
    length: Optional[float] = None

    def __post_init__(self) -> None:
        expected = {
            NodeKind.BASE_T: "mount",
            NodeKind.JOINT_T: "stiffness",
            NodeKind.LINK_T: "length",
        }.get(self.kind)
        for field in ("mount", "stiffness", "length"):
            present = getattr(self, field) is not None
            if present != (field == expected):
                raise ValueError(f"{self.kind} node has invalid parameter '{field}'")

    def to_dict(self, node_id: int) -> dict[str, Any]:
        """Return the document form of the node."""
        doc: dict[str, Any] = {"id": node_id, "kind": str(self.kind)}
        if self.mount is not None:
            doc["mount"] = self.mount.to_dict()
        if self.stiffness is not None:
            doc["stiffness_nm_per_rad"] = self.stiffness
        if self.length is not None:
            doc["length_m"] = self.length
        return doc


class ParseError(Exception):
    """Raised when a design document cannot be read.

    Attributes:
        message: What went wrong.
        line: Line of the document, if known.
        field: Path of the offending field, if known.
    """

    def __init__(
        self, message: str, line: Optional[int] = None, field: Optional[str] = None
    ) -> None:
        self.message = message
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class DesignGraph:
    """Rooted star-topology graph describing a gripper morphology.

    Instances are immutable: every rewrite produces a new graph. Node ids are
    allocated in creation order and never reused, so equal construction
    sequences produce identical graphs. Lookups (node map, children, finger
    bases, phalanx counts) are computed once per instance; the networkx view
    is only built when tree checks or path queries need it.

    Attributes:
        next_id: Id the next created node will receive.
    """

    def __init__(
        self,
        nodes: Mapping[int, Node],
        edges: Iterable[tuple[int, int]],
        next_id: int,
    ) -> None:
        """Build a graph from nodes, parent-child edges and the id counter."""
        edge_list = sorted({(parent, child) for parent, child in edges})
        for parent, child in edge_list:
            if parent not in nodes or child not in nodes:
                raise ValueError(f"Edge ({parent}, {child}) references unknown node")
        if nodes and next_id <= max(nodes):
            raise ValueError(f"next_id {next_id} collides with existing node ids")
        self._nodes = {node_id: nodes[node_id] for node_id in sorted(nodes)}
        self._edges = tuple(edge_list)
        self._children: dict[int, list[int]] = {node_id: [] for node_id in nodes}
        self._parents: dict[int, list[int]] = {}
        for parent, child in edge_list:
            self._children[parent].append(child)
            self._parents.setdefault(child, []).append(parent)
        self.next_id = next_id

    @classmethod
    def from_networkx(cls, graph: nx.DiGraph, next_id: int) -> "DesignGraph":
        """Wrap a networkx graph whose nodes hold a `Node` attribute."""
        nodes = {node_id: data[NODE_ATTR] for node_id, data in graph.nodes(data=True)}
        return cls(nodes, graph.edges(), next_id)

    @cached_property
    def _graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        for node_id, node in self._nodes.items():
            graph.add_node(node_id, **{NODE_ATTR: node})
        graph.add_edges_from(self._edges)
        return graph

    def to_networkx(self) -> nx.DiGraph:
        """Return a mutable copy of the underlying networkx graph."""
        return self._graph.copy()

    @cached_property
    def _key(
        self,
    ) -> tuple[int, tuple[tuple[int, Node], ...], tuple[tuple[int, int], ...]]:
        return (self.next_id, tuple(self._nodes.items()), self._edges)

    def __eq__(self, other: object) -> bool:
        """Graphs are equal when nodes, edges and id counter all match."""
        if not isinstance(other, DesignGraph):
            return NotImplemented
        return self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"DesignGraph({serialize(self)})"

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def nodes(self) -> dict[int, Node]:
        """Return mapping of node id to node, ids ascending."""
        return dict(self._nodes)

    def node(self, node_id: int) -> Node:
        """Return the node with the given id."""
        return self._nodes[node_id]

    def kind(self, node_id: int) -> NodeKind:
        """Return the kind of the node with the given id."""
        return self._nodes[node_id].kind

    def edges(self) -> tuple[tuple[int, int], ...]:
        """Return all (parent, child) edges in ascending order."""
        return self._edges

    def children(self, node_id: int) -> list[int]:
        """Return ids of children of a node, ascending."""
        return list(self._children[node_id])

    def parent(self, node_id: int) -> Optional[int]:
        """Return id of the parent of a node, or None for the root."""
        parents = self._parents.get(node_id)
        return parents[0] if parents else None

    def ids_of_kind(self, *kinds: NodeKind) -> list[int]:
        """Return ids of all nodes with one of the given kinds, ascending."""
        return [node_id for node_id, node in self._nodes.items() if node.kind in kinds]

    @cached_property
    def _palms(self) -> list[int]:
        return [node_id for node_id, node in self._nodes.items() if node.kind.is_palm]

    def root(self) -> int:
        """Return the id of the palm node."""
        if len(self._palms) != 1:
            raise ValueError(f"Graph has {len(self._palms)} palm nodes, expected 1")
        return self._palms[0]

    @cached_property
    def _bases(self) -> tuple[int, ...]:
        return tuple(
            child
            for child in self._children[self.root()]
            if self._nodes[child].kind.is_base
        )

    @cached_property
    def _links(self) -> dict[int, int]:
        return {
            base_id: sum(
                1
                for node_id in self.finger_chain(base_id)
                if self._nodes[node_id].kind.is_link
            )
            for base_id in self._bases
        }

    def finger_bases(self) -> list[int]:
        """Return ids of base nodes attached to the palm, ascending."""
        return list(self._bases)

    def finger_count(self) -> int:
        """Return the number of fingers, i.e. bases on the palm."""
        return len(self._bases)

    def finger_chain(self, base_id: int) -> list[int]:
        """Return ids along a finger from its base to its tip."""
        chain = [base_id]
        children = self._children[base_id]
        while children:
            chain.append(children[0])
            children = self._children[children[0]]
        return chain

    def phalanx_count(self, base_id: int) -> int:
        """Return the number of links currently in a finger."""
        if base_id in self._links:
            return self._links[base_id]
        chain = self.finger_chain(base_id)
        return sum(1 for node_id in chain if self.kind(node_id).is_link)

    def phalanx_counts(self) -> list[int]:
        """Return the link count of every finger, in base id order."""
        return list(self._links.values())

    def finger_of(self, node_id: int) -> Optional[int]:
        """Return the base id of the finger a node belongs to, if any."""
        current: Optional[int] = node_id
        while current is not None:
            if self.kind(current).is_base:
                return current
            current = self.parent(current)
        return None

    @cached_property
    def _fully_terminal(self) -> bool:
        return all(node.kind.is_terminal for node in self._nodes.values())

    def is_fully_terminal(self) -> bool:
        """True when every node has a terminal kind."""
        return self._fully_terminal

    def root_to_leaf_paths(self) -> Iterator[list[int]]:
        """Yield every root-to-leaf path as a list of node ids."""
        root = self.root()
        leaves = [node_id for node_id, kids in self._children.items() if not kids]
        for leaf in leaves:
            if leaf == root:
                yield [root]
            else:
                yield nx.shortest_path(self._graph, root, leaf)

    def path_word(self, path: list[int]) -> str:
        """Spell a path with one symbol per node."""
        return "".join(PATH_SYMBOLS[str(self.kind(node_id))] for node_id in path)

    def check_structure(self) -> list[str]:
        """Check the star topology and the finger path grammar.

        Returns:
            Descriptions of every violation; empty if the graph is valid.
        """
        problems = []
        try:
            root = self.root()
        except ValueError as exc:
            return [str(exc)]
        if not nx.is_arborescence(self._graph):
            problems.append("graph is not a tree")
            return problems
        if self.parent(root) is not None:
            problems.append("palm is not the root")
        for node_id, node in self._nodes.items():
            if node.kind in LEAF_ONLY_KINDS and self._children[node_id]:
                problems.append(f"node {node_id} ({node.kind}) is not a leaf")
        for path in self.root_to_leaf_paths():
            word = self.path_word(path)
            if not FINGER_PATH_REGEX.fullmatch(word):
                problems.append(f"path {path} spells '{word}'")
        return problems


def serialize(graph: DesignGraph) -> str:
    """Return the byte-stable design document for a graph.

    Keys are sorted and ids ascending, so equal graphs serialize identically.
    """
    doc = {
        "version": DOCUMENT_VERSION,
        "next_id": graph.next_id,
        "nodes": [node.to_dict(node_id) for node_id, node in graph.nodes().items()],
        "edges": [list(edge) for edge in graph.edges()],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _require(doc: Mapping[str, Any], key: str, kind: type, field: str) -> Any:
    """Fetch a required key of the expected type from a document mapping."""
    if key not in doc:
        raise ParseError("missing required key", field=field)
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ParseError(f"expected {kind.__name__}", field=field)
    return value


def _parse_node(doc: Any, index: int) -> tuple[int, Node]:
    """Parse one node entry of a design document."""
    prefix = f"nodes[{index}]"
    if not isinstance(doc, dict):
        raise ParseError("expected object", field=prefix)
    node_id = _require(doc, "id", int, f"{prefix}.id")
    kind_name = _require(doc, "kind", str, f"{prefix}.kind")
    try:
        kind = NodeKind(kind_name)
    except ValueError as exc:
        raise ParseError(f"unknown kind '{kind_name}'", field=f"{prefix}.kind") from exc
    mount = stiffness = length = None
    if kind == NodeKind.BASE_T:
        mount_doc = _require(doc, "mount", dict, f"{prefix}.mount")
        side_name = _require(mount_doc, "side", str, f"{prefix}.mount.side")
        try:
            side = MountSide(side_name)
        except ValueError as exc:
            raise ParseError(
                f"unknown side '{side_name}'", field=f"{prefix}.mount.side"
            ) from exc
        mount = MountTransform(
            side,
            _require(mount_doc, "offset_m", float, f"{prefix}.mount.offset_m"),
            _require(mount_doc, "angle_deg", float, f"{prefix}.mount.angle_deg"),
        )
    elif kind == NodeKind.JOINT_T:
        stiffness = _require(
            doc, "stiffness_nm_per_rad", float, f"{prefix}.stiffness_nm_per_rad"
        )
    elif kind == NodeKind.LINK_T:
        length = _require(doc, "length_m", float, f"{prefix}.length_m")
    return node_id, Node(kind, mount, stiffness, length)


def deserialize(text: str) -> DesignGraph:
    """Read a design document.

    Args:
        text: Document text as produced by `serialize`.

    Returns:
        The graph described by the document.

    Raises:
        ParseError: with line or field diagnostics if the document is malformed.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("expected a JSON object", line=1)
    version = _require(doc, "version", int, "version")
    if version != DOCUMENT_VERSION:
        raise ParseError(f"unsupported version {version}", field="version")
    node_docs = _require(doc, "nodes", list, "nodes")
    edge_docs = _require(doc, "edges", list, "edges")

    nodes: dict[int, Node] = {}
    for index, node_doc in enumerate(node_docs):
        node_id, node = _parse_node(node_doc, index)
        if node_id in nodes:
            raise ParseError(f"duplicate id {node_id}", field=f"nodes[{index}].id")
        nodes[node_id] = node
    if not nodes:
        raise ParseError("graph has no nodes", field="nodes")

    edges = []
    for index, edge in enumerate(edge_docs):
        if (
            not isinstance(edge, list)
            or len(edge) != 2
            or not all(isinstance(end, int) for end in edge)
        ):
            raise ParseError("expected [parent, child] pair", field=f"edges[{index}]")
        if edge[0] not in nodes or edge[1] not in nodes:
            raise ParseError("edge references unknown node", field=f"edges[{index}]")
        edges.append((edge[0], edge[1]))

    next_id = doc.get("next_id", max(nodes) + 1)
    if not isinstance(next_id, int) or next_id <= max(nodes):
        raise ParseError("next_id must exceed every node id", field="next_id")
    graph = DesignGraph(nodes, edges, next_id)
    if problems := graph.check_structure():
        raise ParseError("; ".join(problems), field="edges")
    return graph
