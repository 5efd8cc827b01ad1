"""Configure pytest."""

from typing import Callable

import pytest

from graspgen.config import Config, load_config
from graspgen.graph import DesignGraph, MountSide, MountTransform, Node, NodeKind
import graspgen.utilities


def pytest_configure(config: pytest.Config) -> None:  # pylint: disable=unused-argument
    """Set flag so application code can detect if within a pytest run

    See: https://pytest.org/en/7.4.x/example/simple.html#detect-if-running-from-within-a-pytest-run
    """
    graspgen.utilities.called_from_test = True


def finger_nodes(
    first_id: int, mount: MountTransform, phalanges: list[tuple[float, float]]
) -> tuple[dict[int, Node], list[tuple[int, int]]]:
    """Build the terminal nodes and edges of one finger hanging off palm 0.

    Args:
        first_id: Id of the base node; the rest follow consecutively.
        mount: Base mount.
        phalanges: (stiffness, length) of each phalanx, base to tip.
    """
    nodes = {first_id: Node(NodeKind.BASE_T, mount=mount)}
    edges = [(0, first_id)]
    parent = first_id
    node_id = first_id + 1
    for stiffness, length in phalanges:
        nodes[node_id] = Node(NodeKind.JOINT_T, stiffness=stiffness)
        nodes[node_id + 1] = Node(NodeKind.LINK_T, length=length)
        edges += [(parent, node_id), (node_id, node_id + 1)]
        parent = node_id + 1
        node_id += 2
    return nodes, edges


FingerDescription = tuple[MountTransform, list[tuple[float, float]]]


def build_gripper(fingers: list[FingerDescription]) -> DesignGraph:
    """Assemble a terminal design graph from finger descriptions."""
    nodes = {0: Node(NodeKind.PALM_T)}
    edges: list[tuple[int, int]] = []
    next_id = 1
    for mount, phalanges in fingers:
        finger, finger_edges = finger_nodes(next_id, mount, phalanges)
        nodes.update(finger)
        edges += finger_edges
        next_id = max(nodes) + 1
    return DesignGraph(nodes, edges, next_id)


@pytest.fixture(scope="session")
def make_gripper() -> Callable[[list[FingerDescription]], DesignGraph]:
    """Builder for terminal design graphs with chosen fingers."""
    return build_gripper


@pytest.fixture
def default_config() -> Config:
    """The shipped default configuration."""
    return load_config("default")


@pytest.fixture(scope="session")
def one_finger_graph() -> DesignGraph:
    """Single centred finger with two phalanges."""
    return build_gripper(
        [(MountTransform(MountSide.TOP, 0.0, 0.0), [(0.3, 0.08), (0.3, 0.05)])]
    )


@pytest.fixture(scope="session")
def two_finger_graph() -> DesignGraph:
    """Two opposed fingers either side of the palm centre, curling inwards."""
    return build_gripper(
        [
            (MountTransform(MountSide.TOP, -0.03, 0.0), [(0.3, 0.05), (0.3, 0.05)]),
            (MountTransform(MountSide.BOTTOM, 0.03, 0.0), [(0.3, 0.05), (0.3, 0.05)]),
        ]
    )
