"""Draw simulation frames as SVG documents."""

import csv
from dataclasses import dataclass, replace
import logging
from pathlib import Path
from typing import Sequence
import xml.etree.ElementTree as ET

import numpy as np

from graspgen.geometry import rectangle
from graspgen.mechanism import MechanismSpec
from graspgen.sim import ShapeKind, SimObject, SimTrace, Snapshot, forward_kinematics
from graspgen.utilities import fmt_float

logger = logging.getLogger(__package__)

SVG_NAMESPACE = "http://www.w3.org/2000/svg"
XML_DECLARATION = '<?xml version="1.0" encoding="UTF-8"?>\n'
BOTTOM_MARGIN_PX = 40
FRAME_NAME = "frame_{:04d}.svg"
FORCES_CSV_COLUMNS = ("t", "sum_normal_force")

PALM_FILL = "#777777"
PHALANX_STROKE = "#3465a4"
JOINT_FILL = "#204a87"
OBJECT_FILL = "#f5c242"
CONTACT_FILL = "#cc0000"
FORCE_STROKE = "#cc0000"


@dataclass(frozen=True)
class RenderSettings:
    """Frame size and scales.

    Attributes:
        scale: Pixels per metre.
        width: Frame width, px.
        height: Frame height, px.
        force_scale: Length of drawn force arrows, m per N.
        frame_interval: Simulated time between frames, s.
    """

    scale: float = 2000.0
    width: int = 400
    height: int = 400
    force_scale: float = 0.005
    frame_interval: float = 0.1


class _Canvas:
    """Maps world coordinates (y up, palm at the origin) to pixels."""

    def __init__(self, settings: RenderSettings) -> None:
        self.settings = settings
        self.root = ET.Element(
            "svg",
            {
                "xmlns": SVG_NAMESPACE,
                "width": str(settings.width),
                "height": str(settings.height),
                "viewBox": f"0 0 {settings.width} {settings.height}",
            },
        )
        ET.SubElement(
            self.root,
            "rect",
            {"width": "100%", "height": "100%", "fill": "white"},
        )

    def px(self, point: Sequence[float]) -> tuple[str, str]:
        """Pixel coordinates of a world point, formatted."""
        s = self.settings
        x = s.width / 2 + point[0] * s.scale
        y = s.height - BOTTOM_MARGIN_PX - point[1] * s.scale
        return f"{x:.2f}", f"{y:.2f}"

    def length(self, metres: float) -> str:
        """Pixel length of a world distance, formatted."""
        return f"{metres * self.settings.scale:.2f}"

    def polygon(self, vertices: np.ndarray, fill: str) -> None:
        """Draw a closed polygon."""
        points = " ".join(",".join(self.px(vertex)) for vertex in vertices)
        ET.SubElement(self.root, "polygon", {"points": points, "fill": fill})

    def circle(self, center: Sequence[float], radius: float, fill: str) -> None:
        """Draw a filled circle of a world radius."""
        cx, cy = self.px(center)
        attributes = {"cx": cx, "cy": cy, "r": self.length(radius), "fill": fill}
        ET.SubElement(self.root, "circle", attributes)

    def line(
        self, start: Sequence[float], end: Sequence[float], stroke: str, width: str
    ) -> None:
        """Draw a round-capped line; `width` in pixels."""
        x1, y1 = self.px(start)
        x2, y2 = self.px(end)
        ET.SubElement(
            self.root,
            "line",
            {
                "x1": x1,
                "y1": y1,
                "x2": x2,
                "y2": y2,
                "stroke": stroke,
                "stroke-width": width,
                "stroke-linecap": "round",
            },
        )

    def text(self, label: str) -> None:
        """Write a caption in the top-left corner."""
        attributes = {"x": "8", "y": "18", "font-size": "14", "fill": "black"}
        element = ET.SubElement(self.root, "text", attributes)
        element.text = label

    def document(self) -> str:
        """Serialized SVG document."""
        return XML_DECLARATION + ET.tostring(self.root, encoding="unicode") + "\n"


def render_frame(
    spec: MechanismSpec,
    snapshot: Snapshot,
    obj: SimObject,
    settings: RenderSettings,
) -> str:
    """Draw the gripper, the object and its contacts at one instant.

    Returns:
        SVG document text.
    """
    canvas = _Canvas(settings)
    canvas.polygon(rectangle(spec.palm.width, spec.palm.thickness), PALM_FILL)

    shape = obj.shape_at(snapshot.object_pose)
    if obj.shape == ShapeKind.DISC:
        canvas.circle(shape.vertices[0], obj.radius, OBJECT_FILL)
    else:
        canvas.polygon(shape.vertices, OBJECT_FILL)

    for finger, segments in zip(spec.fingers, forward_kinematics(spec, snapshot.q)):
        for phalanx, (start, end) in zip(finger.phalanges, segments):
            canvas.line(start, end, PHALANX_STROKE, canvas.length(phalanx.thickness))
            canvas.circle(start, phalanx.thickness / 4, JOINT_FILL)

    for contact in snapshot.contacts:
        canvas.circle(contact.point, 0.002, CONTACT_FILL)
        tip = (
            contact.point[0] + contact.force[0] * settings.force_scale,
            contact.point[1] + contact.force[1] * settings.force_scale,
        )
        canvas.line(contact.point, tip, FORCE_STROKE, "1.5")

    canvas.text(f"t = {snapshot.t:.3f} s")
    return canvas.document()


def frame_snapshots(trace: SimTrace, interval: float) -> list[Snapshot]:
    """Pick the latest snapshot at or before each multiple of `interval`.

    Frames run until the end of the trace; past the last recorded sample
    (a run that settled without contact) the final state is repeated at the
    frame time. The last snapshot is always included.
    """
    snapshots = list(trace.snapshots)
    if not snapshots:
        return []
    chosen: list[Snapshot] = []
    index = 0
    end = max(snapshots[-1].t, trace.events.t_final)
    frame_count = int(end / interval + 1e-9) + 1
    for frame in range(frame_count):
        target = frame * interval
        while index + 1 < len(snapshots) and snapshots[index + 1].t <= target + 1e-12:
            index += 1
        snapshot = snapshots[index]
        if index == len(snapshots) - 1 and target > snapshot.t:
            snapshot = replace(snapshot, t=target)
        if not chosen or chosen[-1].t != snapshot.t:
            chosen.append(snapshot)
    if chosen[-1].t < snapshots[-1].t:
        chosen.append(snapshots[-1])
    return chosen


def render_sequence(
    trace: SimTrace,
    spec: MechanismSpec,
    obj: SimObject,
    out_dir: str | Path,
    settings: RenderSettings,
) -> list[Path]:
    """Write numbered SVG frames of a run at the configured interval.

    Returns:
        Paths of the frames written, in time order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for number, snapshot in enumerate(
        frame_snapshots(trace, settings.frame_interval), start=1
    ):
        path = out_dir / FRAME_NAME.format(number)
        path.write_text(render_frame(spec, snapshot, obj, settings), encoding="utf-8")
        paths.append(path)
    logger.info(f"{len(paths)} frames written to {out_dir}")
    return paths


def write_forces_csv(trace: SimTrace, path: str | Path) -> None:
    """Write total normal force on the object against time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(FORCES_CSV_COLUMNS)
        for snap in trace.snapshots:
            writer.writerow([fmt_float(snap.t), fmt_float(snap.sum_normal_force)])
