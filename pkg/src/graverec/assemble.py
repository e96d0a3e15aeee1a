"""Group per-page detections into one tree per grave.

Each grave gets the nearest scale, north arrow and cross-section by
bounding-box center distance (shareable across graves), plus every skeleton
and artefact contained in its box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .detect import ClassLabel, Detection
from .errors import PageMismatch

NEAREST_LABELS = (ClassLabel.SCALE, ClassLabel.ARROW, ClassLabel.GRAVE_CROSS_SECTION)
ARTEFACT_LABELS = frozenset(
    {
        ClassLabel.ARTEFACT,
        ClassLabel.GRAVE_ARTEFACT,
        ClassLabel.CERAMICS,
        ClassLabel.STONE_TOOL,
        ClassLabel.SHAFT_AXE,
    }
)

# An object counts as inside the grave when at least this fraction of its
# area overlaps the grave box and its center lies within it. Tolerates drawn
# bones slightly overhanging the pit outline without capturing neighbors.
CONTAINMENT_OVERLAP = 0.9


@dataclass
class GraveTree:
    grave: Detection
    scale: Detection | None = None
    north_arrow: Detection | None = None
    cross_section: Detection | None = None
    skeletons: list[Detection] = field(default_factory=list)
    artefacts: list[Detection] = field(default_factory=list)


def bbox_center_distance(a: Detection, b: Detection) -> float:
    """Euclidean distance between bounding-box centers, in pixels."""
    if a.page_id != b.page_id:
        raise PageMismatch(f"detections on different pages: {a.page_id} vs {b.page_id}")
    ax, ay = a.center
    bx, by = b.center
    return math.hypot(ax - bx, ay - by)


def _overlap_fraction(obj: Detection, grave: Detection) -> float:
    ox0, oy0, ox1, oy1 = obj.bbox
    gx0, gy0, gx1, gy1 = grave.bbox
    ix = max(0.0, min(ox1, gx1) - max(ox0, gx0))
    iy = max(0.0, min(oy1, gy1) - max(oy0, gy0))
    return (ix * iy) / obj.area


def contains(grave: Detection, obj: Detection) -> bool:
    """Containment rule for skeletons and artefacts."""
    cx, cy = obj.center
    gx0, gy0, gx1, gy1 = grave.bbox
    if not (gx0 <= cx <= gx1 and gy0 <= cy <= gy1):
        return False
    return _overlap_fraction(obj, grave) >= CONTAINMENT_OVERLAP


def _nearest(grave: Detection, candidates: list[tuple[int, Detection]]) -> Detection | None:
    best = None
    best_key = None
    for idx, det in candidates:
        key = (bbox_center_distance(grave, det), det.bbox[1], det.bbox[0], idx)
        if best_key is None or key < best_key:
            best, best_key = det, key
    return best


def assemble_graves(page_detections: list[Detection]) -> list[GraveTree]:
    """One tree per grave detection, sorted by (y_min, x_min) of the grave box.

    Input must be a single page's detections, already confidence-filtered.
    """
    if not page_detections:
        return []
    pages = {d.page_id for d in page_detections}
    if len(pages) > 1:
        raise PageMismatch(f"detections span multiple pages: {sorted(pages)}")

    by_label: dict[ClassLabel, list[tuple[int, Detection]]] = {}
    for idx, det in enumerate(page_detections):
        by_label.setdefault(det.label, []).append((idx, det))

    trees = []
    for _, grave in by_label.get(ClassLabel.GRAVE, []):
        tree = GraveTree(grave=grave)
        tree.scale = _nearest(grave, by_label.get(ClassLabel.SCALE, []))
        tree.north_arrow = _nearest(grave, by_label.get(ClassLabel.ARROW, []))
        tree.cross_section = _nearest(grave, by_label.get(ClassLabel.GRAVE_CROSS_SECTION, []))
        for _, det in sorted(
            by_label.get(ClassLabel.SKELETON, []), key=lambda t: (t[1].bbox[1], t[1].bbox[0], t[0])
        ):
            if contains(grave, det):
                tree.skeletons.append(det)
        artefacts = []
        for label in ARTEFACT_LABELS:
            artefacts.extend(by_label.get(label, []))
        for _, det in sorted(artefacts, key=lambda t: (t[1].bbox[1], t[1].bbox[0], t[0])):
            if contains(grave, det):
                tree.artefacts.append(det)
        trees.append(tree)

    trees.sort(key=lambda t: (t.grave.bbox[1], t.grave.bbox[0], t.grave.bbox[3], t.grave.bbox[2]))
    return trees
