"""North-arrow angles, spine-arrow bearings, grave-axis bearings and rose binning.

One angle convention throughout: degrees clockwise from image-up in y-down
pixel coordinates. Compass bearings subtract the north-arrow angle, so 0 means
the drawn north, 90 means east of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import geometry
from .errors import AdapterFailure, InvalidSector, NoContours, ZeroVector


class AngleSource(Enum):
    CLASSIFIER = "classifier"
    GEOMETRIC = "geometric"
    MANUAL = "manual"


class BearingKind(Enum):
    SKELETON = "skeleton"       # directed, [0, 360)
    GRAVE_AXIS = "grave_axis"   # undirected, [0, 180)


@dataclass(frozen=True)
class NorthArrow:
    detection_id: str | None
    angle_deg: float
    bin_deg: int
    source: AngleSource

    def __post_init__(self):
        if not 0.0 <= self.angle_deg < 360.0:
            raise ValueError(f"angle_deg out of range: {self.angle_deg}")
        expected = int(round(self.angle_deg / 10.0) * 10) % 360
        if self.bin_deg != expected:
            raise ValueError(f"bin_deg {self.bin_deg} does not match angle {self.angle_deg}")


@dataclass(frozen=True)
class SpineArrow:
    """Directed segment from pelvis to skull, image pixels."""

    start: tuple[float, float]
    end: tuple[float, float]

    def __post_init__(self):
        if tuple(self.start) == tuple(self.end):
            raise ZeroVector("spine arrow start equals end")


@dataclass(frozen=True)
class Bearing:
    degrees: float
    kind: BearingKind

    def __post_init__(self):
        limit = 360.0 if self.kind is BearingKind.SKELETON else 180.0
        if not 0.0 <= self.degrees < limit:
            raise ValueError(f"{self.kind.value} bearing out of range: {self.degrees}")


def make_north(angle_deg: float, source: AngleSource, detection_id: str | None = None) -> NorthArrow:
    angle = angle_deg % 360.0
    return NorthArrow(
        detection_id=detection_id,
        angle_deg=angle,
        bin_deg=int(round(angle / 10.0) * 10) % 360,
        source=source,
    )


def image_angle(dx: float, dy: float) -> float:
    """Image angle of a vector: degrees clockwise from image-up, in [0, 360)."""
    if dx == 0 and dy == 0:
        raise ZeroVector("cannot take the angle of a zero vector")
    ang = math.degrees(math.atan2(dx, -dy))
    if ang < 0:
        ang += 360.0
    return ang % 360.0


def north_angle(
    crop: np.ndarray,
    strategy: str = "geometric",
    classifier=None,
    detection_id: str | None = None,
) -> NorthArrow:
    """Angle of an arrow glyph in a crop.

    The classifier strategy delegates to an adapter returning one of 36
    ten-degree bins and falls back to the geometric strategy on failure.
    The geometric strategy takes the principal axis of the largest contour
    and points it at the half carrying more border-pixel mass (the head),
    snapping to the nearest bin for comparability with the classifier.
    """
    if strategy == "classifier":
        if classifier is None:
            raise AdapterFailure("classifier strategy requires an adapter")
        try:
            bin_idx = int(classifier(crop))
            if not 0 <= bin_idx <= 35:
                raise AdapterFailure(f"classifier returned bin {bin_idx}")
            return make_north(bin_idx * 10.0, AngleSource.CLASSIFIER, detection_id)
        except AdapterFailure:
            pass  # degrade to geometry
    elif strategy != "geometric":
        raise ValueError(f"unknown strategy {strategy!r}")

    contours = geometry.trace_outer_contours(geometry.binarize(crop))
    if not contours:
        raise NoContours("arrow crop is blank")
    glyph = geometry.largest_contour(contours)
    rect = geometry.min_area_rect(glyph)

    axis = rect.angle_deg
    rad = math.radians(axis)
    u = np.array([math.sin(rad), -math.cos(rad)])
    pixels = np.asarray(geometry.contour_pixels(glyph), dtype=float)
    proj = (pixels - np.asarray(rect.center)) @ u
    if np.sum(proj > 0) >= np.sum(proj < 0):
        angle = axis
    else:
        angle = (axis + 180.0) % 360.0
    snapped = (round(angle / 10.0) * 10.0) % 360.0
    return make_north(snapped, AngleSource.GEOMETRIC, detection_id)


def skeleton_bearing(spine: SpineArrow, north: NorthArrow) -> Bearing:
    """Compass direction the skull points: 0 = drawn north, clockwise."""
    dx = spine.end[0] - spine.start[0]
    dy = spine.end[1] - spine.start[1]
    deg = (image_angle(dx, dy) - north.angle_deg) % 360.0
    return Bearing(degrees=deg, kind=BearingKind.SKELETON)


def grave_bearing(rect: geometry.RotatedRect, north: NorthArrow) -> Bearing:
    """Undirected compass orientation of the pit's long axis."""
    deg = (rect.angle_deg - north.angle_deg) % 180.0
    return Bearing(degrees=deg, kind=BearingKind.GRAVE_AXIS)


def rose_histogram(bearings, sector_deg: int = 10) -> list[int]:
    """Counts per sector [k*s, (k+1)*s) over the full circle."""
    if sector_deg <= 0 or 360 % sector_deg != 0:
        raise InvalidSector(f"{sector_deg} does not divide 360")
    counts = [0] * (360 // sector_deg)
    for b in bearings:
        if isinstance(b, Bearing):
            if b.kind is not BearingKind.SKELETON:
                raise ValueError("rose_histogram expects skeleton bearings")
            deg = b.degrees
        else:
            deg = float(b) % 360.0
        counts[int(deg // sector_deg)] += 1
    return counts
