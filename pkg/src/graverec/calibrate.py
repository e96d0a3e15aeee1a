"""Pixels-per-centimeter conversion from scale bars or fixed drawing ratios."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import geometry
from .errors import DegenerateContour, NoContours, NonPositiveInput, UnparseableLabel


class ConversionSource(Enum):
    SCALE_BAR = "scale_bar"
    FIXED_RATIO = "fixed_ratio"
    MANUAL = "manual"


@dataclass(frozen=True)
class ScaleBar:
    detection_id: str | None
    pixel_length: float
    label_text: str
    real_length_cm: float

    @property
    def px_per_cm(self) -> float:
        return self.pixel_length / self.real_length_cm


@dataclass(frozen=True)
class Conversion:
    px_per_cm: float
    source: ConversionSource

    def __post_init__(self):
        if not self.px_per_cm > 0:
            raise NonPositiveInput(f"px_per_cm must be positive, got {self.px_per_cm}")

    def to_cm(self, pixels: float) -> float:
        return pixels / self.px_per_cm


# Fraction of the crop span below which the largest contour is assumed to be
# one tick of a segmented bar and the union extent is used instead.
SEGMENTED_BAR_COVERAGE = 0.6


def measure_scale_pixels(crop: np.ndarray) -> float:
    """Pixel length of the scale bar in a crop (long side of its min-area rect).

    Bars drawn as disjoint tick segments are measured by the union extent of
    all contours along their common principal axis.
    """
    contours = geometry.trace_outer_contours(geometry.binarize(crop))
    if not contours:
        raise NoContours("scale crop is blank")
    biggest = geometry.largest_contour(contours)
    try:
        rect = geometry.min_area_rect(biggest)
        length = rect.length_px
    except DegenerateContour:
        length = 0.0

    span = float(max(crop.shape[0], crop.shape[1]))
    if length < SEGMENTED_BAR_COVERAGE * span and len(contours) > 1:
        union = np.concatenate([np.asarray(c.points, dtype=float) for c in contours])
        length = geometry.min_area_rect(union).length_px
    if length <= 0:
        raise DegenerateContour("scale bar has no measurable extent")
    return float(length)


@dataclass(frozen=True)
class ParsedScaleLabel:
    """Either a real-world length in centimeters or a map ratio (1:n -> n)."""

    real_length_cm: float | None = None
    ratio: float | None = None


_NUM = r"\d+(?:[.,]\d+)?"
_RATIO_RE = re.compile(r"^\s*1\s*:\s*(%s)\s*$" % _NUM)
_LENGTH_RE = re.compile(
    r"^\s*(%s)\s*(?:[-–—]\s*(%s)\s*)?(mm|cm|m)\s*\.?\s*$" % (_NUM, _NUM),
    re.IGNORECASE,
)
_UNIT_CM = {"mm": 0.1, "cm": 1.0, "m": 100.0}


def _to_float(token: str) -> float:
    return float(token.replace(",", "."))


def parse_scale_label(text: str) -> ParsedScaleLabel:
    """Parse scale-bar label text: "<number> <unit>", a range like "0-1 m"
    (total span) or a ratio "1:<n>"."""
    if text is None:
        raise UnparseableLabel("")
    m = _RATIO_RE.match(text)
    if m:
        ratio = _to_float(m.group(1))
        if ratio <= 0:
            raise UnparseableLabel(text)
        return ParsedScaleLabel(ratio=ratio)
    m = _LENGTH_RE.match(text)
    if m:
        a = _to_float(m.group(1))
        b = _to_float(m.group(2)) if m.group(2) else None
        unit = _UNIT_CM[m.group(3).lower()]
        span = abs(b - a) if b is not None else a
        cm = span * unit
        if cm <= 0:
            raise UnparseableLabel(text)
        return ParsedScaleLabel(real_length_cm=cm)
    raise UnparseableLabel(text)


def make_conversion(
    mode: str | ConversionSource,
    *,
    pixel_length: float | None = None,
    real_length_cm: float | None = None,
    page_height_px: float | None = None,
    page_height_cm: float | None = None,
    ratio: float | None = None,
    px_per_cm: float | None = None,
) -> Conversion:
    """Build a Conversion.

    scale_bar mode: px_per_cm = pixel_length / real_length_cm.
    fixed_ratio mode: px_per_cm = page_height_px / (page_height_cm * ratio).
    manual mode: px_per_cm given directly.
    """
    source = ConversionSource(mode) if not isinstance(mode, ConversionSource) else mode
    if source is ConversionSource.SCALE_BAR:
        if pixel_length is None or real_length_cm is None:
            raise NonPositiveInput("scale_bar mode needs pixel_length and real_length_cm")
        if pixel_length <= 0 or real_length_cm <= 0:
            raise NonPositiveInput("pixel_length and real_length_cm must be positive")
        return Conversion(px_per_cm=pixel_length / real_length_cm, source=source)
    if source is ConversionSource.FIXED_RATIO:
        if page_height_px is None or page_height_cm is None or ratio is None:
            raise NonPositiveInput("fixed_ratio mode needs page_height_px, page_height_cm, ratio")
        if page_height_px <= 0 or page_height_cm <= 0 or ratio <= 0:
            raise NonPositiveInput("fixed_ratio inputs must be positive")
        return Conversion(px_per_cm=page_height_px / (page_height_cm * ratio), source=source)
    if px_per_cm is None or px_per_cm <= 0:
        raise NonPositiveInput("manual mode needs positive px_per_cm")
    return Conversion(px_per_cm=px_per_cm, source=source)
