"""Detection records, JSON-lines ingest and the confidence filter."""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping

from .errors import SchemaError, UnknownLabel, UnknownPage


class ClassLabel(Enum):
    TEXT = "text"
    SKELETON_PHOTO = "skeleton_photo"
    CERAMICS = "ceramics"
    ARTEFACT = "artefact"
    GRAVE_PHOTO = "grave_photo"
    MAP = "map"
    SCALE = "scale"
    ARROW = "arrow"
    GRAVE = "grave"
    SKELETON = "skeleton"
    GRAVE_ARTEFACT = "grave_artefact"
    GRAVE_CROSS_SECTION = "grave_cross_section"
    STONE_TOOL = "stone_tool"
    SHAFT_AXE = "shaft_axe"
    TABLE = "table"


# Detector naming schemes vary; these synonyms are normalized before the
# closed vocabulary is enforced.
DEFAULT_ALIASES: dict[str, str] = {
    "burial": "grave",
    "artefacts": "artefact",
    "stone artefacts": "stone_tool",
    "stone artefact": "stone_tool",
    "north arrow": "arrow",
    "grave cross section": "grave_cross_section",
    "grave artefact": "grave_artefact",
    "grave photo": "grave_photo",
    "skeleton photo": "skeleton_photo",
    "shaft axe": "shaft_axe",
}


class Origin(Enum):
    MODEL = "model"
    MANUAL = "manual"
    SYNTHETIC = "synthetic"


DEFAULT_CONFIDENCE_THRESHOLD = 0.8


@dataclass(frozen=True)
class Detection:
    id: str
    page_id: str
    label: ClassLabel
    bbox: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max
    confidence: float
    origin: Origin = Origin.MODEL

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")
        if self.origin is Origin.MANUAL and self.confidence != 1.0:
            raise ValueError("manual detections must have confidence 1")

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)


def normalize_label(raw: str, aliases: Mapping[str, str] | None = None) -> ClassLabel:
    text = str(raw).strip().lower()
    table = DEFAULT_ALIASES if aliases is None else aliases
    text = table.get(text, text)
    try:
        return ClassLabel(text)
    except ValueError:
        raise UnknownLabel(raw) from None


def parse_detections(
    stream: Iterable[str] | str,
    pages: Mapping[str, tuple[int, int]],
    aliases: Mapping[str, str] | None = None,
) -> list[Detection]:
    """Parse detection JSON lines: one object per line with keys page_id,
    label, bbox (4 numbers) and confidence. Bboxes are clamped to the page."""
    if isinstance(stream, str):
        stream = stream.splitlines()
    out: list[Detection] = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(lineno, "-", f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise SchemaError(lineno, "-", "expected a JSON object")
        for key in ("page_id", "label", "bbox", "confidence"):
            if key not in obj:
                raise SchemaError(lineno, key, "missing")
        page_id = str(obj["page_id"])
        if page_id not in pages:
            raise UnknownPage(f"line {lineno}: page {page_id!r} not registered")
        try:
            label = normalize_label(obj["label"], aliases)
        except UnknownLabel as exc:
            raise UnknownLabel(exc.label, line=lineno) from None
        bbox = obj["bbox"]
        if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
            raise SchemaError(lineno, "bbox", "expected 4 numbers")
        try:
            x0, y0, x1, y1 = (float(v) for v in bbox)
        except (TypeError, ValueError):
            raise SchemaError(lineno, "bbox", "expected 4 numbers") from None
        w, h = pages[page_id]
        x0, x1 = max(0.0, min(x0, w)), max(0.0, min(x1, float(w)))
        y0, y1 = max(0.0, min(y0, h)), max(0.0, min(y1, float(h)))
        if not (x0 < x1 and y0 < y1):
            raise SchemaError(lineno, "bbox", "empty after clamping to page bounds")
        try:
            confidence = float(obj["confidence"])
        except (TypeError, ValueError):
            raise SchemaError(lineno, "confidence", "not a number") from None
        if not 0.0 <= confidence <= 1.0:
            raise SchemaError(lineno, "confidence", f"{confidence} outside [0, 1]")
        origin = Origin(obj.get("origin", "model"))
        out.append(
            Detection(
                id=str(obj.get("id") or uuid.uuid4().hex),
                page_id=page_id,
                label=label,
                bbox=(x0, y0, x1, y1),
                confidence=confidence,
                origin=origin,
            )
        )
    return out


def serialize_detections(detections: Iterable[Detection]) -> str:
    """Inverse of parse_detections; one JSON object per line."""
    lines = []
    for d in detections:
        lines.append(
            json.dumps(
                {
                    "id": d.id,
                    "page_id": d.page_id,
                    "label": d.label.value,
                    "bbox": list(d.bbox),
                    "confidence": d.confidence,
                    "origin": d.origin.value,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def filter_by_confidence(
    detections: Iterable[Detection],
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> list[Detection]:
    """Keep detections with confidence >= threshold (strictly lower discarded)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold outside [0, 1]: {threshold}")
    return [d for d in detections if d.confidence >= threshold]


def manual_detection(page_id: str, label: ClassLabel | str, bbox, det_id: str | None = None) -> Detection:
    """A detection entered by a human reviewer (confidence pinned to 1)."""
    if not isinstance(label, ClassLabel):
        label = normalize_label(label)
    return Detection(
        id=det_id or uuid.uuid4().hex,
        page_id=page_id,
        label=label,
        bbox=tuple(float(v) for v in bbox),
        confidence=1.0,
        origin=Origin.MANUAL,
    )


def clone_with_bbox(det: Detection, bbox) -> Detection:
    return replace(det, bbox=tuple(float(v) for v in bbox))
