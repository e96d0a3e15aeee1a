"""Persistent grave records: the six-step validation state machine, duplicate
prevention, measurement recomputation, export and the baseline error metric.

Statuses name the last completed stage; a freshly created record is Detected.
Advancing applies the next step's payload. Step 5 is skipped while the record
has no north angle. Discarding is legal only before step 2 work begins.
"""

from __future__ import annotations

import csv
import io
import json
import math
import uuid
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from . import assemble, calibrate, geometry, morpho, orient
from .assemble import GraveTree
from .detect import ClassLabel, Detection, Origin, filter_by_confidence, manual_detection
from .errors import (
    DegenerateContour,
    DuplicateGraveId,
    IllegalTransition,
    NoContours,
    NoMatchedGraves,
    TooFewPoints,
    UnparseableLabel,
    ValidationPayloadError,
)
from .ingest import Document, Page, ScaleMode


class ValidationStatus(Enum):
    DETECTED = "detected"
    STEP1_ID = "step1_id"
    STEP2_BOXES = "step2_boxes"
    STEP3_CONTOURS = "step3_contours"
    STEP4_SCALE = "step4_scale"
    STEP5_NORTH = "step5_north"
    STEP6_POSE = "step6_pose"
    VALIDATED = "validated"
    DISCARDED = "discarded"


_ADVANCE_ORDER = [
    ValidationStatus.DETECTED,
    ValidationStatus.STEP1_ID,
    ValidationStatus.STEP2_BOXES,
    ValidationStatus.STEP3_CONTOURS,
    ValidationStatus.STEP4_SCALE,
    ValidationStatus.STEP5_NORTH,
    ValidationStatus.STEP6_POSE,
    ValidationStatus.VALIDATED,
]

DISCARDABLE = (ValidationStatus.DETECTED, ValidationStatus.STEP1_ID)


class Pose(Enum):
    UNKNOWN = "unknown"
    SUPINE = "supine"
    FLEXED_ON_SIDE = "flexed_on_side"


_POSE_ALIASES = {"flexed on the side": "flexed_on_side", "flexed on one side": "flexed_on_side"}


@dataclass
class SkeletonEntry:
    detection: Detection
    pose: Pose = Pose.UNKNOWN
    bearing_deg: float | None = None
    spine: orient.SpineArrow | None = None


@dataclass
class PipelineContext:
    """Everything derivation needs besides the record itself."""

    document: Document
    page: Page
    raster: np.ndarray
    page_detections: list[Detection]
    ocr: Callable | None = None
    arrow_classifier: Callable | None = None
    confidence_threshold: float = 0.8
    efd_harmonics: int = morpho.DEFAULT_HARMONICS


@dataclass
class GraveRecord:
    record_id: str
    document_id: str
    page_id: str
    page_index: int
    publication_grave_id: str | None
    status: ValidationStatus
    version: int
    tree: GraveTree
    pinned: set[str] = field(default_factory=set)
    skeletons: list[SkeletonEntry] = field(default_factory=list)
    measurements: dict = field(default_factory=dict)
    outline: np.ndarray | None = None
    manual_box: dict | None = None
    conversion: calibrate.Conversion | None = None
    north: orient.NorthArrow | None = None
    scale_label_text: str | None = None
    fixed_scale: dict | None = None
    manual_px_per_cm: float | None = None
    px: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def uses_manual_box(self) -> bool:
        return self.manual_box is not None


# -- serialization -------------------------------------------------------------

def _det_to_json(d: Detection | None):
    if d is None:
        return None
    return {
        "id": d.id,
        "page_id": d.page_id,
        "label": d.label.value,
        "bbox": list(d.bbox),
        "confidence": d.confidence,
        "origin": d.origin.value,
    }


def _det_from_json(obj) -> Detection | None:
    if obj is None:
        return None
    return Detection(
        id=obj["id"],
        page_id=obj["page_id"],
        label=ClassLabel(obj["label"]),
        bbox=tuple(obj["bbox"]),
        confidence=obj["confidence"],
        origin=Origin(obj["origin"]),
    )


def record_to_json(record: GraveRecord) -> dict:
    return {
        "record_id": record.record_id,
        "document_id": record.document_id,
        "page_id": record.page_id,
        "page_index": record.page_index,
        "publication_grave_id": record.publication_grave_id,
        "status": record.status.value,
        "version": record.version,
        "tree": {
            "grave": _det_to_json(record.tree.grave),
            "scale": _det_to_json(record.tree.scale),
            "north_arrow": _det_to_json(record.tree.north_arrow),
            "cross_section": _det_to_json(record.tree.cross_section),
            "skeletons": [_det_to_json(d) for d in record.tree.skeletons],
            "artefacts": [_det_to_json(d) for d in record.tree.artefacts],
        },
        "pinned": sorted(record.pinned),
        "skeletons": [
            {
                "detection": _det_to_json(e.detection),
                "pose": e.pose.value,
                "bearing_deg": e.bearing_deg,
                "spine": None if e.spine is None else {"start": list(e.spine.start), "end": list(e.spine.end)},
            }
            for e in record.skeletons
        ],
        "measurements": {
            "width_cm": record.measurements.get("width_cm"),
            "length_cm": record.measurements.get("length_cm"),
            "depth_cm": record.measurements.get("depth_cm"),
            "grave_bearing_deg": record.measurements.get("grave_bearing_deg"),
        },
        "outline": None if record.outline is None else [[float(x), float(y)] for x, y in record.outline],
        "manual_box": record.manual_box,
        "conversion": None
        if record.conversion is None
        else {"px_per_cm": record.conversion.px_per_cm, "source": record.conversion.source.value},
        "north": None
        if record.north is None
        else {
            "detection_id": record.north.detection_id,
            "angle_deg": record.north.angle_deg,
            "bin_deg": record.north.bin_deg,
            "source": record.north.source.value,
        },
        "scale_label_text": record.scale_label_text,
        "fixed_scale": record.fixed_scale,
        "manual_px_per_cm": record.manual_px_per_cm,
        "px": record.px,
        "flags": list(record.flags),
    }


def record_from_json(obj: dict) -> GraveRecord:
    tree = GraveTree(
        grave=_det_from_json(obj["tree"]["grave"]),
        scale=_det_from_json(obj["tree"]["scale"]),
        north_arrow=_det_from_json(obj["tree"]["north_arrow"]),
        cross_section=_det_from_json(obj["tree"]["cross_section"]),
        skeletons=[_det_from_json(d) for d in obj["tree"]["skeletons"]],
        artefacts=[_det_from_json(d) for d in obj["tree"]["artefacts"]],
    )
    skeletons = [
        SkeletonEntry(
            detection=_det_from_json(e["detection"]),
            pose=Pose(e["pose"]),
            bearing_deg=e["bearing_deg"],
            spine=None
            if e["spine"] is None
            else orient.SpineArrow(start=tuple(e["spine"]["start"]), end=tuple(e["spine"]["end"])),
        )
        for e in obj["skeletons"]
    ]
    conversion = None
    if obj["conversion"] is not None:
        conversion = calibrate.Conversion(
            px_per_cm=obj["conversion"]["px_per_cm"],
            source=calibrate.ConversionSource(obj["conversion"]["source"]),
        )
    north = None
    if obj["north"] is not None:
        north = orient.NorthArrow(
            detection_id=obj["north"]["detection_id"],
            angle_deg=obj["north"]["angle_deg"],
            bin_deg=obj["north"]["bin_deg"],
            source=orient.AngleSource(obj["north"]["source"]),
        )
    outline = None if obj["outline"] is None else np.asarray(obj["outline"], dtype=float)
    return GraveRecord(
        record_id=obj["record_id"],
        document_id=obj["document_id"],
        page_id=obj["page_id"],
        page_index=obj["page_index"],
        publication_grave_id=obj["publication_grave_id"],
        status=ValidationStatus(obj["status"]),
        version=obj["version"],
        tree=tree,
        pinned=set(obj["pinned"]),
        skeletons=skeletons,
        measurements=dict(obj["measurements"]),
        outline=outline,
        manual_box=obj["manual_box"],
        conversion=conversion,
        north=north,
        scale_label_text=obj["scale_label_text"],
        fixed_scale=obj["fixed_scale"],
        manual_px_per_cm=obj["manual_px_per_cm"],
        px=dict(obj["px"]),
        flags=list(obj["flags"]),
    )


# -- derivation ---------------------------------------------------------------

def _crop(raster: np.ndarray, bbox) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = raster.shape
    x0 = max(0, int(math.floor(bbox[0])))
    y0 = max(0, int(math.floor(bbox[1])))
    x1 = min(w, int(math.ceil(bbox[2])))
    y1 = min(h, int(math.ceil(bbox[3])))
    return raster[y0:y1, x0:x1], (x0, y0)


def _rect_to_json(rect: geometry.RotatedRect | None):
    if rect is None:
        return None
    return {
        "center": [rect.center[0], rect.center[1]],
        "width_px": rect.width_px,
        "length_px": rect.length_px,
        "angle_deg": rect.angle_deg,
    }


def _rect_from_json(obj) -> geometry.RotatedRect | None:
    if obj is None:
        return None
    return geometry.RotatedRect(
        center=tuple(obj["center"]),
        width_px=obj["width_px"],
        length_px=obj["length_px"],
        angle_deg=obj["angle_deg"],
    )


def _manual_rect(bbox) -> geometry.RotatedRect:
    """Axis-aligned manual box as a rotated rect (angle 0 or 90)."""
    x0, y0, x1, y1 = bbox
    dx, dy = x1 - x0, y1 - y0
    if dy >= dx:
        width, length, angle = dx, dy, 0.0
    else:
        width, length, angle = dy, dx, 90.0
    return geometry.RotatedRect(
        center=((x0 + x1) / 2.0, (y0 + y1) / 2.0),
        width_px=width,
        length_px=length,
        angle_deg=angle,
    )


def _reassign_children(record: GraveRecord, candidates: list[Detection]):
    grave = record.tree.grave
    by_label: dict[ClassLabel, list[tuple[int, Detection]]] = {}
    for idx, det in enumerate(candidates):
        by_label.setdefault(det.label, []).append((idx, det))

    for role, label in (
        ("scale", ClassLabel.SCALE),
        ("north_arrow", ClassLabel.ARROW),
        ("cross_section", ClassLabel.GRAVE_CROSS_SECTION),
    ):
        if role not in record.pinned:
            setattr(record.tree, role, assemble._nearest(grave, by_label.get(label, [])))

    if "skeletons" not in record.pinned:
        inside = [
            det
            for _, det in sorted(
                by_label.get(ClassLabel.SKELETON, []), key=lambda t: (t[1].bbox[1], t[1].bbox[0], t[0])
            )
            if assemble.contains(grave, det)
        ]
        record.tree.skeletons = inside
    if "artefacts" not in record.pinned:
        arts = []
        for label in assemble.ARTEFACT_LABELS:
            arts.extend(by_label.get(label, []))
        record.tree.artefacts = [
            det
            for _, det in sorted(arts, key=lambda t: (t[1].bbox[1], t[1].bbox[0], t[0]))
            if assemble.contains(grave, det)
        ]

    # merge skeleton entries; pose and spine survive box edits via detection id
    existing = {e.detection.id: e for e in record.skeletons}
    record.skeletons = [
        existing.get(det.id, SkeletonEntry(detection=det)) for det in record.tree.skeletons
    ]


def derive(record: GraveRecord, ctx: PipelineContext, spines_by_index: list | None = None):
    """Recompute every derived field from the current tree and raster.

    Pipeline failures are recorded as flags on the record, never raised.
    Deterministic: same record state and context give the same result.
    """
    record.flags = []
    candidates = filter_by_confidence(ctx.page_detections, ctx.confidence_threshold)
    _reassign_children(record, candidates)

    if spines_by_index is not None:
        if len(spines_by_index) != len(record.skeletons):
            raise ValidationPayloadError(
                f"expected {len(record.skeletons)} spine arrows, got {len(spines_by_index)}"
            )
        for entry, spine in zip(record.skeletons, spines_by_index):
            entry.spine = spine

    # grave outline and rect
    grave_rect = None
    outline_px = None
    if record.uses_manual_box:
        box = record.manual_box.get("grave")
        if box:
            grave_rect = _manual_rect(box)
    else:
        crop, offset = _crop(ctx.raster, record.tree.grave.bbox)
        contours = geometry.trace_outer_contours(geometry.binarize(crop))
        if not contours:
            record.flags.append("grave:no_contour")
        else:
            biggest = geometry.largest_contour(contours)
            try:
                rect = geometry.min_area_rect(biggest)
            except DegenerateContour:
                record.flags.append("grave:degenerate_contour")
            else:
                grave_rect = geometry.RotatedRect(
                    center=(rect.center[0] + offset[0], rect.center[1] + offset[1]),
                    width_px=rect.width_px,
                    length_px=rect.length_px,
                    angle_deg=rect.angle_deg,
                )
                outline_px = np.asarray(biggest.points, dtype=float) + np.asarray(offset, dtype=float)

    # conversion
    conversion = None
    scale_px = None
    label_text = record.scale_label_text
    if record.manual_px_per_cm:
        conversion = calibrate.make_conversion("manual", px_per_cm=record.manual_px_per_cm)
    elif record.fixed_scale:
        conversion = calibrate.make_conversion(
            "fixed_ratio",
            page_height_px=ctx.page.height_px,
            page_height_cm=record.fixed_scale["page_height_cm"],
            ratio=record.fixed_scale["ratio"],
        )
    elif ctx.document.scale_mode is ScaleMode.FIXED_RATIO:
        conversion = calibrate.make_conversion(
            "fixed_ratio",
            page_height_px=ctx.page.height_px,
            page_height_cm=ctx.document.page_height_cm,
            ratio=ctx.document.fixed_ratio,
        )
    elif record.tree.scale is not None:
        crop, _ = _crop(ctx.raster, record.tree.scale.bbox)
        try:
            scale_px = calibrate.measure_scale_pixels(crop)
        except (NoContours, DegenerateContour):
            record.flags.append("scale:no_contour")
        if label_text is None and ctx.ocr is not None:
            try:
                label_text = str(ctx.ocr(crop)).strip()
            except Exception:
                record.flags.append("scale:ocr_failed")
        if scale_px is not None and label_text:
            try:
                parsed = calibrate.parse_scale_label(label_text)
            except UnparseableLabel:
                record.flags.append("scale:unparseable_label")
            else:
                if parsed.real_length_cm is not None:
                    conversion = calibrate.make_conversion(
                        "scale_bar", pixel_length=scale_px, real_length_cm=parsed.real_length_cm
                    )
                else:
                    record.flags.append("scale:ratio_label_needs_fixed_scale")
    record.conversion = conversion
    record.scale_label_text = label_text

    # north
    if "north" not in record.pinned:
        record.north = None
        if record.tree.north_arrow is not None:
            crop, _ = _crop(ctx.raster, record.tree.north_arrow.bbox)
            classifier = None
            if ctx.arrow_classifier is not None:
                det = record.tree.north_arrow
                classifier = lambda c, _det=det: ctx.arrow_classifier(c, _det)  # noqa: E731
            try:
                record.north = orient.north_angle(
                    crop,
                    strategy="classifier" if classifier else "geometric",
                    classifier=classifier,
                    detection_id=record.tree.north_arrow.id,
                )
            except (NoContours, DegenerateContour):
                record.flags.append("north:no_contour")

    # cross-section depth
    depth_px = None
    cross_rect = None
    if record.uses_manual_box and record.manual_box.get("cross_section"):
        box = record.manual_box["cross_section"]
        depth_px = float(box[3] - box[1])
    elif record.tree.cross_section is not None:
        crop, _ = _crop(ctx.raster, record.tree.cross_section.bbox)
        contours = geometry.trace_outer_contours(geometry.binarize(crop))
        if not contours:
            record.flags.append("cross_section:no_contour")
        else:
            try:
                cross_rect = geometry.min_area_rect(geometry.largest_contour(contours))
            except DegenerateContour:
                record.flags.append("cross_section:degenerate_contour")
            else:
                # depth is the rect side most aligned with image-vertical
                if cross_rect.angle_deg < 45.0 or cross_rect.angle_deg >= 135.0:
                    depth_px = cross_rect.length_px
                else:
                    depth_px = cross_rect.width_px

    # measurements
    meas: dict = {"width_cm": None, "length_cm": None, "depth_cm": None, "grave_bearing_deg": None}
    if grave_rect is not None and conversion is not None:
        meas["width_cm"] = conversion.to_cm(grave_rect.width_px)
        meas["length_cm"] = conversion.to_cm(grave_rect.length_px)
    if depth_px is not None and conversion is not None:
        meas["depth_cm"] = conversion.to_cm(depth_px)
    if grave_rect is not None and record.north is not None:
        meas["grave_bearing_deg"] = orient.grave_bearing(grave_rect, record.north).degrees
    record.measurements = meas

    for entry in record.skeletons:
        if entry.spine is not None and record.north is not None:
            entry.bearing_deg = orient.skeleton_bearing(entry.spine, record.north).degrees
        else:
            entry.bearing_deg = None

    # normalized outline (whole-outline morphometrics input)
    record.outline = None
    if outline_px is not None and conversion is not None and grave_rect is not None:
        try:
            record.outline = morpho.normalize_outline(
                outline_px, conversion, grave_rect, source_record_id=record.record_id
            ).points
        except (DegenerateContour, TooFewPoints):
            record.flags.append("outline:degenerate")

    record.px = {
        "grave_rect": _rect_to_json(grave_rect),
        "cross_rect": _rect_to_json(cross_rect),
        "scale_pixel_length": scale_px,
        "outline_px": None if outline_px is None else [[float(x), float(y)] for x, y in outline_px],
    }


def create_record(tree: GraveTree, ctx: PipelineContext, record_id: str | None = None) -> GraveRecord:
    """New record for an assembled tree; measurements precomputed."""
    record = GraveRecord(
        record_id=record_id or uuid.uuid4().hex,
        document_id=ctx.document.id,
        page_id=ctx.page.id,
        page_index=ctx.page.index,
        publication_grave_id=None,
        status=ValidationStatus.DETECTED,
        version=1,
        tree=tree,
        skeletons=[SkeletonEntry(detection=d) for d in tree.skeletons],
    )
    derive(record, ctx)
    return record


def recompute(record: GraveRecord, ctx: PipelineContext) -> GraveRecord:
    """Re-run the automated pipeline over the record's current boxes."""
    derive(record, ctx)
    return record


# -- transitions ----------------------------------------------------------------

def _parse_spines(payload_spines) -> list[orient.SpineArrow]:
    spines = []
    for obj in payload_spines:
        try:
            spines.append(orient.SpineArrow(start=tuple(obj["start"]), end=tuple(obj["end"])))
        except (KeyError, TypeError) as exc:
            raise ValidationPayloadError(f"malformed spine arrow: {exc}") from None
    return spines


def _parse_bbox(value) -> tuple[float, float, float, float]:
    try:
        x0, y0, x1, y1 = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationPayloadError(f"malformed bbox {value!r}") from None
    if not (x0 < x1 and y0 < y1):
        raise ValidationPayloadError(f"degenerate bbox {value!r}")
    return (x0, y0, x1, y1)


def _apply_step2(record: GraveRecord, payload: dict, ctx: PipelineContext):
    boxes = payload.get("boxes") or {}
    page_id = record.page_id
    for role, label in (
        ("grave", ClassLabel.GRAVE),
        ("scale", ClassLabel.SCALE),
        ("north_arrow", ClassLabel.ARROW),
        ("cross_section", ClassLabel.GRAVE_CROSS_SECTION),
    ):
        if role not in boxes:
            continue
        value = boxes[role]
        if role == "grave":
            if value is None:
                raise ValidationPayloadError("the grave box cannot be removed; discard at step 1")
            record.tree.grave = manual_detection(page_id, label, _parse_bbox(value), det_id=record.tree.grave.id)
        else:
            record.pinned.add(role)
            setattr(
                record.tree,
                role,
                None if value is None else manual_detection(page_id, label, _parse_bbox(value)),
            )
    if "skeletons" in boxes:
        record.pinned.add("skeletons")
        record.tree.skeletons = [
            manual_detection(page_id, ClassLabel.SKELETON, _parse_bbox(b)) for b in boxes["skeletons"]
        ]
        record.skeletons = [SkeletonEntry(detection=d) for d in record.tree.skeletons]
    if "artefacts" in boxes:
        record.pinned.add("artefacts")
        record.tree.artefacts = [
            manual_detection(page_id, ClassLabel.ARTEFACT, _parse_bbox(b)) for b in boxes["artefacts"]
        ]

    spines = _parse_spines(payload.get("spines", []))
    # children may change when boxes moved, so derive first without spines,
    # then check the count against the final skeleton list
    derive(record, ctx)
    if len(spines) != len(record.skeletons):
        raise ValidationPayloadError(
            f"a spine arrow is required for each of the {len(record.skeletons)} skeletons,"
            f" got {len(spines)}"
        )
    if spines:
        derive(record, ctx, spines_by_index=spines)


def _apply_step3(record: GraveRecord, payload: dict, ctx: PipelineContext):
    if payload.get("accept_outline"):
        if record.px.get("outline_px") is None:
            raise ValidationPayloadError("no detected outline to accept; provide manual_box")
        return
    manual = payload.get("manual_box")
    if not manual or "grave" not in manual:
        raise ValidationPayloadError("step 3 needs accept_outline or a manual_box with a grave box")
    record.manual_box = {"grave": list(_parse_bbox(manual["grave"]))}
    if manual.get("cross_section"):
        record.manual_box["cross_section"] = list(_parse_bbox(manual["cross_section"]))
    derive(record, ctx)


def _apply_step4(record: GraveRecord, payload: dict, ctx: PipelineContext):
    if "scale_text" in payload:
        text = str(payload["scale_text"]).strip()
        if not text:
            raise ValidationPayloadError("scale_text is empty")
        try:
            calibrate.parse_scale_label(text)
        except UnparseableLabel:
            raise ValidationPayloadError(f"cannot parse scale text {text!r}") from None
        record.scale_label_text = text
    elif "fixed_scale" in payload:
        fs = payload["fixed_scale"]
        try:
            page_height_cm = float(fs["page_height_cm"])
            ratio = float(fs["ratio"])
        except (KeyError, TypeError, ValueError):
            raise ValidationPayloadError("fixed_scale needs page_height_cm and ratio") from None
        if page_height_cm <= 0 or ratio <= 0:
            raise ValidationPayloadError("fixed_scale values must be positive")
        record.fixed_scale = {"page_height_cm": page_height_cm, "ratio": ratio}
    elif "px_per_cm" in payload:
        value = float(payload["px_per_cm"])
        if value <= 0:
            raise ValidationPayloadError("px_per_cm must be positive")
        record.manual_px_per_cm = value
    derive(record, ctx)


def _apply_step5(record: GraveRecord, payload: dict, ctx: PipelineContext):
    if "angle_deg" in payload and payload["angle_deg"] is not None:
        angle = float(payload["angle_deg"])
        det_id = record.tree.north_arrow.id if record.tree.north_arrow else None
        record.north = orient.make_north(angle, orient.AngleSource.MANUAL, det_id)
        record.pinned.add("north")
        derive(record, ctx)


def _apply_step6(record: GraveRecord, payload: dict):
    poses = payload.get("poses")
    if poses is None or len(poses) != len(record.skeletons):
        raise ValidationPayloadError(
            f"step 6 needs a pose for each of the {len(record.skeletons)} skeletons"
        )
    parsed = []
    for raw in poses:
        name = _POSE_ALIASES.get(str(raw).strip().lower(), str(raw).strip().lower())
        try:
            parsed.append(Pose(name))
        except ValueError:
            raise ValidationPayloadError(f"unknown pose {raw!r}") from None
    for entry, pose in zip(record.skeletons, parsed):
        entry.pose = pose


def _step5_skipped(record: GraveRecord) -> bool:
    return record.north is None


def transition(
    record: GraveRecord,
    action: str,
    payload: dict | None,
    ctx: PipelineContext,
    taken_grave_ids: set[str] | None = None,
) -> GraveRecord:
    """Apply one wizard action. The caller persists the result with an
    optimistic version check; this function only mutates the in-memory record."""
    payload = payload or {}
    status = record.status

    if action == "discard":
        if status not in DISCARDABLE:
            raise IllegalTransition(f"cannot discard from {status.value}")
        record.status = ValidationStatus.DISCARDED
        return record

    if action == "back":
        if status in (
            ValidationStatus.DETECTED,
            ValidationStatus.VALIDATED,
            ValidationStatus.DISCARDED,
        ):
            raise IllegalTransition(f"cannot go back from {status.value}")
        if status is ValidationStatus.STEP6_POSE and _step5_skipped(record):
            record.status = ValidationStatus.STEP4_SCALE
        else:
            record.status = _ADVANCE_ORDER[_ADVANCE_ORDER.index(status) - 1]
        return record

    if action != "advance":
        raise IllegalTransition(f"unknown action {action!r}")

    if status is ValidationStatus.DETECTED:
        grave_id = str(payload.get("publication_grave_id") or "").strip()
        if not grave_id:
            raise ValidationPayloadError("step 1 needs a publication_grave_id")
        if taken_grave_ids and grave_id in taken_grave_ids:
            raise DuplicateGraveId(grave_id)
        record.publication_grave_id = grave_id
        record.status = ValidationStatus.STEP1_ID
    elif status is ValidationStatus.STEP1_ID:
        _apply_step2(record, payload, ctx)
        record.status = ValidationStatus.STEP2_BOXES
    elif status is ValidationStatus.STEP2_BOXES:
        _apply_step3(record, payload, ctx)
        record.status = ValidationStatus.STEP3_CONTOURS
    elif status is ValidationStatus.STEP3_CONTOURS:
        _apply_step4(record, payload, ctx)
        record.status = ValidationStatus.STEP4_SCALE
    elif status is ValidationStatus.STEP4_SCALE:
        if _step5_skipped(record):
            _apply_step6(record, payload)
            record.status = ValidationStatus.STEP6_POSE
        else:
            _apply_step5(record, payload, ctx)
            record.status = ValidationStatus.STEP5_NORTH
    elif status is ValidationStatus.STEP5_NORTH:
        _apply_step6(record, payload)
        record.status = ValidationStatus.STEP6_POSE
    elif status is ValidationStatus.STEP6_POSE:
        record.status = ValidationStatus.VALIDATED
    else:
        raise IllegalTransition(f"cannot advance from {status.value}")
    return record


# -- export ---------------------------------------------------------------------

CSV_FIXED_COLUMNS = [
    "document_id",
    "grave_id",
    "page",
    "width_cm",
    "length_cm",
    "depth_cm",
    "grave_bearing_deg",
    "n_skeletons",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_from_records(records: list[GraveRecord], include_all: bool = False) -> list[dict]:
    rows = []
    for record in records:
        if record.status is ValidationStatus.DISCARDED:
            continue
        if not include_all and record.status is not ValidationStatus.VALIDATED:
            continue
        rows.append(
            {
                "document_id": record.document_id,
                "grave_id": record.publication_grave_id or "",
                "page": record.page_index,
                "width_cm": record.measurements.get("width_cm"),
                "length_cm": record.measurements.get("length_cm"),
                "depth_cm": record.measurements.get("depth_cm"),
                "grave_bearing_deg": record.measurements.get("grave_bearing_deg"),
                "skeletons": [
                    {"pose": e.pose.value, "bearing_deg": e.bearing_deg} for e in record.skeletons
                ],
            }
        )
    rows.sort(key=lambda r: (r["document_id"], r["page"], r["grave_id"]))
    return rows


def csv_from_rows(rows: list[dict]) -> str:
    max_skeletons = max((len(r["skeletons"]) for r in rows), default=0)
    header = list(CSV_FIXED_COLUMNS)
    for i in range(1, max_skeletons + 1):
        header += [f"pose_{i}", f"skeleton_bearing_{i}_deg"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        row = [
            r["document_id"],
            r["grave_id"],
            str(r["page"]),
            _fmt(r["width_cm"]),
            _fmt(r["length_cm"]),
            _fmt(r["depth_cm"]),
            _fmt(r["grave_bearing_deg"]),
            str(len(r["skeletons"])),
        ]
        for i in range(max_skeletons):
            if i < len(r["skeletons"]):
                entry = r["skeletons"][i]
                row += [entry["pose"], _fmt(entry["bearing_deg"])]
            else:
                row += ["", ""]
        writer.writerow(row)
    return buf.getvalue()


def export_csv(records: list[GraveRecord], include_all: bool = False) -> str:
    return csv_from_rows(rows_from_records(records, include_all))


def parse_export_csv(text: str) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    n_skel_cols = (len(header) - len(CSV_FIXED_COLUMNS)) // 2
    rows = []
    for raw in reader:
        def _num(value):
            return float(value) if value != "" else None

        skeletons = []
        for i in range(n_skel_cols):
            pose = raw[len(CSV_FIXED_COLUMNS) + 2 * i]
            bearing = raw[len(CSV_FIXED_COLUMNS) + 2 * i + 1]
            if pose == "" and bearing == "":
                continue
            skeletons.append({"pose": pose, "bearing_deg": _num(bearing)})
        rows.append(
            {
                "document_id": raw[0],
                "grave_id": raw[1],
                "page": int(raw[2]),
                "width_cm": _num(raw[3]),
                "length_cm": _num(raw[4]),
                "depth_cm": _num(raw[5]),
                "grave_bearing_deg": _num(raw[6]),
                "skeletons": skeletons,
            }
        )
    return rows


def export_json(records: list[GraveRecord], include_all: bool = False) -> str:
    selected = [
        r
        for r in records
        if r.status is not ValidationStatus.DISCARDED
        and (include_all or r.status is ValidationStatus.VALIDATED)
    ]
    selected.sort(key=lambda r: (r.page_index, r.publication_grave_id or "", r.record_id))
    payload = {"records": [record_to_json(r) for r in selected]}
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def parse_export_json(text: str) -> list[GraveRecord]:
    payload = json.loads(text)
    return [record_from_json(obj) for obj in payload["records"]]


# -- baseline comparison ----------------------------------------------------------

def _circular_pct(c: float, b: float, period: float) -> float:
    delta = abs(c - b) % period
    return min(delta, period - delta) / period * 100.0


def compare_to_baseline(candidate: list[dict] | str, baseline: list[dict] | str) -> dict:
    """Percentage deviation of candidate vs baseline, matched by grave id.

    Linear attributes use |c - b| / |b| * 100; bearings use the circular
    difference over their period. Attributes missing on either side are
    skipped. Per-grave errors are summed; the mean is over matched graves.
    """
    if isinstance(candidate, str):
        candidate = parse_export_csv(candidate)
    if isinstance(baseline, str):
        baseline = parse_export_csv(baseline)
    cand = {(r["document_id"], r["grave_id"]): r for r in candidate if r["grave_id"]}
    base = {(r["document_id"], r["grave_id"]): r for r in baseline if r["grave_id"]}
    matched = sorted(set(cand) & set(base))
    if not matched:
        raise NoMatchedGraves("no grave ids in common")

    per_grave: dict[str, float] = {}
    for key in matched:
        c, b = cand[key], base[key]
        total = 0.0
        for attr in ("width_cm", "length_cm", "depth_cm"):
            if c[attr] is not None and b[attr] is not None and b[attr] != 0:
                total += abs(c[attr] - b[attr]) / abs(b[attr]) * 100.0
        if c["grave_bearing_deg"] is not None and b["grave_bearing_deg"] is not None:
            total += _circular_pct(c["grave_bearing_deg"], b["grave_bearing_deg"], 180.0)
        for cs, bs in zip(c["skeletons"], b["skeletons"]):
            if cs["bearing_deg"] is not None and bs["bearing_deg"] is not None:
                total += _circular_pct(cs["bearing_deg"], bs["bearing_deg"], 360.0)
        per_grave[key[1]] = total

    mean = sum(per_grave.values()) / len(per_grave)
    return {
        "per_grave_error_pct": per_grave,
        "mean_error_pct": mean,
        "n_compared": len(per_grave),
    }
