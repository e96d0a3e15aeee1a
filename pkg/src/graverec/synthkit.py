"""Deterministic synthetic catalogue pages with ground truth.

Stands in for trained detectors and copyrighted catalogues: each page carries
drawn grave pits, scale bars, north arrows, cross-sections and skeleton
glyphs, plus exact detections and the true measurements they encode.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import geometry, records
from .calibrate import parse_scale_label
from .errors import InvalidParams, NoMatchedGraves, QueueEmpty
from .orient import image_angle

INK = 15
PAPER = 255


@dataclass(frozen=True)
class NoiseParams:
    speckle_density: float = 0.0      # fraction of page pixels flipped to ink
    drop_probability: float = 0.0     # chance to drop a support detection
    bbox_jitter_px: float = 0.0       # uniform perturbation of emitted boxes


@dataclass(frozen=True)
class SynthParams:
    page_width_px: int = 1200
    page_height_px: int = 1700
    graves_per_page: tuple[int, int] = (1, 4)
    grave_length_cm: tuple[float, float] = (80.0, 240.0)
    aspect_ratio: tuple[float, float] = (1.4, 2.4)
    px_per_cm: tuple[float, float] = (1.6, 2.4)
    north_jitter_deg: float = 0.0     # offset added to the 10-degree base bins
    scale_labels: tuple[str, ...] = ("1 m", "2 m", "150 cm")
    max_skeletons: int = 2
    outline_jitter: float = 0.02      # radial irregularity of pit outlines
    segmented_scale_bars: bool = False
    noise: NoiseParams = field(default_factory=NoiseParams)

    def check(self):
        if self.graves_per_page[0] < 1 or self.graves_per_page[1] < self.graves_per_page[0]:
            raise InvalidParams("graves_per_page must be an increasing range from >= 1")
        if self.grave_length_cm[0] <= 0:
            raise InvalidParams("grave sizes must be positive")
        if self.px_per_cm[0] <= 0:
            raise InvalidParams("px_per_cm must be positive")
        if not 0 <= self.noise.speckle_density < 0.05:
            raise InvalidParams("speckle_density outside [0, 0.05)")
        if self.max_skeletons < 0:
            raise InvalidParams("max_skeletons must be >= 0")


def _direction(angle_deg: float) -> np.ndarray:
    rad = math.radians(angle_deg)
    return np.array([math.sin(rad), -math.cos(rad)])


def _superellipse(width: float, length: float, rng, jitter: float, n_points: int = 64) -> np.ndarray:
    """Rounded, slightly irregular quadrilateral centered at the origin,
    long axis vertical."""
    theta = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    exponent = 0.35  # rounded-rectangle corner softness
    x = (width / 2.0) * np.sign(np.cos(theta)) * np.abs(np.cos(theta)) ** exponent
    y = (length / 2.0) * np.sign(np.sin(theta)) * np.abs(np.sin(theta)) ** exponent
    if jitter > 0:
        a1, a2 = rng.uniform(0, jitter, 2)
        p1, p2 = rng.uniform(0, 2 * np.pi, 2)
        factor = 1.0 + a1 * np.sin(2 * theta + p1) + a2 * np.sin(3 * theta + p2)
        x, y = x * factor, y * factor
    return np.column_stack([x, y])


def _bbox_of(points: np.ndarray, margin: float = 3.0) -> list[float]:
    return [
        float(points[:, 0].min() - margin),
        float(points[:, 1].min() - margin),
        float(points[:, 0].max() + margin),
        float(points[:, 1].max() + margin),
    ]


def _draw_arrow(draw: ImageDraw.ImageDraw, center: np.ndarray, angle_deg: float, size: float) -> np.ndarray:
    """Arrow glyph pointing along angle_deg; returns its stroke points."""
    u = _direction(angle_deg)
    perp = np.array([-u[1], u[0]])
    tail = center - u * size / 2.0
    tip = center + u * size / 2.0
    head_len = size * 0.32
    head_w = size * 0.16
    base = tip - u * head_len
    left = base + perp * head_w
    right = base - perp * head_w
    draw.line([tuple(tail), tuple(base)], fill=INK, width=3)
    draw.polygon([tuple(tip), tuple(left), tuple(right)], fill=INK)
    return np.array([tail, tip, left, right])


def _draw_skeleton(draw, anchor, axis_deg, glyph_len_px, pit_w_px, rng, pose: str):
    """White glyph inside the dark pit; returns (stroke points, spine)."""
    u = _direction(axis_deg if rng.random() < 0.5 else axis_deg + 180.0)
    perp = np.array([-u[1], u[0]])
    half = glyph_len_px / 2.0
    pelvis = anchor - u * half
    skull = anchor + u * half
    head_r = max(4.0, min(10.0, 0.12 * pit_w_px))
    pts = [pelvis, skull]
    if pose == "flexed_on_side":
        elbow = anchor + perp * 0.15 * pit_w_px
        draw.line([tuple(pelvis), tuple(elbow)], fill=PAPER, width=4)
        draw.line([tuple(elbow), tuple(skull)], fill=PAPER, width=4)
        pts.append(elbow)
    else:
        draw.line([tuple(pelvis), tuple(skull)], fill=PAPER, width=4)
    draw.ellipse(
        [skull[0] - head_r, skull[1] - head_r, skull[0] + head_r, skull[1] + head_r],
        fill=PAPER,
    )
    pts += [skull + head_r, skull - head_r]
    return np.array(pts), (pelvis, skull)


def _grid(n: int, width: int, height: int) -> list[tuple[float, float, float, float]]:
    if n == 1:
        return [(0, 0, width, height)]
    if n == 2:
        return [(0, 0, width, height / 2), (0, height / 2, width, height)]
    cells = [
        (0, 0, width / 2, height / 2),
        (width / 2, 0, width, height / 2),
        (0, height / 2, width / 2, height),
        (width / 2, height / 2, width, height),
    ]
    return cells[:n]


def generate_page(seed: int, params: SynthParams | None = None, page_index: int = 0) -> dict:
    """One synthetic page: PNG bytes, detection JSON lines and ground truth.

    Deterministic for (seed, params, page_index).
    """
    params = params or SynthParams()
    params.check()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, page_index)))
    width, height = params.page_width_px, params.page_height_px
    page_id = f"p{page_index:03d}"

    img = Image.new("L", (width, height), PAPER)
    draw = ImageDraw.Draw(img)

    ppcm = float(rng.uniform(*params.px_per_cm))
    n_graves = int(rng.integers(params.graves_per_page[0], params.graves_per_page[1] + 1))
    cells = _grid(n_graves, width, height)

    margin = 24
    strip_h = 150   # bottom strip: cross-section on the left, scale bar right of it
    arrow_w = 95    # right strip for the north arrow
    cs_w_max = 90

    # pick a scale label whose bar fits beside the cross-section in every cell
    cell_w = min(c[2] - c[0] for c in cells)
    bar_room = cell_w - 2 * margin - cs_w_max - 40
    fitting = [s for s in params.scale_labels
               if parse_scale_label(s).real_length_cm * ppcm <= bar_room]
    if not fitting:
        fitting = [min(params.scale_labels, key=lambda s: parse_scale_label(s).real_length_cm)]
    scale_label = str(rng.choice(fitting))
    scale_real_cm = parse_scale_label(scale_label).real_length_cm

    north_base = float(rng.integers(0, 36) * 10)
    north_angle = (north_base + float(rng.uniform(-params.north_jitter_deg, params.north_jitter_deg))) % 360.0

    detections: list[dict] = []
    truth_graves = []
    scale_truth = None

    for k, (cx0, cy0, cx1, cy1) in enumerate(cells):
        gx0, gy0 = cx0 + margin, cy0 + margin
        gx1, gy1 = cx1 - arrow_w, cy1 - strip_h
        area_w, area_h = gx1 - gx0, gy1 - gy0

        # sample a pit that fits the cell at any rotation
        max_diag = 0.95 * min(area_w, area_h)
        lo, hi = params.grave_length_cm
        aspect = float(rng.uniform(*params.aspect_ratio))
        max_len_cm = max_diag / (ppcm * math.hypot(1.0, 1.0 / aspect))
        length_cm = float(rng.uniform(lo, max(lo, min(hi, max_len_cm))))
        length_cm = min(length_cm, max_len_cm)
        width_cm = length_cm / aspect
        axis_deg = float(rng.uniform(0.0, 180.0))

        outline_cm = _superellipse(width_cm, length_cm, rng, params.outline_jitter)
        outline_cm = geometry.rotate_points(outline_cm, axis_deg)
        rect_cm = geometry.min_area_rect(outline_cm)  # true cm-space rectangle

        center = np.array([(gx0 + gx1) / 2.0, (gy0 + gy1) / 2.0])
        pit_px = outline_cm * ppcm + center
        draw.polygon([tuple(p) for p in pit_px], fill=INK)
        grave_bbox = _bbox_of(pit_px)
        detections.append({"page_id": page_id, "label": "grave", "bbox": grave_bbox, "confidence": 1.0})

        # skeletons drawn white on the pit fill
        truth_skeletons = []
        pit_len_px = rect_cm.length_px * ppcm
        pit_w_px = rect_cm.width_px * ppcm
        n_skel = int(rng.integers(0, params.max_skeletons + 1)) if pit_w_px > 55 else 0
        for s in range(n_skel):
            pose = str(rng.choice(["supine", "flexed_on_side", "unknown"]))
            offset = np.zeros(2)
            if n_skel > 1:  # spread glyphs along the short axis
                side = -1.0 if s % 2 == 0 else 1.0
                offset = _direction(rect_cm.angle_deg + 90.0) * side * 0.2 * pit_w_px
            stroke_pts, (pelvis, skull) = _draw_skeleton(
                draw, center + offset, rect_cm.angle_deg, 0.42 * pit_len_px,
                pit_w_px, rng, pose,
            )
            skel_bbox = _bbox_of(stroke_pts, margin=3.0)
            bearing = (image_angle(skull[0] - pelvis[0], skull[1] - pelvis[1]) - north_angle) % 360.0
            detections.append(
                {"page_id": page_id, "label": "skeleton", "bbox": skel_bbox, "confidence": 1.0}
            )
            truth_skeletons.append(
                {
                    "pose": pose,
                    "bearing_deg": bearing,
                    "spine_px": [[float(pelvis[0]), float(pelvis[1])], [float(skull[0]), float(skull[1])]],
                }
            )

        # cross-section at the left of the bottom strip
        cs_w = int(min(cs_w_max, max(40.0, pit_w_px)))
        depth_cm = float(rng.uniform(30.0, 90.0))
        depth_px = int(round(min(depth_cm * ppcm, strip_h - 44.0)))
        depth_cm = depth_px / ppcm
        csx0 = int(cx0 + margin)
        csy0 = int(cy1 - strip_h + 30)
        t = np.linspace(0.0, 1.0, 24)
        bottom = csy0 + depth_px * np.sin(np.pi * t) ** 0.7
        profile = [(csx0 + cs_w * tt, bb) for tt, bb in zip(t, bottom)]
        cs_pts = [(csx0, csy0)] + profile + [(csx0 + cs_w, csy0)]
        draw.polygon(cs_pts, fill=INK)
        cs_bbox = _bbox_of(np.array(cs_pts))
        detections.append(
            {"page_id": page_id, "label": "grave_cross_section", "bbox": cs_bbox, "confidence": 1.0}
        )

        # scale bar right of the cross-section, label text underneath
        bar_len = int(round(scale_real_cm * ppcm))
        bar_h = 8
        bx0 = csx0 + cs_w + 40
        by0 = int(cy1 - strip_h + 36)
        draw.rectangle([bx0, by0, bx0 + bar_len - 1, by0 + bar_h - 1], fill=INK)
        if params.segmented_scale_bars:
            n_div = 4
            for d in range(1, n_div, 2):
                sx0 = bx0 + d * bar_len // n_div
                sx1 = bx0 + (d + 1) * bar_len // n_div - 1
                draw.rectangle([sx0, by0 + 1, sx1, by0 + bar_h - 2], fill=PAPER)
        draw.text((bx0, by0 + bar_h + 10), scale_label, fill=INK)
        scale_bbox = [bx0 - 2.0, by0 - 2.0, bx0 + bar_len + 1.0, by0 + bar_h + 1.0]
        detections.append({"page_id": page_id, "label": "scale", "bbox": scale_bbox, "confidence": 1.0})
        scale_truth = {"pixel_length": bar_len, "label": scale_label, "real_cm": scale_real_cm}

        # north arrow in the right strip
        acx = cx1 - arrow_w / 2.0
        acy = cy0 + margin + 40.0
        arrow_pts = _draw_arrow(draw, np.array([acx, acy]), north_angle, 56.0)
        arrow_bbox = _bbox_of(arrow_pts)
        detections.append({"page_id": page_id, "label": "arrow", "bbox": arrow_bbox, "confidence": 1.0})

        axis_bearing = (rect_cm.angle_deg - north_angle) % 180.0
        truth_graves.append(
            {
                "grave_id": f"G{page_index:03d}-{k}",
                "bbox": grave_bbox,
                "width_cm": rect_cm.width_px,   # rect computed over cm-space points
                "length_cm": rect_cm.length_px,
                "axis_bearing_deg": axis_bearing,
                "depth_cm": depth_cm,
                "skeletons": truth_skeletons,
            }
        )

    if params.noise.speckle_density > 0:
        n_speckles = int(params.noise.speckle_density * width * height)
        xs = rng.integers(0, width, n_speckles)
        ys = rng.integers(0, height, n_speckles)
        px = img.load()
        for x, y in zip(xs.tolist(), ys.tolist()):
            px[x, y] = INK

    # detection degradation for exercising manual correction
    emitted = []
    for det in detections:
        if det["label"] != "grave" and rng.random() < params.noise.drop_probability:
            continue
        bbox = det["bbox"]
        if params.noise.bbox_jitter_px > 0:
            j = params.noise.bbox_jitter_px
            bbox = [float(v + rng.uniform(-j, j)) for v in bbox]
            if bbox[0] >= bbox[2] or bbox[1] >= bbox[3]:
                bbox = det["bbox"]
        emitted.append({**det, "bbox": [round(float(v), 2) for v in bbox], "origin": "synthetic"})

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    truth = {
        "page_id": page_id,
        "px_per_cm": ppcm,
        "north_angle_deg": north_angle,
        "scale": scale_truth,
        "graves": truth_graves,
    }
    jsonl = "\n".join(json.dumps(d, sort_keys=True) for d in emitted) + "\n"
    return {"page_id": page_id, "png": buf.getvalue(), "detections_jsonl": jsonl, "truth": truth}


def generate_corpus(seed: int, n_pages: int, params: SynthParams | None = None) -> dict:
    """n_pages synthetic pages plus a manifest, detections and truth bundle."""
    pages = [generate_page(seed, params, i) for i in range(n_pages)]
    manifest = {
        "title": f"synthetic catalogue seed {seed}",
        "source_ref": f"synth:{seed}",
        "scale_mode": "per_drawing",
        "pages": [{"id": p["page_id"]} for p in pages],
    }
    return {
        "pages": pages,
        "manifest": manifest,
        "detections_jsonl": "".join(p["detections_jsonl"] for p in pages),
        "truth": {"pages": [p["truth"] for p in pages]},
    }


def write_corpus(corpus: dict, out_dir: str | Path):
    out = Path(out_dir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    manifest = dict(corpus["manifest"])
    manifest["pages"] = []
    for page in corpus["pages"]:
        rel = f"pages/{page['page_id']}.png"
        (out / rel).write_bytes(page["png"])
        manifest["pages"].append({"id": page["page_id"], "png_path": rel})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (out / "detections.jsonl").write_text(corpus["detections_jsonl"])
    (out / "truth.json").write_text(json.dumps(corpus["truth"], indent=2, sort_keys=True))


# -- scripted validation -----------------------------------------------------------


def _match_truth_grave(record, truth_pages: dict):
    page_truth = truth_pages.get(record.page_id)
    if page_truth is None:
        return None, None
    rx0, ry0, rx1, ry1 = record.tree.grave.bbox
    rc = ((rx0 + rx1) / 2.0, (ry0 + ry1) / 2.0)
    best, best_d = None, None
    for grave in page_truth["graves"]:
        bx0, by0, bx1, by1 = grave["bbox"]
        bc = ((bx0 + bx1) / 2.0, (by0 + by1) / 2.0)
        d = math.hypot(rc[0] - bc[0], rc[1] - bc[1])
        if best_d is None or d < best_d:
            best, best_d = grave, d
    return best, page_truth


def _match_skeletons(record, truth_grave) -> list[dict]:
    """Align the record's skeleton entries with truth skeletons by center."""
    out = []
    remaining = list(truth_grave["skeletons"])
    for entry in record.skeletons:
        if not remaining:
            break
        x0, y0, x1, y1 = entry.detection.bbox
        c = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

        def spine_center(t):
            (px, py), (sx, sy) = t["spine_px"]
            return ((px + sx) / 2.0, (py + sy) / 2.0)

        best_i = min(
            range(len(remaining)),
            key=lambda i: math.hypot(
                c[0] - spine_center(remaining[i])[0], c[1] - spine_center(remaining[i])[1]
            ),
        )
        out.append(remaining.pop(best_i))
    return out


def validate_from_truth(engine, document_id: str, truth: dict, north_mode: str = "manual") -> int:
    """Drive the six-step wizard for every record using the ground truth.

    north_mode 'manual' enters the true angle at step 5; 'accept' keeps the
    pipeline's angle (e.g. a classifier bin) unchanged.
    """
    truth_pages = {p["page_id"]: p for p in truth["pages"]}
    done = 0
    while True:
        try:
            record = engine.queue_next(document_id)
        except QueueEmpty:
            return done
        truth_grave, page_truth = _match_truth_grave(record, truth_pages)
        if truth_grave is None:
            engine.apply_step(record.record_id, record.version, "discard", None)
            continue

        record = engine.apply_step(
            record.record_id, record.version, "advance",
            {"publication_grave_id": truth_grave["grave_id"]},
        )
        matched = _match_skeletons(record, truth_grave)
        spines = [{"start": t["spine_px"][0], "end": t["spine_px"][1]} for t in matched]
        if len(spines) < len(record.skeletons):
            spines += [
                {"start": list(e.detection.center), "end": [e.detection.center[0], e.detection.center[1] - 10.0]}
                for e in record.skeletons[len(spines):]
            ]
        record = engine.apply_step(record.record_id, record.version, "advance", {"spines": spines})
        if record.px.get("outline_px") is not None:
            payload = {"accept_outline": True}
        else:
            payload = {"manual_box": {"grave": record.tree.grave.bbox}}
        record = engine.apply_step(record.record_id, record.version, "advance", payload)
        record = engine.apply_step(
            record.record_id, record.version, "advance",
            {"scale_text": page_truth["scale"]["label"]},
        )
        if record.north is not None:
            if north_mode == "manual":
                payload = {"angle_deg": page_truth["north_angle_deg"]}
            else:
                payload = {}
            record = engine.apply_step(record.record_id, record.version, "advance", payload)
        matched = _match_skeletons(record, truth_grave)
        poses = [t["pose"] for t in matched]
        poses += ["unknown"] * (len(record.skeletons) - len(poses))
        record = engine.apply_step(record.record_id, record.version, "advance", {"poses": poses})
        engine.apply_step(record.record_id, record.version, "advance", {})
        done += 1


# -- scoring ----------------------------------------------------------------------


def _circular_deg(a: float, b: float, period: float) -> float:
    d = abs(a - b) % period
    return min(d, period - d)


def score_against_truth(record_list, truth: dict) -> dict:
    """Per-attribute deviations of validated records vs ground truth."""
    truth_by_id = {}
    for page in truth["pages"]:
        for grave in page["graves"]:
            truth_by_id[grave["grave_id"]] = (grave, page)

    attrs: dict[str, list[float]] = {
        "width_cm_pct": [],
        "length_cm_pct": [],
        "depth_cm_pct": [],
        "axis_bearing_deg": [],
        "skeleton_bearing_deg": [],
        "px_per_cm_pct": [],
    }
    per_grave = {}
    matched = 0
    for record in record_list:
        if record.status is not records.ValidationStatus.VALIDATED:
            continue
        entry = truth_by_id.get(record.publication_grave_id)
        if entry is None:
            continue
        grave, page = entry
        matched += 1
        dev = {}
        meas = record.measurements
        if meas.get("width_cm") is not None:
            dev["width_cm_pct"] = abs(meas["width_cm"] - grave["width_cm"]) / grave["width_cm"] * 100.0
        if meas.get("length_cm") is not None:
            dev["length_cm_pct"] = abs(meas["length_cm"] - grave["length_cm"]) / grave["length_cm"] * 100.0
        if meas.get("depth_cm") is not None and grave.get("depth_cm"):
            dev["depth_cm_pct"] = abs(meas["depth_cm"] - grave["depth_cm"]) / grave["depth_cm"] * 100.0
        if meas.get("grave_bearing_deg") is not None:
            dev["axis_bearing_deg"] = _circular_deg(
                meas["grave_bearing_deg"], grave["axis_bearing_deg"], 180.0
            )
        if record.conversion is not None:
            dev["px_per_cm_pct"] = (
                abs(record.conversion.px_per_cm - page["px_per_cm"]) / page["px_per_cm"] * 100.0
            )
        got = sorted(e.bearing_deg for e in record.skeletons if e.bearing_deg is not None)
        want = sorted(s["bearing_deg"] for s in grave["skeletons"])
        for gb, wb in zip(got, want):
            attrs["skeleton_bearing_deg"].append(_circular_deg(gb, wb, 360.0))
        for key, value in dev.items():
            attrs[key].append(value)
        per_grave[record.publication_grave_id] = dev

    if matched == 0:
        raise NoMatchedGraves("no validated records matched the ground truth")

    summary = {}
    for key, values in attrs.items():
        if values:
            summary[key] = {
                "n": len(values),
                "mean": float(np.mean(values)),
                "max": float(np.max(values)),
                "values": values,
            }
    return {"n_matched": matched, "attributes": summary, "per_grave": per_grave}
