"""Dev-only sanity check: tracer vs cv2 and a flood-fill boundary oracle."""
import sys

sys.path.insert(0, "src")
import numpy as np
import cv2
from scipy import ndimage

from graverec import geometry as G


def random_blob_raster(rng, h=120, w=140, n_blobs=4):
    img = np.zeros((h, w), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_blobs):
        cy, cx = rng.integers(10, h - 10), rng.integers(10, w - 10)
        r = rng.integers(4, 18)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[mask] = 255
    # a ring to exercise hole semantics
    cy, cx, r1, r2 = h // 2, w // 2, 22, 30
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    img[(d2 <= r2 * r2) & (d2 >= r1 * r1)] = 255
    return img


def floodfill_boundary_sets(fg):
    """Per 8-connected component: pixels 4-adjacent to the background region
    on the component's outer side (4-connected background)."""
    fgp = np.pad(fg, 1)
    labels, n = ndimage.label(fgp, structure=np.ones((3, 3), dtype=int))
    bg_labels, _ = ndimage.label(~fgp, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    out = {}
    h, w = fgp.shape
    for lbl in range(1, n + 1):
        comp = labels == lbl
        # first pixel in raster order; its west neighbor is on the outer side
        idx = np.flatnonzero(comp.ravel())[0]
        i0, j0 = divmod(idx, w)
        outer_bg = bg_labels[i0, j0 - 1]
        border = set()
        for i, j in zip(*np.nonzero(comp)):
            for di, dj in ((0, -1), (-1, 0), (0, 1), (1, 0)):
                if bg_labels[i + di, j + dj] == outer_bg:
                    border.add((int(j - 1), int(i - 1)))  # unpad; x, y
                    break
        out[idx] = border
    return sorted(out.values(), key=lambda s: min(s)) if out else []


rng = np.random.default_rng(0)
fails = 0
for trial in range(60):
    img = random_blob_raster(rng, n_blobs=int(rng.integers(1, 6)))
    fg = img > 0

    ours = G.trace_outer_contours(img)
    our_sets = sorted(
        ({tuple(map(int, p)) for p in G.contour_pixels(c)} for c in ours),
        key=lambda s: min(s),
    )

    oracle_sets = sorted(floodfill_boundary_sets(fg), key=lambda s: min(s))

    cv_contours, hier = cv2.findContours(img, cv2.RETR_CCOMP, cv2.CHAIN_APPROX_NONE)
    cv_sets = sorted(
        (
            {(int(p[0][0]), int(p[0][1])) for p in c}
            for c, hrow in zip(cv_contours, hier[0])
            if hrow[3] == -1  # top level == per-component outer borders
        ),
        key=lambda s: min(s),
    )

    ok_oracle = our_sets == oracle_sets
    ok_cv = our_sets == cv_sets
    if not (ok_oracle and ok_cv):
        fails += 1
        print(f"trial {trial}: oracle={ok_oracle} cv={ok_cv} n_ours={len(our_sets)} n_or={len(oracle_sets)} n_cv={len(cv_sets)}")
        if fails > 3:
            break

print("FAILS:", fails)

# block identity: filled w x h -> 4-pt contour, area (w-1)(h-1)
img = np.zeros((50, 60), np.uint8)
img[10:30, 5:45] = 255  # h=20, w=40
cs = G.trace_outer_contours(img)
assert len(cs) == 1, len(cs)
c = cs[0]
print("block contour pts:", c.points.tolist(), "orientation:", c.orientation)
m = G.polygon_metrics(c)
print("block area:", m["area_px2"], "expected", 39 * 19, "arc:", m["arc_length_px"], "expected", 2 * (39 + 19))

# min_area_rect conventions
pts = np.array([[0, 0], [30, 0], [30, 80], [0, 80]], float)
r = G.min_area_rect(pts)
print("rect 30x80:", r)
rot = G.rotate_points(pts, 37.0)
r2 = G.min_area_rect(rot)
print("rot 37:", r2)
