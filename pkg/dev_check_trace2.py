import sys

sys.path.insert(0, "src")
import numpy as np
import cv2
from scipy import ndimage

from graverec import geometry as G
from dev_check_trace import random_blob_raster, floodfill_boundary_sets

rng = np.random.default_rng(0)
img = random_blob_raster(rng, n_blobs=int(rng.integers(1, 6)))
fg = img > 0

ours = G.trace_outer_contours(img)
our_sets = [({tuple(map(int, p)) for p in G.contour_pixels(c)}) for c in ours]
oracle_sets = floodfill_boundary_sets(fg)

print("counts:", [len(s) for s in sorted(our_sets, key=min)])
print("oracle:", [len(s) for s in sorted(oracle_sets, key=min)])

for s in sorted(our_sets, key=min):
    # find matching oracle by min
    cand = [o for o in oracle_sets if min(o) == min(s)]
    if not cand:
        print("no oracle match for", min(s))
        continue
    o = cand[0]
    if s != o:
        extra = s - o
        missing = o - s
        print("min:", min(s), "extra(ours-only):", sorted(extra)[:10], "missing(oracle-only):", sorted(missing)[:10])
        # visualize neighborhood of first discrepancy
        p = (sorted(extra) + sorted(missing))[0]
        x, y = p
        sub = fg[max(0, y - 4):y + 5, max(0, x - 4):x + 5].astype(int)
        print("neighborhood of", p, ":\n", sub)
