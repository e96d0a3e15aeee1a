"""Whole-outline morphometrics: normalization, elliptic Fourier coefficients,
reconstruction and PCA projection of coefficient matrices."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import geometry
from .calibrate import Conversion
from .errors import DegenerateContour, TooFewPoints, TooFewSamples

RESAMPLE_POINTS = 256
DEFAULT_HARMONICS = 15


@dataclass(frozen=True, eq=False)
class Outline:
    """Closed polyline in centimeters, centroid at the origin, long axis
    rotated to the vertical."""

    points: np.ndarray  # (n, 2)
    source_record_id: str | None = None


@dataclass(frozen=True, eq=False)
class EFDCoefficients:
    harmonics: np.ndarray  # (H, 4) rows (a_n, b_n, c_n, d_n)
    dc: tuple[float, float]

    @property
    def order(self) -> int:
        return len(self.harmonics)

    def flatten(self) -> np.ndarray:
        """Feature vector (a1, b1, c1, d1, ..., aH, bH, cH, dH); DC excluded."""
        return np.asarray(self.harmonics, dtype=float).reshape(-1)


@dataclass(frozen=True, eq=False)
class PCAModel:
    mean: np.ndarray                 # (d,)
    components: np.ndarray           # (k, d) orthonormal rows
    explained_variance: np.ndarray   # (k,) descending

    def project(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=float) - self.mean) @ self.components.T


def resample_closed(points: np.ndarray, n: int = RESAMPLE_POINTS) -> np.ndarray:
    """Resample a closed polyline to n points at uniform arc-length spacing."""
    pts = np.asarray(points, dtype=float)
    closed = np.vstack([pts, pts[:1]])
    seg = np.diff(closed, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    total = cum[-1]
    if total <= 0:
        raise DegenerateContour("outline has zero length")
    targets = np.linspace(0.0, total, n, endpoint=False)
    x = np.interp(targets, cum, closed[:, 0])
    y = np.interp(targets, cum, closed[:, 1])
    return np.column_stack([x, y])


def normalize_outline(
    contour: geometry.Contour | np.ndarray,
    conv: Conversion,
    rect: geometry.RotatedRect,
    source_record_id: str | None = None,
    n_points: int = RESAMPLE_POINTS,
) -> Outline:
    """Scale to centimeters, rotate the long axis vertical, resample to
    uniform arc spacing and center on the vertex centroid."""
    pts = np.asarray(contour.points if isinstance(contour, geometry.Contour) else contour, dtype=float)
    if len(pts) < 3:
        raise DegenerateContour(f"need at least 3 points, got {len(pts)}")
    pts = pts / conv.px_per_cm
    pts = geometry.rotate_points(pts, -rect.angle_deg)
    pts = resample_closed(pts, n_points)
    pts = pts - pts.mean(axis=0)
    return Outline(points=pts, source_record_id=source_record_id)


def efd(outline: Outline | np.ndarray, harmonics: int = DEFAULT_HARMONICS) -> EFDCoefficients:
    """Elliptic Fourier coefficients of a closed outline, piecewise-linear
    parameterization by arc length."""
    pts = np.asarray(outline.points if isinstance(outline, Outline) else outline, dtype=float)
    if len(pts) < 2 * harmonics + 1:
        raise TooFewPoints(f"need at least {2 * harmonics + 1} points, got {len(pts)}")

    closed = np.vstack([pts, pts[:1]])
    d = np.diff(closed, axis=0)
    dt = np.hypot(d[:, 0], d[:, 1])
    keep = dt > 0
    d, dt = d[keep], dt[keep]
    if len(dt) < 3:
        raise TooFewPoints("outline collapses to fewer than 3 distinct points")
    t = np.concatenate([[0.0], np.cumsum(dt)])
    total = t[-1]

    n = np.arange(1, harmonics + 1)[:, None]
    phi = 2.0 * np.pi * t[None, :] / total
    cos_n = np.cos(n * phi)
    sin_n = np.sin(n * phi)
    dcos = cos_n[:, 1:] - cos_n[:, :-1]
    dsin = sin_n[:, 1:] - sin_n[:, :-1]
    const = total / (2.0 * (n[:, 0] ** 2) * np.pi**2)

    vx = d[:, 0] / dt
    vy = d[:, 1] / dt
    a = const * (dcos @ vx)
    b = const * (dsin @ vx)
    c = const * (dcos @ vy)
    dd = const * (dsin @ vy)

    # DC terms of the same piecewise-linear parameterization
    start = closed[0]
    xi = np.cumsum(d[:, 0]) - vx * t[1:]
    a0 = (vx / 2.0 * np.diff(t**2) + xi * np.diff(t)).sum() / total + start[0]
    delta = np.cumsum(d[:, 1]) - vy * t[1:]
    c0 = (vy / 2.0 * np.diff(t**2) + delta * np.diff(t)).sum() / total + start[1]

    return EFDCoefficients(
        harmonics=np.column_stack([a, b, c, dd]),
        dc=(float(a0), float(c0)),
    )


def efd_reconstruct(coeffs: EFDCoefficients, n_points: int) -> np.ndarray:
    """Evaluate the truncated series at n_points uniform parameter values."""
    h = np.asarray(coeffs.harmonics, dtype=float)
    n = np.arange(1, len(h) + 1)[:, None]
    t = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)[None, :]
    cos_nt = np.cos(n * t)
    sin_nt = np.sin(n * t)
    x = coeffs.dc[0] + h[:, 0] @ cos_nt + h[:, 1] @ sin_nt
    y = coeffs.dc[1] + h[:, 2] @ cos_nt + h[:, 3] @ sin_nt
    return np.column_stack([x, y])


def pca_project(matrix: np.ndarray, k: int = 2) -> tuple[PCAModel, np.ndarray]:
    """Mean-centered covariance eigendecomposition; top-k projections.

    Component signs are fixed so each component's largest-magnitude entry
    is positive.
    """
    data = np.asarray(matrix, dtype=float)
    if data.ndim != 2 or len(data) < 2:
        raise TooFewSamples("PCA needs at least 2 samples")
    m, dim = data.shape
    k = min(k, dim)
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (m - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order][:k], 0.0)
    comps = eigvecs[:, order][:, :k].T
    for row in comps:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    model = PCAModel(mean=mean, components=comps, explained_variance=eigvals)
    return model, centered @ comps.T


def coefficients_csv(record_ids: list[str], coeff_list: list[EFDCoefficients]) -> str:
    """CSV of flattened coefficients, one row per record."""
    order = coeff_list[0].order if coeff_list else DEFAULT_HARMONICS
    header = ["record_id"]
    for i in range(1, order + 1):
        header += [f"a{i}", f"b{i}", f"c{i}", f"d{i}"]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for rid, coeffs in zip(record_ids, coeff_list):
        row = [rid] + [repr(float(v)) for v in coeffs.flatten()]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def projection_csv(record_ids: list[str], model: PCAModel, projections: np.ndarray) -> str:
    """CSV of PCA projections with the explained variance as a header comment."""
    buf = io.StringIO()
    variances = ",".join(repr(float(v)) for v in model.explained_variance)
    buf.write(f"# explained_variance: {variances}\n")
    k = projections.shape[1] if len(projections) else len(model.explained_variance)
    buf.write("record_id," + ",".join(f"pc{i + 1}" for i in range(k)) + "\n")
    for rid, row in zip(record_ids, projections):
        buf.write(rid + "," + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()
