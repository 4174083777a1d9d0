"""Prediction-region reconstruction, volumes, footprints, and metrics.

Boundary points are a deterministic Fibonacci lattice on the unit sphere
pushed onto the region surface (ellipsoid level set for Mahalanobis
scores, ball for L2 scores). For body-frame scores the points live in
exponential coordinates, get clipped to the invertible domain
|theta| < pi - delta, and are mapped to configuration space through the
prediction's mean pose. Connectivity comes from the convex hull taken in
the sampling coordinates, where the region is convex; pushing vertices
through the continuous bijection preserves the closed surface, so the
signed-tetrahedron volume remains valid even for the non-convex mapped
("banana") regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from . import se2
from .conformal import LIE_KINDS, MAHALANOBIS_KINDS, CalibrationResult, ScoreKind, contains_batch
from .estimate import FRAME_LIE, FRAME_SS, GaussianPrediction

CLIP_MARGIN = 1e-6  # rad kept clear of |theta| = pi


@dataclass(frozen=True)
class RegionMesh:
    """Closed triangulated surface in configuration space.

    ``vertices`` are (x, y, theta) rows; theta is kept on the continuous
    branch nearest the mean heading so the surface never tears across the
    angle seam. Volume is in m^2 * rad.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    volume: float
    source: dict


@dataclass(frozen=True)
class Footprint:
    """Sparse occupancy grid over the workspace plane.

    Cells are (ix, iy) indices of squares [ix*res, (ix+1)*res) x [...],
    anchored at the global origin so footprints of equal resolution are
    directly comparable.
    """

    resolution: float
    cells: frozenset

    def __len__(self):
        return len(self.cells)

    def cell_centers(self) -> np.ndarray:
        if not self.cells:
            return np.zeros((0, 2))
        idx = np.array(sorted(self.cells))
        return (idx + 0.5) * self.resolution


def fibonacci_sphere(n: int) -> np.ndarray:
    """n nearly uniform unit vectors on S^2 (deterministic lattice)."""
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _sqrt_spd(m) -> np.ndarray:
    w, v = np.linalg.eigh(np.asarray(m, dtype=float))
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T


def _surface_offsets(pred: GaussianPrediction, cal: CalibrationResult, n: int,
                     seed=None, jitter=False) -> np.ndarray:
    """Boundary offsets around the mean in the score's own coordinates."""
    if cal.vacuous:
        raise ValueError("vacuous calibration: the region is the whole space")
    sphere = fibonacci_sphere(n)
    if jitter and seed is not None:
        # random proper rotation of the whole lattice; keeps determinism per seed
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        sphere = sphere @ q.T
    if cal.score_kind in MAHALANOBIS_KINDS:
        scale = np.sqrt(cal.chi2_q * cal.zeta)
        return sphere @ (_sqrt_spd(pred.cov) * scale).T
    return cal.q_hat * sphere


def boundary_points(pred: GaussianPrediction, cal: CalibrationResult, n: int,
                    seed=None, jitter=False) -> np.ndarray:
    """Exponential-coordinate boundary samples for body-frame score kinds,
    clipped to the invertible domain; every unclipped point scores q_hat."""
    if ScoreKind(cal.score_kind) not in LIE_KINDS:
        raise ValueError("boundary_points serves body-frame score kinds only")
    if n < 4:
        raise ValueError("need at least 4 boundary samples")
    pts = _surface_offsets(pred, cal, n, seed=seed, jitter=jitter)
    return pts[np.abs(pts[:, 2]) < np.pi - CLIP_MARGIN]


def map_to_cspace(points, pred: GaussianPrediction, unwrap=True) -> np.ndarray:
    """Algebra points e -> configurations of (mean * exp(e)).

    With ``unwrap`` the heading stays on the continuous branch nearest
    mean_theta + e_theta (the same configuration on the circle), keeping
    mapped surfaces tear-free; plain [-pi, pi) wrapping is the
    single-point convention.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(np.abs(points[:, 2]) >= np.pi):
        raise ValueError("points outside the invertible domain |theta| < pi")
    mean = pred.pose.as_array()
    mapped = se2.kinematics_inv(se2.compose(mean, se2.exp(points)))
    if unwrap:
        target = mean[2] + points[:, 2]
        mapped[:, 2] += se2.TWO_PI * np.round((target - mapped[:, 2]) / se2.TWO_PI)
    return mapped


def orient_outward(vertices, triangles) -> np.ndarray:
    """Flip triangles so normals point away from the vertex centroid.

    Valid when the centroid lies inside (always true for the convex
    sampling coordinates); hull libraries do not guarantee consistent
    simplex orientation.
    """
    v = np.asarray(vertices, dtype=float)
    t = np.array(triangles, dtype=int, copy=True)
    c = v.mean(axis=0)
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    inward = np.einsum("ij,ij->i", n, v[t[:, 0]] - c) < 0
    t[inward] = t[inward][:, [0, 2, 1]]
    return t


def mesh_volume(vertices, triangles) -> float:
    """Total volume of a consistently oriented closed surface by signed
    tetrahedra against the vertex centroid."""
    v = np.asarray(vertices, dtype=float)
    t = np.asarray(triangles, dtype=int)
    c = v.mean(axis=0)
    a, b, d = v[t[:, 0]] - c, v[t[:, 1]] - c, v[t[:, 2]] - c
    return float(abs(np.einsum("ij,ij->", a, np.cross(b, d))) / 6.0)


def reconstruct_mesh(pred: GaussianPrediction, cal: CalibrationResult, n: int,
                     seed=None, jitter=False) -> RegionMesh:
    """Watertight region surface for any score kind.

    Body-frame kinds sample/clip in exponential coordinates and push the
    hull through the mean pose; state-space kinds are ellipsoids/balls in
    generalized coordinates already.
    """
    kind = ScoreKind(cal.score_kind)
    if kind in LIE_KINDS:
        sample_coords = boundary_points(pred, cal, n, seed=seed, jitter=jitter)
    else:
        sample_coords = _surface_offsets(pred, cal, n, seed=seed, jitter=jitter)
    if len(sample_coords) < 4 or np.linalg.matrix_rank(sample_coords - sample_coords[0]) < 3:
        raise ValueError("too few non-degenerate boundary samples to triangulate")
    hull = ConvexHull(sample_coords)
    triangles = orient_outward(sample_coords, hull.simplices)
    if kind in LIE_KINDS:
        vertices = map_to_cspace(sample_coords, pred)
    else:
        vertices = se2.kinematics_inv(pred.pose.as_array()) + sample_coords
    volume = mesh_volume(vertices, triangles)
    source = {
        "score_kind": kind.value,
        "n_samples": int(n),
        "n_vertices": int(len(sample_coords)),
        "q_hat": cal.q_hat,
        "prediction": pred.pose.as_array().tolist(),
        "calibration": cal.fingerprints,
    }
    return RegionMesh(vertices=vertices, triangles=triangles, volume=volume, source=source)


def empirical_coverage(particles, pred: GaussianPrediction, cal: CalibrationResult) -> float:
    """Fraction of outcome poses inside the region (membership test on the
    score inequality, not on the reconstructed mesh)."""
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    if len(particles) == 0:
        raise ValueError("no particles")
    return float(np.mean(contains_batch(particles, pred, cal)))


def _mark_triangle_cells(tri_xy, resolution, cells):
    """Cells whose centers lie inside one 2D triangle (plus its vertices)."""
    (x0, y0), (x1, y1), (x2, y2) = tri_xy
    for vx, vy in tri_xy:
        cells.add((int(np.floor(vx / resolution)), int(np.floor(vy / resolution))))
    ix_lo = int(np.floor(min(x0, x1, x2) / resolution))
    ix_hi = int(np.floor(max(x0, x1, x2) / resolution))
    iy_lo = int(np.floor(min(y0, y1, y2) / resolution))
    iy_hi = int(np.floor(max(y0, y1, y2) / resolution))
    ix, iy = np.meshgrid(np.arange(ix_lo, ix_hi + 1), np.arange(iy_lo, iy_hi + 1),
                         indexing="ij")
    px = (ix + 0.5) * resolution
    py = (iy + 0.5) * resolution
    d00 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
    d11 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    d22 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
    inside = ((d00 >= 0) & (d11 >= 0) & (d22 >= 0)) | ((d00 <= 0) & (d11 <= 0) & (d22 <= 0))
    for a, b in zip(ix[inside].ravel(), iy[inside].ravel()):
        cells.add((int(a), int(b)))


def footprint_from_mesh(mesh: RegionMesh, resolution: float) -> Footprint:
    """Workspace footprint: the mesh's triangles projected onto (x, y) and
    rasterized (heading marginalized away)."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    cells = set()
    xy = mesh.vertices[:, :2]
    for tri in mesh.triangles:
        _mark_triangle_cells(xy[tri], resolution, cells)
    return Footprint(resolution=resolution, cells=frozenset(cells))


def footprint_from_points(points_xy, resolution: float) -> Footprint:
    """Cells containing at least one sample point (particle footprints)."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    pts = np.atleast_2d(np.asarray(points_xy, dtype=float))[:, :2]
    idx = np.floor(pts / resolution).astype(int)
    return Footprint(resolution=resolution, cells=frozenset(map(tuple, idx)))


def iou(a: Footprint, b: Footprint) -> float:
    """Intersection over union of occupied cells."""
    if not np.isclose(a.resolution, b.resolution):
        raise ValueError("footprints use different resolutions")
    union = a.cells | b.cells
    if not union:
        raise ValueError("both footprints are empty")
    return len(a.cells & b.cells) / len(union)


def surface_edge_counts(triangles) -> dict:
    """Edge -> number of incident triangles (2 everywhere on a closed
    orientable surface); used by watertightness checks."""
    counts = {}
    for tri in np.asarray(triangles, dtype=int):
        for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(e), max(e))
            counts[key] = counts.get(key, 0) + 1
    return counts
