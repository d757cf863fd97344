"""Homographies, mixed point/line DLT, RANSAC, global warping and the mesh."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import CorrespondenceSet, LineMatch, LineSegment, PointMatch, line_through
from .imaging import RasterImage, bilinear_arrays


class GeometryError(ValueError):
    pass


class RankDeficientError(GeometryError):
    pass


class DegenerateHomographyError(GeometryError):
    pass


class RansacError(GeometryError):
    pass


class OutOfMeshError(GeometryError):
    pass


MAX_CONDITION = 1e10


def _normalize_h(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64).reshape(3, 3)
    n = np.linalg.norm(h)
    if not np.isfinite(n) or n == 0:
        raise DegenerateHomographyError("homography is zero or non-finite")
    h = h / n
    if h[2, 2] < 0:
        h = -h
    return h


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, Frobenius-normalised with h[2, 2] >= 0."""

    h: np.ndarray

    def __post_init__(self):
        h = _normalize_h(self.h)
        cond = np.linalg.cond(h)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise DegenerateHomographyError(f"homography is not invertible (condition {cond:.3g})")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0, tx], [0, 1.0, ty], [0, 0, 1.0]]))

    def apply(self, pts) -> np.ndarray:
        return apply_h(self.h, pts)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def to_list(self) -> list:
        return [float(v) for v in self.h.ravel()]

    def distance(self, other) -> float:
        """Frobenius distance between the two normalised matrices."""
        o = other.h if isinstance(other, Homography) else _normalize_h(other)
        return float(np.linalg.norm(self.h - o))


def apply_h(h, pts) -> np.ndarray:
    """Map (N, 2) points; points sent to infinity come back as inf."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    h = np.asarray(h, dtype=np.float64)
    if abs(h[2, 2]) > 1e-12 * np.abs(h).max():
        h = h / h[2, 2]  # keeps affine maps (and the identity) free of rescaling round-off
    ph = pts @ h[:, :2].T + h[:, 2]
    w = ph[:, 2:3]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ph[:, :2] / w
    out[np.abs(w[:, 0]) < 1e-12] = np.inf
    return out


# --------------------------------------------------------------------------
# DLT

def hartley_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity taking ``pts`` to zero mean and RMS distance sqrt(2)."""
    c = pts.mean(axis=0)
    rms = math.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1)))
    s = math.sqrt(2.0) / rms if rms > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def dlt_arrays(src_pts, dst_pts, src_segs=None, dst_lines=None, dst_segs=None) -> np.ndarray:
    """Least-squares homography from point pairs and segment-to-line pairs.

    Parameters
    ----------
    src_pts, dst_pts : (N, 2) matching points.
    src_segs : (L, 2, 2) source segment endpoints.
    dst_lines : (L, 3) target lines [a, b, c].
    dst_segs : (L, 2, 2) target segment endpoints, used only for conditioning.

    Each point adds the two independent rows of p' x (H p) = 0; each line adds
    l'^T H p_s = 0 and l'^T H p_e = 0. Returns the raw 3x3 matrix.
    """
    src_pts = np.asarray(src_pts, dtype=np.float64).reshape(-1, 2)
    dst_pts = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 2)
    if src_segs is None or len(src_segs) == 0:
        src_segs = np.zeros((0, 2, 2))
        dst_lines = np.zeros((0, 3))
    src_segs = np.asarray(src_segs, dtype=np.float64).reshape(-1, 2, 2)
    dst_lines = np.asarray(dst_lines, dtype=np.float64).reshape(-1, 3)
    n_rows = 2 * len(src_pts) + 2 * len(src_segs)
    if n_rows < 8:
        raise RankDeficientError(f"need at least 8 constraint rows, got {n_rows}")

    all_src = np.vstack([src_pts, src_segs.reshape(-1, 2)])
    t_src = hartley_transform(all_src)
    dst_for_norm = [dst_pts]
    if dst_segs is not None and len(dst_segs):
        dst_for_norm.append(np.asarray(dst_segs, dtype=np.float64).reshape(-1, 2))
    dst_for_norm = np.vstack(dst_for_norm)
    t_dst = hartley_transform(dst_for_norm) if len(dst_for_norm) else np.eye(3)

    rows = []
    if len(src_pts):
        p = np.column_stack([src_pts, np.ones(len(src_pts))]) @ t_src.T
        q = np.column_stack([dst_pts, np.ones(len(dst_pts))]) @ t_dst.T
        x, y = p[:, 0], p[:, 1]
        u, v = q[:, 0], q[:, 1]
        z = np.zeros_like(x)
        o = np.ones_like(x)
        rows.append(np.column_stack([z, z, z, -x, -y, -o, v * x, v * y, v]))
        rows.append(np.column_stack([x, y, o, z, z, z, -u * x, -u * y, -u]))
    if len(src_segs):
        lines = dst_lines @ np.linalg.inv(t_dst)
        lines = lines / np.hypot(lines[:, 0], lines[:, 1])[:, None]
        for k in range(2):
            e = np.column_stack([src_segs[:, k], np.ones(len(src_segs))]) @ t_src.T
            rows.append(np.einsum("li,lj->lij", lines, e).reshape(-1, 9))
    a = np.vstack(rows)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    if len(s) < 8 or s[7] <= 1e-10 * s[0]:
        raise RankDeficientError("design matrix has rank < 8 (degenerate configuration)")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    return _normalize_h(h)


def dlt_estimate(points=(), lines=()) -> Homography:
    """Homography from ``PointMatch`` and ``LineMatch`` lists."""
    corr = CorrespondenceSet(list(points), list(lines))
    p, q = corr.point_arrays()
    segs, lp, dsegs = corr.line_arrays()
    return Homography(dlt_arrays(p, q, segs, lp, dsegs))


# --------------------------------------------------------------------------
# RANSAC

@dataclass(frozen=True)
class RansacConfig:
    point_threshold: float = 3.0
    line_threshold: float = 3.0
    max_iterations: int = 2000
    confidence: float = 0.999
    seed: int = 42
    min_inliers: int = 8


@dataclass
class RansacResult:
    model: Homography
    point_inliers: list
    line_inliers: list
    iterations_used: int


def point_residuals(h, src, dst) -> np.ndarray:
    if len(src) == 0:
        return np.zeros(0)
    r = np.linalg.norm(apply_h(h, src) - dst, axis=1)
    return np.where(np.isfinite(r), r, np.inf)


def line_residuals(h, segs, lines) -> np.ndarray:
    """Max over both mapped endpoints of the distance to the target line."""
    if len(segs) == 0:
        return np.zeros(0)
    m = apply_h(h, segs.reshape(-1, 2)).reshape(-1, 2, 2)
    d = np.abs(m[:, :, 0] * lines[:, None, 0] + m[:, :, 1] * lines[:, None, 1] + lines[:, None, 2])
    d = d / np.hypot(lines[:, 0], lines[:, 1])[:, None]
    r = d.max(axis=1)
    return np.where(np.isfinite(r), r, np.inf)


def _sample_degenerate(pts: np.ndarray) -> bool:
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-12)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a = pts[j] - pts[i]
        b = pts[k] - pts[i]
        if abs(a[0] * b[1] - a[1] * b[0]) < 1e-6 * scale * scale:
            return True
    return False


def ransac_homography(corr: CorrespondenceSet, cfg: RansacConfig = RansacConfig()) -> RansacResult:
    """Robust homography: 4-point minimal samples, points and lines vote.

    The winning hypothesis is refitted on all its inliers (points and lines)
    until the inlier set stops changing; reported inliers are those of the
    final model.
    """
    src, dst = corr.point_arrays()
    segs, lines, dsegs = corr.line_arrays()
    n = len(src)
    if n < 4:
        raise RansacError(f"need at least 4 point matches, got {n}")
    rng = np.random.default_rng(cfg.seed)

    def score(h):
        rp = point_residuals(h, src, dst)
        rl = line_residuals(h, segs, lines)
        ip = rp < cfg.point_threshold
        il = rl < cfg.line_threshold
        return ip, il, float(rp[ip].sum() + rl[il].sum())

    best = None
    best_key = (-1, 0.0)
    limit = cfg.max_iterations
    it = 0
    while it < limit:
        it += 1
        idx = rng.choice(n, 4, replace=False)
        if _sample_degenerate(src[idx]) or _sample_degenerate(dst[idx]):
            continue
        try:
            h = dlt_arrays(src[idx], dst[idx])
        except GeometryError:
            continue
        ip, il, total = score(h)
        count = int(ip.sum() + il.sum())
        key = (count, -total)
        if key > best_key:
            best_key = key
            best = (h, ip, il)
            w = ip.sum() / n
            if w >= 1.0:
                limit = it
            elif w > 0:
                need = math.log(1.0 - cfg.confidence) / math.log(1.0 - w ** 4)
                limit = min(cfg.max_iterations, max(it, int(math.ceil(need))))
    if best is None:
        raise RansacError("every minimal sample was degenerate")

    h, ip, il = best
    for _ in range(10):
        try:
            h_new = dlt_arrays(src[ip], dst[ip], segs[il], lines[il], dsegs[il])
        except GeometryError:
            break
        ip_new, il_new, _ = score(h_new)
        if ip_new.sum() + il_new.sum() < ip.sum() + il.sum():
            break
        changed = not (np.array_equal(ip_new, ip) and np.array_equal(il_new, il))
        h, ip, il = h_new, ip_new, il_new
        if not changed:
            break
    count = int(ip.sum() + il.sum())
    if count < cfg.min_inliers:
        raise RansacError(f"only {count} inliers (points + lines), need {cfg.min_inliers}")
    return RansacResult(Homography(h), np.flatnonzero(ip).tolist(), np.flatnonzero(il).tolist(), it)


def inlier_subset(corr: CorrespondenceSet, result: RansacResult) -> CorrespondenceSet:
    """RANSAC inliers; every source line not kept as a matched inlier becomes unmatched."""
    keep = set(result.line_inliers)
    matched = [corr.matched_lines[i] for i in result.line_inliers]
    rejected = [m.seg for i, m in enumerate(corr.matched_lines) if i not in keep]
    return CorrespondenceSet(
        [corr.points[i] for i in result.point_inliers], matched, rejected + list(corr.unmatched_lines)
    )


# --------------------------------------------------------------------------
# Global warping

def footprint(h, width: int, height: int) -> np.ndarray:
    """Warped pixel-centre corners of a width x height image, (4, 2)."""
    h = h.h if isinstance(h, Homography) else np.asarray(h)
    corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)
    w = corners @ h[2, :2] + h[2, 2]
    scale = np.abs(h).max() * (1 + max(width, height))
    if np.any(np.abs(w) < 1e-9 * scale) or not (np.all(w > 0) or np.all(w < 0)):
        raise DegenerateHomographyError("image corner mapped to (or beyond) infinity")
    return apply_h(h, corners)


def bounding_box(pts: np.ndarray):
    """Integer (offset, (width, height)) of the pixel grid covering ``pts``."""
    lo = np.floor(pts.min(axis=0) + 1e-6).astype(int)
    hi = np.ceil(pts.max(axis=0) - 1e-6).astype(int)
    return (int(lo[0]), int(lo[1])), (int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1))


def warp_image(data: np.ndarray, h, offset, size):
    """Backward-map ``data`` through ``h`` onto a canvas.

    Canvas pixel (row i, column j) sits at (offset_x + j, offset_y + i) in the
    target frame. Returns ``(warped array, valid mask)``.
    """
    h = h.h if isinstance(h, Homography) else np.asarray(h)
    w_out, h_out = size
    hinv = np.linalg.inv(h)
    ys, xs = np.mgrid[0:h_out, 0:w_out]
    x = xs.ravel() + float(offset[0])
    y = ys.ravel() + float(offset[1])
    src = apply_h(hinv, np.column_stack([x, y]))
    sx, sy = src[:, 0], src[:, 1]
    bad = ~np.isfinite(sx) | ~np.isfinite(sy)
    sx[bad] = -1.0
    sy[bad] = -1.0
    vals, inside = bilinear_arrays(data, sx, sy)
    shape = (h_out, w_out) + data.shape[2:]
    return np.clip(vals.reshape(shape), 0.0, 1.0), inside.reshape(h_out, w_out)


def warp_global(img: RasterImage, h: Homography):
    """Warp ``img`` onto the bounding box of its warped footprint.

    Returns ``(warped, valid_mask, canvas_offset)``.
    """
    corners = footprint(h, img.width, img.height)
    offset, size = bounding_box(corners)
    warped, mask = warp_image(img.data, h, offset, size)
    return RasterImage(warped), mask, offset


def transfer_correspondences(corr: CorrespondenceSet, h: Homography, canvas_offset=(0, 0), canvas_size=None):
    """Express correspondences in canvas pixels after the global warp.

    Source features go through ``h``; both sides are then shifted by
    ``-canvas_offset``. Features falling outside ``canvas_size`` (width,
    height) are dropped. Returns ``(CorrespondenceSet, dropped_count)``.
    """
    off = np.asarray(canvas_offset, dtype=np.float64)
    hm = h.h if isinstance(h, Homography) else np.asarray(h)

    def inside(pts):
        if canvas_size is None:
            return bool(np.all(np.isfinite(pts)))
        w, hh = canvas_size
        return bool(np.all(np.isfinite(pts)) and np.all(pts >= 0) and np.all(pts[:, 0] <= w - 1)
                    and np.all(pts[:, 1] <= hh - 1))

    dropped = 0
    points = []
    for m in corr.points:
        p = apply_h(hm, [m.p])[0] - off
        q = np.asarray(m.p_prime) - off
        if inside(np.array([p, q])):
            points.append(PointMatch(tuple(p), tuple(q), m.score))
        else:
            dropped += 1

    def seg_src(seg):
        e = apply_h(hm, seg.endpoints()) - off
        if not inside(e) or np.allclose(e[0], e[1]):
            return None
        return LineSegment(tuple(e[0]), tuple(e[1]))

    matched = []
    for m in corr.matched_lines:
        s = seg_src(m.seg)
        d = m.dst.endpoints() - off
        if s is None or not inside(d):
            dropped += 1
            continue
        d_seg = LineSegment(tuple(d[0]), tuple(d[1]))
        matched.append(LineMatch(s, d_seg, tuple(line_through(d[0], d[1]))))
    unmatched = []
    for seg in corr.unmatched_lines:
        s = seg_src(seg)
        if s is None:
            dropped += 1
        else:
            unmatched.append(s)
    return CorrespondenceSet(points, matched, unmatched), dropped


# --------------------------------------------------------------------------
# Mesh

class Mesh:
    """Regular rows x cols quad mesh.

    ``rest`` holds the (rows+1, cols+1, 2) rest positions as (x, y);
    ``vertices`` holds the current positions and is the only mutable state.
    Vertex (r, c) has id ``r * (cols + 1) + c``.
    """

    def __init__(self, origin, cell_size, rows: int, cols: int, vertices=None):
        if rows < 1 or cols < 1:
            raise ValueError("mesh needs at least one row and one column")
        if cell_size[0] <= 0 or cell_size[1] <= 0:
            raise ValueError("mesh cells must have positive size")
        self.origin = (float(origin[0]), float(origin[1]))
        self.cell_size = (float(cell_size[0]), float(cell_size[1]))
        self.rows = int(rows)
        self.cols = int(cols)
        xs = self.origin[0] + self.cell_size[0] * np.arange(cols + 1)
        ys = self.origin[1] + self.cell_size[1] * np.arange(rows + 1)
        gx, gy = np.meshgrid(xs, ys)
        self.rest = np.stack([gx, gy], axis=-1)
        self.rest.setflags(write=False)
        if vertices is None:
            self.vertices = self.rest.copy()
        else:
            v = np.array(vertices, dtype=np.float64).reshape(rows + 1, cols + 1, 2)
            self.vertices = v

    @classmethod
    def covering(cls, x0, y0, x1, y1, rows: int = 32, cols: int = 32) -> "Mesh":
        """Mesh whose rest grid spans the box [x0, x1] x [y0, y1]."""
        return cls((x0, y0), ((x1 - x0) / cols, (y1 - y0) / rows), rows, cols)

    @property
    def n_vertices(self) -> int:
        return (self.rows + 1) * (self.cols + 1)

    @property
    def bounds(self):
        x0, y0 = self.origin
        return x0, y0, x0 + self.cols * self.cell_size[0], y0 + self.rows * self.cell_size[1]

    def vertex_id(self, r: int, c: int) -> int:
        return r * (self.cols + 1) + c

    def rest_flat(self) -> np.ndarray:
        return self.rest.reshape(-1, 2)

    def vertices_flat(self) -> np.ndarray:
        return self.vertices.reshape(-1, 2)

    def set_vertices(self, v) -> None:
        self.vertices = np.array(v, dtype=np.float64).reshape(self.rows + 1, self.cols + 1, 2)

    def scaled(self, factor: float) -> "Mesh":
        return Mesh(
            (self.origin[0] * factor, self.origin[1] * factor),
            (self.cell_size[0] * factor, self.cell_size[1] * factor),
            self.rows, self.cols, self.vertices * factor,
        )

    def copy(self) -> "Mesh":
        return Mesh(self.origin, self.cell_size, self.rows, self.cols, self.vertices.copy())

    def cell_vertex_ids(self, r: int, c: int):
        """[v1, v2, v3, v4] = top-left, top-right, bottom-left, bottom-right."""
        a = self.vertex_id(r, c)
        return [a, a + 1, a + self.cols + 1, a + self.cols + 2]

    def mean_displacement(self, other=None) -> float:
        ref = self.rest if other is None else other
        return float(np.mean(np.linalg.norm(self.vertices - ref, axis=-1)))


@dataclass(frozen=True)
class BilinearAnchor:
    quad_index: tuple
    vertex_ids: tuple
    weights: tuple


def anchor_arrays(mesh: Mesh, pts, tol: float = 1e-9):
    """Vectorised anchoring against rest positions.

    Returns ``(vertex_ids (N, 4), weights (N, 4), inside (N,))``; rows for
    points outside the mesh are zero.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    x0, y0, x1, y1 = mesh.bounds
    inside = (pts[:, 0] >= x0 - tol) & (pts[:, 0] <= x1 + tol) & (pts[:, 1] >= y0 - tol) & (pts[:, 1] <= y1 + tol)
    gx = (pts[:, 0] - mesh.origin[0]) / mesh.cell_size[0]
    gy = (pts[:, 1] - mesh.origin[1]) / mesh.cell_size[1]
    c = np.clip(np.floor(gx), 0, mesh.cols - 1).astype(int)
    r = np.clip(np.floor(gy), 0, mesh.rows - 1).astype(int)
    s = np.clip(gx - c, 0.0, 1.0)
    t = np.clip(gy - r, 0.0, 1.0)
    base = r * (mesh.cols + 1) + c
    ids = np.column_stack([base, base + 1, base + mesh.cols + 1, base + mesh.cols + 2])
    weights = np.column_stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t])
    ids[~inside] = 0
    weights[~inside] = 0.0
    return ids, weights, inside


def anchor_point(mesh: Mesh, p) -> BilinearAnchor:
    ids, weights, inside = anchor_arrays(mesh, [p])
    if not inside[0]:
        raise OutOfMeshError(f"point {tuple(p)} outside mesh bounds {mesh.bounds}")
    gx = (p[0] - mesh.origin[0]) / mesh.cell_size[0]
    gy = (p[1] - mesh.origin[1]) / mesh.cell_size[1]
    quad = (int(np.clip(np.floor(gy), 0, mesh.rows - 1)), int(np.clip(np.floor(gx), 0, mesh.cols - 1)))
    return BilinearAnchor(quad, tuple(int(i) for i in ids[0]), tuple(float(w) for w in weights[0]))


def interpolate(mesh: Mesh, ids: np.ndarray, weights: np.ndarray, vertices=None) -> np.ndarray:
    """Positions sum_k w_k V[v_k] for anchored points."""
    v = mesh.vertices_flat() if vertices is None else np.asarray(vertices).reshape(-1, 2)
    return np.einsum("nk,nkd->nd", weights, v[ids])


def quad_homography(src_quad: np.ndarray, dst_quad: np.ndarray) -> np.ndarray:
    """Exact homography taking 4 points to 4 points (h[2, 2] fixed to 1)."""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        x, y = src_quad[i]
        u, v = dst_quad[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    sol = np.linalg.solve(a, b)
    return np.append(sol, 1.0).reshape(3, 3)
