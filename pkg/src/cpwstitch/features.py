"""Point and line correspondences.

Built-in detection is intentionally simple: Harris corners matched by
normalised cross-correlation of square patches, and straight edges grown from
pixels with similar gradient orientation. Correspondences computed elsewhere
(SIFT, LSD, ...) can be supplied through the JSON format handled by
:func:`load_correspondences` / :func:`save_correspondences`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import as_luma, bilinear_arrays, gradient_components


class CorrespondenceError(ValueError):
    """Malformed or invalid correspondence data."""


@dataclass(frozen=True)
class DetectorConfig:
    harris_k: float = 0.04
    harris_sigma: float = 1.5
    corner_threshold: float = 0.01
    nms_radius: int = 3
    max_corners: int = 1500
    patch_size: int = 11
    ratio: float = 0.8
    min_ncc: float = 0.5
    refine_radius: int = 5       # translational patch refinement of target positions; 0 disables
    refine_sigma: float = 2.5
    edge_threshold: float = 0.04
    min_line_length: float = 10.0
    max_line_width: float = 1.2
    angle_bins: int = 16
    max_lines: int = 300
    line_angle_tol: float = 5.0
    line_dist_tol: float = 4.0
    fallback_angle_tol: float = 10.0
    fallback_dist_tol: float = 20.0


@dataclass(frozen=True)
class PointMatch:
    p: tuple
    p_prime: tuple
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "p", _pair(self.p, "p"))
        object.__setattr__(self, "p_prime", _pair(self.p_prime, "p_prime"))
        if not 0.0 <= self.score <= 1.0:
            raise CorrespondenceError(f"match score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class LineSegment:
    p_s: tuple
    p_e: tuple

    def __post_init__(self):
        object.__setattr__(self, "p_s", _pair(self.p_s, "p_s"))
        object.__setattr__(self, "p_e", _pair(self.p_e, "p_e"))
        if self.length == 0.0:
            raise CorrespondenceError("zero-length line segment")

    @property
    def length(self) -> float:
        return math.hypot(self.p_e[0] - self.p_s[0], self.p_e[1] - self.p_s[1])

    def endpoints(self) -> np.ndarray:
        return np.array([self.p_s, self.p_e])

    def homogeneous(self) -> np.ndarray:
        """Line through both endpoints as [a, b, c] with a^2 + b^2 = 1."""
        return line_through(self.p_s, self.p_e)

    def as_list(self) -> list:
        return [self.p_s[0], self.p_s[1], self.p_e[0], self.p_e[1]]


@dataclass(frozen=True)
class LineMatch:
    """Source segment matched to a target segment.

    ``line_prime`` is the target line in homogeneous form, normalised so that
    a'^2 + b'^2 = 1.
    """

    seg: LineSegment
    dst: LineSegment
    line_prime: tuple = None

    def __post_init__(self):
        if self.line_prime is None:
            lp = self.dst.homogeneous()
        else:
            lp = normalize_line(self.line_prime)
        object.__setattr__(self, "line_prime", tuple(float(v) for v in lp))


@dataclass
class CorrespondenceSet:
    points: list = field(default_factory=list)
    matched_lines: list = field(default_factory=list)
    unmatched_lines: list = field(default_factory=list)

    def point_arrays(self):
        if not self.points:
            return np.zeros((0, 2)), np.zeros((0, 2))
        p = np.array([m.p for m in self.points], dtype=np.float64)
        q = np.array([m.p_prime for m in self.points], dtype=np.float64)
        return p, q

    def line_arrays(self):
        """Source endpoints (L, 2, 2), target lines (L, 3), target endpoints (L, 2, 2)."""
        if not self.matched_lines:
            return np.zeros((0, 2, 2)), np.zeros((0, 3)), np.zeros((0, 2, 2))
        src = np.array([m.seg.endpoints() for m in self.matched_lines])
        lines = np.array([m.line_prime for m in self.matched_lines])
        dst = np.array([m.dst.endpoints() for m in self.matched_lines])
        return src, lines, dst

    def all_source_lines(self) -> list:
        return [m.seg for m in self.matched_lines] + list(self.unmatched_lines)

    def validate(self, min_line_length: float = 0.0) -> None:
        seen = set()
        for seg in self.all_source_lines():
            if seg.length < min_line_length:
                raise CorrespondenceError(
                    f"line segment {seg.as_list()} shorter than minimum length {min_line_length}"
                )
            key = tuple(seg.as_list())
            if key in seen:
                raise CorrespondenceError(f"source segment {list(key)} listed twice")
            seen.add(key)

    def __eq__(self, other):
        if not isinstance(other, CorrespondenceSet):
            return NotImplemented
        return correspondences_to_dict(self) == correspondences_to_dict(other)


def _pair(v, name):
    try:
        x, y = (float(c) for c in v)
    except (TypeError, ValueError):
        raise CorrespondenceError(f"{name}: expected two coordinates, got {v!r}") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise CorrespondenceError(f"{name}: non-finite coordinate {v!r}")
    return (x, y)


def normalize_line(l) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    n = math.hypot(l[0], l[1])
    if n == 0.0:
        raise CorrespondenceError("line has a = b = 0")
    return l / n


def line_through(p, q) -> np.ndarray:
    l = np.cross([p[0], p[1], 1.0], [q[0], q[1], 1.0])
    return normalize_line(l)


# --------------------------------------------------------------------------
# JSON interchange

def correspondences_to_dict(corr: CorrespondenceSet) -> dict:
    return {
        "points": [[m.p[0], m.p[1], m.p_prime[0], m.p_prime[1]] for m in corr.points],
        "lines_matched": [{"src": m.seg.as_list(), "dst": m.dst.as_list()} for m in corr.matched_lines],
        "lines_unmatched": [s.as_list() for s in corr.unmatched_lines],
    }


def _quad(v, where):
    if not isinstance(v, list) or len(v) != 4:
        raise CorrespondenceError(f"{where}: expected an array of 4 numbers, got {v!r}")
    for i, c in enumerate(v):
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            raise CorrespondenceError(f"{where}[{i}]: expected a number, got {c!r}")
    return [float(c) for c in v]


def correspondences_from_dict(doc, min_line_length: float = 10.0) -> CorrespondenceSet:
    if not isinstance(doc, dict):
        raise CorrespondenceError("top level: expected a JSON object")
    unknown = set(doc) - {"points", "lines_matched", "lines_unmatched"}
    if unknown:
        raise CorrespondenceError(f"top level: unknown keys {sorted(unknown)}")
    points, matched, unmatched = [], [], []
    for i, row in enumerate(doc.get("points", [])):
        x1, y1, x2, y2 = _quad(row, f"points[{i}]")
        points.append(PointMatch((x1, y1), (x2, y2)))
    for i, item in enumerate(doc.get("lines_matched", [])):
        if not isinstance(item, dict) or set(item) != {"src", "dst"}:
            raise CorrespondenceError(f"lines_matched[{i}]: expected an object with keys 'src' and 'dst'")
        s = _quad(item["src"], f"lines_matched[{i}].src")
        d = _quad(item["dst"], f"lines_matched[{i}].dst")
        try:
            matched.append(LineMatch(LineSegment(s[:2], s[2:]), LineSegment(d[:2], d[2:])))
        except CorrespondenceError as exc:
            raise CorrespondenceError(f"lines_matched[{i}]: {exc}") from None
    for i, row in enumerate(doc.get("lines_unmatched", [])):
        s = _quad(row, f"lines_unmatched[{i}]")
        try:
            unmatched.append(LineSegment(s[:2], s[2:]))
        except CorrespondenceError as exc:
            raise CorrespondenceError(f"lines_unmatched[{i}]: {exc}") from None
    corr = CorrespondenceSet(points, matched, unmatched)
    corr.validate(min_line_length)
    return corr


def load_correspondences(path, min_line_length: float = 10.0) -> CorrespondenceSet:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorrespondenceError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return correspondences_from_dict(doc, min_line_length)


def save_correspondences(corr: CorrespondenceSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(correspondences_to_dict(corr), fh, indent=1)
        fh.write("\n")


# --------------------------------------------------------------------------
# Points: Harris corners + NCC patches

def harris_response(lum: np.ndarray, k: float = 0.04, sigma: float = 1.5) -> np.ndarray:
    gx, gy = gradient_components(lum)
    sxx = ndimage.gaussian_filter(gx * gx, sigma)
    syy = ndimage.gaussian_filter(gy * gy, sigma)
    sxy = ndimage.gaussian_filter(gx * gy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_corners(img, cfg: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """Harris corners as an (N, 2) array of subpixel (x, y), strongest first."""
    lum = as_luma(img)
    r = harris_response(lum, cfg.harris_k, cfg.harris_sigma)
    peak = r.max()
    if not peak > 1e-12:
        return np.zeros((0, 2))
    size = 2 * cfg.nms_radius + 1
    local_max = r == ndimage.maximum_filter(r, size=size, mode="constant", cval=-np.inf)
    cand = local_max & (r > cfg.corner_threshold * peak)
    border = cfg.patch_size // 2 + 1
    cand[:border, :] = False
    cand[-border:, :] = False
    cand[:, :border] = False
    cand[:, -border:] = False
    ys, xs = np.nonzero(cand)
    order = np.argsort(-r[ys, xs], kind="stable")[: cfg.max_corners]
    ys, xs = ys[order], xs[order]
    # parabolic peak refinement along each axis
    c = r[ys, xs]
    dx = _parabola_offset(r[ys, xs - 1], c, r[ys, xs + 1])
    dy = _parabola_offset(r[ys - 1, xs], c, r[ys + 1, xs])
    return np.column_stack([xs + dx, ys + dy])


def _parabola_offset(left, centre, right):
    denom = left - 2.0 * centre + right
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom < 0, 0.5 * (left - right) / denom, 0.0)
    return np.clip(off, -0.5, 0.5)


def patch_descriptors(lum: np.ndarray, pts: np.ndarray, size: int):
    """Zero-mean, unit-norm square patches around rounded positions.

    Returns ``(descriptors, keep)`` where ``keep`` flags points whose patch is
    fully inside the image and not flat.
    """
    half = size // 2
    h, w = lum.shape
    ix = np.round(pts[:, 0]).astype(int)
    iy = np.round(pts[:, 1]).astype(int)
    keep = (ix >= half) & (ix < w - half) & (iy >= half) & (iy < h - half)
    win = np.lib.stride_tricks.sliding_window_view(lum, (size, size))
    desc = win[iy[keep] - half, ix[keep] - half].reshape(-1, size * size).astype(np.float64)
    desc = desc - desc.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(desc, axis=1)
    flat = norms < 1e-8
    out = np.zeros((len(pts), size * size))
    out[np.flatnonzero(keep)] = desc / np.where(flat, 1.0, norms)[:, None]
    keep[np.flatnonzero(keep)[flat]] = False
    return out, keep


def match_descriptors(d1: np.ndarray, d2: np.ndarray, ratio: float = 0.8, min_ncc: float = 0.5):
    """Mutual-best NCC matching with a distance ratio test.

    Returns a list of ``(i, j, ncc)``.
    """
    if len(d1) == 0 or len(d2) == 0:
        return []
    sim = d1 @ d2.T
    dist = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * sim))
    best12 = np.argmax(sim, axis=1)
    best21 = np.argmax(sim, axis=0)
    out = []
    for i, j in enumerate(best12):
        if best21[j] != i or sim[i, j] < min_ncc:
            continue
        if len(d2) > 1:
            row = dist[i].copy()
            row[j] = np.inf
            second = row.min()
            if not dist[i, j] < ratio * second:
                continue
        out.append((i, int(j), float(sim[i, j])))
    return out


def detect_and_match_points(src, dst, cfg: DetectorConfig = DetectorConfig()) -> list:
    """Harris + NCC patch matches from ``src`` to ``dst``, best score first."""
    l1, l2 = as_luma(src), as_luma(dst)
    c1, c2 = detect_corners(l1, cfg), detect_corners(l2, cfg)
    if len(c1) == 0 or len(c2) == 0:
        return []
    d1, k1 = patch_descriptors(l1, c1, cfg.patch_size)
    d2, k2 = patch_descriptors(l2, c2, cfg.patch_size)
    i1, i2 = np.flatnonzero(k1), np.flatnonzero(k2)
    pairs = match_descriptors(d1[i1], d2[i2], cfg.ratio, cfg.min_ncc)
    p = np.array([c1[i1[i]] for i, _, _ in pairs]).reshape(-1, 2)
    q = np.array([c2[i2[j]] for _, j, _ in pairs]).reshape(-1, 2)
    if cfg.refine_radius > 0 and len(p):
        q = refine_targets(l1, l2, p, q, cfg.refine_radius, cfg.refine_sigma)
    matches = [
        PointMatch(tuple(a), tuple(b), min(1.0, max(0.0, s)))
        for a, b, (_, _, s) in zip(p, q, pairs)
    ]
    matches.sort(key=lambda m: -m.score)
    return matches


def refine_targets(src_lum, dst_lum, p, q, radius: int = 5, sigma: float = 2.5,
                   iterations: int = 10, max_shift: float = 1.5) -> np.ndarray:
    """Subpixel target positions by Gauss-Newton alignment of Gaussian-weighted patches.

    Harris peaks are not exactly covariant under rotation and scale; aligning
    the (mean-removed) target patch to the source patch by a translation
    removes most of that bias. Positions that cannot be refined (patch off the
    image, singular system, or a move beyond ``max_shift``) are returned unchanged.
    """
    gx, gy = gradient_components(dst_lum)
    oy, ox = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    ox = ox.ravel().astype(np.float64)
    oy = oy.ravel().astype(np.float64)
    wt = np.exp(-0.5 * (ox ** 2 + oy ** 2) / sigma ** 2)
    wt /= wt.sum()
    out = np.array(q, dtype=np.float64)
    for i in range(len(p)):
        ref, inside = bilinear_arrays(src_lum, p[i, 0] + ox, p[i, 1] + oy)
        if not inside.all():
            continue
        ref = ref - wt @ ref
        d = np.zeros(2)
        for _ in range(iterations):
            x, y = q[i, 0] + d[0] + ox, q[i, 1] + d[1] + oy
            v, inside = bilinear_arrays(dst_lum, x, y)
            if not inside.all():
                d = None
                break
            jx = bilinear_arrays(gx, x, y)[0]
            jy = bilinear_arrays(gy, x, y)[0]
            jac = np.column_stack([jx - wt @ jx, jy - wt @ jy])
            res = v - wt @ v - ref
            a = (jac * wt[:, None]).T @ jac
            if np.linalg.det(a) <= 1e-12 * max(np.trace(a) ** 2, 1e-300):
                d = None
                break
            step = -np.linalg.solve(a, (jac * wt[:, None]).T @ res)
            d = d + step
            if np.hypot(*d) > max_shift:
                d = None
                break
            if np.hypot(*step) < 1e-3:
                break
        if d is not None:
            out[i] = q[i] + d
    return out


# --------------------------------------------------------------------------
# Lines: orientation-grouped edge regions

def detect_line_segments(img, cfg: DetectorConfig = DetectorConfig()) -> list:
    """Straight edge segments, longest first.

    Edge pixels (gradient magnitude above threshold) are grouped into
    8-connected regions of similar gradient direction; each region is fitted
    with its principal axis. Two orientation quantisations offset by half a
    bin are combined greedily so edges near a bin boundary are not split.
    Segments are oriented so the brighter side lies to the right of p_s -> p_e
    in image coordinates (y down).
    """
    lum = as_luma(img)
    if lum.shape[0] < 3 or lum.shape[1] < 3:
        return []
    gx, gy = gradient_components(lum)
    mag = np.hypot(gx, gy)
    edge = mag > cfg.edge_threshold
    if not edge.any():
        return []
    ang = np.arctan2(gy, gx)
    nb = cfg.angle_bins
    yy, xx = np.nonzero(edge)
    w = mag[yy, xx]
    a = ang[yy, xx]
    flat_index = yy * lum.shape[1] + xx
    candidates = []
    for offset in (0.0, 0.5):
        q = np.floor(a / (2 * np.pi) * nb + offset).astype(int) % nb
        for b in range(nb):
            sel = q == b
            if sel.sum() < cfg.min_line_length:
                continue
            grid = np.zeros(lum.shape, dtype=bool)
            grid[yy[sel], xx[sel]] = True
            lab, n = ndimage.label(grid, structure=np.ones((3, 3)))
            if n == 0:
                continue
            lid = lab[yy[sel], xx[sel]]
            candidates.extend(
                _fit_regions(lid, n, xx[sel], yy[sel], w[sel], gx[yy[sel], xx[sel]],
                             gy[yy[sel], xx[sel]], flat_index[sel], cfg)
            )
    candidates.sort(key=lambda c: (-c[0].length, c[0].p_s, c[0].p_e))
    used = np.zeros(lum.size, dtype=bool)
    segments = []
    for seg, pix in candidates:
        if used[pix].mean() >= 0.5:
            continue
        used[pix] = True
        segments.append(seg)
        if len(segments) >= cfg.max_lines:
            break
    return segments


def _fit_regions(lid, n, xs, ys, w, gxs, gys, flat, cfg):
    counts = np.bincount(lid, minlength=n + 1)
    good = np.flatnonzero(counts >= cfg.min_line_length)
    good = good[good > 0]
    if len(good) == 0:
        return []
    sw = np.bincount(lid, w, n + 1)
    cx = np.bincount(lid, w * xs, n + 1) / np.maximum(sw, 1e-300)
    cy = np.bincount(lid, w * ys, n + 1) / np.maximum(sw, 1e-300)
    dx, dy = xs - cx[lid], ys - cy[lid]
    sxx = np.bincount(lid, w * dx * dx, n + 1) / np.maximum(sw, 1e-300)
    syy = np.bincount(lid, w * dy * dy, n + 1) / np.maximum(sw, 1e-300)
    sxy = np.bincount(lid, w * dx * dy, n + 1) / np.maximum(sw, 1e-300)
    mgx = np.bincount(lid, gxs, n + 1)
    mgy = np.bincount(lid, gys, n + 1)
    out = []
    order = np.argsort(lid, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    for r in good:
        cov = np.array([[sxx[r], sxy[r]], [sxy[r], syy[r]]])
        evals, evecs = np.linalg.eigh(cov)
        if math.sqrt(max(evals[0], 0.0)) > cfg.max_line_width:
            continue
        d = evecs[:, 1]
        g = np.array([mgx[r], mgy[r]])
        gn = np.linalg.norm(g)
        if gn == 0 or abs(d @ g) / gn > math.sin(math.radians(180.0 / cfg.angle_bins) * 1.5):
            continue
        # brighter side (gradient direction) to the right of travel in y-down coords
        if d[0] * g[1] - d[1] * g[0] < 0:
            d = -d
        idx = order[bounds[r]:bounds[r + 1]]
        proj = dx[idx] * d[0] + dy[idx] * d[1]
        t0, t1 = proj.min(), proj.max()
        if t1 - t0 < cfg.min_line_length or len(idx) < 0.8 * (t1 - t0):
            continue
        c = np.array([cx[r], cy[r]])
        seg = LineSegment(tuple(c + t0 * d), tuple(c + t1 * d))
        out.append((seg, flat[idx]))
    return out


def _apply_h(h, pts):
    ph = np.column_stack([pts, np.ones(len(pts))]) @ np.asarray(h).T
    return ph[:, :2] / ph[:, 2:3]


def match_line_segments(src_segs: list, dst_segs: list, homography=None,
                        cfg: DetectorConfig = DetectorConfig()) -> list:
    """Mutual-best geometric matching of segments after transfer by ``homography``.

    Returns a list of ``(i, j)`` index pairs.
    """
    if not src_segs or not dst_segs:
        return []
    if homography is None:
        h = np.eye(3)
        ang_tol, dist_tol = cfg.fallback_angle_tol, cfg.fallback_dist_tol
    else:
        h = np.asarray(homography, dtype=np.float64)
        ang_tol, dist_tol = cfg.line_angle_tol, cfg.line_dist_tol
    s_end = np.array([s.endpoints() for s in src_segs])
    pred = _apply_h(h, s_end.reshape(-1, 2)).reshape(-1, 2, 2)
    d_end = np.array([s.endpoints() for s in dst_segs])
    d_lines = np.array([s.homogeneous() for s in dst_segs])

    pdir = pred[:, 1] - pred[:, 0]
    plen = np.linalg.norm(pdir, axis=1)
    pdir = pdir / np.maximum(plen, 1e-12)[:, None]
    ddir = d_end[:, 1] - d_end[:, 0]
    dlen = np.linalg.norm(ddir, axis=1)
    ddir = ddir / dlen[:, None]

    cosang = pdir @ ddir.T
    # distance of both predicted endpoints to each target line
    dist0 = np.abs(pred[:, 0, 0, None] * d_lines[:, 0] + pred[:, 0, 1, None] * d_lines[:, 1] + d_lines[:, 2])
    dist1 = np.abs(pred[:, 1, 0, None] * d_lines[:, 0] + pred[:, 1, 1, None] * d_lines[:, 1] + d_lines[:, 2])
    dist = 0.5 * (dist0 + dist1)
    # overlap of the predicted interval with the target interval along the target direction
    t_p0 = np.einsum("sk,dk->sd", pred[:, 0], ddir) - np.einsum("dk,dk->d", d_end[:, 0], ddir)
    t_p1 = np.einsum("sk,dk->sd", pred[:, 1], ddir) - np.einsum("dk,dk->d", d_end[:, 0], ddir)
    lo = np.maximum(np.minimum(t_p0, t_p1), 0.0)
    hi = np.minimum(np.maximum(t_p0, t_p1), dlen[None, :])
    overlap = hi - lo

    ok = (cosang > math.cos(math.radians(ang_tol))) & (dist < dist_tol) & (overlap > 0)
    cost = np.where(ok, dist + (1.0 - cosang) * 100.0 - 1e-3 * overlap, np.inf)
    best_d = np.argmin(cost, axis=1)
    best_s = np.argmin(cost, axis=0)
    pairs = []
    for i, j in enumerate(best_d):
        if np.isfinite(cost[i, j]) and best_s[j] == i:
            pairs.append((i, int(j)))
    return pairs


def _homography_from_points(points):
    from .geometry import RansacConfig, RansacError, ransac_homography

    if len(points) < 4:
        return None
    try:
        res = ransac_homography(CorrespondenceSet(points), RansacConfig(min_inliers=4))
    except (RansacError, ValueError):
        return None
    return res.model.h


def _split_matches(src_segs, dst_segs, homography, cfg):
    pairs = match_line_segments(src_segs, dst_segs, homography, cfg)
    matched_idx = {i for i, _ in pairs}
    matched = [LineMatch(src_segs[i], dst_segs[j]) for i, j in pairs]
    unmatched = [s for i, s in enumerate(src_segs) if i not in matched_idx]
    return matched, unmatched


def detect_and_match_lines(src, dst, cfg: DetectorConfig = DetectorConfig(), homography=None):
    """Detect segments in both images and match them.

    Returns ``(matched, unmatched_src)``; every detected source segment appears
    in exactly one of the two lists. When no ``homography`` is given one is
    estimated from point matches; without enough points the segments are
    compared in place with wider tolerances.
    """
    src_segs = detect_line_segments(src, cfg)
    if not src_segs:
        return [], []
    dst_segs = detect_line_segments(dst, cfg)
    if homography is None and dst_segs:
        homography = _homography_from_points(detect_and_match_points(src, dst, cfg))
    return _split_matches(src_segs, dst_segs, homography, cfg)


def detect_correspondences(src, dst, cfg: DetectorConfig = DetectorConfig()) -> CorrespondenceSet:
    """Built-in point and line correspondences for an image pair."""
    points = detect_and_match_points(src, dst, cfg)
    src_segs = detect_line_segments(src, cfg)
    dst_segs = detect_line_segments(dst, cfg) if src_segs else []
    homography = _homography_from_points(points) if dst_segs else None
    matched, unmatched = _split_matches(src_segs, dst_segs, homography, cfg)
    return CorrespondenceSet(points, matched, unmatched)
