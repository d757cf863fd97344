"""Two-stage stitching: global homography, then mesh refinement, then blending."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import energy as en
from .energy import EnergySystem, EnergyWeights, TargetField
from .features import CorrespondenceSet, DetectorConfig, detect_correspondences
from .geometry import (
    GeometryError, Homography, Mesh, RansacConfig, RansacError, apply_h, bounding_box, footprint,
    inlier_subset, quad_homography, ransac_homography, transfer_correspondences, warp_image,
)
from .imaging import (
    RasterImage, as_luma, bilinear_arrays, clamp_levels, downsample, downsample_mask, support_valid,
)
from .metrics import MetricConfig, MetricError, evaluate

log = logging.getLogger(__name__)

# canvas area allowed relative to the summed input areas before the global warp is rejected
MAX_CANVAS_GROWTH = 25.0


class StitchError(RuntimeError):
    """Failure tagged with the pipeline stage: FEATURES, RANSAC, OVERLAP or SOLVE."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class StitchConfig:
    mesh_rows: int = 32
    mesh_cols: int = 32
    levels: int = 3
    max_iterations: int = 10
    convergence_threshold: float = 1.0
    photometric_stride: int = 4
    line_spacing: float = 10.0
    window: int = 3
    seed: int = 42
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        for name in ("mesh_rows", "mesh_cols", "levels", "max_iterations", "photometric_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be > 0")

    _NESTED = {"weights": EnergyWeights, "detector": DetectorConfig, "ransac": RansacConfig}

    # flat key prefix per nested group; RANSAC fields would otherwise collide with top-level names
    _PREFIX = {"weights": "", "detector": "", "ransac": "ransac_"}

    @classmethod
    def _flat_names(cls) -> dict:
        """Flat key -> (group or None, field name)."""
        names = {f.name: (None, f.name) for f in dataclasses.fields(cls) if f.name not in cls._NESTED}
        for group, typ in cls._NESTED.items():
            for f in dataclasses.fields(typ):
                if group == "ransac" and f.name == "seed":
                    continue  # the single top-level seed drives all randomness
                names[cls._PREFIX[group] + f.name] = (group, f.name)
        return names

    def to_flat(self) -> dict:
        out = {}
        for key, (group, name) in self._flat_names().items():
            v = getattr(self if group is None else getattr(self, group), name)
            out[key] = v
        return dict(sorted(out.items()))

    @classmethod
    def from_flat(cls, values: dict, base: "StitchConfig | None" = None) -> "StitchConfig":
        """Build from a flat mapping of field names (nested config fields included)."""
        base = base or cls()
        names = cls._flat_names()
        top, nested = {}, {k: {} for k in cls._NESTED}
        for key, val in values.items():
            if key not in names:
                raise ValueError(f"unknown configuration key {key!r}")
            group, name = names[key]
            if group is None:
                top[name] = val
            else:
                nested[group][name] = val
        parts = {g: dataclasses.replace(getattr(base, g), **nested[g]) for g in cls._NESTED}
        return dataclasses.replace(base, **top, **parts)


@dataclass
class LevelTrace:
    level: int
    scale: int
    iterations: int = 0
    converged: bool = False
    samples: int = 0
    skipped_samples: int = 0
    energy_before: list = field(default_factory=list)
    energy_after: list = field(default_factory=list)
    displacements: list = field(default_factory=list)
    rejected_steps: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class StitchReport:
    homography: Homography
    point_matches: int
    line_matches: int
    point_inliers: int
    line_inliers: int
    ransac_iterations: int
    dropped_features: int
    canvas_offset: tuple
    canvas_size: tuple
    mesh: Mesh
    levels: list
    rmse_ncc: float
    rmse_ncc_global: float
    overlap_pixels: int
    skipped_samples: int
    degenerate_cells: int
    term_energies: dict
    panorama: RasterImage = None
    warped_source: np.ndarray = None
    warped_mask: np.ndarray = None
    global_source: np.ndarray = None
    global_mask: np.ndarray = None
    target_canvas: np.ndarray = None
    target_mask: np.ndarray = None

    def mean_vertex_displacement(self) -> float:
        return self.mesh.mean_displacement()

    def to_dict(self, outputs: dict | None = None) -> dict:
        return {
            "homography": self.homography.to_list(),
            "point_matches": self.point_matches,
            "line_matches": self.line_matches,
            "point_inliers": self.point_inliers,
            "line_inliers": self.line_inliers,
            "ransac_iterations": self.ransac_iterations,
            "dropped_features": self.dropped_features,
            "canvas": {"offset": list(self.canvas_offset), "size": list(self.canvas_size)},
            "mesh": {
                "rows": self.mesh.rows, "cols": self.mesh.cols,
                "origin": list(self.mesh.origin), "cell_size": list(self.mesh.cell_size),
                "vertices": self.mesh.vertices_flat().tolist(),
            },
            "levels": [lv.to_dict() for lv in self.levels],
            "rmse_ncc": self.rmse_ncc,
            "rmse_ncc_global": self.rmse_ncc_global,
            "overlap_pixels": self.overlap_pixels,
            "skipped_samples": self.skipped_samples,
            "degenerate_cells": self.degenerate_cells,
            "term_energies": dict(sorted(self.term_energies.items())),
            "outputs": dict(sorted((outputs or {}).items())),
        }


# --------------------------------------------------------------------------
# Rendering and blending

def _quad_ok(quad: np.ndarray, min_area: float = 1e-3) -> bool:
    """Convex, consistently oriented and with non-negligible area."""
    crosses = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        crosses.append(a[0] * b[1] - a[1] * b[0])
    crosses = np.array(crosses)
    if not (np.all(crosses > 0) or np.all(crosses < 0)):
        return False
    x, y = quad[:, 0], quad[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return area > min_area


def warp_mesh(src, src_mask, mesh: Mesh, out_size=None, source_map=None):
    """Render ``src`` deformed by the mesh.

    Each cell maps its deformed quad back to its rest rectangle through the
    homography fitted to the four vertex pairs; output pixels inside the quad
    are sampled bilinearly from ``src``. With ``source_map`` (3x3), rest
    positions are first sent through it, so an unwarped original can be
    rendered in one resampling step. Returns ``(warped, mask,
    degenerate_cells)``; degenerate cells are left empty.
    """
    data = np.asarray(getattr(src, "data", src), dtype=np.float64)
    src_mask = np.asarray(src_mask, dtype=bool)
    h, w = data.shape[:2] if out_size is None else (out_size[1], out_size[0])
    out = np.zeros((h, w) + data.shape[2:])
    out_mask = np.zeros((h, w), dtype=bool)
    rest = mesh.rest
    verts = mesh.vertices
    degenerate = 0
    eps = 1e-7
    for r in range(mesh.rows):
        for c in range(mesh.cols):
            quad = np.array([verts[r, c], verts[r, c + 1], verts[r + 1, c + 1], verts[r + 1, c]])
            rect = np.array([rest[r, c], rest[r, c + 1], rest[r + 1, c + 1], rest[r + 1, c]])
            if not np.all(np.isfinite(quad)) or not _quad_ok(quad):
                degenerate += 1
                continue
            x0 = max(int(np.floor(quad[:, 0].min())), 0)
            x1 = min(int(np.ceil(quad[:, 0].max())), w - 1)
            y0 = max(int(np.floor(quad[:, 1].min())), 0)
            y1 = min(int(np.ceil(quad[:, 1].max())), h - 1)
            if x1 < x0 or y1 < y0:
                continue
            hq = quad_homography(quad, rect)
            ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
            px = xs.ravel().astype(np.float64)
            py = ys.ravel().astype(np.float64)
            den = hq[2, 0] * px + hq[2, 1] * py + hq[2, 2]
            sx = (hq[0, 0] * px + hq[0, 1] * py + hq[0, 2]) / den
            sy = (hq[1, 0] * px + hq[1, 1] * py + hq[1, 2]) / den
            inside = ((sx >= rect[0, 0] - eps) & (sx <= rect[1, 0] + eps)
                      & (sy >= rect[0, 1] - eps) & (sy <= rect[2, 1] + eps))
            if not inside.any():
                continue
            px, py, sx, sy = px[inside].astype(int), py[inside].astype(int), sx[inside], sy[inside]
            # round-off from the per-cell fit must not push samples off the cell or off lattice points
            sx = np.clip(sx, rect[0, 0], rect[1, 0])
            sy = np.clip(sy, rect[0, 1], rect[2, 1])
            sx = np.where(np.abs(sx - np.round(sx)) < 1e-9, np.round(sx), sx)
            sy = np.where(np.abs(sy - np.round(sy)) < 1e-9, np.round(sy), sy)
            if source_map is not None:
                m = apply_h(source_map, np.column_stack([sx, sy]))
                sx, sy = m[:, 0], m[:, 1]
                bad = ~np.isfinite(sx) | ~np.isfinite(sy)
                sx[bad] = -1.0
                sy[bad] = -1.0
            vals, ok = bilinear_arrays(data, sx, sy)
            ok &= support_valid(src_mask, sx, sy)
            out[py[ok], px[ok]] = vals[ok]
            out_mask[py[ok], px[ok]] = True
    return np.clip(out, 0.0, 1.0), out_mask, degenerate


def _boundary_distance(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def blend_linear(a, mask_a, b, mask_b) -> RasterImage:
    """Feathered blend; overlap weights proportional to distance from each mask's edge."""
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"canvas sizes differ: {a.shape[:2]} vs {b.shape[:2]}")
    if a.ndim != b.ndim:
        a = a if a.ndim == 3 else np.repeat(a[:, :, None], 3, axis=2)
        b = b if b.ndim == 3 else np.repeat(b[:, :, None], 3, axis=2)
    ma = np.asarray(mask_a, dtype=bool)
    mb = np.asarray(mask_b, dtype=bool)
    da = _boundary_distance(ma)
    db = _boundary_distance(mb)
    both = ma & mb
    wa = np.zeros(ma.shape)
    wa[ma & ~mb] = 1.0
    wa[both] = da[both] / (da[both] + db[both])
    wb = np.where(ma | mb, 1.0 - wa, 0.0)
    if a.ndim == 3:
        wa, wb = wa[..., None], wb[..., None]
    return RasterImage(np.clip(wa * a + wb * b, 0.0, 1.0))


# --------------------------------------------------------------------------
# Optimisation

def _scaled_correspondences(corr: CorrespondenceSet, s: float):
    p, q = corr.point_arrays()
    segs, lines, _ = corr.line_arrays()
    lines = lines.copy()
    lines[:, 2] /= s
    all_lines = np.array([seg.endpoints() for seg in corr.all_source_lines()]).reshape(-1, 2, 2)
    return p / s, q / s, segs / s, lines, all_lines / s


def build_geometric_terms(mesh: Mesh, pts, pts_prime, segs, lines, all_segs, weights: EnergyWeights,
                          spacing: float = 10.0) -> list:
    """Residual blocks of the point, line, similarity and collinearity terms."""
    sys = EnergySystem(mesh.n_vertices)
    en.add_point_term(sys, mesh, pts, pts_prime, weights.alpha)
    en.add_line_term(sys, mesh, segs, lines, weights.beta, spacing=spacing)
    en.add_collinearity_term(sys, mesh, all_segs, weights.delta, spacing=spacing)
    en.add_similarity_term(sys, mesh, weights.eta)
    return sys.blocks


def optimize_mesh(mesh: Mesh, corr: CorrespondenceSet, src_pyr, smask_pyr, tgt_pyr, tmask_pyr,
                  cfg: StitchConfig) -> list:
    """Coarse-to-fine iterated minimisation; updates ``mesh.vertices`` in place.

    At every level the photometric term is re-linearised after each solve
    until the mean vertex displacement drops below the threshold (in that
    level's pixels) or the iteration cap is reached.
    """
    traces = []
    v_full = mesh.vertices.copy()
    for lev in range(len(src_pyr) - 1, -1, -1):
        s = 2 ** lev
        mesh_l = Mesh((mesh.origin[0] / s, mesh.origin[1] / s),
                      (mesh.cell_size[0] / s, mesh.cell_size[1] / s), mesh.rows, mesh.cols, v_full / s)
        pts, pts_prime, segs, lines, all_segs = _scaled_correspondences(corr, s)
        static = build_geometric_terms(mesh_l, pts, pts_prime, segs, lines, all_segs, cfg.weights,
                                       cfg.line_spacing / s)
        trace = LevelTrace(level=lev, scale=s)
        samples = None
        field_ = None
        if cfg.weights.gamma > 0:
            stride = max(1, cfg.photometric_stride // s)
            try:
                samples = en.sample_photometric(src_pyr[lev], smask_pyr[lev], tmask_pyr[lev], mesh_l, stride)
            except en.EmptyOverlapError as exc:
                raise StitchError("OVERLAP", f"level {lev}: {exc}") from None
            field_ = TargetField.build(tgt_pyr[lev], None, tmask_pyr[lev])
            trace.samples = len(samples)
        for _ in range(cfg.max_iterations):
            sys = EnergySystem(mesh_l.n_vertices)
            sys.blocks = list(static)
            if samples is not None:
                trace.skipped_samples += en.add_photometric_term(
                    sys, samples, None, None, mesh_l, cfg.weights.gamma, cfg.weights.lam, field=field_)
            x0 = mesh_l.vertices_flat().ravel().copy()
            e0 = sys.energy(x0)
            try:
                x1 = en.solve(sys).ravel()
            except en.SingularSystemError as exc:
                raise StitchError("SOLVE", f"level {lev}: {exc}") from None
            e1 = sys.energy(x1)
            if not e1 <= e0:
                # round-off only: the minimiser cannot be worse than the start
                log.debug("level %d: solve raised energy %.17g -> %.17g, keeping vertices", lev, e0, e1)
                x1, e1 = x0, e0
                trace.rejected_steps += 1
            disp = float(np.mean(np.linalg.norm((x1 - x0).reshape(-1, 2), axis=1)))
            mesh_l.set_vertices(x1)
            trace.iterations += 1
            trace.energy_before.append(e0)
            trace.energy_after.append(e1)
            trace.displacements.append(disp)
            log.debug("level %d iter %d: E %.6g -> %.6g, mean displacement %.4f",
                      lev, trace.iterations, e0, e1, disp)
            if disp < cfg.convergence_threshold:
                trace.converged = True
                break
        traces.append(trace)
        v_full = mesh_l.vertices * s
    mesh.set_vertices(v_full)
    return traces


def _final_term_energies(mesh: Mesh, corr, src_l, smask, tgt_l, tmask, cfg: StitchConfig) -> dict:
    pts, pts_prime, segs, lines, all_segs = _scaled_correspondences(corr, 1)
    sys = EnergySystem(mesh.n_vertices)
    sys.blocks = build_geometric_terms(mesh, pts, pts_prime, segs, lines, all_segs, cfg.weights, cfg.line_spacing)
    x = mesh.vertices_flat().ravel()
    out = {k: 0.0 for k in ("point", "line", "similarity", "collinearity")}
    out.update(sys.term_energies(x))
    try:
        samples = en.sample_photometric(src_l, smask, tmask, mesh, cfg.photometric_stride)
        field_ = TargetField.build(tgt_l, None, tmask)
        e, _ = en.photometric_energy(samples, field_, mesh.vertices_flat(), cfg.weights.lam)
        out["photometric"] = cfg.weights.gamma * e
    except en.EmptyOverlapError:
        out["photometric"] = 0.0
    return out


# --------------------------------------------------------------------------
# Driver

def global_canvas(h: Homography, src_shape, dst_shape):
    """Union canvas of the warped source footprint and the target."""
    corners = footprint(h, src_shape[1], src_shape[0])
    tgt = np.array([[0, 0], [dst_shape[1] - 1, dst_shape[0] - 1]], dtype=np.float64)
    offset, size = bounding_box(np.vstack([corners, tgt]))
    return corners, offset, size


def stitch(img1: RasterImage, img2: RasterImage, corr: CorrespondenceSet | None = None,
           cfg: StitchConfig = StitchConfig()) -> StitchReport:
    """Stitch ``img1`` (source, warped) onto ``img2`` (target, fixed)."""
    if not isinstance(img1, RasterImage):
        img1 = RasterImage(img1)
    if not isinstance(img2, RasterImage):
        img2 = RasterImage(img2)

    # (1) features and global homography
    if corr is None:
        corr = detect_correspondences(img1, img2, cfg.detector)
    n_points, n_lines = len(corr.points), len(corr.matched_lines)
    if n_points < 4:
        raise StitchError("FEATURES", f"only {n_points} point matches, need at least 4")
    rcfg = dataclasses.replace(cfg.ransac, seed=cfg.seed)
    try:
        ransac = ransac_homography(corr, rcfg)
    except GeometryError as exc:
        raise StitchError("RANSAC", str(exc)) from None
    if len(ransac.point_inliers) < 4:
        raise StitchError("RANSAC", f"only {len(ransac.point_inliers)} inlier points, need at least 4")
    h = ransac.model
    inliers = inlier_subset(corr, ransac)

    try:
        corners, offset, size = global_canvas(h, img1.shape, img2.shape)
    except GeometryError as exc:
        raise StitchError("OVERLAP", str(exc)) from None
    if size[0] * size[1] > MAX_CANVAS_GROWTH * (img1.width * img1.height + img2.width * img2.height):
        raise StitchError("OVERLAP", f"global warp produces an oversized canvas {size}")

    src_c, src_mask = warp_image(img1.data, h, offset, size)
    tgt_c = np.zeros((size[1], size[0]) + img2.data.shape[2:])
    tgt_mask = np.zeros((size[1], size[0]), dtype=bool)
    tx, ty = -offset[0], -offset[1]
    tgt_c[ty:ty + img2.height, tx:tx + img2.width] = img2.data
    tgt_mask[ty:ty + img2.height, tx:tx + img2.width] = True
    if not (src_mask & tgt_mask).any():
        raise StitchError("OVERLAP", "images do not overlap after global alignment")

    local, dropped = transfer_correspondences(inliers, h, offset, size)

    # (2) mesh refinement
    lo = corners.min(axis=0) - np.asarray(offset)
    hi = corners.max(axis=0) - np.asarray(offset)
    lo = np.maximum(np.floor(lo), 0.0)
    hi = np.minimum(np.ceil(hi), np.array([size[0] - 1, size[1] - 1], dtype=np.float64))
    mesh = Mesh.covering(lo[0], lo[1], hi[0], hi[1], cfg.mesh_rows, cfg.mesh_cols)

    src_l, tgt_l = as_luma(src_c), as_luma(tgt_c)
    n_levels = clamp_levels((size[1], size[0]), cfg.levels, 2 * max(cfg.mesh_rows, cfg.mesh_cols))
    src_pyr, smask_pyr, tgt_pyr, tmask_pyr = [src_l], [src_mask], [tgt_l], [tgt_mask]
    for _ in range(1, n_levels):
        src_pyr.append(downsample(src_pyr[-1]))
        tgt_pyr.append(downsample(tgt_pyr[-1]))
        smask_pyr.append(downsample_mask(smask_pyr[-1]))
        tmask_pyr.append(downsample_mask(tmask_pyr[-1]))
    traces = optimize_mesh(mesh, local, src_pyr, smask_pyr, tgt_pyr, tmask_pyr, cfg)

    # render from the original source so pixels are resampled only once
    to_source = np.linalg.inv(h.h) @ np.array([[1.0, 0, offset[0]], [0, 1.0, offset[1]], [0, 0, 1.0]])
    warped, wmask, degenerate = warp_mesh(img1.data, np.ones(img1.shape, bool), mesh, size, to_source)

    # (3) blending and evaluation
    panorama = blend_linear(warped, wmask, tgt_c, tgt_mask)
    mcfg = MetricConfig(window=cfg.window)
    try:
        final = evaluate(warped, wmask, tgt_c, tgt_mask, mcfg)
        initial = evaluate(src_c, src_mask, tgt_c, tgt_mask, mcfg)
    except MetricError as exc:
        raise StitchError("OVERLAP", str(exc)) from None

    return StitchReport(
        homography=h,
        point_matches=n_points,
        line_matches=n_lines,
        point_inliers=len(ransac.point_inliers),
        line_inliers=len(ransac.line_inliers),
        ransac_iterations=ransac.iterations_used,
        dropped_features=dropped,
        canvas_offset=tuple(offset),
        canvas_size=tuple(size),
        mesh=mesh,
        levels=traces,
        rmse_ncc=final.rmse_ncc,
        rmse_ncc_global=initial.rmse_ncc,
        overlap_pixels=final.overlap_pixels,
        skipped_samples=sum(t.skipped_samples for t in traces),
        degenerate_cells=degenerate,
        term_energies=_final_term_energies(mesh, local, src_l, src_mask, tgt_l, tgt_mask, cfg),
        panorama=panorama,
        warped_source=warped,
        warped_mask=wmask,
        global_source=src_c,
        global_mask=src_mask,
        target_canvas=tgt_c,
        target_mask=tgt_mask,
    )
