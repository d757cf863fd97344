"""The mesh warping energy as one sparse quadratic form.

Unknowns are the stacked vertex coordinates ``x = [x0, y0, x1, y1, ...]``.
Every term contributes residuals ``r(x) = J x - k`` with a weight ``w``; the
system keeps the blocks and exposes the normal form

    E(x) = x^T A x - 2 b^T x + c,   A = sum w J^T J,  b = sum w J^T k,  c = sum w k^T k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .geometry import Mesh, anchor_arrays
from .imaging import bilinear_arrays, gradient_components, gradient_magnitude, support_valid

DATA_TERMS = ("point", "line", "photometric", "photometric_gradient")


class EmptyOverlapError(ValueError):
    pass


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnergyWeights:
    alpha: float = 1.0   # point correspondences
    beta: float = 1.0    # line correspondences
    gamma: float = 1.0   # photometric
    delta: float = 1.0   # line collinearity
    eta: float = 0.2     # similarity
    lam: float = 1.0     # gradient-magnitude share inside the photometric term

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta", "eta", "lam"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"weight {name} must be a finite non-negative number, got {v}")

    def as_list(self) -> list:
        return [self.alpha, self.beta, self.gamma, self.delta, self.eta, self.lam]


@dataclass
class ResidualBlock:
    name: str
    jac: sp.csr_matrix
    target: np.ndarray
    weight: float

    def residual(self, x):
        return self.jac @ x - self.target

    def energy(self, x) -> float:
        r = self.residual(x)
        return float(self.weight * (r @ r))


class EnergySystem:
    def __init__(self, n_vertices: int):
        self.n_vertices = int(n_vertices)
        self.dim = 2 * self.n_vertices
        self.blocks: list[ResidualBlock] = []
        self._normal = None

    def add_residuals(self, name, rows, cols, vals, n_res, target, weight) -> None:
        """Append residuals ``J x - target`` given J as COO triplets."""
        if n_res == 0 or weight == 0:
            return
        jac = sp.csr_matrix((np.asarray(vals, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
                            shape=(n_res, self.dim))
        self.blocks.append(ResidualBlock(name, jac, np.asarray(target, dtype=np.float64), float(weight)))
        self._normal = None

    def _assemble(self):
        if self._normal is None:
            a = sp.csr_matrix((self.dim, self.dim))
            b = np.zeros(self.dim)
            c = 0.0
            for blk in self.blocks:
                jt = blk.jac.T.tocsr()
                a = a + blk.weight * (jt @ blk.jac)
                b += blk.weight * (jt @ blk.target)
                c += blk.weight * float(blk.target @ blk.target)
            a = ((a + a.T) * 0.5).tocsr()
            self._normal = (a, b, c)
        return self._normal

    @property
    def A(self) -> sp.csr_matrix:
        return self._assemble()[0]

    @property
    def b(self) -> np.ndarray:
        return self._assemble()[1]

    @property
    def c(self) -> float:
        return self._assemble()[2]

    def quadratic(self, x) -> float:
        """x^T A x - 2 b^T x + c."""
        a, b, c = self._assemble()
        x = np.asarray(x, dtype=np.float64).ravel()
        return float(x @ (a @ x) - 2.0 * b @ x + c)

    def energy(self, x) -> float:
        """Same value as :meth:`quadratic`, summed from the residual blocks."""
        x = np.asarray(x, dtype=np.float64).ravel()
        return float(sum(blk.energy(x) for blk in self.blocks))

    def gradient(self, x) -> np.ndarray:
        a, b, _ = self._assemble()
        return 2.0 * (a @ np.asarray(x, dtype=np.float64).ravel() - b)

    def term_energies(self, x) -> dict:
        x = np.asarray(x, dtype=np.float64).ravel()
        out = {}
        for blk in self.blocks:
            out[blk.name] = out.get(blk.name, 0.0) + blk.energy(x)
        return out

    def residual_count(self, name=None) -> int:
        return sum(blk.jac.shape[0] for blk in self.blocks if name is None or blk.name == name)


def _anchor_triplets(ids, weights, row_index, coord):
    """Triplets for sum_k w_k V[v_k].coord in the given rows."""
    rows = np.repeat(row_index, 4)
    cols = (2 * ids + coord).ravel()
    return rows, cols, weights.ravel()


def key_points(seg, spacing: float = 10.0, min_points: int = 3, count=None):
    """Uniform key points along a segment, both endpoints included.

    Returns ``(points (n, 2), u (n,))`` with ``u`` the 1-D coordinate in
    [0, 1] from ``p_s`` to ``p_e``.
    """
    seg = np.asarray(seg, dtype=np.float64).reshape(2, 2)
    if count is None:
        length = float(np.linalg.norm(seg[1] - seg[0]))
        count = max(min_points, int(length // spacing) + 1)
    u = np.linspace(0.0, 1.0, int(count))
    return seg[0] + u[:, None] * (seg[1] - seg[0]), u


def add_point_term(sys: EnergySystem, mesh: Mesh, src_pts, dst_pts, weight: float = 1.0) -> int:
    """sum_i || sum_k w_k V[v_k] - p'_i ||^2 over matches anchored in the mesh.

    Returns the number of matches used.
    """
    src_pts = np.asarray(src_pts, dtype=np.float64).reshape(-1, 2)
    dst_pts = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 2)
    ids, w, inside = anchor_arrays(mesh, src_pts)
    ids, w, dst = ids[inside], w[inside], dst_pts[inside]
    n = len(ids)
    rx = _anchor_triplets(ids, w, 2 * np.arange(n), 0)
    ry = _anchor_triplets(ids, w, 2 * np.arange(n) + 1, 1)
    rows = np.concatenate([rx[0], ry[0]])
    cols = np.concatenate([rx[1], ry[1]])
    vals = np.concatenate([rx[2], ry[2]])
    sys.add_residuals("point", rows, cols, vals, 2 * n, dst.ravel(), weight)
    return n


def add_line_term(sys: EnergySystem, mesh: Mesh, src_segs, dst_lines, weight: float = 1.0,
                  spacing: float = 10.0, min_points: int = 3, samples_per_line=None) -> int:
    """Squared distance of each warped key point to its matched target line.

    ``dst_lines`` rows are [a', b', c']; they are normalised here so the
    residual is a'x + b'y + c' with a'^2 + b'^2 = 1. Returns the number of
    key points used.
    """
    src_segs = np.asarray(src_segs, dtype=np.float64).reshape(-1, 2, 2)
    lines = np.asarray(dst_lines, dtype=np.float64).reshape(-1, 3)
    pts, coef = [], []
    for seg, l in zip(src_segs, lines):
        kp, _ = key_points(seg, spacing, min_points, samples_per_line)
        pts.append(kp)
        coef.append(np.repeat((l / math.hypot(l[0], l[1]))[None, :], len(kp), axis=0))
    if not pts:
        return 0
    pts = np.vstack(pts)
    coef = np.vstack(coef)
    ids, w, inside = anchor_arrays(mesh, pts)
    ids, w, coef = ids[inside], w[inside], coef[inside]
    n = len(ids)
    r = np.arange(n)
    rx = _anchor_triplets(ids, w * coef[:, 0:1], r, 0)
    ry = _anchor_triplets(ids, w * coef[:, 1:2], r, 1)
    sys.add_residuals("line", np.concatenate([rx[0], ry[0]]), np.concatenate([rx[1], ry[1]]),
                      np.concatenate([rx[2], ry[2]]), n, -coef[:, 2], weight)
    return n


def _cell_triangles(mesh: Mesh):
    """(v1, v2, v3) per triangle: each quad gives (TL; TR, BL) and (BR; TR, BL)."""
    r, c = np.meshgrid(np.arange(mesh.rows), np.arange(mesh.cols), indexing="ij")
    tl = (r * (mesh.cols + 1) + c).ravel()
    tr = tl + 1
    bl = tl + mesh.cols + 1
    br = bl + 1
    v1 = np.concatenate([tl, br])
    v2 = np.concatenate([tr, tr])
    v3 = np.concatenate([bl, bl])
    return v1, v2, v3


def similarity_coordinates(mesh: Mesh):
    """Triangle vertex ids and the local (u, v) of v1 in the frame (v2, v3).

    V1 = V2 + u (V3 - V2) + v R90 (V3 - V2), R90 = [[0, 1], [-1, 0]].
    """
    v1, v2, v3 = _cell_triangles(mesh)
    rest = mesh.rest_flat()
    d = rest[v3] - rest[v2]
    e = rest[v1] - rest[v2]
    dd = np.sum(d * d, axis=1)
    assert np.all(dd > 0), "degenerate rest triangle"
    rd = np.column_stack([d[:, 1], -d[:, 0]])
    u = np.sum(e * d, axis=1) / dd
    v = np.sum(e * rd, axis=1) / dd
    return v1, v2, v3, u, v


def add_similarity_term(sys: EnergySystem, mesh: Mesh, weight: float = 0.2) -> int:
    """Per-triangle similarity residual over the 2 m n triangles of the mesh."""
    v1, v2, v3, u, v = similarity_coordinates(mesh)
    n = len(v1)
    rx = 2 * np.arange(n)
    ry = rx + 1
    one = np.ones(n)
    # r_x = V1x - V2x - u (V3x - V2x) - v (V3y - V2y)
    # r_y = V1y - V2y - u (V3y - V2y) + v (V3x - V2x)
    rows = np.concatenate([rx, rx, rx, rx, rx, ry, ry, ry, ry, ry])
    cols = np.concatenate([
        2 * v1, 2 * v2, 2 * v3, 2 * v2 + 1, 2 * v3 + 1,
        2 * v1 + 1, 2 * v2 + 1, 2 * v3 + 1, 2 * v2, 2 * v3,
    ])
    vals = np.concatenate([
        one, u - 1.0, -u, v, -v,
        one, u - 1.0, -u, -v, v,
    ])
    sys.add_residuals("similarity", rows, cols, vals, 2 * n, np.zeros(2 * n), weight)
    return n


def add_collinearity_term(sys: EnergySystem, mesh: Mesh, segments, weight: float = 1.0,
                          spacing: float = 10.0, min_points: int = 3, samples_per_line=None) -> int:
    """Keep interior key points at their rest 1-D coordinate between the warped endpoints.

    Segments with any key point outside the mesh are skipped. Returns the
    number of interior key points constrained.
    """
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 2)
    rows, cols, vals = [], [], []
    n = 0
    for seg in segments:
        kp, u = key_points(seg, spacing, min_points, samples_per_line)
        ids, w, inside = anchor_arrays(mesh, kp)
        if not inside.all() or len(kp) < 3:
            continue
        s_ids, s_w = ids[0], w[0]
        e_ids, e_w = ids[-1], w[-1]
        for j in range(1, len(kp) - 1):
            uj = u[j]
            all_ids = np.concatenate([ids[j], s_ids, e_ids])
            all_w = np.concatenate([w[j], -(1.0 - uj) * s_w, -uj * e_w])
            for coord in (0, 1):
                rows.append(np.full(12, 2 * n + coord))
                cols.append(2 * all_ids + coord)
                vals.append(all_w)
            n += 1
    if n:
        sys.add_residuals("collinearity", np.concatenate(rows), np.concatenate(cols),
                          np.concatenate(vals), 2 * n, np.zeros(2 * n), weight)
    return n


# --------------------------------------------------------------------------
# Photometric term

@dataclass
class PhotometricSampleSet:
    """Samples on the warped-source canvas with their rest-pose anchors."""

    positions: np.ndarray
    vertex_ids: np.ndarray
    weights: np.ndarray
    intensity: np.ndarray
    gradient: np.ndarray

    def __len__(self):
        return len(self.positions)


def _erode(mask: np.ndarray, iterations: int = 1, structure=None) -> np.ndarray:
    if iterations <= 0:
        return mask.astype(bool)
    return ndimage.binary_erosion(mask, structure=structure, iterations=iterations, border_value=0)


def sample_photometric(src_lum, src_mask, tgt_mask, mesh: Mesh, stride: int = 4) -> PhotometricSampleSet:
    """Samples on a regular ``stride`` grid over the overlap.

    A grid pixel is kept when both masks are set there, its four neighbours
    are valid in the source (gradient support) and it lies inside the mesh.
    """
    src_lum = np.asarray(src_lum, dtype=np.float64)
    src_mask = np.asarray(src_mask, dtype=bool)
    tgt_mask = np.asarray(tgt_mask, dtype=bool)
    stride = max(1, int(stride))
    ok = _erode(src_mask, 1) & tgt_mask
    grid = np.zeros_like(ok)
    grid[::stride, ::stride] = True
    ys, xs = np.nonzero(ok & grid)
    pos = np.column_stack([xs, ys]).astype(np.float64)
    ids, w, inside = anchor_arrays(mesh, pos)
    if not inside.any():
        raise EmptyOverlapError("no photometric samples: the overlap region is empty")
    pos, ids, w = pos[inside], ids[inside], w[inside]
    g = gradient_magnitude(src_lum).magnitude
    yi = pos[:, 1].astype(int)
    xi = pos[:, 0].astype(int)
    return PhotometricSampleSet(pos, ids, w, src_lum[yi, xi], g[yi, xi])


@dataclass
class TargetField:
    """Target intensity, gradient magnitude and their spatial derivatives."""

    intensity: np.ndarray
    grad_mag: np.ndarray
    valid: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    gx: np.ndarray
    gy: np.ndarray

    @classmethod
    def build(cls, target_lum, target_grad=None, target_mask=None) -> "TargetField":
        t = np.asarray(target_lum, dtype=np.float64)
        g = gradient_magnitude(t).magnitude if target_grad is None else np.asarray(
            getattr(target_grad, "magnitude", target_grad), dtype=np.float64)
        mask = np.ones(t.shape, dtype=bool) if target_mask is None else np.asarray(target_mask, dtype=bool)
        # intensities need 1 pixel of support for their derivatives, gradient magnitudes 2
        valid = _erode(mask, 2, structure=np.ones((3, 3), dtype=bool))
        ix, iy = gradient_components(t)
        gx, gy = gradient_components(g)
        return cls(t, g, valid, ix, iy, gx, gy)

    def sample(self, q: np.ndarray):
        """Values and derivatives at warped positions ``q``, plus a validity flag."""
        ok = support_valid(self.valid, q[:, 0], q[:, 1])
        vals = [bilinear_arrays(a, q[:, 0], q[:, 1])[0]
                for a in (self.intensity, self.ix, self.iy, self.grad_mag, self.gx, self.gy)]
        return ok, vals


def add_photometric_term(sys: EnergySystem, samples: PhotometricSampleSet, target, target_grad,
                         mesh: Mesh, gamma: float = 1.0, lam: float = 1.0, target_mask=None,
                         field: TargetField | None = None) -> int:
    """Gauss-Newton linearisation of the intensity and gradient-magnitude terms at ``mesh.vertices``.

    For each sample with current position q:
        T(q) + dT(q) . (w(V_new) - q) - S(p)      weight gamma
        G_T(q) + dG_T(q) . (w(V_new) - q) - G_S(p)  weight gamma * lam
    Samples whose q falls outside the valid target are skipped; the number
    skipped is returned.
    """
    if field is None:
        field = TargetField.build(getattr(target, "data", target), target_grad, target_mask)
    if len(samples) == 0:
        return 0
    q = np.einsum("nk,nkd->nd", samples.weights, mesh.vertices_flat()[samples.vertex_ids])
    ok, (t, tx, ty, g, gx, gy) = field.sample(q)
    skipped = int((~ok).sum())
    ids, w, q = samples.vertex_ids[ok], samples.weights[ok], q[ok]
    n = len(ids)
    if n == 0:
        return skipped
    r = np.arange(n)
    for name, val, dx, dy, ref, wt in (
        ("photometric", t[ok], tx[ok], ty[ok], samples.intensity[ok], gamma),
        ("photometric_gradient", g[ok], gx[ok], gy[ok], samples.gradient[ok], gamma * lam),
    ):
        rx = _anchor_triplets(ids, w * dx[:, None], r, 0)
        ry = _anchor_triplets(ids, w * dy[:, None], r, 1)
        k = dx * q[:, 0] + dy * q[:, 1] - val + ref
        sys.add_residuals(name, np.concatenate([rx[0], ry[0]]), np.concatenate([rx[1], ry[1]]),
                          np.concatenate([rx[2], ry[2]]), n, k, wt)
    return skipped


def photometric_energy(samples: PhotometricSampleSet, field: TargetField, vertices, lam: float = 1.0):
    """Non-linearised photometric energy at ``vertices`` over samples valid there.

    Returns ``(energy, n_valid)``.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    q = np.einsum("nk,nkd->nd", samples.weights, v[samples.vertex_ids])
    ok, (t, _, _, g, _, _) = field.sample(q)
    e = np.sum((t[ok] - samples.intensity[ok]) ** 2) + lam * np.sum((g[ok] - samples.gradient[ok]) ** 2)
    return float(e), int(ok.sum())


# --------------------------------------------------------------------------
# Solving

def solve(sys: EnergySystem) -> np.ndarray:
    """Minimiser of the quadratic form, as (n_vertices, 2) positions.

    Uses a sparse LU factorisation (deterministic) with one step of
    iterative refinement; raises :class:`SingularSystemError` when the
    system has no unique minimiser.
    """
    a, b, _ = sys._assemble()
    diag = a.diagonal()
    free = np.flatnonzero(diag <= 0)
    if len(free):
        verts = sorted({int(i) // 2 for i in free})
        raise SingularSystemError(
            f"{len(verts)} vertices carry no constraint (first: {verts[:5]}); "
            "add similarity or data terms covering the whole mesh")
    if not any(blk.name in DATA_TERMS for blk in sys.blocks):
        raise SingularSystemError("no data terms: a global similarity transform of the mesh is unconstrained")
    try:
        lu = spla.splu(a.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(f"normal matrix is singular ({exc}); "
                                  "the data terms do not fix the mesh position") from None
    x = lu.solve(b)
    res = b - a @ x
    x = x + lu.solve(res)
    res = a @ x - b
    bn = float(np.linalg.norm(b))
    if not np.all(np.isfinite(x)) or np.linalg.norm(res) > 1e-8 * max(bn, 1e-300):
        raise SingularSystemError(
            f"normal equations not solved to tolerance (|Ax-b| = {np.linalg.norm(res):.3g}, |b| = {bn:.3g}); "
            "the system is numerically singular")
    return x.reshape(-1, 2)


def write_triplets(sys: EnergySystem, path) -> None:
    """Dump (A, b, c) as text.

    Format: a header line ``# dim <n> c <c>``, then ``A <row> <col> <value>``
    for every stored nonzero of A, then ``b <index> <value>`` for every entry
    of b. Values use repr precision.
    """
    a, b, c = sys._assemble()
    coo = a.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# dim {sys.dim} c {c!r}\n")
        for i in order:
            fh.write(f"A {coo.row[i]} {coo.col[i]} {float(coo.data[i])!r}\n")
        for i, v in enumerate(b):
            fh.write(f"b {i} {float(v)!r}\n")


def read_triplets(path):
    """Inverse of :func:`write_triplets`: returns ``(A csr, b, c)``."""
    rows, cols, vals = [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        dim, c = int(header[2]), float(header[4])
        b = np.zeros(dim)
        for line in fh:
            parts = line.split()
            if parts[0] == "A":
                rows.append(int(parts[1]))
                cols.append(int(parts[2]))
                vals.append(float(parts[3]))
            elif parts[0] == "b":
                b[int(parts[1])] = float(parts[2])
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim)), b, c
