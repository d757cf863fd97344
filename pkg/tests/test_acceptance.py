"""End-to-end acceptance checks.

Each ``check_N`` returns ``(passed, detail)``. Under pytest the results are
asserted and a one-line summary per criterion is printed at the end of the
session; ``python3 tests/test_acceptance.py`` prints the same lines directly.
"""
import functools
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import _oracles as O  # noqa: E402
from _scenes import TermScene  # noqa: E402
from cpwstitch import cli  # noqa: E402
from cpwstitch import energy as en  # noqa: E402
from cpwstitch.features import CorrespondenceSet, LineMatch, LineSegment, PointMatch  # noqa: E402
from cpwstitch.geometry import GeometryError, Mesh, RansacConfig, dlt_estimate, ransac_homography  # noqa: E402
from cpwstitch.imaging import RasterImage, save_image  # noqa: E402
from cpwstitch.metrics import MetricConfig, rmse_ncc  # noqa: E402
from cpwstitch.pipeline import StitchConfig, stitch  # noqa: E402
from cpwstitch.synthetic import parallax_pair, texture  # noqa: E402

RESULTS: dict = {}

TERMS = ("point", "line", "similarity", "collinearity", "photometric")
PARALLAX_SEEDS = range(5)
PARALLAX_SIZE = (640, 480)


def record(n):
    def wrap(fn):
        @functools.wraps(fn)
        def inner():
            if n not in RESULTS:
                RESULTS[n] = fn()
            return RESULTS[n]
        return inner
    return wrap


def rel_err(got, want):
    return abs(got - want) / max(abs(want), 1e-300)


# ------------------------------------------------------------------ 1, 2: energy terms

def _direct(scene, term, verts, lin, maps):
    v = np.asarray(verts).reshape(-1, 2)
    if term == "point":
        return O.point_energy(scene.geom, v, scene.src_pts, scene.dst_pts)
    if term == "line":
        return O.line_energy(scene.geom, v, scene.segs, scene.lines)
    if term == "similarity":
        return O.similarity_energy(scene.geom, v)
    if term == "collinearity":
        return O.collinearity_energy(scene.geom, v, scene.all_segs)
    return O.linearized_photometric_energy(scene.geom, lin.reshape(-1, 2), v,
                                           scene.photometric_samples().positions, maps)


@record(1)
def check_1():
    scene = TermScene(seed=11)
    maps = O.photometric_maps(scene.src, scene.tgt)
    lin = scene.random_vertices(0.5)
    worst = {}
    for term in TERMS:
        sys_ = scene.system(term, lin_verts=lin)
        errs = []
        for _ in range(20):
            v = scene.random_vertices(1.0)
            errs.append(rel_err(sys_.quadratic(v), _direct(scene, term, v, lin, maps)))
        worst[term] = max(errs)
    ok = all(e <= 1e-9 for e in worst.values())
    return ok, "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())


@record(2)
def check_2():
    scene = TermScene(seed=12)
    maps = O.photometric_maps(scene.src, scene.tgt)
    lin = scene.random_vertices(0.5)
    total = en.EnergySystem(scene.mesh.n_vertices)
    for term in TERMS:
        total.blocks += scene.system(term, lin_verts=lin).blocks

    def direct(x):
        return sum(_direct(scene, t, x, lin, maps) for t in TERMS)

    h = 1e-3
    errs = []
    for _ in range(5):
        x = scene.random_vertices(1.0).ravel()
        fd = np.array([(direct(x + h * e) - direct(x - h * e)) / (2 * h) for e in np.eye(x.size)])
        g = total.gradient(x)
        errs.append(np.linalg.norm(fd - g) / np.linalg.norm(g))
    return max(errs) <= 1e-5, f"max rel err {max(errs):.1e} over 5 points"


# ------------------------------------------------------------------ 3: invariances

@record(3)
def check_3():
    rng = np.random.default_rng(3)
    mesh = Mesh((0.0, 0.0), (25.0, 18.75), 32, 32)
    sim = en.EnergySystem(mesh.n_vertices)
    en.add_similarity_term(sim, mesh, 1.0)
    col = en.EnergySystem(mesh.n_vertices)
    segs = []
    while len(segs) < 40:
        p = rng.uniform((0, 0), (800, 600))
        q = p + rng.uniform(-200, 200, 2)
        if 0 <= q[0] <= 800 and 0 <= q[1] <= 600 and np.hypot(*(q - p)) > 20:
            segs.append([p, q])
    en.add_collinearity_term(col, mesh, np.array(segs), 1.0)
    es, ec = [], []
    for _ in range(10):
        a = rng.uniform(0, 2 * np.pi)
        s = rng.uniform(0.5, 2.0)
        m = s * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        es.append(sim.energy(mesh.rest @ m.T + rng.uniform(-100, 100, 2)))
        aff = np.eye(2) + rng.normal(scale=0.3, size=(2, 2))
        ec.append(col.energy(mesh.rest @ aff.T + rng.uniform(-100, 100, 2)))
    ok = max(es) <= 1e-9 and max(ec) <= 1e-9
    return ok, f"max E_s {max(es):.1e}, max E_c {max(ec):.1e}"


# ------------------------------------------------------------------ 4: DLT and RANSAC

def _points(h, pts):
    return [PointMatch(tuple(p), tuple(O.map_h(h, p))) for p in pts]


def _lines(h, rng, n):
    out = []
    for _ in range(n):
        s, e = rng.uniform(0, 200, 2), rng.uniform(0, 200, 2)
        a, b = O.map_h(h, s - 0.2 * (e - s)), O.map_h(h, s + 1.1 * (e - s))
        out.append(LineMatch(LineSegment(tuple(s), tuple(e)), LineSegment(tuple(a), tuple(b))))
    return out


def check_4a():
    errs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        h = O.random_homography(rng)
        errs.append(dlt_estimate(_points(h, rng.uniform(0, 200, (4, 2)))).distance(O.normalize_h(h)))
    return max(errs) <= 1e-6, f"4 points: max Frobenius {max(errs):.1e}"


def check_4b():
    errs, failures = [], []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        h = O.random_homography(rng)
        try:
            est = dlt_estimate(_points(h, rng.uniform(0, 200, (2, 2))), _lines(h, rng, 2))
            errs.append(est.distance(O.normalize_h(h)))
        except GeometryError as exc:
            failures.append(type(exc).__name__)
    if failures:
        return False, f"2 points + 2 lines: {len(failures)}/10 raised {failures[0]} (one-parameter family)"
    return max(errs) <= 1e-6, f"2 points + 2 lines: max Frobenius {max(errs):.1e}"


def check_4c():
    worst_recall, worst_err = 1.0, 0.0
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        h = O.random_homography(rng)
        n_in, n_out = 60, 40
        src = rng.uniform(0, 200, (n_in + n_out, 2))
        dst = np.array([O.map_h(h, p) for p in src])
        dst[n_in:] = rng.uniform(dst.min(0) - 50, dst.max(0) + 50, (n_out, 2))
        perm = rng.permutation(n_in + n_out)
        corr = CorrespondenceSet([PointMatch(tuple(src[i]), tuple(dst[i])) for i in perm])
        truth = set(np.flatnonzero(perm < n_in).tolist())
        res = ransac_homography(corr, RansacConfig(seed=42))
        found = sorted(set(res.point_inliers) & truth)
        worst_recall = min(worst_recall, len(found) / len(truth))
        s, d = corr.point_arrays()
        worst_err = max(worst_err, float(np.linalg.norm(res.model.apply(s[found]) - d[found], axis=1).max()))
    ok = worst_recall >= 0.95 and worst_err <= 0.5
    return ok, f"40% outliers: min recall {worst_recall:.2f}, max reproj {worst_err:.1e} px"


@record(4)
def check_4():
    parts = [check_4a(), check_4b(), check_4c()]
    return all(p[0] for p in parts), "; ".join(d for _, d in parts)


# ------------------------------------------------------------------ 5, 6, 7: end to end

@functools.cache
def self_stitch():
    img = RasterImage(texture(600, 800, seed=5))
    t0 = time.perf_counter()
    rep = stitch(img, img)
    return rep, time.perf_counter() - t0


@functools.cache
def parallax_stitch(seed):
    img1, img2, _, _ = parallax_pair(seed=seed, width=PARALLAX_SIZE[0], height=PARALLAX_SIZE[1])
    t0 = time.perf_counter()
    rep = stitch(img1, img2)
    return rep, time.perf_counter() - t0


@record(5)
def check_5():
    rep, secs = self_stitch()
    dist = rep.homography.distance(np.eye(3))
    disp = rep.mean_vertex_displacement()
    ok = dist <= 1e-3 and disp <= 0.5 and rep.rmse_ncc <= 0.3 and secs <= 30
    return ok, f"800x600: |H-I| {dist:.1e}, displacement {disp:.3f} px, rmse_ncc {rep.rmse_ncc:.3f}, {secs:.1f} s"


@record(6)
def check_6():
    ratios, times = [], []
    for seed in PARALLAX_SEEDS:
        rep, secs = parallax_stitch(seed)
        ratios.append(rep.rmse_ncc / rep.rmse_ncc_global)
        times.append(secs)
    halved = sum(r <= 0.5 for r in ratios)
    ok = halved >= 4 and max(ratios) <= 1.05 and max(times) <= 120
    return ok, (f"{PARALLAX_SIZE[0]}x{PARALLAX_SIZE[1]}: final/global = "
                + ", ".join(f"{r:.3f}" for r in ratios) + f"; {halved}/5 halved; max {max(times):.1f} s")


def trace_violations(levels, cfg=StitchConfig()):
    bad = []
    for tr in levels:
        tr = tr if isinstance(tr, dict) else tr.to_dict()
        if tr["converged"]:
            if not tr["displacements"] or tr["displacements"][-1] >= cfg.convergence_threshold:
                bad.append(f"level {tr['level']} converged without meeting the threshold")
        elif tr["iterations"] != cfg.max_iterations:
            bad.append(f"level {tr['level']} stopped early at {tr['iterations']}")
        for k, (e0, e1) in enumerate(zip(tr["energy_before"], tr["energy_after"])):
            if not e1 <= e0:
                bad.append(f"level {tr['level']} solve {k} raised energy {e0!r} -> {e1!r}")
    return bad


@record(7)
def check_7():
    runs = [self_stitch()[0].levels] + [parallax_stitch(s)[0].levels for s in PARALLAX_SEEDS]
    runs.append(json.loads(cli_reports()[0])["levels"])
    bad = [v for levels in runs for v in trace_violations(levels)]
    traces = [tr if isinstance(tr, dict) else tr.to_dict() for levels in runs for tr in levels]
    solves = sum(len(tr["energy_before"]) for tr in traces)
    rejected = sum(tr["rejected_steps"] for tr in traces)
    detail = f"{len(runs)} stitches, {solves} solves, {rejected} round-off step(s) rejected"
    return not bad, detail + (": " + bad[0] if bad else ", no violations")


# ------------------------------------------------------------------ 8: metric

@record(8)
def check_8():
    errs, inv = [], []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        a = rng.uniform(size=(32, 32))
        b = 0.5 * a + 0.5 * rng.uniform(size=(32, 32))
        ma = rng.uniform(size=(32, 32)) > 0.15
        mb = rng.uniform(size=(32, 32)) > 0.15
        got = rmse_ncc(a, ma, b, mb, MetricConfig())
        errs.append(abs(got - O.brute_rmse_ncc(a, ma, b, mb, 3)))
        gain, bias = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        inv.append(max(rel_err(rmse_ncc(gain * a + bias, ma, b, mb), got),
                       rel_err(rmse_ncc(a, ma, gain * b + bias, mb), got)))
    ok = max(errs) <= 1e-9 and max(inv) <= 1e-12
    return ok, f"max |brute - fast| {max(errs):.1e}; max rel change under a*I+b {max(inv):.1e}"


# ------------------------------------------------------------------ 9: determinism

@functools.cache
def cli_reports():
    import tempfile
    work = Path(tempfile.mkdtemp(prefix="cpw-accept-"))
    img1, img2, _, _ = parallax_pair(seed=7, width=320, height=240)
    save_image(img1, work / "a.png")
    save_image(img2, work / "b.png")
    texts = []
    for _ in range(2):
        code = cli.main(["stitch", str(work / "a.png"), str(work / "b.png"), "-o", str(work / "pano.png"),
                         "--report", str(work / "report.json"), "--seed", "42"])
        assert code == 0
        texts.append((work / "report.json").read_bytes())
    return texts


@record(9)
def check_9():
    a, b = cli_reports()
    return a == b, f"two CLI runs, {len(a)} byte reports, identical={a == b}"


# ------------------------------------------------------------------ pytest entry points

def test_criterion_1_term_oracles():
    ok, detail = check_1()
    assert ok, detail


def test_criterion_2_gradient():
    ok, detail = check_2()
    assert ok, detail


def test_criterion_3_invariances():
    ok, detail = check_3()
    assert ok, detail


def test_criterion_4a_dlt_four_points():
    ok, detail = check_4a()
    assert ok, detail


def test_criterion_4b_dlt_two_points_two_lines():
    check_4()
    ok, detail = check_4b()
    assert ok, detail


def test_criterion_4c_ransac_outliers():
    ok, detail = check_4c()
    assert ok, detail


@pytest.mark.slow
def test_criterion_5_self_stitch():
    ok, detail = check_5()
    assert ok, detail


@pytest.mark.slow
def test_criterion_6_parallax():
    ok, detail = check_6()
    assert ok, detail


@pytest.mark.slow
def test_criterion_7_convergence():
    ok, detail = check_7()
    assert ok, detail


def test_criterion_8_metric():
    ok, detail = check_8()
    assert ok, detail


@pytest.mark.slow
def test_criterion_9_determinism():
    ok, detail = check_9()
    assert ok, detail


CHECKS = [check_1, check_2, check_3, check_4, check_5, check_6, check_7, check_8, check_9]


def summary_lines():
    return [f"criterion {n}: {'PASS' if RESULTS[n][0] else 'FAIL'}  {RESULTS[n][1]}" for n in sorted(RESULTS)]


if __name__ == "__main__":
    for check in CHECKS:
        check()
    print("\n".join(summary_lines()))
    sys.exit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
