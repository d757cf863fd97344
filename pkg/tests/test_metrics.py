import numpy as np
import pytest

import _oracles as O
from cpwstitch.imaging import RasterImage
from cpwstitch.metrics import MetricConfig, MetricError, evaluate, ncc_map, rmse_ncc


def random_pair(rng, n=32):
    a = rng.uniform(size=(n, n))
    b = 0.6 * a + 0.4 * rng.uniform(size=(n, n))
    ma = rng.uniform(size=(n, n)) > 0.1
    mb = np.zeros((n, n), bool)
    mb[2:, 4:] = True
    return a, ma, b, mb


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("window", [3, 5])
def test_matches_brute_force(seed, window):
    a, ma, b, mb = random_pair(np.random.default_rng(seed))
    got = rmse_ncc(a, ma, b, mb, MetricConfig(window=window))
    assert got == pytest.approx(O.brute_rmse_ncc(a, ma, b, mb, window), rel=1e-9, abs=1e-12)


def test_identical_images_score_zero():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(20, 20))
    assert rmse_ncc(a, None, a, None) == 0.0


def test_negated_patches():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(15, 15))
    res = evaluate(a, None, 1.0 - a, None)
    assert res.raw == pytest.approx(np.sqrt(2.0), rel=1e-12)
    assert res.rmse_ncc == pytest.approx(255 * np.sqrt(2.0), rel=1e-12)


def test_affine_intensity_invariance():
    rng = np.random.default_rng(2)
    a, ma, b, mb = random_pair(rng)
    base = rmse_ncc(a, ma, b, mb)
    for gain, bias in ((2.0, 0.0), (0.25, 0.5), (3.0, -1.0)):
        assert rmse_ncc(gain * a + bias, ma, b, mb) == pytest.approx(base, rel=1e-9)
        assert rmse_ncc(a, ma, gain * b + bias, mb) == pytest.approx(base, rel=1e-9)


def test_flat_window_conventions():
    flat = np.full((5, 5), 0.3)
    textured = np.arange(25, dtype=float).reshape(5, 5)
    omega = np.zeros((5, 5), bool)
    omega[2, 2] = True
    assert ncc_map(flat, flat + 0.2, omega, 3)[0] == 1.0
    assert ncc_map(flat, textured, omega, 3)[0] == 0.0


def test_colour_uses_luminance():
    rng = np.random.default_rng(3)
    rgb = rng.uniform(size=(12, 12, 3))
    lum = RasterImage(rgb).luminance().data
    assert rmse_ncc(RasterImage(rgb), None, lum, None) == pytest.approx(0.0, abs=1e-6)


def test_result_fields_and_window_override():
    rng = np.random.default_rng(4)
    a = rng.uniform(size=(10, 12))
    res = evaluate(a, None, a, None, MetricConfig(window=5))
    assert res.to_dict() == {"rmse_ncc": 0.0, "rmse_ncc_raw": 0.0, "overlap_pixels": 6 * 8, "window": 5}


def test_errors():
    a = np.zeros((10, 10))
    with pytest.raises(MetricError, match="sizes differ"):
        rmse_ncc(a, None, np.zeros((10, 11)), None)
    m1 = np.zeros((10, 10), bool)
    m1[:, :4] = True
    with pytest.raises(MetricError, match="empty overlap"):
        rmse_ncc(a, m1, a, ~m1)
    with pytest.raises(ValueError):
        MetricConfig(window=4)
    with pytest.raises(ValueError):
        MetricConfig(window=1)
