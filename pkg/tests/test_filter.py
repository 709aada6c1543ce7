import numpy as np
import pytest
from scipy.signal import savgol_coeffs, savgol_filter

from evactrack.errors import InvalidConfig, TrackTooShort
from evactrack.filter import SgConfig, sg_coefficients, sg_filter, smooth_track
from evactrack.tracks import WorldTrack


def _track(xy, rate=40.0):
    xy = np.asarray(xy, float)
    return WorldTrack("subject", np.arange(len(xy)) / rate, xy, rate)


def test_full_order_kernel_is_identity():
    np.testing.assert_allclose(sg_coefficients(SgConfig(5, 4)), [0, 0, 1, 0, 0], atol=1e-12)


def test_quadratic_five_point_kernel():
    np.testing.assert_allclose(sg_coefficients(SgConfig(5, 2)), np.array([-3, 12, 17, 12, -3]) / 35, atol=1e-12)


@pytest.mark.parametrize("window, order", [(5, 2), (7, 3), (11, 3), (31, 3), (21, 5), (9, 0)])
def test_smoothing_kernels_sum_to_one_and_match_scipy(window, order):
    k = sg_coefficients(SgConfig(window, order))
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(k, savgol_coeffs(window, order, use="dot"), atol=1e-12)


@pytest.mark.parametrize("window, order, deriv", [(7, 2, 1), (11, 3, 2), (9, 4, 3)])
def test_derivative_kernels_match_scipy(window, order, deriv):
    np.testing.assert_allclose(
        sg_coefficients(SgConfig(window, order, deriv)), savgol_coeffs(window, order, deriv=deriv, use="dot"), atol=1e-10
    )


def test_filter_matches_scipy_interp_mode():
    rng = np.random.default_rng(2)
    y = rng.normal(size=200)
    np.testing.assert_allclose(sg_filter(y, SgConfig(31, 3)), savgol_filter(y, 31, 3, mode="interp"), atol=1e-12)
    np.testing.assert_allclose(
        sg_filter(y, SgConfig(11, 3, 1), delta=0.025),
        savgol_filter(y, 11, 3, deriv=1, delta=0.025, mode="interp"),
        atol=1e-9,
    )


@pytest.mark.parametrize("cfg", [dict(window=4, order=2), dict(window=1, order=0), dict(window=5, order=5), dict(window=5, order=2, derivative=3)])
def test_invalid_configs(cfg):
    with pytest.raises(InvalidConfig):
        SgConfig(**cfg)


def test_constant_track_unchanged():
    out = smooth_track(_track(np.tile([3.7, -1.2], (100, 1))))
    np.testing.assert_allclose(out.xy, np.tile([3.7, -1.2], (100, 1)), atol=1e-12)


def test_cubic_track_reproduced_everywhere():
    t = np.arange(200) / 40.0
    xy = np.column_stack([0.5 - 0.2 * t + 0.3 * t**2 - 0.05 * t**3, 1.0 + t**3 / 10])
    out = smooth_track(_track(xy), SgConfig(31, 3))
    np.testing.assert_allclose(out.xy, xy, atol=1e-9)
    np.testing.assert_array_equal(out.t, _track(xy).t)


def test_noise_reduction_bound():
    rng = np.random.default_rng(7)
    t = np.arange(4000) / 40.0
    clean = np.column_stack([np.sin(0.5 * t), np.cos(0.3 * t)])
    sigma = 0.05
    cfg = SgConfig(31, 3)
    out = smooth_track(_track(clean + rng.normal(0, sigma, clean.shape)), cfg)
    rms = np.sqrt(np.mean((out.xy - clean) ** 2))
    bound = sigma * np.sqrt(np.sum(sg_coefficients(cfg) ** 2)) + 0.005
    assert rms <= bound


def test_linearity():
    rng = np.random.default_rng(0)
    u, w = rng.normal(size=(2, 120, 2))
    cfg = SgConfig(11, 3)
    lhs = sg_filter(2.5 * u - 0.75 * w, cfg)
    np.testing.assert_allclose(lhs, 2.5 * sg_filter(u, cfg) - 0.75 * sg_filter(w, cfg), atol=1e-12)


def test_shift_equivariance_on_interior():
    rng = np.random.default_rng(1)
    y = rng.normal(size=150)
    cfg = SgConfig(11, 2)
    a = sg_filter(y, cfg)
    b = sg_filter(y[7:], cfg)
    h = cfg.window // 2
    np.testing.assert_allclose(a[7 + h : len(y) - h], b[h : len(b) - h], atol=1e-12)


def test_track_too_short():
    with pytest.raises(TrackTooShort):
        smooth_track(_track(np.zeros((10, 2))), SgConfig(31, 3))


def test_smooth_track_requires_zero_derivative():
    with pytest.raises(InvalidConfig):
        smooth_track(_track(np.zeros((40, 2))), SgConfig(11, 3, 1))
