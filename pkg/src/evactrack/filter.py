"""Savitzky-Golay smoothing of world tracks.

Kernels are the least-squares polynomial projection weights over a sliding
window. Near the ends of a signal the window polynomial fitted to the first
(or last) full window is evaluated at the off-center positions, so polynomial
signals of degree <= order pass through unchanged everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import InvalidConfig, TrackTooShort
from .tracks import WorldTrack


@dataclass(frozen=True)
class SgConfig:
    window: int = 31
    order: int = 3
    derivative: int = 0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise InvalidConfig(f"window must be an odd integer >= 3, got {self.window}")
        if not 0 <= self.order < self.window:
            raise InvalidConfig(f"order must satisfy 0 <= order < window, got {self.order}")
        if not 0 <= self.derivative <= self.order:
            raise InvalidConfig(f"derivative must satisfy 0 <= derivative <= order, got {self.derivative}")


def _projection(cfg: SgConfig, delta: float = 1.0) -> np.ndarray:
    """Rows i give weights producing the fitted value (or derivative) at window position i."""
    half = cfg.window // 2
    z = np.arange(-half, half + 1, dtype=float)
    vander = np.vander(z, cfg.order + 1, increasing=True)
    # coefficient estimator: pinv maps window samples -> polynomial coefficients
    coef_op = np.linalg.pinv(vander)
    d = cfg.derivative
    # d-th derivative of sum_j a_j z^j evaluated at each z
    deriv = np.zeros((cfg.window, cfg.order + 1))
    for j in range(d, cfg.order + 1):
        deriv[:, j] = factorial(j) / factorial(j - d) * z ** (j - d)
    return deriv @ coef_op / delta**d


def sg_coefficients(cfg: SgConfig, delta: float = 1.0) -> np.ndarray:
    """Center-sample convolution weights, ordered from the oldest to the newest sample."""
    return _projection(cfg, delta)[cfg.window // 2]


def sg_filter(signal: np.ndarray, cfg: SgConfig, delta: float = 1.0) -> np.ndarray:
    """Apply the filter along axis 0 of ``signal``."""
    y = np.asarray(signal, dtype=float)
    n, w = len(y), cfg.window
    if n < w:
        raise TrackTooShort(f"signal has {n} samples, window needs {w}")
    proj = _projection(cfg, delta)
    half = w // 2
    kernel = proj[half]
    windows = np.lib.stride_tricks.sliding_window_view(y, w, axis=0)  # (n-w+1, ..., w)
    out = np.empty_like(y)
    out[half : n - half] = np.tensordot(windows, kernel, axes=([-1], [0]))
    out[:half] = np.tensordot(proj[:half], y[:w], axes=([1], [0]))
    out[n - half :] = np.tensordot(proj[half + 1 :], y[n - w :], axes=([1], [0]))
    return out


def smooth_track(track: WorldTrack, cfg: SgConfig = SgConfig()) -> WorldTrack:
    """Smooth x and y independently; timestamps and labels are untouched."""
    if cfg.derivative != 0:
        raise InvalidConfig("smooth_track needs derivative=0; use sg_filter for derivatives")
    if len(track) < cfg.window:
        raise TrackTooShort(f"{track.agent} track has {len(track)} samples, window needs {cfg.window}")
    if not track.is_uniform():
        raise InvalidConfig("smooth_track requires a uniformly sampled track")
    return track.with_xy(sg_filter(track.xy, cfg))
