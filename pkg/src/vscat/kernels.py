"""Squared-exponential covariance over (azimuth, elevation) angle pairs.

Azimuth separation is measured chordally (2 sin(wrapped_gap / 2)): it is
continuous across the +-pi seam, agrees with the wrapped angular gap for
small separations, and keeps the kernel positive definite for every (v, rho)
because it is the Euclidean kernel restricted to the unit circle. A raw
wrapped-gap distance looks natural but yields indefinite matrices once rho
exceeds the point spacing. Shared by the GPR inference and the synthetic SRC
sampler.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import InvalidArgumentError

_TWO_PI = 2.0 * math.pi


def angular_dist2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared angular distance: (K, 2) x (J, 2) -> (K, J).

    d^2 = (2 sin(wrapped azimuth gap / 2))^2 + (elevation gap)^2.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    daz = np.abs(a[:, None, 0] - b[None, :, 0])
    daz = np.minimum(daz, _TWO_PI - daz)
    chord = 2.0 * np.sin(0.5 * daz)
    del_ = a[:, None, 1] - b[None, :, 1]
    return chord**2 + del_**2


def kernel(angle_a, angle_b, v: float, rho: float) -> float:
    """Covariance between two (azimuth, elevation) pairs: v^2 exp(-d^2 / 2 rho^2)."""
    if v <= 0 or rho <= 0:
        raise InvalidArgumentError("kernel hyperparameters v and rho must be positive")
    d2 = angular_dist2(
        np.asarray(angle_a, dtype=float)[None, :], np.asarray(angle_b, dtype=float)[None, :]
    )
    return float(v**2 * np.exp(-d2[0, 0] / (2.0 * rho**2)))


def kernel_matrix(angles: np.ndarray, v: float, rho: float) -> np.ndarray:
    if v <= 0 or rho <= 0:
        raise InvalidArgumentError("kernel hyperparameters v and rho must be positive")
    d2 = angular_dist2(angles, angles)
    return v**2 * np.exp(-d2 / (2.0 * rho**2))


def cross_kernel(target, angles: np.ndarray, v: float, rho: float) -> np.ndarray:
    if v <= 0 or rho <= 0:
        raise InvalidArgumentError("kernel hyperparameters v and rho must be positive")
    d2 = angular_dist2(np.asarray(target, dtype=float)[None, :], angles)
    return (v**2 * np.exp(-d2 / (2.0 * rho**2)))[0]
