"""Benchmark reconstruction methods sharing the proposed method's interface.

* KPSM keeps the kernel-based SRC model but pins one scatterer to each
  physical box center (no position refinement, no progressive growth).
* ISSM pins scatterers the same way but treats each AoD sector's SRC as an
  independent unknown: sectors no measurement covers stay at 0.
* Ordinary kriging interpolates the measured gains in dB on the map plane,
  ignoring the scene entirely.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import Cgm, VirtualScattererSet, predict_map
from .estimation import (
    EstimatorConfig,
    apply_srcs,
    build_design,
    ls_estimate_srcs,
    progressive_estimate,
)
from .exceptions import InvalidArgumentError, NumericError
from .geometry import AodSectorization, GridMap, Scene
from .gpr import GprConfig, complete_model
from .synth import MeasurementSet

METHODS = ("kpsm", "issm", "kriging")
VARIOGRAMS = ("gaussian", "exponential")


@dataclass
class BaselineConfig:
    """Configuration shared by the three benchmark methods."""

    method: str = "kpsm"
    issm_sectors: int | None = None
    kriging_variogram: str = "gaussian"
    kriging_nugget: float = 0.0
    ridge_lambda: float | None = None
    refine_positions: bool = False
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    gpr: GprConfig = field(default_factory=GprConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"method must be one of {METHODS}")
        if self.kriging_variogram not in VARIOGRAMS:
            raise InvalidArgumentError(f"variogram must be one of {VARIOGRAMS}")
        if self.kriging_nugget < 0:
            raise InvalidArgumentError("kriging_nugget must be >= 0")


def _fixed_center_set(scene: Scene, n_sectors: int) -> VirtualScattererSet:
    by_size = scene.scatterers_by_size()
    return VirtualScattererSet.from_positions(
        positions=np.array([sc.box.center for sc in by_size]).reshape(-1, 3),
        anchor_ids=np.array([sc.id for sc in by_size], dtype=int),
        n_sectors=n_sectors,
    )


def kpsm_reconstruct(
    scene: Scene,
    grid: GridMap,
    sectors: AodSectorization,
    measurements: MeasurementSet,
    config: BaselineConfig | None = None,
) -> Cgm:
    """Kernel-based SRC model with scatterers fixed at physical box centers.

    With ``refine_positions`` enabled this reproduces the proposed method
    configured with step_rho = N_D and a single progressive iteration.
    """
    if config is None:
        config = BaselineConfig()
    if config.refine_positions and scene.scatterers:
        est = replace(
            config.estimator,
            step_rho=len(scene.scatterers),
            max_progressive_iters=1,
        )
        vs, _ = progressive_estimate(scene, grid, sectors, measurements, est)
    else:
        vs = _fixed_center_set(scene, sectors.count)
        if vs.count:
            design = build_design(vs, grid, sectors, scene, measurements)
            tau = ls_estimate_srcs(design, measurements, config.ridge_lambda)
            apply_srcs(vs, design, tau)
    completed = complete_model(vs, sectors, config.gpr)
    return predict_map(completed, grid, sectors, scene)


def issm_reconstruct(
    scene: Scene,
    grid: GridMap,
    sectors: AodSectorization,
    measurements: MeasurementSet,
    config: BaselineConfig | None = None,
) -> Cgm:
    """Independent-sector model: per-sector LS, uncovered sectors kept at 0."""
    if config is None:
        config = BaselineConfig(method="issm")
    issm_sectors = sectors
    if config.issm_sectors is not None:
        issm_sectors = AodSectorization(config.issm_sectors, sectors.m_elevation)
    vs = _fixed_center_set(scene, issm_sectors.count)
    if vs.count:
        design = build_design(vs, grid, issm_sectors, scene, measurements)
        tau = ls_estimate_srcs(design, measurements, config.ridge_lambda)
        apply_srcs(vs, design, tau)
    # Uncorrelated model: no inference across sectors, zero-fill the rest.
    vs.srcs[~vs.defined] = 0.0
    vs.defined[:] = True
    return predict_map(vs, grid, issm_sectors, scene)


def _variogram(h: np.ndarray, nugget: float, psill: float, vrange: float, family: str):
    """Semivariogram value for h > 0; gamma(0) = 0 by definition."""
    h = np.asarray(h, dtype=float)
    if family == "gaussian":
        gamma = nugget + psill * (1.0 - np.exp(-((h / vrange) ** 2)))
    else:
        gamma = nugget + psill * (1.0 - np.exp(-h / vrange))
    return np.where(h == 0.0, 0.0, gamma)


def _fit_variogram(
    coords: np.ndarray, z: np.ndarray, nugget: float, family: str, n_bins: int = 10
) -> tuple[float, float]:
    """Least-squares (psill, range) fit to the empirical semivariogram."""
    n = coords.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    d = np.linalg.norm(coords[iu] - coords[ju], axis=1)
    g = 0.5 * (z[iu] - z[ju]) ** 2
    dmax = float(d.max())
    if dmax == 0.0:
        return max(float(np.var(z)), 1e-12), 1.0
    edges = np.linspace(0.0, dmax, n_bins + 1)
    lags, semis = [], []
    for k in range(n_bins):
        sel = (d > edges[k]) & (d <= edges[k + 1])
        if sel.any():
            lags.append(float(d[sel].mean()))
            semis.append(float(g[sel].mean()))
    lags = np.asarray(lags)
    semis = np.asarray(semis)
    psill0 = max(float(semis.max() - nugget), 1e-12)
    range0 = 0.5 * dmax
    if lags.size < 2:
        return psill0, range0
    from scipy.optimize import least_squares

    def resid(p):
        return _variogram(lags, nugget, p[0], p[1], family) - semis

    try:
        res = least_squares(
            resid,
            x0=[psill0, range0],
            bounds=([1e-12, 1e-6 * dmax], [np.inf, 1e3 * dmax]),
        )
        return float(res.x[0]), float(res.x[1])
    except (ValueError, np.linalg.LinAlgError):
        return psill0, range0


def kriging_reconstruct(
    grid: GridMap,
    measurements: MeasurementSet,
    config: BaselineConfig | None = None,
) -> Cgm:
    """Ordinary kriging of the measured gains in dB on the 2D map plane.

    Fits an isotropic variogram to the empirical semivariogram over 10
    distance bins, solves the ordinary-kriging system for every valid grid,
    and converts back to linear gain. A singular kriging matrix bumps the
    nugget by 1e-8 with a warning.
    """
    if config is None:
        config = BaselineConfig(method="kriging")
    if measurements.count < 2:
        raise InvalidArgumentError("kriging requires >= 2 measurements")
    rows = np.array([grid.position_of(int(i)) for i in measurements.indices])
    coords = grid.centers[rows][:, :2]
    gains = measurements.gains
    gmax = float(gains.max())
    floor = gmax * 1e-12 if gmax > 0 else 1e-30
    z = 10.0 * np.log10(np.maximum(gains, floor))

    nugget = config.kriging_nugget
    psill, vrange = _fit_variogram(coords, z, nugget, config.kriging_variogram)

    n = coords.shape[0]
    targets = grid.centers[:, :2]
    d_data = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    d_targ = np.linalg.norm(targets[:, None, :] - coords[None, :, :], axis=2)

    def solve_with(nug: float) -> np.ndarray:
        a = np.zeros((n + 1, n + 1))
        a[:n, :n] = _variogram(d_data, nug, psill, vrange, config.kriging_variogram)
        a[n, :n] = 1.0
        a[:n, n] = 1.0
        b = np.zeros((n + 1, targets.shape[0]))
        b[:n, :] = _variogram(d_targ, nug, psill, vrange, config.kriging_variogram).T
        b[n, :] = 1.0
        x = np.linalg.solve(a, b)
        return x[:n, :].T @ z

    try:
        pred_db = solve_with(nugget)
        if not np.all(np.isfinite(pred_db)):
            raise np.linalg.LinAlgError("non-finite kriging solution")
    except np.linalg.LinAlgError:
        warnings.warn(
            "singular kriging matrix; bumping nugget by 1e-8", stacklevel=2
        )
        try:
            pred_db = solve_with(nugget + 1e-8)
        except np.linalg.LinAlgError as exc:
            raise NumericError("kriging system singular even with bumped nugget") from exc

    return Cgm(indices=grid.valid_indices.copy(), values=10.0 ** (pred_db / 10.0))


def reconstruct_with(
    method: str,
    scene: Scene,
    grid: GridMap,
    sectors: AodSectorization,
    measurements: MeasurementSet,
    config: BaselineConfig | None = None,
) -> Cgm:
    """Dispatch a baseline reconstruction by method name."""
    if method == "kpsm":
        return kpsm_reconstruct(scene, grid, sectors, measurements, config)
    if method == "issm":
        return issm_reconstruct(scene, grid, sectors, measurements, config)
    if method == "kriging":
        return kriging_reconstruct(grid, measurements, config)
    raise InvalidArgumentError(f"unknown baseline method {method!r}")
