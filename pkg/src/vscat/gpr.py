"""Gaussian-process inference of response coefficients over AoD sectors.

Each scatterer's SRCs are modeled as a GP over sector-center angles with a
squared-exponential kernel. Entries estimated by least squares become the
training set; hyperparameters are fit by maximizing the log-marginal
likelihood from a small multi-start grid; remaining sectors are filled with
the posterior mean. Angular distance wraps the azimuth seam at +-pi (a plain
Euclidean norm on angles would tear it).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .channel import Cgm, VirtualScattererSet, predict_map
from .estimation import EstimatorConfig, FitReport, progressive_estimate
from .exceptions import InvalidArgumentError, NumericError
from .geometry import AodSectorization, GridMap, Scene, sector_centers
from .kernels import angular_dist2, cross_kernel, kernel, kernel_matrix
from .synth import MeasurementSet

__all__ = [
    "GprConfig",
    "GprModel",
    "ProposedResult",
    "angular_dist2",
    "complete_model",
    "cross_kernel",
    "fit_hyperparams",
    "fit_scatterer_models",
    "kernel",
    "kernel_matrix",
    "log_marginal_likelihood",
    "make_gpr_model",
    "predict_src",
    "reconstruct_cgm",
    "run_proposed",
]

_JITTER_REL = 1e-10


@dataclass
class GprConfig:
    """Controls for SRC inference.

    ``mean="constant"`` uses the average of the training SRCs as the prior
    mean instead of zero. ``sigma_floor_rel`` scales the noise floor:
    sigma_floor = sigma_floor_rel * max(max|tau|, 1).
    """

    mean: str = "zero"
    sigma_floor_rel: float = 1e-6

    def __post_init__(self):
        if self.mean not in ("zero", "constant"):
            raise InvalidArgumentError("mean must be 'zero' or 'constant'")
        if self.sigma_floor_rel <= 0:
            raise InvalidArgumentError("sigma_floor_rel must be > 0")


@dataclass
class GprModel:
    """Per-scatterer posterior state for SRC prediction."""

    training_angles: np.ndarray
    training_srcs: np.ndarray
    v: float
    rho: float
    sigma: float
    mean_value: float = 0.0
    _cho: tuple = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    @property
    def n_training(self) -> int:
        return int(self.training_srcs.size)


def make_gpr_model(
    training_angles,
    training_srcs,
    v: float,
    rho: float,
    sigma: float,
    mean_value: float = 0.0,
) -> GprModel:
    """Build a model with its Cholesky cache; retries once with jitter."""
    angles = np.atleast_2d(np.asarray(training_angles, dtype=float))
    srcs = np.asarray(training_srcs, dtype=float).reshape(-1)
    if angles.shape[0] != srcs.size or srcs.size < 1:
        raise InvalidArgumentError("training angles and SRCs must be parallel, nonempty")
    a = kernel_matrix(angles, v, rho)
    a[np.diag_indices_from(a)] += sigma**2
    try:
        cho = scipy.linalg.cho_factor(a)
    except np.linalg.LinAlgError:
        a[np.diag_indices_from(a)] += _JITTER_REL * v**2
        try:
            cho = scipy.linalg.cho_factor(a)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"covariance not positive definite for v={v}, rho={rho}, sigma={sigma}"
            ) from exc
    model = GprModel(
        training_angles=angles,
        training_srcs=srcs,
        v=float(v),
        rho=float(rho),
        sigma=float(sigma),
        mean_value=float(mean_value),
    )
    model._cho = cho
    model._alpha = scipy.linalg.cho_solve(cho, srcs - mean_value)
    return model


def log_marginal_likelihood(model: GprModel) -> float:
    """-1/2 tau' A^-1 tau - 1/2 log|A| - (M_n/2) log(2 pi), via the Cholesky cache."""
    resid = model.training_srcs - model.mean_value
    quad = float(resid @ model._alpha)
    logdet = 2.0 * float(np.sum(np.log(np.diag(model._cho[0]))))
    return -0.5 * quad - 0.5 * logdet - 0.5 * model.n_training * math.log(2.0 * math.pi)


def _sigma_floor(srcs: np.ndarray, config: GprConfig) -> float:
    return config.sigma_floor_rel * max(float(np.max(np.abs(srcs))) if srcs.size else 0.0, 1.0)


def fit_hyperparams(
    training_angles,
    training_srcs,
    config: GprConfig,
    sector_width: float,
) -> tuple[float, float, float]:
    """Maximize the log-marginal likelihood over log-parameterized (v, rho, sigma).

    Eight corner starts (v in RMS*{0.5, 2}, rho in sector_width*{0.5, 2},
    sigma in RMS*{1e-4, 1e-2}) each run through L-BFGS-B with numerical
    gradients; the best evaluated point wins, so the result is never worse
    than any start. With fewer than 3 training points the fit is skipped and
    scale-based defaults are returned.
    """
    angles = np.atleast_2d(np.asarray(training_angles, dtype=float))
    srcs = np.asarray(training_srcs, dtype=float).reshape(-1)
    if srcs.size < 1:
        raise InvalidArgumentError("need at least one training SRC")
    floor = _sigma_floor(srcs, config)
    rms = float(np.sqrt(np.mean(srcs**2)))
    scale = max(rms, 1e-12)
    if srcs.size < 3:
        return max(rms, floor), sector_width, floor

    mean_value = float(np.mean(srcs)) if config.mean == "constant" else 0.0

    def neg_lml(theta: np.ndarray) -> float:
        v, rho, sigma = np.exp(theta)
        try:
            return -log_marginal_likelihood(
                make_gpr_model(angles, srcs, v, rho, sigma, mean_value)
            )
        except (NumericError, FloatingPointError, OverflowError):
            return 1e12

    bounds = [
        (math.log(1e-4 * scale), math.log(1e4 * scale)),
        (math.log(1e-2 * sector_width), math.log(1e3 * sector_width)),
        (math.log(floor), math.log(1e2 * scale) if 1e2 * scale > floor else math.log(2 * floor)),
    ]
    starts = [
        np.array(
            [
                math.log(scale * fv),
                math.log(sector_width * fr),
                math.log(max(scale * fs, floor)),
            ]
        )
        for fv in (0.5, 2.0)
        for fr in (0.5, 2.0)
        for fs in (1e-4, 1e-2)
    ]
    best_theta, best_val = None, math.inf
    for x0 in starts:
        x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
        val0 = neg_lml(x0)
        if val0 < best_val:
            best_theta, best_val = x0, val0
        try:
            res = minimize(neg_lml, x0, method="L-BFGS-B", bounds=bounds)
        except (ValueError, np.linalg.LinAlgError):
            continue
        val = neg_lml(res.x)
        if val < best_val:
            best_theta, best_val = res.x, val
    v, rho, sigma = np.exp(best_theta)
    return float(v), float(rho), float(max(sigma, floor))


def predict_src(model: GprModel, target_angle) -> float:
    """Posterior-mean SRC at a target angle.

    The cross-covariance vector is computed directly from the kernel at the
    target angle rather than by slicing the training covariance matrix.
    """
    k_star = cross_kernel(target_angle, model.training_angles, model.v, model.rho)
    return float(model.mean_value + k_star @ model._alpha)


def fit_scatterer_models(
    vs: VirtualScattererSet, sectors: AodSectorization, config: GprConfig | None = None
) -> list[GprModel | None]:
    """Fit one GPR model per scatterer on its defined SRC entries.

    Scatterers with no defined entries get None (nothing to train on).
    """
    if config is None:
        config = GprConfig()
    centers = sector_centers(sectors)
    models: list[GprModel | None] = []
    for n0 in range(vs.count):
        mask = vs.defined[n0]
        if not mask.any():
            models.append(None)
            continue
        angles = centers[mask]
        srcs = vs.srcs[n0][mask]
        v, rho, sigma = fit_hyperparams(angles, srcs, config, sectors.azimuth_width)
        mean_value = float(np.mean(srcs)) if config.mean == "constant" else 0.0
        models.append(make_gpr_model(angles, srcs, v, rho, sigma, mean_value))
    return models


def _fill_undefined(
    vs: VirtualScattererSet,
    models: list[GprModel | None],
    sectors: AodSectorization,
) -> VirtualScattererSet:
    out = vs.copy()
    centers = sector_centers(sectors)
    for n0 in range(vs.count):
        undefined = ~vs.defined[n0]
        if undefined.any():
            model = models[n0]
            if model is None:
                warnings.warn(
                    f"virtual scatterer {n0 + 1} has no estimated SRC entries; "
                    "filling its sectors with 0",
                    stacklevel=2,
                )
                out.srcs[n0][undefined] = 0.0
            else:
                for m0 in np.nonzero(undefined)[0]:
                    out.srcs[n0, m0] = predict_src(model, centers[m0])
        out.defined[n0] = True
    return out


def complete_model(
    vs: VirtualScattererSet, sectors: AodSectorization, config: GprConfig | None = None
) -> VirtualScattererSet:
    """Fill every undefined SRC entry with its GPR posterior mean.

    Defined entries are never modified; the returned set has every entry
    usable by the forward model.
    """
    models = fit_scatterer_models(vs, sectors, config)
    return _fill_undefined(vs, models, sectors)


@dataclass
class ProposedResult:
    """Full output of the proposed reconstruction pipeline."""

    cgm: Cgm
    report: FitReport
    scatterers: VirtualScattererSet
    gpr_models: list[GprModel | None]


def run_proposed(
    scene: Scene,
    grid: GridMap,
    sectors: AodSectorization,
    measurements: MeasurementSet,
    est_config: EstimatorConfig | None = None,
    gpr_config: GprConfig | None = None,
) -> ProposedResult:
    """Progressive estimation, GPR completion, and the full forward map."""
    vs, report = progressive_estimate(scene, grid, sectors, measurements, est_config)
    models = fit_scatterer_models(vs, sectors, gpr_config)
    completed = _fill_undefined(vs, models, sectors)
    cgm = predict_map(completed, grid, sectors, scene)
    return ProposedResult(cgm=cgm, report=report, scatterers=completed, gpr_models=models)


def reconstruct_cgm(
    scene: Scene,
    grid: GridMap,
    sectors: AodSectorization,
    measurements: MeasurementSet,
    est_config: EstimatorConfig | None = None,
    gpr_config: GprConfig | None = None,
) -> tuple[Cgm, FitReport]:
    """End-to-end proposed method: estimate, complete, predict."""
    result = run_proposed(scene, grid, sectors, measurements, est_config, gpr_config)
    return result.cgm, result.report
