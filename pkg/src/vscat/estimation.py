"""Progressive estimation of virtual-scatterer number, positions, and SRCs.

The outer loop grows the scatterer count by ``step_rho`` per iteration,
warm-starting from the previous refined model. Within an iteration, scatterer
positions are refined one at a time by projected gradient descent with Armijo
backtracking; SRCs are re-estimated by ridge least squares at every trial
position, so the line search always evaluates the true reduced objective and
the per-iteration convergence metric never increases.

Position gradients are taken with the LS-estimated SRCs held fixed (and with
sector assignments frozen), which is exact for the reduced objective up to
the ridge term. Visibility is anchored to physical boxes, so moving a
scatterer never changes which grids see it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .channel import ConstraintRegion, VirtualScattererSet
from .exceptions import (
    DegenerateSystemError,
    InvalidArgumentError,
    NumericError,
    RankDeficiencyError,
)
from .geometry import (
    TX_ID,
    AodSectorization,
    Box3,
    GridMap,
    Scene,
    aods_of,
    sector_indices,
)
from .synth import MeasurementSet

OBJECTIVES = ("mse", "nmse")

# Guards the relative-improvement ratio when the objective reaches 0.
EPS_DEN = 1e-30


@dataclass
class EstimatorConfig:
    """Controls for the progressive estimator.

    ``ridge_lambda=None`` scales the ridge with the design:
    1e-8 * trace(Phi^T Phi) / n_columns. ``constraint=None`` confines each
    scatterer to its anchor box dilated by ``constraint_dilation_m`` meters
    (clipped to the scene region); passing a ConstraintRegion uses that single
    box for all scatterers instead.
    """

    step_rho: int = 2
    max_progressive_iters: int = 6
    objective: str = "nmse"
    ridge_lambda: float | None = None
    gd_max_iters: int = 60
    gd_step_init: float = 8.0
    gd_armijo_c: float = 1e-4
    gd_shrink: float = 0.5
    gd_min_step: float = 1e-5
    max_sweeps: int = 10
    zeta_rel_tol: float = 1e-3
    constraint: ConstraintRegion | None = None
    constraint_dilation_m: float = 20.0

    def __post_init__(self):
        if self.step_rho < 1:
            raise InvalidArgumentError("step_rho must be >= 1")
        if self.max_progressive_iters < 1:
            raise InvalidArgumentError("max_progressive_iters must be >= 1")
        if self.objective not in OBJECTIVES:
            raise InvalidArgumentError(f"objective must be one of {OBJECTIVES}")
        if self.ridge_lambda is not None and self.ridge_lambda < 0:
            raise InvalidArgumentError("ridge_lambda must be >= 0")
        if self.zeta_rel_tol <= 0:
            raise InvalidArgumentError("zeta_rel_tol must be > 0")


@dataclass
class DesignMatrix:
    """Linear system behind the LS step: measured gains vs active SRC columns.

    Row i corresponds to the i-th measurement. Column j carries the path gain
    of scatterer ``columns[j][0]`` into the grids whose departure direction
    falls in sector ``columns[j][1]``; ``offset`` holds the fixed Tx
    direct-path gains (0 where the Tx is hidden).
    """

    matrix: np.ndarray
    offset: np.ndarray
    columns: list[tuple[int, int]]
    row_indices: np.ndarray


@dataclass
class IterationRecord:
    t: int
    n_scatterers: int
    zeta: float
    sweeps: int
    gd_iterations: int
    wall_time_s: float


@dataclass
class FitReport:
    """Per-iteration trace of the progressive estimation."""

    iterations: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    chosen_n: int = 0
    final_objective: float = float("nan")
    objective: str = "nmse"

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "converged": self.converged,
            "chosen_n": self.chosen_n,
            "final_objective": self.final_objective,
            "iterations": [
                {
                    "t": r.t,
                    "n_scatterers": r.n_scatterers,
                    "zeta": r.zeta,
                    "sweeps": r.sweeps,
                    "gd_iterations": r.gd_iterations,
                    "wall_time_s": r.wall_time_s,
                }
                for r in self.iterations
            ],
        }


class _FitContext:
    """Measurement-side quantities reused across solves."""

    def __init__(
        self,
        scene: Scene,
        grid: GridMap,
        sectors: AodSectorization,
        measurements: MeasurementSet,
    ):
        self.scene = scene
        self.grid = grid
        self.sectors = sectors
        self.indices = measurements.indices
        self.q = measurements.gains.astype(float)
        self.n_rows = measurements.count
        rows = [grid.position_of(int(i)) for i in measurements.indices]
        self._rows = np.asarray(rows, dtype=int)
        self.centers = grid.centers[self._rows]
        self.sum_q2 = float(np.sum(self.q**2))
        tx_vis = grid.visible_mask(TX_ID)[self._rows]
        d = np.linalg.norm(self.centers - scene.tx_position[None, :], axis=1)
        self.offset = np.where(tx_vis, scene.beta0 / d**scene.alpha, 0.0)
        self._row_masks: dict[int, np.ndarray] = {TX_ID: tx_vis}

    def row_mask(self, anchor_id: int) -> np.ndarray:
        mask = self._row_masks.get(anchor_id)
        if mask is None:
            mask = self.grid.visible_mask(anchor_id)[self._rows]
            self._row_masks[anchor_id] = mask
        return mask

    def objective(self, predictions: np.ndarray, objective: str) -> float:
        r = self.q - predictions
        if objective == "mse":
            return float(np.mean(r**2))
        if self.sum_q2 == 0.0:
            raise InvalidArgumentError("nmse undefined for all-zero measurements")
        return float(np.sum(r**2) / self.sum_q2)


@dataclass
class _State:
    """A solved parameterization at the current positions."""

    columns: list[tuple[int, int]]
    tau: np.ndarray
    pair_tau: dict[tuple[int, int], float]
    predictions: np.ndarray
    objective: float


def _design_arrays(ctx: _FitContext, vs: VirtualScattererSet):
    """Assemble (phi, columns) for the current scatterer positions."""
    per_scatterer = []
    keys: set[tuple[int, int]] = set()
    for n0 in range(vs.count):
        rows = ctx.row_mask(int(vs.anchor_ids[n0]))
        if not rows.any():
            per_scatterer.append(None)
            continue
        idx = np.nonzero(rows)[0]
        pts = ctx.centers[idx]
        s = vs.positions[n0]
        az, el = aods_of(s, pts)
        m = sector_indices(az, el, ctx.sectors)
        d = np.linalg.norm(pts - s[None, :], axis=1)
        g = ctx.scene.beta0 / d**ctx.scene.alpha
        per_scatterer.append((idx, m, g))
        keys.update((n0 + 1, int(mm)) for mm in np.unique(m))
    columns = sorted(keys)
    col_of = {key: j for j, key in enumerate(columns)}
    phi = np.zeros((ctx.n_rows, len(columns)))
    for n0, data in enumerate(per_scatterer):
        if data is None:
            continue
        idx, m, g = data
        for r, mm, gg in zip(idx, m, g):
            phi[r, col_of[(n0 + 1, int(mm))]] = gg
    return phi, columns


def _ridge_solve(phi: np.ndarray, y: np.ndarray, ridge_lambda: float | None) -> np.ndarray:
    n_cols = phi.shape[1]
    if n_cols == 0:
        return np.zeros(0)
    gram = phi.T @ phi
    lam = ridge_lambda
    if lam is None:
        lam = 1e-8 * float(np.trace(gram)) / n_cols
    a = gram + lam * np.eye(n_cols)
    try:
        cho = scipy.linalg.cho_factor(a)
        return scipy.linalg.cho_solve(cho, phi.T @ y)
    except np.linalg.LinAlgError as exc:
        if lam == 0.0:
            raise RankDeficiencyError(
                "normal equations are singular with ridge_lambda=0; "
                "set a positive ridge_lambda"
            ) from exc
        raise NumericError(f"ridge normal equations failed (lambda={lam})") from exc


def _state_from_tau(
    ctx: _FitContext,
    phi: np.ndarray,
    columns: list[tuple[int, int]],
    tau: np.ndarray,
    objective: str,
) -> _State:
    pred = ctx.offset + phi @ tau
    return _State(
        columns=columns,
        tau=tau,
        pair_tau={key: float(v) for key, v in zip(columns, tau)},
        predictions=pred,
        objective=ctx.objective(pred, objective),
    )


def _solve(ctx: _FitContext, vs: VirtualScattererSet, config: EstimatorConfig) -> _State:
    phi, columns = _design_arrays(ctx, vs)
    if not columns and not np.any(ctx.offset != 0.0):
        raise DegenerateSystemError(
            "no measurement sees any scatterer or the Tx; the system has no unknowns"
        )
    tau = _ridge_solve(phi, ctx.q - ctx.offset, config.ridge_lambda)
    return _state_from_tau(ctx, phi, columns, tau, config.objective)


def _apply_state(vs: VirtualScattererSet, state: _State) -> None:
    """Write the solved SRCs back into the scatterer set.

    Entries not covered by the current design revert to undefined: they carry
    no estimate for the current geometry.
    """
    vs.defined[:] = False
    for (n, m), value in state.pair_tau.items():
        vs.srcs[n - 1, m - 1] = value
        vs.defined[n - 1, m - 1] = True


def _gradient_from_state(
    ctx: _FitContext, vs: VirtualScattererSet, n: int, state: _State, objective: str
) -> np.ndarray:
    """Objective gradient w.r.t. scatterer n's position at fixed SRCs/sectors."""
    n0 = n - 1
    rows = ctx.row_mask(int(vs.anchor_ids[n0]))
    if not rows.any():
        return np.zeros(3)
    idx = np.nonzero(rows)[0]
    pts = ctx.centers[idx]
    s = vs.positions[n0]
    az, el = aods_of(s, pts)
    m = sector_indices(az, el, ctx.sectors)
    tau_vals = np.array([state.pair_tau.get((n, int(mm)), 0.0) for mm in m])
    d = np.linalg.norm(pts - s[None, :], axis=1)
    resid = state.predictions[idx] - ctx.q[idx]
    if objective == "mse":
        w = 2.0 / ctx.n_rows
    else:
        if ctx.sum_q2 == 0.0:
            raise InvalidArgumentError("nmse undefined for all-zero measurements")
        w = 2.0 / ctx.sum_q2
    alpha, beta0 = ctx.scene.alpha, ctx.scene.beta0
    coef = resid * tau_vals / d ** (alpha + 2.0)
    return -w * alpha * beta0 * ((s[None, :] - pts) * coef[:, None]).sum(axis=0)


def _effective_constraint(
    scene: Scene, vs: VirtualScattererSet, n0: int, config: EstimatorConfig
) -> Box3:
    if config.constraint is not None:
        return config.constraint.box
    anchor = scene.scatterer_by_id(int(vs.anchor_ids[n0]))
    return anchor.box.dilated(config.constraint_dilation_m).intersection(scene.region)


def _refine_in_place(
    ctx: _FitContext,
    vs: VirtualScattererSet,
    n: int,
    state: _State,
    config: EstimatorConfig,
) -> tuple[_State, int]:
    """Projected-gradient refinement of scatterer n; never increases the objective."""
    n0 = n - 1
    box = _effective_constraint(ctx.scene, vs, n0, config)
    accepted = 0
    last_step = None
    for _ in range(config.gd_max_iters):
        g = _gradient_from_state(ctx, vs, n, state, config.objective)
        gn = float(np.linalg.norm(g))
        if gn == 0.0 or not np.isfinite(gn):
            break
        t = config.gd_step_init / gn
        if last_step is not None:
            t = min(t, 2.0 * last_step)
        moved = False
        while t * gn >= config.gd_min_step:
            trial = box.clip(vs.positions[n0] - t * g)
            delta = trial - vs.positions[n0]
            descent = float(g @ delta)
            if descent < 0.0:
                old = vs.positions[n0].copy()
                vs.positions[n0] = trial
                try:
                    trial_state = _solve(ctx, vs, config)
                except NumericError:
                    vs.positions[n0] = old
                    t *= config.gd_shrink
                    continue
                if trial_state.objective <= state.objective + config.gd_armijo_c * descent:
                    state = trial_state
                    accepted += 1
                    last_step = t
                    moved = True
                    break
                vs.positions[n0] = old
            t *= config.gd_shrink
        if not moved:
            break
    return state, accepted


def build_design(
    vs: VirtualScattererSet,
    grid: GridMap,
    sectors: AodSectorization,
    scene: Scene,
    measurements: MeasurementSet,
) -> DesignMatrix:
    """Assemble the LS design for the current scatterer set and measurements."""
    ctx = _FitContext(scene, grid, sectors, measurements)
    phi, columns = _design_arrays(ctx, vs)
    if not columns and not np.any(ctx.offset != 0.0):
        raise DegenerateSystemError(
            "no measurement sees any scatterer or the Tx; the system has no unknowns"
        )
    return DesignMatrix(
        matrix=phi, offset=ctx.offset, columns=columns, row_indices=ctx.indices.copy()
    )


def ls_estimate_srcs(
    design: DesignMatrix,
    measurements: MeasurementSet,
    ridge_lambda: float | None = None,
) -> np.ndarray:
    """Ridge-LS solve of the SRC vector via normal equations and Cholesky."""
    return _ridge_solve(design.matrix, measurements.gains - design.offset, ridge_lambda)


def apply_srcs(vs: VirtualScattererSet, design: DesignMatrix, tau: np.ndarray) -> None:
    """Write an LS solution back into the scatterer set's SRC slots."""
    state = _State(
        columns=design.columns,
        tau=tau,
        pair_tau={key: float(v) for key, v in zip(design.columns, tau)},
        predictions=np.zeros(0),
        objective=float("nan"),
    )
    _apply_state(vs, state)


def objective_value(measurements, predictions, objective: str = "nmse") -> float:
    """MSE or NMSE between measured and predicted gains."""
    q = measurements.gains if hasattr(measurements, "gains") else np.asarray(measurements, float)
    pred = np.asarray(predictions, dtype=float)
    if q.shape != pred.shape:
        raise InvalidArgumentError("predictions must cover every measured grid")
    if objective == "mse":
        return float(np.mean((q - pred) ** 2))
    if objective == "nmse":
        denom = float(np.sum(q**2))
        if denom == 0.0:
            raise InvalidArgumentError("nmse undefined for all-zero measurements")
        return float(np.sum((q - pred) ** 2) / denom)
    raise InvalidArgumentError(f"objective must be one of {OBJECTIVES}")


def position_gradient(
    vs: VirtualScattererSet,
    n: int,
    grid: GridMap,
    sectors: AodSectorization,
    scene: Scene,
    measurements: MeasurementSet,
    objective: str = "nmse",
    ridge_lambda: float | None = None,
) -> np.ndarray:
    """Gradient of the objective w.r.t. scatterer n's position.

    SRCs are first solved by ridge LS at the current positions, then held
    fixed (together with sector assignments) while differentiating.
    """
    if not 1 <= n <= vs.count:
        raise InvalidArgumentError(f"scatterer index {n} out of range 1..{vs.count}")
    ctx = _FitContext(scene, grid, sectors, measurements)
    cfg = EstimatorConfig(objective=objective, ridge_lambda=ridge_lambda)
    state = _solve(ctx, vs, cfg)
    return _gradient_from_state(ctx, vs, n, state, objective)


def refine_position(
    vs: VirtualScattererSet,
    n: int,
    grid: GridMap,
    sectors: AodSectorization,
    scene: Scene,
    measurements: MeasurementSet,
    config: EstimatorConfig,
) -> np.ndarray:
    """Refine one scatterer position in place and re-solve the SRCs.

    Returns the refined position; worst case (no acceptable step) it equals
    the input position.
    """
    if not 1 <= n <= vs.count:
        raise InvalidArgumentError(f"scatterer index {n} out of range 1..{vs.count}")
    ctx = _FitContext(scene, grid, sectors, measurements)
    state = _solve(ctx, vs, config)
    state, _ = _refine_in_place(ctx, vs, n, state, config)
    _apply_state(vs, state)
    return vs.positions[n - 1].copy()


def init_positions(
    t: int,
    previous: VirtualScattererSet | None,
    scene: Scene,
    sectors: AodSectorization,
    config: EstimatorConfig,
) -> VirtualScattererSet:
    """Initial scatterer set for progressive iteration t.

    New scatterers are seeded at physical-box centers in size order with the
    round-robin rule j = mod(n-1, N_D) + 1; iterations t > 1 keep the previous
    refined positions for the first step_rho*(t-1) scatterers.
    """
    if t < 1:
        raise InvalidArgumentError("t must be >= 1")
    by_size = scene.scatterers_by_size()
    n_d = len(by_size)
    if n_d == 0:
        raise InvalidArgumentError("no physical scatterers to initialize from")
    n_total = config.step_rho * t
    vs = VirtualScattererSet(
        positions=np.zeros((n_total, 3)),
        anchor_ids=np.zeros(n_total, dtype=int),
        srcs=np.zeros((n_total, sectors.count)),
        defined=np.zeros((n_total, sectors.count), dtype=bool),
    )
    start = 0
    if previous is not None:
        start = previous.count
        if start > n_total:
            raise InvalidArgumentError(
                f"previous model has {start} scatterers but iteration {t} allows {n_total}"
            )
        vs.positions[:start] = previous.positions
        vs.anchor_ids[:start] = previous.anchor_ids
        vs.srcs[:start] = previous.srcs
        vs.defined[:start] = previous.defined
    for n in range(start + 1, n_total + 1):
        j = (n - 1) % n_d + 1
        sc = by_size[j - 1]
        vs.positions[n - 1] = sc.box.center
        vs.anchor_ids[n - 1] = sc.id
    return vs


def progressive_estimate(
    scene: Scene,
    grid: GridMap,
    sectors: AodSectorization,
    measurements: MeasurementSet,
    config: EstimatorConfig | None = None,
) -> tuple[VirtualScattererSet, FitReport]:
    """Grow the virtual-scatterer model until the fit stops improving.

    Returns the scatterer set from the best (lowest-objective) iteration and
    the per-iteration report. The recorded zeta_t sequence is non-increasing:
    each iteration starts from the previous solution extended with zero SRCs
    whenever the fresh LS warm start would regress.
    """
    if config is None:
        config = EstimatorConfig()
    if measurements.count < 1:
        raise InvalidArgumentError("progressive estimation needs at least one measurement")
    ctx = _FitContext(scene, grid, sectors, measurements)
    report = FitReport(objective=config.objective)

    if len(scene.scatterers) == 0:
        vs = VirtualScattererSet.empty(sectors.count)
        zeta = ctx.objective(ctx.offset, config.objective)
        report.iterations.append(
            IterationRecord(
                t=1, n_scatterers=0, zeta=zeta, sweeps=0, gd_iterations=0, wall_time_s=0.0
            )
        )
        report.converged = True
        report.chosen_n = 0
        report.final_objective = zeta
        return vs, report

    prev_vs: VirtualScattererSet | None = None
    prev_state: _State | None = None
    zeta_prev: float | None = None
    best: tuple[float, VirtualScattererSet] | None = None

    for t in range(1, config.max_progressive_iters + 1):
        tic = time.perf_counter()
        vs = init_positions(t, prev_vs, scene, sectors, config)
        try:
            phi, columns = _design_arrays(ctx, vs)
            if not columns and not np.any(ctx.offset != 0.0):
                raise DegenerateSystemError(
                    "no measurement sees any scatterer or the Tx; the system has no unknowns"
                )
            tau = _ridge_solve(phi, ctx.q - ctx.offset, config.ridge_lambda)
            state = _state_from_tau(ctx, phi, columns, tau, config.objective)
            if prev_state is not None and state.objective > zeta_prev:
                # Warm-start fallback: the previous solution with zero SRCs on
                # the new scatterers predicts exactly what it did last
                # iteration, so zeta_t starts at zeta_{t-1} and never exceeds
                # it. Reuse the previous predictions verbatim to keep the
                # guarantee exact in floating point.
                tau = np.array([prev_state.pair_tau.get(key, 0.0) for key in columns])
                state = _State(
                    columns=columns,
                    tau=tau,
                    pair_tau={key: float(v) for key, v in zip(columns, tau)},
                    predictions=prev_state.predictions.copy(),
                    objective=zeta_prev,
                )

            gd_total = 0
            sweeps_done = 0
            for _ in range(config.max_sweeps):
                sweeps_done += 1
                before = state.objective
                for n in range(1, vs.count + 1):
                    state, steps = _refine_in_place(ctx, vs, n, state, config)
                    gd_total += steps
                if before - state.objective < config.zeta_rel_tol * max(before, EPS_DEN):
                    break

            # Final LS solve; keep it only if it does not regress (it cannot,
            # unless the iteration never accepted a step after a fallback).
            final = _solve(ctx, vs, config)
            if final.objective <= state.objective:
                state = final
        except (DegenerateSystemError, RankDeficiencyError) as exc:
            raise type(exc)(f"progressive iteration {t}: {exc}") from exc

        _apply_state(vs, state)
        zeta = state.objective
        report.iterations.append(
            IterationRecord(
                t=t,
                n_scatterers=vs.count,
                zeta=zeta,
                sweeps=sweeps_done,
                gd_iterations=gd_total,
                wall_time_s=time.perf_counter() - tic,
            )
        )
        if best is None or zeta < best[0]:
            best = (zeta, vs.copy())
        stop = zeta_prev is not None and (zeta_prev - zeta) / max(
            zeta_prev, EPS_DEN
        ) < config.zeta_rel_tol
        prev_vs = vs
        prev_state = state
        zeta_prev = zeta
        if stop:
            report.converged = True
            break

    assert best is not None
    report.chosen_n = best[1].count
    report.final_objective = best[0]
    return best[1], report
