"""Map-level evaluation and the seeded experiment sweep."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BaselineConfig, reconstruct_with
from .channel import Cgm
from .estimation import EstimatorConfig
from .exceptions import InvalidArgumentError, VscatError
from .geometry import AodSectorization, GridMap, Scene, partition_region
from .gpr import GprConfig, run_proposed
from .seeding import derive_seed
from .synth import TruthSpec, generate_truth, sample_measurements

ALL_METHODS = ("proposed", "kpsm", "issm", "kriging")


def map_nmse(truth: Cgm, estimate: Cgm) -> float:
    """Sum of squared map errors normalized by the squared truth."""
    if not np.array_equal(truth.indices, estimate.indices):
        raise InvalidArgumentError("maps cover different grid supports")
    denom = float(np.sum(truth.values**2))
    if denom == 0.0:
        raise InvalidArgumentError("NMSE undefined for an all-zero truth map")
    return float(np.sum((truth.values - estimate.values) ** 2) / denom)


@dataclass
class ExperimentSpec:
    """One NMSE sweep: (seed, L, selection, method) cross product."""

    scene: Scene
    grid_nx: int
    grid_ny: int
    plane_height: float
    sectors: AodSectorization
    truth: TruthSpec
    l_values: list[int]
    selections: list[str]
    methods: list[str]
    seeds: list[int]
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    gpr: GprConfig = field(default_factory=GprConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    include_failed_as_one: bool = False

    def __post_init__(self):
        if not self.l_values or not self.selections or not self.methods or not self.seeds:
            raise InvalidArgumentError("l_values, selections, methods, seeds must be non-empty")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise InvalidArgumentError(f"unknown method {m!r}; choose from {ALL_METHODS}")

    def run_keys(self) -> list[tuple[int, int, str, str]]:
        return [
            (seed, L, selection, method)
            for seed in self.seeds
            for L in self.l_values
            for selection in self.selections
            for method in self.methods
        ]


@dataclass
class RunRow:
    seed: int
    L: int
    selection: str
    method: str
    nmse: float
    runtime_ms: float
    status: str


@dataclass
class AggregateRow:
    L: int
    selection: str
    method: str
    mean_nmse: float
    std_nmse: float
    n_ok: int


def _reconstruct(spec: ExperimentSpec, grid: GridMap, measurements, method: str) -> Cgm:
    if method == "proposed":
        return run_proposed(
            spec.scene, grid, spec.sectors, measurements, spec.estimator, spec.gpr
        ).cgm
    config = replace(spec.baseline, method=method, estimator=spec.estimator, gpr=spec.gpr)
    return reconstruct_with(method, spec.scene, grid, spec.sectors, measurements, config)


def run_single(
    spec: ExperimentSpec,
    grid: GridMap,
    key: tuple[int, int, str, str],
    clock=time.perf_counter,
    truth: Cgm | None = None,
) -> RunRow:
    """Execute one (seed, L, selection, method) cell of the sweep."""
    seed, L, selection, method = key
    tic = clock()
    try:
        if truth is None:
            truth_spec = replace(spec.truth, seed=derive_seed(seed, "truth"))
            _, truth = generate_truth(spec.scene, grid, spec.sectors, truth_spec)
        measurements = sample_measurements(
            truth,
            grid,
            spec.scene,
            spec.sectors,
            L,
            selection,
            derive_seed(seed, f"sample/L={L}/{selection}"),
            spec.truth.noise_std_rel,
        )
        estimate = _reconstruct(spec, grid, measurements, method)
        nmse = map_nmse(truth, estimate)
        status = "ok"
    except VscatError as exc:
        nmse = float("nan")
        status = f"error:{type(exc).__name__}"
    return RunRow(
        seed=seed,
        L=L,
        selection=selection,
        method=method,
        nmse=nmse,
        runtime_ms=(clock() - tic) * 1000.0,
        status=status,
    )


def aggregate_rows(spec: ExperimentSpec, rows: list[RunRow]) -> list[AggregateRow]:
    """Per-(L, selection, method) mean/std recomputed from the run rows."""
    out = []
    for L in spec.l_values:
        for selection in spec.selections:
            for method in spec.methods:
                cell = [
                    r for r in rows
                    if r.L == L and r.selection == selection and r.method == method
                ]
                values = [r.nmse for r in cell if r.status == "ok"]
                n_ok = len(values)
                if spec.include_failed_as_one:
                    values = values + [1.0] * (len(cell) - n_ok)
                if values:
                    mean = float(np.mean(values))
                    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
                else:
                    mean = float("nan")
                    std = float("nan")
                out.append(AggregateRow(L, selection, method, mean, std, n_ok))
    return out


def run_experiment(
    spec: ExperimentSpec,
    clock=time.perf_counter,
    progress=None,
    skip_keys: frozenset = frozenset(),
    jobs: int = 1,
) -> tuple[list[RunRow], list[AggregateRow]]:
    """Run the sweep and aggregate. Deterministic per spec (runtimes aside).

    Individual run failures are recorded in their row's status and do not
    abort the sweep. ``skip_keys`` supports resuming: those cells are not
    recomputed (their rows are simply absent from the result).
    """
    grid = partition_region(spec.scene, spec.grid_nx, spec.grid_ny, spec.plane_height)
    for L in spec.l_values:
        if L >= grid.valid_count:
            raise InvalidArgumentError(
                f"L={L} must be below the {grid.valid_count} valid grids"
            )
    keys = [k for k in spec.run_keys() if k not in skip_keys]

    rows: list[RunRow] = []
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_single, spec, grid, key) for key in keys]
            for key, fut in zip(keys, futures):
                rows.append(fut.result())
                if progress is not None:
                    progress(rows[-1])
    else:
        truth_cache: dict[int, Cgm] = {}
        for key in keys:
            seed = key[0]
            if seed not in truth_cache:
                truth_spec = replace(spec.truth, seed=derive_seed(seed, "truth"))
                _, truth_cache[seed] = generate_truth(
                    spec.scene, grid, spec.sectors, truth_spec
                )
            rows.append(run_single(spec, grid, key, clock, truth_cache[seed]))
            if progress is not None:
                progress(rows[-1])
    return rows, aggregate_rows(spec, rows)
