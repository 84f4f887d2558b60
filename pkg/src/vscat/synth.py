"""Synthetic ground truth and measurement sampling.

The default generator draws true virtual scatterers inside the largest
physical boxes and samples their per-sector response coefficients from a
correlated Gaussian process over sector-center angles, truncated below at 0
so the truth stays a physical power ratio. Because the truth then lives in
the estimator's own model class, reconstruction error isolates estimator
behavior from model mismatch. A single-bounce specular generator provides
controlled mismatch for robustness studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import Cgm, VirtualScattererSet, predict_map
from .exceptions import InvalidArgumentError
from .geometry import (
    TX_ID,
    AodSectorization,
    GridMap,
    Scene,
    aods_of,
    sector_centers,
    sector_indices,
)
from .kernels import kernel_matrix

GENERATORS = ("model_consistent", "single_bounce")
SELECTIONS = ("type1", "type2")

# Power kept by one specular bounce in the single_bounce generator.
REFLECTION_LOSS = 0.1


@dataclass
class TruthSpec:
    """Parameters of the synthetic ground truth."""

    seed: int = 0
    n_true: int = 2
    src_v: float = 0.25
    src_rho: float = 1.0
    src_mean: float = 0.5
    noise_std_rel: float = 0.0
    generator: str = "model_consistent"

    def __post_init__(self):
        if self.n_true < 0:
            raise InvalidArgumentError("n_true must be >= 0")
        if self.src_v <= 0 or self.src_rho <= 0:
            raise InvalidArgumentError("src_v and src_rho must be positive")
        if self.noise_std_rel < 0:
            raise InvalidArgumentError("noise_std_rel must be >= 0")
        if self.generator not in GENERATORS:
            raise InvalidArgumentError(
                f"generator must be one of {GENERATORS}, got {self.generator!r}"
            )


@dataclass
class MeasurementSet:
    """Measured grids and their (possibly noisy) gains."""

    indices: np.ndarray
    gains: np.ndarray
    selection_type: str
    seed: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int).reshape(-1)
        self.gains = np.asarray(self.gains, dtype=float).reshape(-1)
        if self.indices.shape != self.gains.shape:
            raise InvalidArgumentError("indices and gains must be parallel")
        if len(set(self.indices.tolist())) != self.indices.size:
            raise InvalidArgumentError("measurement indices must be distinct")
        if np.any(self.gains < 0):
            raise InvalidArgumentError("measured gains must be >= 0")

    @property
    def count(self) -> int:
        return int(self.indices.size)


def sample_src_vector(
    rng: np.random.Generator, angles: np.ndarray, v: float, rho: float, mean: float
) -> np.ndarray:
    """One correlated Gaussian draw of SRCs over the given angles (no truncation).

    Smooth kernels over dense angle sets are numerically rank-deficient, so
    the factorization escalates the diagonal jitter until it succeeds.
    """
    k = kernel_matrix(angles, v, rho)
    for jitter in (1e-10, 1e-8, 1e-6, 1e-4):
        try:
            chol = np.linalg.cholesky(k + jitter * v**2 * np.eye(k.shape[0]))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise InvalidArgumentError(
            f"SRC covariance not factorizable for v={v}, rho={rho}"
        )
    return mean + chol @ rng.standard_normal(angles.shape[0])


def generate_truth(
    scene: Scene, grid: GridMap, sectors: AodSectorization, spec: TruthSpec
) -> tuple[VirtualScattererSet, Cgm]:
    """Generate ground-truth scatterer parameters and the exact forward map."""
    rng = np.random.default_rng(spec.seed)
    by_size = scene.scatterers_by_size()
    if spec.generator == "model_consistent":
        if spec.n_true > len(by_size):
            raise InvalidArgumentError(
                f"n_true={spec.n_true} exceeds the {len(by_size)} physical scatterers"
            )
        chosen = by_size[: spec.n_true]
        positions = np.zeros((spec.n_true, 3))
        anchors = np.zeros(spec.n_true, dtype=int)
        for k, sc in enumerate(chosen):
            positions[k] = rng.uniform(sc.box.min_corner, sc.box.max_corner)
            anchors[k] = sc.id
        angles = sector_centers(sectors)
        srcs = np.zeros((spec.n_true, sectors.count))
        for k in range(spec.n_true):
            raw = sample_src_vector(rng, angles, spec.src_v, spec.src_rho, spec.src_mean)
            srcs[k] = np.maximum(raw, 0.0)
        vs = VirtualScattererSet(
            positions=positions,
            anchor_ids=anchors,
            srcs=srcs,
            defined=np.ones((spec.n_true, sectors.count), dtype=bool),
        )
        return vs, predict_map(vs, grid, sectors, scene)
    return _single_bounce_truth(scene, grid, sectors)


def _nearest_face_image(scene: Scene, box) -> np.ndarray:
    """Mirror image of the Tx across the box face nearest to it."""
    tx = scene.tx_position
    best_axis, best_value, best_dist = 0, box.min_corner[0], math.inf
    for axis in range(3):
        for value in (box.min_corner[axis], box.max_corner[axis]):
            dist = abs(tx[axis] - value)
            if dist < best_dist:
                best_axis, best_value, best_dist = axis, value, dist
    image = tx.copy()
    image[best_axis] = 2.0 * best_value - tx[best_axis]
    return image


def _single_bounce_truth(
    scene: Scene, grid: GridMap, sectors: AodSectorization
) -> tuple[VirtualScattererSet, Cgm]:
    """Specular image-source map: Tx direct path plus one bounce per box.

    The bounce toward a grid travels tx -> face -> grid, i.e. the image-source
    distance, attenuated by a fixed reflection loss. The returned scatterer
    set records the box centers with all SRC entries undefined: this truth is
    deliberately outside the estimable model class.
    """
    values = np.zeros(grid.valid_count)
    tx_mask = grid.visible_mask(TX_ID)
    if tx_mask.any():
        d = np.linalg.norm(grid.centers[tx_mask] - scene.tx_position[None, :], axis=1)
        values[tx_mask] += scene.beta0 / d**scene.alpha
    for sc in scene.scatterers:
        image = _nearest_face_image(scene, sc.box)
        mask = grid.visible_mask(sc.id)
        if not mask.any():
            continue
        d = np.linalg.norm(grid.centers[mask] - image[None, :], axis=1)
        values[mask] += REFLECTION_LOSS * scene.beta0 / d**scene.alpha
    vs = VirtualScattererSet.from_positions(
        positions=np.array([sc.box.center for sc in scene.scatterers]).reshape(-1, 3),
        anchor_ids=np.array([sc.id for sc in scene.scatterers], dtype=int),
        n_sectors=sectors.count,
    )
    return vs, Cgm(indices=grid.valid_indices.copy(), values=values)


def _type1_indices(
    grid: GridMap, scene: Scene, sectors: AodSectorization, L: int, rng: np.random.Generator
) -> np.ndarray:
    """Scatterer-proximate selection: round-robin over scatterers, then over
    each scatterer's occupied AoD sectors, taking the nearest unchosen grid
    in that sector. Falls back to uniform random draws if the per-sector
    pools run dry before L grids are chosen.
    """
    per_scatterer: list[list[np.ndarray]] = []
    for sc in scene.scatterers:
        mask = grid.visible_mask(sc.id)
        if not mask.any():
            per_scatterer.append([])
            continue
        pts = grid.centers[mask]
        idx = grid.valid_indices[mask]
        az, el = aods_of(sc.box.center, pts)
        m = sector_indices(az, el, sectors)
        dist = np.linalg.norm(pts - sc.box.center[None, :], axis=1)
        sector_lists = []
        for sector in np.unique(m):
            sel = m == sector
            order = np.argsort(dist[sel], kind="stable")
            sector_lists.append(idx[sel][order])
        per_scatterer.append(sector_lists)

    chosen: list[int] = []
    chosen_set: set[int] = set()
    max_rounds = max((len(s) for s in per_scatterer), default=0)
    for r in range(max_rounds):
        for sector_lists in per_scatterer:
            if len(chosen) >= L:
                break
            if r >= len(sector_lists):
                continue
            for candidate in sector_lists[r]:
                if int(candidate) not in chosen_set:
                    chosen.append(int(candidate))
                    chosen_set.add(int(candidate))
                    break
        if len(chosen) >= L:
            break
    if len(chosen) < L:
        remaining = np.array(
            [int(i) for i in grid.valid_indices if int(i) not in chosen_set], dtype=int
        )
        extra = rng.choice(remaining, size=L - len(chosen), replace=False)
        chosen.extend(int(i) for i in extra)
    return np.array(chosen[:L], dtype=int)


def sample_measurements(
    truth: Cgm,
    grid: GridMap,
    scene: Scene,
    sectors: AodSectorization,
    L: int,
    selection: str,
    seed: int,
    noise_std_rel: float = 0.0,
) -> MeasurementSet:
    """Select L measurement grids and perturb the truth with relative noise.

    type2 draws uniformly from the valid grids; type1 uses the
    scatterer-proximate greedy rule. Gains are truth * (1 + eps) with
    eps ~ N(0, noise_std_rel**2), floored at 0.
    """
    if selection not in SELECTIONS:
        raise InvalidArgumentError(f"selection must be one of {SELECTIONS}")
    if L >= grid.valid_count:
        raise InvalidArgumentError(
            f"L={L} must be smaller than the {grid.valid_count} valid grids"
        )
    if L < 1:
        raise InvalidArgumentError("L must be >= 1")
    rng = np.random.default_rng(seed)
    if selection == "type2":
        indices = np.sort(rng.choice(grid.valid_indices, size=L, replace=False))
    else:
        indices = _type1_indices(grid, scene, sectors, L, rng)
    truth_lookup = truth.as_dict()
    gains = np.array([truth_lookup[int(i)] for i in indices])
    if noise_std_rel > 0.0:
        gains = gains * (1.0 + noise_std_rel * rng.standard_normal(L))
    gains = np.maximum(gains, 0.0)
    return MeasurementSet(indices=indices, gains=gains, selection_type=selection, seed=seed)
