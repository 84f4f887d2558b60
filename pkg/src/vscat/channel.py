"""Virtual-scatterer channel model: the forward map from scatterer parameters
to per-grid channel power gain.

A grid's gain is the sum, over the Tx and every visible virtual scatterer, of
(response coefficient) x (propagation gain along the last-hop LoS path). The
Tx enters with reserved id 0 and a response coefficient fixed to 1, so its
direct path contributes exactly beta0 / d**alpha. A virtual scatterer inherits
visibility from the physical scatterer it is anchored to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidArgumentError, MissingCoefficientError
from .geometry import (
    TX_ID,
    AodSectorization,
    Box3,
    GridMap,
    Scene,
    aod_of,
    aods_of,
    sector_index,
    sector_indices,
)


@dataclass(frozen=True)
class ConstraintRegion:
    """Axis-aligned region confining virtual-scatterer positions."""

    box: Box3

    def __post_init__(self):
        if np.any(self.box.extents <= 0.0):
            raise InvalidArgumentError("constraint region must have positive volume")


@dataclass
class VirtualScattererSet:
    """Positions, visibility anchors, and per-sector response coefficients.

    ``srcs`` is an (N, M) matrix of response coefficients over the M AoD
    sectors; ``defined`` flags which entries hold estimated values (the rest
    await GPR inference). ``anchor_ids`` gives, per virtual scatterer, the
    physical scatterer id whose box determines LoS visibility.
    """

    positions: np.ndarray
    anchor_ids: np.ndarray
    srcs: np.ndarray
    defined: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.anchor_ids = np.asarray(self.anchor_ids, dtype=int).reshape(-1)
        self.srcs = np.asarray(self.srcs, dtype=float)
        self.defined = np.asarray(self.defined, dtype=bool)
        n = self.positions.shape[0]
        if self.anchor_ids.shape != (n,) or self.srcs.shape[0] != n:
            raise InvalidArgumentError("inconsistent virtual-scatterer array shapes")
        if self.defined.shape != self.srcs.shape:
            raise InvalidArgumentError("defined mask shape must match srcs")
        if self.defined.any() and not np.all(np.isfinite(self.srcs[self.defined])):
            raise InvalidArgumentError("defined SRC entries must be finite")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def n_sectors(self) -> int:
        return self.srcs.shape[1]

    @classmethod
    def empty(cls, n_sectors: int) -> "VirtualScattererSet":
        return cls(
            positions=np.zeros((0, 3)),
            anchor_ids=np.zeros(0, dtype=int),
            srcs=np.zeros((0, n_sectors)),
            defined=np.zeros((0, n_sectors), dtype=bool),
        )

    @classmethod
    def from_positions(cls, positions, anchor_ids, n_sectors: int) -> "VirtualScattererSet":
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        n = positions.shape[0]
        return cls(
            positions=positions,
            anchor_ids=np.asarray(anchor_ids, dtype=int),
            srcs=np.zeros((n, n_sectors)),
            defined=np.zeros((n, n_sectors), dtype=bool),
        )

    def copy(self) -> "VirtualScattererSet":
        return VirtualScattererSet(
            self.positions.copy(),
            self.anchor_ids.copy(),
            self.srcs.copy(),
            self.defined.copy(),
        )


@dataclass
class Cgm:
    """Channel gain map: linear power gain per valid grid index."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.indices.shape != self.values.shape:
            raise InvalidArgumentError("Cgm indices and values must be parallel")

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    def exported_values(self) -> np.ndarray:
        """Values with small negative estimates clamped to zero (export rule)."""
        return np.maximum(self.values, 0.0)


def path_gain(s, c, beta0: float, alpha: float) -> float:
    """Propagation power gain beta0 / ||s - c||**alpha."""
    d = float(np.linalg.norm(np.asarray(s, dtype=float) - np.asarray(c, dtype=float)))
    if d == 0.0:
        raise InvalidArgumentError("coincident endpoints have undefined path gain")
    return beta0 / d**alpha


def path_power(
    vs: VirtualScattererSet,
    n: int,
    grid: GridMap,
    i: int,
    sectors: AodSectorization,
    scene: Scene,
) -> float:
    """Power of the last-hop path from source ``n`` to grid ``i``.

    ``n`` follows the model convention: 0 is the Tx (coefficient fixed to 1),
    n >= 1 addresses virtual scatterer n (1-based).
    """
    c = grid.center_of(i)
    if n == TX_ID:
        return path_gain(scene.tx_position, c, scene.beta0, scene.alpha)
    if not 1 <= n <= vs.count:
        raise InvalidArgumentError(f"virtual scatterer index {n} out of range 1..{vs.count}")
    s = vs.positions[n - 1]
    m = sector_index(aod_of(s, c), sectors)
    if not vs.defined[n - 1, m - 1]:
        raise MissingCoefficientError([(n, m)], [i])
    return vs.srcs[n - 1, m - 1] * path_gain(s, c, scene.beta0, scene.alpha)


def predict_gain(
    vs: VirtualScattererSet,
    grid: GridMap,
    i: int,
    sectors: AodSectorization,
    scene: Scene,
) -> float:
    """Predicted gain of grid ``i``: sum of path powers over its visibility set.

    An empty visibility set yields 0 (deep shadow).
    """
    vis = grid.visibility[int(i)]
    total = 0.0
    if TX_ID in vis:
        total += path_power(vs, TX_ID, grid, i, sectors, scene)
    missing: list[tuple[int, int]] = []
    for n in range(1, vs.count + 1):
        if int(vs.anchor_ids[n - 1]) not in vis:
            continue
        c = grid.center_of(i)
        s = vs.positions[n - 1]
        m = sector_index(aod_of(s, c), sectors)
        if not vs.defined[n - 1, m - 1]:
            missing.append((n, m))
            continue
        total += vs.srcs[n - 1, m - 1] * path_gain(s, c, scene.beta0, scene.alpha)
    if missing:
        raise MissingCoefficientError(missing, [i])
    return total


def predict_gains_at(
    vs: VirtualScattererSet,
    grid: GridMap,
    positions_mask: np.ndarray,
    sectors: AodSectorization,
    scene: Scene,
) -> np.ndarray:
    """Vectorized forward map over the valid grids selected by ``positions_mask``.

    Raises a single aggregated MissingCoefficientError when any required SRC
    entry is undefined.
    """
    centers = grid.centers[positions_mask]
    out = np.zeros(centers.shape[0])
    tx_mask = grid.visible_mask(TX_ID)[positions_mask]
    if tx_mask.any():
        d = np.linalg.norm(centers[tx_mask] - scene.tx_position[None, :], axis=1)
        out[tx_mask] += scene.beta0 / d**scene.alpha
    missing: list[tuple[int, int]] = []
    missing_grids: list[int] = []
    sel_indices = grid.valid_indices[positions_mask]
    for n in range(vs.count):
        vis = grid.visible_mask(int(vs.anchor_ids[n]))[positions_mask]
        if not vis.any():
            continue
        pts = centers[vis]
        s = vs.positions[n]
        az, el = aods_of(s, pts)
        m = sector_indices(az, el, sectors)
        und = ~vs.defined[n, m - 1]
        if und.any():
            missing.extend((n + 1, int(mm)) for mm in np.unique(m[und]))
            missing_grids.extend(int(g) for g in sel_indices[vis][und])
            continue
        d = np.linalg.norm(pts - s[None, :], axis=1)
        out[vis] += vs.srcs[n, m - 1] * scene.beta0 / d**scene.alpha
    if missing:
        raise MissingCoefficientError(missing, missing_grids)
    return out


def predict_map(
    vs: VirtualScattererSet,
    grid: GridMap,
    sectors: AodSectorization,
    scene: Scene,
) -> Cgm:
    """Apply the forward model to every valid grid."""
    mask = np.ones(grid.valid_count, dtype=bool)
    values = predict_gains_at(vs, grid, mask, sectors, scene)
    return Cgm(indices=grid.valid_indices.copy(), values=values)
