"""Scene geometry: axis-aligned scatterer boxes, square-grid partition of the
map plane, line-of-sight visibility, and AoD sectorization.

Conventions
-----------
* All lengths are in meters, all angles in radians.
* Grid indices are 1-based and row-major: ``i = iy * grid_count_x + ix + 1``.
* Visibility id 0 is reserved for the transmitter; physical scatterers carry
  positive integer ids.
* Grazing contact (a sight line touching a box face exactly) does NOT block:
  blocking requires the open segment to cross the open box interior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgumentError

TX_ID = 0

_TWO_PI = 2.0 * math.pi


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"non-finite coordinate: {p!r}")
    return a


@dataclass(frozen=True)
class Box3:
    """Axis-aligned 3D box given by its min/max corners."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min_corner", _as_point(self.min_corner))
        object.__setattr__(self, "max_corner", _as_point(self.max_corner))
        if np.any(self.max_corner < self.min_corner):
            raise InvalidArgumentError(
                f"box max corner {self.max_corner} below min corner {self.min_corner}"
            )

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def extents(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def contains(self, p, strict: bool = False) -> bool:
        p = np.asarray(p, dtype=float)
        if strict:
            return bool(np.all(p > self.min_corner) and np.all(p < self.max_corner))
        return bool(np.all(p >= self.min_corner) and np.all(p <= self.max_corner))

    def contains_box(self, other: "Box3") -> bool:
        return bool(
            np.all(other.min_corner >= self.min_corner)
            and np.all(other.max_corner <= self.max_corner)
        )

    def footprint_overlaps(self, x0: float, x1: float, y0: float, y1: float) -> bool:
        """Strict (positive-area) overlap of the box footprint with a rectangle."""
        return (
            self.min_corner[0] < x1
            and self.max_corner[0] > x0
            and self.min_corner[1] < y1
            and self.max_corner[1] > y0
        )

    def dilated(self, margin: float) -> "Box3":
        return Box3(self.min_corner - margin, self.max_corner + margin)

    def intersection(self, other: "Box3") -> "Box3":
        return Box3(
            np.maximum(self.min_corner, other.min_corner),
            np.minimum(self.max_corner, other.max_corner),
        )

    def clip(self, p) -> np.ndarray:
        return np.clip(np.asarray(p, dtype=float), self.min_corner, self.max_corner)

    def blocks_segment(self, a, b) -> bool:
        """True iff the open segment (a, b) passes through the open interior.

        Slab method with open intervals, so touching a face or sliding along
        it does not count as blocking.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = b - a
        t_lo, t_hi = 0.0, 1.0
        for k in range(3):
            if d[k] == 0.0:
                if a[k] <= self.min_corner[k] or a[k] >= self.max_corner[k]:
                    return False
            else:
                t1 = (self.min_corner[k] - a[k]) / d[k]
                t2 = (self.max_corner[k] - a[k]) / d[k]
                if t1 > t2:
                    t1, t2 = t2, t1
                t_lo = max(t_lo, t1)
                t_hi = min(t_hi, t2)
                if t_lo >= t_hi:
                    return False
        return t_lo < t_hi


@dataclass(frozen=True)
class PhysicalScatterer:
    """A dominant physical scatterer modeled as an axis-aligned box."""

    id: int
    box: Box3

    def __post_init__(self):
        if self.id <= 0:
            raise InvalidArgumentError(
                f"scatterer id must be a positive integer (0 is the Tx), got {self.id}"
            )
        if np.any(self.box.extents <= 0.0):
            raise InvalidArgumentError(
                f"scatterer {self.id} box must have positive extent on all axes"
            )


@dataclass(frozen=True)
class Scene:
    """The 3D region, transmitter, physical scatterers, and propagation constants."""

    region: Box3
    tx_position: np.ndarray
    scatterers: tuple[PhysicalScatterer, ...]
    beta0: float
    alpha: float
    wavelength: float

    def __post_init__(self):
        object.__setattr__(self, "tx_position", _as_point(self.tx_position))
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.beta0 <= 0 or self.alpha <= 0 or self.wavelength <= 0:
            raise InvalidArgumentError("beta0, alpha and wavelength must be positive")
        if not self.region.contains(self.tx_position):
            raise InvalidArgumentError("tx_position lies outside the region")
        ids = [s.id for s in self.scatterers]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError(f"duplicate scatterer ids: {sorted(ids)}")
        for s in self.scatterers:
            if not self.region.contains_box(s.box):
                raise InvalidArgumentError(f"scatterer {s.id} box exceeds the region")
            if s.box.contains(self.tx_position):
                raise InvalidArgumentError(f"scatterer {s.id} box contains the Tx")

    def scatterer_by_id(self, sid: int) -> PhysicalScatterer:
        for s in self.scatterers:
            if s.id == sid:
                return s
        raise InvalidArgumentError(f"no scatterer with id {sid}")

    def scatterers_by_size(self) -> list[PhysicalScatterer]:
        """Scatterers sorted by box volume descending, ties by id ascending."""
        return sorted(self.scatterers, key=lambda s: (-s.box.volume, s.id))


@dataclass(frozen=True)
class AodSectorization:
    """Uniform partition of departure directions into azimuth/elevation bins.

    Azimuth bins are right-open over [-pi, pi); elevation bins are right-open
    over [-pi/2, pi/2] with +pi/2 assigned to the top bin. Sector indices are
    1-based: ``m = elevation_bin * m_azimuth + azimuth_bin + 1``.
    """

    m_azimuth: int
    m_elevation: int = 1

    def __post_init__(self):
        if self.m_azimuth < 1 or self.m_elevation < 1:
            raise InvalidArgumentError("sector counts must be >= 1")

    @property
    def count(self) -> int:
        return self.m_azimuth * self.m_elevation

    @property
    def azimuth_width(self) -> float:
        return _TWO_PI / self.m_azimuth

    @property
    def elevation_width(self) -> float:
        return math.pi / self.m_elevation


def aod_of(source, target) -> tuple[float, float]:
    """Azimuth/elevation of the departure direction from ``source`` to ``target``.

    Azimuth is atan2(dy, dx) wrapped into [-pi, pi); elevation is
    atan2(dz, hypot(dx, dy)). At the poles (dx = dy = 0) azimuth is 0.
    """
    s = np.asarray(source, dtype=float)
    t = np.asarray(target, dtype=float)
    d = t - s
    if not np.any(d != 0.0):
        raise InvalidArgumentError("coincident points have no departure direction")
    horiz = math.hypot(d[0], d[1])
    az = math.atan2(d[1], d[0]) if horiz > 0.0 else 0.0
    if az >= math.pi:
        az -= _TWO_PI
    el = math.atan2(d[2], horiz)
    return az, el


def aods_of(source, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`aod_of` for an (K, 3) array of targets."""
    s = np.asarray(source, dtype=float).reshape(1, 3)
    d = np.asarray(targets, dtype=float) - s
    horiz = np.hypot(d[:, 0], d[:, 1])
    az = np.where(horiz > 0.0, np.arctan2(d[:, 1], d[:, 0]), 0.0)
    az = np.where(az >= math.pi, az - _TWO_PI, az)
    el = np.arctan2(d[:, 2], horiz)
    return az, el


def sector_index(aod: tuple[float, float], sectors: AodSectorization) -> int:
    """Map an (azimuth, elevation) pair to its 1-based sector index."""
    az, el = aod
    az_bin = int((az + math.pi) // sectors.azimuth_width)
    az_bin = min(max(az_bin, 0), sectors.m_azimuth - 1)
    el_bin = int((el + math.pi / 2) // sectors.elevation_width)
    el_bin = min(max(el_bin, 0), sectors.m_elevation - 1)
    return el_bin * sectors.m_azimuth + az_bin + 1


def sector_indices(az: np.ndarray, el: np.ndarray, sectors: AodSectorization) -> np.ndarray:
    """Vectorized :func:`sector_index` over parallel azimuth/elevation arrays."""
    az_bin = np.floor_divide(az + math.pi, sectors.azimuth_width).astype(int)
    np.clip(az_bin, 0, sectors.m_azimuth - 1, out=az_bin)
    el_bin = np.floor_divide(el + math.pi / 2, sectors.elevation_width).astype(int)
    np.clip(el_bin, 0, sectors.m_elevation - 1, out=el_bin)
    return el_bin * sectors.m_azimuth + az_bin + 1


def sector_center(m: int, sectors: AodSectorization) -> tuple[float, float]:
    """Centroid angle of sector ``m`` (1-based)."""
    if not 1 <= m <= sectors.count:
        raise InvalidArgumentError(f"sector index {m} out of range 1..{sectors.count}")
    el_bin, az_bin = divmod(m - 1, sectors.m_azimuth)
    az = -math.pi + (az_bin + 0.5) * sectors.azimuth_width
    el = -math.pi / 2 + (el_bin + 0.5) * sectors.elevation_width
    return az, el


def sector_centers(sectors: AodSectorization) -> np.ndarray:
    """(M, 2) array of all sector centroid angles in index order."""
    return np.array([sector_center(m, sectors) for m in range(1, sectors.count + 1)])


def los_visible(source, target, scene: Scene, ignore_id: int | None = None) -> bool:
    """True iff no scatterer box (except ``ignore_id``) blocks the open segment."""
    s = _as_point(source)
    t = _as_point(target)
    if np.array_equal(s, t):
        raise InvalidArgumentError("source and target coincide")
    for sc in scene.scatterers:
        if ignore_id is not None and sc.id == ignore_id:
            continue
        if sc.box.blocks_segment(s, t):
            return False
    return True


def _segments_blocked(
    source: np.ndarray,
    targets: np.ndarray,
    box_min: np.ndarray,
    box_max: np.ndarray,
    skip: int | None = None,
) -> np.ndarray:
    """Vectorized open-segment / open-box test: source -> each target vs each box.

    Returns a boolean (K,) array, True where any box (except row ``skip``)
    blocks the segment. Mirrors :meth:`Box3.blocks_segment` exactly.
    """
    n_boxes = box_min.shape[0]
    if n_boxes == 0:
        return np.zeros(targets.shape[0], dtype=bool)
    d = targets - source[None, :]  # (K, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (box_min[:, None, :] - source[None, None, :]) / d[None, :, :]  # (B, K, 3)
        t2 = (box_max[:, None, :] - source[None, None, :]) / d[None, :, :]
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    # Axes with zero direction: inside the open slab -> unconstrained,
    # on or outside the slab -> empty interval.
    zero = d == 0.0  # (K, 3)
    inside = (source[None, None, :] > box_min[:, None, :]) & (
        source[None, None, :] < box_max[:, None, :]
    )  # (B, 1, 3)
    zero_b = np.broadcast_to(zero[None, :, :], lo.shape)
    inside_b = np.broadcast_to(inside, lo.shape)
    lo = np.where(zero_b, np.where(inside_b, -np.inf, np.inf), lo)
    hi = np.where(zero_b, np.where(inside_b, np.inf, -np.inf), hi)
    t_lo = np.maximum(lo.max(axis=2), 0.0)  # (B, K)
    t_hi = np.minimum(hi.min(axis=2), 1.0)
    blocked = t_lo < t_hi
    if skip is not None:
        blocked[skip, :] = False
    return blocked.any(axis=0)


@dataclass
class GridMap:
    """Square-grid partition of the map plane with per-grid visibility sets.

    ``valid_indices`` lists (1-based, ascending) the grids not occupied by the
    Tx or any scatterer footprint; ``centers`` is aligned with it. ``visibility``
    maps each valid index to the set of ids (0 = Tx, otherwise scatterer ids)
    with a line of sight to that grid center.
    """

    grid_count_x: int
    grid_count_y: int
    grid_side: float
    plane_height: float
    origin_xy: np.ndarray
    valid_indices: np.ndarray
    centers: np.ndarray
    visibility: dict[int, frozenset[int]]
    _vis_masks: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _pos_of_index: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._pos_of_index:
            self._pos_of_index = {int(i): k for k, i in enumerate(self.valid_indices)}

    @property
    def valid_count(self) -> int:
        return int(self.valid_indices.size)

    def position_of(self, index: int) -> int:
        """Row position of grid ``index`` within the valid arrays."""
        try:
            return self._pos_of_index[int(index)]
        except KeyError:
            raise InvalidArgumentError(f"grid index {index} is not a valid grid") from None

    def center_of(self, index: int) -> np.ndarray:
        return self.centers[self.position_of(index)]

    def ixiy_of(self, index: int) -> tuple[int, int]:
        iy, ix = divmod(int(index) - 1, self.grid_count_x)
        return ix, iy

    def index_of(self, ix: int, iy: int) -> int:
        return iy * self.grid_count_x + ix + 1

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        """Centroid of cell (ix, iy) whether or not the cell is valid."""
        return np.array(
            [
                self.origin_xy[0] + (ix + 0.5) * self.grid_side,
                self.origin_xy[1] + (iy + 0.5) * self.grid_side,
                self.plane_height,
            ]
        )

    def visible_mask(self, vis_id: int) -> np.ndarray:
        """Boolean mask over the valid grids that see ``vis_id``."""
        mask = self._vis_masks.get(vis_id)
        if mask is None:
            mask = np.array(
                [vis_id in self.visibility[int(i)] for i in self.valid_indices], dtype=bool
            )
            self._vis_masks[vis_id] = mask
        return mask


def partition_region(
    scene: Scene, grid_count_x: int, grid_count_y: int, plane_height: float
) -> GridMap:
    """Partition the scene region into square grids and fill visibility sets.

    Grids whose footprint strictly overlaps a scatterer box footprint, or that
    contain the Tx's horizontal position, are excluded. Visibility of each
    scatterer is tested from its box center to the grid center, ignoring the
    scatterer's own box; the Tx (id 0) is tested from its point position.
    """
    if grid_count_x < 1 or grid_count_y < 1:
        raise InvalidArgumentError("grid counts must be >= 1")
    ext = scene.region.extents
    if plane_height < scene.region.min_corner[2] or plane_height > scene.region.max_corner[2]:
        raise InvalidArgumentError(
            f"plane height {plane_height} outside region vertical extent"
        )
    side_x = ext[0] / grid_count_x
    side_y = ext[1] / grid_count_y
    if side_x <= 0.0 or side_y <= 0.0:
        raise InvalidArgumentError("region too small for the requested grid counts")
    if abs(side_x - side_y) > 1e-9 * max(side_x, side_y):
        raise InvalidArgumentError(
            f"grids must be square: cell is {side_x:.6g} m x {side_y:.6g} m"
        )
    side = side_x
    x0, y0 = scene.region.min_corner[0], scene.region.min_corner[1]

    nx, ny = grid_count_x, grid_count_y
    ix_grid, iy_grid = np.meshgrid(np.arange(nx), np.arange(ny))
    ix_flat = ix_grid.ravel()
    iy_flat = iy_grid.ravel()
    cell_x0 = x0 + ix_flat * side
    cell_y0 = y0 + iy_flat * side

    occupied = np.zeros(nx * ny, dtype=bool)
    for sc in scene.scatterers:
        bmin, bmax = sc.box.min_corner, sc.box.max_corner
        occupied |= (
            (bmin[0] < cell_x0 + side)
            & (bmax[0] > cell_x0)
            & (bmin[1] < cell_y0 + side)
            & (bmax[1] > cell_y0)
        )
    # Tx occupies the (half-open) cell containing its horizontal position.
    tx_ix = min(int((scene.tx_position[0] - x0) // side), nx - 1)
    tx_iy = min(int((scene.tx_position[1] - y0) // side), ny - 1)
    occupied[tx_iy * nx + tx_ix] = True

    valid = np.nonzero(~occupied)[0]
    valid_indices = valid + 1
    centers = np.column_stack(
        [
            cell_x0[valid] + 0.5 * side,
            cell_y0[valid] + 0.5 * side,
            np.full(valid.size, float(plane_height)),
        ]
    )

    box_min = np.array([sc.box.min_corner for sc in scene.scatterers]).reshape(-1, 3)
    box_max = np.array([sc.box.max_corner for sc in scene.scatterers]).reshape(-1, 3)

    vis_masks: dict[int, np.ndarray] = {}
    vis_masks[TX_ID] = ~_segments_blocked(scene.tx_position, centers, box_min, box_max)
    for pos, sc in enumerate(scene.scatterers):
        vis_masks[sc.id] = ~_segments_blocked(
            sc.box.center, centers, box_min, box_max, skip=pos
        )

    ordered_ids = [TX_ID] + [sc.id for sc in scene.scatterers]
    visibility = {}
    for k, i in enumerate(valid_indices):
        visibility[int(i)] = frozenset(vid for vid in ordered_ids if vis_masks[vid][k])

    return GridMap(
        grid_count_x=nx,
        grid_count_y=ny,
        grid_side=side,
        plane_height=float(plane_height),
        origin_xy=np.array([x0, y0]),
        valid_indices=valid_indices,
        centers=centers,
        visibility=visibility,
        _vis_masks=vis_masks,
    )
