"""Figure rendering for the report path: map heatmaps and NMSE-vs-L curves.

Figures are written next to the delimited outputs; matplotlib is imported
lazily with the Agg backend so headless runs and --no-figures stay cheap.
"""

from __future__ import annotations

import math

import numpy as np

from .channel import Cgm
from .geometry import GridMap, Scene
from .metrics import AggregateRow
from .synth import MeasurementSet


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def render_map_figure(
    path,
    grid: GridMap,
    cgm: Cgm,
    title: str = "channel gain map",
    scene: Scene | None = None,
    measurements: MeasurementSet | None = None,
) -> None:
    """Render a CGM as a dB heatmap; occupied cells are left blank."""
    plt = _pyplot()
    nx, ny = grid.grid_count_x, grid.grid_count_y
    img = np.full((ny, nx), np.nan)
    exported = cgm.exported_values()
    positive = exported[exported > 0]
    floor = positive.min() * 1e-3 if positive.size else 1e-30
    for index, gain in zip(cgm.indices, exported):
        ix, iy = grid.ixiy_of(int(index))
        img[iy, ix] = 10.0 * math.log10(max(gain, floor))
    x0, y0 = grid.origin_xy
    extent = [x0, x0 + nx * grid.grid_side, y0, y0 + ny * grid.grid_side]

    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    im = ax.imshow(img, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, label="gain (dB)")
    if scene is not None:
        for sc in scene.scatterers:
            bx0, by0 = sc.box.min_corner[0], sc.box.min_corner[1]
            w = sc.box.max_corner[0] - bx0
            h = sc.box.max_corner[1] - by0
            ax.add_patch(
                plt.Rectangle((bx0, by0), w, h, fill=False, edgecolor="k", linewidth=0.8)
            )
        ax.plot(scene.tx_position[0], scene.tx_position[1], "r^", markersize=8, label="Tx")
        ax.legend(loc="upper right", fontsize=8)
    if measurements is not None:
        pts = np.array([grid.center_of(int(i))[:2] for i in measurements.indices])
        ax.plot(pts[:, 0], pts[:, 1], "wx", markersize=4)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_nmse_curves(path, aggregates: list[AggregateRow]) -> None:
    """NMSE vs number of measurements, one curve per (method, selection)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    groups: dict[tuple[str, str], list[AggregateRow]] = {}
    for row in aggregates:
        groups.setdefault((row.method, row.selection), []).append(row)
    for (method, selection), rows in sorted(groups.items()):
        rows = sorted(rows, key=lambda r: r.L)
        ls = [r.L for r in rows]
        means = [r.mean_nmse for r in rows]
        stds = [r.std_nmse for r in rows]
        label = method if len({s for _, s in groups} ) == 1 else f"{method} ({selection})"
        ax.errorbar(ls, means, yerr=stds, marker="o", capsize=3, label=label)
    ax.set_xlabel("number of measurements L")
    ax.set_ylabel("map NMSE")
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
