"""File formats: scene JSON, CGM CSV, measurement CSV, model JSON, config
files (TOML or JSON), and sweep result CSVs.

All gains are stored linear; the CGM CSV's gain_db column is a human-facing
convenience. Floats in CSVs are written with repr so files round-trip
losslessly and identical computations produce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .baselines import BaselineConfig
from .channel import Cgm, VirtualScattererSet
from .estimation import EstimatorConfig
from .exceptions import FileFormatError
from .geometry import AodSectorization, Box3, GridMap, PhysicalScatterer, Scene
from .gpr import GprConfig, GprModel
from .metrics import AggregateRow, RunRow
from .synth import MeasurementSet, TruthSpec


def _fmt(x: float) -> str:
    return repr(float(x))


def _vec3(obj, context: str) -> list[float]:
    if not isinstance(obj, (list, tuple)) or len(obj) != 3:
        raise FileFormatError(f"{context}: expected a 3-element array, got {obj!r}")
    try:
        return [float(v) for v in obj]
    except (TypeError, ValueError) as exc:
        raise FileFormatError(f"{context}: non-numeric entries in {obj!r}") from exc


# ---------------------------------------------------------------------------
# Scene JSON
# ---------------------------------------------------------------------------

def save_scene(scene: Scene, path) -> None:
    doc = {
        "region": {
            "min": scene.region.min_corner.tolist(),
            "max": scene.region.max_corner.tolist(),
        },
        "tx": scene.tx_position.tolist(),
        "beta0": scene.beta0,
        "alpha": scene.alpha,
        "wavelength": scene.wavelength,
        "scatterers": [
            {"id": sc.id, "min": sc.box.min_corner.tolist(), "max": sc.box.max_corner.tolist()}
            for sc in scene.scatterers
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_scene(path) -> Scene:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON ({exc})") from exc
    for key in ("region", "tx", "beta0", "alpha", "wavelength", "scatterers"):
        if key not in doc:
            raise FileFormatError(f"{path}: missing key {key!r}")
    region = doc["region"]
    if not isinstance(region, dict) or "min" not in region or "max" not in region:
        raise FileFormatError(f"{path}: region must carry 'min' and 'max'")
    scatterers = []
    for k, item in enumerate(doc["scatterers"]):
        for key in ("id", "min", "max"):
            if key not in item:
                raise FileFormatError(f"{path}: scatterers[{k}] missing key {key!r}")
        scatterers.append(
            PhysicalScatterer(
                id=int(item["id"]),
                box=Box3(
                    _vec3(item["min"], f"{path}: scatterers[{k}].min"),
                    _vec3(item["max"], f"{path}: scatterers[{k}].max"),
                ),
            )
        )
    return Scene(
        region=Box3(
            _vec3(region["min"], f"{path}: region.min"),
            _vec3(region["max"], f"{path}: region.max"),
        ),
        tx_position=np.array(_vec3(doc["tx"], f"{path}: tx")),
        scatterers=tuple(scatterers),
        beta0=float(doc["beta0"]),
        alpha=float(doc["alpha"]),
        wavelength=float(doc["wavelength"]),
    )


# ---------------------------------------------------------------------------
# CGM CSV
# ---------------------------------------------------------------------------

MAP_HEADER = ["ix", "iy", "x", "y", "gain_linear", "gain_db"]


def save_map_csv(path, grid: GridMap, cgm: Cgm) -> None:
    """One row per grid cell; occupied cells carry empty gain fields.

    Negative estimated gains are clamped to 0 on export; gain_db is empty
    where the linear gain is 0.
    """
    lookup = dict(zip(cgm.indices.tolist(), cgm.exported_values().tolist()))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MAP_HEADER)
        for iy in range(grid.grid_count_y):
            for ix in range(grid.grid_count_x):
                index = grid.index_of(ix, iy)
                center = grid.cell_center(ix, iy)
                if index in lookup:
                    gain = lookup[index]
                    db = f"{10.0 * math.log10(gain):.4f}" if gain > 0.0 else ""
                    writer.writerow([ix, iy, _fmt(center[0]), _fmt(center[1]), _fmt(gain), db])
                else:
                    writer.writerow([ix, iy, _fmt(center[0]), _fmt(center[1]), "", ""])


def load_map_csv(path) -> tuple[int, int, Cgm]:
    """Read a CGM CSV back into (grid_count_x, grid_count_y, Cgm)."""
    indices, values = [], []
    max_ix = max_iy = -1
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MAP_HEADER:
            raise FileFormatError(f"{path}: expected header {','.join(MAP_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(MAP_HEADER):
                raise FileFormatError(f"{path}:{lineno}: expected {len(MAP_HEADER)} fields")
            try:
                ix, iy = int(row[0]), int(row[1])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: bad grid indices") from exc
            max_ix = max(max_ix, ix)
            max_iy = max(max_iy, iy)
            if row[4] != "":
                try:
                    gain = float(row[4])
                except ValueError as exc:
                    raise FileFormatError(f"{path}:{lineno}: bad gain_linear") from exc
                indices.append((iy, ix))
                values.append(gain)
    nx, ny = max_ix + 1, max_iy + 1
    if nx <= 0 or ny <= 0:
        raise FileFormatError(f"{path}: no grid rows found")
    flat = np.array([iy * nx + ix + 1 for iy, ix in indices], dtype=int)
    order = np.argsort(flat)
    return nx, ny, Cgm(indices=flat[order], values=np.asarray(values)[order])


# ---------------------------------------------------------------------------
# Measurement CSV
# ---------------------------------------------------------------------------

MEASUREMENT_HEADER = ["grid_index", "gain_linear"]


def save_measurements_csv(path, measurements: MeasurementSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MEASUREMENT_HEADER)
        for i, g in zip(measurements.indices, measurements.gains):
            writer.writerow([int(i), _fmt(g)])


def load_measurements_csv(path, selection_type: str = "file", seed: int = 0) -> MeasurementSet:
    indices, gains = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MEASUREMENT_HEADER:
            raise FileFormatError(f"{path}: expected header {','.join(MEASUREMENT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise FileFormatError(f"{path}:{lineno}: expected 2 fields")
            try:
                indices.append(int(row[0]))
                gains.append(float(row[1]))
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: bad measurement row") from exc
    if not indices:
        raise FileFormatError(f"{path}: no measurements")
    return MeasurementSet(
        indices=np.asarray(indices), gains=np.asarray(gains),
        selection_type=selection_type, seed=seed,
    )


# ---------------------------------------------------------------------------
# Model JSON
# ---------------------------------------------------------------------------

def save_model_json(
    path,
    vs: VirtualScattererSet,
    sectors: AodSectorization,
    gpr_models: list[GprModel | None] | None = None,
    metadata: dict | None = None,
) -> None:
    doc: dict = {
        "sectorization": {"m_azimuth": sectors.m_azimuth, "m_elevation": sectors.m_elevation},
        "scatterers": [],
    }
    if metadata:
        doc["metadata"] = metadata
    for n0 in range(vs.count):
        entry: dict = {
            "position": vs.positions[n0].tolist(),
            "anchor_id": int(vs.anchor_ids[n0]),
            "srcs": [
                float(vs.srcs[n0, m0]) if vs.defined[n0, m0] else None
                for m0 in range(vs.n_sectors)
            ],
        }
        if gpr_models is not None and gpr_models[n0] is not None:
            model = gpr_models[n0]
            entry["gpr"] = {
                "v": model.v,
                "rho": model.rho,
                "sigma": model.sigma,
                "m_trained": model.n_training,
            }
        doc["scatterers"].append(entry)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_model_json(path) -> tuple[VirtualScattererSet, AodSectorization]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON ({exc})") from exc
    try:
        sectors = AodSectorization(
            int(doc["sectorization"]["m_azimuth"]), int(doc["sectorization"]["m_elevation"])
        )
        entries = doc["scatterers"]
        n = len(entries)
        vs = VirtualScattererSet(
            positions=np.array([e["position"] for e in entries]).reshape(n, 3),
            anchor_ids=np.array([e["anchor_id"] for e in entries], dtype=int),
            srcs=np.zeros((n, sectors.count)),
            defined=np.zeros((n, sectors.count), dtype=bool),
        )
        for n0, e in enumerate(entries):
            srcs = e["srcs"]
            if len(srcs) != sectors.count:
                raise FileFormatError(
                    f"{path}: scatterer {n0} has {len(srcs)} SRC entries, expected {sectors.count}"
                )
            for m0, value in enumerate(srcs):
                if value is not None:
                    vs.srcs[n0, m0] = float(value)
                    vs.defined[n0, m0] = True
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed model JSON ({exc})") from exc
    return vs, sectors


# ---------------------------------------------------------------------------
# JSON / config helpers
# ---------------------------------------------------------------------------

def save_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON ({exc})") from exc


def load_config_file(path) -> dict:
    """Read a TOML or JSON config document, auto-detected by extension."""
    p = Path(path)
    if p.suffix.lower() == ".toml":
        try:
            with open(p, "rb") as fh:
                return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise FileFormatError(f"{path}: not valid TOML ({exc})") from exc
    return load_json(p)


def _build_dataclass(cls, data: dict, context: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise FileFormatError(
            f"{context}: unknown keys {sorted(unknown)}; valid keys: {sorted(fields)}"
        )
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise FileFormatError(f"{context}: {exc}") from exc


def estimator_config_from(data: dict, context: str = "estimator") -> EstimatorConfig:
    return _build_dataclass(EstimatorConfig, data, context)


def gpr_config_from(data: dict, context: str = "gpr") -> GprConfig:
    return _build_dataclass(GprConfig, data, context)


def baseline_config_from(data: dict, context: str = "baseline") -> BaselineConfig:
    data = dict(data)
    estimator = data.pop("estimator", None)
    gpr = data.pop("gpr", None)
    config = _build_dataclass(BaselineConfig, data, context)
    if estimator is not None:
        config = dataclasses.replace(config, estimator=estimator_config_from(estimator))
    if gpr is not None:
        config = dataclasses.replace(config, gpr=gpr_config_from(gpr))
    return config


def truth_spec_from(data: dict, context: str = "truth") -> TruthSpec:
    return _build_dataclass(TruthSpec, data, context)


# ---------------------------------------------------------------------------
# Sweep results CSVs
# ---------------------------------------------------------------------------

RESULTS_HEADER = ["seed", "L", "selection", "method", "nmse", "runtime_ms", "status"]
AGGREGATES_HEADER = ["L", "selection", "method", "mean_nmse", "std_nmse", "n_ok"]


def save_results_csv(path, rows: list[RunRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in rows:
            nmse = _fmt(r.nmse) if math.isfinite(r.nmse) else ""
            writer.writerow(
                [r.seed, r.L, r.selection, r.method, nmse, f"{r.runtime_ms:.3f}", r.status]
            )


def load_results_csv(path) -> list[RunRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULTS_HEADER:
            raise FileFormatError(f"{path}: expected header {','.join(RESULTS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RESULTS_HEADER):
                raise FileFormatError(f"{path}:{lineno}: expected {len(RESULTS_HEADER)} fields")
            try:
                rows.append(
                    RunRow(
                        seed=int(row[0]),
                        L=int(row[1]),
                        selection=row[2],
                        method=row[3],
                        nmse=float(row[4]) if row[4] != "" else float("nan"),
                        runtime_ms=float(row[5]),
                        status=row[6],
                    )
                )
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: bad results row") from exc
    return rows


def save_aggregates_csv(path, rows: list[AggregateRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATES_HEADER)
        for r in rows:
            mean = _fmt(r.mean_nmse) if math.isfinite(r.mean_nmse) else ""
            std = _fmt(r.std_nmse) if math.isfinite(r.std_nmse) else ""
            writer.writerow([r.L, r.selection, r.method, mean, std, r.n_ok])
