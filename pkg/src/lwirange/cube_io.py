"""Bit-exact binary persistence: the LWC1 container.

Layout: 4-byte magic ``LWC1``, a little-endian uint32 byte length, a UTF-8
JSON header, then the body. Cube and omega bodies are IEEE-754 binary32,
little endian, row major [i][j][k]; map bodies are an (M, N) binary32 plane
followed by an (M, N) uint8 validity plane. Headers carry no timestamps, so
writing the same data twice produces identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .closed_form import RangeMap
from .errors import DimensionError, FormatError
from .forward_model import SceneCube, SceneTruth
from .hyperspectral import EstimateMaps
from .radiometry import MICROFLICK, SpectralGrid, Temperature

MAGIC = b"LWC1"
_CREATED = "lwirange-0.1.0"
_KINDS = ("cube", "map", "omega")
_MAX_BODY_BYTES = 2 ** 62


@dataclass
class CubeHeader:
    """Self-describing metadata stored in front of every LWC1 body."""

    kind: str
    rows: int
    cols: int
    bands: int
    sectors: int | None = None
    wavelengths_um: tuple | None = None
    unit: str = MICROFLICK
    air_temperature_k: float | None = None
    noise_sigma: float | None = None
    zenith_angles_deg: tuple | None = None
    created: str = _CREATED

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise FormatError(f"unknown container kind {self.kind!r}")
        for name in ("rows", "cols"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise FormatError(f"{name} must be a positive integer, got {v}")
        if int(self.bands) != self.bands or self.bands < 0:
            raise FormatError(f"bands must be a non-negative integer, got {self.bands}")
        if self.kind == "map" and self.bands != 1:
            raise FormatError(f"map containers carry one band, got {self.bands}")
        if self.kind == "cube" and self.bands < 1:
            raise FormatError("cube containers need at least one band")
        if self.kind == "omega":
            if self.sectors is None:
                self.sectors = self.bands
            if self.sectors != self.bands:
                raise FormatError(
                    f"omega sectors ({self.sectors}) must equal the third dim ({self.bands})")
        if self.wavelengths_um is not None:
            w = tuple(float(x) for x in self.wavelengths_um)
            if len(w) != self.bands:
                raise FormatError(
                    f"header lists {len(w)} wavelengths for {self.bands} bands")
            self.wavelengths_um = w
        if self.zenith_angles_deg is not None:
            self.zenith_angles_deg = tuple(float(x) for x in self.zenith_angles_deg)
        nbytes = self.rows * self.cols * max(self.bands, 1) * 4
        if nbytes > _MAX_BODY_BYTES:
            raise FormatError(f"dims overflow the container ({nbytes} body bytes)")

    def body_bytes(self) -> int:
        n = self.rows * self.cols
        if self.kind == "map":
            return n * 4 + n
        return n * self.bands * 4

    def to_json(self) -> bytes:
        d = asdict(self)
        d["wavelengths_um"] = (
            None if self.wavelengths_um is None else list(self.wavelengths_um))
        d["zenith_angles_deg"] = (
            None if self.zenith_angles_deg is None else list(self.zenith_angles_deg))
        return json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json(cls, raw: bytes) -> "CubeHeader":
        try:
            d = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"undecodable header: {exc}") from exc
        if not isinstance(d, dict):
            raise FormatError("header must be a JSON object")
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed
        if unknown:
            raise FormatError(f"unknown header keys: {sorted(unknown)}")
        missing = {"kind", "rows", "cols", "bands"} - set(d)
        if missing:
            raise FormatError(f"header missing keys: {sorted(missing)}")
        kwargs = dict(d)
        for key in ("wavelengths_um", "zenith_angles_deg"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _write_container(path, header: CubeHeader, body: bytes):
    hj = header.to_json()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hj)))
        fh.write(hj)
        fh.write(body)


def _read_container(path):
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(
            f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise FormatError(
            f"{path}: truncated header: expected {hlen} bytes, got {len(raw) - 8}")
    header = CubeHeader.from_json(raw[8:8 + hlen])
    body = raw[8 + hlen:]
    expected = header.body_bytes()
    if len(body) != expected:
        raise FormatError(
            f"{path}: truncated body: expected {expected} bytes, got {len(body)}")
    return header, body


def write_cube(path, header: CubeHeader, data):
    """Write a (rows, cols, bands) float array under a cube/omega header."""
    if header.kind == "map":
        raise FormatError("write_cube cannot write map containers; use write_map")
    arr = np.asarray(data)
    if arr.shape != (header.rows, header.cols, header.bands):
        raise DimensionError(
            f"data shape {arr.shape} does not match header "
            f"({header.rows}, {header.cols}, {header.bands})")
    _write_container(path, header, arr.astype("<f4").tobytes(order="C"))


def read_cube(path):
    """Read a cube/omega container; returns (header, float32 array)."""
    header, body = _read_container(path)
    if header.kind == "map":
        raise FormatError(
            f"{path}: kind mismatch: expected 'cube' or 'omega', found 'map'")
    data = np.frombuffer(body, dtype="<f4").reshape(
        header.rows, header.cols, header.bands).copy()
    return header, data


def write_map(path, header: CubeHeader, values, flags):
    """Write an (M, N) scalar map with a parallel uint8 validity plane."""
    if header.kind != "map":
        raise FormatError(f"write_map needs a map header, got kind {header.kind!r}")
    val = np.asarray(values)
    flg = np.asarray(flags)
    if val.shape != (header.rows, header.cols):
        raise DimensionError(
            f"values shape {val.shape} does not match header "
            f"({header.rows}, {header.cols})")
    if flg.shape != val.shape:
        raise DimensionError(f"flags shape {flg.shape} does not match values")
    body = val.astype("<f4").tobytes(order="C") + flg.astype(np.uint8).tobytes(order="C")
    _write_container(path, header, body)


def read_map(path):
    """Read a map container; returns (header, float32 values, uint8 flags)."""
    header, body = _read_container(path)
    if header.kind != "map":
        raise FormatError(
            f"{path}: kind mismatch: expected 'map', found {header.kind!r}")
    n = header.rows * header.cols
    values = np.frombuffer(body[:n * 4], dtype="<f4").reshape(
        header.rows, header.cols).copy()
    flags = np.frombuffer(body[n * 4:], dtype=np.uint8).reshape(
        header.rows, header.cols).copy()
    return header, values, flags


# ----------------------------------------------------------------------
# typed wrappers
# ----------------------------------------------------------------------

def save_scene_cube(path, cube: SceneCube):
    header = CubeHeader(
        kind="cube",
        rows=cube.radiance.shape[0],
        cols=cube.radiance.shape[1],
        bands=cube.radiance.shape[2],
        wavelengths_um=tuple(cube.grid.wavelengths),
        unit=MICROFLICK,
        air_temperature_k=cube.air_temperature.kelvin,
        noise_sigma=cube.noise_sigma,
    )
    write_cube(path, header, cube.radiance)


def load_scene_cube(path) -> SceneCube:
    header, data = read_cube(path)
    if header.kind != "cube":
        raise FormatError(f"{path}: kind mismatch: expected 'cube', found {header.kind!r}")
    if header.wavelengths_um is None:
        raise FormatError(f"{path}: cube header carries no wavelength grid")
    if header.air_temperature_k is None:
        raise FormatError(f"{path}: cube header carries no air temperature")
    return SceneCube(
        radiance=data.astype(np.float64),
        grid=SpectralGrid(np.array(header.wavelengths_um)),
        air_temperature=Temperature(header.air_temperature_k),
        noise_sigma=header.noise_sigma if header.noise_sigma is not None else 0.0,
    )


def _map_header(rows, cols, unit):
    return CubeHeader(kind="map", rows=rows, cols=cols, bands=1, unit=unit)


def save_range_map(path, rm: RangeMap):
    write_map(path, _map_header(*rm.distances.shape, "m"), rm.distances, rm.validity)


def load_range_map(path) -> RangeMap:
    _, values, flags = read_map(path)
    return RangeMap(distances=values.astype(np.float64), validity=flags)


_EST_FILES = {
    "distance": ("distance.lwc", "m"),
    "temperature": ("temperature.lwc", "K"),
    "loss": ("loss.lwc", "microflick^2"),
    "iterations": ("iterations.lwc", "count"),
}


def save_estimates(dirpath, est: EstimateMaps, grid: SpectralGrid | None = None,
                   zenith_angles_deg=None):
    """Write one EstimateMaps as a directory of LWC1 files."""
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    m, n = est.distance.shape
    zeros = np.zeros((m, n), dtype=np.uint8)
    for field_name, (fname, unit) in _EST_FILES.items():
        write_map(out / fname, _map_header(m, n, unit),
                  getattr(est, field_name), zeros)
    k = est.emissivity.shape[2]
    eh = CubeHeader(kind="cube", rows=m, cols=n, bands=k,
                    wavelengths_um=None if grid is None else tuple(grid.wavelengths),
                    unit="dimensionless")
    write_cube(out / "emissivity.lwc", eh, est.emissivity)
    q = est.solid_angles.shape[2]
    oh = CubeHeader(kind="omega", rows=m, cols=n, bands=q, sectors=q,
                    unit="sr",
                    zenith_angles_deg=None if zenith_angles_deg is None
                    else tuple(zenith_angles_deg))
    write_cube(out / "solid_angles.lwc", oh, est.solid_angles)


def load_estimates(dirpath) -> EstimateMaps:
    src = Path(dirpath)
    parts = {}
    for field_name, (fname, _) in _EST_FILES.items():
        _, values, _ = read_map(src / fname)
        parts[field_name] = values.astype(np.float64)
    _, eps = read_cube(src / "emissivity.lwc")
    _, om = read_cube(src / "solid_angles.lwc")
    return EstimateMaps(
        distance=parts["distance"],
        temperature=parts["temperature"],
        emissivity=eps.astype(np.float64),
        solid_angles=om.astype(np.float64),
        loss=parts["loss"],
        iterations=parts["iterations"].astype(np.int64),
    )


def save_scene_truth(dirpath, truth: SceneTruth, grid: SpectralGrid,
                     zenith_angles_deg=None):
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    m, n = truth.distance_map.shape
    zeros = np.zeros((m, n), dtype=np.uint8)
    write_map(out / "truth_distance.lwc", _map_header(m, n, "m"),
              truth.distance_map, zeros)
    write_map(out / "truth_temperature.lwc", _map_header(m, n, "K"),
              truth.temperature_map, zeros)
    k = truth.emissivity_cube.shape[2]
    write_cube(out / "truth_emissivity.lwc",
               CubeHeader(kind="cube", rows=m, cols=n, bands=k,
                          wavelengths_um=tuple(grid.wavelengths),
                          unit="dimensionless"),
               truth.emissivity_cube)
    q = truth.solid_angle_maps.shape[2]
    write_cube(out / "truth_solid_angles.lwc",
               CubeHeader(kind="omega", rows=m, cols=n, bands=q, sectors=q,
                          unit="sr",
                          zenith_angles_deg=None if zenith_angles_deg is None
                          else tuple(zenith_angles_deg)),
               truth.solid_angle_maps)
    write_cube(out / "truth_ground.lwc",
               CubeHeader(kind="cube", rows=m, cols=n, bands=k,
                          wavelengths_um=tuple(grid.wavelengths),
                          unit=MICROFLICK),
               truth.ground_ambient)


def load_scene_truth(dirpath) -> SceneTruth:
    src = Path(dirpath)
    _, d, _ = read_map(src / "truth_distance.lwc")
    _, t, _ = read_map(src / "truth_temperature.lwc")
    _, eps = read_cube(src / "truth_emissivity.lwc")
    _, om = read_cube(src / "truth_solid_angles.lwc")
    _, ga = read_cube(src / "truth_ground.lwc")
    return SceneTruth(
        distance_map=d.astype(np.float64),
        temperature_map=t.astype(np.float64),
        emissivity_cube=eps.astype(np.float64),
        solid_angle_maps=om.astype(np.float64),
        ground_ambient=ga.astype(np.float64),
    )
