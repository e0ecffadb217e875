"""Container format tests: bit-exact roundtrips and hostile-input errors."""

import struct

import numpy as np
import numpy.testing as npt
import pytest

from lwirange import (
    CubeHeader,
    DimensionError,
    EstimateMaps,
    FormatError,
    MICROFLICK,
    SceneCube,
    SpectralGrid,
    Temperature,
    load_estimates,
    load_range_map,
    load_scene_cube,
    load_scene_truth,
    read_cube,
    read_map,
    save_estimates,
    save_range_map,
    save_scene_cube,
    save_scene_truth,
    write_cube,
    write_map,
)
from lwirange.closed_form import RangeMap
from lwirange.forward_model import SceneTruth
from helpers import micro_scene


def f32(rng, shape, lo=0.0, hi=1000.0):
    # values born as float32 so the on-disk cast is lossless
    span = np.float32(hi - lo)
    return (rng.random(shape, dtype=np.float32) * span + np.float32(lo))


class TestRoundTrip:
    def test_cube_bits_survive_100_random_shapes(self, tmp_path):
        rng = np.random.default_rng(0)
        for trial in range(100):
            if trial == 0:
                m = n = k = 1  # the degenerate single-voxel container
            else:
                m, n, k = (int(x) for x in rng.integers(1, 6, size=3))
            data = f32(rng, (m, n, k))
            path = tmp_path / f"c{trial}.lwc"
            header = CubeHeader(kind="cube", rows=m, cols=n, bands=k)
            write_cube(path, header, data)
            back_header, back = read_cube(path)
            assert back.dtype == np.float32
            npt.assert_array_equal(back, data)
            assert (back_header.rows, back_header.cols, back_header.bands) \
                == (m, n, k)

    def test_write_twice_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        data = f32(rng, (3, 4, 5))
        header = CubeHeader(kind="cube", rows=3, cols=4, bands=5,
                            wavelengths_um=tuple(np.linspace(8.0, 13.2, 5)))
        write_cube(tmp_path / "a.lwc", header, data)
        write_cube(tmp_path / "b.lwc", header, data)
        assert (tmp_path / "a.lwc").read_bytes() == (tmp_path / "b.lwc").read_bytes()

    def test_read_write_read_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        data = f32(rng, (2, 2, 3))
        write_cube(tmp_path / "a.lwc",
                   CubeHeader(kind="cube", rows=2, cols=2, bands=3), data)
        header, back = read_cube(tmp_path / "a.lwc")
        write_cube(tmp_path / "b.lwc", header, back)
        assert (tmp_path / "a.lwc").read_bytes() == (tmp_path / "b.lwc").read_bytes()

    def test_map_roundtrip_with_flags(self, tmp_path):
        rng = np.random.default_rng(3)
        values = f32(rng, (4, 7))
        flags = rng.integers(0, 4, size=(4, 7)).astype(np.uint8)
        header = CubeHeader(kind="map", rows=4, cols=7, bands=1, unit="m")
        write_map(tmp_path / "m.lwc", header, values, flags)
        back_header, v, f = read_map(tmp_path / "m.lwc")
        npt.assert_array_equal(v, values)
        npt.assert_array_equal(f, flags)
        assert f.dtype == np.uint8
        assert back_header.unit == "m"

    def test_range_map_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        rm = RangeMap(distances=f32(rng, (3, 3), 0.0, 100.0).astype(np.float64),
                      validity=rng.integers(0, 4, (3, 3)).astype(np.uint8))
        save_range_map(tmp_path / "r.lwc", rm)
        back = load_range_map(tmp_path / "r.lwc")
        npt.assert_array_equal(back.distances, rm.distances)
        npt.assert_array_equal(back.validity, rm.validity)

    def test_scene_cube_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        grid = SpectralGrid(np.linspace(8.0, 13.2, 6))
        cube = SceneCube(radiance=f32(rng, (2, 3, 6), 1.0, 900.0).astype(np.float64),
                         grid=grid, air_temperature=Temperature(291.5),
                         noise_sigma=0.75)
        save_scene_cube(tmp_path / "cube.lwc", cube)
        back = load_scene_cube(tmp_path / "cube.lwc")
        npt.assert_array_equal(back.radiance, cube.radiance)
        assert back.grid == grid
        assert back.air_temperature.kelvin == 291.5
        assert back.noise_sigma == 0.75

    def test_estimates_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        m, n, k, q = 3, 2, 5, 3
        est = EstimateMaps(
            distance=f32(rng, (m, n), 0.0, 150.0).astype(np.float64),
            temperature=f32(rng, (m, n), 280.0, 300.0).astype(np.float64),
            emissivity=f32(rng, (m, n, k), 0.0, 1.0).astype(np.float64),
            solid_angles=f32(rng, (m, n, q), 0.0, 0.9 * np.pi / q).astype(np.float64),
            loss=f32(rng, (m, n)).astype(np.float64),
            iterations=rng.integers(1, 100, (m, n)).astype(np.int64),
        )
        grid = SpectralGrid(np.linspace(8.0, 13.2, k))
        save_estimates(tmp_path / "est", est, grid, zenith_angles_deg=(0.0, 30.0, 60.0))
        back = load_estimates(tmp_path / "est")
        npt.assert_array_equal(back.distance, est.distance)
        npt.assert_array_equal(back.temperature, est.temperature)
        npt.assert_array_equal(back.emissivity, est.emissivity)
        npt.assert_array_equal(back.solid_angles, est.solid_angles)
        npt.assert_array_equal(back.loss, est.loss)
        npt.assert_array_equal(back.iterations, est.iterations)
        assert back.iterations.dtype == np.int64

    def test_scene_truth_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        m, n, k, q = 2, 3, 4, 2
        truth = SceneTruth(
            distance_map=f32(rng, (m, n), 1.0, 80.0).astype(np.float64),
            temperature_map=f32(rng, (m, n), 280.0, 310.0).astype(np.float64),
            emissivity_cube=f32(rng, (m, n, k), 0.1, 1.0).astype(np.float64),
            solid_angle_maps=f32(rng, (m, n, q), 0.0, 0.9 * np.pi / q).astype(np.float64),
            ground_ambient=f32(rng, (m, n, k), 100.0, 900.0).astype(np.float64),
        )
        grid = SpectralGrid(np.linspace(8.0, 13.2, k))
        save_scene_truth(tmp_path / "truth", truth, grid)
        back = load_scene_truth(tmp_path / "truth")
        npt.assert_array_equal(back.distance_map, truth.distance_map)
        npt.assert_array_equal(back.temperature_map, truth.temperature_map)
        npt.assert_array_equal(back.emissivity_cube, truth.emissivity_cube)
        npt.assert_array_equal(back.solid_angle_maps, truth.solid_angle_maps)
        npt.assert_array_equal(back.ground_ambient, truth.ground_ambient)


class TestHeader:
    def test_json_roundtrip_keeps_every_field(self):
        header = CubeHeader(kind="cube", rows=2, cols=3, bands=4,
                            wavelengths_um=(8.0, 9.0, 10.5, 13.2),
                            unit=MICROFLICK, air_temperature_k=295.0,
                            noise_sigma=1.25)
        assert CubeHeader.from_json(header.to_json()) == header

    def test_unknown_kind_rejected(self):
        with pytest.raises(FormatError, match="unknown container kind"):
            CubeHeader(kind="tensor", rows=1, cols=1, bands=1)

    def test_map_needs_single_band(self):
        with pytest.raises(FormatError, match="one band"):
            CubeHeader(kind="map", rows=2, cols=2, bands=3)

    def test_cube_needs_bands(self):
        with pytest.raises(FormatError, match="at least one band"):
            CubeHeader(kind="cube", rows=2, cols=2, bands=0)

    def test_omega_sector_mismatch_rejected(self):
        with pytest.raises(FormatError, match="sectors"):
            CubeHeader(kind="omega", rows=2, cols=2, bands=3, sectors=4)

    def test_wavelength_count_must_match_bands(self):
        with pytest.raises(FormatError, match="wavelengths"):
            CubeHeader(kind="cube", rows=1, cols=1, bands=3,
                       wavelengths_um=(8.0, 9.0))

    def test_unknown_header_key_rejected(self):
        header = CubeHeader(kind="cube", rows=1, cols=1, bands=1)
        raw = header.to_json().replace(b'"kind"', b'"zoom":1,"kind"')
        with pytest.raises(FormatError, match="unknown header keys.*zoom"):
            CubeHeader.from_json(raw)

    def test_missing_header_key_rejected(self):
        with pytest.raises(FormatError, match="missing keys.*rows"):
            CubeHeader.from_json(b'{"kind":"cube","cols":1,"bands":1}')

    def test_undecodable_header_rejected(self):
        with pytest.raises(FormatError, match="undecodable header"):
            CubeHeader.from_json(b"{not json")
        with pytest.raises(FormatError, match="JSON object"):
            CubeHeader.from_json(b"[1,2]")


class TestHostileFiles:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.lwc"
        path.write_bytes(b"XWC1" + b"\x00" * 16)
        with pytest.raises(FormatError, match="bad magic"):
            read_cube(path)

    def test_too_short_for_magic(self, tmp_path):
        path = tmp_path / "x.lwc"
        path.write_bytes(b"LW")
        with pytest.raises(FormatError, match="bad magic"):
            read_cube(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "x.lwc"
        path.write_bytes(b"LWC1" + struct.pack("<I", 999) + b"{}")
        with pytest.raises(FormatError, match="truncated header: expected 999 bytes, got 2"):
            read_cube(path)

    def test_truncated_body_reports_exact_counts(self, tmp_path):
        rng = np.random.default_rng(8)
        path = tmp_path / "x.lwc"
        write_cube(path, CubeHeader(kind="cube", rows=2, cols=2, bands=2),
                   f32(rng, (2, 2, 2)))
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(FormatError, match="truncated body: expected 32 bytes, got 29"):
            read_cube(path)

    def test_kind_mismatch_on_read_map(self, tmp_path):
        rng = np.random.default_rng(9)
        path = tmp_path / "c.lwc"
        write_cube(path, CubeHeader(kind="cube", rows=1, cols=1, bands=1),
                   f32(rng, (1, 1, 1)))
        with pytest.raises(FormatError, match="expected 'map'"):
            read_map(path)

    def test_kind_mismatch_on_read_cube(self, tmp_path):
        path = tmp_path / "m.lwc"
        write_map(path, CubeHeader(kind="map", rows=1, cols=1, bands=1),
                  np.zeros((1, 1)), np.zeros((1, 1), dtype=np.uint8))
        with pytest.raises(FormatError, match="found 'map'"):
            read_cube(path)

    def test_scene_cube_rejects_omega_container(self, tmp_path):
        rng = np.random.default_rng(10)
        path = tmp_path / "o.lwc"
        write_cube(path, CubeHeader(kind="omega", rows=1, cols=1, bands=2),
                   f32(rng, (1, 1, 2)))
        with pytest.raises(FormatError, match="kind mismatch"):
            load_scene_cube(path)

    def test_scene_cube_needs_grid_and_temperature(self, tmp_path):
        rng = np.random.default_rng(11)
        path = tmp_path / "c.lwc"
        write_cube(path, CubeHeader(kind="cube", rows=1, cols=1, bands=2,
                                    air_temperature_k=295.0),
                   f32(rng, (1, 1, 2)))
        with pytest.raises(FormatError, match="no wavelength grid"):
            load_scene_cube(path)
        write_cube(path, CubeHeader(kind="cube", rows=1, cols=1, bands=2,
                                    wavelengths_um=(8.0, 9.0)),
                   f32(rng, (1, 1, 2)))
        with pytest.raises(FormatError, match="no air temperature"):
            load_scene_cube(path)


class TestWriterGuards:
    def test_write_cube_rejects_map_header(self):
        with pytest.raises(FormatError, match="use write_map"):
            write_cube("/dev/null",
                       CubeHeader(kind="map", rows=1, cols=1, bands=1),
                       np.zeros((1, 1, 1)))

    def test_write_map_rejects_cube_header(self):
        with pytest.raises(FormatError, match="needs a map header"):
            write_map("/dev/null",
                      CubeHeader(kind="cube", rows=1, cols=1, bands=1),
                      np.zeros((1, 1)), np.zeros((1, 1), dtype=np.uint8))

    def test_shape_mismatch_rejected(self, tmp_path):
        with pytest.raises(DimensionError, match="does not match header"):
            write_cube(tmp_path / "x.lwc",
                       CubeHeader(kind="cube", rows=2, cols=2, bands=2),
                       np.zeros((2, 2, 3)))
        with pytest.raises(DimensionError, match="flags shape"):
            write_map(tmp_path / "x.lwc",
                      CubeHeader(kind="map", rows=2, cols=2, bands=1),
                      np.zeros((2, 2)), np.zeros((2, 3), dtype=np.uint8))


class TestPipelineFidelity:
    def test_synthesized_cube_survives_disk_as_float32(self, tmp_path):
        sc = micro_scene(rows=3, cols=3, bands=10, q=2, noise_sigma=0.4, seed=14)
        save_scene_cube(tmp_path / "cube.lwc", sc["cube"])
        back = load_scene_cube(tmp_path / "cube.lwc")
        # float32 body: values agree to single precision, grid exactly
        npt.assert_allclose(back.radiance, sc["cube"].radiance, rtol=2e-7)
        npt.assert_array_equal(back.radiance,
                               sc["cube"].radiance.astype(np.float32))
        assert back.grid == sc["cube"].grid
