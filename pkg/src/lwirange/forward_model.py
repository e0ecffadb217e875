"""Synthesize observed radiance cubes from ground-truth scene maps.

The single-pixel observation model, in microflicks:

    L_obs = tau(d) * (eps * B(T) + L_ref - B(T_air)) + B(T_air)
    L_ref = ((1 - eps) / pi) * (sum_q Omega_q L_D,q + (pi - sum_q Omega_q) * L_G)

with tau(d) = 10^(-alpha d / 10). The same batched evaluation routine
serves both the simulator and the model-based solver, so a solver fed
the noiseless truth reproduces the cube bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atmosphere import AttenuationSpectrum, DownwellingSet
from .errors import ConstraintError, DimensionError, DomainError, GridError
from .radiometry import (
    MICROFLICK,
    SpectralGrid,
    Spectrum,
    Temperature,
    planck,
)

__all__ = [
    "SceneTruth",
    "SceneCube",
    "reflected_radiance",
    "observed_radiance",
    "synthesize_cube",
    "make_default_scene",
    "radiance_model_batch",
]

_OMEGA_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SceneTruth:
    """Per-pixel ground truth driving the simulator.

    distance_map     (M, N) meters
    temperature_map  (M, N) kelvin
    emissivity_cube  (M, N, K) in [0, 1]
    solid_angle_maps (M, N, Q) projected solid angles, >= 0, row sums <= pi
    ground_ambient   (M, N, K) microflick, smooth in wavelength
    """

    distance_map: np.ndarray
    temperature_map: np.ndarray
    emissivity_cube: np.ndarray
    solid_angle_maps: np.ndarray
    ground_ambient: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distance_map, dtype=np.float64)
        t = np.asarray(self.temperature_map, dtype=np.float64)
        e = np.asarray(self.emissivity_cube, dtype=np.float64)
        o = np.asarray(self.solid_angle_maps, dtype=np.float64)
        g = np.asarray(self.ground_ambient, dtype=np.float64)
        if d.ndim != 2:
            raise DimensionError("distance_map must be 2-D")
        m, n = d.shape
        if t.shape != (m, n):
            raise DimensionError("temperature_map shape mismatch")
        if e.ndim != 3 or e.shape[:2] != (m, n):
            raise DimensionError("emissivity_cube shape mismatch")
        if o.ndim != 3 or o.shape[:2] != (m, n):
            raise DimensionError("solid_angle_maps shape mismatch")
        if g.shape != e.shape:
            raise DimensionError("ground_ambient shape mismatch")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ConstraintError("distances must be finite and >= 0")
        if np.any(t <= 0):
            raise ConstraintError("temperatures must be > 0 K")
        if np.any(e < 0) or np.any(e > 1):
            raise ConstraintError("emissivities must lie in [0, 1]")
        if np.any(o < 0):
            raise ConstraintError("solid angles must be >= 0")
        if np.any(o.sum(axis=2) > np.pi * (1 + _OMEGA_SUM_TOL)):
            raise ConstraintError("per-pixel solid angles must sum to at most pi")
        if np.any(g < 0):
            raise ConstraintError("ground ambient radiance must be >= 0")
        for name, arr in (("distance_map", d), ("temperature_map", t),
                          ("emissivity_cube", e), ("solid_angle_maps", o),
                          ("ground_ambient", g)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.distance_map.shape


@dataclass(frozen=True, eq=False)
class SceneCube:
    """Observed radiance cube plus acquisition metadata."""

    radiance: np.ndarray        # (M, N, K) microflick
    grid: SpectralGrid
    air_temperature: Temperature
    noise_sigma: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.radiance, dtype=np.float64)
        if r.ndim != 3:
            raise DimensionError("radiance cube must be 3-D (M, N, K)")
        if r.shape[2] != len(self.grid):
            raise GridError("cube band count does not match the grid")
        if not np.all(np.isfinite(r)):
            raise ConstraintError("radiance must be finite")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be >= 0")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "radiance", r)

    @property
    def shape(self):
        return self.radiance.shape


def _mix_q(omegas: np.ndarray, ld: np.ndarray) -> np.ndarray:
    # einsum keeps per-row bit patterns independent of the batch size;
    # matmul does not, which would break the thread-count determinism contract
    return np.einsum("pq,qk->pk", omegas, ld, optimize=False)


def radiance_model_batch(
    wavelengths: np.ndarray,
    alpha_values: np.ndarray,
    d: np.ndarray,
    t_kelvin: np.ndarray,
    eps: np.ndarray,
    omegas: np.ndarray,
    ld: np.ndarray,
    ground: np.ndarray,
    b_air: np.ndarray,
) -> np.ndarray:
    """Evaluate the observation model for P pixels at once.

    d, t_kelvin: (P,); eps: (P, K); omegas: (P, Q); ld: (Q, K);
    ground: (K,) or (P, K); b_air: (K,). Returns (P, K).
    """
    tau = np.power(10.0, np.multiply.outer(-d / 10.0, alpha_values))
    bt = planck(wavelengths, t_kelvin[:, None])
    s = _mix_q(omegas, ld)
    w = omegas.sum(axis=1)
    mix = (s + (np.pi - w)[:, None] * ground) / np.pi
    return tau * (eps * bt + (1.0 - eps) * mix - b_air) + b_air


def _omega_check(omegas: np.ndarray):
    if np.any(omegas < 0):
        raise ConstraintError("solid angles must be >= 0")
    if omegas.sum() > np.pi * (1 + _OMEGA_SUM_TOL):
        raise ConstraintError("solid angles must sum to at most pi")


def reflected_radiance(
    emissivity: Spectrum,
    omegas,
    dw: DownwellingSet,
    ground_ambient: Spectrum,
) -> Spectrum:
    """Reflected sky-plus-ambient term for a single Lambertian pixel."""
    om = np.asarray(omegas, dtype=np.float64)
    if om.shape != (len(dw),):
        raise DimensionError(f"expected {len(dw)} solid angles, got {om.shape}")
    _omega_check(om)
    if emissivity.grid != dw.grid or ground_ambient.grid != dw.grid:
        raise GridError("emissivity, downwelling, and ambient must share a grid")
    e = emissivity.values
    if np.any(e < 0) or np.any(e > 1):
        raise ConstraintError("emissivity must lie in [0, 1]")
    sky = _mix_q(om[None, :], dw.values)[0]
    total = sky + (np.pi - om.sum()) * ground_ambient.values
    return Spectrum(dw.grid, (1.0 - e) / np.pi * total, MICROFLICK)


def observed_radiance(
    d: float,
    temperature: Temperature,
    emissivity: Spectrum,
    omegas,
    ground_ambient: Spectrum,
    alpha: AttenuationSpectrum,
    dw: DownwellingSet,
    air_temperature: Temperature,
) -> Spectrum:
    """Single-pixel sensor radiance; at d = 0 this is eps*B + L_ref."""
    if d < 0:
        raise DomainError("distance must be >= 0")
    om = np.asarray(omegas, dtype=np.float64)
    _omega_check(om)
    if np.any(emissivity.values < 0) or np.any(emissivity.values > 1):
        raise ConstraintError("emissivity must lie in [0, 1]")
    grid = alpha.grid
    if emissivity.grid != grid or dw.grid != grid or ground_ambient.grid != grid:
        raise GridError("all spectra must share the attenuation grid")
    b_air = planck(grid.wavelengths, air_temperature.kelvin)
    out = radiance_model_batch(
        grid.wavelengths,
        alpha.values,
        np.array([float(d)]),
        np.array([temperature.kelvin]),
        emissivity.values[None, :],
        om[None, :],
        dw.values,
        ground_ambient.values,
        b_air,
    )[0]
    return Spectrum(grid, out, MICROFLICK)


def synthesize_cube(
    truth: SceneTruth,
    alpha: AttenuationSpectrum,
    dw: DownwellingSet,
    air_temperature: Temperature,
    noise_sigma: float = 0.0,
    rng_seed: int = 0,
) -> SceneCube:
    """Per-pixel observation model plus i.i.d. Gaussian noise.

    dw may be None for a scene with no sky sectors (Q = 0). Noise is drawn
    from a per-pixel substream seeded by (seed, i, j), so serial and any
    parallel synthesis of the same scene agree bit for bit.
    """
    if noise_sigma < 0:
        raise DomainError("noise_sigma must be >= 0")
    m, n = truth.shape
    k = len(alpha.grid)
    q = 0 if dw is None else len(dw)
    if truth.emissivity_cube.shape[2] != k:
        raise DimensionError("emissivity band count does not match the grid")
    if truth.solid_angle_maps.shape[2] != q:
        raise DimensionError("solid-angle sector count does not match the downwelling set")
    if dw is not None and dw.grid != alpha.grid:
        raise GridError("attenuation and downwelling grids differ")

    p = m * n
    b_air = planck(alpha.grid.wavelengths, air_temperature.kelvin)
    y = radiance_model_batch(
        alpha.grid.wavelengths,
        alpha.values,
        truth.distance_map.reshape(p),
        truth.temperature_map.reshape(p),
        truth.emissivity_cube.reshape(p, k),
        truth.solid_angle_maps.reshape(p, q),
        np.zeros((0, k)) if dw is None else dw.values,
        truth.ground_ambient.reshape(p, k),
        b_air,
    ).reshape(m, n, k)

    if noise_sigma > 0:
        y = y.copy()
        for i in range(m):
            for j in range(n):
                rng = np.random.default_rng(np.random.SeedSequence([rng_seed, i, j]))
                y[i, j] += noise_sigma * rng.standard_normal(k)
    return SceneCube(y, alpha.grid, air_temperature, noise_sigma)


# ---------------------------------------------------------------------------
# Shipped reflective-panel scene: a grass ramp with two vertical panels
# whose cells alternate between dull and shiny emissivity. Panels see the
# sky mostly near grazing angles; grass sees it near zenith.
# ---------------------------------------------------------------------------

_PANEL_SKY_PROFILE = np.array([0.0, 0.0, 0.02, 0.05, 0.10, 0.12, 0.14, 0.16, 0.20, 0.21])
_GRASS_SKY_PROFILE = np.array([0.30, 0.25, 0.20, 0.10, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])


def _resample_profile(profile: np.ndarray, q: int, total: float) -> np.ndarray:
    src = np.linspace(0.0, 1.0, profile.size)
    dst = np.linspace(0.0, 1.0, q)
    out = np.interp(dst, src, profile)
    s = out.sum()
    if s <= 0:
        out = np.full(q, 1.0 / q)
        s = 1.0
    return out * (total / s)


def make_default_scene(
    grid: SpectralGrid,
    q: int = 10,
    air_temperature: Temperature = Temperature(295.0),
    rows: int = 32,
    cols: int = 32,
) -> SceneTruth:
    """Reflective-panel fixture used by the acceptance experiments."""
    if q < 1:
        raise DomainError("default scene needs at least one sky sector")
    k = len(grid)
    om_panel = _resample_profile(_PANEL_SKY_PROFILE, q, 0.5 * np.pi)
    om_grass = _resample_profile(_GRASS_SKY_PROFILE, q, 0.85 * np.pi)

    d = np.tile(np.linspace(5.0, 60.0, rows)[:, None], (1, cols))
    t = np.full((rows, cols), 295.5)
    eps = np.full((rows, cols, k), 0.98)
    om = np.tile(om_grass, (rows, cols, 1))

    panel = np.zeros((rows, cols), dtype=bool)
    r0, r1 = int(rows * 4 / 32), int(rows * 20 / 32)
    panel[r0:r1, int(cols * 4 / 32):int(cols * 14 / 32)] = True
    panel[r0:r1, int(cols * 18 / 32):int(cols * 28 / 32)] = True
    checker = (np.add.outer(np.arange(rows), np.arange(cols)) % 2) == 0
    d[panel] = 30.0
    t[panel] = 296.0
    eps[panel & checker] = 0.6
    eps[panel & ~checker] = 0.9
    om[panel] = om_panel

    ambient = planck(grid.wavelengths, air_temperature.kelvin)
    ground = np.broadcast_to(ambient, (rows, cols, k)).copy()
    return SceneTruth(d, t, eps, om, ground)


def default_panel_masks(rows: int = 32, cols: int = 32):
    """Masks for the fixture: (panel cells, dull eps=0.6 cells, shiny eps=0.9 cells)."""
    panel = np.zeros((rows, cols), dtype=bool)
    r0, r1 = int(rows * 4 / 32), int(rows * 20 / 32)
    panel[r0:r1, int(cols * 4 / 32):int(cols * 14 / 32)] = True
    panel[r0:r1, int(cols * 18 / 32):int(cols * 28 / 32)] = True
    checker = (np.add.outer(np.arange(rows), np.arange(cols)) % 2) == 0
    return panel, panel & checker, panel & ~checker
