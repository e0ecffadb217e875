"""Passive LWIR absorption ranging: forward simulation and range inversion.

Thermal photons crossing the 8-13.2 um window are absorbed by water vapor
and ozone at rates that grow with path length, so the spectral shape of an
object's radiance encodes how far away it is. This package synthesizes
hyperspectral thermal cubes of scenes with known geometry and inverts them
back to per-pixel distance, temperature, emissivity, and sky contribution
with closed-form band-ratio estimators and a constrained least-squares
solver.
"""

from .atmosphere import (
    DEFAULT_ZENITH_ANGLES,
    AtmosphereParams,
    AttenuationSpectrum,
    DownwellingSet,
    load_downwelling,
    load_spectrum,
    make_default_grid,
    save_downwelling,
    save_spectrum,
    synth_attenuation,
    synth_downwelling,
    transmittance,
)
from .closed_form import (
    DENOMINATOR_TOL,
    FLAG_CLIPPED,
    FLAG_NONPOSITIVE_RATIO,
    FLAG_VALID,
    FLAG_ZERO_DENOMINATOR,
    BandSelection,
    OzoneSlope,
    RangeMap,
    bispectral_air,
    bispectral_hot,
    estimate_air_temperature,
    fit_ozone_slope,
    ozone_difference_map,
    quadspectral,
)
from .cube_io import (
    CubeHeader,
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
from .errors import (
    AllInvalidError,
    ConfigError,
    ConstraintError,
    DegenerateFitError,
    DimensionError,
    DomainError,
    FormatError,
    GridError,
    LwirError,
    SpectrumParseError,
    UnitMismatchError,
)
from .evaluation import (
    PATCH_CSV_COLUMNS,
    PatchSpec,
    default_patches,
    kmeans_emissivity,
    patch_stats,
    render_map,
    sky_fraction_mask,
    within_cluster_ss,
    write_patch_stats_csv,
)
from .forward_model import (
    SceneCube,
    SceneTruth,
    default_panel_masks,
    make_default_scene,
    observed_radiance,
    radiance_model_batch,
    reflected_radiance,
    synthesize_cube,
)
from .hyperspectral import (
    EstimateMaps,
    SolverConfig,
    data_loss,
    emissivity_smoothness,
    gradients,
    project,
    solve,
    solve_no_sky,
    tv_distance,
)
from .radiometry import (
    CODATA,
    DB_PER_M,
    DIMENSIONLESS,
    MICROFLICK,
    PhysicalConstants,
    SpectralGrid,
    Spectrum,
    Temperature,
    as_kelvin,
    brightness_temperature,
    planck,
    planck_dT,
)

__version__ = "0.1.0"
