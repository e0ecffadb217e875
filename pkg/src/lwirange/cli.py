"""Command line front end.

Subcommands: atmo (synthesize attenuation + downwelling), synth (build a
scene cube), range (run an estimator), eval (patch statistics CSV), render
(PGM/PPM image), config-dump (print the resolved settings).

Settings resolve in precedence order: command line flags beat LWIRANGE_*
environment variables, which beat `key=value` lines in --config, which beat
built-in defaults. Unknown keys anywhere are rejected, and every violation
is reported at once rather than just the first.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .atmosphere import (
    DEFAULT_ZENITH_ANGLES,
    AtmosphereParams,
    AttenuationSpectrum,
    load_downwelling,
    load_spectrum,
    make_default_grid,
    save_downwelling,
    save_spectrum,
    synth_attenuation,
    synth_downwelling,
)
from .closed_form import (
    BandSelection,
    bispectral_air,
    bispectral_hot,
    estimate_air_temperature,
    fit_ozone_slope,
    quadspectral,
)
from .cube_io import (
    load_estimates,
    load_range_map,
    load_scene_cube,
    load_scene_truth,
    save_estimates,
    save_range_map,
    save_scene_cube,
    save_scene_truth,
)
from .errors import ConfigError, LwirError
from .evaluation import default_patches, patch_stats, render_map, write_patch_stats_csv
from .forward_model import make_default_scene, synthesize_cube
from .hyperspectral import SolverConfig, solve
from .radiometry import DB_PER_M, Temperature

_MODES = ("bi-hot", "bi-air", "quad", "hyper")
_SCENES = ("panel",)
_PALETTES = ("gray", "fire")
_ENV_PREFIX = "LWIRANGE_"

_DEFAULTS = {
    "mode": "hyper",
    "seed": 0,
    "threads": 1,
    "q": None,
    "rho_eps": 1e5,
    "rho_d": 0.0,
    "d_max": 200.0,
    "bands": None,
    "scene": "panel",
    "rows": 32,
    "cols": 32,
    "noise_sigma": 0.0,
    "palette": "gray",
    "vmin": None,
    "vmax": None,
    "patches": 8,
}

# keys that may resolve to None
_OPTIONAL = {"q", "bands", "vmin", "vmax"}


def _to_bands(text):
    parts = text.split(",")
    if len(parts) != 5:
        raise ValueError("expected 5 comma-separated wavelengths")
    return tuple(float(p) for p in parts)


_CONVERTERS = {
    "mode": str,
    "seed": int,
    "threads": int,
    "q": int,
    "rho_eps": float,
    "rho_d": float,
    "d_max": float,
    "bands": _to_bands,
    "scene": str,
    "rows": int,
    "cols": int,
    "noise_sigma": float,
    "palette": str,
    "vmin": float,
    "vmax": float,
    "patches": int,
}


def _apply(settings, key, text, source, violations):
    if key not in _DEFAULTS:
        violations.append(f"{source}: unknown key {key!r}")
        return
    text = text.strip()
    if text.lower() == "none":
        settings[key] = None
        return
    try:
        settings[key] = _CONVERTERS[key](text)
    except ValueError:
        violations.append(f"{source}: bad value for {key}: {text!r}")


def _read_config_file(path, settings, violations):
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        violations.append(f"config: cannot read {path}: {exc}")
        return
    for line_no, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            violations.append(f"{path}:{line_no}: expected key=value, got {line!r}")
            continue
        key, _, value = line.partition("=")
        _apply(settings, key.strip(), value, f"{path}:{line_no}", violations)


def _read_env(settings, violations, environ):
    for name in sorted(environ):
        if not name.startswith(_ENV_PREFIX):
            continue
        key = name[len(_ENV_PREFIX):].lower()
        _apply(settings, key, environ[name], f"env {name}", violations)


def _validate(s):
    v = []
    if s["mode"] not in _MODES:
        v.append(f"mode must be one of {_MODES}, got {s['mode']!r}")
    if s["scene"] not in _SCENES:
        v.append(f"scene must be one of {_SCENES}, got {s['scene']!r}")
    if s["palette"] not in _PALETTES:
        v.append(f"palette must be one of {_PALETTES}, got {s['palette']!r}")
    for key, low in (("seed", 0), ("threads", 1), ("rows", 1), ("cols", 1),
                     ("patches", 1)):
        if s[key] is None or s[key] < low:
            v.append(f"{key} must be an integer >= {low}, got {s[key]!r}")
    for key in ("rho_eps", "rho_d", "noise_sigma"):
        if s[key] is None or s[key] < 0.0:
            v.append(f"{key} must be >= 0, got {s[key]!r}")
    if s["d_max"] is None or not s["d_max"] > 0.0:
        v.append(f"d_max must be > 0, got {s['d_max']!r}")
    if s["q"] is not None and s["q"] < 0:
        v.append(f"q must be >= 0 or none, got {s['q']!r}")
    if s["bands"] is not None:
        b = s["bands"]
        if any(x <= 0.0 for x in b):
            v.append(f"bands must be positive wavelengths, got {b}")
        elif b[0] == b[1]:
            v.append("the first two band wavelengths must differ")
    if s["vmin"] is not None and s["vmax"] is not None and not s["vmax"] > s["vmin"]:
        v.append(f"vmax must exceed vmin, got vmin={s['vmin']!r} vmax={s['vmax']!r}")
    return v


def resolve_settings(args, environ=None):
    """Layer defaults <- config file <- environment <- flags, then validate."""
    settings = dict(_DEFAULTS)
    violations = []
    if getattr(args, "config", None):
        _read_config_file(args.config, settings, violations)
    _read_env(settings, violations, os.environ if environ is None else environ)
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            _apply(settings, key, flag, f"--{key.replace('_', '-')}", violations)
    violations.extend(_validate(settings))
    if violations:
        raise ConfigError(violations)
    return settings


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

_AIR_DEFAULT = Temperature(295.0)


def _zenith_angles(q):
    if q <= len(DEFAULT_ZENITH_ANGLES):
        return tuple(DEFAULT_ZENITH_ANGLES[:q])
    return tuple(np.linspace(0.0, 89.0, q))


def _load_attenuation(atmo_dir):
    return AttenuationSpectrum(
        load_spectrum(Path(atmo_dir) / "attenuation.csv", DB_PER_M))


def cmd_atmo(s, args):
    grid = make_default_grid()
    params = AtmosphereParams(air_temperature=_AIR_DEFAULT)
    alpha = synth_attenuation(params, grid)
    q = len(DEFAULT_ZENITH_ANGLES) if s["q"] is None else s["q"]
    dw = synth_downwelling(params, grid, _zenith_angles(q))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_spectrum(out / "attenuation.csv", alpha.spectrum)
    save_downwelling(out / "downwelling", dw)
    print(f"wrote attenuation + {q} downwelling spectra to {out}")
    return 0


def cmd_synth(s, args):
    grid = make_default_grid()
    params = AtmosphereParams(air_temperature=_AIR_DEFAULT)
    q = 10 if s["q"] is None else s["q"]
    if args.atmo:
        alpha = _load_attenuation(args.atmo)
        dw = load_downwelling(Path(args.atmo) / "downwelling")
        grid = alpha.grid
        if len(dw) != q:
            q = len(dw)
    else:
        alpha = synth_attenuation(params, grid)
        dw = synth_downwelling(params, grid, _zenith_angles(q))
    truth = make_default_scene(grid, q=q, air_temperature=_AIR_DEFAULT,
                               rows=s["rows"], cols=s["cols"])
    cube = synthesize_cube(truth, alpha, dw, _AIR_DEFAULT,
                           noise_sigma=s["noise_sigma"], rng_seed=s["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scene_cube(out / "cube.lwc", cube)
    save_scene_truth(out, truth, grid, zenith_angles_deg=dw.zenith_angles_deg)
    print(f"wrote {s['rows']}x{s['cols']}x{len(grid.wavelengths)} cube to {out}")
    return 0


def _bands_for(s, grid):
    if s["bands"] is None:
        return BandSelection.from_grid(grid)
    b = s["bands"]
    return BandSelection.from_grid(grid, *b[:4], lambda_sat=b[4])


def cmd_range(s, args):
    cube = load_scene_cube(args.cube)
    alpha = _load_attenuation(args.atmo)
    mode = s["mode"]
    if mode == "hyper":
        dw = load_downwelling(Path(args.atmo) / "downwelling")
        t_air = estimate_air_temperature(cube)
        cfg = SolverConfig(rho_eps=s["rho_eps"], rho_d=s["rho_d"],
                           d_max=s["d_max"], q=s["q"], seed=s["seed"],
                           threads=s["threads"])
        est = solve(cube, alpha, dw, t_air, config=cfg)
        save_estimates(args.out, est, grid=cube.grid,
                       zenith_angles_deg=dw.zenith_angles_deg)
        print(f"wrote estimate maps to {args.out}")
        return 0
    bands = _bands_for(s, cube.grid)
    if mode == "bi-hot":
        rm = bispectral_hot(cube, bands, alpha)
    elif mode == "bi-air":
        t_air = estimate_air_temperature(cube, lambda_sat=bands.lambda_sat)
        rm = bispectral_air(cube, bands, alpha, t_air)
    else:
        t_air = estimate_air_temperature(cube, lambda_sat=bands.lambda_sat)
        dw = load_downwelling(Path(args.atmo) / "downwelling")
        slope = fit_ozone_slope(dw, bands)
        rm = quadspectral(cube, bands, alpha, t_air, slope)
    save_range_map(args.out, rm)
    n_ok = int(rm.valid_mask.sum())
    print(f"wrote range map to {args.out} ({n_ok}/{rm.distances.size} valid)")
    return 0


def _load_distance_input(path):
    p = Path(path)
    if p.is_dir():
        return load_estimates(p).distance
    return load_range_map(p)


def cmd_eval(s, args):
    estimate = _load_distance_input(args.est)
    truth = load_scene_truth(args.truth)
    shape = truth.distance_map.shape
    patches = default_patches(shape, s["patches"])
    rows = patch_stats(estimate, truth.distance_map, patches)
    write_patch_stats_csv(args.out, rows)
    print(f"wrote {len(rows)} patch rows to {args.out}")
    return 0


def cmd_render(s, args):
    estimate = _load_distance_input(args.map)
    render_map(estimate, s["palette"], args.out, vmin=s["vmin"], vmax=s["vmax"])
    print(f"wrote {s['palette']} image to {args.out}")
    return 0


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_config_dump(s, args):
    for key in sorted(_DEFAULTS):
        print(f"{key}={_format_value(s[key])}")
    return 0


_DISPATCH = {
    "atmo": cmd_atmo,
    "synth": cmd_synth,
    "range": cmd_range,
    "eval": cmd_eval,
    "render": cmd_render,
    "config-dump": cmd_config_dump,
}


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    for key in _DEFAULTS:
        shared.add_argument(f"--{key.replace('_', '-')}", default=None)
    shared.add_argument("--config", default=None, help="key=value settings file")

    parser = argparse.ArgumentParser(
        prog="lwirange",
        description="passive LWIR absorption ranging toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("atmo", parents=[shared],
                       help="synthesize attenuation and downwelling spectra")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", parents=[shared],
                       help="synthesize a scene cube plus ground truth")
    p.add_argument("--atmo", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("range", parents=[shared], help="estimate per-pixel range")
    p.add_argument("--cube", required=True)
    p.add_argument("--atmo", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[shared],
                       help="patch statistics against ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", parents=[shared], help="render a map to PGM/PPM")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)

    sub.add_parser("config-dump", parents=[shared],
                   help="print the resolved settings")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return 0 if code in (0, None) else 2
    try:
        settings = resolve_settings(args)
        return _DISPATCH[args.command](settings, args)
    except ConfigError as exc:
        print(f"error[ConfigError]: {exc}", file=sys.stderr)
        return 2
    except LwirError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
