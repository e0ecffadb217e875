"""Joint per-pixel range / temperature / emissivity / sky-view inversion.

Minimizes, per pixel, the squared radiance misfit of the path-attenuated
emission-plus-reflection model, plus a band-smoothness penalty on emissivity
and an optional anisotropic TV penalty on the range map.  The engine is a
block-coordinate scheme: every block update is accept-guarded (a candidate
is kept only if it does not increase that pixel's objective), so the
objective is non-increasing across accepted steps by construction.  A short
multi-start warmup over a range ladder precedes refinement; an optional
projected-gradient Armijo pass polishes the result.  All array reductions
are row-independent, which makes results byte-identical for any row
partitioning (thread count) and any edit to other pixels' data when the TV
weight is zero.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace

import numpy as np

from .closed_form import FLAG_VALID, BandSelection, bispectral_air
from .errors import ConfigError, ConstraintError, DimensionError, DomainError, GridError
from .radiometry import (
    _planck_core,
    _planck_dT_core,
    as_kelvin,
    brightness_temperature,
)

_PI = np.pi
_LOG10 = np.log(10.0)

# scan schedules (spans in meters / kelvin, geometric decay per iteration)
_T_SPAN0 = 8.0
_T_DECAY = 0.8
_D_SPAN0 = 4.0
_D_DECAY = 0.8
_MIN_SPAN = 0.02


@dataclass
class SolverConfig:
    """Knobs for :func:`solve`.

    rho_eps / rho_d are the emissivity-smoothness and range-TV weights,
    d_max the range box bound.  q overrides the number of sky sectors used
    by the model (0 disables the sky term entirely; None takes the size of
    the downwelling set).  The remaining fields control the multi-start
    schedule, the scan/line-search step sizes, iteration budgets, stopping
    (relative loss decrease below tol for patience iterations), and the rng
    seed for the per-pixel initialization jitter.
    """

    rho_eps: float = 1e5
    rho_d: float = 0.0
    d_max: float = 200.0
    q: int | None = None
    zenith_angles_deg: tuple[float, ...] | None = None
    t_span: float = 12.0
    max_iterations: int = 2000
    tol: float = 1e-8
    patience: int = 5
    seed: int = 0
    init_jitter: float = 0.01
    d_ladder: tuple[float | None, ...] = (5.0, 10.0, 20.0, 40.0, 80.0, None, 160.0)
    eps_starts: tuple[float, ...] = (0.95, 0.6)
    warmup_iterations: int = 14
    warmup_d_freeze: int = 6
    refine_iterations: int = 40
    settle_iterations: int = 25
    top_k: int = 2
    polish_rounds: int = 3
    polish_span: float = 3.0
    polish_steps: int = 13
    armijo_iterations: int = 2
    armijo_factor: float = 0.5
    armijo_c: float = 1e-4
    armijo_backtracks: int = 12
    tv_rounds: int = 2
    global_scan_points: int = 41
    local_scan_points: int = 17
    temperature_scan_points: int = 9
    sky_admm_iterations: int = 50
    ground_fill: str = "ambient"
    threads: int = 1
    track_history: bool = False

    def validate(self) -> list[str]:
        v = []
        if not (self.rho_eps >= 0.0):
            v.append(f"rho_eps must be >= 0, got {self.rho_eps}")
        if not (self.rho_d >= 0.0):
            v.append(f"rho_d must be >= 0, got {self.rho_d}")
        if not (self.d_max > 0.0):
            v.append(f"d_max must be > 0, got {self.d_max}")
        if self.q is not None and (self.q < 0 or int(self.q) != self.q):
            v.append(f"q must be a non-negative integer or None, got {self.q}")
        if not (self.t_span > 0.0):
            v.append(f"t_span must be > 0, got {self.t_span}")
        if self.max_iterations < 1:
            v.append(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not (self.tol >= 0.0):
            v.append(f"tol must be >= 0, got {self.tol}")
        if self.patience < 1:
            v.append(f"patience must be >= 1, got {self.patience}")
        if not (self.init_jitter >= 0.0):
            v.append(f"init_jitter must be >= 0, got {self.init_jitter}")
        if len(self.d_ladder) == 0:
            v.append("d_ladder must not be empty")
        if any(b is not None and not (0.0 <= b <= self.d_max) for b in self.d_ladder):
            v.append("d_ladder entries must lie in [0, d_max] or be None")
        if len(self.eps_starts) == 0:
            v.append("eps_starts must not be empty")
        if any(not (0.0 <= e <= 1.0) for e in self.eps_starts):
            v.append("eps_starts entries must lie in [0, 1]")
        for name in ("warmup_iterations", "refine_iterations", "top_k",
                     "polish_steps", "armijo_backtracks", "sky_admm_iterations"):
            if getattr(self, name) < 1:
                v.append(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("warmup_d_freeze", "settle_iterations", "polish_rounds",
                     "armijo_iterations", "tv_rounds"):
            if getattr(self, name) < 0:
                v.append(f"{name} must be >= 0, got {getattr(self, name)}")
        if not (self.polish_span > 0.0):
            v.append(f"polish_span must be > 0, got {self.polish_span}")
        if not (0.0 < self.armijo_factor < 1.0):
            v.append(f"armijo_factor must be in (0, 1), got {self.armijo_factor}")
        if not (0.0 < self.armijo_c < 1.0):
            v.append(f"armijo_c must be in (0, 1), got {self.armijo_c}")
        for name in ("global_scan_points", "local_scan_points",
                     "temperature_scan_points"):
            if getattr(self, name) < 2:
                v.append(f"{name} must be >= 2, got {getattr(self, name)}")
        if self.ground_fill not in ("ambient", "none"):
            v.append(f"ground_fill must be 'ambient' or 'none', got {self.ground_fill!r}")
        if self.threads < 1:
            v.append(f"threads must be >= 1, got {self.threads}")
        if self.rho_d > 0.0 and self.threads > 1:
            v.append("rho_d > 0 couples pixels across rows; requires threads=1")
        if self.track_history and self.threads > 1:
            v.append("track_history requires threads=1")
        return v


@dataclass
class EstimateMaps:
    """Solver output: per-pixel state plus final per-pixel objective.

    distance (M,N) m; temperature (M,N) K; emissivity (M,N,K) in [0,1];
    solid_angles (M,N,Q) sr with non-negative entries summing to at most pi
    per pixel; loss (M,N) is the per-pixel data misfit plus the weighted
    emissivity-smoothness penalty; iterations (M,N) counts refinement
    iterations the winning trajectory spent on the pixel (== the configured
    maximum when the pixel never met the stopping rule).
    """

    distance: np.ndarray
    temperature: np.ndarray
    emissivity: np.ndarray
    solid_angles: np.ndarray
    loss: np.ndarray
    iterations: np.ndarray
    history: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = np.asarray(self.distance, dtype=float)
        t = np.asarray(self.temperature, dtype=float)
        e = np.asarray(self.emissivity, dtype=float)
        o = np.asarray(self.solid_angles, dtype=float)
        ls = np.asarray(self.loss, dtype=float)
        it = np.asarray(self.iterations)
        if d.ndim != 2:
            raise DimensionError(f"distance must be 2-d, got shape {d.shape}")
        m, n = d.shape
        if t.shape != (m, n) or ls.shape != (m, n) or it.shape != (m, n):
            raise DimensionError("temperature/loss/iterations shape mismatch")
        if e.ndim != 3 or e.shape[:2] != (m, n):
            raise DimensionError(f"emissivity must be (M,N,K), got {e.shape}")
        if o.ndim != 3 or o.shape[:2] != (m, n):
            raise DimensionError(f"solid_angles must be (M,N,Q), got {o.shape}")
        for name, a in (("distance", d), ("temperature", t), ("emissivity", e),
                        ("solid_angles", o), ("loss", ls)):
            if not np.all(np.isfinite(a)):
                raise ConstraintError(f"{name} must be finite")
        if np.any(d < 0.0):
            raise ConstraintError("distance must be >= 0")
        if np.any(e < 0.0) or np.any(e > 1.0):
            raise ConstraintError("emissivity must lie in [0, 1]")
        if np.any(o < 0.0):
            raise ConstraintError("solid_angles must be >= 0")
        if o.shape[2] > 0 and np.any(o.sum(axis=2) > _PI + 1e-9):
            raise ConstraintError("per-pixel solid angles must sum to <= pi")
        self.distance = d
        self.temperature = t
        self.emissivity = e
        self.solid_angles = o
        self.loss = ls
        self.iterations = it

    @property
    def shape(self):
        return self.distance.shape


# ----------------------------------------------------------------------
# flat problem container and shared numeric kernels
# ----------------------------------------------------------------------

@dataclass
class _Problem:
    wav: np.ndarray      # (K,) um
    alpha: np.ndarray    # (K,) dB/m
    y: np.ndarray        # (P,K) observed
    sky: np.ndarray      # (Qe,K) downwelling rows; empty when the sky term is off
    ground: np.ndarray   # (K,) ground-ambient fill
    b_air: np.ndarray    # (K,) blackbody radiance at air temperature
    rho_eps: float
    d_max: float
    t_lo: float
    t_hi: float


def _tau(d, alpha):
    # exponent grouped as (-d/10)*alpha; keeps round powers of ten exact
    return np.power(10.0, np.multiply.outer(-d / 10.0, alpha))


def _mix_sky(om, sky):
    # einsum is batch-size stable bit for bit, matmul is not
    return np.einsum("pq,qk->pk", om, sky, optimize=False)


def _predict(pr, d, t, eps, smix, wsum):
    tau = _tau(d, pr.alpha)
    bt = _planck_core(pr.wav, t[:, None])
    mix = (smix + (_PI - wsum)[:, None] * pr.ground) / _PI
    return tau * (eps * bt + (1.0 - eps) * mix - pr.b_air) + pr.b_air


def _loss(pr, d, t, eps, smix, wsum):
    r = _predict(pr, d, t, eps, smix, wsum) - pr.y
    return (r * r).sum(1) + pr.rho_eps * (np.diff(eps, axis=1) ** 2).sum(1)


def _thomas(dl, dm, du, b):
    # batched tridiagonal solve, all operands (P,K)
    n = b.shape[1]
    cp = np.empty_like(b)
    dp = np.empty_like(b)
    cp[:, 0] = du[:, 0] / dm[:, 0]
    dp[:, 0] = b[:, 0] / dm[:, 0]
    for i in range(1, n):
        den = dm[:, i] - dl[:, i] * cp[:, i - 1]
        cp[:, i] = du[:, i] / den
        dp[:, i] = (b[:, i] - dl[:, i] * dp[:, i - 1]) / den
    x = np.empty_like(b)
    x[:, -1] = dp[:, -1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[:, i] * x[:, i + 1]
    return x


def _eps_quick(pr, y, tau, bt, mix, eps, rounds=2):
    # few active-set rounds on the banded normal equations; callers guard
    a = tau * (bt - mix)
    b = tau * (mix - pr.b_air) + pr.b_air
    rb = y - b
    rho = pr.rho_eps
    h_main = a * a + rho * 2.0
    h_main[:, 0] -= rho
    h_main[:, -1] -= rho
    g0 = a * rb
    e = eps
    lo = np.zeros_like(e, dtype=bool)
    hi = np.zeros_like(e, dtype=bool)
    for _ in range(rounds):
        fixv = np.where(hi, 1.0, 0.0)
        clamped = lo | hi
        dmn = np.where(clamped, 1.0, h_main)
        rhs = np.where(clamped, fixv, g0)
        left_cl = np.zeros_like(clamped)
        left_cl[:, 1:] = clamped[:, :-1]
        right_cl = np.zeros_like(clamped)
        right_cl[:, :-1] = clamped[:, 1:]
        fixl = np.zeros_like(e)
        fixl[:, 1:] = fixv[:, :-1]
        fixr = np.zeros_like(e)
        fixr[:, :-1] = fixv[:, 1:]
        rhs = rhs + np.where(~clamped & left_cl, rho * fixl, 0.0) \
                  + np.where(~clamped & right_cl, rho * fixr, 0.0)
        dl2 = np.where(clamped | left_cl, 0.0, -rho)
        du2 = np.where(clamped | right_cl, 0.0, -rho)
        dl2[:, 0] = 0.0
        du2[:, -1] = 0.0
        x = _thomas(dl2, dmn, du2, rhs)
        lo = x < 0.0
        hi = x > 1.0
        e = np.clip(x, 0.0, 1.0)
        if not (lo | hi).any():
            break
    return e


def _proj_cap_simplex(v):
    """Euclidean projection of rows of v onto {x >= 0, sum(x) <= pi}."""
    z = np.maximum(v, 0.0)
    if z.shape[1] == 0:
        return z
    s = z.sum(1)
    over = s > _PI
    if over.any():
        zo = z[over]
        u = np.sort(zo, axis=1)[:, ::-1]
        css = np.cumsum(u, axis=1) - _PI
        idx = np.arange(1, zo.shape[1] + 1)
        cond = u * idx > css
        rmax = cond.shape[1] - 1 - cond[:, ::-1].argmax(1)
        th = css[np.arange(zo.shape[0]), rmax] / (rmax + 1)
        z[over] = np.maximum(zo - th[:, None], 0.0)
    # roundoff can leave sums a few ulp above the cap; pull them inside
    for _ in range(4):
        s = z.sum(1)
        bad = s > _PI
        if not bad.any():
            break
        z[bad] *= ((_PI * (1.0 - 1e-16)) / s[bad])[:, None]
    return z


def _sky_block(pr, d, t, eps, om, act, iters):
    # per-pixel box/cap-constrained quadratic in the sky weights via ADMM
    q = om.shape[1]
    tau = _tau(d, pr.alpha)
    bt = _planck_core(pr.wav, t[:, None])
    w = tau * (1.0 - eps) / _PI
    y0 = tau * (eps * bt + (1.0 - eps) * pr.ground - pr.b_air) + pr.b_air
    base = pr.y - y0
    ekq = pr.sky.T - pr.ground[:, None]
    w2 = w * w
    gm = np.einsum("pk,kq,kr->pqr", w2, ekq, ekq, optimize=False)
    rhs = np.einsum("pk,kq->pq", w * base, ekq, optimize=False)
    tr = np.einsum("pqq->p", gm)
    rho_a = tr / q + 1e-30
    a = 2.0 * gm + rho_a[:, None, None] * np.eye(q)[None, :, :]
    minv = np.linalg.inv(a)
    z = om.copy()
    u = np.zeros_like(om)
    for _ in range(iters):
        x = np.einsum("pqr,pr->pq", minv, 2.0 * rhs + rho_a[:, None] * (z - u),
                      optimize=False)
        z = _proj_cap_simplex(x + u)
        u = u + x - z
    s0 = _mix_sky(om, pr.sky)
    s1 = _mix_sky(z, pr.sky)
    ln = _loss(pr, d, t, eps, s1, z.sum(1))
    lo = _loss(pr, d, t, eps, s0, om.sum(1))
    ok = (ln <= lo) & act
    return np.where(ok[:, None], z, om)


def _temp_block(pr, d, t, eps, smix, wsum, act, span, npts):
    # scan T around the current value, re-fitting emissivity per candidate
    tau = _tau(d, pr.alpha)
    mix = (smix + (_PI - wsum)[:, None] * pr.ground) / _PI
    best_l = _loss(pr, d, t, eps, smix, wsum)
    best_t = t.copy()
    best_e = eps.copy()
    for o in np.linspace(-span, span, npts):
        tc = np.clip(t + o, pr.t_lo, pr.t_hi)
        bt = _planck_core(pr.wav, tc[:, None])
        ec = _eps_quick(pr, pr.y, tau, bt, mix, eps)
        r = tau * (ec * bt + (1.0 - ec) * mix - pr.b_air) + pr.b_air - pr.y
        lc = (r * r).sum(1) + pr.rho_eps * (np.diff(ec, axis=1) ** 2).sum(1)
        imp = (lc < best_l) & act
        best_t = np.where(imp, tc, best_t)
        best_e = np.where(imp[:, None], ec, best_e)
        best_l = np.where(imp, lc, best_l)
    return best_t, best_e


def _dist_block(pr, d, t, eps, smix, wsum, act, local_span, ncand, nloc):
    bt = _planck_core(pr.wav, t[:, None])
    mix = (smix + (_PI - wsum)[:, None] * pr.ground) / _PI
    core = eps * bt + (1.0 - eps) * mix - pr.b_air
    pen = pr.rho_eps * (np.diff(eps, axis=1) ** 2).sum(1)
    best_l = None
    best_d = d.copy()
    if local_span is None:
        for dc in np.linspace(0.0, pr.d_max, ncand):
            tau = np.power(10.0, (-dc / 10.0) * pr.alpha)[None, :]
            r = tau * core + pr.b_air - pr.y
            lc = (r * r).sum(1) + pen
            if best_l is None:
                best_l = lc.copy()
                best_d = np.full_like(d, dc)
            else:
                imp = lc < best_l
                best_d = np.where(imp, dc, best_d)
                best_l = np.where(imp, lc, best_l)
    else:
        for o in np.linspace(-local_span, local_span, nloc):
            dc = np.clip(d + o, 0.0, pr.d_max)
            tau = _tau(dc, pr.alpha)
            r = tau * core + pr.b_air - pr.y
            lc = (r * r).sum(1) + pen
            if best_l is None:
                best_l = lc.copy()
                best_d = dc.copy()
            else:
                imp = lc < best_l
                best_d = np.where(imp, dc, best_d)
                best_l = np.where(imp, lc, best_l)
    cur = _loss(pr, d, t, eps, smix, wsum)
    ok = (best_l <= cur) & act
    return np.where(ok, best_d, d)


def _feasible(d, eps, om, d_max):
    ok = bool(np.all(d >= 0.0) and np.all(d <= d_max)
              and np.all(eps >= 0.0) and np.all(eps <= 1.0))
    if om.shape[1] > 0:
        ok = ok and bool(np.all(om >= 0.0) and np.all(om.sum(1) <= _PI))
    return ok


def _phase(pr, cfg, d, t, eps, om, iters, *, min_iter, d_freeze,
           count=None, hist=None, label="", extra_total=None):
    p = pr.y.shape[0]
    act = np.ones(p, dtype=bool)
    stall = np.zeros(p, dtype=np.int64)
    has_sky = pr.sky.shape[0] > 0
    for it in range(iters):
        smix = _mix_sky(om, pr.sky)
        wsum = om.sum(1)
        l0 = _loss(pr, d, t, eps, smix, wsum)
        if has_sky:
            om = _sky_block(pr, d, t, eps, om, act, cfg.sky_admm_iterations)
            smix = _mix_sky(om, pr.sky)
            wsum = om.sum(1)
        t, eps = _temp_block(pr, d, t, eps, smix, wsum, act,
                             span=max(_T_SPAN0 * _T_DECAY ** it, _MIN_SPAN),
                             npts=cfg.temperature_scan_points)
        if it >= d_freeze:
            if it % 10 == 0 and it < min_iter:
                d = _dist_block(pr, d, t, eps, smix, wsum, act, None,
                                cfg.global_scan_points, cfg.local_scan_points)
            else:
                span = max(_D_SPAN0 * _D_DECAY ** (it - d_freeze), _MIN_SPAN)
                d = _dist_block(pr, d, t, eps, smix, wsum, act, span,
                                cfg.global_scan_points, cfg.local_scan_points)
        l1 = _loss(pr, d, t, eps, smix, wsum)
        if count is not None:
            count += act
        if hist is not None:
            tot = float(l1.sum()) + (extra_total(d) if extra_total else 0.0)
            hist.append((label, it, tot, _feasible(d, eps, om, pr.d_max)))
        rel = (l0 - l1) / np.maximum(l0, 1e-300)
        if it >= min_iter:
            stall = np.where(rel < cfg.tol, stall + 1, 0)
            act = act & (stall < cfg.patience)
        if not act.any():
            break
    return d, t, eps, om


def _polish_distance(pr, cfg, d, t, eps, om, span, steps):
    # profiled fine scan: each range candidate gets its own (T, eps) refit
    smix = _mix_sky(om, pr.sky)
    wsum = om.sum(1)
    act = np.ones(pr.y.shape[0], dtype=bool)
    best_l = _loss(pr, d, t, eps, smix, wsum)
    best_d = d.copy()
    best_t = t.copy()
    best_e = eps.copy()
    for o in np.linspace(-span, span, steps):
        dc = np.clip(d + o, 0.0, pr.d_max)
        tc, ec = _temp_block(pr, dc, t, eps, smix, wsum, act, span=1.0,
                             npts=cfg.temperature_scan_points)
        lc = _loss(pr, dc, tc, ec, smix, wsum)
        imp = lc < best_l
        best_d = np.where(imp, dc, best_d)
        best_t = np.where(imp, tc, best_t)
        best_e = np.where(imp[:, None], ec, best_e)
        best_l = np.where(imp, lc, best_l)
    return best_d, best_t, best_e


def _gradients_flat(pr, d, t, eps, om):
    smix = _mix_sky(om, pr.sky)
    wsum = om.sum(1)
    tau = _tau(d, pr.alpha)
    bt = _planck_core(pr.wav, t[:, None])
    mix = (smix + (_PI - wsum)[:, None] * pr.ground) / _PI
    core = eps * bt + (1.0 - eps) * mix - pr.b_air
    r = tau * core + pr.b_air - pr.y
    dtau = -(_LOG10 / 10.0) * pr.alpha[None, :] * tau
    g_d = (2.0 * r * dtau * core).sum(1)
    dbt = _planck_dT_core(pr.wav, t[:, None])
    g_t = (2.0 * r * tau * eps * dbt).sum(1)
    lap = np.zeros_like(eps)
    lap[:, :-1] += eps[:, :-1] - eps[:, 1:]
    lap[:, 1:] += eps[:, 1:] - eps[:, :-1]
    g_e = 2.0 * r * tau * (bt - mix) + 2.0 * pr.rho_eps * lap
    if om.shape[1] > 0:
        ekq = pr.sky.T - pr.ground[:, None]
        g_o = np.einsum("pk,kq->pq", 2.0 * r * tau * (1.0 - eps) / _PI, ekq,
                        optimize=False)
    else:
        g_o = np.zeros_like(om)
    return g_d, g_t, g_e, g_o


def _backtrack_block(cfg, l0, step0, x, cand_of, dist2_of, loss_of):
    """Projected-gradient backtracking for one variable block, all pixels.

    Accepts a candidate only if L(x+) <= L(x) - c/t * |x+ - x|^2, so every
    accepted move strictly reduces the per-pixel objective.
    """
    p = l0.shape[0]
    accepted = x.copy()
    tcur = step0.copy()
    done = np.zeros(p, dtype=bool)
    lbest = l0.copy()
    for _ in range(cfg.armijo_backtracks):
        cand = cand_of(tcur)
        lc = loss_of(cand)
        dx2 = dist2_of(cand)
        need = l0 - cfg.armijo_c * dx2 / np.maximum(tcur, 1e-300)
        acc = (~done) & (lc <= need) & (dx2 > 0.0)
        if acc.any():
            mask = acc.reshape((-1,) + (1,) * (cand.ndim - 1))
            accepted = np.where(mask, cand, accepted)
            lbest = np.where(acc, lc, lbest)
        done |= acc
        if done.all():
            break
        tcur = tcur * cfg.armijo_factor
    return accepted, lbest


def _armijo_pass(pr, cfg, d, t, eps, om):
    """One sweep of per-block projected-gradient line searches."""

    def cur_loss(dv, tv, ev, ov):
        return _loss(pr, dv, tv, ev, _mix_sky(ov, pr.sky), ov.sum(1))

    g_d, _, _, _ = _gradients_flat(pr, d, t, eps, om)
    l0 = cur_loss(d, t, eps, om)
    d, l0 = _backtrack_block(
        cfg, l0, 0.5 / (np.abs(g_d) + 1e-30), d,
        lambda tc: np.clip(d - tc * g_d, 0.0, pr.d_max),
        lambda c: (c - d) ** 2,
        lambda c: cur_loss(c, t, eps, om))

    _, g_t, _, _ = _gradients_flat(pr, d, t, eps, om)
    t, l0 = _backtrack_block(
        cfg, l0, 0.25 / (np.abs(g_t) + 1e-30), t,
        lambda tc: np.clip(t - tc * g_t, pr.t_lo, pr.t_hi),
        lambda c: (c - t) ** 2,
        lambda c: cur_loss(d, c, eps, om))

    _, _, g_e, _ = _gradients_flat(pr, d, t, eps, om)
    eps, l0 = _backtrack_block(
        cfg, l0, 0.01 / (np.abs(g_e).max(1) + 1e-30), eps,
        lambda tc: np.clip(eps - tc[:, None] * g_e, 0.0, 1.0),
        lambda c: ((c - eps) ** 2).sum(1),
        lambda c: cur_loss(d, t, c, om))

    if om.shape[1] > 0:
        _, _, _, g_o = _gradients_flat(pr, d, t, eps, om)
        om, l0 = _backtrack_block(
            cfg, l0, 0.05 / (np.abs(g_o).max(1) + 1e-30), om,
            lambda tc: _proj_cap_simplex(om - tc[:, None] * g_o),
            lambda c: ((c - om) ** 2).sum(1),
            lambda c: cur_loss(d, t, eps, c))

    return d, t, eps, om, l0


def _tv1d_denoise(y, lam, iters=200):
    # prox of lam*TV about y, solved on the box-constrained dual (FISTA)
    n = y.size
    if n < 2 or lam <= 0.0:
        return y.copy()
    u = np.zeros(n - 1)
    v = u.copy()
    tk = 1.0
    for _ in range(iters):
        x = y.copy()
        x[:-1] += v
        x[1:] -= v
        un = np.clip(v + 0.25 * (x[1:] - x[:-1]), -lam, lam)
        tn = (1.0 + np.sqrt(1.0 + 4.0 * tk * tk)) / 2.0
        v = un + ((tk - 1.0) / tn) * (un - u)
        u, tk = un, tn
    x = y.copy()
    x[:-1] += u
    x[1:] -= u
    return x


def _tv_denoise_map(d2, lam):
    # anisotropic split matching tv_distance's truncated index ranges:
    # horizontal terms exist on rows 0..M-2, vertical terms on cols 0..N-2
    out = d2.copy()
    m, n = out.shape
    for i in range(m - 1):
        out[i, :] = _tv1d_denoise(out[i, :], lam)
    for j in range(n - 1):
        out[:, j] = _tv1d_denoise(out[:, j], lam)
    return out


# ----------------------------------------------------------------------
# public loss / gradient / projection operations
# ----------------------------------------------------------------------

def _build_problem(cube, alpha, dw, air_temperature, q, rho_eps, d_max,
                   t_span, ground_fill):
    if alpha.grid != cube.grid:
        raise GridError("attenuation grid does not match cube grid")
    wav = cube.grid.wavelengths
    k = wav.size
    if q > 0:
        if dw is None:
            raise DimensionError("sky model requested but no downwelling set given")
        if dw.grid != cube.grid:
            raise GridError("downwelling grid does not match cube grid")
        if len(dw) != q:
            raise DimensionError(
                f"model uses q={q} sky sectors but downwelling set has {len(dw)}")
        sky = np.asarray(dw.values, dtype=float)
    else:
        sky = np.zeros((0, k))
    t_air = as_kelvin(air_temperature)
    b_air = _planck_core(wav, t_air)
    ground = b_air if ground_fill == "ambient" else np.zeros(k)
    m, n = cube.radiance.shape[:2]
    y = cube.radiance.reshape(m * n, k).astype(float)
    t_lo = max(t_air - t_span, 1e-2)
    return _Problem(wav=wav, alpha=np.asarray(alpha.values, float),
                    y=y, sky=sky, ground=ground, b_air=b_air, rho_eps=rho_eps,
                    d_max=d_max, t_lo=t_lo, t_hi=t_air + t_span), m, n


def _param_arrays(params):
    """Pull the four parameter maps out of an EstimateMaps, a mapping, or
    any object carrying the attributes. Values need not be feasible."""
    if isinstance(params, dict):
        fields = [params[k] for k in ("distance", "temperature",
                                      "emissivity", "solid_angles")]
    else:
        fields = [getattr(params, k) for k in ("distance", "temperature",
                                               "emissivity", "solid_angles")]
    d, t, e, o = (np.asarray(f, dtype=float) for f in fields)
    if d.ndim != 2:
        raise DimensionError(f"distance must be 2-d, got shape {d.shape}")
    m, n = d.shape
    if t.shape != (m, n):
        raise DimensionError(f"temperature shape {t.shape} != {(m, n)}")
    if e.ndim != 3 or e.shape[:2] != (m, n):
        raise DimensionError(f"emissivity must be (M,N,K), got {e.shape}")
    if o.ndim != 3 or o.shape[:2] != (m, n):
        raise DimensionError(f"solid_angles must be (M,N,Q), got {o.shape}")
    return d, t, e, o


def _flatten_maps(params, q):
    d, t, e, o = _param_arrays(params)
    m, n = d.shape
    k = e.shape[2]
    if o.shape[2] != q:
        raise DimensionError(
            f"params carry {o.shape[2]} sky sectors, model has {q}")
    return (d.reshape(m * n), t.reshape(m * n),
            e.reshape(m * n, k), o.reshape(m * n, q))


def data_loss(params, cube, alpha, dw, air_temperature, ground_fill="ambient"):
    """Total squared radiance misfit of the model at params (no penalties)."""
    dmap, _, emap, omap = _param_arrays(params)
    q = omap.shape[2]
    if dmap.shape != cube.radiance.shape[:2]:
        raise DimensionError("params and cube differ in image shape")
    if emap.shape[2] != cube.radiance.shape[2]:
        raise DimensionError("params and cube differ in band count")
    pr, _, _ = _build_problem(cube, alpha, dw, air_temperature, q, 0.0,
                              np.inf, 1.0, ground_fill)
    d, t, eps, om = _flatten_maps(params, q)
    r = _predict(pr, d, t, eps, _mix_sky(om, pr.sky), om.sum(1)) - pr.y
    return float((r * r).sum())


def emissivity_smoothness(eps):
    """Sum over pixels of squared adjacent-band emissivity differences."""
    e = np.asarray(eps, dtype=float)
    return float((np.diff(e, axis=-1) ** 2).sum())


def tv_distance(d):
    """Anisotropic total variation of a range map, truncated index ranges."""
    dd = np.asarray(d, dtype=float)
    if dd.ndim != 2:
        raise DimensionError(f"range map must be 2-d, got shape {dd.shape}")
    return float(np.abs(dd[1:, :-1] - dd[:-1, :-1]).sum()
                 + np.abs(dd[:-1, 1:] - dd[:-1, :-1]).sum())


def gradients(params, cube, alpha, dw, air_temperature, rho_eps,
              ground_fill="ambient"):
    """Analytic partials of data_loss + rho_eps*emissivity_smoothness.

    The TV term is excluded by design; it is handled by a proximal step,
    not by gradient descent.
    """
    q = _param_arrays(params)[3].shape[2]
    pr, m, n = _build_problem(cube, alpha, dw, air_temperature, q, rho_eps,
                              np.inf, 1.0, ground_fill)
    d, t, eps, om = _flatten_maps(params, q)
    g_d, g_t, g_e, g_o = _gradients_flat(pr, d, t, eps, om)
    k = eps.shape[1]
    return {
        "distance": g_d.reshape(m, n),
        "temperature": g_t.reshape(m, n),
        "emissivity": g_e.reshape(m, n, k),
        "solid_angles": g_o.reshape(m, n, q),
    }


def project(params, d_max):
    """Euclidean projection onto the feasible set, one field at a time.

    Accepts possibly-infeasible values (EstimateMaps, mapping, or any object
    with the four maps): distance clips to [0, d_max], emissivity to [0, 1],
    and each pixel's solid angles land on the capped simplex
    {w >= 0, sum(w) <= pi}. Temperature passes through untouched.
    """
    if not (d_max > 0.0):
        raise DomainError(f"d_max must be > 0, got {d_max}")
    d, t, e, o = _param_arrays(params)
    m, n = d.shape
    q = o.shape[2]
    om = _proj_cap_simplex(o.reshape(m * n, q))

    def _carry(name, default):
        v = params.get(name) if isinstance(params, dict) else getattr(params, name, None)
        return default if v is None else np.asarray(v).copy()

    return EstimateMaps(
        distance=np.clip(d, 0.0, d_max),
        temperature=t.copy(),
        emissivity=np.clip(e, 0.0, 1.0),
        solid_angles=om.reshape(m, n, q),
        loss=_carry("loss", np.zeros((m, n))),
        iterations=_carry("iterations", np.zeros((m, n), dtype=np.int64)),
    )


# ----------------------------------------------------------------------
# solve
# ----------------------------------------------------------------------

def _default_distance_init(cube, alpha, air_temperature, d_max):
    try:
        bands = BandSelection.from_grid(cube.grid)
        rm = bispectral_air(cube, bands, alpha, air_temperature)
        d0 = np.where(rm.validity == FLAG_VALID,
                      np.clip(rm.distances, 0.0, d_max), d_max / 2.0)
    except (GridError, DomainError):
        m, n = cube.radiance.shape[:2]
        d0 = np.full((m, n), d_max / 2.0)
    return d0.reshape(-1)


def _default_temperature_init(pr):
    # brightness temperature at the most transparent band, clipped to bounds
    bidx = int(np.argmin(pr.alpha))
    lb = pr.y[:, bidx]
    t0 = np.full(pr.y.shape[0], 0.5 * (pr.t_lo + pr.t_hi))
    pos = lb > 0.0
    if pos.any():
        t0[pos] = brightness_temperature(float(pr.wav[bidx]), lb[pos])
    return np.clip(t0, pr.t_lo, pr.t_hi)


def _solve_flat(pr, cfg, d0, t0, jit, init_state, track, rows, ncols):
    qe = pr.sky.shape[0]
    p = pr.y.shape[0]
    hist = [] if track else None

    if cfg.rho_d > 0.0:
        def extra_total(dflat):
            return cfg.rho_d * tv_distance(dflat.reshape(rows, ncols))
    else:
        extra_total = None

    refine_iters = min(cfg.refine_iterations, cfg.max_iterations)

    if init_state is None:
        dl = []
        for idx, base in enumerate(cfg.d_ladder):
            vec = np.clip(d0, 1.0, pr.d_max) if base is None else np.full(p, float(base))
            if cfg.init_jitter > 0.0:
                vec = np.clip(vec * (1.0 + cfg.init_jitter * jit[:, idx]),
                              0.0, pr.d_max)
            dl.append(vec)
        starts = [(dv, e0) for e0 in cfg.eps_starts for dv in dl]
        sn = len(starts)
        k = pr.wav.size
        ds = np.concatenate([s[0] for s in starts])
        es = np.concatenate([np.full((p, k), s[1]) for s in starts])
        ts = np.tile(t0, sn)
        os_ = np.zeros((sn * p, qe))
        prs = replace(pr, y=np.tile(pr.y, (sn, 1)))
        ds, ts, es, os_ = _phase(prs, cfg, ds, ts, es, os_,
                                 min(cfg.warmup_iterations, cfg.max_iterations),
                                 min_iter=10 ** 9, d_freeze=cfg.warmup_d_freeze)
        ls = _loss(prs, ds, ts, es, _mix_sky(os_, prs.sky), os_.sum(1)).reshape(sn, p)
        order = np.argsort(ls, axis=0, kind="stable")
        top = 1 if qe == 0 else min(cfg.top_k, sn)
        cands = []
        for r in range(top):
            ix = order[r] * p + np.arange(p)
            cnt = np.zeros(p, dtype=np.int64)
            dr, tr, er, orr = _phase(
                pr, cfg, ds[ix], ts[ix], es[ix], os_[ix], refine_iters,
                min_iter=cfg.settle_iterations, d_freeze=0, count=cnt,
                hist=hist if r == 0 else None, label=f"refine{r}",
                extra_total=extra_total)
            lr = _loss(pr, dr, tr, er, _mix_sky(orr, pr.sky), orr.sum(1))
            cands.append((lr, dr, tr, er, orr, cnt))
        lb, db, tb, eb, ob, cb = cands[0]
        for lr, dr, tr, er, orr, cnt in cands[1:]:
            imp = lr < lb
            db = np.where(imp, dr, db)
            tb = np.where(imp, tr, tb)
            eb = np.where(imp[:, None], er, eb)
            ob = np.where(imp[:, None], orr, ob)
            cb = np.where(imp, cnt, cb)
            lb = np.where(imp, lr, lb)
        d, t, eps, om, cnt = db, tb, eb, ob, cb
    else:
        d, t, eps, om = init_state
        cnt = np.zeros(p, dtype=np.int64)
        d, t, eps, om = _phase(pr, cfg, d, t, eps, om, refine_iters,
                               min_iter=cfg.settle_iterations, d_freeze=0,
                               count=cnt, hist=hist, label="refine0",
                               extra_total=extra_total)

    if hist is not None:
        lcur = _loss(pr, d, t, eps, _mix_sky(om, pr.sky), om.sum(1))
        tot = float(lcur.sum()) + (extra_total(d) if extra_total else 0.0)
        hist.append(("merge", 0, tot, _feasible(d, eps, om, pr.d_max)))

    if qe > 0:
        ones = np.ones(p, dtype=bool)
        for rep in range(cfg.polish_rounds):
            d, t, eps = _polish_distance(pr, cfg, d, t, eps, om,
                                         span=cfg.polish_span / (rep + 1),
                                         steps=cfg.polish_steps)
            om = _sky_block(pr, d, t, eps, om, ones, cfg.sky_admm_iterations)
            if hist is not None:
                lcur = _loss(pr, d, t, eps, _mix_sky(om, pr.sky), om.sum(1))
                tot = float(lcur.sum()) + (extra_total(d) if extra_total else 0.0)
                hist.append(("polish", rep, tot, _feasible(d, eps, om, pr.d_max)))

    for i in range(cfg.armijo_iterations):
        d, t, eps, om, lcur = _armijo_pass(pr, cfg, d, t, eps, om)
        if hist is not None:
            tot = float(lcur.sum()) + (extra_total(d) if extra_total else 0.0)
            hist.append(("armijo", i, tot, _feasible(d, eps, om, pr.d_max)))

    if cfg.rho_d > 0.0:
        for rnd in range(cfg.tv_rounds):
            smix = _mix_sky(om, pr.sky)
            wsum = om.sum(1)
            l_old = _loss(pr, d, t, eps, smix, wsum)
            tot_old = float(l_old.sum()) + extra_total(d)
            dn = np.clip(_tv_denoise_map(d.reshape(rows, ncols), cfg.rho_d),
                         0.0, pr.d_max).reshape(-1)
            l_new = _loss(pr, dn, t, eps, smix, wsum)
            tot_new = float(l_new.sum()) + extra_total(dn)
            if tot_new > tot_old:
                break
            d = dn
            d, t, eps, om = _phase(pr, cfg, d, t, eps, om, 2,
                                   min_iter=10 ** 9, d_freeze=10 ** 9)
            if hist is not None:
                lcur = _loss(pr, d, t, eps, _mix_sky(om, pr.sky), om.sum(1))
                hist.append(("tv", rnd, float(lcur.sum()) + extra_total(d),
                             _feasible(d, eps, om, pr.d_max)))

    loss_final = _loss(pr, d, t, eps, _mix_sky(om, pr.sky), om.sum(1))
    return d, t, eps, om, loss_final, cnt, hist


def solve(cube, alpha, dw, air_temperature, config=None, initial=None):
    """Estimate per-pixel range, temperature, emissivity and sky weights.

    cube/alpha/dw must share one spectral grid. air_temperature feeds both
    the path term and the ambient ground fill. initial optionally replaces
    the multi-start warmup with a caller-supplied EstimateMaps state.
    Deterministic for a fixed (seed, threads) pair, and independent of the
    thread count outright.
    """
    cfg = config if config is not None else SolverConfig()
    violations = cfg.validate()
    if violations:
        raise ConfigError(violations)
    if cfg.q is not None:
        q = int(cfg.q)
        if q != 0 and (dw is None or len(dw) != q):
            raise ConfigError(
                [f"config q={q} does not match the downwelling set "
                 f"({'absent' if dw is None else len(dw)} sectors)"])
    else:
        q = len(dw) if dw is not None else 0
    if cfg.zenith_angles_deg is not None and dw is not None and q > 0:
        got = tuple(float(a) for a in dw.zenith_angles_deg)
        want = tuple(float(a) for a in cfg.zenith_angles_deg)
        if got != want:
            raise ConfigError(
                [f"config zenith angles {want} do not match downwelling set {got}"])

    pr, m, n = _build_problem(cube, alpha, dw if q > 0 else None, air_temperature,
                              q, cfg.rho_eps, cfg.d_max, cfg.t_span, cfg.ground_fill)

    d0 = _default_distance_init(cube, alpha, air_temperature, cfg.d_max)
    t0 = _default_temperature_init(pr)

    nladder = len(cfg.d_ladder)
    jit = np.zeros((m * n, nladder))
    if cfg.init_jitter > 0.0 and initial is None:
        for pix in range(m * n):
            i, j = divmod(pix, n)
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i, j]))
            jit[pix] = rng.standard_normal(nladder)

    init_state = None
    if initial is not None:
        if initial.distance.shape != (m, n):
            raise DimensionError("initial maps do not match the cube image shape")
        if initial.emissivity.shape[2] != pr.wav.size:
            raise DimensionError("initial maps do not match the cube band count")
        init_state = _flatten_maps(initial, q)

    track = cfg.track_history and cfg.threads == 1

    if cfg.threads == 1 or m == 1:
        d, t, eps, om, loss_f, cnt, hist = _solve_flat(
            pr, cfg, d0, t0, jit, init_state, track, m, n)
    else:
        blocks = np.array_split(np.arange(m), min(cfg.threads, m))
        blocks = [b for b in blocks if b.size]
        y3 = pr.y.reshape(m, n, pr.wav.size)

        def run(rows_idx):
            sel = slice(rows_idx[0] * n, (rows_idx[-1] + 1) * n)
            prb = replace(pr, y=y3[rows_idx[0]:rows_idx[-1] + 1].reshape(-1, pr.wav.size))
            ini = None
            if init_state is not None:
                ini = tuple(a[sel] for a in init_state)
            return _solve_flat(prb, cfg, d0[sel], t0[sel], jit[sel], ini,
                               False, rows_idx.size, n)

        with concurrent.futures.ThreadPoolExecutor(max_workers=len(blocks)) as ex:
            parts = list(ex.map(run, blocks))
        d = np.concatenate([pt[0] for pt in parts])
        t = np.concatenate([pt[1] for pt in parts])
        eps = np.concatenate([pt[2] for pt in parts])
        om = np.concatenate([pt[3] for pt in parts])
        loss_f = np.concatenate([pt[4] for pt in parts])
        cnt = np.concatenate([pt[5] for pt in parts])
        hist = None

    k = pr.wav.size
    return EstimateMaps(
        distance=d.reshape(m, n),
        temperature=t.reshape(m, n),
        emissivity=eps.reshape(m, n, k),
        solid_angles=om.reshape(m, n, q),
        loss=loss_f.reshape(m, n),
        iterations=cnt.reshape(m, n),
        history=hist,
    )


def solve_no_sky(cube, alpha, air_temperature, config=None):
    """Downwelling-neglecting baseline: the same engine with the sky term off."""
    cfg = config if config is not None else SolverConfig()
    cfg = replace(cfg, q=0)
    return solve(cube, alpha, None, air_temperature, cfg)
