"""KPZ scaling: coefficients, rescaled heights, sheets and the UC metric."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import asep, s6v
from .lattice import HOLE, ColoredConfig, ColoredHeightFunction, HeightFunction, Window, WindowTooSmall

FORMULA_VERSION = "1"
_ALIGN_TOL = 1e-9


# ---------------------------------------------------------------------------
# coefficients


def _asep_mu(alpha: float) -> float:
    return 0.25 * (1.0 - alpha) ** 2


def _s6v_mu(alpha: float, z: float) -> float:
    return -((math.sqrt(alpha) - math.sqrt(z)) ** 2) / (1.0 - z)


@dataclass(frozen=True)
class ScalingCoeffs:
    model: str
    q: float
    alpha: float
    mu: float
    mu_prime: float
    sigma: float
    beta: float
    gamma: float | None = None
    b_right: float | None = None
    z: float | None = None

    @property
    def density(self) -> float:
        """Macroscopic density |mu'| seen along the velocity ``alpha``."""
        return abs(self.mu_prime)

    def mu_at(self, alpha: float) -> float:
        if self.model == "asep":
            return _asep_mu(alpha)
        return _s6v_mu(alpha, self.z)

    def to_json(self) -> str:
        d = asdict(self)
        d["formula_version"] = FORMULA_VERSION
        return json.dumps(d, indent=2, sort_keys=True)


def derive_coeffs(
    model: str,
    q: float,
    alpha: float,
    b_right: float | None = None,
    z: float | None = None,
    fd_check: bool = True,
) -> ScalingCoeffs:
    """Scaling coefficients of ASEP or S6V along the velocity ``alpha``.

    For S6V give exactly one of ``b_right`` and ``z``.  The analytic
    ``mu'`` is compared with a centered difference of ``mu``.
    """
    model = model.lower()
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q={q} outside [0, 1)")
    if model == "asep":
        if not -1.0 < alpha < 1.0:
            raise ValueError(f"alpha={alpha} outside the rarefaction fan (-1, 1)")
        mu = _asep_mu(alpha)
        mu_p = -(1.0 - alpha) / 2.0
        sigma = 0.5 * (1.0 - alpha**2) ** (2.0 / 3.0)
        beta = 2.0 * (1.0 - alpha**2) ** (1.0 / 3.0)
        out = ScalingCoeffs("asep", q, alpha, mu, mu_p, sigma, beta, gamma=1.0 - q)
        lo, hi = -1.0, 1.0
    elif model == "s6v":
        if (b_right is None) == (z is None):
            raise ValueError("give exactly one of b_right and z")
        if z is None:
            if not 0.0 < b_right < 1.0:
                raise ValueError(f"b_right={b_right} outside (0, 1)")
            z = (1.0 - b_right) / (1.0 - q * b_right)
        else:
            if not 0.0 < z < 1.0:
                raise ValueError(f"z={z} outside (0, 1)")
            b_right = (1.0 - z) / (1.0 - q * z)
        if not z < alpha < 1.0 / z:
            raise ValueError(f"alpha={alpha} outside the rarefaction fan ({z}, {1.0 / z})")
        sa, sz = math.sqrt(alpha), math.sqrt(z)
        mu = _s6v_mu(alpha, z)
        mu_p = -(1.0 - math.sqrt(z / alpha)) / (1.0 - z)
        sigma = alpha ** (-1.0 / 6.0) * z ** (1.0 / 6.0) * (1.0 - sz * sa) ** (2.0 / 3.0) * (sa - sz) ** (2.0 / 3.0) / (1.0 - z)
        beta = 2.0 * sigma**2 / (abs(mu_p) * (1.0 - abs(mu_p)))
        out = ScalingCoeffs("s6v", q, alpha, mu, mu_p, sigma, beta, b_right=b_right, z=z)
        lo, hi = z, 1.0 / z
    else:
        raise ValueError(f"unknown model {model!r}")
    if fd_check:
        h = min(1e-5, (alpha - lo) / 4.0, (hi - alpha) / 4.0)
        fd = (out.mu_at(alpha + h) - out.mu_at(alpha - h)) / (2.0 * h)
        if abs(fd - mu_p) > 1e-8 * max(abs(mu_p), 1e-300):
            raise ArithmeticError(f"mu' = {mu_p} disagrees with finite difference {fd}")
    return out


# ---------------------------------------------------------------------------
# rescaled functions


@dataclass
class RescaledFunction:
    """Piecewise linear function through ``(grid, values)``."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.shape != self.values.shape or self.grid.ndim != 1 or len(self.grid) == 0:
            raise ValueError("grid and values must be equal-length 1-d arrays")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    @property
    def lo(self) -> float:
        return float(self.grid[0])

    @property
    def hi(self) -> float:
        return float(self.grid[-1])

    def __call__(self, x: float | np.ndarray) -> np.ndarray | float:
        xa = np.asarray(x, dtype=np.float64)
        if np.any(xa < self.lo - _ALIGN_TOL) or np.any(xa > self.hi + _ALIGN_TOL):
            raise ValueError(f"evaluation outside [{self.lo}, {self.hi}]")
        out = np.interp(xa, self.grid, self.values)
        return float(out) if np.ndim(x) == 0 else out

    def restrict(self, a: float, b: float) -> RescaledFunction:
        """Grid points in ``[a, b]`` plus interpolated end points."""
        if a < self.lo - _ALIGN_TOL or b > self.hi + _ALIGN_TOL or b < a:
            raise ValueError(f"[{a}, {b}] not inside [{self.lo}, {self.hi}]")
        inner = (self.grid > a) & (self.grid < b)
        g = np.concatenate([[a], self.grid[inner], [b]]) if b > a else np.array([a])
        return RescaledFunction(g, self(g))


def scale_factor(coeffs: ScalingCoeffs, eps: float) -> float:
    """Lattice sites per unit of rescaled space."""
    return coeffs.beta * eps ** (-2.0 / 3.0)


def model_time(coeffs: ScalingCoeffs, eps: float, t: float) -> float | int:
    """Continuous ASEP time or S6V column reached at macroscopic time ``t``."""
    if coeffs.model == "asep":
        return 2.0 * t / (coeffs.gamma * eps)
    return int(math.floor(t / eps + _ALIGN_TOL))


def center(coeffs: ScalingCoeffs, eps: float, t: float) -> float:
    """Lattice site that rescaled position 0 refers to at macroscopic time ``t``."""
    k = 2.0 if coeffs.model == "asep" else 1.0
    return k * coeffs.alpha * t / eps


def _centering(coeffs: ScalingCoeffs, eps: float, t: float) -> float:
    k = 2.0 if coeffs.model == "asep" else 1.0
    return k * coeffs.mu * t / eps


def rescale_values(coeffs: ScalingCoeffs, eps: float, t: float, sites: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Rescaled heights at lattice ``sites`` (no interpolation)."""
    sites = np.asarray(sites, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    lin = coeffs.mu_prime * (sites - center(coeffs, eps, t))
    pref = eps ** (1.0 / 3.0) / coeffs.sigma
    if coeffs.model == "asep":
        return pref * (_centering(coeffs, eps, t) + lin - h)
    return pref * (h - _centering(coeffs, eps, t) - lin)


def site_of(coeffs: ScalingCoeffs, eps: float, t: float, x: float | np.ndarray) -> np.ndarray:
    """Lattice position (real) of rescaled position ``x`` at time ``t``."""
    return center(coeffs, eps, t) + scale_factor(coeffs, eps) * np.asarray(x, dtype=np.float64)


def position_of(coeffs: ScalingCoeffs, eps: float, t: float, sites: np.ndarray) -> np.ndarray:
    """Rescaled position of lattice ``sites`` at time ``t``."""
    return (np.asarray(sites, dtype=np.float64) - center(coeffs, eps, t)) / scale_factor(coeffs, eps)


def rescale_height(
    h: HeightFunction,
    coeffs: ScalingCoeffs,
    eps: float,
    t: float,
    x_range: tuple[float, float] | None = None,
) -> RescaledFunction:
    """Rescale a height observed at macroscopic time ``t``.

    The result interpolates linearly between the rescaled positions of the
    window's sites.  ``x_range`` restricts the output and must lie inside
    the window.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    sites = h.window.sites()
    grid = position_of(coeffs, eps, t, sites)
    f = RescaledFunction(grid, rescale_values(coeffs, eps, t, sites, h.values))
    if x_range is None:
        return f
    a, b = x_range
    if a < f.lo - _ALIGN_TOL or b > f.hi + _ALIGN_TOL:
        raise ValueError(f"x range {x_range} exceeds the simulated window [{f.lo:.4g}, {f.hi:.4g}]")
    lo = np.searchsorted(grid, a - _ALIGN_TOL, side="left")
    hi = np.searchsorted(grid, b + _ALIGN_TOL, side="right")
    lo = max(lo - 1, 0)
    hi = min(hi + 1, len(grid))
    return RescaledFunction(grid[lo:hi], f.values[lo:hi])


def rescale_initial(h0: HeightFunction, coeffs: ScalingCoeffs, eps: float) -> RescaledFunction:
    """The time-zero transform of an initial height."""
    return rescale_height(h0, coeffs, eps, 0.0)


def aligned_grid(coeffs: ScalingCoeffs, eps: float, t: float, a: float, b: float, stride: int = 1) -> np.ndarray:
    """Rescaled positions in ``[a, b]`` that fall on lattice sites at time ``t``."""
    lo = math.ceil(float(site_of(coeffs, eps, t, a)) - _ALIGN_TOL)
    hi = math.floor(float(site_of(coeffs, eps, t, b)) + _ALIGN_TOL)
    return position_of(coeffs, eps, t, np.arange(lo, hi + 1, stride))


# ---------------------------------------------------------------------------
# sheets


def _lattice_neighbors(pos: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Floor site, ceiling site and weight of the ceiling for real positions."""
    r = np.round(pos)
    snap = np.abs(pos - r) < _ALIGN_TOL
    pos = np.where(snap, r, pos)
    fl = np.floor(pos).astype(np.int64)
    w = pos - fl
    ce = np.where(w > 0, fl + 1, fl)
    return fl, ce, w


def step_height(model: str, y: int, sites: np.ndarray) -> np.ndarray:
    """Step initial height at ``y``: particles on ``w <= y`` (ASEP) or ``w >= y+1`` (S6V)."""
    sites = np.asarray(sites, dtype=np.int64)
    if model == "asep":
        return np.where(sites <= y, y - sites, 0)
    return np.where(sites >= y, y - sites, 0)


def nested_steps(model: str, ys: Sequence[int], window: Window) -> tuple[ColoredConfig, ColoredHeightFunction, list[int]]:
    """All step initial conditions at ``ys`` as one colored configuration.

    Cut ``k`` of the returned configuration is the step at ``cut_sites[k-1]``;
    its initial height is carried in the colored height function.
    """
    ys = np.unique(np.asarray(ys, dtype=np.int64))
    n = len(ys)
    w = window.sites()
    if model == "asep":
        # color = number of steps containing w
        colors = n - np.searchsorted(ys, w, side="left")
        order = ys[::-1]
        fill_l, fill_r = np.int32(n), HOLE
    else:
        colors = np.searchsorted(ys, w - 1, side="right")
        order = ys
        fill_l, fill_r = HOLE, np.int32(n)
    colors = np.where(colors == 0, HOLE, colors).astype(np.int32)
    cfg = ColoredConfig(window, colors, fill_l, fill_r)
    cuts = tuple(range(1, n + 1))
    vals = np.stack([step_height(model, int(y), w) for y in order])
    return cfg, ColoredHeightFunction(window, cuts, vals), [int(y) for y in order]


@dataclass
class SheetEnsemble:
    """Coupled step-initial heights ``h(y, s; x, t)`` and their rescaling.

    ``raw[i, j]`` is the height at the lattice site at or below ``x_grid[j]``
    for the step at the lattice site at or below ``y_grid[i]``;
    ``rescaled[i, j]`` interpolates linearly between neighboring sites in
    each variable.
    """

    model: str
    coeffs: ScalingCoeffs
    eps: float
    s: float
    t: float
    seed: int
    y_grid: np.ndarray
    x_grid: np.ndarray
    raw: np.ndarray
    rescaled: np.ndarray
    window: Window

    def column(self, j: int) -> RescaledFunction:
        """``y -> L(y, s; x_j, t)``."""
        return RescaledFunction(self.y_grid, self.rescaled[:, j])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["y", "x", "raw_h", "rescaled"])
            for i, y in enumerate(self.y_grid):
                for j, x in enumerate(self.x_grid):
                    wr.writerow([repr(float(y)), repr(float(x)), int(self.raw[i, j]), repr(float(self.rescaled[i, j]))])

    def write_sidecar(self, path: str | Path) -> None:
        Path(path).write_text(self.coeffs.to_json() + "\n", encoding="utf-8")


def _sheet_window(coeffs: ScalingCoeffs, eps: float, s: float, t: float, sites_lo: int, sites_hi: int, scale: int) -> Window:
    if coeffs.model == "asep":
        tau = model_time(coeffs, eps, t) - model_time(coeffs, eps, s)
        pad = int(math.ceil(tau + 8.0 * math.sqrt(tau) + 32)) * scale
        return Window(sites_lo - pad, sites_hi + pad)
    cols = model_time(coeffs, eps, t) - model_time(coeffs, eps, s)
    pad = int(math.ceil((cols + 10.0 * math.sqrt(cols)) / coeffs.z + 32)) * scale
    return Window(sites_lo - 4, sites_hi + pad)


def evolve_steps(
    coeffs: ScalingCoeffs,
    eps: float,
    s: float,
    t: float,
    ys: Sequence[int],
    xs: Sequence[int],
    seed: int,
    max_tries: int = 6,
) -> tuple[np.ndarray, Window]:
    """Raw heights ``h(Y, s; X, t)`` for integer ``ys`` and ``xs`` (shape ``len(ys) x len(xs)``).

    The window grows until no particle would have to leave it.
    """
    ys = np.unique(np.asarray(ys, dtype=np.int64))
    xs = np.asarray(xs, dtype=np.int64)
    lo = int(min(ys.min(), xs.min()))
    hi = int(max(ys.max(), xs.max()))
    m_s = model_time(coeffs, eps, s)
    m_t = model_time(coeffs, eps, t)
    for attempt in range(max_tries):
        win = _sheet_window(coeffs, eps, s, t, lo, hi, 2**attempt)
        cfg, h0, order = nested_steps(coeffs.model, ys, win)
        try:
            if m_t <= m_s:
                h = h0
            elif coeffs.model == "asep":
                clocks = asep.ClockStream(seed, coeffs.q, float(m_t))
                h = asep.evolve([cfg], clocks, float(m_t), since=float(m_s), heights=[h0], strict_edges=True).heights[0]
            else:
                noise = s6v.VertexNoiseField(seed, coeffs.q, coeffs.b_right)
                h = s6v.evolve([cfg], noise, int(m_t), since=int(m_s), heights=[h0], strict_edges=True).heights[0]
        except WindowTooSmall:
            continue
        rank = {y: k for k, y in enumerate(order)}
        rows = np.array([rank[int(y)] for y in ys])
        return h.values[rows][:, xs - win.lo], win
    raise WindowTooSmall(f"no window of up to {2 ** (max_tries - 1)}x the default size sufficed")


def build_sheet(
    coeffs: ScalingCoeffs,
    eps: float,
    s: float,
    t: float,
    y_grid: Sequence[float],
    x_grid: Sequence[float],
    seed: int,
) -> SheetEnsemble:
    """Evolve every step initial condition of ``y_grid`` jointly and rescale.

    Position ``y`` refers to site ``beta*y*eps^(-2/3)`` at time ``s``;
    position ``x`` to site ``k*alpha*(t-s)/eps + beta*x*eps^(-2/3)`` at time
    ``t`` (``k`` = 2 for ASEP, 1 for S6V).
    """
    if not t >= s >= 0:
        raise ValueError("need 0 <= s <= t")
    if eps <= 0:
        raise ValueError("eps must be positive")
    y_grid = np.asarray(y_grid, dtype=np.float64)
    x_grid = np.asarray(x_grid, dtype=np.float64)
    if np.any(np.diff(y_grid) <= 0) or np.any(np.diff(x_grid) <= 0):
        raise ValueError("grids must be strictly increasing")
    sc = scale_factor(coeffs, eps)
    dt = t - s
    yf, yc, yw = _lattice_neighbors(sc * y_grid)
    xf, xc, xw = _lattice_neighbors(center(coeffs, eps, dt) + sc * x_grid)
    ys = np.unique(np.concatenate([yf, yc]))
    xs = np.unique(np.concatenate([xf, xc]))
    raw_all, win = evolve_steps(coeffs, eps, s, t, ys, xs, seed)
    # rescale at lattice points: L = pref*(+-h + centering terms), relative offset Y
    X = xs[None, :].astype(np.float64)
    Y = ys[:, None].astype(np.float64)
    lin = coeffs.mu_prime * (X - center(coeffs, eps, dt) - Y)
    pref = eps ** (1.0 / 3.0) / coeffs.sigma
    cent = _centering(coeffs, eps, dt)
    if coeffs.model == "asep":
        resc_all = pref * (cent + lin - raw_all)
    else:
        resc_all = pref * (raw_all - cent - lin)
    iy_f = np.searchsorted(ys, yf)
    iy_c = np.searchsorted(ys, yc)
    ix_f = np.searchsorted(xs, xf)
    ix_c = np.searchsorted(xs, xc)
    r_ff = resc_all[np.ix_(iy_f, ix_f)]
    r_fc = resc_all[np.ix_(iy_f, ix_c)]
    r_cf = resc_all[np.ix_(iy_c, ix_f)]
    r_cc = resc_all[np.ix_(iy_c, ix_c)]
    wy = yw[:, None]
    wx = xw[None, :]
    resc = (1 - wy) * ((1 - wx) * r_ff + wx * r_fc) + wy * ((1 - wx) * r_cf + wx * r_cc)
    raw = raw_all[np.ix_(iy_f, ix_f)]
    return SheetEnsemble(coeffs.model, coeffs, eps, s, t, seed, y_grid, x_grid, raw, resc, win)


# ---------------------------------------------------------------------------
# restricted suprema and the UC metric


def restricted_sup(f: RescaledFunction | Callable[[np.ndarray], np.ndarray], sheet: SheetEnsemble, I: float, x_index: int) -> float:
    """max over sheet abscissae ``z`` in ``[-I, I]`` of ``f(z) + L(z, s; x, t)``."""
    m = (sheet.y_grid >= -I - _ALIGN_TOL) & (sheet.y_grid <= I + _ALIGN_TOL)
    if not np.any(m):
        raise ValueError(f"no sheet abscissa in [-{I}, {I}]")
    z = sheet.y_grid[m]
    return float(np.max(np.asarray(f(z)) + sheet.rescaled[m, x_index]))


def _on_interval(f: RescaledFunction, g: RescaledFunction, ell: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    fx = f.restrict(-ell, ell)
    gx = g.restrict(-ell, ell)
    return fx.grid, fx.values, gx.grid, gx.values


def _directed(xa: np.ndarray, ya: np.ndarray, xb: np.ndarray, yb: np.ndarray) -> float:
    """Directed Hausdorff distance from hypo(a) to hypo(b) on sampled abscissae.

    An abscissa with value ``-inf`` carries no hypograph points.
    """
    ma = ya > -np.inf
    mb = yb > -np.inf
    if not np.any(ma):
        return 0.0
    if not np.any(mb):
        return math.inf
    dx = np.abs(xa[ma][:, None] - xb[mb][None, :])
    dy = np.maximum(0.0, np.exp(ya[ma])[:, None] - np.exp(yb[mb])[None, :])
    return float(np.max(np.min(np.maximum(dx, dy), axis=1)))


def uc_distance(f: RescaledFunction, g: RescaledFunction, L_max: int) -> float:
    """Sum over ``l = 1..L_max`` of ``2^-l min(1, d_l)``.

    ``d_l`` is the Hausdorff distance between the hypographs of ``f`` and
    ``g`` over ``[-l, l]`` under the metric ``max(|x1 - x2|, |e^y1 - e^y2|)``,
    each hypograph sampled at the abscissae of both functions.
    """
    if L_max < 1:
        raise ValueError("L_max must be at least 1")
    for h in (f, g):
        if h.lo > -L_max + _ALIGN_TOL or h.hi < L_max - _ALIGN_TOL:
            raise ValueError(f"functions must be defined on [-{L_max}, {L_max}]")
    total = 0.0
    for ell in range(1, L_max + 1):
        fx, fy, gx, gy = _on_interval(f, g, float(ell))
        xs = np.union1d(fx, gx)
        fv = np.interp(xs, fx, fy)
        gv = np.interp(xs, gx, gy)
        d = max(_directed(xs, fv, xs, gv), _directed(xs, gv, xs, fv))
        total += 2.0**-ell * min(1.0, d)
    return total
