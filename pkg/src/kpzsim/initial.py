"""Initial conditions: steps, Bernoulli data, pastings, thinnings and colorings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any, Mapping, NamedTuple

import numpy as np

from .lattice import HOLE, ColoredConfig, HeightFunction, ParticleConfig, Window, WindowTooSmall, height_from_config
from .noise import CH_IC, CH_IC_AUX, CH_THIN, bernoulli_field, site_uniforms
from .scaling import ScalingCoeffs, position_of, rescale_values, step_height

KINDS = ("step", "bernoulli", "v_paste", "same_side_paste", "uparrow")
CH_ZETA = 7


@dataclass(frozen=True)
class IcSpec:
    """Recipe for an initial condition.

    ``core`` is the height data pasted into the middle of the pastings and
    dominated by ``uparrow``; when absent a stationary Bernoulli(|mu'|) core
    drawn from ``seed`` is used.
    """

    kind: str
    y: int = 0
    rho: float | None = None
    lam: float = 0.0
    lam_prime: float | None = None
    M: float = 0.0
    R: float | None = None
    drift_factor: int = 1
    seed: int = 0
    eps: float | None = None
    core: HeightFunction | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown initial condition kind {self.kind!r}; expected one of {KINDS}")
        if self.drift_factor not in (1, 2):
            raise ValueError("drift_factor must be 1 or 2")
        if self.rho is not None and not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho={self.rho} outside (0, 1)")
        if self.M < 0:
            raise ValueError("M must be nonnegative")
        if self.R is not None and self.R < self.M:
            raise ValueError("R must be at least M")
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.kind == "uparrow":
            if self.lam_prime is None:
                raise ValueError("uparrow needs lambda_prime")
            if self.lam_prime <= 2 * self.lam:
                raise ValueError(f"uparrow needs lambda_prime > 2*lambda (got {self.lam_prime} <= {2 * self.lam})")

    _KEYS = {"lambda": "lam", "lambda_prime": "lam_prime", "epsilon": "eps"}

    def to_mapping(self) -> dict[str, Any]:
        """Config-file representation (``core`` is not serialized)."""
        inv = {v: k for k, v in self._KEYS.items()}
        out = {}
        for f in fields(self):
            if f.name == "core":
                continue
            v = getattr(self, f.name)
            if v is not None:
                out[inv.get(f.name, f.name)] = v
        return out

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> IcSpec:
        conv = {"y": int, "rho": float, "lam": float, "lam_prime": float, "M": float, "R": float,
                "drift_factor": int, "seed": int, "eps": float, "kind": str}
        kw = {}
        for key, raw in data.items():
            name = cls._KEYS.get(key, key)
            if name not in conv:
                raise KeyError(f"unknown initial condition key {key!r}")
            kw[name] = conv[name](raw)
        if "kind" not in kw:
            raise KeyError("initial condition needs 'kind'")
        return cls(**kw)


class InitialData(NamedTuple):
    config: ParticleConfig
    height: HeightFunction
    info: dict


def unit_length(eps: float) -> int:
    """Lattice sites per unit of the paste parameters M and R."""
    return int(math.floor(eps ** (-2.0 / 3.0) + 1e-9))


def rho_eps_lambda(coeffs: ScalingCoeffs, lam: float, eps: float, drift_factor: int = 1) -> float:
    """Density |mu'| + drift_factor * lam * sigma / beta * eps^(1/3)."""
    if drift_factor not in (1, 2):
        raise ValueError("drift_factor must be 1 or 2")
    if eps <= 0:
        raise ValueError("eps must be positive")
    rho = coeffs.density + drift_factor * lam * coeffs.sigma / coeffs.beta * eps ** (1.0 / 3.0)
    if not 0.0 < rho < 1.0:
        raise ValueError(f"density {rho} outside (0, 1) for lambda={lam}, eps={eps}")
    return rho


def _anchor(window: Window) -> int:
    return 0 if 0 in window else window.lo


def _core_height(spec: IcSpec, coeffs: ScalingCoeffs, window: Window) -> HeightFunction:
    if spec.core is not None:
        return spec.core
    eta = bernoulli_field(spec.seed, CH_IC_AUX, window.lo, window.size, coeffs.density)
    return height_from_config(ParticleConfig(window, eta), _anchor(window), 0)


def _paste(window: Window, core: HeightFunction, lo: int, hi: int, left: np.ndarray, right: np.ndarray) -> InitialData:
    """Core occupancy on [lo, hi], ``left``/``right`` occupancy outside, heights equal to the core on [lo, hi]."""
    if lo - 1 not in core.window or hi not in core.window:
        raise WindowTooSmall(f"core data must cover [{lo - 1}, {hi}]")
    if lo not in window or hi not in window:
        raise WindowTooSmall(f"window {window} does not contain the core [{lo}, {hi}]")
    sites = window.sites()
    eta = np.where(sites < lo, left, right).astype(np.int8)
    k0 = core.window.index(lo - 1)
    eta[window.index(lo):window.index(hi) + 1] = -np.diff(core.values[k0:k0 + hi - lo + 2])
    cfg = ParticleConfig(window, eta)
    return InitialData(cfg, height_from_config(cfg, lo, core.at(lo)), {})


def _bern(spec: IcSpec, window: Window, p: float) -> np.ndarray:
    return bernoulli_field(spec.seed, CH_IC, window.lo, window.size, p)


def _require_eps(spec: IcSpec, eps: float | None) -> float:
    e = spec.eps if eps is None else eps
    if e is None:
        raise ValueError(f"{spec.kind} initial condition needs eps")
    return e


def make_ic(spec: IcSpec, coeffs: ScalingCoeffs, window: Window, eps: float | None = None) -> InitialData:
    """Build the configuration and its anchored height on ``window``.

    The pastings make the rescaled height grow like ``lam * |x|`` away from
    the core: the lower density Bernoulli(rho_{eps,-lam}) sits on the right
    for S6V and on the left for ASEP.
    """
    model = coeffs.model
    sites = window.sites()
    if spec.kind == "step":
        h = step_height(model, spec.y, sites)
        left_fill, right_fill = (1, 0) if model == "asep" else (0, 1)
        eta = -np.diff(np.concatenate(([h[0] + left_fill], h)))
        cfg = ParticleConfig(window, eta, fill_left=left_fill, fill_right=right_fill)
        return InitialData(cfg, HeightFunction(window, h), {})

    if spec.kind == "bernoulli":
        rho = spec.rho if spec.rho is not None else rho_eps_lambda(coeffs, spec.lam, _require_eps(spec, eps), spec.drift_factor)
        cfg = ParticleConfig(window, _bern(spec, window, rho))
        return InitialData(cfg, height_from_config(cfg, _anchor(window), 0), {"rho": rho})

    e = _require_eps(spec, eps)
    m = int(math.floor(spec.M * unit_length(e)))
    core = _core_height(spec, coeffs, window)

    if spec.kind == "v_paste":
        up = rho_eps_lambda(coeffs, spec.lam, e, spec.drift_factor)
        down = rho_eps_lambda(coeffs, -spec.lam, e, spec.drift_factor)
        u = site_uniforms(np.uint64(spec.seed), CH_IC, window.lo, window.size)
        lo_rho, hi_rho = (down, up) if model == "s6v" else (up, down)
        left = (u < hi_rho).astype(np.int8)
        right = (u < lo_rho).astype(np.int8)
        data = _paste(window, core, -m, m, left, right)
        data.info.update(rho_left=hi_rho, rho_right=lo_rho, m=m)
        return data

    if spec.kind == "same_side_paste":
        rho = rho_eps_lambda(coeffs, spec.lam, e, spec.drift_factor)
        b = _bern(spec, window, rho)
        data = _paste(window, core, -m, m, b, b)
        data.info.update(rho=rho, m=m)
        return data

    return _uparrow(spec, coeffs, window, e, m, core)


# ---------------------------------------------------------------------------
# dominating initial condition


def _min_above(start: int, need: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest nonincreasing walk with steps in {0,-1} from ``start`` that stays >= ``need``.

    Returns the walk and a flag array marking sites where ``need`` could not be met.
    """
    sm = np.maximum.accumulate(need[::-1])[::-1]
    h = np.empty(len(need), dtype=np.int64)
    short = np.zeros(len(need), dtype=bool)
    prev = start
    for k in range(len(need)):
        v = max(prev - 1, sm[k])
        if v > prev:
            v, short[k] = prev, True
        h[k] = prev = v
    return h, short


def _max_below(start: int, ub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Largest nonincreasing walk with steps in {0,-1} from ``start`` that stays <= ``ub``."""
    idx = np.arange(len(ub))
    cap = np.minimum.accumulate((ub + idx)[::-1])[::-1] - idx
    h = np.empty(len(ub), dtype=np.int64)
    short = np.zeros(len(ub), dtype=bool)
    prev = start
    for k in range(len(ub)):
        v = min(prev, cap[k])
        if v < prev - 1:
            v, short[k] = prev - 1, True
        h[k] = prev = v
    return h, short


def _uparrow(spec: IcSpec, coeffs: ScalingCoeffs, window: Window, eps: float, m: int, core: HeightFunction) -> InitialData:
    lp = float(spec.lam_prime)
    asep_model = coeffs.model == "asep"
    sign = -1.0 if asep_model else 1.0  # rescaled height = pref * sign * (h - mu' x)
    pref = eps ** (1.0 / 3.0) / coeffs.sigma
    if -m not in core.window or m not in core.window:
        raise WindowTooSmall(f"core data must cover [{-m}, {m}]")

    def resc(xs: np.ndarray, hs: np.ndarray) -> np.ndarray:
        return rescale_values(coeffs, eps, 0.0, xs, hs)

    def core_resc(xs: np.ndarray) -> np.ndarray:
        out = np.full(len(xs), -np.inf)
        inside = (xs >= core.window.lo) & (xs <= core.window.hi)
        out[inside] = resc(xs[inside], core.values[xs[inside] - core.window.lo])
        return out

    def side(direction: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Dominating heights outward from +-m; returns sites, heights, target, shortfall flags."""
        edge = window.hi if direction > 0 else window.lo
        xs = np.arange(direction * m + direction, edge + direction, direction, dtype=np.int64)
        x_m = np.array([direction * m])
        base = float(core_resc(x_m)[0])
        pos = np.abs(position_of(coeffs, eps, 0.0, xs))
        pos_m = abs(float(position_of(coeffs, eps, 0.0, x_m)[0]))
        target = np.maximum(core_resc(xs), base) + lp * (pos - pos_m)
        # integer heights realizing at least the target
        h_real = coeffs.mu_prime * xs + sign * target / pref
        start = core.at(direction * m)
        if direction > 0:
            if asep_model:
                h, short = _max_below(start, np.floor(h_real + 1e-9).astype(np.int64))
            else:
                h, short = _min_above(start, np.ceil(h_real - 1e-9).astype(np.int64))
        else:
            if asep_model:
                g, short = _min_above(-start, -np.floor(h_real + 1e-9).astype(np.int64))
            else:
                g, short = _max_below(-start, -np.ceil(h_real - 1e-9).astype(np.int64))
            h = -g
        return xs, h, target, short

    if window.lo > -m - 1 or window.hi < m + 1:
        raise WindowTooSmall("window does not extend beyond the core")
    xr, hr, tr, sr = side(+1)
    xl, hl, tl, sl = side(-1)

    unit = unit_length(eps)
    if spec.R is not None:
        k = int(math.floor(spec.R * unit))
        if k > min(len(xr), len(xl)) + m:
            raise WindowTooSmall(f"window does not contain +-R = +-{k}")
    else:
        k = None
        for j in range(min(len(xr), len(xl))):
            pos = abs(float(position_of(coeffs, eps, 0.0, np.array([xr[j]]))[0]))
            bound = 0.5 * lp * (1.0 + pos)
            if resc(xr[j:j + 1], hr[j:j + 1])[0] > bound and resc(xl[j:j + 1], hl[j:j + 1])[0] > bound:
                k = int(xr[j])
                break
        if k is None:
            raise WindowTooSmall("no admissible R inside the window; enlarge it")
    nz = k - m

    # outer Bernoulli regions continue the height from +-R
    up = rho_eps_lambda(coeffs, lp, eps, spec.drift_factor)
    down = rho_eps_lambda(coeffs, -lp, eps, spec.drift_factor)
    rho_left, rho_right = (down, up) if asep_model else (up, down)
    u = site_uniforms(np.uint64(spec.seed), CH_IC, window.lo, window.size)
    sites = window.sites()
    eta = np.where(sites < 0, u < rho_left, u < rho_right).astype(np.int8)

    hvals = np.empty(window.size, dtype=np.int64)
    inner = np.arange(-m, m + 1)
    hvals[inner - window.lo] = core.values[inner - core.window.lo]
    hvals[xr[:nz] - window.lo] = hr[:nz]
    hvals[xl[:nz] - window.lo] = hl[:nz]
    # right of R: h(x) = h(x-1) - eta(x)
    ri = k - window.lo
    hvals[ri + 1:] = hvals[ri] - np.cumsum(eta[ri + 1:])
    li = -k - window.lo
    hvals[:li] = hvals[li] + np.cumsum(eta[1:li + 1][::-1])[::-1]
    height = HeightFunction(window, hvals)
    occ = np.empty(window.size, dtype=np.int8)
    occ[1:] = -np.diff(hvals)
    occ[0] = eta[0]
    cfg = ParticleConfig(window, occ)

    delta = np.concatenate((resc(xl[:nz], hl[:nz]) - tl[:nz], resc(xr[:nz], hr[:nz]) - tr[:nz]))
    info = {
        "m": m,
        "R": k / unit,
        "R_sites": k,
        "delta": delta,
        "delta_max": float(delta.max()) if len(delta) else 0.0,
        "shortfall_sites": int(sl[:nz].sum() + sr[:nz].sum()),
        "rho_left": rho_left,
        "rho_right": rho_right,
    }
    return InitialData(cfg, height, info)


# ---------------------------------------------------------------------------
# couplings and colorings


def thin_couple(eta: ParticleConfig, removal_prob: float, seed: int) -> ParticleConfig:
    """Remove each particle independently with probability ``removal_prob``."""
    if not 0.0 <= removal_prob <= 1.0:
        raise ValueError("removal_prob must lie in [0, 1]")
    u = site_uniforms(np.uint64(seed), CH_THIN, eta.window.lo, eta.window.size)
    keep = u >= removal_prob
    return ParticleConfig(eta.window, (eta.occupancy.astype(bool) & keep).astype(np.int8), eta.fill_left, eta.fill_right)


def coarse_coloring(eta: ParticleConfig, xi: ParticleConfig) -> ColoredConfig:
    """Color 2 on ``xi``, color 1 on the discrepancies of ``eta`` over ``xi``."""
    _check_dominated(eta, xi)
    c = np.where(xi.occupancy == 1, 2, np.where(eta.occupancy == 1, 1, HOLE)).astype(np.int32)
    return ColoredConfig(eta.window, c)


def auxiliary_configuration(
    eta: ParticleConfig, coeffs: ScalingCoeffs, lam: float, M: float, eps: float, seed: int, drift_factor: int = 1
) -> tuple[ParticleConfig, ColoredConfig]:
    """Thin ``eta`` left of ``-M floor(eps^-2/3)`` from density rho_{eps,lam} to rho_{eps,-lam}.

    Returns the thinned configuration and its two-class coloring relative to ``eta``.
    """
    up = rho_eps_lambda(coeffs, lam, eps, drift_factor)
    down = rho_eps_lambda(coeffs, -lam, eps, drift_factor)
    m = int(math.floor(M * unit_length(eps)))
    thinned = thin_couple(eta, (up - down) / up, seed)
    left = eta.window.sites() < -m
    xi = ParticleConfig(eta.window, np.where(left, thinned.occupancy, eta.occupancy))
    return xi, coarse_coloring(eta, xi)


def _check_dominated(eta: ParticleConfig, xi: ParticleConfig) -> None:
    if eta.window != xi.window:
        raise ValueError("configurations live on different windows")
    if np.any(xi.occupancy > eta.occupancy):
        raise ValueError("xi must be dominated by eta sitewise")


def refined_coloring(
    eta: ParticleConfig, xi: ParticleConfig, M: float, eps: float, seed: int
) -> tuple[ColoredConfig, ColoredConfig]:
    """Multi-class coloring of ``eta`` over ``xi`` and its two-class coarsening.

    With m = M floor(eps^-2/3): sites of ``xi`` outside [-m, -m/2] get color 3,
    particles inside get 2 + zeta with zeta ~ Bernoulli(1 - eps^(1/3)), and the
    k-th discrepancy counted from the right gets color 2 - k.
    """
    _check_dominated(eta, xi)
    m = int(math.floor(M * unit_length(eps)))
    w = eta.window
    sites = w.sites()
    middle = (sites >= -m) & (2 * sites <= -m)
    disc = (eta.occupancy == 1) & (xi.occupancy == 0)
    if np.any(disc & middle):
        bad = sites[disc & middle]
        raise ValueError(f"discrepancies inside the middle interval at sites {bad[:5].tolist()}")
    zeta = site_uniforms(np.uint64(seed), CH_ZETA, w.lo, w.size) < 1.0 - eps ** (1.0 / 3.0)
    colors = np.full(w.size, HOLE, dtype=np.int64)
    colors[(xi.occupancy == 1) & ~middle] = 3
    colors[(eta.occupancy == 1) & middle] = 2 + zeta[(eta.occupancy == 1) & middle]
    idx = np.flatnonzero(disc)[::-1]
    colors[idx] = 2 - np.arange(1, len(idx) + 1)
    if len(idx) and colors[idx].min() <= HOLE:
        raise ValueError("too many discrepancies for 32-bit colors")
    return ColoredConfig(w, colors.astype(np.int32)), coarse_coloring(eta, xi)
