"""Executable checks of the model identities and bounds, plus statistical helpers.

Every check returns a :class:`TestReport`.  Replica ``i`` of a check with
master seed ``s`` uses the seed ``derive_seed(s, i)``.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import IO, Callable, Sequence

import numpy as np
from scipy import stats

from . import asep, s6v
from .initial import IcSpec, auxiliary_configuration, make_ic, refined_coloring, unit_length
from .lattice import (
    HOLE,
    ColoredConfig,
    HeightFunction,
    ParticleConfig,
    Window,
    colored_heights_from_config,
    height_from_config,
    merge_colors,
)
from .noise import CH_IC, CH_IC_AUX, bernoulli_field, derive_seed
from .scaling import (
    ScalingCoeffs,
    aligned_grid,
    build_sheet,
    evolve_steps,
    model_time,
    rescale_initial,
    scale_factor,
    site_of,
)


# ---------------------------------------------------------------------------
# reports


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, Fraction):
        return str(v)
    return v


@dataclass
class TestReport:
    """Outcome of one check: counts, statistics, the bound used and the verdict."""

    __test__ = False  # not a pytest class

    name: str
    trials: int
    failures: int
    passed: bool
    bound: str
    statistics: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    note: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.failures <= self.trials:
            raise ValueError("failures must lie between 0 and trials")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _seeds(master: int, count: int) -> dict:
    return {"master": int(master), "count": int(count), "rule": "SeedSequence([master, index])"}


def write_summary_csv(reports: Sequence[TestReport], path: str | Path | IO[str]) -> None:
    """One row per report; ``path`` may also be an open text stream."""
    if not isinstance(path, (str, Path)):
        _summary_rows(reports, path)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _summary_rows(reports, fh)


def _summary_rows(reports: Sequence[TestReport], fh: IO[str]) -> None:
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["name", "trials", "failures", "passed", "bound"])
    for r in reports:
        wr.writerow([r.name, r.trials, r.failures, int(r.passed), r.bound])


# ---------------------------------------------------------------------------
# statistics


def empirical_cdf(samples: Sequence[float]) -> Callable[[float | np.ndarray], np.ndarray]:
    """Right-continuous empirical distribution function."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    if s.size == 0:
        raise ValueError("empty sample")
    return lambda x: np.searchsorted(s, np.asarray(x, dtype=np.float64), side="right") / s.size


def ks_distance(samples_a: Sequence[float], samples_b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    return float(stats.ks_2samp(a, b).statistic)


def ks_critical(n: int, m: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value at level ``alpha``."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) * math.sqrt((n + m) / (n * m))


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


# ---------------------------------------------------------------------------
# vertex weights and conservation


def check_vertex_stochasticity(pairs: int = 50, seed: int = 0) -> TestReport:
    """Exact rational row sums of the vertex weights for random ``(q, b)``."""
    rng = random.Random(seed)
    failures = 0
    for _ in range(pairs):
        q = Fraction(rng.randrange(0, 10**6), 10**6)
        b = Fraction(rng.randrange(1, 10**6), 10**6)
        rows = s6v.vertex_weights(q, b)
        ok = s6v.check_row_stochastic(q, b) and all(sum(r.values()) == 1 for r in rows.values())
        failures += not ok
    return TestReport("vertex_stochasticity", pairs, failures, failures == 0, "row sums == 1 exactly",
                      seeds=_seeds(seed, pairs))


def check_arrow_conservation(vertices: int = 10**6, seed: int = 0, q: float = 0.5, b: float = 0.5,
                             rows: int = 2048, colors: int = 5) -> TestReport:
    """Per-vertex multiset conservation plus a global particle count per color cut.

    With no inflow from below, the number of particles of color >= c after
    the sweep equals the initial number minus those that left through the
    top row; the latter is the height increment of the top row.
    """
    win = Window(0, rows - 1)
    cols = max(1, math.ceil(vertices / (2 * rows)))
    occ = bernoulli_field(seed, CH_IC, 0, rows, 0.5)
    rng = np.random.default_rng(seed)
    colored = np.where(occ == 1, rng.integers(1, colors + 1, rows), HOLE).astype(np.int32)
    occ2 = bernoulli_field(seed, CH_IC_AUX, 0, rows, 0.5)
    cfgs = [ParticleConfig(win, occ2).as_colored(), ColoredConfig(win, colored)]
    cuts = tuple(range(1, colors + 1))
    heights = [None, colored_heights_from_config(cfgs[1], cuts, 0, [0] * colors)]
    res = s6v.evolve(cfgs, s6v.VertexNoiseField(seed, q, b), cols, heights=heights, check=True)
    count_errors = 0
    for i, cfg in enumerate(cfgs):
        h0 = res.heights[i]
        for j, cut in enumerate(h0.cuts):
            before = int(np.sum((cfg.colors != HOLE) & (cfg.colors >= cut)))
            after_cfg = res.configs[i].colors
            after = int(np.sum((after_cfg != HOLE) & (after_cfg >= cut)))
            initial = heights[i].values[j] if heights[i] is not None else height_from_config(cfg.threshold(cut), 0, 0).values
            left_top = int(h0.values[j, -1] - initial[-1])
            count_errors += after != before - left_top
    violations = res.conservation_violations
    return TestReport(
        "arrow_conservation", res.vertices, min(violations + count_errors, res.vertices),
        violations == 0 and count_errors == 0, "zero violations",
        statistics={"vertices": res.vertices, "vertex_violations": violations, "count_errors": count_errors},
        seeds=_seeds(seed, 1),
    )


# ---------------------------------------------------------------------------
# monotonicity


def random_ordered_pair(window: Window, seed: int, max_shift: int = 3) -> tuple[ParticleConfig, ParticleConfig, int, np.ndarray, np.ndarray]:
    """Random heights ``h1`` and ``h2 <= h1 + H`` on ``window``.

    ``h2`` is the minimum of ``h1 + H`` and an independent Bernoulli height,
    which is again a valid height function.
    """
    rng = np.random.default_rng(seed)
    r1, r2 = rng.uniform(0.2, 0.8, 2)
    H = int(rng.integers(0, max_shift + 1))
    off = int(rng.integers(-5, 6))
    p1 = ParticleConfig(window, bernoulli_field(seed, CH_IC, window.lo, window.size, r1))
    g = ParticleConfig(window, bernoulli_field(seed, CH_IC_AUX, window.lo, window.size, r2))
    h1 = height_from_config(p1, window.lo, 0).values
    h2 = np.minimum(h1 + H, height_from_config(g, window.lo, off).values)
    eta2 = np.empty(window.size, dtype=np.int8)
    # h2 one site left of the window, from the same minimum
    eta2[0] = min(H + p1.occupancy[0], off + g.occupancy[0]) - h2[0]
    eta2[1:] = -np.diff(h2)
    return p1, ParticleConfig(window, eta2), H, h1, h2


def check_monotonicity_asep(trials: int = 1000, T: float = 50.0, size: int = 2000, seed: int = 0,
                            q: float = 0.5, negative_control: bool = False) -> TestReport:
    """``h1 + H >= h2`` at time 0 implies it at every site and event time.

    Both heights are compared at the moved bond after every jump.  With
    ``negative_control`` the two systems use different clocks and identical
    initial data, which must produce violations.
    """
    win = Window(-size // 2, size - size // 2 - 1)
    failures = 0
    total_viol = 0
    for i in range(trials):
        s = derive_seed(seed, i)
        p1, p2, H, h1, h2 = random_ordered_pair(win, s)
        if np.any(h1 + H < h2):
            raise ValueError("initial pair is not ordered")
        if negative_control:
            a = asep.evolve([p1], asep.ClockStream(s, q, T), T, heights=[height_from_config(p1, win.lo, 0)])
            b = asep.evolve([p1], asep.ClockStream(derive_seed(s, 0x5EED), q, T), T,
                            heights=[height_from_config(p1, win.lo, 0)])
            v = int(np.sum(a.height(0).values < b.height(0).values))
        else:
            res = asep.evolve([p1, p2], asep.ClockStream(s, q, T), T,
                              heights=[HeightFunction(win, h1), HeightFunction(win, h2)],
                              monitors=[(0, 1, H)])
            v = int(res.monitor_violations[0]) + int(np.sum(res.height(0).values + H < res.height(1).values))
        total_viol += v
        failures += v > 0
    name = "monotonicity_asep_negative_control" if negative_control else "monotonicity_asep"
    passed = failures > 0 if negative_control else failures == 0
    bound = "violations expected" if negative_control else "zero violations"
    return TestReport(name, trials, failures, passed, bound,
                      statistics={"violations": total_viol, "T": T, "window": size, "q": q},
                      seeds=_seeds(seed, trials))


def check_monotonicity_s6v(N: int = 500, M: int | None = None, t: int | None = None, trials: int = 200,
                           seed: int = 0, q: float = 0.5, b: float = 0.5, ceiling: float = 0.05) -> TestReport:
    """Frequency of ``min_{|x| <= N} (h1 + H - h2) < -M`` after ``t`` columns."""
    if M is None:
        M = math.ceil(math.log(N) ** 2)
    if t is None:
        t = int(math.floor((1.0 - b) * N / 2))
    if not t <= (1.0 - b) * N / 2 + 1e-9:
        raise ValueError("need t <= (1 - b) N / 2")
    if not math.log(N) ** 2 <= M <= N:
        raise ValueError("need (log N)^2 <= M <= N")
    win = Window(-2 * N, N)
    failures = 0
    worst = []
    for i in range(trials):
        s = derive_seed(seed, i)
        p1, p2, H, h1, h2 = random_ordered_pair(win, s)
        res = s6v.evolve([p1, p2], s6v.VertexNoiseField(s, q, b), t,
                         heights=[HeightFunction(win, h1), HeightFunction(win, h2)])
        d = res.height(0).values + H - res.height(1).values
        core = d[win.index(-N):win.index(N) + 1]
        worst.append(int(core.min()))
        failures += core.min() < -M
    freq = failures / trials
    return TestReport("monotonicity_s6v", trials, failures, freq <= ceiling, f"failure frequency <= {ceiling}",
                      statistics={"N": N, "M": M, "t": t, "frequency": freq, "min_discrepancy": min(worst)},
                      seeds=_seeds(seed, trials))


# ---------------------------------------------------------------------------
# variational inequality


def evolve_ic(coeffs: ScalingCoeffs, eps: float, t: float, spec: IcSpec, lo: int, hi: int, xs: np.ndarray,
                  seed: int) -> tuple[np.ndarray, np.ndarray, Window]:
    """Initial heights on ``[lo, hi]`` and evolved heights at ``xs`` under the noise of ``seed``."""
    m_t = model_time(coeffs, eps, t)
    if coeffs.model == "asep":
        B = asep.asep_buffer(coeffs.q, float(m_t))
        win = Window(lo - B, hi + B)
        ic = make_ic(spec, coeffs, win, eps)
        clocks = asep.ClockStream(seed, coeffs.q, max(float(m_t), 1e-9))
        if m_t <= 0:
            h = ic.height
        else:
            h = asep.evolve_with_sentinel(ic.config, Window(lo, hi), clocks, float(m_t), heights=ic.height).height(0)
    else:
        B = s6v.s6v_window(int(m_t), coeffs.b_right)
        win = Window(lo - B, hi + 1)
        ic = make_ic(spec, coeffs, win, eps)
        noise = s6v.VertexNoiseField(seed, coeffs.q, coeffs.b_right)
        h = s6v.evolve([ic.config], noise, int(m_t), heights=[ic.height]).height(0) if m_t > 0 else ic.height
    return ic.height.values, h.values[xs - win.lo], win


def check_variational(coeffs: ScalingCoeffs, eps: float, t: float, spec: IcSpec, replicas: int = 100,
                      seed: int = 0, I: float = 1.0, J: float | None = None, y_stride: int = 1,
                      sheet_seed: int | None = None, ceiling: float = 0.05) -> TestReport:
    """Compare ``h(h0; X)`` with ``h0(Y) + h(Y; X)`` under shared noise.

    ASEP: ``h(h0; X) <= min_Y (h0(Y) + h(Y; X))`` exactly, at every aligned
    ``X`` with rescaled position in ``[-I, I]``.  S6V: ``h(h0; X) >=
    max_Y (h0(Y) + h(Y; X)) - eps^(-1/6)``, the integer form of the slack
    ``sigma^-1 eps^(1/6)``.  ``Y`` runs over every ``y_stride``-th site with
    rescaled position in ``[-J, J]``.
    """
    if sheet_seed is not None and sheet_seed != seed:
        raise ValueError("the sheet and the initial condition must share their noise")
    if J is None:
        J = I + 2.0
    sc = scale_factor(coeffs, eps)
    X = aligned_grid(coeffs, eps, t, -I, I)
    xs = np.round(site_of(coeffs, eps, t, X)).astype(np.int64)
    ys = np.arange(int(math.ceil(-J * sc)), int(math.floor(J * sc)) + 1, y_stride, dtype=np.int64)
    if spec.kind == "step" and spec.y not in ys:
        ys = np.union1d(ys, [spec.y])
    slack = 0 if coeffs.model == "asep" else eps ** (-1.0 / 6.0)
    lo, hi = int(min(xs.min(), ys.min())), int(max(xs.max(), ys.max()))
    failures = 0
    bad_points = 0
    worst = -math.inf
    for i in range(replicas):
        s = derive_seed(seed, i)
        ic_spec = replace(spec, seed=s)
        h0_vals, hx, win = evolve_ic(coeffs, eps, t, ic_spec, lo, hi, xs, s)
        raw, _ = evolve_steps(coeffs, eps, 0.0, t, ys, xs, s)
        h0_y = h0_vals[ys - win.lo]
        rhs = h0_y[:, None] + raw
        if coeffs.model == "asep":
            excess = hx - rhs.min(axis=0)
        else:
            excess = rhs.max(axis=0) - slack - hx
        worst = max(worst, float(excess.max()))
        nbad = int(np.sum(excess > 1e-9))
        bad_points += nbad
        failures += nbad > 0
    freq = failures / replicas
    if coeffs.model == "asep":
        passed, bound = failures == 0, "zero violations (exact inequality)"
    else:
        passed, bound = freq <= ceiling, f"violation frequency <= {ceiling} with slack eps^(-1/6) = {slack:.4g}"
    return TestReport(
        f"variational_{coeffs.model}_{spec.kind}", replicas, failures, passed, bound,
        statistics={"eps": eps, "t": t, "grid_points": len(xs), "y_sites": len(ys), "violating_points": bad_points,
                    "max_excess": worst, "frequency": freq},
        seeds=_seeds(seed, replicas),
    )


# ---------------------------------------------------------------------------
# stationarity


def pattern_counts(occ: np.ndarray, length: int) -> np.ndarray:
    """Counts of the ``2**length`` patterns over disjoint blocks, indexed by binary value."""
    n = (len(occ) // length) * length
    blocks = occ[:n].reshape(-1, length).astype(np.int64)
    codes = blocks @ (1 << np.arange(length - 1, -1, -1))
    return np.bincount(codes, minlength=2**length)


def check_stationarity(model: str, rho: float, t: float, pattern_len: int = 3, sites: int = 10**6,
                       seed: int = 0, q: float = 0.5, b: float = 0.5, alpha: float = 0.01,
                       core: int = 2**16) -> TestReport:
    """Chi-square test of local patterns at time ``t`` against the Bernoulli(rho) product law.

    Each pattern's count is tested on one degree of freedom at level
    ``alpha / 2**pattern_len``; the omnibus statistic is reported alongside.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    replicas = math.ceil(sites / core)
    n_blocks = replicas * (core // pattern_len)
    k = np.array([bin(c).count("1") for c in range(2**pattern_len)])
    p = rho**k * (1.0 - rho) ** (pattern_len - k)
    if n_blocks * p.min() < 5:
        raise ValueError("expected cell count below 5; use more sites")
    counts = np.zeros(2**pattern_len, dtype=np.int64)
    for i in range(replicas):
        s = derive_seed(seed, i)
        if model == "asep":
            B = asep.asep_buffer(q, t)
            win = Window(-B, core + B - 1)
            cfg = ParticleConfig(win, bernoulli_field(s, CH_IC, win.lo, win.size, rho))
            out = asep.evolve([cfg], asep.ClockStream(s, q, max(t, 1e-9)), t).configs[0] if t > 0 else cfg.as_colored()
        elif model == "s6v":
            B = s6v.s6v_window(int(t), b)
            win = Window(-B, core - 1)
            cfg = ParticleConfig(win, bernoulli_field(s, CH_IC, win.lo, win.size, rho))
            out = s6v.evolve([cfg], s6v.VertexNoiseField(s, q, b), int(t)).configs[0]
        else:
            raise ValueError(f"unknown model {model!r}")
        occ = (out.colors[win.index(0):win.index(core - 1) + 1] != HOLE).astype(np.int8)
        counts += pattern_counts(occ, pattern_len)
    expected = n_blocks * p
    per = (counts - expected) ** 2 / (expected * (1.0 - p))
    pvals = stats.chi2.sf(per, 1)
    level = alpha / 2**pattern_len
    failures = int(np.sum(pvals < level))
    omni = float(np.sum((counts - expected) ** 2 / expected))
    return TestReport(
        f"stationarity_{model}_rho{rho:g}", 2**pattern_len, failures, failures == 0,
        f"per-pattern chi-square p >= {alpha}/{2**pattern_len}",
        statistics={"t": t, "sites": replicas * core, "blocks": n_blocks, "counts": counts, "expected": expected,
                    "p_values": pvals, "omnibus_chi2": omni,
                    "omnibus_p": float(stats.chi2.sf(omni, 2**pattern_len - 1))},
        seeds=_seeds(seed, replicas),
    )


# ---------------------------------------------------------------------------
# overtaking


def overtaking_counts(model: str, q: float, t_values: Sequence[float], trials: int, seed: int, b: float = 0.5,
                      n_second: int = 10) -> np.ndarray:
    """``L_t`` for each trial and time: color-2 particles that overtook the color-1 particle.

    ASEP: the color-1 particle starts left of ``n_second`` color-2 particles
    and ``L_t`` counts color-2 particles to its left.  S6V: the arrangement
    and the count are mirrored (color 1 above, color-2 particles counted
    above it), the orientation in which the geometric bound holds for these
    vertex weights.
    """
    out = np.zeros((trials, len(t_values)), dtype=np.int64)
    ts = list(t_values)
    for i in range(trials):
        s = derive_seed(seed, i)
        if model == "asep":
            sites = np.arange(n_second + 1)
            cols = np.array([1] + [2] * n_second)
            clocks = asep.ClockStream(s, q, float(max(ts)))
        else:
            sites = np.arange(n_second + 1)
            cols = np.array([2] * n_second + [1])
            noise = s6v.VertexNoiseField(s, q, b)
        prev = 0
        for j, t in enumerate(ts):
            if model == "asep":
                sites, cols = asep.evolve_particles(sites, cols, clocks, float(t), since=float(prev))
                p1 = sites[cols == 1][0]
                out[i, j] = np.sum((cols == 2) & (sites < p1))
            else:
                sites, cols = s6v.evolve_particles(sites, cols, noise, int(t), since=int(prev))
                p1 = sites[cols == 1][0]
                out[i, j] = np.sum((cols == 2) & (sites > p1))
            prev = t
    return out


def check_overtaking(model: str, q: float, k_max: int = 10, t_values: Sequence[float] = (10, 100, 1000),
                     trials: int = 10**4, seed: int = 0, b: float = 0.5) -> TestReport:
    """Empirical ``P(L_t >= k) <= q^k + 3 stderr`` for ``k = 1..k_max`` at each time."""
    L = overtaking_counts(model, q, t_values, trials, seed, b=b, n_second=k_max)
    failures = 0
    table = []
    for j, t in enumerate(t_values):
        for k in range(1, k_max + 1):
            emp = float(np.mean(L[:, j] >= k))
            bound = q**k
            ok = emp <= bound + 3.0 * binomial_stderr(bound, trials) if q > 0 else emp == 0.0
            failures += not ok
            table.append({"t": t, "k": k, "empirical": emp, "bound": bound})
    n = len(t_values) * k_max
    return TestReport(f"overtaking_{model}_q{q:g}", n, failures, failures == 0, "P(L_t >= k) <= q^k + 3 stderr",
                      statistics={"table": table, "max_L": int(L.max())}, seeds=_seeds(seed, trials))


# ---------------------------------------------------------------------------
# finite speed


def check_finite_speed(model: str, eps: float = 0.1, trials: int = 1000, seed: int = 0, q: float = 0.5,
                       b: float = 0.5, colors: int = 3, span: int = 200) -> TestReport:
    """The rightmost particle of each color moves at most ``eps^-2`` within ``floor(1/eps)``."""
    T = int(math.floor(1.0 / eps))
    bound = eps**-2.0
    reach = int(math.ceil(bound)) + span
    win = Window(-span - reach, reach)
    failures = 0
    worst = 0
    for i in range(trials):
        s = derive_seed(seed, i)
        rng = np.random.default_rng(s)
        sites = win.sites()
        occ = (sites <= 0) & (sites > -span) & (rng.random(win.size) < 0.5)
        cols = np.where(occ, rng.integers(1, colors + 1, win.size), HOLE).astype(np.int32)
        cfg = ColoredConfig(win, cols)
        if model == "asep":
            out = asep.evolve([cfg], asep.ClockStream(s, q, float(T)), float(T)).configs[0]
        else:
            out = s6v.evolve([cfg], s6v.VertexNoiseField(s, q, b), T).configs[0]
        bad = False
        for c in range(1, colors + 1):
            before = sites[cols == c]
            after = sites[out.colors == c]
            if len(before) == 0:
                continue
            d = abs(int(after.max()) - int(before.max()))
            worst = max(worst, d)
            bad |= d > bound
        failures += bad
    return TestReport(f"finite_speed_{model}", trials, failures, failures == 0, f"displacement <= eps^-2 = {bound:g}",
                      statistics={"eps": eps, "time": T, "max_displacement": worst}, seeds=_seeds(seed, trials))


# ---------------------------------------------------------------------------
# flux identity


def colored_paste_run(coeffs: ScalingCoeffs, eps: float, M: float, K: float, lam: float, seed: int,
                      records: int = 8) -> list[tuple[float, int, int]]:
    """Evolve the refined coloring of a pasted configuration and record the flux bookkeeping.

    Returns ``(time, #{x > x0: color 2}, h_{>=2}(x0) - h_{>=3}(x0))`` at
    ``records`` equally spaced times up to ``floor(1/eps)``, where ``x0 =
    -K floor(eps^-2/3)`` and the heights are anchored so the two sides
    agree at time 0.
    """
    unit = unit_length(eps)
    m = int(math.floor(M * unit))
    x0 = -int(math.floor(K * unit))
    T = int(math.floor(1.0 / eps))
    if coeffs.model == "asep":
        B = asep.asep_buffer(coeffs.q, float(T))
        win = Window(-m - B, m + B)
    else:
        B = s6v.s6v_window(T, coeffs.b_right)
        win = Window(-m - B, m + B)
    eta = make_ic(IcSpec("v_paste", lam=lam, M=M, seed=seed, eps=eps), coeffs, win).config
    xi, _ = auxiliary_configuration(eta, coeffs, lam, M, eps, derive_seed(seed, 1))
    colored, _ = refined_coloring(eta, xi, M, eps, derive_seed(seed, 2))
    c2 = int(np.sum((colored.colors == 2) & (win.sites() > x0)))
    h = colored_heights_from_config(colored, (2, 3), x0, (c2, 0))
    out = []
    cfg = colored
    prev = 0
    i0 = win.index(x0)
    for r in range(records + 1):
        t = T * r / records if coeffs.model == "asep" else (T * r) // records
        if t > prev:
            if coeffs.model == "asep":
                res = asep.evolve([cfg], asep.ClockStream(seed, coeffs.q, float(T)), float(t), heights=[h], since=float(prev))
            else:
                res = s6v.evolve([cfg], s6v.VertexNoiseField(seed, coeffs.q, coeffs.b_right), int(t), heights=[h],
                                 since=int(prev))
            cfg, h = res.configs[0], res.heights[0]
            prev = t
        count = int(np.sum((cfg.colors == 2) & (win.sites() > x0)))
        out.append((float(t), count, int(h.values[0, i0] - h.values[1, i0])))
    return out


def check_flux_identity(coeffs: ScalingCoeffs, eps: float = 1 / 64, M: float = 4.0, K: float = 1.0,
                        lam: float = 0.5, replicas: int = 100, seed: int = 0, records: int = 8) -> TestReport:
    """Exact equality of the color-2 count right of ``x0`` and the height difference at ``x0``."""
    failures = 0
    mism = 0
    total2 = 0
    for i in range(replicas):
        rows = colored_paste_run(coeffs, eps, M, K, lam, derive_seed(seed, i), records)
        bad = sum(c != d for _, c, d in rows)
        mism += bad
        failures += bad > 0
        total2 += rows[-1][1]
    return TestReport(f"flux_identity_{coeffs.model}", replicas, failures, failures == 0, "exact equality",
                      statistics={"mismatched_records": mism, "records_per_replica": records + 1,
                                  "final_color2_right_total": total2},
                      seeds=_seeds(seed, replicas))


# ---------------------------------------------------------------------------
# color merging


def check_merge_projection(model: str, instances: int = 100, seed: int = 0, size: int = 30,
                           max_color: int = 6) -> TestReport:
    """Evolve-then-merge equals merge-then-evolve under shared noise."""
    win = Window(0, size - 1)
    failures = 0
    for i in range(instances):
        s = derive_seed(seed, i)
        rng = np.random.default_rng(s)
        cols = np.where(rng.random(size) < 0.6, rng.integers(1, max_color + 1, size), HOLE).astype(np.int32)
        cfg = ColoredConfig(win, cols)
        cuts = sorted(set(rng.integers(2, max_color + 1, rng.integers(0, 4)).tolist()))
        edges = [1] + cuts + [max_color + 1]
        part = [(a, b - 1) for a, b in zip(edges, edges[1:])]
        q = float(rng.uniform(0.0, 0.9))
        if model == "asep":
            clocks = asep.ClockStream(s, q, 5.0)
            run = lambda c: asep.evolve([c], clocks, 5.0).configs[0]  # noqa: E731
        else:
            noise = s6v.VertexNoiseField(s, q, float(rng.uniform(0.1, 0.9)))
            run = lambda c: s6v.evolve([c], noise, 10).configs[0]  # noqa: E731
        a = merge_colors(run(cfg), part)
        b = run(merge_colors(cfg, part))
        failures += not np.array_equal(a.colors, b.colors)
    return TestReport(f"merge_projection_{model}", instances, failures, failures == 0, "exact equality",
                      seeds=_seeds(seed, instances))


# ---------------------------------------------------------------------------
# random walk above a line


def rw_above_line_exact(lam: float | Fraction, rho: float | Fraction, M: float | Fraction, T: int) -> Fraction:
    """``P(S(t) >= rho t - M for t = 0..T)`` for steps ``-1`` w.p. ``|lam|`` and ``0`` otherwise.

    Exact dynamic programming over the walk's value; decimal inputs are read
    as the decimals they print as.
    """
    lam, rho, M = (Fraction(repr(v)) if isinstance(v, float) else Fraction(v) for v in (lam, rho, M))
    p = -lam
    dist = {0: Fraction(1)} if 0 >= -M else {}
    for t in range(1, T + 1):
        floor_t = rho * t - M
        new: dict[int, Fraction] = {}
        for s, w in dist.items():
            for s2, pw in ((s, 1 - p), (s - 1, p)):
                if s2 >= floor_t and pw:
                    new[s2] = new.get(s2, Fraction(0)) + w * pw
        dist = new
    return sum(dist.values(), Fraction(0))


def rw_above_line_mc(lam: float, rho: float, M: float, T: int, walks: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    steps = -(rng.random((walks, T)) < -lam).astype(np.int64)
    S = np.cumsum(steps, axis=1)
    line = rho * np.arange(1, T + 1) - M
    return float(np.mean(np.all(S >= line[None, :], axis=1)))


def check_rw_above_line(lams: Sequence[float] = (-0.2, -0.5, -0.8), gaps: Sequence[float] = (0.05, 0.1, 0.15),
                        Ms: Sequence[float] = (0.0, 2.0, 5.0), T: int = 100, walks: int = 10**5,
                        seed: int = 0) -> TestReport:
    """Exact DP against Monte Carlo on a grid of ``(lam, rho = lam - gap, M)``.

    Also checks that the exact probability does not decrease in ``M``.
    """
    failures = 0
    rows = []
    k = 0
    for lam in lams:
        for gap in gaps:
            rho = round(lam - gap, 12)
            if not -1.0 < rho < lam < 0.0:
                raise ValueError("need -1 < rho < lam < 0")
            prev = None
            for M in Ms:
                exact = rw_above_line_exact(lam, rho, M, T)
                mc = rw_above_line_mc(lam, rho, M, T, walks, derive_seed(seed, k))
                k += 1
                pe = float(exact)
                ok = abs(mc - pe) <= 3.0 * binomial_stderr(pe, walks)
                if pe in (0.0, 1.0):
                    ok = mc == pe
                mono = prev is None or exact >= prev
                prev = exact
                failures += (not ok) + (not mono)
                rows.append({"lambda": lam, "rho": rho, "M": M, "exact": pe, "mc": mc, "monotone_in_M": mono})
    hand = rw_above_line_exact(Fraction(-1, 2), Fraction(-3, 5), 0, 2)
    failures += hand != Fraction(1, 2)
    n = 2 * len(rows) + 1
    return TestReport("rw_above_line", n, failures, failures == 0, "|MC - DP| <= 3 stderr; DP nondecreasing in M",
                      statistics={"grid": rows, "hand_case": str(hand), "T": T, "walks": walks},
                      seeds=_seeds(seed, k))


# ---------------------------------------------------------------------------
# localization of the maximizer


def check_argmax_localization(coeffs: ScalingCoeffs, eps: float, t: float, spec: IcSpec, x_points: Sequence[float],
                              M_grid: Sequence[float], R: float | None = None, replicas: int = 20, seed: int = 0,
                              delta: float = 0.0, rho_level: float = 0.05, y_stride: int = 1) -> TestReport:
    """How often the discrete sup over ``|y| <= R`` is attained within ``|y| <= M`` (up to ``delta``).

    This is the finite-eps analog with the sheet in place of the limiting
    landscape.  Passes if the saturation frequency is nondecreasing in ``M``
    and exceeds ``1 - rho_level`` at the largest ``M``.
    """
    M_grid = sorted(M_grid)
    if R is None:
        R = 2.0 * M_grid[-1]
    if R < M_grid[-1]:
        raise ValueError("the sheet must cover [-max(M), max(M)]")
    y_grid = aligned_grid(coeffs, eps, 0.0, -R, R, y_stride)
    x_points = np.asarray(x_points, dtype=np.float64)
    sc = scale_factor(coeffs, eps)
    lo, hi = int(math.floor(-R * sc)) - 2, int(math.ceil(R * sc)) + 2
    hits = np.zeros(len(M_grid), dtype=np.int64)
    n = 0
    for i in range(replicas):
        s = derive_seed(seed, i)
        ic = make_ic(replace(spec, seed=s), coeffs, Window(lo, hi), eps)
        f0 = rescale_initial(ic.height, coeffs, eps)(y_grid)
        sheet = build_sheet(coeffs, eps, 0.0, t, y_grid, x_points, s)
        vals = f0[:, None] + sheet.rescaled
        full = vals.max(axis=0)
        for k, M in enumerate(M_grid):
            sel = np.abs(y_grid) <= M + 1e-9
            hits[k] += int(np.sum(vals[sel].max(axis=0) >= full - delta - 1e-12))
        n += len(x_points)
    freq = hits / n
    mono = bool(np.all(np.diff(freq) >= 0))
    passed = mono and freq[-1] >= 1.0 - rho_level
    return TestReport("argmax_localization", n, int(n - hits[-1]), passed,
                      f"nondecreasing in M and >= {1 - rho_level} at M = {M_grid[-1]}",
                      statistics={"M": M_grid, "frequency": freq, "R": R, "delta": delta},
                      seeds=_seeds(seed, replicas), note="finite-eps analog of the maximizer localization")


# ---------------------------------------------------------------------------
# universality trend


def one_point_samples(coeffs: ScalingCoeffs, eps: float, replicas: int, seed: int, t: float = 1.0,
                      offset: int = 0) -> np.ndarray:
    """Rescaled step-initial heights at position 0 and time ``t``; replica ``i`` uses ``derive_seed(seed, offset + i)``."""
    return np.array([build_sheet(coeffs, eps, 0.0, t, [0.0], [0.0], derive_seed(seed, offset + i)).rescaled[0, 0]
                     for i in range(replicas)])


def check_universality_trend(coeffs_a: ScalingCoeffs, coeffs_b: ScalingCoeffs, eps_coarse: float = 1 / 32,
                             eps_fine: float = 1 / 128, replicas: int = 2000, batches: int = 3, seed: int = 0,
                             ks_max: float = 0.08) -> TestReport:
    """The two models' one-point laws approach each other as eps decreases.

    In every batch the KS distance between the models must be smaller at
    ``eps_fine`` than at ``eps_coarse`` and below ``ks_max`` at ``eps_fine``.
    """
    rows = []
    failures = 0
    for k in range(batches):
        off = k * replicas
        ks = {}
        for eps in (eps_coarse, eps_fine):
            a = one_point_samples(coeffs_a, eps, replicas, seed, offset=off)
            b = one_point_samples(coeffs_b, eps, replicas, seed, offset=off)
            ks[eps] = ks_distance(a, b)
            rows.append({"batch": k, "eps": eps, "ks": ks[eps], "mean_a": float(a.mean()), "mean_b": float(b.mean()),
                         "sd_a": float(a.std()), "sd_b": float(b.std())})
        failures += not (ks[eps_coarse] > ks[eps_fine] and ks[eps_fine] < ks_max)
    # rescaled heights live on lattices of these spacings, which bounds how small KS can get
    spacing = {f"{c.model}_eps{eps:g}": eps ** (1.0 / 3.0) / c.sigma
               for c in (coeffs_a, coeffs_b) for eps in (eps_coarse, eps_fine)}
    return TestReport("universality_trend", batches, failures, failures == 0,
                      f"KS(coarse) > KS(fine) and KS(fine) < {ks_max} in every batch",
                      statistics={"rows": rows, "replicas": replicas, "lattice_spacing": spacing},
                      seeds=_seeds(seed, batches * replicas))
