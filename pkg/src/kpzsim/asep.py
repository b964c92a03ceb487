"""ASEP under the graphical construction.

Every site carries two Poisson clocks, one for right jumps (rate 1) and one
for left jumps (rate q).  Clock rings are generated in unit time blocks: the
number of rings of a clock in block ``k`` is Poisson, their positions are
sorted uniforms, and all of it is addressed by ``(seed, site, block)``.  The
rings at a site are therefore a pure function of the seed and the site, and
any collection of configurations evolved with the same seed is coupled by the
basic coupling.

Colors are stored as ranks inside the kernels: 0 is a hole and larger ranks
are higher colors.  An uncolored configuration is the special case with a
single rank.  A jump succeeds iff the target rank is strictly lower; the two
occupants then swap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba as nb
import numpy as np

from .lattice import (
    HOLE,
    ColoredConfig,
    ColoredHeightFunction,
    HeightFunction,
    ParticleConfig,
    Window,
    WindowTooSmall,
    color_ranks,
    cut_rank,
    from_ranks,
    height_from_config,
    to_ranks,
)
from .noise import CH_CLOCKS, uniforms4

RIGHT = 0
LEFT = 1
_CAP = 64  # rings per site per unit block; Poisson(2) exceeds this with prob ~1e-70
_E1 = math.exp(-1.0)


@nb.njit(cache=True)
def _poisson_inverse(u, lam, p0):
    """Poisson(lam) by inversion; ``p0`` is exp(-lam)."""
    p = p0
    cdf = p
    k = 0
    while u >= cdf and p > 0.0:
        k += 1
        p *= lam / k
        cdf += p
    return k


@nb.njit(cache=True)
def _block_events(seed, site, q, eq, block, times, dirs):
    """Rings of both clocks of ``site`` in ``[block, block+1)``.

    One Philox call gives the two Poisson counts and the first two offsets;
    further calls supply four offsets each.  Output is sorted by time, with
    right before left on (measure-zero) ties.  Returns the number of rings.
    """
    u0, u1, u2, u3 = uniforms4(seed, CH_CLOCKS, site, block, 0)
    n_r = _poisson_inverse(u0, 1.0, _E1)
    n_l = _poisson_inverse(u1, q, eq) if q > 0.0 else 0
    n = n_r + n_l
    if n > _CAP:
        n = _CAP
        n_r = min(n_r, _CAP)
    if n == 0:
        return 0
    times[0] = u2
    if n > 1:
        times[1] = u3
    k = 2
    sub = 1
    while k < n:
        v0, v1, v2, v3 = uniforms4(seed, CH_CLOCKS, site, block, sub)
        sub += 1
        times[k] = v0
        if k + 1 < n:
            times[k + 1] = v1
        if k + 2 < n:
            times[k + 2] = v2
        if k + 3 < n:
            times[k + 3] = v3
        k += 4
    for i in range(n):
        dirs[i] = 0 if i < n_r else 1
    # sort the right rings and the left rings separately, then merge
    for lo_i, hi_i in ((0, n_r), (n_r, n)):
        for i in range(lo_i + 1, hi_i):
            v = times[i]
            j = i - 1
            while j >= lo_i and times[j] > v:
                times[j + 1] = times[j]
                j -= 1
            times[j + 1] = v
    if n_r > 0 and n_l > 0:
        for i in range(1, n):
            v = times[i]
            dv = dirs[i]
            j = i - 1
            while j >= 0 and (times[j] > v or (times[j] == v and dirs[j] > dv)):
                times[j + 1] = times[j]
                dirs[j + 1] = dirs[j]
                j -= 1
            times[j + 1] = v
            dirs[j + 1] = dv
    for i in range(n):
        times[i] += block
    return n


@nb.njit(cache=True)
def _site_rings(seed, site, q, direction, t_lo, t_hi):
    """Ring times of one clock of ``site`` in ``(t_lo, t_hi]``."""
    times = np.empty(_CAP)
    dirs = np.empty(_CAP, np.int64)
    eq = math.exp(-q)
    res = np.empty(16)
    m = 0
    for blk in range(int(math.floor(t_lo)), int(math.ceil(t_hi))):
        n = _block_events(seed, site, q, eq, blk, times, dirs)
        for i in range(n):
            t = times[i]
            if dirs[i] == direction and t > t_lo and t <= t_hi:
                if m == res.shape[0]:
                    bigger = np.empty(2 * m)
                    bigger[:m] = res
                    res = bigger
                res[m] = t
                m += 1
    return res[:m]


@dataclass(frozen=True)
class ClockStream:
    """Poisson clocks of every site, determined by ``(seed, q)``.

    ``horizon`` bounds the times that may be requested.  Events are computed
    on demand, so a stream covers the whole lattice.
    """

    seed: int
    q: float
    horizon: float

    @property
    def rate_right(self) -> float:
        return 1.0

    @property
    def rate_left(self) -> float:
        return self.q

    def rings(self, site: int, direction: int, t_lo: float = 0.0, t_hi: float | None = None) -> np.ndarray:
        t_hi = self.horizon if t_hi is None else t_hi
        return _site_rings(np.uint64(self.seed), site, self.q, direction, t_lo, t_hi)

    def events(self, site: int, t_lo: float = 0.0, t_hi: float | None = None) -> list[tuple[float, int]]:
        """Sorted ``(time, direction)`` pairs at ``site`` in ``(t_lo, t_hi]``."""
        ev = [(float(t), RIGHT) for t in self.rings(site, RIGHT, t_lo, t_hi)]
        ev += [(float(t), LEFT) for t in self.rings(site, LEFT, t_lo, t_hi)]
        ev.sort()
        return ev


@dataclass(frozen=True)
class MaterializedClocks:
    stream: ClockStream
    window: Window
    per_site: dict[int, list[tuple[float, int]]]


def build_clock_stream(seed: int, q: float, window: Window, horizon: float) -> MaterializedClocks:
    """Event lists of every site of ``window`` on ``(0, horizon]``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0, 1)")
    stream = ClockStream(int(seed), float(q), float(horizon))
    per_site = {int(x): stream.events(int(x)) for x in window.sites()}
    return MaterializedClocks(stream, window, per_site)


# ---------------------------------------------------------------------------
# dense kernel


@nb.njit(cache=True)
def _color_at(ranks, c, idx, n, fl, fr):
    if idx < 0:
        return fl[c]
    if idx >= n:
        return fr[c]
    return ranks[c, idx]


@nb.njit(cache=True)
def _active_bounds(ranks, fl, fr):
    """Smallest and largest bond ``k`` (between k and k+1) that can move."""
    n_cfg, n = ranks.shape
    a = n
    b = -2
    for k in range(-1, n):
        for c in range(n_cfg):
            if _color_at(ranks, c, k, n, fl, fr) != _color_at(ranks, c, k + 1, n, fl, fr):
                if k < a:
                    a = k
                b = k
                break
    return a, b


@nb.njit(cache=True)
def _heights_at(D, h0, c, x, cut):
    s = h0[c, x]
    for k in range(cut + 1):
        s += D[c, x, k]
    return s


@nb.njit(cache=True)
def _bucket_order(t, m, blk):
    """Stable argsort of ``t[:m]``, all of which lie in ``[blk, blk + 1]``."""
    nb_ = max(m, 1)
    count = np.zeros(nb_ + 1, np.int64)
    key = np.empty(m, np.int64)
    for i in range(m):
        k = min(int((t[i] - blk) * nb_), nb_ - 1)
        key[i] = k
        count[k + 1] += 1
    for k in range(nb_):
        count[k + 1] += count[k]
    order = np.empty(m, np.int64)
    for i in range(m):
        order[count[key[i]]] = i
        count[key[i]] += 1
    # buckets hold about one entry each; insertion sort finishes the job
    for i in range(1, m):
        e = order[i]
        v = t[e]
        j = i - 1
        while j >= 0 and t[order[j]] > v:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = e
    return order


@nb.njit(cache=True)
def _asep_kernel(ranks, lo, seed, q, t_from, t_to, starts, fl, fr, D, h0, monitors, mon_viol, edge_hits, margin0):
    n_cfg, n = ranks.shape
    n_mon = monitors.shape[0]
    buf = np.empty(_CAP)
    bdir = np.empty(_CAP, np.int64)
    eq = math.exp(-q)
    cap = 1024
    ev_t = np.empty(cap)
    ev_s = np.empty(cap, np.int64)
    ev_d = np.empty(cap, np.int64)
    log = np.empty((256, 5), np.int64)
    b_lo = int(math.floor(t_from))
    b_hi = int(math.ceil(t_to))
    act_lo, act_hi = _active_bounds(ranks, fl, fr)
    for blk in range(b_lo, b_hi):
        if act_hi < act_lo:
            break
        margin = margin0
        while True:
            g_lo = max(act_lo - margin, -1)
            g_hi = min(act_hi + 1 + margin, n)
            saved_bounds = (act_lo, act_hi)
            m = 0
            for idx in range(g_lo, g_hi + 1):
                k = _block_events(seed, lo + idx, q, eq, blk, buf, bdir)
                for i in range(k):
                    t = buf[i]
                    d = bdir[i]
                    if t <= t_from or t > t_to:
                        continue
                    if m == cap:
                        cap *= 2
                        a = np.empty(cap)
                        a[:m] = ev_t[:m]
                        ev_t = a
                        b = np.empty(cap, np.int64)
                        b[:m] = ev_s[:m]
                        ev_s = b
                        e = np.empty(cap, np.int64)
                        e[:m] = ev_d[:m]
                        ev_d = e
                    ev_t[m] = t
                    ev_s[m] = idx
                    ev_d[m] = d
                    m += 1
            order = _bucket_order(ev_t, m, blk)
            saved = ranks.copy()
            saved_hits = edge_hits.copy()
            saved_viol = mon_viol.copy()
            n_log = 0
            escaped = False
            for oi in range(m):
                e_i = order[oi]
                t = ev_t[e_i]
                src = ev_s[e_i]
                d = ev_d[e_i]
                dst = src + 1 if d == 0 else src - 1
                if dst < -1 or dst > n:
                    continue
                src_out = src < 0 or src >= n
                dst_out = dst < 0 or dst >= n
                if src_out and dst_out:
                    continue
                moved = False
                bond = src if d == 0 else dst
                edge = src_out or dst_out
                for c in range(n_cfg):
                    if starts[c] >= t:
                        continue
                    if edge:
                        cs = _color_at(ranks, c, src, n, fl, fr)
                        cd = _color_at(ranks, c, dst, n, fl, fr)
                        if cs > cd:
                            edge_hits[c] += 1
                        continue
                    cs = ranks[c, src]
                    cd = ranks[c, dst]
                    if cs <= cd:
                        continue
                    ranks[c, src] = cd
                    ranks[c, dst] = cs
                    sgn = 1 if d == 0 else -1
                    D[c, bond, cd + 1] += sgn
                    D[c, bond, cs + 1] -= sgn
                    if n_log == log.shape[0]:
                        big = np.empty((2 * n_log, 5), np.int64)
                        big[:n_log] = log
                        log = big
                    log[n_log, 0] = c
                    log[n_log, 1] = bond
                    log[n_log, 2] = cd
                    log[n_log, 3] = cs
                    log[n_log, 4] = sgn
                    n_log += 1
                    moved = True
                    if bond - 1 < act_lo:
                        act_lo = bond - 1
                    if bond + 1 > act_hi:
                        act_hi = bond + 1
                    if bond - 1 < g_lo or bond + 2 > g_hi:
                        escaped = True
                # compare only once every configuration has seen this event
                if moved:
                    for mi in range(n_mon):
                        ha = _heights_at(D, h0, monitors[mi, 0], bond, 1)
                        hb = _heights_at(D, h0, monitors[mi, 1], bond, 1)
                        if ha + monitors[mi, 2] < hb:
                            mon_viol[mi] += 1
                if escaped:
                    break
            if not escaped:
                break
            ranks[:, :] = saved
            act_lo, act_hi = saved_bounds
            edge_hits[:] = saved_hits
            mon_viol[:] = saved_viol
            for li in range(n_log - 1, -1, -1):
                c = log[li, 0]
                bond = log[li, 1]
                D[c, bond, log[li, 2] + 1] -= log[li, 4]
                D[c, bond, log[li, 3] + 1] += log[li, 4]
            margin *= 2
    return 0


# ---------------------------------------------------------------------------
# public evolution


@dataclass
class AsepResult:
    """Evolved configurations and heights of the requested color cuts."""

    configs: list[ColoredConfig]
    heights: list[ColoredHeightFunction]
    edge_hits: np.ndarray
    monitor_violations: np.ndarray
    time: float

    def height(self, index: int, cut: int = 1) -> HeightFunction:
        return self.heights[index].cut(cut)


def _as_colored(c: ParticleConfig | ColoredConfig) -> ColoredConfig:
    return c.as_colored() if isinstance(c, ParticleConfig) else c


def _default_heights(cfg: ColoredConfig, cuts: Sequence[int]) -> ColoredHeightFunction:
    vals = [height_from_config(cfg.threshold(k), cfg.window.lo, 0).values for k in cuts]
    return ColoredHeightFunction(cfg.window, tuple(int(k) for k in cuts), np.array(vals).reshape(len(cuts), -1))


def evolve(
    initial: Sequence[ParticleConfig | ColoredConfig],
    clocks: ClockStream,
    until: float,
    start_times: Sequence[float] | None = None,
    heights: Sequence[HeightFunction | ColoredHeightFunction | None] | None = None,
    since: float = 0.0,
    strict_edges: bool | Sequence[bool] = False,
    monitors: Sequence[tuple[int, int, int]] = (),
    margin: int = 8,
) -> AsepResult:
    """Evolve configurations on a common window with shared clocks.

    Sites outside the window are frozen at each configuration's fill colors.
    A jump across the window edge is suppressed; it is counted in
    ``edge_hits`` and, for configurations with ``strict_edges``, raises
    :class:`WindowTooSmall`.  For a configuration whose fill colors are the
    true exterior this makes the finite evolution exact or loudly wrong.

    ``monitors`` lists ``(a, b, H)``: after every jump the heights of the
    uncolored configurations ``a`` and ``b`` are compared at the moved bond and
    each instance of ``h_a + H < h_b`` is counted.

    Heights are tracked for cuts given by ``heights`` (one entry per
    configuration) or, by default, for every color present, anchored at 0 at
    the window's left end.
    """
    cfgs = [_as_colored(c) for c in initial]
    if not cfgs:
        raise ValueError("no configurations given")
    win = cfgs[0].window
    for c in cfgs:
        if c.window != win:
            raise ValueError("all configurations must share the window")
    if until > clocks.horizon + 1e-12:
        raise ValueError("until exceeds the clock horizon")
    n_cfg = len(cfgs)
    starts = np.full(n_cfg, since, dtype=np.float64)
    if start_times is not None:
        starts = np.maximum(np.asarray(start_times, dtype=np.float64), since)
        if np.any(starts > until):
            raise ValueError("start times must not exceed until")
    if isinstance(strict_edges, bool):
        strict = [strict_edges] * n_cfg
    else:
        strict = list(strict_edges)

    palette = color_ranks([c.colors for c in cfgs], [c.fill_left for c in cfgs] + [c.fill_right for c in cfgs])
    K = len(palette)
    ranks = np.stack([to_ranks(c.colors, palette) for c in cfgs]).astype(np.int32)
    fl = np.array([to_ranks(np.array([c.fill_left], np.int32), palette)[0] for c in cfgs], np.int32)
    fr = np.array([to_ranks(np.array([c.fill_right], np.int32), palette)[0] for c in cfgs], np.int32)

    hs: list[ColoredHeightFunction] = []
    for i, c in enumerate(cfgs):
        h = None if heights is None else heights[i]
        if h is None:
            cuts = [int(v) for v in c.present_colors()] or [1]
            h = _default_heights(c, cuts)
        elif isinstance(h, HeightFunction):
            h = ColoredHeightFunction(h.window, (1,), h.values[None, :])
        hs.append(h)

    n = win.size
    D = np.zeros((n_cfg, n, K + 2), np.int64)
    h0 = np.zeros((n_cfg, n), np.int64)
    for i, h in enumerate(hs):
        if 1 in h.cuts:
            h0[i] = h.values[h.cuts.index(1)]
    mon = np.asarray(monitors, dtype=np.int64).reshape(-1, 3)
    for a, b, _ in mon:
        if K > 1 and (len(cfgs[a].present_colors()) > 1 or len(cfgs[b].present_colors()) > 1):
            raise ValueError("monitors apply to uncolored configurations")
    mon_viol = np.zeros(len(mon), np.int64)
    hits = np.zeros(n_cfg, np.int64)
    if K > 0 and until > since:
        _asep_kernel(
            ranks, int(win.lo), np.uint64(clocks.seed), float(clocks.q), float(since), float(until),
            starts, fl, fr, D, h0, mon, mon_viol, hits, int(margin),
        )
    for i in range(n_cfg):
        if strict[i] and hits[i] > 0:
            raise WindowTooSmall(
                f"configuration {i}: {hits[i]} jump(s) across the window edge [{win.lo}, {win.hi}]"
            )

    F = np.cumsum(D, axis=2)
    out_cfgs, out_h = [], []
    for i, c in enumerate(cfgs):
        out_cfgs.append(ColoredConfig(win, from_ranks(ranks[i], palette), c.fill_left, c.fill_right))
        vals = np.empty_like(hs[i].values)
        for j, cut in enumerate(hs[i].cuts):
            r = cut_rank(cut, palette)
            vals[j] = hs[i].values[j] + (F[i, :, r] if r <= K + 1 else 0)
        out_h.append(ColoredHeightFunction(win, hs[i].cuts, vals))
    return AsepResult(out_cfgs, out_h, hits, mon_viol, float(until))


def evolve_with_sentinel(
    config: ParticleConfig | ColoredConfig,
    core: Window,
    clocks: ClockStream,
    until: float,
    since: float = 0.0,
    heights: HeightFunction | ColoredHeightFunction | None = None,
) -> AsepResult:
    """Evolve one configuration and check the buffer around ``core`` sufficed.

    A second copy whose outer half buffer is scrambled runs under the same
    clocks; if the two disagree anywhere on ``core`` at the end, information
    has crossed the inner half of the buffer and :class:`WindowTooSmall` is
    raised.
    """
    cfg = _as_colored(config)
    win = cfg.window
    if not (win.lo <= core.lo and core.hi <= win.hi):
        raise ValueError("core must lie inside the window")
    left_half = (core.lo - win.lo) // 2
    right_half = (win.hi - core.hi) // 2
    scrambled = cfg.colors.copy()
    top = np.int32(cfg.present_colors().max() if len(cfg.present_colors()) else 1)
    for sl in (slice(0, left_half), slice(win.size - right_half, win.size)):
        seg = scrambled[sl]
        scrambled[sl] = np.where(seg == HOLE, top, HOLE)
    twin = ColoredConfig(win, scrambled, cfg.fill_left, cfg.fill_right)
    res = evolve([cfg, twin], clocks, until, since=since, heights=[heights, None])
    a = res.configs[0].colors[core.lo - win.lo: core.hi - win.lo + 1]
    b = res.configs[1].colors[core.lo - win.lo: core.hi - win.lo + 1]
    if not np.array_equal(a, b):
        raise WindowTooSmall("buffer too small: perturbation reached the core window")
    return AsepResult(res.configs[:1], res.heights[:1], res.edge_hits[:1], res.monitor_violations, res.time)


def asep_buffer(q: float, horizon: float) -> int:
    """Default buffer width for bi-infinite initial data."""
    return int(math.ceil(8.0 * (1.0 + q) * horizon)) + 64


# ---------------------------------------------------------------------------
# finitely many particles in an empty lattice


@nb.njit(cache=True)
def _next_ring(seed, q, eq, site, after, times, dirs):
    blk = int(math.floor(after))
    while True:
        k = _block_events(seed, site, q, eq, blk, times, dirs)
        for i in range(k):
            if times[i] > after:
                return times[i], dirs[i]
        blk += 1


@nb.njit(cache=True)
def _sparse_kernel(pos, col, seed, q, t_from, t_to):
    n = pos.shape[0]
    times = np.empty(_CAP)
    dirs = np.empty(_CAP, np.int64)
    eq = math.exp(-q)
    nt = np.empty(n)
    nd = np.empty(n, np.int64)
    for p in range(n):
        nt[p], nd[p] = _next_ring(seed, q, eq, pos[p], t_from, times, dirs)
    while True:
        p = -1
        best = np.inf
        for i in range(n):
            if nt[i] < best:
                best = nt[i]
                p = i
        if p < 0 or best > t_to:
            break
        x = pos[p]
        dst = x + 1 if nd[p] == 0 else x - 1
        o = -1
        for i in range(n):
            if pos[i] == dst:
                o = i
                break
        if o < 0:
            pos[p] = dst
        elif col[o] < col[p]:
            pos[p] = dst
            pos[o] = x
            nt[o], nd[o] = _next_ring(seed, q, eq, x, best, times, dirs)
        nt[p], nd[p] = _next_ring(seed, q, eq, pos[p], best, times, dirs)
    return 0


def evolve_particles(
    sites: Sequence[int], colors: Sequence[int], clocks: ClockStream, until: float, since: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Evolve finitely many colored particles on an otherwise empty line.

    Only clocks at occupied sites are consulted, so the cost scales with the
    number of particles rather than with the distance they may travel.
    Returns ``(sites, colors)`` sorted by site.
    """
    pos = np.asarray(sites, dtype=np.int64).copy()
    col = np.asarray(colors, dtype=np.int64).copy()
    if len(np.unique(pos)) != len(pos):
        raise ValueError("two particles on one site")
    if np.any(col == HOLE):
        raise ValueError("particles need a color")
    if until > clocks.horizon + 1e-12:
        raise ValueError("until exceeds the clock horizon")
    if len(pos) and until > since:
        _sparse_kernel(pos, col, np.uint64(clocks.seed), float(clocks.q), float(since), float(until))
    order = np.argsort(pos)
    return pos[order], col[order]


# ---------------------------------------------------------------------------
# slow reference implementation, used to cross-check the kernel


def evolve_reference(config: ColoredConfig, clocks: ClockStream, until: float) -> ColoredConfig:
    """Direct event-by-event evolution with materialized clocks (small windows only)."""
    win = config.window
    col = {int(x): int(c) for x, c in zip(win.sites(), config.colors)}
    ext = {win.lo - 1: int(config.fill_left), win.hi + 1: int(config.fill_right)}
    events = []
    for x in range(win.lo - 1, win.hi + 2):
        for t, d in clocks.events(x, 0.0, until):
            events.append((t, x, d))
    events.sort()
    for _, x, d in events:
        y = x + 1 if d == RIGHT else x - 1
        if x not in col or y not in col:
            continue
        if col[x] > col[y]:
            col[x], col[y] = col[y], col[x]
    return ColoredConfig(win, np.array([col[x] for x in win.sites()], np.int32), config.fill_left, config.fill_right)
