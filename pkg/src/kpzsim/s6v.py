"""Stochastic six-vertex model, sampled column by column.

Rows ``y`` are lattice sites and columns ``x = 1, 2, ...`` are time steps.
Column ``x`` receives the configuration ``eta_{x-1}`` as horizontal inputs
and is swept from the bottom row upward; the vertical arrow leaving a vertex
is the vertical input of the vertex above it.  The horizontal outputs form
``eta_x``.

Each vertex ``(x, y)`` owns two Bernoulli variables, ``X_up`` with mean
``q*b`` and ``X_right`` with mean ``b``, computed from the seed and the vertex
alone.  Any collection of configurations swept with the same seed is
therefore coupled by the basic coupling.

At a vertex whose two inputs differ, the higher color plays the role of the
arrow and the lower color the role of its absence: a higher vertical input
keeps going up iff ``X_up``, a higher horizontal input keeps going right iff
``X_right``; otherwise the two swap directions.  Equal inputs pass straight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
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
    merge_colors,
    to_ranks,
)
from .noise import CH_VERTEX, uniforms4


# ---------------------------------------------------------------------------
# single vertex


def vertex_update(i_in: int, a_in: int, x_up: int, x_right: int) -> tuple[int, int]:
    """Outputs ``(j, b)`` (horizontal, vertical) of an uncolored vertex."""
    for v in (i_in, a_in, x_up, x_right):
        if v not in (0, 1):
            raise ValueError("vertex inputs must be 0 or 1")
    if i_in == a_in:
        return i_in, a_in
    if a_in == 1:
        return (0, 1) if x_up else (1, 0)
    return (1, 0) if x_right else (0, 1)


def colored_vertex_update(i_in: int, a_in: int, x_up: int, x_right: int) -> tuple[int, int]:
    """Outputs ``(j, b)`` of a colored vertex; ``HOLE`` is the empty edge."""
    j, b = _colored_update(np.int64(i_in), np.int64(a_in), bool(x_up), bool(x_right))
    return int(j), int(b)


@nb.njit(cache=True, inline="always")
def _colored_update(i, a, x_up, x_right):
    if i == a:
        return i, a
    if a > i:
        if x_up:
            return i, a
        return a, i
    if x_right:
        return i, a
    return a, i


def vertex_weights(q: float | Fraction, b: float | Fraction) -> dict[tuple[int, int], dict[tuple[int, int], Fraction]]:
    """Exact transition weights ``(i, a) -> {(j, b): weight}``.

    Floats are converted to the rationals they represent exactly.
    """
    q = Fraction(q)
    b = Fraction(b)
    return {
        (0, 0): {(0, 0): Fraction(1)},
        (1, 1): {(1, 1): Fraction(1)},
        (0, 1): {(0, 1): q * b, (1, 0): 1 - q * b},
        (1, 0): {(1, 0): b, (0, 1): 1 - b},
    }


def check_row_stochastic(q: float | Fraction, b: float | Fraction) -> bool:
    """True iff all weights are in [0, 1], sum to one per input and conserve arrows."""
    for (i, a), row in vertex_weights(q, b).items():
        if sum(row.values()) != 1:
            return False
        for (j, bo), w in row.items():
            if not 0 <= w <= 1 or i + a != j + bo:
                return False
    return True


# ---------------------------------------------------------------------------
# vertex noise


@nb.njit(cache=True)
def _vertex_pair(seed, x, y):
    """Uniforms ``(u_up, u_right)`` of vertex ``(x, y)``.

    One Philox block serves the two vertices ``2k`` and ``2k+1`` of a column.
    """
    u0, u1, u2, u3 = uniforms4(seed, CH_VERTEX, x, y >> 1, 0)
    if y & 1:
        return u2, u3
    return u0, u1


@dataclass(frozen=True)
class VertexNoiseField:
    """The Bernoulli pair ``(X_up, X_right)`` at every vertex, as a pure function."""

    seed: int
    q: float
    b: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.q < 1.0:
            raise ValueError("q must lie in [0, 1)")
        if not 0.0 < self.b < 1.0:
            raise ValueError("b must lie in (0, 1)")

    @property
    def p_up(self) -> float:
        return self.q * self.b

    @property
    def p_right(self) -> float:
        return self.b

    def evaluate(self, x: int, y: int) -> tuple[int, int]:
        u_up, u_right = _vertex_pair(np.uint64(self.seed), int(x), int(y))
        return int(u_up < self.p_up), int(u_right < self.p_right)

    def evaluate_channel(self, x: int, y: int, channel: str) -> int:
        up, right = self.evaluate(x, y)
        if channel == "up":
            return up
        if channel == "right":
            return right
        raise ValueError("channel must be 'up' or 'right'")

    def block(self, x: int, rows: Window) -> tuple[np.ndarray, np.ndarray]:
        """Both Bernoulli fields of column ``x`` on ``rows``."""
        up = np.empty(rows.size, np.int8)
        right = np.empty(rows.size, np.int8)
        _fill_column(np.uint64(self.seed), int(x), int(rows.lo), self.p_up, self.p_right, up, right)
        return up, right


@nb.njit(cache=True)
def _fill_column(seed, x, lo, pu, pr, up, right):
    for k in range(up.shape[0]):
        u, r = _vertex_pair(seed, x, lo + k)
        up[k] = u < pu
        right[k] = r < pr


# ---------------------------------------------------------------------------
# dense kernel


@nb.njit(cache=True)
def _s6v_kernel(ranks, lo, seed, pu, pr, col_from, col_to, starts, fb, ft, cnt, edge_hits, check, stats):
    """Sweep columns ``col_from+1 .. col_to``.

    ``stats`` accumulates (vertices visited, conservation violations).
    """
    n_cfg, n = ranks.shape
    carry = np.zeros(n_cfg, np.int64)
    for x in range(col_from + 1, col_to + 1):
        for c in range(n_cfg):
            carry[c] = fb[c]
        pair = np.int64(-1) << 62
        u0 = u1 = u2 = u3 = 0.0
        for idx in range(n):
            y = lo + idx
            for c in range(n_cfg):
                if starts[c] >= x:
                    continue
                i = np.int64(ranks[c, idx])
                a = carry[c]
                if i == a:
                    if a > 0:
                        cnt[c, idx, a] += 1
                    if check:
                        stats[0] += 1
                    continue
                if pair != y >> 1:
                    u0, u1, u2, u3 = uniforms4(seed, CH_VERTEX, x, y >> 1, 0)
                    pair = y >> 1
                if y & 1:
                    j, b = _colored_update(i, a, u2 < pu, u3 < pr)
                else:
                    j, b = _colored_update(i, a, u0 < pu, u1 < pr)
                if check:
                    stats[0] += 1
                    if not ((j == i and b == a) or (j == a and b == i)):
                        stats[1] += 1
                ranks[c, idx] = j
                carry[c] = b
                if b > 0:
                    cnt[c, idx, b] += 1
        for c in range(n_cfg):
            if starts[c] < x and carry[c] != ft[c]:
                edge_hits[c] += 1
    return 0


@dataclass
class S6vResult:
    """Configurations after ``column`` columns and heights of the requested cuts."""

    configs: list[ColoredConfig]
    heights: list[ColoredHeightFunction]
    edge_hits: np.ndarray
    column: int
    vertices: int
    conservation_violations: int

    def height(self, index: int, cut: int = 1) -> HeightFunction:
        return self.heights[index].cut(cut)


def _as_colored(c: ParticleConfig | ColoredConfig) -> ColoredConfig:
    return c.as_colored() if isinstance(c, ParticleConfig) else c


def evolve(
    initial: Sequence[ParticleConfig | ColoredConfig],
    noise: VertexNoiseField,
    until: int,
    start_times: Sequence[int] | None = None,
    heights: Sequence[HeightFunction | ColoredHeightFunction | None] | None = None,
    since: int = 0,
    strict_edges: bool | Sequence[bool] = False,
    check: bool = False,
) -> S6vResult:
    """Sweep columns ``since+1 .. until`` for configurations on a common window.

    The window's rows are the lattice sites.  Below the window every
    configuration is frozen at ``fill_left``, which is also the vertical input
    of the bottom row (a hole gives the usual no-inflow boundary).  Above the
    window it is frozen at ``fill_right``; a vertical arrow leaving the top row
    that differs from it would change the exterior and is counted in
    ``edge_hits``.  Rows below are never affected by rows above, so for
    bi-infinite data only the bottom needs a buffer.

    A configuration with start time ``s`` is first swept in column ``s+1``.
    Heights follow ``h(y, x) = h(y, x-1) + 1{b(x, y) >= cut}``.
    """
    cfgs = [_as_colored(c) for c in initial]
    if not cfgs:
        raise ValueError("no configurations given")
    win = cfgs[0].window
    for c in cfgs:
        if c.window != win:
            raise ValueError("all configurations must share the window")
    since = int(since)
    until = int(until)
    if until < since:
        raise ValueError("until must not precede since")
    n_cfg = len(cfgs)
    starts = np.full(n_cfg, since, dtype=np.int64)
    if start_times is not None:
        starts = np.maximum(np.asarray(start_times, dtype=np.int64), since)
    strict = [strict_edges] * n_cfg if isinstance(strict_edges, bool) else list(strict_edges)

    palette = color_ranks([c.colors for c in cfgs], [c.fill_left for c in cfgs] + [c.fill_right for c in cfgs])
    K = len(palette)
    ranks = np.stack([to_ranks(c.colors, palette) for c in cfgs]).astype(np.int32)
    fb = np.array([to_ranks(np.array([c.fill_left], np.int32), palette)[0] for c in cfgs], np.int64)
    ft = np.array([to_ranks(np.array([c.fill_right], np.int32), palette)[0] for c in cfgs], np.int64)

    hs: list[ColoredHeightFunction] = []
    for i, c in enumerate(cfgs):
        h = None if heights is None else heights[i]
        if h is None:
            cuts = [int(v) for v in c.present_colors()] or [1]
            vals = [height_from_config(c.threshold(k), win.lo, 0).values for k in cuts]
            h = ColoredHeightFunction(win, tuple(cuts), np.array(vals).reshape(len(cuts), -1))
        elif isinstance(h, HeightFunction):
            h = ColoredHeightFunction(h.window, (1,), h.values[None, :])
        hs.append(h)

    n = win.size
    cnt = np.zeros((n_cfg, n, K + 2), np.int64)
    hits = np.zeros(n_cfg, np.int64)
    stats = np.zeros(2, np.int64)
    if until > since:
        _s6v_kernel(
            ranks, int(win.lo), np.uint64(noise.seed), float(noise.p_up), float(noise.p_right),
            since, until, starts, fb, ft, cnt, hits, bool(check), stats,
        )
    for i in range(n_cfg):
        if strict[i] and hits[i] > 0:
            raise WindowTooSmall(
                f"configuration {i}: {hits[i]} column(s) changed the exterior above row {win.hi}"
            )
    # exits of rank >= r, for every r
    above = np.cumsum(cnt[:, :, ::-1], axis=2)[:, :, ::-1]
    out_cfgs, out_h = [], []
    for i, c in enumerate(cfgs):
        out_cfgs.append(ColoredConfig(win, from_ranks(ranks[i], palette), c.fill_left, c.fill_right))
        vals = np.empty_like(hs[i].values)
        for j, cut in enumerate(hs[i].cuts):
            r = max(cut_rank(cut, palette), 1)
            vals[j] = hs[i].values[j] + (above[i, :, r] if r <= K else 0)
        out_h.append(ColoredHeightFunction(win, hs[i].cuts, vals))
    return S6vResult(out_cfgs, out_h, hits, until, int(stats[0]), int(stats[1]))


def s6v_window(horizon: int, b: float) -> int:
    """Default bottom buffer for ``horizon`` columns of bi-infinite data."""
    return int(math.ceil(8.0 * horizon / (1.0 - b)))


merge_colors_s6v = merge_colors


# ---------------------------------------------------------------------------
# one column at a time


@dataclass
class S6vState:
    """A configuration after ``column`` columns, with its heights."""

    column: int
    config: ColoredConfig
    heights: ColoredHeightFunction


def step_column(state: S6vState, noise: VertexNoiseField) -> tuple[S6vState, np.ndarray]:
    """Sweep one column; returns the new state and the vertical exits ``b``.

    Exits are colors (``HOLE`` where no arrow leaves a vertex upward).
    """
    cfg = state.config
    x = state.column + 1
    up, right = noise.block(x, cfg.window)
    colors = cfg.colors.astype(np.int64)
    exits = np.empty_like(colors)
    carry = np.int64(cfg.fill_left)
    for k in range(len(colors)):
        j, b = _colored_update(colors[k], carry, bool(up[k]), bool(right[k]))
        colors[k] = j
        exits[k] = b
        carry = b
    if carry != cfg.fill_right:
        raise WindowTooSmall(f"column {x} changed the exterior above row {cfg.window.hi}")
    new_cfg = ColoredConfig(cfg.window, colors.astype(np.int32), cfg.fill_left, cfg.fill_right)
    return S6vState(x, new_cfg, height_step(state.heights, exits)), exits.astype(np.int32)


def height_step(h: HeightFunction | ColoredHeightFunction, exits: np.ndarray) -> HeightFunction | ColoredHeightFunction:
    """Add one column of vertical exits to a height function.

    An uncolored height takes 0/1 exit indicators; a colored one takes exit
    colors (``HOLE`` for none) and adds ``1{b >= cut}`` for each cut.
    """
    exits = np.asarray(exits)
    if isinstance(h, HeightFunction):
        if np.any((exits != 0) & (exits != 1)):
            raise ValueError("uncolored exits must be 0/1")
        return HeightFunction(h.window, h.values + exits.astype(np.int64))
    vals = h.values.copy()
    for j, cut in enumerate(h.cuts):
        vals[j] += ((exits != HOLE) & (exits >= cut)).astype(np.int64)
    return ColoredHeightFunction(h.window, h.cuts, vals)


def evolve_reference(config: ColoredConfig, noise: VertexNoiseField, until: int) -> ColoredConfig:
    """Vertex-by-vertex sweep in plain Python (small windows only)."""
    cols = [int(c) for c in config.colors]
    for x in range(1, until + 1):
        carry = int(config.fill_left)
        for k, y in enumerate(config.window.sites()):
            up, right = noise.evaluate(x, int(y))
            cols[k], carry = colored_vertex_update(cols[k], carry, up, right)
    return ColoredConfig(config.window, np.array(cols, np.int32), config.fill_left, config.fill_right)


# ---------------------------------------------------------------------------
# finitely many particles in an empty lattice


_NONE = np.int64(HOLE)


@nb.njit(cache=True)
def _sparse_kernel(pos, col, seed, pu, pr, col_from, col_to):
    n = pos.shape[0]
    new_pos = np.empty(n, np.int64)
    new_col = np.empty(n, np.int64)
    for x in range(col_from + 1, col_to + 1):
        m = 0
        carry = _NONE  # color carried upward
        row = np.int64(0)  # row the carried arrow enters next
        for k in range(n):
            y = pos[k]
            # a carried arrow crosses empty rows until it turns right
            while carry != _NONE and row < y:
                u_up, _ = _vertex_pair(seed, x, row)
                if u_up < pu:
                    row += 1
                else:
                    new_pos[m] = row
                    new_col[m] = carry
                    m += 1
                    carry = _NONE
            u_up, u_right = _vertex_pair(seed, x, y)
            j, b = _colored_update(col[k], carry, u_up < pu, u_right < pr)
            if j != _NONE:
                new_pos[m] = y
                new_col[m] = j
                m += 1
            carry = b
            row = y + 1
        while carry != _NONE:
            u_up, _ = _vertex_pair(seed, x, row)
            if u_up < pu:
                row += 1
            else:
                new_pos[m] = row
                new_col[m] = carry
                m += 1
                carry = _NONE
        for k in range(n):
            pos[k] = new_pos[k]
            col[k] = new_col[k]
    return 0


def evolve_particles(
    sites: Sequence[int], colors: Sequence[int], noise: VertexNoiseField, until: int, since: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Sweep finitely many colored particles on an otherwise empty line.

    Only rows touched by a particle or a carried arrow are visited.  Returns ``(sites,
    colors)`` sorted by site.
    """
    pos = np.asarray(sites, dtype=np.int64).copy()
    col = np.asarray(colors, dtype=np.int64).copy()
    if len(np.unique(pos)) != len(pos):
        raise ValueError("two particles on one site")
    if np.any(col == HOLE):
        raise ValueError("particles need a color")
    order = np.argsort(pos)
    pos, col = pos[order], col[order]
    if len(pos) and until > since:
        _sparse_kernel(pos, col, np.uint64(noise.seed), float(noise.p_up), float(noise.p_right), int(since), int(until))
    return pos, col
