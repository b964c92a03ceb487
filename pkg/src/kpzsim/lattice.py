"""Particle configurations, colorings and height functions on integer windows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

HOLE = np.int32(np.iinfo(np.int32).min)
"""Color of an empty site (stands for minus infinity)."""


class WindowTooSmall(RuntimeError):
    """Raised when a simulation would need sites outside its window."""


@dataclass(frozen=True)
class Window:
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.hi < self.lo:
            raise ValueError(f"empty window [{self.lo}, {self.hi}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)

    def index(self, site: int) -> int:
        if not self.lo <= site <= self.hi:
            raise IndexError(f"site {site} outside [{self.lo}, {self.hi}]")
        return site - self.lo

    def __contains__(self, site: int) -> bool:
        return self.lo <= site <= self.hi


@dataclass
class ParticleConfig:
    """0/1 occupancy on a window.

    ``fill_left`` and ``fill_right`` give the occupancy assumed outside the
    window.  The ASEP evolution treats the exterior as frozen; when the fill
    values describe the true exterior (e.g. a step initial condition) any
    attempt to move a particle across the window edge is detectable.
    """

    window: Window
    occupancy: np.ndarray
    fill_left: int = 0
    fill_right: int = 0

    def __post_init__(self) -> None:
        self.occupancy = np.asarray(self.occupancy, dtype=np.int8)
        if self.occupancy.shape != (self.window.size,):
            raise ValueError("occupancy must cover the window exactly")
        if np.any((self.occupancy != 0) & (self.occupancy != 1)):
            raise ValueError("occupancy must be 0/1")

    def as_colored(self) -> ColoredConfig:
        colors = np.where(self.occupancy == 1, 1, HOLE).astype(np.int32)
        return ColoredConfig(
            self.window,
            colors,
            fill_left=np.int32(1) if self.fill_left else HOLE,
            fill_right=np.int32(1) if self.fill_right else HOLE,
        )


@dataclass
class ColoredConfig:
    """Colors on a window; ``HOLE`` marks an empty site."""

    window: Window
    colors: np.ndarray
    fill_left: int = HOLE
    fill_right: int = HOLE

    def __post_init__(self) -> None:
        self.colors = np.asarray(self.colors, dtype=np.int32)
        if self.colors.shape != (self.window.size,):
            raise ValueError("colors must cover the window exactly")

    def threshold(self, cut: int) -> ParticleConfig:
        """Occupancy of the particles with color at least ``cut``."""
        return ParticleConfig(
            self.window,
            (self.colors >= cut).astype(np.int8),
            fill_left=int(self.fill_left >= cut and self.fill_left != HOLE),
            fill_right=int(self.fill_right >= cut and self.fill_right != HOLE),
        )

    def present_colors(self) -> np.ndarray:
        c = self.colors[self.colors != HOLE]
        return np.unique(c)


@dataclass
class HeightFunction:
    """Integer height with increments in {0, -1}, stored on a window."""

    window: Window
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.shape != (self.window.size,):
            raise ValueError("height values must cover the window exactly")

    @property
    def anchor_site(self) -> int:
        return self.window.lo

    @property
    def anchor_value(self) -> int:
        return int(self.values[0])

    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def is_valid(self) -> bool:
        d = self.increments()
        return bool(np.all((d == 0) | (d == -1)))

    def at(self, site: int) -> int:
        return int(self.values[self.window.index(site)])

    def shifted(self, c: int) -> HeightFunction:
        return HeightFunction(self.window, self.values + c)


def height_from_config(
    config: ParticleConfig, anchor_site: int, anchor_value: int
) -> HeightFunction:
    """Height with h(anchor_site) = anchor_value and eta(x) = h(x-1) - h(x)."""
    w = config.window
    eta = config.occupancy.astype(np.int64)
    # h(x) = h(lo) - sum_{lo < y <= x} eta(y)
    rel = np.zeros(w.size, dtype=np.int64)
    rel[1:] = -np.cumsum(eta[1:])
    shift = anchor_value - rel[w.index(anchor_site)]
    return HeightFunction(w, rel + shift)


def config_from_height(
    h: HeightFunction, left_value: int | None = None
) -> ParticleConfig:
    """Occupancy eta(x) = h(x-1) - h(x).

    The leftmost site needs h(lo-1); it defaults to h(lo), i.e. an empty site.
    """
    if not h.is_valid():
        raise ValueError("height increments must lie in {0,-1}")
    prev = h.values[0] if left_value is None else left_value
    eta = np.empty(h.window.size, dtype=np.int8)
    eta[0] = prev - h.values[0]
    eta[1:] = -np.diff(h.values)
    if eta[0] not in (0, 1):
        raise ValueError("left_value inconsistent with h(lo)")
    return ParticleConfig(h.window, eta)


@dataclass
class ColoredHeightFunction:
    """Heights of the thresholded systems {color >= cut} for tracked cuts."""

    window: Window
    cuts: tuple[int, ...]
    values: np.ndarray  # shape (len(cuts), window.size)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.shape != (len(self.cuts), self.window.size):
            raise ValueError("values shape must be (n_cuts, window size)")

    def cut(self, c: int) -> HeightFunction:
        return HeightFunction(self.window, self.values[self.cuts.index(c)])

    def is_valid(self) -> bool:
        """Every cut is a height function and the thresholded systems are nested.

        Nesting means ``h_c - h_d`` (for cuts ``c < d``) is itself a height
        function: it counts the particles with color in ``[c, d)``.
        """
        dx = np.diff(self.values, axis=1)
        ok = np.all((dx == 0) | (dx == -1))
        order = np.argsort(self.cuts)
        if len(order) > 1:
            gap = np.diff(self.values[order[:-1]] - self.values[order[1:]], axis=1)
            ok = ok and np.all((gap == 0) | (gap == -1))
        return bool(ok)


def colored_heights_from_config(
    config: ColoredConfig, cuts: Sequence[int], anchor_site: int, anchor_values: Sequence[int]
) -> ColoredHeightFunction:
    vals = [
        height_from_config(config.threshold(c), anchor_site, a).values
        for c, a in zip(cuts, anchor_values)
    ]
    return ColoredHeightFunction(config.window, tuple(int(c) for c in cuts), np.array(vals))


def merge_colors(config: ColoredConfig, partition: Sequence[tuple[int, int]]) -> ColoredConfig:
    """Replace each color by the lower end of its interval in ``partition``.

    ``partition`` is a list of closed integer intervals ``(a, b)`` in
    increasing order; every color present must lie in exactly one of them.
    Holes stay holes.
    """
    iv = [(int(a), int(b)) for a, b in partition]
    for a, b in iv:
        if b < a:
            raise ValueError(f"interval ({a}, {b}) is empty")
    for (a0, b0), (a1, _) in zip(iv, iv[1:]):
        if a1 <= b0:
            raise ValueError("partition intervals overlap or are not ordered")
    out = config.colors.copy()
    covered = config.colors == HOLE
    for a, b in iv:
        m = (config.colors >= a) & (config.colors <= b)
        out[m] = a
        covered |= m

    def fill(c: int) -> int:
        if c == HOLE:
            return HOLE
        for a, b in iv:
            if a <= c <= b:
                return a
        raise ValueError(f"color {c} of the exterior not covered by the partition")

    if not np.all(covered):
        missing = np.unique(config.colors[~covered])
        raise ValueError(f"colors {missing.tolist()} not covered by the partition")
    return ColoredConfig(config.window, out, fill(config.fill_left), fill(config.fill_right))


def color_ranks(colors: Sequence[np.ndarray], extra: Sequence[int] = ()) -> np.ndarray:
    """Sorted distinct non-hole colors appearing in any of the arrays."""
    parts = [np.asarray(c)[np.asarray(c) != HOLE] for c in colors]
    parts.append(np.asarray([e for e in extra if e != HOLE], dtype=np.int32))
    return np.unique(np.concatenate(parts).astype(np.int32)) if parts else np.zeros(0, np.int32)


def to_ranks(colors: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Map colors to 1-based ranks in ``palette``; holes map to 0."""
    r = np.searchsorted(palette, colors) + 1
    return np.where(colors == HOLE, 0, r).astype(np.int32)


def from_ranks(ranks: np.ndarray, palette: np.ndarray) -> np.ndarray:
    out = np.full(ranks.shape, HOLE, dtype=np.int32)
    m = ranks > 0
    out[m] = palette[ranks[m] - 1]
    return out


def cut_rank(cut: int, palette: np.ndarray) -> int:
    """Smallest rank whose color is >= cut (len(palette)+1 if none)."""
    return int(np.searchsorted(palette, cut, side="left")) + 1
