import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from kpzsim import asep
from kpzsim.lattice import (
    HOLE,
    ColoredConfig,
    HeightFunction,
    ParticleConfig,
    Window,
    WindowTooSmall,
    height_from_config,
    merge_colors,
)

# ---------------------------------------------------------------------------
# clocks


def test_clocks_without_left_rate_have_only_right_events():
    stream = asep.build_clock_stream(7, 0.0, Window(0, 0), 1.0)
    events = stream.per_site[0]
    assert all(d == asep.RIGHT for _, d in events)
    assert len(stream.stream.rings(0, asep.LEFT)) == 0


def test_clock_streams_are_pure():
    a = asep.build_clock_stream(7, 0.3, Window(-2, 2), 5.0)
    b = asep.build_clock_stream(7, 0.3, Window(-2, 2), 5.0)
    assert a.per_site == b.per_site


def test_event_times_strictly_increase_within_horizon():
    stream = asep.ClockStream(3, 0.5, 20.0)
    for x in range(-5, 5):
        times = [t for t, _ in stream.events(x)]
        assert all(0.0 < t <= 20.0 for t in times)
        assert np.all(np.diff(times) > 0)


def test_right_event_count_matches_poisson_mean():
    stream = asep.ClockStream(11, 0.5, 100.0)
    counts = np.array([len(stream.rings(x, asep.RIGHT)) for x in range(1000)])
    assert abs(counts.mean() - 100.0) <= 3.0 * math.sqrt(100.0 / 1000)


@pytest.mark.parametrize("direction,rate", [(asep.RIGHT, 1.0), (asep.LEFT, 0.5)])
def test_interarrival_times_are_exponential(direction, rate):
    stream = asep.ClockStream(5, 0.5, 200.0)
    gaps = np.concatenate([np.diff(np.r_[0.0, stream.rings(x, direction)]) for x in range(200)])
    assert stats.kstest(gaps, "expon", args=(0, 1.0 / rate)).pvalue > 0.01


@pytest.mark.parametrize("horizon,q", [(0.0, 0.5), (-1.0, 0.5), (1.0, 1.0)])
def test_build_clock_stream_rejects_bad_arguments(horizon, q):
    with pytest.raises(ValueError):
        asep.build_clock_stream(1, q, Window(0, 3), horizon)


def test_buffer_formula():
    assert asep.asep_buffer(0.5, 10.0) == 120 + 64


# ---------------------------------------------------------------------------
# single events


def _seed_where(first_site, sites, direction=asep.RIGHT):
    """A seed whose earliest ring among ``sites`` is a ``direction`` ring at ``first_site``.

    Returns the seed, that ring's time and the time of the next ring among ``sites``.
    """
    for seed in range(1000):
        stream = asep.ClockStream(seed, 0.5, 4.0)
        ev = sorted((t, x, d) for x in sites for t, d in stream.events(x))
        if len(ev) >= 2 and ev[0][1] == first_site and ev[0][2] == direction:
            return seed, ev[0][0], ev[1][0]
    raise AssertionError("no suitable seed")


def test_single_right_jump_moves_particle_and_raises_height():
    win = Window(-3, 3)
    seed, t, t_next = _seed_where(0, win.sites())
    cfg = ParticleConfig(win, (win.sites() == 0).astype(np.int8))
    h0 = height_from_config(cfg, win.lo, 0)
    until = 0.5 * (t + t_next)
    res = asep.evolve([cfg], asep.ClockStream(seed, 0.5, 4.0), until, heights=[h0])
    assert res.configs[0].threshold(1).occupancy.tolist() == (win.sites() == 1).astype(int).tolist()
    dh = res.height(0).values - h0.values
    assert dh.tolist() == (win.sites() == 0).astype(int).tolist()


def test_blocked_jump_changes_nothing():
    win = Window(-3, 3)
    seed, t, t_next = _seed_where(0, [0, 1])
    cfg = ParticleConfig(win, np.isin(win.sites(), [0, 1]).astype(np.int8))
    res = asep.evolve([cfg], asep.ClockStream(seed, 0.5, 4.0), 0.5 * (t + t_next))
    assert np.array_equal(res.configs[0].threshold(1).occupancy, cfg.occupancy)


def test_higher_color_swaps_with_lower_one():
    win = Window(-3, 3)
    seed, t, t_next = _seed_where(0, [0, 1])
    colors = np.full(win.size, HOLE, np.int32)
    colors[win.index(0)], colors[win.index(1)] = 2, 1
    cfg = ColoredConfig(win, colors)
    res = asep.evolve([cfg], asep.ClockStream(seed, 0.5, 4.0), 0.5 * (t + t_next))
    out = res.configs[0].colors
    assert (out[win.index(0)], out[win.index(1)]) == (1, 2)
    # the cut at 2 saw a right jump from 0; the cut at 1 saw nothing
    assert (res.heights[0].cut(2).values - height_cut(cfg, 2)).tolist() == (win.sites() == 0).astype(int).tolist()
    assert np.array_equal(res.heights[0].cut(1).values, height_cut(cfg, 1))


def height_cut(cfg, cut):
    return height_from_config(cfg.threshold(cut), cfg.window.lo, 0).values


def test_left_jump_lowers_height_left_of_the_source():
    win = Window(-3, 3)
    seed, t, t_next = _seed_where(0, win.sites(), asep.LEFT)
    cfg = ParticleConfig(win, (win.sites() == 0).astype(np.int8))
    h0 = height_from_config(cfg, win.lo, 0)
    res = asep.evolve([cfg], asep.ClockStream(seed, 0.5, 4.0), 0.5 * (t + t_next), heights=[h0])
    assert res.configs[0].threshold(1).occupancy.tolist() == (win.sites() == -1).astype(int).tolist()
    assert (res.height(0).values - h0.values).tolist() == (-(win.sites() == -1).astype(int)).tolist()


# ---------------------------------------------------------------------------
# against the reference implementation


def _random_colored(rng, n_max=25, top=4):
    n = int(rng.integers(1, n_max))
    lo = int(rng.integers(-10, 10))
    cols = rng.integers(-1, top, n).astype(np.int32)
    cols[cols < 0] = HOLE
    fills = [int(v) if v >= 0 else HOLE for v in rng.integers(-1, top, 2)]
    return ColoredConfig(Window(lo, lo + n - 1), cols, fills[0], fills[1])


def test_kernel_matches_reference(rng):
    for i in range(150):
        cfg = _random_colored(rng)
        clocks = asep.ClockStream(i, float(rng.choice([0.0, 0.3, 0.7])), 6.0)
        fast = asep.evolve([cfg], clocks, 6.0).configs[0]
        slow = asep.evolve_reference(cfg, clocks, 6.0)
        assert np.array_equal(fast.colors, slow.colors)


def test_sparse_particles_match_dense(rng):
    for i in range(50):
        k = int(rng.integers(1, 6))
        sites = np.sort(rng.choice(np.arange(-5, 6), k, replace=False))
        colors = rng.integers(1, 4, k)
        clocks = asep.ClockStream(100 + i, 0.5, 8.0)
        pos, col = asep.evolve_particles(sites, colors, clocks, 8.0)
        win = Window(-80, 80)
        dense = np.full(win.size, HOLE, np.int32)
        dense[sites - win.lo] = colors
        out = asep.evolve([ColoredConfig(win, dense)], clocks, 8.0, strict_edges=True).configs[0].colors
        occ = np.flatnonzero(out != HOLE)
        assert np.array_equal(pos, occ + win.lo)
        assert np.array_equal(col, out[occ])


def test_resumed_evolution_equals_single_run(rng):
    cfg = _random_colored(rng, 40)
    clocks = asep.ClockStream(9, 0.5, 10.0)
    once = asep.evolve([cfg], clocks, 10.0)
    mid = asep.evolve([cfg], clocks, 4.0)
    twice = asep.evolve(mid.configs, clocks, 10.0, since=4.0, heights=mid.heights)
    assert np.array_equal(once.configs[0].colors, twice.configs[0].colors)
    assert np.array_equal(once.heights[0].values, twice.heights[0].values)


def test_start_times_delay_a_copy():
    win = Window(0, 30)
    cfg = ParticleConfig(win, (np.arange(31) % 2).astype(np.int8))
    clocks = asep.ClockStream(4, 0.5, 6.0)
    res = asep.evolve([cfg, cfg], clocks, 6.0, start_times=[0.0, 2.0])
    late = asep.evolve([cfg], clocks, 6.0, since=2.0)
    assert np.array_equal(res.configs[1].colors, late.configs[0].colors)


# ---------------------------------------------------------------------------
# invariants


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), occ=st.lists(st.integers(0, 1), min_size=5, max_size=60))
def test_particle_number_and_height_law(seed, occ):
    win = Window(0, len(occ) - 1)
    cfg = ParticleConfig(win, occ)
    res = asep.evolve([cfg], asep.ClockStream(seed, 0.4, 5.0), 5.0, heights=[height_from_config(cfg, 0, 0)])
    out = res.configs[0].threshold(1).occupancy
    assert out.sum() == sum(occ)
    h = res.height(0)
    assert h.is_valid()
    # heights are fluxes, so they agree with the evolved occupancy up to the anchor
    assert np.array_equal(np.diff(h.values), -out[1:])


def test_colored_projection_equals_uncolored_run(rng):
    for i in range(30):
        cfg = _random_colored(rng, 40, 5)
        clocks = asep.ClockStream(i, 0.5, 5.0)
        colored = asep.evolve([cfg], clocks, 5.0).configs[0]
        for cut in range(0, 5):
            plain = asep.evolve([cfg.threshold(cut)], clocks, 5.0).configs[0]
            assert np.array_equal(plain.threshold(1).occupancy, colored.threshold(cut).occupancy)


def test_merge_commutes_with_evolution(rng):
    for i in range(30):
        cfg = _random_colored(rng, 30, 6)
        clocks = asep.ClockStream(i, 0.5, 4.0)
        part = [(0, 1), (2, 4), (5, 5)]
        a = merge_colors(asep.evolve([cfg], clocks, 4.0).configs[0], part)
        b = asep.evolve([merge_colors(cfg, part)], clocks, 4.0).configs[0]
        assert np.array_equal(a.colors, b.colors)


def test_evolution_is_deterministic():
    cfg = ParticleConfig(Window(0, 99), (np.arange(100) % 3 == 0).astype(np.int8))
    a = asep.evolve([cfg], asep.ClockStream(5, 0.5, 10.0), 10.0)
    b = asep.evolve([cfg], asep.ClockStream(5, 0.5, 10.0), 10.0)
    assert np.array_equal(a.configs[0].colors, b.configs[0].colors)


# ---------------------------------------------------------------------------
# monitors, edges and the sentinel


def test_monitor_counts_nothing_for_ordered_copies():
    win = Window(0, 199)
    cfg = ParticleConfig(win, (np.arange(200) % 2).astype(np.int8))
    h = height_from_config(cfg, 0, 0)
    res = asep.evolve([cfg, cfg], asep.ClockStream(1, 0.5, 10.0), 10.0, heights=[h, h], monitors=[(0, 1, 0)])
    assert res.monitor_violations.tolist() == [0]


def test_monitor_detects_a_negative_shift():
    win = Window(0, 199)
    cfg = ParticleConfig(win, (np.arange(200) % 2).astype(np.int8))
    h = height_from_config(cfg, 0, 0)
    res = asep.evolve([cfg, cfg], asep.ClockStream(1, 0.5, 10.0), 10.0, heights=[h, h], monitors=[(0, 1, -1)])
    assert res.monitor_violations[0] > 0


def test_strict_edges_raise_for_step_data():
    win = Window(-5, 5)
    cfg = ParticleConfig(win, (win.sites() <= 0).astype(np.int8), fill_left=1, fill_right=0)
    with pytest.raises(WindowTooSmall):
        asep.evolve([cfg], asep.ClockStream(1, 0.5, 50.0), 50.0, strict_edges=True)
    res = asep.evolve([cfg], asep.ClockStream(1, 0.5, 50.0), 50.0)
    assert res.edge_hits[0] > 0


def test_sentinel_flags_a_short_buffer():
    win = Window(-20, 20)
    cfg = ParticleConfig(win, (np.arange(win.size) % 2).astype(np.int8))
    with pytest.raises(WindowTooSmall):
        asep.evolve_with_sentinel(cfg, Window(-2, 2), asep.ClockStream(0, 0.5, 60.0), 60.0)


def test_sentinel_accepts_the_default_buffer():
    T = 3.0
    B = asep.asep_buffer(0.5, T)
    win = Window(-B - 5, B + 5)
    cfg = ParticleConfig(win, (np.arange(win.size) % 2).astype(np.int8))
    res = asep.evolve_with_sentinel(cfg, Window(-5, 5), asep.ClockStream(2, 0.5, T), T,
                                    heights=height_from_config(cfg, win.lo, 0))
    assert isinstance(res.height(0), HeightFunction)


def test_until_beyond_horizon_is_rejected():
    cfg = ParticleConfig(Window(0, 3), [1, 0, 1, 0])
    with pytest.raises(ValueError):
        asep.evolve([cfg], asep.ClockStream(1, 0.5, 1.0), 2.0)
