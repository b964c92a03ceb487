import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpzsim import s6v
from kpzsim.lattice import (
    HOLE,
    ColoredConfig,
    HeightFunction,
    ParticleConfig,
    Window,
    WindowTooSmall,
    colored_heights_from_config,
    height_from_config,
    merge_colors,
)

# ---------------------------------------------------------------------------
# single vertex


def test_empty_vertex_stays_empty():
    for up, right in itertools.product((0, 1), repeat=2):
        assert s6v.vertex_update(0, 0, up, right) == (0, 0)
        assert s6v.vertex_update(1, 1, up, right) == (1, 1)


def test_horizontal_arrow_continues_iff_right_flag():
    assert s6v.vertex_update(1, 0, 0, 1) == (1, 0)
    assert s6v.vertex_update(1, 0, 1, 0) == (0, 1)


def test_vertical_arrow_turns_right_without_up_flag():
    assert s6v.vertex_update(0, 1, 0, 1) == (1, 0)
    assert s6v.vertex_update(0, 1, 1, 0) == (0, 1)


def test_vertex_update_rejects_non_binary_input():
    with pytest.raises(ValueError):
        s6v.vertex_update(2, 0, 0, 0)


def test_colored_holes_pass():
    assert s6v.colored_vertex_update(HOLE, HOLE, 1, 0) == (HOLE, HOLE)


def test_colored_higher_vertical_goes_straight_with_up_flag():
    # horizontal i=1 below vertical j=2
    assert s6v.colored_vertex_update(1, 2, 1, 0) == (1, 2)
    assert s6v.colored_vertex_update(1, 2, 0, 1) == (2, 1)


def test_colored_higher_horizontal_goes_straight_with_right_flag():
    assert s6v.colored_vertex_update(2, 1, 0, 1) == (2, 1)
    assert s6v.colored_vertex_update(2, 1, 1, 0) == (1, 2)


def test_colored_rule_projects_to_uncolored_rule():
    colors = [HOLE, 1, 2, 3]
    for i, a, up, right in itertools.product(colors, colors, (0, 1), (0, 1)):
        j, b = s6v.colored_vertex_update(i, a, up, right)
        assert sorted([i, a]) == sorted([j, b])
        for cut in (1, 2, 3):
            th = lambda c: int(c != HOLE and c >= cut)  # noqa: E731
            assert s6v.vertex_update(th(i), th(a), up, right) == (th(j), th(b))


@settings(max_examples=50, deadline=None)
@given(q=st.fractions(0, 1).filter(lambda f: f < 1), b=st.fractions(0, 1).filter(lambda f: 0 < f < 1))
def test_weights_are_row_stochastic_in_rationals(q, b):
    assert s6v.check_row_stochastic(q, b)
    w = s6v.vertex_weights(q, b)
    assert w[(0, 1)][(0, 1)] == q * b
    assert w[(1, 0)][(1, 0)] == b


def test_float_parameters_become_exact_rationals():
    w = s6v.vertex_weights(0.5, 0.25)
    assert w[(0, 1)][(0, 1)] == Fraction(1, 8)


# ---------------------------------------------------------------------------
# noise field


def test_noise_is_pure_and_has_the_right_marginals():
    field = s6v.VertexNoiseField(3, 0.5, 0.6)
    assert field.evaluate(4, -7) == field.evaluate(4, -7)
    up, right = field.block(1, Window(-50_000, 49_999))
    n = up.size
    for sample, p in ((up, 0.3), (right, 0.6)):
        assert abs(sample.mean() - p) <= 3 * np.sqrt(p * (1 - p) / n)
    # the two channels are independent
    both = np.mean(up & right)
    assert abs(both - 0.18) <= 3 * np.sqrt(0.18 * 0.82 / n)


def test_block_agrees_with_pointwise_evaluation():
    field = s6v.VertexNoiseField(3, 0.5, 0.6)
    up, right = field.block(2, Window(-5, 5))
    for k, y in enumerate(range(-5, 6)):
        assert (up[k], right[k]) == field.evaluate(2, y)
        assert field.evaluate_channel(2, y, "up") == up[k]


@pytest.mark.parametrize("q,b", [(1.0, 0.5), (0.5, 0.0), (0.5, 1.0)])
def test_noise_rejects_bad_parameters(q, b):
    with pytest.raises(ValueError):
        s6v.VertexNoiseField(0, q, b)


# ---------------------------------------------------------------------------
# columns


def test_empty_column_stays_empty():
    win = Window(0, 20)
    cfg = ParticleConfig(win, np.zeros(21))
    res = s6v.evolve([cfg], s6v.VertexNoiseField(1, 0.5, 0.5), 5)
    assert np.all(res.configs[0].threshold(1).occupancy == 0)
    assert np.all(res.height(0).values == height_from_config(cfg, 0, 0).values)


def test_packed_column_stays_packed():
    win = Window(0, 20)
    cfg = ParticleConfig(win, np.ones(21), fill_left=1, fill_right=1)
    res = s6v.evolve([cfg], s6v.VertexNoiseField(1, 0.5, 0.5), 5, strict_edges=True)
    assert np.all(res.configs[0].threshold(1).occupancy == 1)


def test_step_column_matches_evolve_and_records_exits():
    win = Window(-10, 30)
    cfg = ParticleConfig(win, (win.sites() <= 0).astype(np.int8)).as_colored()
    noise = s6v.VertexNoiseField(8, 0.5, 0.5)
    h0 = colored_heights_from_config(cfg, [1], win.lo, [0])
    state = s6v.S6vState(0, cfg, h0)
    total = np.zeros(win.size, np.int64)
    for _ in range(6):
        state, exits = s6v.step_column(state, noise)
        total += exits != HOLE
    res = s6v.evolve([cfg], noise, 6, heights=[h0])
    assert np.array_equal(state.config.colors, res.configs[0].colors)
    assert np.array_equal(state.heights.values, res.heights[0].values)
    # telescoping: the height change is the number of vertical exits
    assert np.array_equal(res.heights[0].values[0] - h0.values[0], total)


def test_height_step_adds_exits():
    h = HeightFunction(Window(0, 3), [0, 0, -1, -1])
    assert s6v.height_step(h, np.zeros(4, np.int64)).values.tolist() == [0, 0, -1, -1]
    assert s6v.height_step(h, np.array([0, 1, 0, 0])).values.tolist() == [0, 1, -1, -1]


def test_step_column_flags_a_changed_exterior():
    win = Window(0, 3)
    cfg = ColoredConfig(win, np.ones(4, np.int32), fill_left=1, fill_right=HOLE)
    h = colored_heights_from_config(cfg, [1], 0, [0])
    with pytest.raises(WindowTooSmall):
        s6v.step_column(s6v.S6vState(0, cfg, h), s6v.VertexNoiseField(1, 0.5, 0.5))


def _random_colored(rng, n_max=25, top=4):
    n = int(rng.integers(1, n_max))
    lo = int(rng.integers(-10, 10))
    cols = rng.integers(-1, top, n).astype(np.int32)
    cols[cols < 0] = HOLE
    return ColoredConfig(Window(lo, lo + n - 1), cols, HOLE, HOLE)


def test_kernel_matches_reference(rng):
    for i in range(100):
        cfg = _random_colored(rng)
        noise = s6v.VertexNoiseField(i, float(rng.choice([0.0, 0.4, 0.8])), float(rng.uniform(0.1, 0.9)))
        fast = s6v.evolve([cfg], noise, 7).configs[0]
        slow = s6v.evolve_reference(cfg, noise, 7)
        assert np.array_equal(fast.colors, slow.colors)


def test_sparse_particles_match_dense(rng):
    for i in range(50):
        k = int(rng.integers(1, 6))
        sites = np.sort(rng.choice(np.arange(-5, 6), k, replace=False))
        colors = rng.integers(1, 4, k)
        noise = s6v.VertexNoiseField(i, 0.5, 0.5)
        pos, col = s6v.evolve_particles(sites, colors, noise, 10)
        win = Window(-10, 200)
        dense = np.full(win.size, HOLE, np.int32)
        dense[sites - win.lo] = colors
        out = s6v.evolve([ColoredConfig(win, dense)], noise, 10, strict_edges=True).configs[0].colors
        occ = np.flatnonzero(out != HOLE)
        assert np.array_equal(pos, occ + win.lo)
        assert np.array_equal(col, out[occ])


def test_conservation_check_finds_nothing(rng):
    cfg = _random_colored(rng, 200, 5)
    res = s6v.evolve([cfg], s6v.VertexNoiseField(2, 0.5, 0.5), 20, check=True)
    assert res.vertices == 20 * cfg.window.size
    assert res.conservation_violations == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), occ=st.lists(st.integers(0, 1), min_size=5, max_size=60))
def test_heights_stay_valid_and_track_occupancy(seed, occ):
    win = Window(0, len(occ) - 1)
    cfg = ParticleConfig(win, occ)
    res = s6v.evolve([cfg], s6v.VertexNoiseField(seed, 0.5, 0.5), 6, heights=[height_from_config(cfg, 0, 0)])
    h = res.height(0)
    assert h.is_valid()
    assert np.array_equal(np.diff(h.values), -res.configs[0].threshold(1).occupancy[1:])


def test_merge_commutes_with_evolution(rng):
    for i in range(30):
        cfg = _random_colored(rng, 30, 6)
        noise = s6v.VertexNoiseField(i, 0.5, 0.5)
        part = [(0, 1), (2, 4), (5, 5)]
        a = s6v.merge_colors_s6v(s6v.evolve([cfg], noise, 6).configs[0], part)
        b = s6v.evolve([merge_colors(cfg, part)], noise, 6).configs[0]
        assert np.array_equal(a.colors, b.colors)


def test_two_class_system_equals_coupled_pair(rng):
    win = Window(0, 80)
    big = (rng.random(win.size) < 0.6).astype(np.int8)
    small = big * (rng.random(win.size) < 0.5)
    colors = np.where(small == 1, 2, np.where(big == 1, 1, HOLE)).astype(np.int32)
    noise = s6v.VertexNoiseField(5, 0.5, 0.5)
    two = s6v.evolve([ColoredConfig(win, colors)], noise, 10).configs[0]
    pair = s6v.evolve([ParticleConfig(win, big), ParticleConfig(win, small)], noise, 10).configs
    assert np.array_equal(two.threshold(1).occupancy, pair[0].threshold(1).occupancy)
    assert np.array_equal(two.threshold(2).occupancy, pair[1].threshold(1).occupancy)


def test_window_rule():
    assert s6v.s6v_window(10, 0.5) == 160
