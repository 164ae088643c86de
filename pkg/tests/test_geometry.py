import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hts_surrogate.geometry import (GeometryError, SolenoidConfig, SolenoidGeometry, build_solenoid,
                                    discretize, full_stack, points_for_resolution)


def test_single_tape_placement():
    g = build_solenoid(SolenoidConfig(n_turns=1, n_pancakes_half=1, pancake_gap=1e-3))
    (t,) = g.tapes
    assert t.z_low == pytest.approx(0.5e-3, abs=1e-15)
    assert t.z_high == pytest.approx(4.5e-3, abs=1e-15)
    assert t.radius == pytest.approx(10.05e-3, abs=1e-15)
    assert g.mirror and g.mirror_plane_z == 0.0 and g.axis_r == 0.0


def test_outermost_turn_radius():
    g = build_solenoid(SolenoidConfig(n_turns=100))
    assert max(t.radius for t in g.tapes) == pytest.approx(19.95e-3, rel=1e-12)


def test_corner_config_tape_count():
    assert build_solenoid(SolenoidConfig(n_turns=100, n_pancakes_half=10)).n_tapes == 1000


def test_pancake_z_ranges():
    cfg = SolenoidConfig(n_turns=2, n_pancakes_half=3)
    g = build_solenoid(cfg)
    for t in g.tapes:
        lo = 0.5e-3 + (t.pancake - 1) * 5e-3
        assert t.z_low == pytest.approx(lo, abs=1e-15)
        assert t.z_high - t.z_low == pytest.approx(4e-3, abs=1e-15)


@pytest.mark.parametrize("kw", [dict(inner_radius=0.0), dict(tape_width=-1e-3), dict(tape_thickness=0.0),
                                dict(n_turns=0), dict(n_pancakes_half=0), dict(op_current=0.0),
                                dict(ramp_rate=-1.0), dict(pancake_gap=-1e-3), dict(n_turns=2.5)])
def test_invalid_config_rejected(kw):
    with pytest.raises(GeometryError):
        SolenoidConfig(**kw)


def test_ramp_duration():
    assert SolenoidConfig().ramp_duration == pytest.approx(1.0)


def test_points_per_tape():
    assert points_for_resolution(4e-3, 1e-4) == 41
    assert points_for_resolution(4e-3, 4e-3) == 2
    assert points_for_resolution(4e-3, 2e-4) == 21


def test_non_divisible_resolution_rejected():
    with pytest.raises(GeometryError):
        points_for_resolution(4e-3, 3e-4)
    with pytest.raises(GeometryError):
        points_for_resolution(4e-3, 0.0)


def test_element_widths_partition_tape():
    m = discretize(build_solenoid(SolenoidConfig(n_turns=3, n_pancakes_half=2)), 1e-4)
    for i in range(m.n_tapes):
        s = m.tape_slice(i)
        assert m.width[s].sum() == pytest.approx(4e-3, rel=1e-14)
        assert np.all(np.diff(m.z[s]) > 0)
        assert m.z[s][-1] - m.z[s][0] == pytest.approx(4e-3, rel=1e-12)
        assert len(set(m.tape_index[s])) == 1


def test_turn_radius_increases():
    m = discretize(build_solenoid(SolenoidConfig(n_turns=5)), 4e-3)
    radii = [m.r[m.turn == k][0] for k in range(1, 6)]
    assert np.all(np.diff(radii) > 0)
    assert radii[0] == pytest.approx(10.05e-3)


@given(N=st.integers(1, 6), Np=st.integers(1, 4), res=st.sampled_from([4e-3, 2e-3, 1e-3, 5e-4]))
def test_element_count_is_product(N, Np, res):
    m = discretize(build_solenoid(SolenoidConfig(n_turns=N, n_pancakes_half=Np)), res)
    assert len(m) == N * Np * points_for_resolution(4e-3, res)


@given(N=st.integers(1, 5), Np=st.integers(1, 3), extra=st.integers(1, 3))
def test_stack_grows_upward_only(N, Np, extra):
    small = build_solenoid(SolenoidConfig(n_turns=N, n_pancakes_half=Np))
    big = build_solenoid(SolenoidConfig(n_turns=N, n_pancakes_half=Np + extra))
    assert [t for t in big.tapes if t.pancake <= Np] == list(small.tapes)


def test_json_round_trip():
    g = build_solenoid(SolenoidConfig(n_turns=2, n_pancakes_half=2))
    g2 = SolenoidGeometry.from_dict(json.loads(g.to_json()))
    assert g2 == g


def test_full_stack_mirrors_tapes():
    g = build_solenoid(SolenoidConfig(n_turns=2, n_pancakes_half=1))
    f = full_stack(g)
    assert not f.mirror and f.n_tapes == 4
    for a, b in zip(g.tapes, f.tapes[2:]):
        assert b.pancake == -a.pancake and b.z_low == -a.z_high and b.z_high == -a.z_low
    with pytest.raises(GeometryError):
        full_stack(f)
    m = discretize(f, 1e-3)
    assert not m.mirror
