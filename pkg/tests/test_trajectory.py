"""Trajectory table validation, CSV round trip, grid sampling."""

import numpy as np
import pytest

from coldstart.errors import ConfigError
from coldstart.trajectory import SampledTrajectory, TrajectoryTable, default_table


def test_default_table_shapes():
    table = default_table(40.0)
    sampled = table.sample(T=0.02, duration=40.0)
    assert sampled.n_steps == 2000
    assert len(sampled.afr_d) == 2002
    # endpoints and kink values of the shipped profile
    assert sampled.omega_d[0] == 125.0
    assert sampled.afr_d[0] == 12.5
    assert sampled.t_exh_d[-1] == 650.0
    # the descent segment passes through its breakpoint value exactly
    assert np.interp(20.0, (5, 25), (167, 100)) == pytest.approx(116.75)
    assert sampled.omega_d[-1] == 100.0
    assert sampled.afr_d[-1] == pytest.approx(14.7)


def test_sampling_linear_interpolation_exact():
    table = TrajectoryTable(
        time=(0.0, 1.0, 2.0),
        afr_d=(10.0, 12.0, 12.0),
        omega_d=(100.0, 100.0, 120.0),
        t_exh_d=(650.0, 650.0, 650.0),
    )
    s = table.sample(T=0.25, duration=1.5)
    assert s.afr_d[1] == pytest.approx(10.5)   # t = 0.25 on the 10 -> 12 ramp
    assert s.omega_d[5] == pytest.approx(105.0)  # t = 1.25 on the 100 -> 120 ramp


def test_csv_round_trip():
    table = default_table()
    again = TrajectoryTable.from_csv(table.to_csv())
    assert again == table


def test_missing_column_is_named():
    with pytest.raises(ConfigError) as err:
        TrajectoryTable.from_csv("time,afr_d,omega_d\n0,12,160\n1,12,160\n")
    assert "t_exh_d" in str(err.value)


def test_non_numeric_cell_is_located():
    text = "time,afr_d,omega_d,t_exh_d\n0,12,160,650\n1,oops,160,650\n"
    with pytest.raises(ConfigError) as err:
        TrajectoryTable.from_csv(text)
    assert "line 3" in str(err.value) and "afr_d" in str(err.value)


def test_time_must_start_at_zero_and_increase():
    with pytest.raises(ConfigError):
        TrajectoryTable((1.0, 2.0), (12.0, 12.0), (160.0, 160.0), (650.0, 650.0))
    with pytest.raises(ConfigError):
        TrajectoryTable((0.0, 0.0), (12.0, 12.0), (160.0, 160.0), (650.0, 650.0))


def test_afr_must_be_positive():
    with pytest.raises(ConfigError):
        TrajectoryTable((0.0, 1.0), (0.0, 12.0), (160.0, 160.0), (650.0, 650.0))


def test_sample_rejects_short_table():
    table = TrajectoryTable((0.0, 1.0), (12.0, 12.0), (160.0, 160.0), (650.0, 650.0))
    with pytest.raises(ConfigError) as err:
        table.sample(T=0.02, duration=2.0)
    assert "cover" in str(err.value)


def test_sample_rejects_off_grid_duration():
    table = default_table()
    with pytest.raises(ConfigError):
        table.sample(T=0.02, duration=1.0101)


def test_window_bounds_and_lookahead():
    table = default_table()
    s = table.sample(T=0.02, duration=1.0)
    w = s.window(0)
    assert w.omega_d == 125.0
    assert w.omega_d_next2 == pytest.approx(125.0 + 2 * 0.02 * (167.0 - 125.0) / 1.5)
    s.window(s.n_steps - 1)
    with pytest.raises(IndexError):
        s.window(s.n_steps)
    with pytest.raises(IndexError):
        s.window(-1)
