import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hbcp.core import ConfigError
from hbcp.radio import (
    LinkTable, Position, RadioParams, Transmission, build_link_table, decodable,
    power_sum_dbm, reception_probability, resolve_receptions,
)

QUIET = RadioParams(pl0=40.0, shadowing_sigma=0.0, symmetry_sigma=0.0)


def test_one_metre_zero_noise():
    t = build_link_table([Position(0, 0), Position(1, 0)], QUIET, 0.0, 1)
    assert t(0, 1) == -40.0 and t(1, 0) == -40.0


def test_coincident_positions_use_reference_distance():
    t = build_link_table([Position(2, 2), Position(2, 2)], QUIET, 0.0, 1)
    assert t(0, 1) == -40.0


def test_closed_form_at_ten_metres():
    t = build_link_table([Position(0, 0), Position(10, 0)], QUIET, 0.0, 1)
    assert t(0, 1) == round(-40.0 - 10 * QUIET.path_loss_exponent, 1)


def test_asymmetry_bound_over_seeded_draws():
    params = RadioParams(symmetry_sigma=8.0)  # far wider than the bound, so the clamp matters
    worst = 0.0
    for seed in range(10_000):
        t = build_link_table([Position(0, 0), Position(3, 0)], params, 0.0, seed)
        worst = max(worst, t.max_asymmetry())
    assert worst <= 5.0
    assert worst > 4.0


def test_table_determinism_and_quantization():
    rng = np.random.default_rng(3)
    pos = [Position(*rng.uniform(0, 50, 2)) for _ in range(100)]
    a = build_link_table(pos, RadioParams(), 0.0, 42)
    b = build_link_table(pos, RadioParams(), 0.0, 42)
    assert a == b
    assert a != build_link_table(pos, RadioParams(), 0.0, 43)
    assert np.allclose(a.rssi * 10, np.round(a.rssi * 10))
    assert a.max_asymmetry() <= 5.0
    assert a.rssi.min() >= -120.0


def test_shadowing_is_symmetric():
    rng = np.random.default_rng(5)
    pos = [Position(*rng.uniform(0, 30, 2)) for _ in range(20)]
    t = build_link_table(pos, RadioParams(symmetry_sigma=0.0), 0.0, 9)
    assert np.array_equal(t.rssi, t.rssi.T)


def test_prr_anchor_points():
    p = RadioParams()
    assert reception_probability(-87.0, p, -87.0) == 0.95
    assert reception_probability(-94.0, p, -87.0) == 0.0
    assert reception_probability(-90.5, p, -87.0) == pytest.approx(0.425)
    assert reception_probability(-87.0001, p, -87.0) == pytest.approx(0.85, abs=1e-4)
    assert reception_probability(-100.0, p, -87.0) == 0.0


@given(st.floats(-130, 20), st.floats(-130, 20), st.floats(0.01, 1.0))
def test_prr_monotone(a, b, plateau):
    p = RadioParams(prr_plateau=plateau)
    lo, hi = sorted((a, b))
    assert reception_probability(lo, p, -87.0) <= reception_probability(hi, p, -87.0)


def test_params_validation():
    with pytest.raises(ConfigError, match="path_loss_exponent"):
        RadioParams(path_loss_exponent=7).validate()
    with pytest.raises(ConfigError, match="gray_floor"):
        RadioParams(gray_floor=-80).validate(-87.0)
    with pytest.raises(ConfigError, match="prr_plateau"):
        RadioParams(prr_plateau=0).validate()


def _table(values):
    return LinkTable(np.array(values, dtype=float))


def test_power_sum():
    assert power_sum_dbm([-80.0, -80.0]) == pytest.approx(-80.0 + 10 * math.log10(2))
    assert power_sum_dbm([]) == -math.inf


def test_single_transmitter_delivered_at_plateau_rate():
    table = _table([[0, -40], [-40, 0]])
    rng = np.random.default_rng(0)
    t = Transmission(0, "f", 0, 100)
    hits = sum(bool(resolve_receptions([t], 1, table, RadioParams(), rng)) for _ in range(10_000))
    assert abs(hits / 10_000 - 0.95) < 0.01


def test_equal_rssi_collide():
    table = _table([[0, -60, -120], [-60, 0, -60], [-120, -60, 0]])
    a, b = Transmission(0, "a", 0, 100), Transmission(2, "b", 50, 100)
    rng = np.random.default_rng(0)
    assert all(resolve_receptions([a, b], 1, table, RadioParams(), rng) == [] for _ in range(100))


def test_capture_of_strong_frame():
    table = _table([[0, -50, -120], [-50, 0, -80], [-120, -80, 0]])
    a, b = Transmission(0, "strong", 0, 100), Transmission(2, "weak", 0, 100)
    # power-sum oracle: -50 against a lone -80 interferer leaves 30 dB >= 3 dB margin
    assert -50 - power_sum_dbm([-80]) >= 3
    rng = np.random.default_rng(1)
    got = [resolve_receptions([a, b], 1, table, RadioParams(), rng) for _ in range(10_000)]
    assert all(g in ([], ["strong"]) for g in got)
    assert abs(sum(1 for g in got if g) / 10_000 - 0.95) < 0.01


def test_capture_margin_boundary():
    table = _table([[0, -60, -120], [-60, 0, -63], [-120, -63, 0]])
    a, b = Transmission(0, "a", 0, 10), Transmission(2, "b", 0, 10)
    ideal = RadioParams(prr_plateau=1.0)
    assert resolve_receptions([a, b], 1, table, ideal, np.random.default_rng(0)) == ["a"]
    table2 = _table([[0, -60, -120], [-60, 0, -62.9], [-120, -62.9, 0]])
    assert resolve_receptions([a, b], 1, table2, ideal, np.random.default_rng(0)) == []


def test_half_duplex():
    table = _table([[0, -40], [-40, 0]])
    a, b = Transmission(0, "a", 0, 100), Transmission(1, "b", 10, 100)
    assert resolve_receptions([a, b], 1, table, RadioParams(prr_plateau=1.0), np.random.default_rng(0)) == []


def test_inaudible_ignored_and_ideal_channel():
    table = _table([[0, -95, -120], [-95, 0, -70], [-120, -70, 0]])
    a, b = Transmission(0, "a", 0, 10), Transmission(2, "b", 0, 10)
    # -95 is below the floor: neither audible nor interfering
    p = RadioParams(prr_plateau=1.0)
    assert resolve_receptions([a, b], 1, table, p, np.random.default_rng(0)) == ["b"]
    table2 = _table([[0, -70, -120], [-70, 0, -70], [-120, -70, 0]])
    got = decodable([a, b], 1, table2, RadioParams(ideal_channel=True), np.random.default_rng(0))
    assert {t.frame for t in got} == {"a", "b"}
