import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpopt.channel import (
    CommConfig,
    DeadLinkError,
    LINK_CSV_FIELDS,
    LinkState,
    PoolExhaustedError,
    collision_prob,
    collision_prob_mc,
    dbm_to_watts,
    energy,
    erf,
    erf_series,
    erf_series_remainder_bound,
    link_errors,
    link_report,
    mw_to_dbm,
    path_loss,
    rb_pool,
    sensing_error,
    sensing_error_mc,
    sensing_error_taylor,
    sensing_margin,
    throughput,
    total_error,
)
from oracles import erf_quad, link_delta


def _link_at_margin(cfg, Q, d=100.0):
    """Link whose sensing margin is exactly Q."""
    p = Q * cfg.sigma_sh * math.sqrt(2) + path_loss(cfg, d) + cfg.sh_mean + cfg.P_SEN
    return LinkState(d, float(p))


def test_rb_pool_examples():
    assert rb_pool(CommConfig(theta=10, W_subCh=5, CBR=0)) == 50
    assert rb_pool(CommConfig(theta=10, W_subCh=5, CBR=0.5)) == 25
    assert rb_pool(CommConfig(CBR=0.999)) < 1
    with pytest.raises(ValueError):
        CommConfig(CBR=1.0)


def test_collision_examples():
    assert collision_prob(50, 1) == 0.0
    assert collision_prob(50, 2) == pytest.approx(0.02, abs=1e-15)
    assert abs(collision_prob(50, 5) - (1 - 0.98**4)) <= 1e-12
    with pytest.raises(PoolExhaustedError):
        collision_prob(0.5, 3)
    with pytest.raises(ValueError):
        collision_prob(50, 0)


def test_collision_monte_carlo():
    n = 200_000
    p = collision_prob(50, 5)
    mc = collision_prob_mc(50, 5, n, np.random.default_rng(1))
    assert abs(mc - p) <= 3 * math.sqrt(p * (1 - p) / n)
    assert collision_prob_mc(50, 1, 10, np.random.default_rng(1)) == 0.0


def test_sensing_error_examples():
    cfg = CommConfig()
    assert sensing_error(cfg, _link_at_margin(cfg, 0.0)) == pytest.approx(0.5, abs=1e-12)
    assert sensing_error(cfg, _link_at_margin(cfg, 1.0)) == pytest.approx(0.5 * (1 - 0.8427007929497149), abs=1e-12)
    assert sensing_error(cfg, _link_at_margin(cfg, 1.0)) == pytest.approx(0.0786, abs=1e-4)
    huge = LinkState(100.0, float(_link_at_margin(cfg, 0.0).P_tx + 20 * cfg.sigma_sh))
    assert sensing_error(cfg, huge) < 1e-9


def test_sensing_error_monte_carlo():
    cfg = CommConfig()
    link = LinkState(200.0, 10.0)
    n = 200_000
    p = sensing_error(cfg, link)
    mc = sensing_error_mc(cfg, link, n, np.random.default_rng(4))
    assert abs(mc - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_erf_matches_quadrature():
    for x in np.linspace(-4, 4, 81):
        assert abs(float(erf(x)) - erf_quad(float(x))) <= 1e-10


def test_taylor_examples():
    cfg = CommConfig()
    assert sensing_error_taylor(cfg, _link_at_margin(cfg, 0.0), 3) == pytest.approx(0.5, abs=1e-12)
    link = _link_at_margin(cfg, 0.5)
    approx = sensing_error_taylor(cfg, link, 0)
    exact = sensing_error(cfg, link)
    assert approx == pytest.approx(0.5 * (1 - 1 / math.sqrt(math.pi)), abs=1e-9)
    assert approx == pytest.approx(0.2179, abs=1e-4) and exact == pytest.approx(0.2398, abs=1e-4)
    # the error probability carries half the erf remainder
    half_bound = 0.5 * float(erf_series_remainder_bound(0.5, 0))
    assert half_bound == pytest.approx(0.0235, abs=1e-4)
    assert abs(approx - exact) <= half_bound
    assert abs(float(erf_series(1.0, 8)) - float(erf(1.0))) <= 1e-6
    with pytest.raises(ValueError):
        erf_series(0.1, -1)


@pytest.mark.parametrize("order", [0, 1, 2, 4])
def test_taylor_within_remainder_bound(order):
    Q = np.linspace(-1, 1, 201)
    err = np.abs(erf_series(Q, order) - erf(Q))
    assert np.all(err <= erf_series_remainder_bound(Q, order) + 1e-15)


def test_total_error_examples():
    assert total_error(0.0, 0.7) == 0.0
    assert total_error(0.02, 0.5) == pytest.approx(0.01)
    assert total_error(1.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        total_error(1.2, 0.5)


def test_throughput_examples():
    cfg = CommConfig(R_ch=1000)
    assert throughput(cfg, LinkState(50, 20, 0), 0.1) == 0
    assert throughput(cfg, LinkState(50, 20, 10), 0.1) == pytest.approx(9000)
    assert throughput(cfg, LinkState(50, 20, 20), 0.1) == pytest.approx(2 * throughput(cfg, LinkState(50, 20, 10), 0.1))


def test_energy_examples():
    cfg = CommConfig(T=0.1)
    link = LinkState(50, 20.0)  # 100 mW
    assert energy(cfg, link, 0.0) == pytest.approx(0.1 * 0.1)
    assert energy(cfg, link, 0.5) == pytest.approx(2 * 0.1 * 0.1)
    with pytest.raises(DeadLinkError):
        energy(cfg, link, 1.0)


def test_unit_conversions():
    assert float(mw_to_dbm(1000.0)) == pytest.approx(30.0)
    assert float(dbm_to_watts(30.0)) == pytest.approx(1.0)
    assert float(dbm_to_watts(mw_to_dbm(250.0))) == pytest.approx(0.25)


def test_link_errors_vector_matches_oracle():
    cfg = CommConfig()
    d = np.array([30.0, 120.0, 400.0, 900.0])
    P = np.array([5.0, 50.0, 200.0, 20.0])
    dcol, dsen, der = link_errors(cfg, d, mw_to_dbm(P), 4)
    for i in range(4):
        assert der[i] == pytest.approx(link_delta(cfg, d[i], P[i], 4, rb_pool(cfg)), rel=1e-12, abs=1e-300)
    assert dcol == collision_prob(rb_pool(cfg), 4)
    with pytest.raises(ValueError):
        link_errors(cfg, d, mw_to_dbm(P), 4, erf_mode="pade")


def test_link_report_rows():
    cfg = CommConfig()
    rows = link_report(cfg, [LinkState(100, 20, 10), LinkState(300, 15, 30)], 2)
    assert len(rows) == 2 and set(rows[0]) == set(LINK_CSV_FIELDS)
    r = rows[1]
    assert r["delta_er"] == pytest.approx(r["delta_col"] * r["delta_sen"])
    assert r["throughput"] == pytest.approx(cfg.R_ch * 30 * (1 - r["delta_er"]))


def test_config_validation_and_floor():
    with pytest.raises(ValueError):
        CommConfig(gamma=5)
    with pytest.raises(ValueError):
        CommConfig(sigma_sh=0)
    with pytest.raises(ValueError):
        CommConfig(P_T=0)
    assert CommConfig(P_T=500).power_floor(5) == pytest.approx(1.0)
    assert CommConfig(P_T=500).power_floor(1000) == pytest.approx(0.5)
    assert CommConfig(P_min=2.0).power_floor(5) == 2.0
    assert CommConfig.from_dict({"gamma": 3.0}).gamma == 3.0
    with pytest.raises(ValueError):
        LinkState(0.0, 10.0)


distances = st.floats(5.0, 2000.0)
powers = st.floats(-10.0, 33.0)


@given(distances, powers, st.floats(0.1, 10.0))
def test_sensing_error_monotone_in_power_and_distance(d, p, step):
    cfg = CommConfig()
    base = sensing_error(cfg, LinkState(d, p))
    assert sensing_error(cfg, LinkState(d, p + step)) <= base
    assert sensing_error(cfg, LinkState(d * (1 + step / 10), p)) >= base


@given(distances, powers, st.floats(2.0, 3.9))
def test_sensing_error_monotone_in_gamma(d, p, g):
    lo = sensing_error(CommConfig(gamma=g), LinkState(max(d, 1.0), p))
    hi = sensing_error(CommConfig(gamma=g + 0.1), LinkState(max(d, 1.0), p))
    assert hi >= lo or d == 1.0


@given(st.floats(1.0, 500.0), st.integers(1, 20))
def test_collision_monotone(w_T, M):
    assert collision_prob(w_T, M + 1) >= collision_prob(w_T, M)
    assert collision_prob(w_T + 1, M) <= collision_prob(w_T, M)


@given(st.floats(0, 100), st.floats(0, 0.99), st.floats(0, 0.99))
def test_throughput_and_energy_monotone(w, a, b):
    cfg = CommConfig()
    lo, hi = min(a, b), max(a, b)
    link = LinkState(100.0, 20.0, w)
    assert throughput(cfg, LinkState(100.0, 20.0, w + 1), lo) >= throughput(cfg, link, lo)
    assert energy(cfg, link, hi) >= energy(cfg, link, lo)


@given(distances, powers)
def test_margin_consistent_with_error(d, p):
    cfg = CommConfig()
    Q = float(sensing_margin(cfg, d, p))
    assert sensing_error(cfg, LinkState(d, p)) == pytest.approx(0.5 * math.erfc(Q), rel=1e-9, abs=1e-300)
