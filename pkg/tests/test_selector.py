import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpopt.objective import UNIT_WEIGHTS, QcqpForm, TimeAggregates, assemble_qcqp, ratio_terms
from cpopt.scenario import CameraConstants, scenario_from_arrays
from cpopt.selector import (
    DinkelbachError,
    TooManyHelpersError,
    default_lambda,
    dinkelbach_select,
    dual_bound,
    dual_value,
    mask_table,
    proximity_mask,
    select_baseline,
    solve_subproblem_exact,
)
from conftest import make_instance
from oracles import all_masks, ratio_argmin_bruteforce, subproblem_double_loop


def _random_form(n, seed, M=None):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    return QcqpForm((A + A.T) / 2, rng.normal(size=n), float(rng.normal()), M or n)


def test_mask_table_is_lexicographic():
    t = mask_table(3)
    assert [tuple(int(b) for b in r) for r in t] == sorted(tuple(r) for r in
                                                           [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])
    with pytest.raises(ValueError):
        t[0, 0] = 1.0


@pytest.mark.parametrize("n,M", [(1, 1), (4, 2), (7, 3), (9, 9)])
def test_subproblem_matches_double_loop(n, M):
    for seed in range(5):
        form = _random_form(n, seed, M)
        mask, val = solve_subproblem_exact(form, M)
        ref_mask, ref_val = subproblem_double_loop(form, M)
        assert val == pytest.approx(ref_val, rel=1e-12, abs=1e-12)
        assert tuple(mask) == ref_mask


def test_subproblem_tie_goes_to_lexicographically_smallest():
    form = QcqpForm(np.zeros((3, 3)), np.full(3, -1.0), 0.0, 1)
    mask, val = solve_subproblem_exact(form, 1)
    # (0,0,1) < (0,1,0) < (1,0,0)
    assert tuple(mask) == (0, 0, 1) and val == -1.0


def test_subproblem_chunked_path_matches_table_path(monkeypatch):
    import cpopt.selector as sel

    form = _random_form(10, 3, 4)
    ref = solve_subproblem_exact(form, 4)
    monkeypatch.setattr(sel, "_TABLE_MAX_N", 4)
    monkeypatch.setattr(sel, "_CHUNK_BITS", 5)
    got = solve_subproblem_exact(form, 4)
    assert tuple(got[0]) == tuple(ref[0]) and got[1] == ref[1]


def test_subproblem_limits():
    with pytest.raises(TooManyHelpersError):
        solve_subproblem_exact(_random_form(26, 0), 2)
    with pytest.raises(TooManyHelpersError):
        solve_subproblem_exact(_random_form(6, 0), 2, n_cap=5)
    with pytest.raises(ValueError):
        solve_subproblem_exact(_random_form(3, 0), 0)


def test_single_helper_selects_it():
    sc, agg, w = make_instance(1, 0)
    res = dinkelbach_select(agg, sc.camera, 1, weights=w)
    assert tuple(res.mask) == (1,)
    assert res.iterations == 1


def test_huge_eta_picks_largest_ranges():
    # G - eta*D with eta -> inf rewards the largest summed ranges
    agg = TimeAggregates([1.0, 1.0, 1.0, 1.0], [5.0, 50.0, 20.0, 40.0], [1.0, 1.0, 1.0, 1.0])
    form = assemble_qcqp(agg, CameraConstants(), 1e9, UNIT_WEIGHTS, 2)
    mask, _ = solve_subproblem_exact(form, 2)
    assert tuple(mask) == (0, 1, 0, 1)


@pytest.mark.parametrize("weights_kind", ["unit", "normalized"])
def test_dinkelbach_matches_bruteforce(weights_kind):
    for rep in range(20):
        sc, agg, w = make_instance(8, rep)
        weights = UNIT_WEIGHTS if weights_kind == "unit" else w
        for M in (1, 3, 8):
            res = dinkelbach_select(agg, sc.camera, M, weights=weights)
            ref_mask, ref_val = ratio_argmin_bruteforce(agg, sc.camera, M, weights)
            assert res.ratio == pytest.approx(ref_val, rel=1e-9)
            assert 1 <= res.mask.sum() <= M


def test_dinkelbach_trace_is_monotone_and_converged():
    sc, agg, w = make_instance(10, 3)
    res = dinkelbach_select(agg, sc.camera, 4, weights=w)
    etas = [s.eta for s in res.trace]
    assert all(b <= a + 1e-12 for a, b in zip(etas, etas[1:]))
    assert all(s.F <= 1e-12 for s in res.trace)
    assert abs(res.trace[-1].F) < res.epsilon


def test_dinkelbach_errors():
    sc, agg, w = make_instance(10, 3)
    with pytest.raises(ValueError):
        dinkelbach_select(agg, sc.camera, 3, epsilon=0)
    with pytest.raises(ValueError):
        dinkelbach_select(agg, sc.camera, 0)
    # start far from optimal so one iteration cannot certify
    with pytest.raises(DinkelbachError) as info:
        dinkelbach_select(agg, sc.camera, 3, epsilon=1e-300, k_max=1, weights=w)
    assert len(info.value.trace) == 1


def test_dual_indefinite_at_zero_is_minus_infinity():
    form = QcqpForm(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2), 0.0, 2)
    val, s = dual_value(form, np.zeros(3))
    assert val == -math.inf and s is None


def test_dual_positive_definite_example():
    form = QcqpForm(np.eye(2), np.zeros(2), 1.0, 2)
    val, s = dual_value(form, np.zeros(3))
    assert val == pytest.approx(1.0)
    assert np.allclose(s, 0.0)


def test_dual_range_condition():
    # singular P with q outside its range is unbounded below
    form = QcqpForm(np.diag([1.0, 0.0]), np.array([0.0, 1.0]), 0.0, 2)
    assert dual_value(form, np.zeros(3))[0] == -math.inf
    with pytest.raises(ValueError):
        dual_value(form, -np.ones(3))
    with pytest.raises(ValueError):
        dual_value(form, np.zeros(2))


def test_default_lambda_is_in_domain():
    for seed in range(10):
        form = _random_form(6, seed, 3)
        assert math.isfinite(dual_value(form, default_lambda(form))[0])


@pytest.mark.parametrize("seed", range(8))
def test_dual_bound_is_sound(seed):
    sc, agg, w = make_instance(7, seed)
    res = dinkelbach_select(agg, sc.camera, 3, weights=w)
    form = assemble_qcqp(agg, sc.camera, res.ratio, w, 3)
    cert = dual_bound(form, steps=100)
    primal = solve_subproblem_exact(form, 3)[1]
    assert cert.bound <= primal + 1e-9 * max(1.0, abs(primal))
    assert cert.feasible_gap >= -1e-9 * max(1.0, abs(primal))


@given(st.integers(1, 7), st.integers(0, 10_000))
def test_dual_bound_sound_property(n, seed):
    form = _random_form(n, seed, max(1, n // 2))
    cert = dual_bound(form, steps=30)
    _, primal = subproblem_double_loop(form, form.max_selected)
    assert cert.bound <= primal + 1e-9 * max(1.0, abs(primal))


def test_baseline_proximity_example():
    sc = scenario_from_arrays([10.0, 50.0, 120.0], [30.0, 25.0, 35.0])
    s = select_baseline(sc, 2, "proximity")
    assert [sc.x0[i] for i in np.flatnonzero(s)] == [10.0, 50.0]
    assert np.array_equal(s, proximity_mask(3, 2))


def test_baseline_min_velocity_and_random():
    sc = scenario_from_arrays([10.0, 50.0, 120.0, 200.0], [30.0, 22.0, 35.0, 21.0])
    assert tuple(select_baseline(sc, 2, "min_velocity")) == (0, 1, 0, 1)
    r = select_baseline(sc, 2, "random", seed=5)
    assert r.sum() == 2
    assert np.array_equal(r, select_baseline(sc, 2, "random", seed=5))
    assert select_baseline(sc, 9, "proximity").sum() == 4
    with pytest.raises(ValueError):
        select_baseline(sc, 2, "fastest")


@given(st.integers(2, 8), st.integers(0, 5_000), st.integers(1, 8))
def test_selection_optimal_over_all_masks_property(n, seed, M):
    sc, agg, w = make_instance(n, seed)
    M = min(M, n)
    res = dinkelbach_select(agg, sc.camera, M, weights=w)
    masks = np.array(all_masks(n, M), dtype=float)
    G, D = ratio_terms(agg, sc.camera, masks, w)
    assert res.ratio <= float(np.min(G / D)) * (1 + 1e-9)
