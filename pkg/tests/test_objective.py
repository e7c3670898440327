import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpopt.objective import (
    UNIT_WEIGHTS,
    EmptySelectionError,
    QcqpForm,
    SelectionMask,
    TimeAggregates,
    assemble_qcqp,
    binarity_residual,
    blur_per_step,
    composite_G_D,
    composite_value,
    f1_location,
    f2_visual_range,
    f3_motion_blur,
    normalized_weights,
    ratio_terms,
    resolve_weights,
)
from cpopt.scenario import CameraConstants, ScenarioConfig, generate_scenario, scenario_from_arrays
from cpopt.selector import mask_table
from conftest import make_instance
from oracles import composite_loop, f1_loop, f2_loop, f3_loop


def test_selection_mask_validation():
    m = SelectionMask((1, 0, 1), 2)
    assert m.selected == [0, 2]
    with pytest.raises(ValueError):
        SelectionMask((1, 1, 1), 2)
    with pytest.raises(ValueError):
        SelectionMask((1, 2), 2)
    with pytest.raises(ValueError):
        SelectionMask((1,), 0)


def test_f1_single_static_helper():
    # ego and helper at rest, 40 m apart, 3 grid points
    sc = scenario_from_arrays([40.0], [0.0], ego_v=0.0, horizon_T=1.0, dt=0.5)
    assert f1_location(sc, [1]) == pytest.approx(120.0)
    assert f1_location(sc, [0]) == 0.0


def test_f2_and_f3_examples():
    sc = scenario_from_arrays([40.0, 90.0], [30.0, 30.0], ego_v=30.0, horizon_T=1.0, dt=0.5)
    # helper 1 sees helper 2 at 50 m on all 3 grid points
    assert f2_visual_range(sc, [1, 0], r_max=150) == pytest.approx(1 / 150.0)
    with pytest.raises(EmptySelectionError):
        f2_visual_range(sc, [0, 0])
    cam = sc.camera
    assert f3_motion_blur(sc, [0, 1]) == pytest.approx(3 * 30 * cam.e * cam.r / (cam.z * cam.u))
    assert f3_motion_blur(sc, [0, 0]) == 0.0


def test_criteria_match_loop_oracles():
    for seed in range(10):
        sc = generate_scenario(ScenarioConfig(n_helpers=6), seed)
        for mask in itertools.product((0, 1), repeat=6):
            if not any(mask):
                continue
            assert f1_location(sc, mask) == pytest.approx(f1_loop(sc, mask), rel=1e-12)
            assert f2_visual_range(sc, mask, 150) == pytest.approx(f2_loop(sc, mask, 150), rel=1e-12)
            assert f3_motion_blur(sc, mask) == pytest.approx(f3_loop(sc, mask), rel=1e-12)


def test_general_blur_reduces_to_parallel_at_phi_zero():
    v = np.array([20.0, 30.0, 40.0])
    cam = CameraConstants(Q=12.0, phi=0.0)
    assert np.allclose(blur_per_step(v, cam, "general"), blur_per_step(v, cam, "parallel"))


def test_general_blur_matches_loop():
    cam = CameraConstants(Q=40.0, phi=0.3)
    sc = scenario_from_arrays([30.0, 70.0], [22.0, 35.0], horizon_T=1.0, dt=0.5, camera=cam)
    assert f3_motion_blur(sc, [1, 1], "general") == pytest.approx(f3_loop(sc, [1, 1], "general"), rel=1e-12)
    with pytest.raises(ValueError):
        blur_per_step(1.0, cam, "sideways")


def test_aggregates_reject_nonpositive_range():
    with pytest.raises(ValueError):
        TimeAggregates([1.0, 2.0], [3.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        TimeAggregates([1.0], [1.0, 2.0], [1.0])


def test_composite_routes_agree_with_loop():
    for rep in range(5):
        sc, agg, w = make_instance(5, rep)
        for weights in (UNIT_WEIGHTS, w):
            for mask in itertools.product((0, 1), repeat=5):
                if not any(mask):
                    continue
                direct = composite_loop(sc, mask, weights, 150.0)
                G, D = composite_G_D(agg, sc.camera, mask, weights)
                assert G / D == pytest.approx(direct, rel=1e-11)
                assert composite_value(agg, sc.camera, mask, weights) == pytest.approx(direct, rel=1e-11)


def test_empty_selection_raises():
    sc, agg, _ = make_instance(4, 0)
    with pytest.raises(EmptySelectionError):
        composite_G_D(agg, sc.camera, [0, 0, 0, 0])
    with pytest.raises(EmptySelectionError):
        composite_value(agg, sc.camera, [0, 0, 0, 0])


@pytest.mark.parametrize("n", [4, 8, 12])
def test_qcqp_fidelity_all_masks(n):
    sc, agg, w = make_instance(n, n)
    rng = np.random.default_rng(n)
    for weights in (UNIT_WEIGHTS, w):
        eta = float(rng.uniform(0.1, 10.0))
        form = assemble_qcqp(agg, sc.camera, eta, weights)
        masks = mask_table(n)
        G, D = ratio_terms(agg, sc.camera, masks, weights)
        direct = G - eta * D
        quad = form.values(masks)
        rel = np.abs(quad - direct) / np.maximum(1.0, np.abs(direct))
        assert rel.max() <= 1e-9


def test_qcqp_value_matches_values_and_symmetric():
    sc, agg, w = make_instance(6, 1)
    form = assemble_qcqp(agg, sc.camera, 1.5, w)
    assert np.array_equal(form.P0, form.P0.T)
    masks = mask_table(6)
    assert np.allclose([form.value(m) for m in masks], form.values(masks), rtol=1e-13)


def test_qcqp_is_indefinite_in_general():
    sc, agg, w = make_instance(8, 2)
    form = assemble_qcqp(agg, sc.camera, 1.0, w)
    ev = np.linalg.eigvalsh(form.P0)
    assert ev[0] < 0 < ev[-1]


def test_qcqp_constraints_encode_cardinality_and_binarity():
    sc, agg, w = make_instance(5, 0)
    form = assemble_qcqp(agg, sc.camera, 1.0, w, max_selected=2)
    cons = form.constraints()
    assert len(cons) == 6
    for bits in itertools.product((0, 1), repeat=5):
        s = np.array(bits, float)
        vals = [s @ P @ s + q @ s + h for P, q, h in cons]
        assert (vals[0] <= 0) == (sum(bits) <= 2)
        assert all(abs(v) < 1e-15 for v in vals[1:])


def test_qcqp_rejects_asymmetric_and_bad_eta():
    with pytest.raises(ValueError):
        QcqpForm(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros(2), 0.0, 1)
    sc, agg, w = make_instance(3, 0)
    with pytest.raises(ValueError):
        assemble_qcqp(agg, sc.camera, math.inf, w)


def test_binarity_residual():
    assert binarity_residual([0, 1, 1, 0]) == 0.0
    assert binarity_residual([0.5, 0.5]) < 0
    # outside the unit box the aggregated residual can vanish for non-binary s
    assert binarity_residual([-0.2, 0.4]) == pytest.approx(0.0, abs=1e-15)


def test_normalized_weights_scale_terms_to_all_selected():
    sc, agg, _ = make_instance(7, 4)
    w1, w2, w3 = normalized_weights(agg, sc.camera)
    ones = np.ones(7)
    assert w1 * float(ones @ agg.xbar) == pytest.approx(1.0)
    assert w2 / float(ones @ agg.Rbar) == pytest.approx(1.0)
    assert w3 * sc.camera.er / sc.camera.zu * float(ones @ agg.vterm) == pytest.approx(1.0)
    assert composite_value(agg, sc.camera, ones, (w1, w2, w3)) == pytest.approx(3.0)


def test_resolve_weights():
    sc, agg, _ = make_instance(3, 0)
    assert resolve_weights("unit", agg, sc.camera) == UNIT_WEIGHTS
    assert resolve_weights([1, 2, 3], agg, sc.camera) == (1.0, 2.0, 3.0)
    with pytest.raises(ValueError):
        resolve_weights([1, 2], agg, sc.camera)


@given(st.integers(2, 9), st.integers(0, 10_000), st.floats(0.0, 50.0))
def test_qcqp_fidelity_property(n, seed, eta):
    sc, agg, w = make_instance(n, seed)
    form = assemble_qcqp(agg, sc.camera, eta, w)
    rng = np.random.default_rng(seed)
    s = (rng.random((16, n)) < 0.5).astype(float)
    G, D = ratio_terms(agg, sc.camera, s, w)
    assert np.allclose(form.values(s), G - eta * D, rtol=1e-9, atol=1e-9)
