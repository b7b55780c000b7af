# -*- coding: utf-8 -*-
#
# name:             test_synth.py
# author:           ulm_pipeline contributors
# created on:       03/06/2026
#

"""
Functional tests for ulm_pipeline's synth module.
"""

import math
import os

import numpy as np
from pytest import approx, raises

from ulm_pipeline.register import ProbabilityMatrix, sinkhorn_normalize
from ulm_pipeline.synth import (
    Scenario,
    SimulationError,
    Vessel,
    assignment_cost,
    evaluate,
    exhaustive_assign,
    hungarian_assign,
    read_scenario,
    reference_sinkhorn,
    render_frame,
    simulate,
)
from ulm_pipeline.tracks import Track
from ulm_pipeline.validation import ValidationError

from .helpers import make_bubble_set


DEMO_SCENARIO = os.path.join(os.path.dirname(__file__), os.pardir,
                             'scenarios', 'demo.txt')


def _write(tmpdir, text, name='scenario.txt'):
    path = tmpdir.join(name)
    path.write(text)
    return str(path)


def _track(track_id, first_frame, positions):
    return Track(track_id, [(first_frame + k, p)
                            for k, p in enumerate(positions)],
                 pixel_size=0.1, frame_rate=100.0)


##
# Vessel Tests

def test_vessel_centerline_moves_one_pixel_per_frame_at_10_mm_per_s():
    """10 mm/s at 0.1 mm and 100 Hz is one pixel per frame."""
    vessel = Vessel((10.0, 0.0), (10.0, 50.0), 4.0, 0.01)

    assert vessel.step_px(0.0, 0.1, 100.0) == approx(1.0)


def test_vessel_profile_is_parabolic():
    """Speed falls off parabolically to zero at the wall."""
    vessel = Vessel((0.0, 0.0), (0.0, 10.0), 4.0, 0.02)

    assert vessel.speed_at(0.0) == approx(0.02)
    assert vessel.speed_at(2.0) == approx(0.015)
    assert vessel.speed_at(-4.0) == approx(0.0)


def test_vessel_geometry():
    """Vessel axis, normal, length and containment."""
    vessel = Vessel((0.0, 0.0), (30.0, 40.0), 2.0, 0.01)

    assert vessel.length == approx(50.0)
    assert np.allclose(vessel.axis, (0.6, 0.8))
    assert abs(vessel.axis @ vessel.normal) < 1e-12
    assert vessel.contains((15.0, 20.0))
    assert not vessel.contains((15.0, 25.0))
    assert not vessel.contains((-1.0, 0.0))
    assert vessel.contains((-1.0, 0.0), margin=1.5)


##
# Scenario Tests

def test_scenario_needs_a_vessel_for_moving_bubbles():
    """Moving bubbles without a vessel fail validation."""
    with raises(ValidationError):
        Scenario(n_bubbles=2)


def test_scenario_rejects_thin_or_still_vessels():
    """Vessel radius and speed are validated."""
    with raises(ValidationError):
        Scenario(vessels=[Vessel((0.0, 0.0), (0.0, 10.0), 0.5, 0.01)])
    with raises(ValidationError):
        Scenario(vessels=[Vessel((0.0, 0.0), (0.0, 10.0), 3.0, 0.0)])


def test_read_demo_scenario():
    """The bundled demo scenario parses."""
    scenario = read_scenario(DEMO_SCENARIO)

    assert (scenario.height, scenario.width) == (96, 96)
    assert scenario.n_frames == 500
    assert scenario.n_bubbles == 4
    assert scenario.seed == 7
    assert [v.peak_speed for v in scenario.vessels] == \
        [0.005, 0.010, 0.015, 0.020]


def test_read_scenario_seed_override(tmpdir):
    """An explicit seed overrides the file's."""
    path = _write(tmpdir, 'seed = 4\nn_frames = 3\n')

    assert read_scenario(path).seed == 4
    assert read_scenario(path, seed=9).seed == 9


def test_read_scenario_reads_static_bubbles(tmpdir):
    """static_bubble lines repeat."""
    path = _write(tmpdir, 'static_bubble = 10, 12.5\n'
                          'static_bubble = 3, 4\n')

    assert read_scenario(path).static_bubbles == [(10.0, 12.5), (3.0, 4.0)]


def test_read_scenario_names_unknown_keys_and_lines(tmpdir):
    """Unknown keys are reported with file and line."""
    path = _write(tmpdir, 'height = 32\n\nvelocity = 3\n')

    with raises(ValidationError) as error:
        read_scenario(path)
    assert error.value.details['fieldname'] == 'velocity'
    assert '{}:3'.format(path) in error.value.details['message']


def test_read_scenario_rejects_short_vessel_lines(tmpdir):
    """Vessel lines need six numbers."""
    path = _write(tmpdir, 'vessel = 1, 2, 3\n')

    with raises(ValidationError) as error:
        read_scenario(path)
    assert error.value.details['fieldname'] == 'vessel'
    assert '{}:1'.format(path) in error.value.details['message']


def test_read_scenario_rejects_non_numbers(tmpdir):
    """Scalar fields must be numbers."""
    path = _write(tmpdir, 'width = wide\n')

    with raises(ValidationError) as error:
        read_scenario(path)
    assert error.value.details['fieldname'] == 'width'


##
# Simulation Tests

def test_render_frame_peaks_at_the_blob_center():
    """A blob peaks at its amplitude on its center."""
    frame = render_frame(9, 9, [(4.0, 4.0)], [2.0], 1.5)

    assert frame.shape == (9, 9)
    assert frame[4, 4] == approx(2.0)
    assert np.unravel_index(frame.argmax(), frame.shape) == (4, 4)
    assert np.allclose(frame, frame.T)


def test_static_bubble_yields_identical_frames():
    """A static scatterer renders the same frame every time."""
    scenario = Scenario(height=20, width=20, n_frames=5,
                        static_bubbles=[(10.0, 10.0)])
    stack, truth = simulate(scenario)

    assert stack.n_frames == 5
    for t in range(1, 5):
        assert np.array_equal(stack.frame(t), stack.frame(0))
    assert len(truth) == 1
    assert truth[0].velocities == [(0.0, 0.0)] * 4


def test_simulation_is_deterministic_for_a_seed():
    """Equal seeds give bit-identical stacks and truth."""
    scenario = Scenario(height=40, width=60, n_frames=10, n_bubbles=3,
                        noise_std=0.05, seed=5, vessels=[
                            Vessel((20.0, 5.0), (20.0, 55.0), 4.0, 0.01)])

    first, truth_a = simulate(scenario)
    second, truth_b = simulate(scenario)

    assert first.data.tobytes() == second.data.tobytes()
    assert [t.points for t in truth_a] == [t.points for t in truth_b]


def test_simulation_intensities_are_non_negative_float32():
    """Noisy frames are clipped at zero and stored as float32."""
    scenario = Scenario(height=30, width=30, n_frames=4, n_bubbles=1,
                        noise_std=0.5, seed=1, vessels=[
                            Vessel((15.0, 2.0), (15.0, 28.0), 3.0, 0.01)])
    stack, _ = simulate(scenario)

    assert stack.data.dtype == np.float32
    assert stack.data.min() >= 0.0


def test_simulation_rejects_crowded_vessels():
    """More bubbles than a vessel holds is a SimulationError."""
    scenario = Scenario(n_bubbles=3, vessels=[
        Vessel((10.0, 10.0), (10.0, 22.0), 3.0, 0.01)])

    with raises(SimulationError):
        simulate(scenario)


def test_single_bubble_travels_on_the_centerline():
    """A lone bubble rides the centerline at peak speed."""
    scenario = Scenario(height=40, width=80, n_frames=6, n_bubbles=1,
                        vessels=[Vessel((20.0, 5.0), (20.0, 75.0), 4.0,
                                        0.01)])
    _, truth = simulate(scenario)

    track = truth[0]
    rows = track.positions()[:, 0]
    assert np.allclose(rows, 20.0)
    assert np.allclose(np.diff(track.positions()[:, 1]), 1.0)
    assert track.velocities[0] == approx((0.0, 0.01))


def test_reentering_bubble_gets_a_new_identity():
    """Re-entering at the inlet starts a new truth track."""
    vessel = Vessel((10.0, 5.0), (10.0, 25.0), 3.0, 0.03)
    scenario = Scenario(height=20, width=30, n_frames=20, n_bubbles=1,
                        seed=2, vessels=[vessel])
    _, truth = simulate(scenario)

    assert len(truth) >= 2
    assert [t.id for t in truth] == list(range(len(truth)))
    assert sum(len(t) for t in truth) <= 20
    for track in truth:
        assert np.allclose(np.diff(track.positions()[:, 1]), 3.0)
        assert all(vessel.contains(p) for p in track.positions())
    for a, b in zip(truth, truth[1:]):
        assert b.first_frame > a.last_frame


def test_equal_vessels_carry_equal_lanes():
    """Vessels of equal geometry get the same lateral lanes."""
    scenario = Scenario(height=60, width=60, n_frames=2, n_bubbles=6,
                        seed=8, vessels=[
                            Vessel((15.0, 5.0), (15.0, 55.0), 4.0, 0.01),
                            Vessel((45.0, 5.0), (45.0, 55.0), 4.0, 0.01)])
    _, truth = simulate(scenario)

    lanes = {15.0: [], 45.0: []}
    for track in truth:
        row = track.points[0][1][0]
        axis = 15.0 if row < 30 else 45.0
        lanes[axis].append(round(row - axis, 9))

    assert sorted(lanes[15.0]) == sorted(lanes[45.0])
    assert sorted(abs(x) for x in lanes[15.0]) == approx([0.0, 2.4, 2.4])


##
# Oracle Tests

def test_hungarian_picks_the_diagonal():
    """A zero diagonal is the optimal assignment."""
    cost = np.array([[0.0, 5.0, 5.0], [5.0, 0.0, 5.0], [5.0, 5.0, 0.0]])

    assert hungarian_assign(cost) == [(0, 0), (1, 1), (2, 2)]


def test_hungarian_picks_the_free_anti_diagonal():
    """A zero anti-diagonal is the optimal assignment."""
    cost = np.array([[1.0, 0.0], [0.0, 1.0]])
    pairs = hungarian_assign(cost)

    assert pairs == [(0, 1), (1, 0)]
    assert assignment_cost(cost, pairs) == 0.0


def test_hungarian_matches_exhaustive_search():
    """Hungarian and exhaustive assignments cost the same."""
    rng = np.random.default_rng(12)
    for shape in [(6, 6), (3, 5), (5, 2)]:
        cost = rng.uniform(0.0, 10.0, shape)
        assert assignment_cost(cost, hungarian_assign(cost)) == approx(
            assignment_cost(cost, exhaustive_assign(cost)))
        assert len(hungarian_assign(cost)) == min(shape)


def test_hungarian_rejects_non_finite_costs():
    """Infinite costs are rejected."""
    with raises(ValidationError):
        hungarian_assign(np.array([[1.0, math.inf], [0.0, 1.0]]))


def test_hungarian_of_nothing_is_empty():
    """An empty cost matrix assigns nothing."""
    assert hungarian_assign(np.zeros((0, 3))) == []


def test_reference_sinkhorn_agrees_with_alternate_scaling():
    """Row/column scaling matches the scaling-vector form."""
    values = np.random.default_rng(13).uniform(0.1, 1.0, (5, 5))

    ours = sinkhorn_normalize(ProbabilityMatrix(values), 25, 0.0).values

    assert np.allclose(ours, reference_sinkhorn(values, 25), rtol=1e-12,
                       atol=1e-12)


##
# Evaluation Tests

def _truth():
    return [_track(k, 0, [(10.0 + 10 * k, 10.0 + c) for c in range(2)])
            for k in range(5)]


def test_evaluate_of_the_truth_is_perfect():
    """Scoring the truth against itself is perfect."""
    metrics = evaluate(_truth(), _truth(), 1.0)

    assert metrics.rmse == 0.0
    assert (metrics.precision, metrics.recall) == (1.0, 1.0)
    assert metrics.identity_accuracy == 1.0
    assert (metrics.n_matches, metrics.n_truth, metrics.n_links) == \
        (10, 10, 5)


def test_evaluate_measures_rmse_of_a_shift():
    """A 0.2 px shift gives an RMSE of 0.2 px."""
    shifted = [_track(t.id, 0, [(r + 0.2, c) for r, c in t.positions()])
               for t in _truth()]

    metrics = evaluate(shifted, _truth(), 1.0)

    assert metrics.rmse == approx(0.2)
    assert metrics.recall == 1.0
    assert metrics.identity_accuracy == 1.0


def test_evaluate_counts_missed_bubbles_against_recall():
    """Missing one of ten detections gives recall 0.9."""
    truth = _truth()
    detections = [make_bubble_set([t.points[f][1] for t in truth],
                                  frame_index=f) for f in range(2)]
    detections[1] = make_bubble_set([t.points[1][1] for t in truth[1:]],
                                    frame_index=1)

    metrics = evaluate(truth, truth, 1.0, pred_bubbles=detections)

    assert metrics.recall == approx(0.9)
    assert metrics.precision == 1.0


def test_evaluate_ignores_matches_beyond_tolerance():
    """Points farther than tol never match."""
    far = [_track(t.id, 0, [(r + 3.0, c) for r, c in t.positions()])
           for t in _truth()]

    metrics = evaluate(far, _truth(), 1.0)

    assert metrics.n_matches == 0
    assert (metrics.precision, metrics.recall) == (0.0, 0.0)
    assert metrics.identity_accuracy == 0.0


def test_evaluate_detects_identity_swaps():
    """A swap between tracks breaks the crossing links."""
    truth = [_track(0, 0, [(10.0, 10.0), (10.0, 11.0), (10.0, 12.0)]),
             _track(1, 0, [(30.0, 10.0), (30.0, 11.0), (30.0, 12.0)])]
    swapped = [_track(0, 0, [(10.0, 10.0), (10.0, 11.0), (30.0, 12.0)]),
               _track(1, 0, [(30.0, 10.0), (30.0, 11.0), (10.0, 12.0)])]

    metrics = evaluate(swapped, truth, 1.0)

    assert metrics.recall == 1.0
    assert metrics.n_links == 4
    assert metrics.identity_accuracy == 0.5


def test_evaluate_without_links_has_perfect_identity():
    """No truth links give identity accuracy 1."""
    metrics = evaluate([], [], 1.0)

    assert metrics.identity_accuracy == 1.0
    assert metrics.recall == 0.0


def test_metrics_to_dict_keys():
    """Metrics serialize under fixed keys."""
    keys = set(evaluate(_truth(), _truth(), 1.0).to_dict())

    assert keys == {'rmse_px', 'precision', 'recall', 'identity_accuracy',
                    'n_matches', 'n_predicted', 'n_truth', 'n_links'}
