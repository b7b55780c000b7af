# -*- coding: utf-8 -*-
#
# name:             test_tracks.py
# author:           ulm_pipeline contributors
# created on:       03/05/2026
#

"""
Functional tests for ulm_pipeline's tracks module.
"""

import math

import numpy as np
from pytest import approx, raises

from ulm_pipeline.core import PipelineConfig
from ulm_pipeline.localize import gaussian_psf, localize_stack
from ulm_pipeline.register import Pairing, register_stack
from ulm_pipeline.synth import Scenario, Vessel, simulate
from ulm_pipeline.tracks import (
    Track,
    VelocitySample,
    link,
    read_tracks_csv,
    step_velocity,
    velocity_samples,
    write_tracks_csv,
)
from ulm_pipeline.validation import ValidationError

from .helpers import make_bubble_set


def _frames(*positions):
    return [make_bubble_set(p, frame_index=i)
            for i, p in enumerate(positions)]


##
# Velocity Tests

def test_step_velocity_of_no_motion_is_zero():
    """No displacement means zero velocity."""
    assert step_velocity((3, 4), (3, 4), 0.1, 100.0) == (0.0, 0.0)


def test_step_velocity_converts_pixels_per_frame_to_meters_per_second():
    """1 px at 0.1 mm and 100 Hz is 0.01 m/s."""
    assert step_velocity((0, 0), (1, 0), 0.1, 100.0) == \
        approx((0.01, 0.0), abs=1e-15)


def test_step_velocity_speed_follows_the_displacement_norm():
    """A (3, 4) px step at 0.1 mm and 100 Hz is 0.05 m/s."""
    v = step_velocity((0, 0), (3, 4), 0.1, 100.0)

    assert math.hypot(*v) == approx(0.05, abs=1e-15)


def test_velocity_sample_speed():
    """VelocitySample.speed is the velocity magnitude."""
    assert VelocitySample((0, 0), (0.03, -0.04), 1).speed == approx(0.05)


def test_step_velocity_is_antisymmetric():
    """Reversing a step negates its velocity."""
    rng = np.random.default_rng(12)

    for trial in range(50):
        p0, p1 = rng.uniform(0.0, 100.0, (2, 2))
        pixel_size = rng.uniform(0.01, 0.5)
        frame_rate = rng.uniform(10.0, 1000.0)

        forward = step_velocity(p0, p1, pixel_size, frame_rate)
        backward = step_velocity(p1, p0, pixel_size, frame_rate)

        assert backward == (-forward[0], -forward[1])


def test_reversed_track_negates_its_velocities():
    """A track walked backwards carries the negated step velocities in
    reverse order."""
    rng = np.random.default_rng(13)
    positions = np.cumsum(rng.normal(0.0, 1.0, (6, 2)), axis=0) + 50.0
    forward = Track(0, list(enumerate(positions)), pixel_size=0.1,
                    frame_rate=100.0)
    backward = Track(1, list(enumerate(positions[::-1])), pixel_size=0.1,
                     frame_rate=100.0)

    expected = -np.array(forward.velocities)[::-1]
    assert np.allclose(backward.velocities, expected, rtol=0, atol=1e-15)


def test_speed_is_invariant_under_rotation():
    """Rotating a track about any center leaves its step speeds
    unchanged."""
    rng = np.random.default_rng(14)

    for trial in range(20):
        positions = np.cumsum(rng.normal(0.0, 1.5, (8, 2)), axis=0)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        rotation = np.array([[math.cos(angle), -math.sin(angle)],
                             [math.sin(angle), math.cos(angle)]])
        center = rng.uniform(-50.0, 50.0, 2)
        rotated = (positions - center) @ rotation.T + center

        speeds = [s.speed for s in velocity_samples([Track(
            0, list(enumerate(positions)), pixel_size=0.1,
            frame_rate=100.0)])]
        turned = [s.speed for s in velocity_samples([Track(
            0, list(enumerate(rotated)), pixel_size=0.1, frame_rate=100.0)])]

        assert turned == approx(speeds, rel=1e-9)


##
# Track Tests

def test_track_derives_one_velocity_per_step():
    """A Track computes its step velocities from the calibration."""
    track = Track(7, [(2, (0.0, 0.0)), (3, (1.0, 0.0)), (4, (1.0, 2.0))],
                  pixel_size=0.1, frame_rate=100.0)

    assert len(track) == 3
    assert (track.first_frame, track.last_frame) == (2, 4)
    assert np.allclose(track.velocities, [(0.01, 0.0), (0.0, 0.02)])


def test_track_requires_consecutive_frames():
    """A Track may not skip frames."""
    with raises(ValidationError):
        Track(0, [(0, (0, 0)), (2, (1, 1))], pixel_size=0.1,
              frame_rate=100.0)


def test_track_requires_two_points():
    """A single point is not a track."""
    with raises(ValidationError):
        Track(0, [(0, (0, 0))], pixel_size=0.1, frame_rate=100.0)


def test_track_requires_velocities_or_calibration():
    """Without calibration the velocities must be given."""
    with raises(ValidationError):
        Track(0, [(0, (0, 0)), (1, (1, 1))])

    with raises(ValidationError):
        Track(0, [(0, (0, 0)), (1, (1, 1))], velocities=[])


def test_velocity_samples_sit_at_step_midpoints():
    """Each step gives one sample anchored halfway."""
    track = Track(3, [(0, (0.0, 0.0)), (1, (2.0, 0.0)), (2, (2.0, 4.0))],
                  pixel_size=0.1, frame_rate=100.0)

    samples = velocity_samples([track])

    assert [s.position for s in samples] == [(1.0, 0.0), (2.0, 2.0)]
    assert [s.track_id for s in samples] == [3, 3]
    assert samples[1].velocity == approx((0.0, 0.04))


##
# Link Tests

def test_link_chains_a_bubble_over_three_frames():
    """One bubble paired 0 -> 1 -> 2 is a single 3-point track."""
    bubble_sets = _frames([(5.0, 5.0)], [(5.0, 6.0)], [(5.0, 7.0)])
    pairings = [Pairing(0, [(0, 0, 1.0)]), Pairing(1, [(0, 0, 1.0)])]

    tracks = link(pairings, bubble_sets, 3, 0.1, 100.0)

    assert len(tracks) == 1
    assert tracks[0].id == 0
    assert [f for f, _ in tracks[0].points] == [0, 1, 2]
    assert tracks[0].positions()[:, 1].tolist() == [5.0, 6.0, 7.0]


def test_link_drops_fragments_shorter_than_min_track_length():
    """A bubble unmatched at frame 1 leaves two short fragments, both
    dropped."""
    bubble_sets = _frames([(5.0, 5.0)], [(5.0, 6.0), (30.0, 30.0)],
                          [(30.0, 31.0)], [(30.0, 32.0)])
    pairings = [Pairing(0, [(0, 0, 1.0)]), Pairing(1, []),
                Pairing(2, [(0, 0, 1.0)])]

    assert link(pairings, bubble_sets, 3, 0.1, 100.0) == []
    assert len(link(pairings, bubble_sets, 2, 0.1, 100.0)) == 2


def test_link_orders_tracks_by_first_frame_then_index():
    """Track ids follow (first frame, first bubble index)."""
    bubble_sets = _frames([(0.0, 0.0), (20.0, 0.0)],
                          [(0.0, 1.0), (20.0, 1.0), (40.0, 0.0)],
                          [(0.0, 2.0), (20.0, 2.0), (40.0, 1.0)])
    pairings = [Pairing(0, [(1, 1, 0.9), (0, 0, 0.8)]),
                Pairing(1, [(2, 2, 1.0), (0, 0, 1.0), (1, 1, 1.0)])]

    tracks = link(pairings, bubble_sets, 2, 0.1, 100.0)

    assert [t.positions()[0].tolist() for t in tracks] == \
        [[0.0, 0.0], [20.0, 0.0], [40.0, 0.0]]
    assert [t.id for t in tracks] == [0, 1, 2]


def test_link_restarts_after_missing_frame_pairs():
    """A gap in the pairings ends every open track."""
    bubble_sets = _frames([(5.0, 5.0)], [(5.0, 6.0)], [(5.0, 7.0)],
                          [(5.0, 8.0)])
    pairings = [Pairing(0, [(0, 0, 1.0)]), Pairing(2, [(0, 0, 1.0)])]

    tracks = link(pairings, bubble_sets, 2, 0.1, 100.0)

    assert [(t.first_frame, t.last_frame) for t in tracks] == \
        [(0, 1), (2, 3)]


def test_link_recovers_simulated_identities():
    """10 bubbles over 50 frames give 10 tracks matching ground truth."""
    vessels = [Vessel((12.0 + 10.0 * k, 5.0), (12.0 + 10.0 * k, 135.0),
                      2.0, 0.002 + 0.0003 * k) for k in range(10)]
    scenario = Scenario(height=120, width=140, n_frames=50, n_bubbles=10,
                        vessels=vessels, seed=5)
    stack, truth = simulate(scenario)
    config = PipelineConfig()

    bubble_sets = localize_stack(stack, gaussian_psf(7, 1.5), config)
    pairings = register_stack(bubble_sets, config)
    tracks = link(pairings, bubble_sets, config.min_track_length,
                  stack.pixel_size, stack.frame_rate)

    assert len(tracks) == len(truth) == 10
    for track, expected in zip(
            sorted(tracks, key=lambda t: t.positions()[0][0]),
            sorted(truth, key=lambda t: t.positions()[0][0])):
        assert len(track) == len(expected)
        assert np.abs(track.positions() - expected.positions()).max() < 0.3


def test_link_keeps_every_pair_in_exactly_one_track():
    """With min_track_length 2 every accepted pair is one step of exactly
    one track and no bubble sits in two tracks."""
    rng = np.random.default_rng(15)

    for trial in range(10):
        sizes = rng.integers(3, 8, 8)
        bubble_sets = _frames(*[rng.uniform(0.0, 100.0, (n, 2))
                                for n in sizes])
        pairings = []
        for frame in range(len(sizes) - 1):
            k = int(rng.integers(0, min(sizes[frame], sizes[frame + 1]) + 1))
            rows = rng.permutation(sizes[frame])[:k]
            cols = rng.permutation(sizes[frame + 1])[:k]
            pairings.append(Pairing(frame, [(int(i), int(j), 1.0)
                                            for i, j in zip(rows, cols)]))

        tracks = link(pairings, bubble_sets, 2, 0.1, 100.0)

        index = {(s.frame_index, b.position): i
                 for s in bubble_sets for i, b in enumerate(s)}
        steps, members = [], []
        for track in tracks:
            ids = [(frame, index[(frame, pos)]) for frame, pos in track.points]
            members.extend(ids)
            steps.extend((a[0], a[1], b[1]) for a, b in zip(ids, ids[1:]))

        expected = [(p.frame_index, i, j)
                    for p in pairings for i, j, _ in p.pairs]
        assert sorted(steps) == sorted(expected)
        assert len(members) == len(set(members))


##
# CSV Tests

def test_tracks_csv_round_trip(tmpdir):
    """Tracks survive a CSV round trip; each point carries its outgoing
    step velocity and the last point repeats the final one."""
    track = Track(4, [(1, (10.0, 20.0)), (2, (11.0, 20.0)),
                      (3, (11.0, 22.0))], pixel_size=0.1, frame_rate=100.0)
    path = str(tmpdir.join('tracks.csv'))

    write_tracks_csv([track], path)

    lines = open(path).read().splitlines()
    assert lines[0] == 'track_id,frame,row,col,vr_mps,vc_mps'
    assert lines[1] == '4,1,10.0000,20.0000,0.01,0'
    assert lines[3] == '4,3,11.0000,22.0000,0,0.02'

    restored = read_tracks_csv(path)[0]
    assert restored.id == 4
    assert restored.points == track.points
    assert np.allclose(restored.velocities, track.velocities)


def test_read_tracks_csv_rejects_other_headers(tmpdir):
    """A CSV with the wrong header is rejected."""
    path = tmpdir.join('tracks.csv')
    path.write('id,frame,row,col\n')

    with raises(ValidationError):
        read_tracks_csv(str(path))
