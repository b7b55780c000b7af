# -*- coding: utf-8 -*-
#
# name:             tracks.py
# author:           ulm_pipeline contributors
# created on:       03/05/2026
#

"""
ulm_pipeline.tracks
~~~~~~~~~~~~~~~~~~~

This module chains frame-to-frame pairings into tracks and turns tracks into
velocity samples.
"""

import csv
import logging
import math

import numpy as np

from .validation import ValidationError


log = logging.getLogger(__name__)


TRACKS_CSV_HEADER = ['track_id', 'frame', 'row', 'col', 'vr_mps', 'vc_mps']


def step_velocity(p0, p1, pixel_size, frame_rate):
    """Velocity in m/s of a one-frame step from p0 to p1.

    :param p0: (row, col), start position in pixels
    :param p1: (row, col), end position in pixels
    :param pixel_size: float, millimeters per pixel
    :param frame_rate: float, frames per second
    """
    scale = pixel_size * 1e-3 * frame_rate
    return ((p1[0] - p0[0]) * scale, (p1[1] - p0[1]) * scale)


class Track(object):
    def __init__(self, track_id, points, pixel_size=None, frame_rate=None,
                 velocities=None):
        """A bubble followed over consecutive frames.

        :param track_id: integer, track identifier
        :param points: list of (frame_index, (row, col))
        :param pixel_size: float, mm per pixel (used to derive velocities)
        :param frame_rate: float, frames per second (used to derive
            velocities)
        :param velocities: list of (v_r, v_c) in m/s, one per step; derived
            from the points when omitted
        """
        points = [(int(frame), (float(pos[0]), float(pos[1])))
                  for frame, pos in points]
        if len(points) < 2:
            raise ValidationError('points', 'A track needs at least 2 '
                                  'points.')
        for (f0, _), (f1, _) in zip(points, points[1:]):
            if f1 != f0 + 1:
                raise ValidationError('points', 'Track frames must be '
                                      'consecutive ({} -> {}).'.format(f0, f1))

        if velocities is None:
            if pixel_size is None or frame_rate is None:
                raise ValidationError('velocities', 'Give velocities or '
                                      'pixel_size and frame_rate.')
            velocities = [step_velocity(p0, p1, pixel_size, frame_rate)
                          for (_, p0), (_, p1) in zip(points, points[1:])]
        elif len(velocities) != len(points) - 1:
            raise ValidationError('velocities', 'Expected one velocity per '
                                  'step.')

        self.id = int(track_id)
        self.points = points
        self.velocities = [(float(v[0]), float(v[1])) for v in velocities]

    def __len__(self):
        return len(self.points)

    @property
    def first_frame(self):
        return self.points[0][0]

    @property
    def last_frame(self):
        return self.points[-1][0]

    def positions(self):
        """Returns the (n, 2) array of positions."""
        return np.array([pos for _, pos in self.points])

    def __repr__(self):
        return 'Track(id={}, frames={}..{})'.format(self.id, self.first_frame,
                                                    self.last_frame)


class VelocitySample(object):
    def __init__(self, position, velocity, track_id):
        """Velocity of one track step, anchored at the step midpoint.

        :param position: (row, col), midpoint in pixels
        :param velocity: (v_r, v_c) in m/s
        :param track_id: integer, the track the step belongs to
        """
        self.position = (float(position[0]), float(position[1]))
        self.velocity = (float(velocity[0]), float(velocity[1]))
        self.track_id = int(track_id)

    @property
    def speed(self):
        return math.hypot(*self.velocity)

    def __repr__(self):
        return 'VelocitySample(position={}, velocity={})'.format(
            self.position, self.velocity)


def link(pairings, bubble_sets, min_track_length, pixel_size, frame_rate):
    """Chains consecutive pairings into tracks.

    A bubble paired in consecutive frame pairs extends one track; an
    unmatched bubble ends its track and the next pairing starts a new one.
    Tracks shorter than min_track_length points are dropped. Track ids follow
    (first frame, first bubble index).

    :param pairings: list of Pairing, ordered by reference frame
    :param bubble_sets: list of BubbleSet holding the paired bubbles
    :param min_track_length: integer, minimum number of points kept
    :param pixel_size: float, mm per pixel
    :param frame_rate: float, frames per second
    """
    by_frame = {s.frame_index: s for s in bubble_sets}
    chains = []
    active = {}
    previous_frame = None

    for pairing in pairings:
        frame = pairing.frame_index
        if previous_frame is not None and frame != previous_frame + 1:
            active = {}
        previous_frame = frame

        ref, tgt = by_frame[frame], by_frame[frame + 1]
        continued = {}
        for i, j, _ in pairing.pairs:
            chain = active.get(i)
            if chain is None:
                chain = [(frame, i, ref[i].position)]
                chains.append(chain)
            chain.append((frame + 1, j, tgt[j].position))
            continued[j] = chain
        active = continued

    kept = [chain for chain in chains if len(chain) >= min_track_length]
    kept.sort(key=lambda chain: (chain[0][0], chain[0][1]))

    tracks = [Track(track_id, [(frame, pos) for frame, _, pos in chain],
                    pixel_size=pixel_size, frame_rate=frame_rate)
              for track_id, chain in enumerate(kept)]

    log.info('Linked %d tracks (%d fragments shorter than %d dropped)',
             len(tracks), len(chains) - len(kept), min_track_length)

    return tracks


def velocity_samples(tracks):
    """Returns one VelocitySample per track step, at the step midpoint."""
    samples = []
    for track in tracks:
        for ((_, p0), (_, p1)), velocity in zip(
                zip(track.points, track.points[1:]), track.velocities):
            midpoint = ((p0[0] + p1[0]) / 2.0, (p0[1] + p1[1]) / 2.0)
            samples.append(VelocitySample(midpoint, velocity, track.id))
    return samples


def write_tracks_csv(tracks, path):
    """Writes `track_id,frame,row,col,vr_mps,vc_mps`, one line per point.

    A point carries the velocity of the step leaving it; the last point of a
    track repeats the velocity of the step entering it.
    """
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(TRACKS_CSV_HEADER)
        for track in tracks:
            velocities = track.velocities + track.velocities[-1:]
            for (frame, pos), velocity in zip(track.points, velocities):
                writer.writerow([
                    track.id, frame,
                    '{:.4f}'.format(pos[0]), '{:.4f}'.format(pos[1]),
                    '{:.9g}'.format(velocity[0]), '{:.9g}'.format(velocity[1]),
                ])


def read_tracks_csv(path):
    """Reads a tracks CSV back into Tracks, in file order of first
    appearance."""
    rows = {}
    with open(path, 'r', newline='') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != TRACKS_CSV_HEADER:
            raise ValidationError(path, 'Expected header ' +
                                  ','.join(TRACKS_CSV_HEADER) + '.')
        for line in reader:
            rows.setdefault(int(line['track_id']), []).append((
                int(line['frame']),
                (float(line['row']), float(line['col'])),
                (float(line['vr_mps']), float(line['vc_mps'])),
            ))

    return [Track(track_id, [(frame, pos) for frame, pos, _ in points],
                  velocities=[v for _, _, v in points[:-1]])
            for track_id, points in rows.items()]
