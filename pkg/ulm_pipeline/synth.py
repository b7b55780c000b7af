# -*- coding: utf-8 -*-
#
# name:             synth.py
# author:           ulm_pipeline contributors
# created on:       03/07/2026
#

"""
ulm_pipeline.synth
~~~~~~~~~~~~~~~~~~

This module contains the ground-truth simulator (bubbles advected along
straight vessels with a parabolic speed profile, rendered as Gaussian blobs
plus noise), the brute-force oracles used to check the pipeline (Hungarian
and exhaustive assignment, a scaling-vector Sinkhorn, a loop-based circle
gather) and the evaluation of predicted tracks against the truth.
"""

from itertools import permutations
import logging
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import FrameStack
from .parameters import Parameters, read_key_value_file
from .stage import StageException
from .tracks import Track
from .validation import ValidationError


log = logging.getLogger(__name__)


# Bubbles sharing a vessel start at least this many PSF sigmas apart.
SPACING_SIGMAS = 4.0

# Lateral lanes stay inside this fraction of the vessel radius.
LANE_FRACTION = 0.9

# Stand-in cost for forbidden assignments.
FORBIDDEN_COST = 1e12


class SimulationError(StageException):
    """Exception thrown when a scenario cannot be simulated."""


##
# Scenario

class Vessel(object):
    def __init__(self, start, end, radius, peak_speed):
        """A straight vessel.

        :param start: (row, col), inlet in pixels
        :param end: (row, col), outlet in pixels
        :param radius: float, radius in pixels
        :param peak_speed: float, centerline speed in m/s
        """
        self.start = np.array(start, dtype=float)
        self.end = np.array(end, dtype=float)
        self.radius = float(radius)
        self.peak_speed = float(peak_speed)

    @property
    def length(self):
        return float(np.hypot(*(self.end - self.start)))

    @property
    def axis(self):
        return (self.end - self.start) / self.length

    @property
    def normal(self):
        return np.array([-self.axis[1], self.axis[0]])

    def speed_at(self, offset):
        """Parabolic speed profile in m/s at lateral `offset` pixels."""
        return self.peak_speed * max(0.0, 1.0 - (offset / self.radius) ** 2)

    def step_px(self, offset, pixel_size, frame_rate):
        """Displacement in pixels per frame at lateral `offset`."""
        return self.speed_at(offset) * 1e3 / pixel_size / frame_rate

    def contains(self, point, margin=0.0):
        """True when `point` lies inside the vessel (plus `margin` px)."""
        rel = np.asarray(point, dtype=float) - self.start
        along = rel @ self.axis
        across = abs(rel @ self.normal)
        return -margin <= along <= self.length + margin and \
            across <= self.radius + margin

    def __repr__(self):
        return 'Vessel(start={}, end={}, radius={}, peak_speed={})'.format(
            self.start.tolist(), self.end.tolist(), self.radius,
            self.peak_speed)


class Scenario(object):
    def __init__(self, height=64, width=64, pixel_size=0.1, frame_rate=100.0,
                 n_frames=100, n_bubbles=0, psf_sigma=1.5, noise_std=0.0,
                 seed=0, vessels=None, static_bubbles=None, background=0.0,
                 amplitude=1.0, validate=True):
        """A simulation setup. The seed fully determines all randomness.

        :param vessels: list of Vessel; n_bubbles are dealt round-robin
        :param static_bubbles: list of (row, col) fixed scatterers
        :param noise_std: float, noise standard deviation relative to the
            bubble amplitude
        :param background: float, additive intensity floor
        """
        self.height = int(height)
        self.width = int(width)
        self.pixel_size = float(pixel_size)
        self.frame_rate = float(frame_rate)
        self.n_frames = int(n_frames)
        self.n_bubbles = int(n_bubbles)
        self.psf_sigma = float(psf_sigma)
        self.noise_std = float(noise_std)
        self.seed = int(seed)
        self.vessels = list(vessels) if vessels else []
        self.static_bubbles = [tuple(map(float, p))
                               for p in (static_bubbles or [])]
        self.background = float(background)
        self.amplitude = float(amplitude)

        if validate:
            self.validate()

    def validate(self):
        """Validates every field; all violations are raised together."""
        params = {
            'height':      {'value': self.height, 'min_value': 1},
            'width':       {'value': self.width, 'min_value': 1},
            'pixel_size':  self.pixel_size,
            'frame_rate':  self.frame_rate,
            'n_frames':    {'value': self.n_frames, 'min_value': 1},
            'n_bubbles':   {'value': self.n_bubbles, 'min_value': 0},
            'psf_sigma':   self.psf_sigma,
            'noise_std':   self.noise_std,
            'seed':        {'value': self.seed, 'min_value': 0},
            'background':  self.background,
            'amplitude':   self.amplitude,
        }
        for index, vessel in enumerate(self.vessels):
            params['vessel[{}].radius'.format(index)] = {
                'value': vessel.radius, 'validate_as': 'real',
                'min_value': 1.0}
            params['vessel[{}].speed'.format(index)] = {
                'value': vessel.peak_speed, 'validate_as': 'positive'}
        Parameters(params)

        if self.n_bubbles and not self.vessels:
            raise ValidationError('n_bubbles', 'Moving bubbles need at least '
                                  'one vessel.')
        return True


SCENARIO_TYPES = {
    'height':      int,
    'width':       int,
    'pixel_size':  float,
    'frame_rate':  float,
    'n_frames':    int,
    'n_bubbles':   int,
    'psf_sigma':   float,
    'noise_std':   float,
    'seed':        int,
    'background':  float,
    'amplitude':   float,
}


def _numbers(key, value, count, path, line_number):
    try:
        numbers = [float(v) for v in value.split(',')]
    except ValueError:
        numbers = []
    if len(numbers) != count:
        raise ValidationError(key, 'Expected {} comma-separated numbers at '
                              '{}:{}.'.format(count, path, line_number))
    return numbers


def read_scenario(path, seed=None):
    """Reads a `key = value` scenario file.

    Scalars use the Scenario field names. `vessel = r0, c0, r1, c1, radius,
    peak_speed_mps` and `static_bubble = row, col` may repeat.

    :param path: string, scenario file
    :param seed: integer, overrides the file's seed when given
    """
    fields = {}
    vessels = []
    static_bubbles = []

    for key, value, line_number in read_key_value_file(path):
        if key == 'vessel':
            r0, c0, r1, c1, radius, speed = _numbers(key, value, 6, path,
                                                     line_number)
            vessels.append(Vessel((r0, c0), (r1, c1), radius, speed))
        elif key == 'static_bubble':
            static_bubbles.append(tuple(_numbers(key, value, 2, path,
                                                 line_number)))
        elif key in SCENARIO_TYPES:
            try:
                fields[key] = SCENARIO_TYPES[key](float(value))
            except ValueError:
                raise ValidationError(key, 'This field must be a number '
                                      '({}:{}).'.format(path, line_number))
        else:
            raise ValidationError(key, 'Unknown scenario key ({}) at {}:{}.'
                                  .format(key, path, line_number))

    if seed is not None:
        fields['seed'] = seed

    return Scenario(vessels=vessels, static_bubbles=static_bubbles, **fields)


##
# Simulation

def render_frame(height, width, positions, amplitudes, psf_sigma):
    """Renders isotropic Gaussian blobs at subpixel positions.

    :param positions: array, (n, 2) (row, col) centers in pixels
    :param amplitudes: array, (n,) peak intensities
    :param psf_sigma: float, blob width in pixels
    """
    frame = np.zeros((height, width))
    rows = np.arange(height, dtype=float)
    cols = np.arange(width, dtype=float)
    for (r, c), a in zip(np.reshape(positions, (-1, 2)),
                         np.ravel(amplitudes)):
        gr = np.exp(-(rows - r) ** 2 / (2.0 * psf_sigma ** 2))
        gc = np.exp(-(cols - c) ** 2 / (2.0 * psf_sigma ** 2))
        frame += a * np.outer(gr, gc)
    return frame


def _lanes(vessel, count, rng):
    """Stratified (axial start, lateral offset) pairs for one vessel. Lanes
    sit at stratum centers, so equal vessels carry equal lane sets."""
    strata = np.arange(count)
    offsets = LANE_FRACTION * vessel.radius * \
        (-1.0 + (2.0 * strata + 1.0) / count)
    offsets = offsets[rng.permutation(count)]
    starts = vessel.length * \
        (strata + 0.25 + 0.5 * rng.uniform(size=count)) / count
    return starts, offsets


def simulate(scenario):
    """Simulates a frame stack and its ground-truth tracks.

    Bubbles advect along their vessel axis at the parabolic-profile speed of
    their lane; a bubble leaving through the outlet re-enters at the inlet
    with a new identity. Static bubbles stay put for the whole sequence.

    :param scenario: Scenario
    :returns: (FrameStack, list of Track)
    """
    rng = np.random.default_rng(scenario.seed)

    per_vessel = [0] * len(scenario.vessels)
    for k in range(scenario.n_bubbles):
        per_vessel[k % len(scenario.vessels)] += 1

    # One entry per moving bubble: (vessel, axial start, offset, step).
    movers = []
    for vessel, count in zip(scenario.vessels, per_vessel):
        capacity = max(1, int(vessel.length //
                              (SPACING_SIGMAS * scenario.psf_sigma)))
        if count > capacity:
            raise SimulationError(
                '{} bubbles exceed the capacity ({}) of {!r}.'.format(
                    count, capacity, vessel))
        if count == 0:
            continue
        starts, offsets = _lanes(vessel, count, rng)
        for start, offset in zip(starts, offsets):
            movers.append((vessel, start, offset,
                           vessel.step_px(offset, scenario.pixel_size,
                                          scenario.frame_rate)))

    n_moving = len(movers)
    n_total = n_moving + len(scenario.static_bubbles)
    positions = np.zeros((scenario.n_frames, n_total, 2))
    identities = np.zeros((scenario.n_frames, n_total), dtype=int)

    for k, (vessel, start, offset, step) in enumerate(movers):
        travelled = start + step * np.arange(scenario.n_frames)
        passes = np.floor(travelled / vessel.length).astype(int)
        along = travelled - passes * vessel.length
        positions[:, k] = vessel.start + np.outer(along, vessel.axis) + \
            offset * vessel.normal
        identities[:, k] = passes
    for k, point in enumerate(scenario.static_bubbles, start=n_moving):
        positions[:, k] = point

    amplitudes = np.full(n_total, scenario.amplitude)
    frames = np.empty((scenario.n_frames, scenario.height, scenario.width),
                      dtype='<f4')
    for t in range(scenario.n_frames):
        frame = render_frame(scenario.height, scenario.width, positions[t],
                             amplitudes, scenario.psf_sigma)
        frame += scenario.background
        if scenario.noise_std > 0:
            frame += rng.normal(0.0, scenario.noise_std * scenario.amplitude,
                                size=frame.shape)
        frames[t] = np.maximum(frame, 0.0)

    stack = FrameStack(frames, scenario.pixel_size, scenario.frame_rate)
    tracks = _truth_tracks(positions, identities, scenario)

    log.info('Simulated %d frames with %d moving and %d static bubbles '
             '(%d truth tracks)', scenario.n_frames, n_moving,
             len(scenario.static_bubbles), len(tracks))

    return stack, tracks


def _truth_tracks(positions, identities, scenario):
    """Splits each bubble's path at every re-entry into Tracks. Fragments
    seen in a single frame cannot form a track and are left out."""
    fragments = []
    n_frames, n_total = identities.shape
    for k in range(n_total):
        begin = 0
        for t in range(1, n_frames + 1):
            if t == n_frames or identities[t, k] != identities[begin, k]:
                if t - begin >= 2:
                    fragments.append((begin, k, [
                        (f, tuple(positions[f, k])) for f in range(begin, t)]))
                begin = t

    fragments.sort(key=lambda fragment: (fragment[0], fragment[1]))
    return [Track(track_id, points, pixel_size=scenario.pixel_size,
                  frame_rate=scenario.frame_rate)
            for track_id, (_, _, points) in enumerate(fragments)]


##
# Oracles

def hungarian_assign(cost):
    """Optimal one-to-one assignment minimizing the total cost.

    :param cost: array, m x n finite costs
    :returns: list of (i, j), sorted by i
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    if not np.isfinite(cost).all():
        raise ValidationError('cost', 'Assignment costs must be finite.')
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def exhaustive_assign(cost):
    """Optimal assignment by enumerating every injection; small inputs only.

    :returns: list of (i, j), sorted by i
    """
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    if m > n:
        return sorted((i, j) for j, i in exhaustive_assign(cost.T))

    best, best_total = None, math.inf
    for columns in permutations(range(n), m):
        total = sum(cost[i, j] for i, j in enumerate(columns))
        if total < best_total:
            best, best_total = columns, total
    return [(i, j) for i, j in enumerate(best)] if best is not None else []


def assignment_cost(cost, pairs):
    """Total cost of an assignment."""
    return float(sum(cost[i, j] for i, j in pairs))


def reference_sinkhorn(matrix, iters):
    """Sinkhorn scaling in the u/v form: returns diag(u) K diag(v) after
    `iters` row-then-column updates."""
    K = np.asarray(matrix, dtype=float)
    u = np.ones(K.shape[0])
    v = np.ones(K.shape[1])
    for _ in range(iters):
        u = 1.0 / (K @ v)
        v = 1.0 / (K.T @ u)
    return u[:, None] * K * v[None, :]


def brute_force_gather(points, center, radius):
    """Loop-based closed-disc filter: [(index, distance)]."""
    found = []
    for index, (r, c) in enumerate(points):
        distance = math.sqrt((r - center[0]) ** 2 + (c - center[1]) ** 2)
        if distance <= radius:
            found.append((index, distance))
    return found


def pairing_oracle_report(P, pairing, ref, tgt, f, config):
    """Compares a greedy pairing with the Hungarian assignment on -log p.

    Hungarian pairs failing the probability floor or the gate are dropped
    before comparing. Mismatches are logged with their probability margins.

    :returns: (agree, margin) where margin is the smallest gap between the
        two largest probabilities of any paired reference bubble
    """
    values = P.values
    with np.errstate(divide='ignore'):
        costs = np.where(values > 0, -np.log(values), FORBIDDEN_COST)

    fy = f.apply(tgt.positions())
    distances = np.hypot(*(ref.positions()[:, None, :] -
                           fy[None, :, :]).transpose(2, 0, 1))
    optimal = {(i, j) for i, j in hungarian_assign(costs)
               if values[i, j] >= config.pair_min_prob
               and distances[i, j] <= config.pair_gate_distance}
    greedy = {(i, j) for i, j, _ in pairing.pairs}

    margin = math.inf
    for i, _ in greedy:
        row = np.sort(values[i])[::-1]
        if len(row) > 1:
            margin = min(margin, float(row[0] - row[1]))

    agree = optimal == greedy
    if not agree:
        log.warning('Greedy pairing differs from the optimal assignment in '
                    'frame %d (greedy only: %s, optimal only: %s, margin '
                    '%.3g)', pairing.frame_index, sorted(greedy - optimal),
                    sorted(optimal - greedy), margin)
    return agree, margin


##
# Evaluation

class Metrics(object):
    def __init__(self, rmse, precision, recall, identity_accuracy,
                 n_matches, n_predicted, n_truth, n_links):
        """Localization and tracking quality against ground truth."""
        self.rmse = rmse
        self.precision = precision
        self.recall = recall
        self.identity_accuracy = identity_accuracy
        self.n_matches = n_matches
        self.n_predicted = n_predicted
        self.n_truth = n_truth
        self.n_links = n_links

    def to_dict(self):
        return {
            'rmse_px':            self.rmse,
            'precision':          self.precision,
            'recall':             self.recall,
            'identity_accuracy':  self.identity_accuracy,
            'n_matches':          self.n_matches,
            'n_predicted':        self.n_predicted,
            'n_truth':            self.n_truth,
            'n_links':            self.n_links,
        }

    def __repr__(self):
        return 'Metrics({})'.format(', '.join(
            '{}={}'.format(k, v) for k, v in self.to_dict().items()))


def _points_by_frame(tracks):
    """{frame: [(track_id, (row, col))]} from tracks."""
    frames = {}
    for track in tracks:
        for frame, position in track.points:
            frames.setdefault(frame, []).append((track.id, position))
    return frames


def _match(truth, predicted, tol):
    """Hungarian matching of two position lists within `tol` pixels.
    Returns [(truth index, predicted index, distance)]."""
    if not truth or not predicted:
        return []
    a = np.array(truth, dtype=float).reshape(-1, 2)
    b = np.array(predicted, dtype=float).reshape(-1, 2)
    distances = np.hypot(a[:, None, 0] - b[None, :, 0],
                         a[:, None, 1] - b[None, :, 1])
    costs = np.where(distances <= tol, distances, FORBIDDEN_COST)
    return [(i, j, float(distances[i, j]))
            for i, j in hungarian_assign(costs) if distances[i, j] <= tol]


def evaluate(pred_tracks, truth_tracks, tol, pred_bubbles=None):
    """Scores predicted tracks against ground-truth tracks.

    Localization (RMSE, precision, recall) matches truth and predicted
    positions per frame within `tol` pixels; predicted positions come from
    `pred_bubbles` when given, otherwise from the predicted tracks. Identity
    accuracy is the fraction of truth frame-to-frame links whose two ends
    match consecutive points of one predicted track (1.0 when there are no
    links).

    :param pred_tracks: list of Track
    :param truth_tracks: list of Track
    :param tol: float, matching tolerance in pixels
    :param pred_bubbles: list of BubbleSet, optional detections
    """
    truth = _points_by_frame(truth_tracks)
    tracked = _points_by_frame(pred_tracks)
    if pred_bubbles is not None:
        located = {s.frame_index: [(-1, b.position) for b in s]
                   for s in pred_bubbles if len(s)}
    else:
        located = tracked

    squared, matches, n_predicted = 0.0, 0, 0
    for frame in sorted(set(truth) | set(located)):
        truth_points = [p for _, p in truth.get(frame, [])]
        pred_points = [p for _, p in located.get(frame, [])]
        n_predicted += len(pred_points)
        for _, _, distance in _match(truth_points, pred_points, tol):
            squared += distance ** 2
            matches += 1
    n_truth = sum(len(points) for points in truth.values())

    # Which predicted track point (track id) each truth point maps to.
    owner = {}
    for frame in sorted(truth):
        truth_points = truth[frame]
        pred_points = tracked.get(frame, [])
        for i, j, _ in _match([p for _, p in truth_points],
                              [p for _, p in pred_points], tol):
            owner[(truth_points[i][0], frame)] = pred_points[j][0]

    links = correct = 0
    for track in truth_tracks:
        for (f0, _), (f1, _) in zip(track.points, track.points[1:]):
            links += 1
            a = owner.get((track.id, f0))
            if a is not None and a == owner.get((track.id, f1)):
                correct += 1

    return Metrics(
        rmse=math.sqrt(squared / matches) if matches else 0.0,
        precision=matches / n_predicted if n_predicted else 0.0,
        recall=matches / n_truth if n_truth else 0.0,
        identity_accuracy=correct / links if links else 1.0,
        n_matches=matches,
        n_predicted=n_predicted,
        n_truth=n_truth,
        n_links=links,
    )
