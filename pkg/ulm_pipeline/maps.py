# -*- coding: utf-8 -*-
#
# name:             maps.py
# author:           ulm_pipeline contributors
# created on:       03/06/2026
#

"""
ulm_pipeline.maps
~~~~~~~~~~~~~~~~~

This module renders the super-resolution maps: the localization density map
(a unit Gaussian summed at every bubble) and the velocity field (per grid
point: circle gather, PCA outlier rejection, Gaussian-weighted mean). It also
writes the raw `ULMM` dump, 16-bit PGM previews and the speed CSV.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
import logging
import struct

import numpy as np
from scipy.spatial import cKDTree

from .core import FormatError


log = logging.getLogger(__name__)


# Kernels are cut at this many sigmas along each axis.
TRUNCATE_SIGMAS = 4.0

# Bubbles per partial density grid. Fixed so the summation order does not
# depend on the number of threads.
DENSITY_CHUNK = 512

# Grid rows per velocity tile.
TILE_ROWS = 32

# Samples further than this many standard deviations from the mean along a
# principal axis are rejected.
REJECT_SIGMAS = 3.0

# Principal axes with less spread than this reject nothing.
MIN_AXIS_STD = 1e-12

MAP_MAGIC = b'ULMM'
MAP_HEADER = struct.Struct('<4sII')

SPEED_CSV_HEADER = ['row', 'col', 'vr', 'vc', 'speed']


##
# Types

class DensityMap(object):
    def __init__(self, values, sr_factor, density_sigma):
        """Super-resolution localization density.

        :param values: array, (height * sr_factor, width * sr_factor) mass
        :param sr_factor: integer, up-sampling of the pixel grid
        :param density_sigma: float, kernel width in SR pixels
        """
        self.values = values
        self.sr_factor = sr_factor
        self.density_sigma = density_sigma

    @property
    def shape(self):
        return self.values.shape

    def total_mass(self):
        return float(self.values.sum())


class VelocityField(object):
    def __init__(self, velocity, count, valid):
        """Gridded mean velocity.

        :param velocity: array, (H, W, 2) mean (v_r, v_c) in m/s; zero where
            invalid
        :param count: array, (H, W) number of inlier samples averaged
        :param valid: array, (H, W) True where at least one sample was kept
        """
        self.velocity = velocity
        self.count = count
        self.valid = valid

    @property
    def shape(self):
        return self.valid.shape

    @property
    def speed(self):
        """Velocity magnitude; zero where invalid."""
        return np.hypot(self.velocity[..., 0], self.velocity[..., 1])


##
# Density

def _accumulate(grid, centers, sigma):
    """Adds a truncated unit-integral Gaussian at each SR center."""
    radius = TRUNCATE_SIGMAS * sigma
    norm = 1.0 / (2.0 * np.pi * sigma ** 2)
    height, width = grid.shape

    for cr, cc in centers:
        r0, r1 = max(int(np.ceil(cr - radius)), 0), \
            min(int(np.floor(cr + radius)), height - 1)
        c0, c1 = max(int(np.ceil(cc - radius)), 0), \
            min(int(np.floor(cc + radius)), width - 1)
        if r0 > r1 or c0 > c1:
            continue
        gr = np.exp(-(np.arange(r0, r1 + 1) - cr) ** 2 / (2.0 * sigma ** 2))
        gc = np.exp(-(np.arange(c0, c1 + 1) - cc) ** 2 / (2.0 * sigma ** 2))
        grid[r0:r1 + 1, c0:c1 + 1] += norm * np.outer(gr, gc)

    return grid


def render_density(bubble_sets, config, height, width, threads=1):
    """Sums a unit Gaussian (sigma = density_sigma SR px, truncated at 4
    sigma) at position * sr_factor for every bubble.

    :param bubble_sets: list of BubbleSet, all frames
    :param config: PipelineConfig
    :param height: integer, frame height in pixels
    :param width: integer, frame width in pixels
    :param threads: integer, maximum number of worker threads
    """
    s = config.sr_factor
    shape = (height * s, width * s)
    centers = [(b.position[0] * s, b.position[1] * s)
               for bubble_set in bubble_sets for b in bubble_set]
    chunks = [centers[i:i + DENSITY_CHUNK]
              for i in range(0, len(centers), DENSITY_CHUNK)]

    def work(chunk):
        return _accumulate(np.zeros(shape), chunk, config.density_sigma)

    grid = np.zeros(shape)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for partial in pool.map(work, chunks):
            grid += partial

    log.info('Rendered density of %d bubbles on a %dx%d grid', len(centers),
             *shape)

    return DensityMap(grid, s, config.density_sigma)


##
# Velocity

def _gather(points, center, radius):
    """Indices and distances of the points within the closed disc."""
    if len(points) == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    distances = np.hypot(points[:, 0] - center[0], points[:, 1] - center[1])
    inside = np.flatnonzero(distances <= radius)
    return inside, distances[inside]


def gather_in_circle(samples, center, radius, sr_factor=1):
    """Returns [(sample, distance)] for every sample whose SR position lies
    within `radius` of `center` (closed disc).

    :param samples: list of VelocitySample (positions in pixels)
    :param center: (row, col), SR grid point
    :param radius: float, SR pixels
    :param sr_factor: integer, pixel to SR grid scale
    """
    points = np.array([s.position for s in samples],
                      dtype=float).reshape(-1, 2) * sr_factor
    inside, distances = _gather(points, center, radius)
    return [(samples[i], float(d)) for i, d in zip(inside, distances)]


def pca_inlier_mask(velocities):
    """Boolean mask of the velocities kept by the 3-sigma principal-axis
    test. Fewer than two samples are all kept."""
    velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
    if len(velocities) < 2:
        return np.ones(len(velocities), dtype=bool)

    centered = velocities - velocities.mean(axis=0)
    covariance = centered.T @ centered / (len(velocities) - 1)
    variances, axes = np.linalg.eigh(covariance)
    stds = np.sqrt(np.maximum(variances, 0.0))
    projections = np.abs(centered @ axes)

    limits = np.where(stds < MIN_AXIS_STD, np.inf, REJECT_SIGMAS * stds)
    return (projections <= limits).all(axis=1)


def pca_reject(velocities):
    """Returns the velocities surviving the 3-sigma principal-axis test."""
    velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
    return velocities[pca_inlier_mask(velocities)]


def weighted_mean_velocity(velocities, distances, avg_sigma):
    """Gaussian distance-weighted mean of the velocities, or None when
    there are none.

    :param velocities: array, (n, 2) velocities
    :param distances: array, (n,) distances to the grid point
    :param avg_sigma: float, weighting width in SR pixels
    """
    velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
    if len(velocities) == 0:
        return None
    weights = np.exp(-np.asarray(distances, dtype=float) ** 2 /
                     (2.0 * avg_sigma ** 2))
    return tuple(weights @ velocities / weights.sum())


def _render_rows(rows, width, tree, points, velocities, config):
    """Renders the velocity of grid rows `rows` (a range)."""
    velocity = np.zeros((len(rows), width, 2))
    count = np.zeros((len(rows), width), dtype=int)
    valid = np.zeros((len(rows), width), dtype=bool)
    if tree is None:
        return velocity, count, valid

    radius = config.gather_radius
    grid = np.stack(np.meshgrid(np.asarray(rows, dtype=float),
                                np.arange(width, dtype=float),
                                indexing='ij'), axis=-1).reshape(-1, 2)
    # A hair of slack; the closed-disc test below is exact.
    neighbors = tree.query_ball_point(grid, radius * (1 + 1e-9))

    for flat, candidates in enumerate(neighbors):
        if not candidates:
            continue
        candidates = np.sort(np.asarray(candidates, dtype=int))
        center = grid[flat]
        inside, distances = _gather(points[candidates], center, radius)
        if inside.size == 0:
            continue
        chosen = velocities[candidates[inside]]
        keep = pca_inlier_mask(chosen)
        mean = weighted_mean_velocity(chosen[keep], distances[keep],
                                      config.avg_sigma)
        r, c = divmod(flat, width)
        velocity[r, c] = mean
        count[r, c] = int(keep.sum())
        valid[r, c] = True

    return velocity, count, valid


def render_velocity(samples, config, height, width, threads=1):
    """Renders the velocity field on the SR grid: for every grid point,
    gather the samples in a circle, reject principal-axis outliers and take
    the Gaussian distance-weighted mean.

    :param samples: list of VelocitySample
    :param config: PipelineConfig
    :param height: integer, frame height in pixels
    :param width: integer, frame width in pixels
    :param threads: integer, maximum number of worker threads
    """
    s = config.sr_factor
    grid_height, grid_width = height * s, width * s

    if samples:
        points = np.array([sample.position for sample in samples]) * s
        velocities = np.array([sample.velocity for sample in samples])
        tree = cKDTree(points)
    else:
        points = velocities = tree = None

    tiles = [range(r, min(r + TILE_ROWS, grid_height))
             for r in range(0, grid_height, TILE_ROWS)]

    def work(rows):
        return _render_rows(rows, grid_width, tree, points, velocities,
                            config)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(work, tiles))

    if parts:
        field = VelocityField(np.concatenate([p[0] for p in parts]),
                              np.concatenate([p[1] for p in parts]),
                              np.concatenate([p[2] for p in parts]))
    else:
        field = VelocityField(np.zeros((0, grid_width, 2)),
                              np.zeros((0, grid_width), dtype=int),
                              np.zeros((0, grid_width), dtype=bool))

    log.info('Rendered velocity from %d samples; %d of %d grid points valid',
             len(samples), int(field.valid.sum()), grid_height * grid_width)

    return field


##
# Map files

def write_raw_map(values, path):
    """Writes `ULMM`, u32 height, u32 width, then f32 values, little-endian
    and row-major."""
    values = np.asarray(values)
    with open(path, 'wb') as f:
        f.write(MAP_HEADER.pack(MAP_MAGIC, values.shape[0], values.shape[1]))
        f.write(values.astype('<f4').tobytes(order='C'))


def read_raw_map(path):
    """Reads a `ULMM` dump back into a float32 array."""
    with open(path, 'rb') as f:
        raw = f.read()

    if len(raw) < MAP_HEADER.size:
        raise FormatError('Truncated map header', len(raw))
    magic, height, width = MAP_HEADER.unpack_from(raw, 0)
    if magic != MAP_MAGIC:
        raise FormatError('Bad magic {!r}'.format(magic), 0)
    expected = MAP_HEADER.size + 4 * height * width
    if len(raw) != expected:
        raise FormatError('Map payload should hold {} bytes'.format(
            expected - MAP_HEADER.size), min(len(raw), expected))

    return np.frombuffer(raw, dtype='<f4', offset=MAP_HEADER.size) \
        .reshape(height, width).copy()


def write_pgm(values, path):
    """Writes a 16-bit binary PGM (P5, maxval 65535) after min-max scaling.
    A constant map is written as zeros."""
    values = np.asarray(values, dtype=float)
    low, high = float(values.min()), float(values.max())
    if high > low:
        scaled = np.rint((values - low) / (high - low) * 65535.0)
    else:
        scaled = np.zeros_like(values)

    with open(path, 'wb') as f:
        f.write('P5\n{} {}\n65535\n'.format(values.shape[1],
                                            values.shape[0]).encode('ascii'))
        f.write(scaled.astype('>u2').tobytes(order='C'))


def write_speed_csv(field, path):
    """Writes `row,col,vr,vc,speed` for every valid grid point."""
    speed = field.speed
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SPEED_CSV_HEADER)
        for r, c in zip(*np.nonzero(field.valid)):
            vr, vc = field.velocity[r, c]
            writer.writerow([int(r), int(c), '{:.9g}'.format(vr),
                             '{:.9g}'.format(vc),
                             '{:.9g}'.format(speed[r, c])])
