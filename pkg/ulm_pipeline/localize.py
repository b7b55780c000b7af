# -*- coding: utf-8 -*-
#
# name:             localize.py
# author:           ulm_pipeline contributors
# created on:       03/03/2026
#

"""
ulm_pipeline.localize
~~~~~~~~~~~~~~~~~~~~~

This module contains the microbubble detector: PSF selection, zero-normalized
cross-correlation against the PSF, peak picking with non-maximum suppression,
and amplitude-weighted subpixel refinement. It also reads and writes the
bubble CSV and the binary detections sidecar.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import maximum_filter

from .core import Bubble, BubbleSet
from .stage import StageException
from .validation import ValidationError, validate


log = logging.getLogger(__name__)


# Slack allowed on |correlation| <= 1.
CORRELATION_EPS = 1e-6

# Windows whose centered energy is below this fraction of their raw energy
# count as flat.
FLAT_WINDOW_RATIO = 1e-10

BUBBLES_CSV_HEADER = ['frame', 'row', 'col', 'amplitude']


class BoundsError(StageException):
    """Exception thrown when a window does not fit inside its frame."""


class PsfError(StageException):
    """Exception thrown when a PSF candidate carries no signal."""


##
# PSF

def normalize_psf(patch):
    """Returns the patch mean-subtracted and scaled to unit energy.

    :param patch: array, k x k intensities
    """
    patch = np.asarray(patch, dtype=float)
    centered = patch - patch.mean()
    energy = np.sqrt(np.sum(centered ** 2))

    if energy <= np.finfo(float).eps * max(1.0, np.abs(patch).max()):
        raise PsfError('PSF patch is flat (zero energy after mean removal).')

    return centered / energy


def gaussian_psf(k, sigma):
    """Returns a normalized k x k isotropic Gaussian PSF.

    :param k: integer, odd patch size in pixels
    :param sigma: float, Gaussian standard deviation in pixels
    """
    if k < 3 or k % 2 != 1:
        raise ValidationError('psf_patch_size', 'This field must be odd and '
                              'at least 3.')
    axis = np.arange(k) - k // 2
    profile = np.exp(-axis ** 2 / (2.0 * sigma ** 2))
    return normalize_psf(np.outer(profile, profile))


def _window(frame, center, k):
    """Returns the k x k window of `frame` centered at integer `center`."""
    h = k // 2
    r, c = int(center[0]), int(center[1])
    if r - h < 0 or c - h < 0 or r + h >= frame.shape[0] \
            or c + h >= frame.shape[1]:
        raise BoundsError('{0}x{0} window at ({1}, {2}) exceeds the {3}x{4} '
                          'frame.'.format(k, r, c, *frame.shape))
    return frame[r - h:r + h + 1, c - h:c + h + 1]


def extract_psf(stack, frame_index, center, k):
    """Extracts an operator-picked PSF from a frame.

    :param stack: FrameStack, the source stack
    :param frame_index: integer, frame holding a suitable bubble
    :param center: (int, int), integer (row, col) of the bubble
    :param k: integer, odd patch size in pixels
    """
    if not 0 <= frame_index < stack.n_frames:
        raise BoundsError('PSF frame {} outside a stack of {} frames.'.format(
            frame_index, stack.n_frames))
    window = _window(stack.frame(frame_index), center, k)
    return normalize_psf(window)


def select_psf(stack, config, psf_frame=None, psf_center=None,
               psf_sigma=None):
    """Returns the PSF used for detection: the operator pick when a frame and
    center are given, otherwise a Gaussian of width `psf_sigma` (or the
    configured one)."""
    if psf_frame is not None and psf_center is not None:
        log.info('Using PSF picked from frame %d at %s', psf_frame,
                 tuple(psf_center))
        return extract_psf(stack, psf_frame, psf_center,
                           config.psf_patch_size)

    sigma = psf_sigma if psf_sigma is not None else config.psf_sigma
    log.info('Using synthetic Gaussian PSF (sigma=%g px)', sigma)
    return gaussian_psf(config.psf_patch_size, sigma)


##
# Correlation

class CorrelationMap(object):
    def __init__(self, values, psf_patch_size):
        """Zero-normalized cross-correlation of a frame with a PSF.

        :param values: array, height x width coefficients; the border of
            half-patch width holds -1
        :param psf_patch_size: integer, PSF size in pixels
        """
        self.values = values
        self.psf_patch_size = psf_patch_size

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid(self):
        """Boolean mask of the pixels where a full window fits."""
        h = self.psf_patch_size // 2
        mask = np.zeros(self.values.shape, dtype=bool)
        mask[h:self.values.shape[0] - h, h:self.values.shape[1] - h] = True
        return mask


def correlation_map(frame, psf):
    """Correlates every k x k window of the frame with the PSF.

    The value at (r, c) is the zero-normalized cross-correlation between the
    PSF and the window centered at (r, c). Flat windows correlate to 0.

    :param frame: array, 2D intensities
    :param psf: array, k x k PSF (normalized here)
    """
    frame = np.asarray(frame, dtype=float)
    template = normalize_psf(psf)
    k = template.shape[0]

    if template.shape != (k, k) or k % 2 != 1:
        raise ValidationError('psf', 'The PSF must be square with odd size.')
    if frame.shape[0] <= k or frame.shape[1] <= k:
        raise BoundsError('Frame {}x{} is not larger than the {}x{} PSF.'
                          .format(frame.shape[0], frame.shape[1], k, k))

    windows = sliding_window_view(frame, (k, k))
    sums = windows.sum(axis=(2, 3))
    energy = np.einsum('ijab,ijab->ij', windows, windows)
    centered_energy = energy - sums * sums / (k * k)
    numerator = np.einsum('ijab,ab->ij', windows, template) \
        - sums / (k * k) * template.sum()

    flat = centered_energy <= FLAT_WINDOW_RATIO * energy
    with np.errstate(divide='ignore', invalid='ignore'):
        inner = np.where(flat, 0.0, numerator /
                         np.sqrt(np.where(flat, 1.0, centered_energy)))
    inner = np.clip(inner, -1.0, 1.0)

    h = k // 2
    values = np.full(frame.shape, -1.0)
    values[h:frame.shape[0] - h, h:frame.shape[1] - h] = inner

    return CorrelationMap(values, k)


##
# Peaks

def detect_peaks(corr_map, threshold, min_sep):
    """Picks correlation peaks.

    Keeps strict 8-neighbor maxima at or above `threshold`, visits them by
    descending correlation, and drops any peak closer than `min_sep`
    (Chebyshev) to a stronger one already kept.

    :param corr_map: CorrelationMap, the map to search
    :param threshold: float, minimum correlation in (0, 1)
    :param min_sep: integer, minimum Chebyshev distance between peaks
    """
    validate('corr_threshold', threshold)

    values = corr_map.values
    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False
    neighbors = maximum_filter(values, footprint=footprint, mode='constant',
                               cval=-np.inf)

    candidates = (values > neighbors) & (values >= threshold) & \
        corr_map.valid
    flat = np.flatnonzero(candidates)
    # Row-major candidates, stable sort: ties keep scan order.
    flat = flat[np.argsort(-values.ravel()[flat], kind='stable')]

    kept = []
    for index in flat:
        r, c = divmod(int(index), values.shape[1])
        if all(max(abs(r - kr), abs(c - kc)) >= min_sep for kr, kc in kept):
            kept.append((r, c))

    return kept


def subpixel_refine(frame, peak, window):
    """Refines an integer peak by amplitude-weighted averaging.

    Weights are the window intensities minus the window minimum, so a flat
    background does not pull the estimate toward the window center.

    :param frame: array, 2D intensities
    :param peak: (int, int), integer (row, col) of the peak
    :param window: integer, odd window size in pixels
    :returns: ((row, col), amplitude)
    """
    if window < 1 or window % 2 != 1:
        raise ValidationError('com_window', 'This field must be odd.')

    frame = np.asarray(frame, dtype=float)
    patch = _window(frame, peak, window)
    r, c = int(peak[0]), int(peak[1])
    amplitude = float(frame[r, c])

    weights = np.maximum(patch - patch.min(), 0.0)
    total = weights.sum()
    if total <= 0:
        return (float(r), float(c)), amplitude

    h = window // 2
    offsets = np.arange(-h, h + 1, dtype=float)
    row = r + float(np.sum(weights.sum(axis=1) * offsets) / total)
    col = c + float(np.sum(weights.sum(axis=0) * offsets) / total)

    return (row, col), amplitude


##
# Frames and stacks

def localize_frame(frame, psf, config, frame_index=0):
    """Detects and refines every bubble in one frame.

    :param frame: array, 2D intensities
    :param psf: array, k x k PSF with k == config.psf_patch_size
    :param config: PipelineConfig
    :param frame_index: integer, index recorded on the BubbleSet
    """
    k = config.psf_patch_size
    if np.shape(psf) != (k, k):
        raise ValidationError('psf', 'The PSF must be {0}x{0} to match '
                              'psf_patch_size.'.format(k))

    frame = np.asarray(frame, dtype=float)
    corr = correlation_map(frame, psf)
    peaks = detect_peaks(corr, config.corr_threshold,
                         config.min_peak_separation)

    bubbles = []
    for peak in peaks:
        position, amplitude = subpixel_refine(frame, peak, config.com_window)
        bubbles.append(Bubble(position, amplitude,
                              _window(frame, peak, k).copy(), peak=peak,
                              correlation=float(corr.values[peak])))

    log.debug('Frame %d: %d bubbles', frame_index, len(bubbles))

    return BubbleSet(frame_index, bubbles)


def localize_stack(stack, psf, config, threads=1):
    """Localizes every frame of a stack. Frames are processed concurrently
    and gathered in frame order.

    :param stack: FrameStack
    :param psf: array, k x k PSF
    :param config: PipelineConfig
    :param threads: integer, maximum number of worker threads
    """
    def work(index):
        return localize_frame(stack.frame(index), psf, config, index)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        bubble_sets = list(pool.map(work, range(stack.n_frames)))

    log.info('Localized %d bubbles in %d frames',
             sum(len(s) for s in bubble_sets), stack.n_frames)

    return bubble_sets


##
# Bubble CSV

def write_bubbles_csv(bubble_sets, path):
    """Writes `frame,row,col,amplitude`, one line per bubble."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(BUBBLES_CSV_HEADER)
        for bubble_set in bubble_sets:
            for bubble in bubble_set:
                writer.writerow([
                    bubble_set.frame_index,
                    '{:.4f}'.format(bubble.position[0]),
                    '{:.4f}'.format(bubble.position[1]),
                    '{:.6g}'.format(bubble.amplitude),
                ])


def read_bubbles_csv(path, n_frames=None):
    """Reads a bubble CSV back into BubbleSets (without patches).

    :param path: string, the CSV to read
    :param n_frames: integer, number of frames; defaults to the last frame
        mentioned in the file plus one
    """
    rows = []
    with open(path, 'r', newline='') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != BUBBLES_CSV_HEADER:
            raise ValidationError(path, 'Expected header ' +
                                  ','.join(BUBBLES_CSV_HEADER) + '.')
        for line in reader:
            rows.append((int(line['frame']), float(line['row']),
                         float(line['col']), float(line['amplitude'])))

    if n_frames is None:
        n_frames = max((row[0] for row in rows), default=-1) + 1

    bubble_sets = [BubbleSet(i) for i in range(n_frames)]
    for frame, row, col, amplitude in rows:
        bubble_sets[frame].bubbles.append(
            Bubble((row, col), amplitude, np.zeros((0, 0))))

    return bubble_sets


##
# Detections sidecar

def _detections_dtype(k):
    return np.dtype([
        ('frame', '<u4'),
        ('peak', '<i4', (2,)),
        ('position', '<f8', (2,)),
        ('amplitude', '<f8'),
        ('correlation', '<f8'),
        ('patch', '<f8', (k, k)),
    ])


def save_detections(bubble_sets, path, k):
    """Saves every bubble, patch included, as one structured `.npy` array.

    :param bubble_sets: list of BubbleSet
    :param path: string, destination `.npy` file
    :param k: integer, patch size
    """
    records = np.zeros(sum(len(s) for s in bubble_sets),
                       dtype=_detections_dtype(k))
    index = 0
    for bubble_set in bubble_sets:
        for bubble in bubble_set:
            records[index] = (bubble_set.frame_index, bubble.peak,
                              bubble.position, bubble.amplitude,
                              np.nan if bubble.correlation is None
                              else bubble.correlation,
                              bubble.patch)
            index += 1

    with open(path, 'wb') as f:
        np.save(f, records, allow_pickle=False)


def load_detections(path, n_frames):
    """Loads a detections sidecar back into BubbleSets, one per frame."""
    records = np.load(path, allow_pickle=False)

    bubble_sets = [BubbleSet(i) for i in range(n_frames)]
    for record in records:
        frame = int(record['frame'])
        if frame >= n_frames:
            raise ValidationError(path, 'Detection in frame {} beyond the '
                                  'stack ({} frames).'.format(frame, n_frames))
        correlation = float(record['correlation'])
        bubble_sets[frame].bubbles.append(Bubble(
            tuple(record['position']), float(record['amplitude']),
            np.array(record['patch']), peak=tuple(record['peak']),
            correlation=None if np.isnan(correlation) else correlation))

    return bubble_sets
