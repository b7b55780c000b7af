# -*- coding: utf-8 -*-
#
# name:             core.py
# author:           ulm_pipeline contributors
# created on:       03/02/2026
#

"""
ulm_pipeline.core
~~~~~~~~~~~~~~~~~

This module contains the domain types shared by every stage (frame stacks,
bubbles, bubble sets and the pipeline configuration) and the reader and writer
for the ULMF frame-stack container.

ULMF layout (little-endian): magic "ULMF", u32 version, u32 n_frames,
u32 height, u32 width, f32 pixel_size_mm, f32 frame_rate_hz, then
n_frames * height * width f32 intensities, frame-major, row-major.
"""

import logging
import struct

import numpy as np

from .parameters import Parameters, read_key_value_file
from .stage import StageException
from .validation import ValidationError, as_number


log = logging.getLogger(__name__)


MAGIC = b'ULMF'
VERSION = 1
HEADER = struct.Struct('<4sIIIIff')


class FormatError(StageException):
    """Exception thrown when a frame-stack file is malformed."""
    def __init__(self, message, offset, *args, **kwargs):
        """Initialize FormatError with a `message` and the byte `offset` where
        the problem was found."""
        self.offset = offset
        super(FormatError, self).__init__(
            '{} (at byte offset {})'.format(message, offset), *args, **kwargs)


##
# Frame stacks

class FrameStack(object):
    def __init__(self, data, pixel_size, frame_rate, validate=True):
        """Time-ordered stack of 2D intensity frames.

        :param data: array-like, (n_frames, height, width) intensities; stored
            as a read-only float32 array
        :param pixel_size: float, millimeters per pixel (isotropic)
        :param frame_rate: float, frames per second
        :param validate: boolean, whether or not to check the invariants on
            initialization. Defaults to True.
        """
        data = np.array(data, dtype='<f4', copy=True)
        if data.ndim != 3:
            raise ValidationError('data', 'Frame data must be 3D '
                                  '(n_frames, height, width).')
        data.setflags(write=False)

        self.data = data
        # Header fields are f32 on disk; keep them at that precision so a
        # write/read round trip is the identity.
        self.pixel_size = float(np.float32(pixel_size))
        self.frame_rate = float(np.float32(frame_rate))

        if validate:
            self.check()

    @classmethod
    def from_array(cls, data, pixel_size, frame_rate):
        """Builds a validated FrameStack from any array-like."""
        return cls(data, pixel_size, frame_rate)

    @property
    def n_frames(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def frame(self, index):
        """Returns frame `index` as a read-only (height, width) view."""
        return self.data[index]

    def check(self):
        """Raises a ValidationError if a FrameStack invariant is violated."""
        Parameters({
            'pixel_size': self.pixel_size,
            'frame_rate': self.frame_rate,
        })

        finite = np.isfinite(self.data)
        if not finite.all():
            index = int(np.flatnonzero(~finite.ravel())[0])
            raise ValidationError('data', 'Non-finite intensity at element '
                                  '{}.'.format(index))

        if (self.data < 0).any():
            raise ValidationError('data', 'Intensities must be non-negative.')

        return True

    def __eq__(self, other):
        if not isinstance(other, FrameStack):
            return NotImplemented
        return (self.pixel_size == other.pixel_size
                and self.frame_rate == other.frame_rate
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())

    def __repr__(self):
        return 'FrameStack(n_frames={}, height={}, width={}, ' \
               'pixel_size={}, frame_rate={})'.format(
                   self.n_frames, self.height, self.width, self.pixel_size,
                   self.frame_rate)


def write_stack(stack, path):
    """Writes a FrameStack to a ULMF file.

    :param stack: FrameStack, the stack to write (checked before writing)
    :param path: string, destination file path
    """
    stack.check()

    header = HEADER.pack(MAGIC, VERSION, stack.n_frames, stack.height,
                         stack.width, stack.pixel_size, stack.frame_rate)

    with open(path, 'wb') as f:
        f.write(header)
        f.write(stack.data.astype('<f4', copy=False).tobytes(order='C'))

    log.debug('Wrote %r to %s', stack, path)


def read_stack(path):
    """Reads a ULMF file and returns a FrameStack.

    :param path: string, path of the file to read
    """
    with open(path, 'rb') as f:
        raw = f.read()

    if len(raw) < HEADER.size:
        raise FormatError('Truncated header', len(raw))

    magic, version, n_frames, height, width, pixel_size, frame_rate = \
        HEADER.unpack_from(raw, 0)

    if magic != MAGIC:
        raise FormatError('Bad magic {!r}'.format(magic), 0)
    if version != VERSION:
        raise FormatError('Unsupported version {}'.format(version), 4)
    if not (np.isfinite(pixel_size) and pixel_size > 0):
        raise FormatError('pixel_size must be positive', 20)
    if not (np.isfinite(frame_rate) and frame_rate > 0):
        raise FormatError('frame_rate must be positive', 24)

    count = n_frames * height * width
    expected = HEADER.size + 4 * count
    if len(raw) < expected:
        raise FormatError('Truncated payload: header promises {} bytes, '
                          'file has {}'.format(expected, len(raw)), len(raw))
    if len(raw) > expected:
        raise FormatError('Trailing bytes after payload', expected)

    data = np.frombuffer(raw, dtype='<f4', count=count, offset=HEADER.size)

    bad = ~np.isfinite(data) | (data < 0)
    if bad.any():
        index = int(np.flatnonzero(bad)[0])
        raise FormatError('Invalid intensity {!r}'.format(float(data[index])),
                          HEADER.size + 4 * index)

    stack = FrameStack(data.reshape(n_frames, height, width), pixel_size,
                       frame_rate, validate=False)
    log.debug('Read %r from %s', stack, path)

    return stack


##
# Bubbles

class Bubble(object):
    def __init__(self, position, amplitude, patch, peak=None,
                 correlation=None):
        """A detected microbubble.

        :param position: (float, float), subpixel (row, col) in pixels
        :param amplitude: float, intensity at the integer peak
        :param patch: array, k x k intensity window centered on the peak
        :param peak: (int, int), integer detection location; defaults to the
            rounded position
        :param correlation: float, correlation score at the peak (optional)
        """
        self.position = (float(position[0]), float(position[1]))
        self.amplitude = float(amplitude)
        self.patch = np.asarray(patch, dtype=float)
        if peak is None:
            peak = (int(round(position[0])), int(round(position[1])))
        self.peak = (int(peak[0]), int(peak[1]))
        self.correlation = correlation

    def __repr__(self):
        return 'Bubble(position=({:.4f}, {:.4f}), amplitude={:.6g})'.format(
            self.position[0], self.position[1], self.amplitude)


class BubbleSet(object):
    def __init__(self, frame_index, bubbles=None):
        """The ordered bubbles detected in one frame.

        :param frame_index: integer, index of the frame
        :param bubbles: list of Bubble, in detection order
        """
        self.frame_index = int(frame_index)
        self.bubbles = list(bubbles) if bubbles else []

    def __len__(self):
        return len(self.bubbles)

    def __iter__(self):
        return iter(self.bubbles)

    def __getitem__(self, index):
        return self.bubbles[index]

    def positions(self):
        """Returns the (n, 2) array of subpixel positions."""
        if not self.bubbles:
            return np.zeros((0, 2))
        return np.array([b.position for b in self.bubbles], dtype=float)

    def patches(self):
        """Returns the (n, k, k) array of patches."""
        if not self.bubbles:
            return np.zeros((0, 0, 0))
        return np.stack([b.patch for b in self.bubbles])

    def __repr__(self):
        return 'BubbleSet(frame_index={}, n={})'.format(self.frame_index,
                                                        len(self))


##
# Pipeline configuration

# Field name, type, default. None defaults are derived from sr_factor.
CONFIG_FIELDS = [
    ('psf_patch_size',       int,    7),
    ('psf_sigma',            float,  1.5),
    ('corr_threshold',       float,  0.6),
    ('min_peak_separation',  int,    3),
    ('com_window',           int,    5),
    ('alpha',                float,  1.0),
    ('beta',                 float,  0.5),
    ('gamma',                float,  0.1),
    ('w1',                   float,  4.0),
    ('w2',                   float,  0.5),
    ('transform_mode',       str,    'translation'),
    ('max_outer_iters',      int,    10),
    ('sinkhorn_iters',       int,    20),
    ('sinkhorn_tol',         float,  1e-9),
    ('pair_gate_distance',   float,  5.0),
    ('pair_min_prob',        float,  0.05),
    ('sr_factor',            int,    8),
    ('density_sigma',        float,  1.0),
    ('gather_radius',        float,  None),
    ('avg_sigma',            float,  None),
    ('min_track_length',     int,    3),
]

CONFIG_TYPES = {name: kind for name, kind, _ in CONFIG_FIELDS}

DERIVED_FIELDS = ('gather_radius', 'avg_sigma')


class PipelineConfig(object):
    def __init__(self, validate=True, **fields):
        """Tunables for every pipeline stage.

        Unset fields take their defaults; gather_radius defaults to
        3 * sr_factor and avg_sigma to gather_radius / 2.

        :param validate: boolean, whether or not to validate on
            initialization. Defaults to True.
        """
        unknown = sorted(set(fields) - set(CONFIG_TYPES))
        if unknown:
            raise ValidationError(unknown[0], 'Unknown configuration key (' +
                                  unknown[0] + ').')

        for name, kind, default in CONFIG_FIELDS:
            value = fields.get(name, default)
            if value is not None and kind is not str:
                value = _convert(name, value, kind)
            setattr(self, name, value)

        self.derived = tuple(name for name in DERIVED_FIELDS
                             if getattr(self, name) is None)
        if self.gather_radius is None:
            self.gather_radius = 3.0 * self.sr_factor
        if self.avg_sigma is None:
            self.avg_sigma = self.gather_radius / 2.0
        self.transform_mode = str(self.transform_mode).lower()

        if validate:
            self.validate()

    @classmethod
    def from_file(cls, path):
        """Builds a PipelineConfig from a flat `key = value` file. Unknown
        keys are reported with their file and line."""
        fields = {}
        for key, value, line_number in read_key_value_file(path):
            if key not in CONFIG_TYPES:
                raise ValidationError(
                    key, 'Unknown configuration key ({}) at {}:{}.'.format(
                        key, path, line_number))
            fields[key] = value
        return cls(**fields)

    def validate(self):
        """Validates every field; all violations are raised together."""
        Parameters({
            'psf_patch_size':       self.psf_patch_size,
            'psf_sigma':            self.psf_sigma,
            'corr_threshold':       self.corr_threshold,
            'min_peak_separation':  {'value': self.min_peak_separation,
                                     'min_value': 1},
            'com_window':           self.com_window,
            'alpha':                self.alpha,
            'beta':                 self.beta,
            'gamma':                self.gamma,
            'w1':                   self.w1,
            'w2':                   self.w2,
            'transform_mode':       self.transform_mode,
            'max_outer_iters':      {'value': self.max_outer_iters,
                                     'min_value': 1},
            'sinkhorn_iters':       {'value': self.sinkhorn_iters,
                                     'min_value': 1},
            'sinkhorn_tol':         self.sinkhorn_tol,
            'pair_gate_distance':   self.pair_gate_distance,
            'pair_min_prob':        self.pair_min_prob,
            'sr_factor':            {'value': self.sr_factor,
                                     'min_value': 1},
            'density_sigma':        self.density_sigma,
            'gather_radius':        self.gather_radius,
            'avg_sigma':            self.avg_sigma,
            'min_track_length':     {'value': self.min_track_length,
                                     'min_value': 2},
        })

        if self.com_window > self.psf_patch_size:
            raise ValidationError('com_window', 'This field must not exceed '
                                  'psf_patch_size.')
        return True

    def to_dict(self):
        """Returns every field and its value, in declaration order."""
        return {name: getattr(self, name) for name, _, _ in CONFIG_FIELDS}

    def replace(self, **changes):
        """Returns a copy with some fields changed. Radii that were derived
        rather than set follow the changed fields; set ones are kept."""
        fields = self.to_dict()
        for name in self.derived:
            fields.pop(name)
        fields.update(changes)
        return PipelineConfig(**fields)

    def __eq__(self, other):
        if not isinstance(other, PipelineConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return 'PipelineConfig({})'.format(', '.join(
            '{}={!r}'.format(k, v) for k, v in self.to_dict().items()))


def _convert(name, value, kind):
    """Converts a raw (possibly string) value to the field's type."""
    number = as_number(value, name, 'This field must be a finite number.')
    if kind is int:
        if number != int(number):
            raise ValidationError(name, 'This field must be an integer.')
        return int(number)
    return number
