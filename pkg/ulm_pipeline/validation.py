# -*- coding: utf-8 -*-
#
# name:             validation.py
# author:           ulm_pipeline contributors
# created on:       03/02/2026
#

"""
ulm_pipeline.validation
~~~~~~~~~~~~~~~~~~~~~~~

This module contains functions to validate configuration and scenario fields.
"""

import math


class ValidationError(Exception):
    """Exception thrown when a validation error has occured."""
    def __init__(self, fieldname, message, *args, **kwargs):
        """Initialize ValidationError with `fieldname` and `message` values."""
        self.details = {
            'fieldname': fieldname,
            'message':   message,
        }
        super(ValidationError, self).__init__(message, *args, **kwargs)

    def get_details(self):
        """Returns a list of error details."""
        return [self.details]


class ValidationErrorsBatch(ValidationError):
    """Exception thrown when multiple validation errors have occured."""
    def __init__(self, validation_errors, *args, **kwargs):
        """Initialize ValidationErrorsBatch with `validation_errors` list."""
        self.validation_errors = validation_errors
        super(ValidationError, self).__init__('Validation errors occured.',
                                              *args, **kwargs)

    def get_details(self):
        """Returns a list of error details."""
        return [error.details for error in self.validation_errors]


def validate(fieldname, value, optional=False, validate_as=None, *args,
             **kwargs):
    """Validates a value for a particular fieldtype.
    Returns True if it is valid; raises an error otherwise.

    :param fieldname: string, the fieldname to validate (determines the type of
        validation to use)
    :param value: mixed, the value to validate
    :param optional: bool, if True, accept None as a valid value
    :param validate_as: string, an optional argument to specifically select a
        validation function to run. If this is not passed, the fieldname will
        be used.
    """
    if optional and value is None:
        return True
    elif value is None or value == '':
        raise ValidationError(fieldname, 'This field (' + fieldname +
                              ') is required.')

    if not validate_as:
        validate_as = fieldname

    if validate_as not in validation_functions:
        return True

    return validation_functions[validate_as](value, fieldname, *args, **kwargs)


def as_number(value, fieldname, message):
    """Converts ints, floats and numeric strings to float or raises."""
    if isinstance(value, bool):
        raise ValidationError(fieldname, message)
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValidationError(fieldname, message)
    if not math.isfinite(number):
        raise ValidationError(fieldname, message)
    return number


##
# Specific Validation Functions

def is_int(value, fieldname='int', min_value=None, max_value=None, **kwargs):
    """Validates and returns True if the value is an integer (within
    min_value/max_value range). Otherwise, raises a validation error."""
    number = as_number(value, fieldname, 'This field must be an integer.')
    if number != int(number):
        raise ValidationError(fieldname, 'This field must be an integer.')

    if min_value is not None and number < min_value:
        raise ValidationError(fieldname,
                              'This field must be at least ' +
                              str(min_value) + '.')
    if max_value is not None and number > max_value:
        raise ValidationError(fieldname,
                              'This field must be at most ' +
                              str(max_value) + '.')
    return True


def is_odd(value, fieldname='odd', **kwargs):
    """Validates and returns True if the value is an odd positive integer.
    Otherwise, raises a validation error."""
    is_int(value, fieldname, min_value=1)
    if int(float(value)) % 2 != 1:
        raise ValidationError(fieldname, 'This field must be odd.')
    return True


def is_real(value, fieldname='real', min_value=None, max_value=None,
            **kwargs):
    """Validates and returns True if the value is a finite number (within
    min_value/max_value range). Otherwise, raises a validation error."""
    number = as_number(value, fieldname, 'This field must be a number.')

    if min_value is not None and number < min_value:
        raise ValidationError(fieldname,
                              'This field must be at least ' +
                              str(min_value) + '.')
    if max_value is not None and number > max_value:
        raise ValidationError(fieldname,
                              'This field must be at most ' +
                              str(max_value) + '.')
    return True


def is_positive(value, fieldname='positive', **kwargs):
    """Validates and returns True if the value is a number greater than zero.
    Otherwise, raises a validation error."""
    if as_number(value, fieldname, 'This field must be a number.') <= 0:
        raise ValidationError(fieldname,
                              'This field must be greater than 0.')
    return True


def is_non_negative(value, fieldname='non-negative', **kwargs):
    """Validates and returns True if the value is a number that is zero or
    greater. Otherwise, raises a validation error."""
    if as_number(value, fieldname, 'This field must be a number.') < 0:
        raise ValidationError(fieldname,
                              'This field must not be negative.')
    return True


def is_open_unit(value, fieldname='open-unit', **kwargs):
    """Validates and returns True if the value lies strictly between 0 and 1.
    Otherwise, raises a validation error."""
    number = as_number(value, fieldname, 'This field must be a number.')
    if not 0 < number < 1:
        raise ValidationError(fieldname,
                              'This field must lie strictly between 0 and 1.')
    return True


def is_probability(value, fieldname='probability', **kwargs):
    """Validates and returns True if the value lies in [0, 1]. Otherwise,
    raises a validation error."""
    number = as_number(value, fieldname, 'This field must be a number.')
    if not 0 <= number <= 1:
        raise ValidationError(fieldname,
                              'This field must lie between 0 and 1.')
    return True


def is_transform_mode(value, fieldname='transform_mode', **kwargs):
    """Validates and returns True if the value names a transform family.
    Otherwise, raises a validation error."""
    if not hasattr(value, 'lower') or value.lower() not in TRANSFORM_MODES:
        raise ValidationError(fieldname,
                              'This field must be translation or affine.')
    return True


TRANSFORM_MODES = ['translation', 'affine']


# Set up validation functions dict
validation_functions = {
    'alpha':                is_non_negative,
    'amplitude':            is_positive,
    'avg_sigma':            is_positive,
    'background':           is_non_negative,
    'beta':                 is_non_negative,
    'com_window':           is_odd,
    'corr_threshold':       is_open_unit,
    'density_sigma':        is_positive,
    'frame_rate':           is_positive,
    'gamma':                is_non_negative,
    'gather_radius':        is_positive,
    'height':               is_int,
    'max_outer_iters':      is_int,
    'min_peak_separation':  is_int,
    'min_track_length':     is_int,
    'n_bubbles':            is_int,
    'n_frames':             is_int,
    'noise_std':            is_non_negative,
    'pair_gate_distance':   is_positive,
    'pair_min_prob':        is_probability,
    'pixel_size':           is_positive,
    'positive':             is_positive,
    'psf_patch_size':       is_odd,
    'psf_sigma':            is_positive,
    'real':                 is_real,
    'seed':                 is_int,
    'sinkhorn_iters':       is_int,
    'sinkhorn_tol':         is_non_negative,
    'sr_factor':            is_int,
    'transform_mode':       is_transform_mode,
    'w1':                   is_positive,
    'w2':                   is_positive,
    'width':                is_int,
}
