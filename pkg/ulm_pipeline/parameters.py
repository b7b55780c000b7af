# -*- coding: utf-8 -*-
#
# name:             parameters.py
# author:           ulm_pipeline contributors
# created on:       03/02/2026
#

"""
ulm_pipeline.parameters
~~~~~~~~~~~~~~~~~~~~~~~

This module contains the Parameters class for self-validating parameters
objects, and the reader for flat `key = value` text files.

The object allows for declaring parameters with validation options for use in
self-validating (or manual validation).
"""

from .validation import validate, ValidationError, ValidationErrorsBatch


class Parameters(object):
    def __init__(self, params_with_options, validate=True):
        """Initializes the Parameters object

        :param params_with_options: dict, a dict of parameters with their
            options for validating.
            Format without options:
                {
                    'fieldname' : value,
                    ...
                }
            Format with options:
                {
                    # Will be validated as 'fieldname'
                    'fieldname' : {
                        'value': value,
                        'min_value': 1,
                        ...
                    },
                    # Will be validated as 'real'
                    'fieldname_2' : {
                        'value': value,
                        'validate_as': 'real',
                        ...
                    },
                    ...
                }
        :param validate: boolean, whether or not to validate parameters on
            initialization. Defaults to True.
        """
        self._params_with_options = dict(params_with_options)

        if (validate):
            self.validate()

    def validate(self):
        """Validates the parameters according to the fieldname and any optional
        validation options."""
        errors = []

        for fieldname, options in self._params_with_options.items():
            if isinstance(options, dict):
                options = options.copy()
                value = options.pop('value')
            else:
                # Options variable is actually the value in this instance:
                value = options
                options = {}

            try:
                validate(fieldname, value, **options)
            except ValidationError as e:
                errors.append(e)

        if len(errors) == 1:
            raise errors[0]
        elif len(errors) > 1:
            raise ValidationErrorsBatch(errors)


def read_key_value_file(path):
    """Reads a flat `key = value` text file.

    Blank lines are skipped and `#` starts a comment. Returns a list of
    (key, value, line_number) triples in file order so callers can report
    errors with file and line context.

    :param path: string, path of the file to read
    """
    entries = []

    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue

            if '=' not in line:
                raise ValidationError(
                    '{}:{}'.format(path, line_number),
                    'Expected `key = value`, got "' + line + '".')

            key, value = line.split('=', 1)
            key = key.strip().lower()
            if not key:
                raise ValidationError('{}:{}'.format(path, line_number),
                                      'Missing key before `=`.')

            entries.append((key, value.strip(), line_number))

    return entries
