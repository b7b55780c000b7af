# -*- coding: utf-8 -*-
#
# name:             stage.py
# author:           ulm_pipeline contributors
# created on:       03/02/2026
#

"""
ulm_pipeline.stage
~~~~~~~~~~~~~~~~~~

This module contains the pipeline stage result wrapper, the base exception for
errors reported by pipeline stages, and the stage decorator function.
"""

from functools import wraps
from json import dumps as to_json_string
import logging

from .config import get_config
from .validation import ValidationError


log = logging.getLogger(__name__)


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 65
EXIT_IO = 74


class StageResult(object):
    def __init__(self, stage_name, payload=None):
        """Wrapper object holding the outcome of a pipeline stage.

        :param stage_name: string, name of the stage (used to tag messages)
        :param payload: mixed, json-friendly value returned by the stage
        """
        self.stage_name = stage_name
        self.payload = payload
        self.error = None
        self.validation_errors = None
        self.exit_code = EXIT_OK

    def __str__(self):
        """Returns the string value of the result."""
        return self.string()

    @property
    def success(self):
        """Returns the success status of the stage. Successful when the exit
        code is zero and there are no error messages."""
        return self.exit_code == EXIT_OK and not self.error

    @property
    def message(self):
        """Returns the stage-tagged error message, or None on success."""
        if self.success:
            return None
        return '[{}] {}'.format(self.stage_name, self.error)

    def fail(self, error, exit_code):
        """Marks the result as failed.

        :param error: string, a message to report to the user
        :param exit_code: integer, the process exit code to report
        """
        self.error = error
        self.exit_code = exit_code

    def json(self):
        """Returns the result as a json-friendly dict."""
        json = {
            'stage':      self.stage_name,
            'exit_code':  self.exit_code,
            'success':    self.success,
            'payload':    self.payload,
        }

        if self.error:
            json['error'] = self.message

        if self.validation_errors:
            json['validation_errors'] = self.validation_errors

        return json

    def string(self):
        """Returns the json result as a json string."""
        return to_json_string(self.json(), sort_keys=True)


class StageException(Exception):
    exit_code = EXIT_DATA

    def __init__(self, message, *args, **kwargs):
        """An exception type reported and caught by a pipeline stage.

        :param message: string a message to report to the user.
        """
        self.message = message
        super(StageException, self).__init__(message, *args, **kwargs)


def stage(stage_name):
    """Decorates a pipeline stage in order to consistently handle errors and
    report a stage-tagged result.

    The decorated function should return a json-friendly payload, and this
    wrapper will cause the function to finally return a StageResult.

    :param stage_name: string, the name used to tag error messages
    """

    def decorated_stage(stage_call):
        """Decorates a stage call.

        :param stage_call: function, the function to be decorated
        """

        @wraps(stage_call)
        def stage_wrapper(*args, **kwargs):
            """Wraps a stage call in order to consistently handle errors."""
            result = StageResult(stage_name)

            try:
                result.payload = stage_call(*args, **kwargs)

            # Catch errors reported by the pipeline itself
            except StageException as e:
                result.fail(e.message, e.exit_code)

            # Catch Validation errors
            except ValidationError as e:
                result.fail('Validation error.', EXIT_USAGE)
                result.validation_errors = e.get_details()

                if get_config('ULM_DEBUG'):
                    result.error = str(e)

            # Catch file system errors
            except OSError as e:
                result.fail('I/O error: ' + str(e), EXIT_IO)

            # Catch all other errors
            except Exception as e:
                result.fail('Something went wrong.', EXIT_FAILURE)

                if get_config('ULM_DEBUG'):
                    result.error = str(e)

                if get_config('ULM_TESTING'):
                    import traceback
                    print('\n' + traceback.format_exc())

            if not result.success:
                log.error(result.message)

            return result

        return stage_wrapper

    return decorated_stage
