# -*- coding: utf-8 -*-
#
# name:             config.py
# author:           ulm_pipeline contributors
# created on:       03/02/2026
#

"""
ulm_pipeline.config
~~~~~~~~~~~~~~~~~~~

This module contains the environment switches read by the pipeline.
"""

from os import environ


BOOLEAN_SWITCHES = ['ULM_DEBUG', 'ULM_TESTING']

DEFAULTS = {
    'ULM_LOG_LEVEL': 'WARNING',
}


def _is_true(env_var):
    if env_var is None:
        return False
    return env_var.lower() in ['1', 'true', 'yes']


def get_config(env_var):
    """Returns the value of an environment switch. Boolean switches are
    converted to True or False; others fall back to their default."""
    if env_var in BOOLEAN_SWITCHES:
        return _is_true(environ.get(env_var))
    else:
        return environ.get(env_var, DEFAULTS.get(env_var))
