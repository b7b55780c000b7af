# -*- coding: utf-8 -*-
#
# name:             tests/__init__.py
# author:           ulm_pipeline contributors
# created on:       03/02/2026
#

"""
Test module for ulm_pipeline unit tests.
"""

from os import environ


environ['ULM_DEBUG'] = 'False'
environ['ULM_TESTING'] = 'True'
environ['ULM_LOG_LEVEL'] = 'WARNING'
