# -*- coding: utf-8 -*-
#
# name:             ulm_pipeline/__main__.py
# author:           ulm_pipeline contributors
# created on:       03/09/2026
#

"""Runs the `ulm` command line through `python -m ulm_pipeline`."""

import sys

from .cli import main


sys.exit(main())
