# -*- coding: utf-8 -*-
#
# name:             ulm_pipeline/__init__.py
# author:           ulm_pipeline contributors
# created on:       03/02/2026
#

"""
ulm_pipeline
~~~~~~~~~~~~

This package localizes microbubbles in contrast-enhanced ultrasound frame
stacks, tracks them by fuzzy point-set registration and renders
super-resolved density and speed maps.
"""

from . import core      # noqa: F401
from . import localize  # noqa: F401
from . import register  # noqa: F401
from . import tracks    # noqa: F401
from . import maps      # noqa: F401
from . import synth     # noqa: F401


__title__ = 'ulm_pipeline'
__version__ = '0.1.1'
__license__ = 'MIT'
__copyright__ = 'Copyright 2026 ulm_pipeline contributors'
