#!/usr/bin/env python
# -*- coding: utf-8 -*-

# pylint: disable=bad-whitespace,redefined-builtin

"""
ulm_pipeline setup
"""

from codecs import open
import re
from setuptools import setup, find_packages
from setuptools.command.egg_info import egg_info


with open('README.rst', 'r', 'utf-8') as f:
    README = f.read()

# Read the version without importing the package (numpy may not be installed
# yet).
with open('ulm_pipeline/__init__.py', 'r', 'utf-8') as f:
    version = re.search(r"^__version__ = '([^']+)'", f.read(), re.M).group(1)


class egg_info_with_license(egg_info):
    """Copies license file into `.egg-info` folder."""

    def run(self):
        # don't duplicate license into `.egg-info` when building a distribution
        if not self.distribution.have_run.get('install', True):
            # `install` command is in progress, copy license
            self.mkpath(self.egg_info)
            self.copy_file('LICENSE', self.egg_info)

        egg_info.run(self)


setup(
    name = 'ulm_pipeline',
    python_requires = '>=3.7',
    version = version,
    description = 'Ultrasound localization microscopy: microbubble '
                  'localization, fuzzy-registration tracking and '
                  'super-resolution maps',
    long_description = README,
    long_description_content_type = 'text/x-rst',
    license = 'MIT License',
    license_files = ('LICENSE',),
    keywords = ['ultrasound', 'localization microscopy', 'ulm',
                'microbubbles', 'super-resolution', 'tracking',
                'point set registration'],
    classifiers = [
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
        'Topic :: Scientific/Engineering :: Image Processing',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
    ],
    packages = find_packages(exclude=['tests']),
    install_requires = ['numpy>=1.20', 'scipy>=1.6'],
    test_requires = ['pytest>=3', 'pytest-cov', 'mock'],
    package_data = {'': ['LICENSE']},
    entry_points = {
        'console_scripts': ['ulm = ulm_pipeline.cli:main'],
    },
    cmdclass = {'egg_info': egg_info_with_license},
)
