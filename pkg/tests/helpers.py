# -*- coding: utf-8 -*-
#
# name:             helpers.py
# author:           ulm_pipeline contributors
# created on:       03/02/2026
#

"""
Helpers for ulm_pipeline unit tests.
"""

from os import environ
from mock import patch

import numpy as np

from ulm_pipeline.core import Bubble, BubbleSet, PipelineConfig
from ulm_pipeline.localize import gaussian_psf
from ulm_pipeline.synth import Scenario, Vessel, render_frame


##
# Config patches

def set_debug(test_fn):
    @patch.dict(environ, {'ULM_DEBUG': 'true'})
    def test_wrapper(*args, **kwargs):
        test_fn(*args, **kwargs)
    return test_wrapper


def set_no_debug(test_fn):
    @patch.dict(environ, {'ULM_DEBUG': 'false'})
    def test_wrapper(*args, **kwargs):
        test_fn(*args, **kwargs)
    return test_wrapper


def set_no_testing(test_fn):
    @patch.dict(environ, {'ULM_TESTING': 'false'})
    def test_wrapper(*args, **kwargs):
        test_fn(*args, **kwargs)
    return test_wrapper


##
# Factories

def blob_patch(k=7, sigma=1.5, offset=(0.0, 0.0)):
    """A k x k Gaussian blob, optionally shifted off center."""
    h = k // 2
    return render_frame(k, k, [(h + offset[0], h + offset[1])], [1.0], sigma)


def make_bubble_set(positions, frame_index=0, patches=None, k=7):
    """A BubbleSet at `positions`; every bubble carries the same centered
    Gaussian patch unless `patches` is given."""
    if patches is None:
        patches = [blob_patch(k) for _ in positions]
    return BubbleSet(frame_index, [
        Bubble(position, 1.0, patch)
        for position, patch in zip(positions, patches)])


def spread_points(n, spacing=12.0, origin=(20.0, 20.0), seed=0):
    """n points on a jittered grid, at least `spacing` - 2 px apart."""
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n)))
    cells = [(r, c) for r in range(side) for c in range(side)][:n]
    return np.array([(origin[0] + spacing * r, origin[1] + spacing * c)
                     for r, c in cells]) + rng.uniform(-1.0, 1.0, (n, 2))


def separated_points(n, rng, low=5.0, high=120.0, min_sep=3.0):
    """n uniform points in [low, high)^2, pairwise at least `min_sep` px
    apart."""
    points = []
    while len(points) < n:
        candidate = rng.uniform(low, high, 2)
        if all(np.hypot(*(candidate - p)) >= min_sep for p in points):
            points.append(candidate)
    return np.array(points)


def registration_config(**changes):
    """Config for exact-recovery checks: no movement penalty."""
    fields = {'gamma': 0.0, 'pair_gate_distance': 8.0}
    fields.update(changes)
    return PipelineConfig(**fields)


def psf(k=7, sigma=1.5):
    return gaussian_psf(k, sigma)


def two_vessel_scenario(n_frames=60, slow=0.002, fast=0.02, per_vessel=4,
                        seed=3, noise_std=0.0):
    """Two parallel horizontal vessels of equal geometry and different peak
    speeds."""
    return Scenario(
        height=96, width=96, pixel_size=0.1, frame_rate=100.0,
        n_frames=n_frames, n_bubbles=2 * per_vessel, psf_sigma=1.5,
        noise_std=noise_std, seed=seed, vessels=[
            Vessel((28.0, 16.0), (28.0, 80.0), 4.0, slow),
            Vessel((68.0, 16.0), (68.0, 80.0), 4.0, fast),
        ])
