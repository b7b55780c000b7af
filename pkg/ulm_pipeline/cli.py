# -*- coding: utf-8 -*-
#
# name:             cli.py
# author:           ulm_pipeline contributors
# created on:       03/09/2026
#

"""
ulm_pipeline.cli
~~~~~~~~~~~~~~~~

This module contains the `ulm` command line: one stage-decorated command per
subcommand (simulate, localize, track, render, run, evaluate) and the run
manifest recording what a full run read, used and wrote.
"""

import argparse
from contextlib import contextmanager
import csv
import hashlib
import json
import logging
import os
import time

from . import __version__
from .config import get_config
from .core import PipelineConfig, read_stack, write_stack
from .localize import (localize_stack, load_detections, read_bubbles_csv,
                       save_detections, select_psf, write_bubbles_csv)
from .maps import (render_density, render_velocity, write_pgm, write_raw_map,
                   write_speed_csv)
from .register import register_stack, write_pairings_csv
from .stage import StageException, stage
from .synth import evaluate, read_scenario, simulate
from .tracks import (link, read_tracks_csv, velocity_samples,
                     write_tracks_csv)
from .validation import ValidationError


log = logging.getLogger(__name__)


STACK_FILE = 'stack.ulmf'
TRUTH_FILE = 'truth_tracks.csv'
BUBBLES_FILE = 'bubbles.csv'
DETECTIONS_FILE = 'detections.npy'
TRACKS_FILE = 'tracks.csv'
PAIRINGS_FILE = 'pairings.csv'
DENSITY_RAW_FILE = 'density.ulmm'
DENSITY_PGM_FILE = 'density.pgm'
SPEED_RAW_FILE = 'speed.ulmm'
SPEED_PGM_FILE = 'speed.pgm'
SPEED_CSV_FILE = 'speed.csv'
MANIFEST_FILE = 'manifest.json'
METRICS_TXT_FILE = 'metrics.txt'
METRICS_CSV_FILE = 'metrics.csv'

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def file_digest(path):
    """SHA-256 hex digest of a file's content."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


class RunManifest(object):
    def __init__(self, config, version=__version__):
        """Record of a pipeline run.

        :param config: PipelineConfig, echoed in full
        :param version: string, the ulm_pipeline version
        """
        self.config = config.to_dict()
        self.version = version
        self.inputs = {}
        self.outputs = {}
        self.timings = {}

    def add_input(self, path):
        self.inputs[os.path.basename(path)] = file_digest(path)

    def add_outputs(self, paths):
        for path in paths:
            self.outputs[os.path.basename(path)] = file_digest(path)

    @contextmanager
    def timed(self, step):
        """Records the wall time of a step in seconds."""
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[step] = round(time.perf_counter() - start, 6)

    def to_dict(self):
        return {
            'version':  self.version,
            'config':   self.config,
            'inputs':   self.inputs,
            'outputs':  self.outputs,
            'timings':  self.timings,
        }

    def write(self, path):
        with open(path, 'w') as f:
            f.write(json.dumps(self.to_dict(), indent=2, sort_keys=True))
            f.write('\n')


##
# Shared steps

def _load_config(path):
    return PipelineConfig.from_file(path) if path else PipelineConfig()


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _read_frames(path):
    """Reads a stack that holds at least one frame."""
    stack = read_stack(path)
    if stack.n_frames == 0:
        raise StageException('The stack {} holds no frames.'.format(path))
    return stack


def _psf_pick(args):
    """Returns (frame, (row, col)) for an operator pick, or (None, None)."""
    picks = (args.psf_frame, args.psf_row, args.psf_col)
    if all(p is None for p in picks):
        return None, None
    if any(p is None for p in picks):
        raise ValidationError('psf', 'Give --psf-frame, --psf-row and '
                              '--psf-col together.')
    return args.psf_frame, (args.psf_row, args.psf_col)


def _localize(stack, config, args, out):
    psf_frame, psf_center = _psf_pick(args)
    psf = select_psf(stack, config, psf_frame, psf_center, args.psf_sigma)
    bubble_sets = localize_stack(stack, psf, config, args.threads)

    written = [os.path.join(out, BUBBLES_FILE),
               os.path.join(out, DETECTIONS_FILE)]
    write_bubbles_csv(bubble_sets, written[0])
    save_detections(bubble_sets, written[1], config.psf_patch_size)
    return bubble_sets, written


def _track(stack, bubble_sets, config, args, out):
    pairings = register_stack(bubble_sets, config, args.threads)
    tracks = link(pairings, bubble_sets, config.min_track_length,
                  stack.pixel_size, stack.frame_rate)

    written = [os.path.join(out, TRACKS_FILE)]
    write_tracks_csv(tracks, written[0])
    if args.dump_pairings:
        written.append(os.path.join(out, PAIRINGS_FILE))
        write_pairings_csv(pairings, written[-1])
    return tracks, written


def _render(stack, bubble_sets, tracks, config, args, out):
    density = render_density(bubble_sets, config, stack.height, stack.width,
                             args.threads)
    field = render_velocity(velocity_samples(tracks), config, stack.height,
                            stack.width, args.threads)

    written = [os.path.join(out, name) for name in (
        DENSITY_RAW_FILE, DENSITY_PGM_FILE, SPEED_RAW_FILE, SPEED_PGM_FILE,
        SPEED_CSV_FILE)]
    write_raw_map(density.values, written[0])
    write_pgm(density.values, written[1])
    write_raw_map(field.speed, written[2])
    write_pgm(field.speed, written[3])
    write_speed_csv(field, written[4])
    return written


##
# Commands

@stage('simulate')
def cmd_simulate(args):
    """Simulates a scenario: writes the stack and its truth tracks."""
    out = _out_dir(args.out)
    scenario = read_scenario(args.scenario, seed=args.seed)
    stack, truth = simulate(scenario)

    written = [os.path.join(out, STACK_FILE), os.path.join(out, TRUTH_FILE)]
    write_stack(stack, written[0])
    write_tracks_csv(truth, written[1])

    return {'n_frames': stack.n_frames, 'n_tracks': len(truth),
            'outputs': written}


@stage('localize')
def cmd_localize(args):
    out = _out_dir(args.out)
    config = _load_config(args.config)
    stack = _read_frames(args.stack)
    bubble_sets, written = _localize(stack, config, args, out)
    return {'n_bubbles': sum(len(s) for s in bubble_sets),
            'outputs': written}


@stage('track')
def cmd_track(args):
    out = _out_dir(args.out)
    config = _load_config(args.config)
    stack = _read_frames(args.stack)
    bubble_sets = load_detections(args.detections, stack.n_frames)
    tracks, written = _track(stack, bubble_sets, config, args, out)
    return {'n_tracks': len(tracks), 'outputs': written}


@stage('render')
def cmd_render(args):
    out = _out_dir(args.out)
    config = _load_config(args.config)
    stack = _read_frames(args.stack)
    bubble_sets = load_detections(args.detections, stack.n_frames)
    tracks = read_tracks_csv(args.tracks)
    return {'outputs': _render(stack, bubble_sets, tracks, config, args,
                               out)}


@stage('run')
def cmd_run(args):
    """Runs localize, track and render on one stack and writes a manifest
    with a digest of every output."""
    out = _out_dir(args.out)
    config = _load_config(args.config)
    manifest = RunManifest(config)

    with manifest.timed('read'):
        stack = _read_frames(args.stack)
        manifest.add_input(args.stack)
        if args.config:
            manifest.add_input(args.config)

    with manifest.timed('localize'):
        bubble_sets, written = _localize(stack, config, args, out)
    manifest.add_outputs(written)

    with manifest.timed('track'):
        tracks, written = _track(stack, bubble_sets, config, args, out)
    manifest.add_outputs(written)

    with manifest.timed('render'):
        written = _render(stack, bubble_sets, tracks, config, args, out)
    manifest.add_outputs(written)

    manifest.write(os.path.join(out, MANIFEST_FILE))

    return {'n_bubbles': sum(len(s) for s in bubble_sets),
            'n_tracks': len(tracks), 'outputs': sorted(manifest.outputs)}


@stage('evaluate')
def cmd_evaluate(args):
    """Scores a prediction directory (tracks.csv, and bubbles.csv when
    present) against a truth tracks CSV."""
    out = _out_dir(args.out or args.pred_dir)
    pred_tracks = read_tracks_csv(os.path.join(args.pred_dir, TRACKS_FILE))
    truth_tracks = read_tracks_csv(args.truth)

    bubbles_path = os.path.join(args.pred_dir, BUBBLES_FILE)
    pred_bubbles = read_bubbles_csv(bubbles_path) \
        if os.path.exists(bubbles_path) else None

    metrics = evaluate(pred_tracks, truth_tracks, args.tol, pred_bubbles)
    values = metrics.to_dict()

    written = [os.path.join(out, METRICS_TXT_FILE),
               os.path.join(out, METRICS_CSV_FILE)]
    with open(written[0], 'w') as f:
        for name, value in values.items():
            f.write('{}: {}\n'.format(name, value))
    with open(written[1], 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['metric', 'value'])
        for name, value in values.items():
            writer.writerow([name, value])

    return dict(values, outputs=written)


##
# Parser

def _add_common(parser, config=True, threads=True):
    parser.add_argument('--out', default='.', help='output directory')
    if config:
        parser.add_argument('--config', help='pipeline `key = value` file')
    if threads:
        parser.add_argument('--threads', type=int, default=1,
                            help='maximum worker threads')


def _add_psf(parser):
    parser.add_argument('--psf-frame', type=int,
                        help='frame of the operator PSF pick')
    parser.add_argument('--psf-row', type=int,
                        help='row of the operator PSF pick')
    parser.add_argument('--psf-col', type=int,
                        help='column of the operator PSF pick')
    parser.add_argument('--psf-sigma', type=float,
                        help='width of the synthetic Gaussian PSF (px)')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='ulm', description='Ultrasound localization microscopy '
        'pipeline: localize microbubbles, track them, render maps.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    commands = parser.add_subparsers(dest='command_name')
    commands.required = True

    simulate_parser = commands.add_parser(
        'simulate', help='simulate a stack and its ground truth')
    simulate_parser.add_argument('scenario', help='scenario file')
    simulate_parser.add_argument('--seed', type=int,
                                 help='overrides the scenario seed')
    _add_common(simulate_parser, config=False, threads=False)
    simulate_parser.set_defaults(command=cmd_simulate)

    localize_parser = commands.add_parser(
        'localize', help='detect and localize bubbles')
    localize_parser.add_argument('stack', help='ULMF stack')
    _add_common(localize_parser)
    _add_psf(localize_parser)
    localize_parser.set_defaults(command=cmd_localize)

    track_parser = commands.add_parser(
        'track', help='pair bubbles and link tracks')
    track_parser.add_argument('stack', help='ULMF stack')
    track_parser.add_argument('detections', help='detections .npy')
    track_parser.add_argument('--dump-pairings', action='store_true',
                              help='also write ' + PAIRINGS_FILE)
    _add_common(track_parser)
    track_parser.set_defaults(command=cmd_track)

    render_parser = commands.add_parser(
        'render', help='render density and speed maps')
    render_parser.add_argument('stack', help='ULMF stack')
    render_parser.add_argument('detections', help='detections .npy')
    render_parser.add_argument('tracks', help='tracks CSV')
    _add_common(render_parser)
    render_parser.set_defaults(command=cmd_render)

    run_parser = commands.add_parser(
        'run', help='localize, track and render in one go')
    run_parser.add_argument('stack', help='ULMF stack')
    run_parser.add_argument('--dump-pairings', action='store_true',
                            help='also write ' + PAIRINGS_FILE)
    _add_common(run_parser)
    _add_psf(run_parser)
    run_parser.set_defaults(command=cmd_run)

    evaluate_parser = commands.add_parser(
        'evaluate', help='score predictions against ground truth')
    evaluate_parser.add_argument('pred_dir', help='directory holding '
                                 + TRACKS_FILE)
    evaluate_parser.add_argument('truth', help='truth tracks CSV')
    evaluate_parser.add_argument('--tol', type=float, default=1.0,
                                 help='matching tolerance (px)')
    evaluate_parser.add_argument('--out', help='output directory '
                                 '(defaults to pred_dir)')
    evaluate_parser.set_defaults(command=cmd_evaluate)

    return parser


def configure_logging():
    """Configures the root logger from ULM_DEBUG and ULM_LOG_LEVEL."""
    level = 'DEBUG' if get_config('ULM_DEBUG') else \
        str(get_config('ULM_LOG_LEVEL')).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv=None):
    """Entry point of the `ulm` command. Returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        configure_logging()
    except ValueError as e:
        parser.error('ULM_LOG_LEVEL: ' + str(e))

    result = args.command(args)
    print(result.string())
    return result.exit_code
