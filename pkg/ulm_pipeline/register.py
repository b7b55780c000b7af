# -*- coding: utf-8 -*-
#
# name:             register.py
# author:           ulm_pipeline contributors
# created on:       03/04/2026
#

"""
ulm_pipeline.register
~~~~~~~~~~~~~~~~~~~~~

This module pairs the bubbles of two consecutive frames by bubble-set
registration: it alternates between fitting a transform that carries target
bubbles onto reference bubbles and updating a fuzzy matching probability for
every (reference, target) pair, then pairs bubbles greedily by probability.

The cost minimized over the transform f is

    alpha * sum_ij p_ij |x_i - f(y_j)|^2
    + beta * sum_ij p_ij SSD(patch_i, patch_j)
    + gamma * sum_j |f(y_j) - y_j|^2

and the matching probability is p_ij = p_loc(x_i, f(y_j)) * p_psf(i, j),
row/column normalized.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
import logging
import math

import numpy as np

from .stage import StageException


log = logging.getLogger(__name__)


# Outer iterations stop once no transform parameter moves more than this.
CONVERGENCE_STEP = 1e-6

# Slack on the cost decrease of a single fit.
COST_SLACK = 1e-9

# register sweeps square matchings up to this many times sinkhorn_iters per
# round so that every fit sees them balanced to sinkhorn_tol.
SINKHORN_ROUNDS = 50

PAIRINGS_CSV_HEADER = ['frame', 'i', 'j', 'prob', 'dist_px']


class GateError(StageException):
    """Exception thrown when a bubble has no support in a probability
    matrix."""


class ContractError(StageException):
    """Exception thrown when inputs break an operation's preconditions."""


##
# Types

class Transform(object):
    def __init__(self, mode='translation', matrix=None, translation=None):
        """Parametric map f(y) = A y + t carrying target positions toward
        reference positions. In translation mode A is the identity.

        :param mode: string, 'translation' or 'affine'
        :param matrix: array, 2 x 2 matrix A (affine mode only)
        :param translation: array, (t_r, t_c) in pixels
        """
        self.mode = mode
        self.matrix = np.eye(2) if matrix is None or mode == 'translation' \
            else np.array(matrix, dtype=float)
        self.translation = np.zeros(2) if translation is None \
            else np.array(translation, dtype=float)

    @classmethod
    def identity(cls, mode='translation'):
        return cls(mode)

    def apply(self, points):
        """Maps an (n, 2) array (or a single point) of (row, col) positions."""
        points = np.asarray(points, dtype=float)
        return points @ self.matrix.T + self.translation

    def params(self):
        """Returns the displacement parameters: (t_r, t_c) for translation,
        (A - I) flattened followed by t for affine. Zero means identity."""
        if self.mode == 'translation':
            return self.translation.copy()
        return np.concatenate([(self.matrix - np.eye(2)).ravel(),
                               self.translation])

    def __repr__(self):
        if self.mode == 'translation':
            return 'Transform(translation={})'.format(self.translation)
        return 'Transform(matrix={}, translation={})'.format(
            self.matrix.tolist(), self.translation)


class ProbabilityMatrix(object):
    def __init__(self, values):
        """Fuzzy correspondence p_ij between m reference bubbles (rows) and
        n target bubbles (columns).

        :param values: array, m x n non-negative entries
        """
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            if values.size:
                raise ContractError('A probability matrix must be 2D.')
            values = values.reshape(0, 0)
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    def row_sums(self):
        return self.values.sum(axis=1)

    def col_sums(self):
        return self.values.sum(axis=0)

    def __repr__(self):
        return 'ProbabilityMatrix(shape={})'.format(self.shape)


class Pairing(object):
    def __init__(self, frame_index=0, pairs=None, distances=None,
                 unmatched_ref=None, unmatched_tgt=None):
        """One-to-one pairing between a reference frame and the next frame.

        :param frame_index: integer, index of the reference frame
        :param pairs: list of (i, j, probability)
        :param distances: list of post-transform distances, one per pair
        :param unmatched_ref: list of reference indices left unpaired
        :param unmatched_tgt: list of target indices left unpaired
        """
        self.frame_index = frame_index
        self.pairs = pairs or []
        self.distances = distances or []
        self.unmatched_ref = unmatched_ref or []
        self.unmatched_tgt = unmatched_tgt or []

    def __len__(self):
        return len(self.pairs)

    def __repr__(self):
        return 'Pairing(frame_index={}, pairs={}, unmatched_ref={}, ' \
               'unmatched_tgt={})'.format(self.frame_index, len(self.pairs),
                                          len(self.unmatched_ref),
                                          len(self.unmatched_tgt))


##
# Probabilities

def p_loc(x, fy, w1):
    """Location matching density (1/w1) exp(-d^2 / (2 w1))."""
    d2 = (x[0] - fy[0]) ** 2 + (x[1] - fy[1]) ** 2
    return (1.0 / w1) * math.exp(-d2 / (2.0 * w1))


def _unit_energy(patches):
    """Scales each flattened patch (rows of a 2D array) to unit energy;
    zero patches stay zero."""
    norms = np.sqrt(np.sum(patches ** 2, axis=1, keepdims=True))
    return np.divide(patches, norms, out=np.zeros_like(patches),
                     where=norms > 0)


def _flat_patches(bubble_set):
    patches = [np.asarray(b.patch, dtype=float).ravel() for b in bubble_set]
    sizes = {p.size for p in patches}
    if len(sizes) > 1:
        raise ContractError('Frame {} holds patches of different sizes.'
                            .format(bubble_set.frame_index))
    if not patches:
        return np.zeros((0, 0))
    return np.stack(patches)


def patch_disparity(patch_ref, patch_tgt):
    """Sum of squared differences between two energy-normalized patches."""
    patch_ref = np.asarray(patch_ref, dtype=float)
    patch_tgt = np.asarray(patch_tgt, dtype=float)
    if patch_ref.shape != patch_tgt.shape:
        raise ContractError('Patch shapes differ: {} vs {}.'.format(
            patch_ref.shape, patch_tgt.shape))
    a, b = _unit_energy(np.stack([patch_ref.ravel(), patch_tgt.ravel()]))
    return float(np.sum((a - b) ** 2))


def p_psf(patch_ref, patch_tgt, w2):
    """PSF matching density (1/w2) exp(-SSD / (2 w2))."""
    return (1.0 / w2) * math.exp(-patch_disparity(patch_ref, patch_tgt) /
                                 (2.0 * w2))


def _squared_distances(ref, tgt, f):
    fy = f.apply(tgt.positions())
    diff = ref.positions()[:, None, :] - fy[None, :, :]
    return diff[..., 0] ** 2 + diff[..., 1] ** 2


def _disparities(ref, tgt):
    a = _flat_patches(ref)
    b = _flat_patches(tgt)
    if a.shape[1] != b.shape[1]:
        raise ContractError('Patch sizes differ between frames {} and {}.'
                            .format(ref.frame_index, tgt.frame_index))
    a = _unit_energy(a)
    b = _unit_energy(b)
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)


def probability_matrix(ref, tgt, f, w1, w2):
    """Unnormalized p_ij = p_loc(x_i, f(y_j)) * p_psf(patch_i, patch_j).

    :param ref: BubbleSet, reference frame (rows)
    :param tgt: BubbleSet, target frame (columns)
    :param f: Transform applied to target positions
    :param w1: float, location width (px^2)
    :param w2: float, PSF width
    """
    if len(ref) == 0 or len(tgt) == 0:
        return ProbabilityMatrix(np.zeros((len(ref), len(tgt))))

    loc = (1.0 / w1) * np.exp(-_squared_distances(ref, tgt, f) / (2.0 * w1))
    psf = (1.0 / w2) * np.exp(-_disparities(ref, tgt) / (2.0 * w2))

    return ProbabilityMatrix(loc * psf)


def sinkhorn_normalize(P, iters, tol):
    """Alternately scales rows then columns to unit sum.

    Stops after `iters` sweeps or once every row and column sum is within
    `tol` of one.

    :param P: ProbabilityMatrix, non-negative with no empty row or column
    :param iters: integer, maximum number of sweeps
    :param tol: float, convergence tolerance
    """
    values = np.array(P.values, dtype=float)
    if values.size == 0:
        return ProbabilityMatrix(values)

    if not np.isfinite(values).all() or (values < 0).any():
        raise ContractError('Probabilities must be finite and non-negative.')

    rows = values.sum(axis=1)
    cols = values.sum(axis=0)
    if (rows <= 0).any():
        raise GateError('Reference bubble {} has no candidate target.'
                        .format(int(np.flatnonzero(rows <= 0)[0])))
    if (cols <= 0).any():
        raise GateError('Target bubble {} has no candidate reference.'
                        .format(int(np.flatnonzero(cols <= 0)[0])))

    for sweep in range(iters):
        values /= values.sum(axis=1, keepdims=True)
        values /= values.sum(axis=0, keepdims=True)

        error = max(np.abs(values.sum(axis=1) - 1.0).max(),
                    np.abs(values.sum(axis=0) - 1.0).max())
        if error < tol:
            break

    return ProbabilityMatrix(values)


def gate_mask(ref, tgt, f, gate):
    """Boolean m x n mask of pairs whose post-transform distance is within
    `gate` pixels."""
    if len(ref) == 0 or len(tgt) == 0:
        return np.zeros((len(ref), len(tgt)), dtype=bool)
    return _squared_distances(ref, tgt, f) <= gate ** 2


def gated_probabilities(ref, tgt, f, config, sweeps=None):
    """Probability matrix with gated-out entries zeroed and the supported
    block Sinkhorn-normalized. Rows and columns without support stay zero.

    :param sweeps: integer, Sinkhorn sweep cap for square blocks; defaults
        to sinkhorn_iters. Rectangular blocks cannot balance and always stop
        after sinkhorn_iters.
    """
    P = probability_matrix(ref, tgt, f, config.w1, config.w2)
    values = P.values * gate_mask(ref, tgt, f, config.pair_gate_distance)

    rows = np.flatnonzero(values.sum(axis=1) > 0)
    cols = np.flatnonzero(values.sum(axis=0) > 0)
    normalized = np.zeros_like(values)
    if rows.size and cols.size:
        if sweeps is None or rows.size != cols.size:
            sweeps = config.sinkhorn_iters
        block = sinkhorn_normalize(
            ProbabilityMatrix(values[np.ix_(rows, cols)]),
            sweeps, config.sinkhorn_tol)
        normalized[np.ix_(rows, cols)] = block.values

    return ProbabilityMatrix(normalized)


##
# Cost and transform fitting

def cost(ref, tgt, P, f, alpha, beta, gamma):
    """Evaluates the registration cost of transform `f` under matching P."""
    p = P.values
    if p.size == 0:
        position = similarity = 0.0
    else:
        position = float(np.sum(p * _squared_distances(ref, tgt, f)))
        similarity = float(np.sum(p * _disparities(ref, tgt)))

    if len(tgt):
        y = tgt.positions()
        movement = float(np.sum((f.apply(y) - y) ** 2))
    else:
        movement = 0.0

    return alpha * position + beta * similarity + gamma * movement


def _gauss_newton_step(jacobian, residuals):
    """Solves jacobian . delta = residuals in the least-squares sense.
    Returns (delta, rank)."""
    delta, _, rank, _ = np.linalg.lstsq(jacobian, residuals, rcond=None)
    return delta, rank


def fit_transform(ref, tgt, P, alpha, gamma, mode='translation'):
    """Fits the transform minimizing the position and movement terms of the
    cost for a fixed matching P.

    Both families are linear in their parameters, so a single Gauss-Newton
    step from the identity lands on the minimizer. The per-pair position
    residuals collapse onto one weighted target per bubble:
    weight_j = alpha * sum_i p_ij + gamma and
    goal_j = (alpha * sum_i p_ij x_i + gamma * y_j) / weight_j.

    :param ref: BubbleSet, reference frame
    :param tgt: BubbleSet, target frame
    :param P: ProbabilityMatrix, m x n matching
    :param alpha: float, weight of the position term
    :param gamma: float, weight of the movement term
    :param mode: string, 'translation' or 'affine'
    """
    if len(tgt) == 0:
        return Transform.identity(mode)

    y = tgt.positions()
    p = P.values
    if len(ref):
        mass = p.sum(axis=0)
        pulled = p.T @ ref.positions()
    else:
        mass = np.zeros(len(tgt))
        pulled = np.zeros_like(y)

    weights = alpha * mass + gamma
    live = weights > 0
    if not live.any():
        log.warning('Registration has no weight; keeping the identity.')
        return Transform.identity(mode)

    goals = np.zeros_like(y)
    goals[live] = (alpha * pulled[live] + gamma * y[live]) / \
        weights[live, None]
    sqrt_w = np.sqrt(weights[live])
    y_live = y[live]
    n = len(y_live)

    # Residuals at the identity: goal - y.
    residuals = ((goals[live] - y_live) * sqrt_w[:, None]).reshape(-1)

    if mode == 'affine':
        jacobian = np.zeros((2 * n, 6))
        jacobian[0::2, 0:2] = y_live
        jacobian[1::2, 2:4] = y_live
        jacobian[0::2, 4] = 1.0
        jacobian[1::2, 5] = 1.0
        jacobian *= np.repeat(sqrt_w, 2)[:, None]
        # Displacement parameterization: identity is delta = 0.
        delta, rank = _gauss_newton_step(jacobian, residuals)
        if rank == 6:
            return Transform('affine',
                             matrix=np.eye(2) + delta[:4].reshape(2, 2),
                             translation=delta[4:])
        log.warning('Affine normal equations are rank deficient (rank %d); '
                    'falling back to translation.', rank)

    jacobian = np.tile(np.eye(2), (n, 1)) * np.repeat(sqrt_w, 2)[:, None]
    delta, rank = _gauss_newton_step(jacobian, residuals)
    return Transform('translation', translation=delta)


def _transform_change(old, new):
    return max(np.abs(old.matrix - new.matrix).max(),
               np.abs(old.translation - new.translation).max())


def register(ref, tgt, config, trace=None):
    """Registers a target bubble set onto a reference bubble set.

    Starting from the identity, alternates {probability matrix -> gating and
    Sinkhorn normalization -> transform fit} for up to max_outer_iters
    rounds, stopping early once the transform settles. Each round's matching
    is balanced to sinkhorn_tol, so register(S, S) is the identity.

    :param ref: BubbleSet, reference frame
    :param tgt: BubbleSet, target frame
    :param config: PipelineConfig
    :param trace: list, optional; receives (cost_before, cost_after) for
        every fit, both evaluated with that round's matching
    :returns: (Transform, ProbabilityMatrix)
    """
    mode = config.transform_mode
    f = Transform.identity(mode)

    if len(ref) == 0 or len(tgt) == 0:
        return f, ProbabilityMatrix(np.zeros((len(ref), len(tgt))))

    weights = (config.alpha, config.beta, config.gamma)
    sweeps = SINKHORN_ROUNDS * config.sinkhorn_iters

    for iteration in range(config.max_outer_iters):
        P = gated_probabilities(ref, tgt, f, config, sweeps)
        candidate = fit_transform(ref, tgt, P, config.alpha, config.gamma,
                                  mode)

        before = cost(ref, tgt, P, f, *weights)
        after = cost(ref, tgt, P, candidate, *weights)
        if after > before + COST_SLACK:
            log.debug('Fit raised the cost (%g -> %g); keeping %r', before,
                      after, f)
            candidate, after = f, before
        if trace is not None:
            trace.append((before, after))

        change = _transform_change(f, candidate)
        f = candidate
        if change < CONVERGENCE_STEP:
            break

    return f, gated_probabilities(ref, tgt, f, config, sweeps)


##
# Pairing

def pair(P, ref, tgt, f, config, frame_index=None):
    """Greedy one-to-one assignment by highest probability.

    Visits entries by decreasing probability and accepts one when both of its
    bubbles are still free, its probability is at least pair_min_prob and
    its post-transform distance is within pair_gate_distance.

    :param P: ProbabilityMatrix, normalized matching
    :param ref: BubbleSet, reference frame
    :param tgt: BubbleSet, target frame
    :param f: Transform, the fitted transform
    :param config: PipelineConfig
    :param frame_index: integer, reference frame index (defaults to ref's)
    """
    if frame_index is None:
        frame_index = ref.frame_index
    m, n = len(ref), len(tgt)
    pairing = Pairing(frame_index)

    if m and n:
        values = P.values
        distances = np.sqrt(_squared_distances(ref, tgt, f))
        rows, cols = np.indices(values.shape)
        rows, cols, flat = rows.ravel(), cols.ravel(), values.ravel()
        order = np.lexsort((cols, rows, -flat))

        used_rows, used_cols = set(), set()
        for index in order:
            probability = flat[index]
            if probability < config.pair_min_prob:
                break
            i, j = int(rows[index]), int(cols[index])
            if i in used_rows or j in used_cols:
                continue
            if distances[i, j] > config.pair_gate_distance:
                continue
            used_rows.add(i)
            used_cols.add(j)
            pairing.pairs.append((i, j, float(probability)))
            pairing.distances.append(float(distances[i, j]))
            if len(used_rows) == min(m, n):
                break

        pairing.unmatched_ref = [i for i in range(m) if i not in used_rows]
        pairing.unmatched_tgt = [j for j in range(n) if j not in used_cols]
    else:
        pairing.unmatched_ref = list(range(m))
        pairing.unmatched_tgt = list(range(n))

    return pairing


def register_stack(bubble_sets, config, threads=1):
    """Registers and pairs every consecutive frame pair. Frame pairs run
    concurrently; the pairings come back in frame order.

    :param bubble_sets: list of BubbleSet, one per frame, in frame order
    :param config: PipelineConfig
    :param threads: integer, maximum number of worker threads
    """
    def work(index):
        ref, tgt = bubble_sets[index], bubble_sets[index + 1]
        f, P = register(ref, tgt, config)
        return pair(P, ref, tgt, f, config)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        pairings = list(pool.map(work, range(len(bubble_sets) - 1)))

    log.info('Paired %d bubbles over %d frame pairs',
             sum(len(p) for p in pairings), len(pairings))

    return pairings


def write_pairings_csv(pairings, path):
    """Writes the pairing debug dump `frame,i,j,prob,dist_px`."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(PAIRINGS_CSV_HEADER)
        for pairing in pairings:
            for (i, j, probability), distance in zip(pairing.pairs,
                                                     pairing.distances):
                writer.writerow([pairing.frame_index, i, j,
                                 '{:.6g}'.format(probability),
                                 '{:.4f}'.format(distance)])
