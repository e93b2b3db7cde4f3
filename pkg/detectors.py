"""
Soft-output multiuser detection for y = H·s + n on one resource element
Max-log LLRs, positive means bit 0. Exhaustive oracle, single-tree-search sphere detector,
MMSE-SIC, single-user demapper and the two-user power-domain NOMA receiver.
"""

import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from transmitter import constellation
from utils.complexity import ComplexityCounters, ComplexityModel, complexity_ratio
from utils.error_handler import DetectorError
from utils.jit import njit_serial

logger = logging.getLogger(__name__)

__all__ = [
    'AugmentedQr', 'SoftDetection', 'SphereFactorization', 'augmented_qr', 'clip_llr', 'complexity_ratio',
    'exhaustive_detect', 'exhaustive_maxlog', 'factorize', 'mmse_sic', 'noma2_sic',
    'single_user_demap', 'single_user_demap_batch', 'sphere_detect', 'sphere_detect_batch',
]

MAX_EXHAUSTIVE_CANDIDATES = 65_536
REGULARIZATION = 1e-12
# Stands in for a counter-hypothesis the truncated search never reached
TRUNCATION_LLR = 1e6


@dataclass(frozen=True)
class AugmentedQr:
    """QR of [H; σI] with columns sorted by ascending norm (strongest stream at the tree root)"""
    Q: np.ndarray
    R: np.ndarray
    permutation: np.ndarray


@dataclass(frozen=True)
class SphereFactorization:
    """Per-RE whitened upper factor R, rotated observation z, column order and R_ll·(PAM level)"""
    R: np.ndarray
    z: np.ndarray
    permutation: np.ndarray
    scaled_levels: np.ndarray
    modulation_order: int


@dataclass
class SoftDetection:
    llr: np.ndarray
    truncated: np.ndarray


def clip_llr(llr: np.ndarray, llr_clip: Optional[float]) -> np.ndarray:
    if llr_clip is None:
        return llr
    return np.clip(llr, -llr_clip, llr_clip)


def _check_noise(sigma2: float):
    if not sigma2 > 0:
        raise DetectorError(f"noise variance must be > 0, got {sigma2}")


def _maxlog_llr(metrics: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """metrics[r, candidate], bits[candidate, bit] -> min over bit=1 minus min over bit=0"""
    is_one = bits.astype(bool)[None, :, :]
    expanded = metrics[:, :, None]
    min_one = np.where(is_one, expanded, np.inf).min(axis=1)
    min_zero = np.where(~is_one, expanded, np.inf).min(axis=1)
    return min_one - min_zero


def _prior_cost(priors: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Per-candidate max-log prior cost Σ_b (b·L − min(L, 0)) ≥ 0; priors[..., bit], bits[candidate, bit]"""
    return np.einsum('cb,...b->...c', bits, priors) - np.minimum(priors, 0.0).sum(axis=-1)[..., None]


def exhaustive_maxlog(y: np.ndarray, H: np.ndarray, sigma2: float, priors: Optional[np.ndarray] = None,
                      modulation_order: int = 4, augmented: bool = False,
                      counters: Optional[ComplexityCounters] = None) -> np.ndarray:
    """Brute-force max-log LLRs of all K·log2(M) bits; augmented adds the ‖s‖² term of [H; σI]"""
    y = np.atleast_1d(np.asarray(y, dtype=complex))
    H = np.asarray(H, dtype=complex).reshape(y.size, -1)
    n_rx, n_users = H.shape
    n_candidates = modulation_order ** n_users
    if n_candidates > MAX_EXHAUSTIVE_CANDIDATES:
        raise DetectorError(
            f"exhaustive search over {modulation_order}^{n_users} = {n_candidates} candidates "
            f"exceeds the {MAX_EXHAUSTIVE_CANDIDATES} guard")
    _check_noise(sigma2)

    points, bits = constellation(modulation_order)
    m = bits.shape[1]
    index = np.indices((modulation_order,) * n_users).reshape(n_users, -1).T
    candidates = points[index]
    candidate_bits = bits[index].reshape(n_candidates, n_users * m)

    residual = y[None, :] - candidates @ H.T
    metrics = (np.abs(residual) ** 2).sum(axis=1) / sigma2
    if augmented:
        metrics = metrics + (np.abs(candidates) ** 2).sum(axis=1)
    if priors is not None:
        metrics = metrics + _prior_cost(np.asarray(priors, dtype=float).reshape(-1), candidate_bits)

    if counters is not None:
        counters.complex_mults += ComplexityModel.exhaustive_cost(n_rx, n_users, modulation_order)
        counters.detected_res += 1
    return _maxlog_llr(metrics[None, :], candidate_bits)[0]


def exhaustive_detect(Y: np.ndarray, Hs: np.ndarray, sigma2: float, priors: Optional[np.ndarray] = None,
                      modulation_order: int = 4,
                      counters: Optional[ComplexityCounters] = None) -> np.ndarray:
    """Exhaustive detection of every RE; returns llr[re, user, bit]"""
    n_re, _, n_users = Hs.shape
    m = int(np.log2(modulation_order))
    started = time.perf_counter()
    llr = np.empty((n_re, n_users, m))
    for r in range(n_re):
        prior = None if priors is None else priors[r]
        llr[r] = exhaustive_maxlog(Y[r], Hs[r], sigma2, prior, modulation_order,
                                   counters=counters).reshape(n_users, m)
    if counters is not None:
        counters.detector_runs += 1
        counters.wall_time_s += time.perf_counter() - started
    return llr


def _augmented_qr_batch(Hs: np.ndarray, sigma2: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_re, n_rx, n_users = Hs.shape
    sigma_block = np.broadcast_to(np.sqrt(sigma2) * np.eye(n_users), (n_re, n_users, n_users))
    H_aug = np.concatenate([Hs, sigma_block], axis=1)
    permutation = np.argsort((np.abs(H_aug) ** 2).sum(axis=1), axis=1, kind='stable')
    Q, R = np.linalg.qr(np.take_along_axis(H_aug, permutation[:, None, :], axis=2))

    diagonal = np.diagonal(R, axis1=1, axis2=2)
    magnitude = np.abs(diagonal)
    phase = np.where(magnitude > 0, diagonal / np.where(magnitude > 0, magnitude, 1.0), 1.0)
    Q = Q * phase[:, None, :]
    R = R / phase[:, :, None]
    idx = np.arange(n_users)
    R[:, idx, idx] = magnitude
    return Q, R, permutation


def augmented_qr(H: np.ndarray, sigma2: float) -> AugmentedQr:
    H = np.asarray(H, dtype=complex)
    if H.ndim == 1:
        H = H[None, :]
    Q, R, permutation = _augmented_qr_batch(H[None, :, :], sigma2)
    return AugmentedQr(Q=Q[0], R=R[0], permutation=permutation[0])


def _pam_axes(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-axis levels of a square QAM and the level index of each point's real and imaginary part"""
    _, first = np.unique(np.round(points.real, 12), return_index=True)
    levels = points.real[first]
    re_index = np.argmin(np.abs(points.real[:, None] - levels[None, :]), axis=1)
    im_index = np.argmin(np.abs(points.imag[:, None] - levels[None, :]), axis=1)
    return levels, re_index.astype(np.int64), im_index.astype(np.int64)


def factorize(Y: np.ndarray, Hs: np.ndarray, sigma2: float, modulation_order: int = 4,
              counters: Optional[ComplexityCounters] = None) -> SphereFactorization:
    """Cholesky of HᴴH/σ² + I, the whitened R of [H; σI], with columns sorted by ascending norm"""
    _check_noise(sigma2)
    Y = np.asarray(Y, dtype=complex)
    Hs = np.asarray(Hs, dtype=complex)
    n_re, n_rx, n_users = Hs.shape
    started = time.perf_counter()

    scale = 1.0 / np.sqrt(sigma2)
    Hw = Hs * scale
    permutation = np.argsort((np.abs(Hw) ** 2).sum(axis=1), axis=1, kind='stable')
    Hp = np.take_along_axis(Hw, permutation[:, None, :], axis=2)
    gram = np.conj(np.swapaxes(Hp, 1, 2)) @ Hp + np.eye(n_users)
    L = np.linalg.cholesky(gram)
    matched = np.einsum('rnk,rn->rk', np.conj(Hp), Y * scale)

    # L·z = Hᴴy, L lower with a real positive diagonal
    z = np.empty((n_re, n_users), dtype=complex)
    for i in range(n_users):
        z[:, i] = (matched[:, i] - np.einsum('rj,rj->r', L[:, i, :i], z[:, :i])) / L[:, i, i].real
    R = np.conj(np.swapaxes(L, 1, 2))

    levels, _, _ = _pam_axes(constellation(modulation_order)[0])
    scaled_levels = np.diagonal(R, axis1=1, axis2=2).real[:, :, None] * levels[None, None, :]

    if counters is not None:
        counters.complex_mults += n_re * ComplexityModel.sphere_preprocessing_cost(n_rx, n_users, modulation_order)
        counters.wall_time_s += time.perf_counter() - started
    return SphereFactorization(R=np.ascontiguousarray(R), z=z, permutation=permutation,
                               scaled_levels=np.ascontiguousarray(scaled_levels),
                               modulation_order=modulation_order)


@njit_serial
def _expand(level, R, z, points, scaled_levels, re_index, im_index, prior_cost, symbols, dist,
            child_dist, order, axis_re, axis_im):
    n_users = R.shape[0]
    center = z[level]
    for j in range(level + 1, n_users):
        center -= R[level, j] * points[symbols[j]]
    # |center − R_ll·s|² splits into one squared distance per axis and PAM level
    for a in range(scaled_levels.shape[1]):
        d_re = center.real - scaled_levels[level, a]
        d_im = center.imag - scaled_levels[level, a]
        axis_re[a] = d_re * d_re
        axis_im[a] = d_im * d_im
    for c in range(points.shape[0]):
        child_dist[level, c] = dist[level + 1] + axis_re[re_index[c]] + axis_im[im_index[c]] \
            + prior_cost[level, c]
    order[level, :] = np.argsort(child_dist[level, :])
    return (n_users - 1 - level) + scaled_levels.shape[1]


@njit_serial
def _search_radius(level, lam_map, symbols, bits, x_map, lam_bar):
    """max(λ_MAP, λ̄ of fixed bits differing from x_MAP, λ̄ of every bit below the node)"""
    n_users, m = lam_bar.shape
    radius = lam_map
    for j in range(n_users):
        for b in range(m):
            if j < level or bits[symbols[j], b] != x_map[j, b]:
                if lam_bar[j, b] > radius:
                    radius = lam_bar[j, b]
    return radius


@njit_serial
def _sts_kernel(R, z, points, scaled_levels, re_index, im_index, bits, prior_cost, node_budget):
    n_users = R.shape[0]
    M = points.shape[0]
    m = bits.shape[1]

    lam_map = np.inf
    x_map = np.zeros((n_users, m), dtype=np.int64)
    lam_bar = np.full((n_users, m), np.inf)
    symbols = np.zeros(n_users, dtype=np.int64)
    dist = np.zeros(n_users + 1)
    child_dist = np.empty((n_users, M))
    order = np.empty((n_users, M), dtype=np.int64)
    position = np.zeros(n_users, dtype=np.int64)
    axis_re = np.empty(scaled_levels.shape[1])
    axis_im = np.empty(scaled_levels.shape[1])
    nodes = 0
    mults = 0
    truncated = False

    level = n_users - 1
    mults += _expand(level, R, z, points, scaled_levels, re_index, im_index, prior_cost, symbols, dist,
                     child_dist, order, axis_re, axis_im)
    while True:
        if position[level] >= M:
            level += 1
            if level == n_users:
                break
            continue
        c = order[level, position[level]]
        position[level] += 1
        d = child_dist[level, c]

        # Children are sorted; beyond the largest radius nothing at this level survives
        bound = lam_map
        for j in range(n_users):
            for b in range(m):
                if lam_bar[j, b] > bound:
                    bound = lam_bar[j, b]
        if d > bound:
            position[level] = M
            continue

        symbols[level] = c
        if d > _search_radius(level, lam_map, symbols, bits, x_map, lam_bar):
            continue
        nodes += 1

        if level == 0:
            if d < lam_map:
                for j in range(n_users):
                    for b in range(m):
                        bit = bits[symbols[j], b]
                        if bit != x_map[j, b]:
                            lam_bar[j, b] = lam_map
                        x_map[j, b] = bit
                lam_map = d
            else:
                for j in range(n_users):
                    for b in range(m):
                        if bits[symbols[j], b] != x_map[j, b] and d < lam_bar[j, b]:
                            lam_bar[j, b] = d
        else:
            dist[level] = d
            level -= 1
            mults += _expand(level, R, z, points, scaled_levels, re_index, im_index, prior_cost, symbols,
                             dist, child_dist, order, axis_re, axis_im)
            position[level] = 0

        if node_budget > 0 and nodes >= node_budget and lam_map < np.inf:
            truncated = True
            break

    return lam_map, x_map, lam_bar, nodes, mults, truncated


@njit_serial
def _sts_batch(Rs, zs, points, scaled_levels, re_index, im_index, bits, prior_costs, node_budget):
    n_re, n_users = zs.shape
    m = bits.shape[1]
    lam_maps = np.empty(n_re)
    x_maps = np.empty((n_re, n_users, m), dtype=np.int64)
    lam_bars = np.empty((n_re, n_users, m))
    nodes = np.empty(n_re, dtype=np.int64)
    mults = np.empty(n_re, dtype=np.int64)
    truncated = np.empty(n_re, dtype=np.bool_)
    for r in range(n_re):
        lam_map, x_map, lam_bar, n_nodes, n_mults, was_truncated = _sts_kernel(
            Rs[r], zs[r], points, scaled_levels[r], re_index, im_index, bits, prior_costs[r], node_budget)
        lam_maps[r] = lam_map
        x_maps[r] = x_map
        lam_bars[r] = lam_bar
        nodes[r] = n_nodes
        mults[r] = n_mults
        truncated[r] = was_truncated
    return lam_maps, x_maps, lam_bars, nodes, mults, truncated


def sphere_detect_batch(Y: np.ndarray, Hs: np.ndarray, sigma2: float, priors: Optional[np.ndarray] = None,
                        modulation_order: int = 4, node_budget: int = 0,
                        counters: Optional[ComplexityCounters] = None,
                        factorization: Optional[SphereFactorization] = None) -> SoftDetection:
    """Single-tree-search soft sphere detection of every RE; llr[re, user, bit] unclipped.
    A factorization of the same Y, Hs and σ² is reused as is and not charged again."""
    Y = np.asarray(Y, dtype=complex)
    Hs = np.asarray(Hs, dtype=complex)
    n_re, n_rx, n_users = Hs.shape
    if factorization is None:
        factorization = factorize(Y, Hs, sigma2, modulation_order, counters)
    elif factorization.z.shape != (n_re, n_users) or factorization.modulation_order != modulation_order:
        raise DetectorError(
            f"factorization of {factorization.z.shape} for M={factorization.modulation_order} "
            f"does not match {n_re} REs × {n_users} users at M={modulation_order}")
    points, bits = constellation(modulation_order)
    _, re_index, im_index = _pam_axes(points)
    m = bits.shape[1]
    started = time.perf_counter()

    permutation = factorization.permutation
    if priors is None:
        priors = np.zeros((n_re, n_users, m))
    sorted_priors = np.take_along_axis(np.asarray(priors, dtype=float), permutation[:, :, None], axis=1)
    prior_costs = _prior_cost(sorted_priors, bits.astype(float))

    lam_map, x_map, lam_bar, nodes, mults, truncated = _sts_batch(
        factorization.R, np.ascontiguousarray(factorization.z), np.ascontiguousarray(points),
        factorization.scaled_levels, re_index, im_index, np.ascontiguousarray(bits, dtype=np.int64),
        np.ascontiguousarray(prior_costs), int(node_budget))

    lam_bar = np.where(np.isfinite(lam_bar), lam_bar, lam_map[:, None, None] + TRUNCATION_LLR)
    sorted_llr = (1 - 2 * x_map) * (lam_bar - lam_map[:, None, None])
    llr = np.empty_like(sorted_llr)
    np.put_along_axis(llr, permutation[:, :, None], sorted_llr, axis=1)

    if counters is not None:
        counters.complex_mults += int(mults.sum())
        counters.nodes_visited += int(nodes.sum())
        counters.detector_runs += 1
        counters.detected_res += n_re
        counters.truncated_res += int(truncated.sum())
        counters.wall_time_s += time.perf_counter() - started
    if truncated.any():
        logger.debug(f"⚠️ Sphere search truncated on {int(truncated.sum())}/{n_re} REs")
    return SoftDetection(llr=llr, truncated=truncated)


def sphere_detect(y: np.ndarray, H: np.ndarray, sigma2: float, priors: Optional[np.ndarray] = None,
                  modulation_order: int = 4, node_budget: int = 0,
                  counters: Optional[ComplexityCounters] = None) -> SoftDetection:
    """One RE; llr has K·log2(M) entries, user-major"""
    y = np.atleast_1d(np.asarray(y, dtype=complex))
    H = np.asarray(H, dtype=complex).reshape(y.size, -1)
    n_users = H.shape[1]
    m = int(np.log2(modulation_order))
    prior = None if priors is None else np.asarray(priors, dtype=float).reshape(1, n_users, m)
    result = sphere_detect_batch(y[None, :], H[None, :, :], sigma2, prior, modulation_order,
                                 node_budget, counters)
    return SoftDetection(llr=result.llr.reshape(-1), truncated=result.truncated[0])


def single_user_demap_batch(Y: np.ndarray, h: np.ndarray, sigma2: float, modulation_order: int = 4,
                            counters: Optional[ComplexityCounters] = None) -> np.ndarray:
    """Max-log demapping of one user alone on each RE; Y[re, rx], h[re, rx] -> llr[re, bit]"""
    _check_noise(sigma2)
    points, bits = constellation(modulation_order)
    residual = Y[:, :, None] - h[:, :, None] * points[None, None, :]
    metrics = (np.abs(residual) ** 2).sum(axis=1) / sigma2
    if counters is not None:
        counters.complex_mults += Y.shape[0] * ComplexityModel.single_user_cost(Y.shape[1], modulation_order)
        counters.detector_runs += 1
        counters.detected_res += Y.shape[0]
    return _maxlog_llr(metrics, bits)


def single_user_demap(y, h, sigma2: float, modulation_order: int = 4) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=complex))
    h = np.atleast_1d(np.asarray(h, dtype=complex))
    return single_user_demap_batch(y[None, :], h[None, :], sigma2, modulation_order)[0]


def mmse_sic(Y: np.ndarray, Hs: np.ndarray, sigma2: float, modulation_order: int = 4,
             counters: Optional[ComplexityCounters] = None) -> np.ndarray:
    """Soft MMSE-SIC in post-MMSE SINR order with hard cancellation; llr[re, user, bit]"""
    _check_noise(sigma2)
    Y = np.asarray(Y, dtype=complex)
    Hs = np.asarray(Hs, dtype=complex)
    n_re, n_rx, n_users = Hs.shape
    points, bits = constellation(modulation_order)
    started = time.perf_counter()

    llr = np.zeros((n_re, n_users, bits.shape[1]))
    remaining = np.ones((n_re, n_users), dtype=bool)
    residual = Y.copy()
    rows = np.arange(n_re)
    noise = (sigma2 + REGULARIZATION) * np.eye(n_rx)

    for _ in range(n_users):
        active = Hs * remaining[:, None, :]
        covariance = active @ np.conj(np.swapaxes(active, 1, 2)) + noise
        filters = np.linalg.solve(covariance, active)
        gain = np.clip(np.real(np.sum(np.conj(active) * filters, axis=1)), 0.0, 1.0 - REGULARIZATION)
        sinr = np.where(remaining, gain / (1.0 - gain), -np.inf)
        user = np.argmax(sinr, axis=1)

        w = filters[rows, :, user]
        mu = gain[rows, user]
        z = np.sum(np.conj(w) * residual, axis=1)
        variance = np.maximum(mu * (1.0 - mu), REGULARIZATION)
        metrics = np.abs(z[:, None] - mu[:, None] * points[None, :]) ** 2 / variance[:, None]
        llr[rows, user, :] = _maxlog_llr(metrics, bits)

        decided = points[np.argmin(metrics, axis=1)]
        residual = residual - Hs[rows, :, user] * decided[:, None]
        remaining[rows, user] = False

    if counters is not None:
        counters.complex_mults += n_re * ComplexityModel.mmse_sic_cost(n_rx, n_users, modulation_order)
        counters.detector_runs += 1
        counters.detected_res += n_re
        counters.wall_time_s += time.perf_counter() - started
    return llr


def noma2_sic(Y: np.ndarray, Hs: np.ndarray, sigma2: float, power_split: float = 0.8,
              modulation_order: int = 4, counters: Optional[ComplexityCounters] = None) -> np.ndarray:
    """Two-user power-domain NOMA; Hs already carries the power split, which only sets the order"""
    Hs = np.asarray(Hs, dtype=complex)
    if Hs.shape[2] != 2:
        raise DetectorError(f"noma2_sic needs exactly 2 users, got {Hs.shape[2]}")
    _check_noise(sigma2)
    Y = np.asarray(Y, dtype=complex)
    n_re, n_rx, _ = Hs.shape
    points, bits = constellation(modulation_order)
    started = time.perf_counter()

    first = 0 if power_split > 0.5 else 1
    second = 1 - first
    strong, weak = Hs[:, :, first], Hs[:, :, second]

    # Weak user as Gaussian interference
    covariance = weak[:, :, None] * np.conj(weak[:, None, :]) + sigma2 * np.eye(n_rx)
    v = np.linalg.solve(covariance, strong[:, :, None])[:, :, 0]
    mu = np.maximum(np.real(np.sum(np.conj(strong) * v, axis=1)), REGULARIZATION)
    z = np.sum(np.conj(v) * Y, axis=1)
    metrics = np.abs(z[:, None] - mu[:, None] * points[None, :]) ** 2 / mu[:, None]

    llr = np.zeros((n_re, 2, bits.shape[1]))
    llr[:, first, :] = _maxlog_llr(metrics, bits)
    residual = Y - strong * points[np.argmin(metrics, axis=1)][:, None]
    llr[:, second, :] = single_user_demap_batch(residual, weak, sigma2, modulation_order)

    if counters is not None:
        counters.complex_mults += n_re * ComplexityModel.noma2_cost(n_rx, modulation_order)
        counters.detector_runs += 1
        counters.detected_res += n_re
        counters.wall_time_s += time.perf_counter() - started
    return llr
